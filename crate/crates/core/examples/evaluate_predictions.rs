//! NRMSE, the cumulative error curve and AUC for a few hand-made predictions.

use lowres_landmarks::eval::{auc_at, ced_curve, included_errors, nrmse, ErrorRecord, Normalizer};

fn main() -> lowres_landmarks::Result<()> {
    let gt = [[20.0, 24.0], [44.0, 24.0], [32.0, 34.0], [23.0, 45.0], [41.0, 45.0]];
    let bbox = [12.0, 14.0, 40.0, 40.0];
    let visible = [true; 5];
    let mut records: Vec<ErrorRecord> = Vec::new();
    for jitter in [0.5, 1.0, 2.0, 3.0, 6.0] {
        let pred: Vec<[f64; 2]> = gt.iter().enumerate().map(|(i, p)| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            [p[0] + sign * jitter, p[1] + jitter / 2.0]
        }).collect();
        let r = nrmse(&pred, &gt, &visible, bbox, Normalizer::Bbox)?;
        let pupil = nrmse(&pred, &gt, &visible, bbox, Normalizer::InterPupil)?;
        println!("jitter {jitter}: box NRMSE {:.4}, inter-pupil {:.4}", r.error.unwrap_or(f64::NAN), pupil.error.unwrap_or(f64::NAN));
        records.push(r);
    }
    let errors = included_errors(&records);
    for [t, frac] in ced_curve(&errors, &[0.02, 0.04, 0.06, 0.08, 0.1])? {
        println!("CED({t:.2}) = {frac:.2}");
    }
    println!("auc@0.07 {:.2}, auc@0.08 {:.2}", auc_at(&errors, 0.07)?, auc_at(&errors, 0.08)?);
    Ok(())
}
