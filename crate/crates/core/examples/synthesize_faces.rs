//! Renders a handful of synthetic faces with both LR versions side by side.
//!
//! ```text
//! cargo run --example synthesize_faces -- out/faces
//! ```

use std::path::PathBuf;

use lowres_landmarks::synth::{degrade_realistic, generate_face, io, subsample_f, DegradationParams, FaceConfig};

fn main() -> lowres_landmarks::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/faces".into()));
    std::fs::create_dir_all(&out).map_err(|e| lowres_landmarks::Error::io(&out, e))?;
    let cfg = FaceConfig::default();
    let params = DegradationParams::default();
    for seed in 0..6 {
        let face = generate_face(seed, &cfg)?;
        let clean = subsample_f(&face.image, 4)?;
        let real = degrade_realistic(&face.image, &params, seed + 100)?;
        io::save_png(&out.join(format!("{seed}_hr.png")), &face.image)?;
        io::save_png(&out.join(format!("{seed}_lr_clean.png")), &clean)?;
        io::save_png(&out.join(format!("{seed}_lr_real.png")), &real)?;
        let visible = face.visible.iter().filter(|&&v| v).count();
        println!("seed {seed}: {visible}/{} landmarks visible, box {:.1?}", face.keypoints(), face.bbox);
    }
    println!("wrote {}", out.display());
    Ok(())
}
