//! Fits the landmark network on subsampled LR faces (setting S1) and reports
//! its error on held-out faces.

use lowres_landmarks::eval::{evaluate_model, format_table, Normalizer};
use lowres_landmarks::synth::{generate_dataset, subsampled_split, SynthConfig};
use lowres_landmarks::training::{train_landmarks, LandmarkData, RunOptions, Setting, TrainConfig};

fn main() -> lowres_landmarks::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let data = generate_dataset(&SynthConfig {
        train: 400,
        val: 40,
        test: 40,
        real_lr: 0,
        ..Default::default()
    })?;
    let train = subsampled_split(&data.train, 4)?;
    let val = subsampled_split(&data.val, 4)?;
    let test = subsampled_split(&data.test, 4)?;
    let cfg = TrainConfig {
        epochs: 12,
        ..Default::default()
    };
    let opts = RunOptions {
        monitor_every: Some(100),
        ..Default::default()
    };
    let input = LandmarkData {
        labelled: &train,
        real_lr: &[],
        monitor: Some(&val),
    };
    let (mut models, log) = train_landmarks(&cfg, Setting::S1, input, &opts)?;
    for (iter, v) in log.series("val_nrmse") {
        println!("iteration {iter:4}: validation NRMSE {v:.4}");
    }
    let e = evaluate_model(&mut models.g2, &test, Normalizer::Bbox, "S1")?;
    print!("{}", format_table(&[e.summary]));
    Ok(())
}
