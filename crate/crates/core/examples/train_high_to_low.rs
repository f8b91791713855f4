//! Trains the high-to-low generator briefly and saves generated LR faces next to
//! their plainly subsampled versions.
//!
//! ```text
//! cargo run --release --example train_high_to_low -- out/h2l
//! ```

use std::path::PathBuf;

use lowres_landmarks::synth::{detail_variance, generate_dataset, io, subsample_f, SynthConfig};
use lowres_landmarks::training::{generate_lr_split, train_high_to_low, RunOptions, TrainConfig};
use lowres_landmarks::Error;

fn main() -> lowres_landmarks::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/h2l".into()));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let data = generate_dataset(&SynthConfig {
        train: 64,
        val: 0,
        test: 8,
        real_lr: 64,
        ..Default::default()
    })?;
    let hr: Vec<_> = data.train.iter().map(|s| s.image.clone()).collect();
    let cfg = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let (mut stage, log) = train_high_to_low(&cfg, &hr, &data.real_lr, &RunOptions::default())?;
    println!("{} iterations, last l_gan {:?}", stage.iteration, log.last("g_gan"));
    for (i, s) in generate_lr_split(&mut stage.g1, &data.test, 7)?.iter().enumerate() {
        let plain = subsample_f(&data.test[i].image, 4)?;
        println!(
            "face {i}: detail variance generated {:.4}, subsampled {:.4}",
            detail_variance(&s.image),
            detail_variance(&plain)
        );
        io::save_png(&out.join(format!("{i}_generated.png")), &s.image)?;
        io::save_png(&out.join(format!("{i}_subsampled.png")), &plain)?;
    }
    Ok(())
}
