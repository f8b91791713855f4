//! Interrupts a landmark run, resumes it from its checkpoint and checks the
//! resumed losses match an uninterrupted run.

use lowres_landmarks::checkpoint::Checkpoint;
use lowres_landmarks::synth::{generate_dataset, subsampled_split, SynthConfig};
use lowres_landmarks::training::{checkpoint_name, train_landmarks, LandmarkData, RunOptions, Setting, TrainConfig};
use lowres_landmarks::Error;

fn main() -> lowres_landmarks::Result<()> {
    let data = generate_dataset(&SynthConfig {
        train: 32,
        val: 0,
        test: 0,
        real_lr: 0,
        ..Default::default()
    })?;
    let train = subsampled_split(&data.train, 4)?;
    let cfg = TrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let input = || LandmarkData {
        labelled: &train,
        real_lr: &[],
        monitor: None,
    };
    let (_, straight) = train_landmarks(&cfg, Setting::S1, input(), &RunOptions::default())?;

    let dir = std::env::temp_dir().join(format!("lrlm-resume-{}", std::process::id()));
    let cut = RunOptions {
        out_dir: Some(dir.clone()),
        stop_after: Some(5),
        ..Default::default()
    };
    train_landmarks(&cfg, Setting::S1, input(), &cut)?;
    let resume = RunOptions {
        resume: Some(Checkpoint::load(&dir.join(checkpoint_name(Setting::S1)))?),
        ..Default::default()
    };
    let (models, resumed) = train_landmarks(&cfg, Setting::S1, input(), &resume)?;
    std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    println!("finished at iteration {}", models.iteration);
    println!("identical logs: {}", straight.records() == resumed.records());
    Ok(())
}
