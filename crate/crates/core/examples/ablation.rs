//! A miniature S1–S4 ablation: stage 1, the four landmark settings, and both test tables.
//!
//! Takes a few minutes in release mode.

use lowres_landmarks::eval::format_table;
use lowres_landmarks::synth::generate_dataset;
use lowres_landmarks::training::{run_ablation, AblationConfig};

fn main() -> lowres_landmarks::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = AblationConfig::default().with_seed(1);
    cfg.synth.train = 300;
    cfg.synth.val = 32;
    cfg.synth.test = 48;
    cfg.synth.real_lr = 300;
    cfg.stage1.epochs = 3;
    cfg.stage2.epochs = 10;
    let data = generate_dataset(&cfg.synth)?;
    let outcome = run_ablation(&cfg, &data, None)?;
    print!("generated LR test faces\n{}", format_table(&outcome.report.generated));
    print!("realistically degraded test faces\n{}", format_table(&outcome.report.real_lr));
    Ok(())
}
