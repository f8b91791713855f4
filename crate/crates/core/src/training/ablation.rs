use std::path::Path;

use serde::{Deserialize, Serialize};

use super::high_to_low::generate_lr_split;
use super::landmark::{train_landmarks, LandmarkData, LandmarkModels, Setting};
use super::{train_high_to_low, HighToLow, MetricsLog, RunOptions, TrainConfig};
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, summaries_from_csv, summaries_to_csv, MetricSummary, Normalizer};
use crate::networks::Profile;
use crate::synth::{derive_seed, subsampled_split, FaceSample, SynthConfig, SynthData};

/// Everything an S1–S4 run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub stage1: TrainConfig,
    /// Shared by all four settings, including the seed.
    pub stage2: TrainConfig,
    pub normalizer: Normalizer,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl AblationConfig {
    pub fn for_profile(profile: Profile) -> Self {
        AblationConfig {
            synth: SynthConfig::for_profile(profile),
            stage1: TrainConfig {
                augment: false,
                ..TrainConfig::for_profile(profile)
            },
            stage2: TrainConfig::for_profile(profile),
            normalizer: Normalizer::Bbox,
        }
    }

    /// Uses `seed` for the data and both stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.profile != self.synth.profile || self.stage2.profile != self.synth.profile {
            return Err(Error::Config("data and both stages must use the same profile".into()));
        }
        Ok(())
    }
}

/// One metrics row per setting on each LR test split.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    /// Test faces passed through the trained high-to-low generator.
    pub generated: Vec<MetricSummary>,
    /// Test faces under the realistic degradation (surrogate real LR).
    pub real_lr: Vec<MetricSummary>,
}

impl AblationReport {
    pub fn row(&self, setting: Setting) -> Option<&MetricSummary> {
        self.generated.iter().find(|r| r.setting == setting.name())
    }

    pub fn real_lr_row(&self, setting: Setting) -> Option<&MetricSummary> {
        self.real_lr.iter().find(|r| r.setting == setting.name())
    }

    pub fn to_csv(&self) -> Result<String> {
        summaries_to_csv(&self.generated)
    }

    pub fn real_lr_csv(&self) -> Result<String> {
        summaries_to_csv(&self.real_lr)
    }

    pub fn from_csv(generated: &str, real_lr: &str) -> Result<Self> {
        Ok(AblationReport {
            generated: summaries_from_csv(generated)?,
            real_lr: summaries_from_csv(real_lr)?,
        })
    }

    /// `ablation.csv` and `ablation_real_lr.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("ablation.csv"), self.to_csv()?.as_bytes())?;
        write_atomic(&dir.join("ablation_real_lr.csv"), self.real_lr_csv()?.as_bytes())
    }
}

/// The report plus every trained model and log.
#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub report: AblationReport,
    pub stage1: HighToLow,
    pub stage1_log: MetricsLog,
    pub models: Vec<LandmarkModels>,
    pub logs: Vec<MetricsLog>,
    pub generated_test: Vec<FaceSample>,
}

/// Stage 1, then S1–S4 from a common G2 initialisation, each evaluated on the
/// generated-LR and surrogate-real-LR test splits.
pub fn run_ablation(cfg: &AblationConfig, data: &SynthData, out_dir: Option<&Path>) -> Result<AblationOutcome> {
    cfg.validate()?;
    let opts = |sub: &str| -> Result<RunOptions> {
        let dir = match out_dir {
            Some(d) => {
                let p = d.join(sub);
                std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                Some(p)
            }
            None => None,
        };
        Ok(RunOptions {
            out_dir: dir,
            ..Default::default()
        })
    };
    let factor = cfg.synth.factor();
    let hr: Vec<_> = data.train.iter().map(|s| s.image.clone()).collect();
    log::info!("stage 1: {} HR faces, {} real LR images", hr.len(), data.real_lr.len());
    let (mut stage1, stage1_log) = train_high_to_low(&cfg.stage1, &hr, &data.real_lr, &opts("stage1")?)?;

    let seed = cfg.stage2.seed;
    let generated_train = generate_lr_split(&mut stage1.g1, &data.train, derive_seed(seed, 20, 0))?;
    let generated_val = generate_lr_split(&mut stage1.g1, &data.val, derive_seed(seed, 20, 1))?;
    let generated_test = generate_lr_split(&mut stage1.g1, &data.test, derive_seed(seed, 20, 2))?;
    let subsampled_train = subsampled_split(&data.train, factor)?;
    let monitor = if generated_val.is_empty() { None } else { Some(&generated_val[..]) };

    let mut report = AblationReport {
        generated: Vec::new(),
        real_lr: Vec::new(),
    };
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for setting in Setting::LADDER {
        let labelled = if setting == Setting::S1 { &subsampled_train } else { &generated_train };
        let d = LandmarkData {
            labelled,
            real_lr: if setting.uses_d3() { &data.real_lr } else { &[] },
            monitor,
        };
        log::info!("{setting}: training on {} samples", labelled.len());
        let (mut m, l) = train_landmarks(&cfg.stage2, setting, d, &opts("stage2")?)?;
        let g = evaluate_model(&mut m.g2, &generated_test, cfg.normalizer, setting.name())?;
        let r = evaluate_model(&mut m.g2, &data.test_real_lr, cfg.normalizer, setting.name())?;
        log::info!(
            "{setting}: NRMSE {:.4} on generated LR, {:.4} on real LR",
            g.summary.nrmse_mean,
            r.summary.nrmse_mean
        );
        report.generated.push(g.summary);
        report.real_lr.push(r.summary);
        models.push(m);
        logs.push(l);
    }
    if let Some(d) = out_dir {
        report.save(d)?;
    }
    Ok(AblationOutcome {
        report,
        stage1,
        stage1_log,
        models,
        logs,
        generated_test,
    })
}
