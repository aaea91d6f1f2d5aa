//! Hyperparameter grid sweeps over a binary-QA dataset built from the planted
//! cases of a toy profile.
//!
//! Each planted case with a `gold` token becomes one question: the prompt is
//! the profile's visual block followed by the case trigger, and the model's
//! single generated token is read as "yes" when it equals `yes_token`.
//! Grid points run in parallel, each with its own backend instances; rows
//! come back in grid order (alpha outermost, gamma innermost).

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{pope_scores, Answer, BinaryQaRecord};
use crate::backend::ToyModelSpec;
use crate::decoder::{generate, StopCriteria, Strategy};
use crate::error::{Error, Result};
use crate::types::{DecodeConfig, TokenId};

fn default_repetitions() -> usize {
    1
}

fn default_no_token() -> TokenId {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub alpha_grid: Vec<f32>,
    pub beta_grid: Vec<f32>,
    pub gamma_grid: Vec<f32>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub yes_token: TokenId,
    #[serde(default = "default_no_token")]
    pub no_token: TokenId,
    /// Template for every non-grid decode setting.
    #[serde(default)]
    pub base_config: DecodeConfig,
    pub profile: ToyModelSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepItem {
    pub prompt: Vec<TokenId>,
    pub gold: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub accuracy: f64,
    pub f1: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [
            ("alpha", &self.alpha_grid),
            ("beta", &self.beta_grid),
            ("gamma", &self.gamma_grid),
        ] {
            if grid.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "{name}_grid must not be empty"
                )));
            }
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        self.profile.profile.validate(&self.profile.dims())
    }

    /// Questions derived from the profile's planted cases, in file order.
    pub fn dataset(&self) -> Vec<SweepItem> {
        let profile = &self.profile.profile;
        profile
            .cases
            .iter()
            .filter_map(|case| {
                let gold = case.gold?;
                Some(SweepItem {
                    prompt: profile.prompt(&[case.trigger]),
                    gold: if gold == self.yes_token {
                        Answer::Yes
                    } else {
                        Answer::No
                    },
                })
            })
            .collect()
    }

    fn grid(&self) -> Vec<(f32, f32, f32)> {
        let mut points = Vec::new();
        for &a in &self.alpha_grid {
            for &b in &self.beta_grid {
                for &g in &self.gamma_grid {
                    points.push((a, b, g));
                }
            }
        }
        points
    }
}

fn evaluate_point(
    spec: &SweepSpec,
    dataset: &[SweepItem],
    (alpha, beta, gamma): (f32, f32, f32),
) -> Result<SweepRow> {
    let cfg = DecodeConfig {
        alpha,
        beta,
        gamma,
        ..spec.base_config.clone()
    };
    let mut accuracy = 0.0;
    let mut f1 = 0.0;
    for rep in 0..spec.repetitions {
        let mut model = spec.profile.clone();
        model.profile.seed = model.profile.seed.wrapping_add(rep as u64);
        let mut backend = model.build()?;
        let mut records = Vec::with_capacity(dataset.len());
        for item in dataset {
            let out = generate(
                &mut backend,
                &item.prompt,
                &cfg,
                StopCriteria::max_tokens(1),
                Strategy::Daid,
            )?;
            let predicted = if out.tokens[0] == spec.yes_token {
                Answer::Yes
            } else {
                Answer::No
            };
            records.push(BinaryQaRecord {
                predicted,
                gold: item.gold,
            });
        }
        let scores = pope_scores(&records)?;
        accuracy += scores.accuracy;
        f1 += scores.f1;
    }
    let reps = spec.repetitions as f64;
    Ok(SweepRow {
        alpha,
        beta,
        gamma,
        accuracy: accuracy / reps,
        f1: f1 / reps,
    })
}

pub fn run_sweep(spec: &SweepSpec, dataset: &[SweepItem]) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::par::map(&spec.grid(), |&point| evaluate_point(spec, dataset, point))
        .into_iter()
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "alpha,beta,gamma,accuracy,f1")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.alpha, r.beta, r.gamma, r.accuracy, r.f1
        )?;
    }
    Ok(())
}
