//! One-axis-at-a-time feature ablations over a fixed split and seed.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::Experiment;
use super::report::MetricsReport;
use super::EvalError;
use crate::features::{FeatureSpec, RelativeFlags, StatFlags};
use crate::grid::ResolutionLadder;
use crate::ingest::coarsen;
use crate::models::ModelSpec;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    GridResolution,
    RelativeLocation,
    GridStatistics,
    GridCount,
    ScaleCount,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::GridResolution,
        AblationAxis::RelativeLocation,
        AblationAxis::GridStatistics,
        AblationAxis::GridCount,
        AblationAxis::ScaleCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::GridResolution => "grid_resolution",
            AblationAxis::RelativeLocation => "relative_location",
            AblationAxis::GridStatistics => "grid_statistics",
            AblationAxis::GridCount => "grid_count",
            AblationAxis::ScaleCount => "scale_count",
        }
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = AblationAxis::ALL.iter().map(|a| a.name()).collect();
                format!("unknown ablation axis '{s}' ({})", names.join(", "))
            })
    }
}

/// One feature configuration to evaluate. `anonymization` coarsens the
/// dataset's cells before feature extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub label: String,
    pub features: FeatureSpec,
    pub anonymization: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub axis: AblationAxis,
    pub base: FeatureSpec,
    pub variants: Vec<AblationVariant>,
}

impl AblationPlan {
    /// The standard sweep for `axis` around `base`.
    pub fn standard(axis: AblationAxis, base: &FeatureSpec) -> Self {
        let v = |label: String, features: FeatureSpec| AblationVariant {
            label,
            features,
            anonymization: None,
        };
        let res = base.ladder.resolutions();
        let variants = match axis {
            // location granularity: anonymize at r, keep the scales that
            // still fit
            AblationAxis::GridResolution => res
                .iter()
                .rev()
                .map(|&r| {
                    let kept: Vec<u8> = res.iter().copied().filter(|&x| x <= r).collect();
                    AblationVariant {
                        label: format!("r{r}"),
                        features: FeatureSpec {
                            ladder: ResolutionLadder::new(kept).expect("subset of a valid ladder"),
                            ..base.clone()
                        },
                        anonymization: Some(r),
                    }
                })
                .collect(),
            AblationAxis::RelativeLocation => [(true, true, "distance+bearing"), (false, true, "bearing"), (true, false, "distance"), (false, false, "none")]
                .into_iter()
                .map(|(distance, bearing, label)| {
                    v(
                        label.into(),
                        FeatureSpec {
                            relative: RelativeFlags { distance, bearing },
                            ..base.clone()
                        },
                    )
                })
                .collect(),
            AblationAxis::GridStatistics => {
                let all = StatFlags {
                    poi: true,
                    users: true,
                    checkins: true,
                };
                [
                    (all, "all"),
                    (StatFlags { poi: false, ..all }, "no_poi"),
                    (StatFlags { users: false, ..all }, "no_users"),
                    (StatFlags { checkins: false, ..all }, "no_checkins"),
                    (StatFlags::none(), "none"),
                ]
                .into_iter()
                .map(|(stats, label)| v(label.into(), FeatureSpec { stats, ..base.clone() }))
                .collect()
            }
            AblationAxis::GridCount => (1..=base.families.len())
                .map(|k| {
                    v(
                        format!("{k}_grid"),
                        FeatureSpec {
                            families: base.families[..k].to_vec(),
                            ..base.clone()
                        },
                    )
                })
                .collect(),
            // same finest scale, growing number of coarser scales
            AblationAxis::ScaleCount => (1..=res.len())
                .map(|k| {
                    v(
                        format!("{k}_scale"),
                        FeatureSpec {
                            ladder: ResolutionLadder::new(res[res.len() - k..].to_vec()).expect("suffix of a valid ladder"),
                            ..base.clone()
                        },
                    )
                })
                .collect(),
        };
        AblationPlan {
            axis,
            base: base.clone(),
            variants,
        }
    }

    /// Every variant may differ from the base only along the plan's axis.
    pub fn validate(&self) -> Result<(), EvalError> {
        for v in &self.variants {
            let mut f = v.features.clone();
            match self.axis {
                AblationAxis::GridResolution | AblationAxis::ScaleCount => f.ladder = self.base.ladder.clone(),
                AblationAxis::RelativeLocation => f.relative = self.base.relative,
                AblationAxis::GridStatistics => f.stats = self.base.stats,
                AblationAxis::GridCount => f.families = self.base.families.clone(),
            }
            let anon_ok = v.anonymization.is_none() || self.axis == AblationAxis::GridResolution;
            if f != self.base || !anon_ok {
                return Err(EvalError::Plan(format!(
                    "variant '{}' changes more than {}",
                    v.label, self.axis
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub variant: String,
    pub dimension: usize,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Evaluate every variant with the same split and model seed. A variant
/// that cannot be built is recorded with its error and the run continues.
pub fn run_ablation(
    plan: &AblationPlan,
    experiment: &Experiment,
    model: &ModelSpec,
    seed: u64,
) -> Result<Vec<AblationRow>, crate::Error> {
    plan.validate()?;
    let model = ModelSpec {
        seed,
        ..model.clone()
    };
    let rows = par::map_slice(&plan.variants, |v| {
        let result = (|| {
            let coarse;
            let mut exp = experiment.clone();
            if let Some(r) = v.anonymization {
                if r > exp.dataset.resolution {
                    return Err(crate::features::FeatureError::TooFine {
                        requested: r,
                        anonymized: exp.dataset.resolution,
                    }
                    .into());
                }
                coarse = coarsen(exp.dataset, r)?;
                exp.dataset = &coarse;
            }
            exp.run(&v.features, &model).map(|o| o.report)
        })();
        let (report, error) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => {
                log::warn!("ablation variant {} failed: {e}", v.label);
                (None, Some(e.to_string()))
            }
        };
        AblationRow {
            axis: plan.axis,
            variant: v.label.clone(),
            dimension: v.features.dimension(),
            report,
            error,
        }
    });
    Ok(rows)
}

/// Mean macro-F1 over the variants that finished.
pub fn mean_macro_f1<'a>(rows: impl IntoIterator<Item = &'a AblationRow>) -> Option<f64> {
    let scores: Vec<f64> = rows.into_iter().filter_map(|r| r.report.as_ref().map(|m| m.macro_f1)).collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// One CSV row per variant with overall and per-class F1.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow], run_config_hash: &str) -> Result<(), crate::Error> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "# run_config_hash={run_config_hash}").map_err(io)?;
    let classes: Vec<String> = crate::ingest::Activity::names().iter().map(|n| format!("f1_{n}")).collect();
    writeln!(
        w,
        "axis,variant,dimension,status,macro_f1,accuracy,log_loss,split_fingerprint,seed,{}",
        classes.join(",")
    )
    .map_err(io)?;
    for r in rows {
        match &r.report {
            Some(m) => {
                let per: Vec<String> = m.per_class.iter().map(|c| c.f1.to_string()).collect();
                writeln!(
                    w,
                    "{},{},{},ok,{},{},{},{},{},{}",
                    r.axis,
                    r.variant,
                    r.dimension,
                    m.macro_f1,
                    m.accuracy,
                    m.log_loss,
                    m.provenance.split_fingerprint,
                    m.provenance.seed,
                    per.join(",")
                )
                .map_err(io)?;
            }
            None => {
                let msg = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                writeln!(w, "{},{},{},failed: {msg}{}", r.axis, r.variant, r.dimension, ",".repeat(5 + classes.len()))
                    .map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}
