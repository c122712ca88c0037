//! Depth-one decision tree on ability, and confusion-matrix metrics.
//!
//! A student is predicted to fail iff `ability < threshold`; an ability equal
//! to the threshold predicts a pass.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StumpModel {
    pub threshold: f64,
    /// Misclassified training points at this threshold.
    pub training_errors: usize,
}

impl StumpModel {
    /// A stump with a fixed threshold (e.g. supplied on the command line).
    pub fn with_threshold(threshold: f64) -> Result<Self> {
        if threshold.is_nan() {
            return Err(Error::Domain("threshold must not be NaN".into()));
        }
        Ok(Self {
            threshold,
            training_errors: 0,
        })
    }

    #[inline]
    pub fn predict(&self, ability: f64) -> Outcome {
        if ability < self.threshold {
            Outcome::Fail
        } else {
            Outcome::Pass
        }
    }
}

fn check_inputs(abilities: &[f64], labels: &[Outcome]) -> Result<()> {
    if abilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} abilities for {} labels",
            abilities.len(),
            labels.len()
        )));
    }
    if let Some(i) = abilities.iter().position(|a| a.is_nan()) {
        return Err(Error::Domain(format!("ability {i} is NaN")));
    }
    Ok(())
}

/// Finds the threshold with the fewest misclassifications among the midpoints
/// of consecutive distinct abilities. Ties go to the lowest threshold.
pub fn fit_stump(abilities: &[f64], labels: &[Outcome]) -> Result<StumpModel> {
    check_inputs(abilities, labels)?;
    if abilities.len() < 2 {
        return Err(Error::Shape("need at least 2 observations".into()));
    }
    let fails = labels.iter().filter(|&&l| l == Outcome::Fail).count();
    let passes = labels.len() - fails;
    if fails == 0 || passes == 0 {
        return Err(Error::DegenerateLabels(
            "both pass and fail labels are required".into(),
        ));
    }

    let mut order: Vec<usize> = (0..abilities.len()).collect();
    order.sort_by(|&i, &j| abilities[i].total_cmp(&abilities[j]));

    // Sweep left to right: everything before position k is predicted fail.
    let mut best: Option<StumpModel> = None;
    let mut pass_below = 0usize;
    let mut fail_below = 0usize;
    for k in 1..order.len() {
        match labels[order[k - 1]] {
            Outcome::Pass => pass_below += 1,
            Outcome::Fail => fail_below += 1,
        }
        let (lo, hi) = (abilities[order[k - 1]], abilities[order[k]]);
        if lo == hi {
            continue;
        }
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold <= lo {
            // adjacent floats: any value in (lo, hi] induces the same split
            threshold = hi;
        }
        let errors = pass_below + (fails - fail_below);
        if best.is_none_or(|b| errors < b.training_errors) {
            best = Some(StumpModel {
                threshold,
                training_errors: errors,
            });
        }
    }

    Ok(best.unwrap_or_else(|| {
        // All abilities equal: majority vote.
        let v = abilities[0];
        if passes >= fails {
            StumpModel {
                threshold: v,
                training_errors: fails,
            }
        } else {
            StumpModel {
                threshold: v.next_up(),
                training_errors: passes,
            }
        }
    }))
}

/// Observed × predicted counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub obs_pass_pred_pass: usize,
    pub obs_pass_pred_fail: usize,
    pub obs_fail_pred_pass: usize,
    pub obs_fail_pred_fail: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Outcome, Outcome)>) -> Self {
        let mut cm = Self::default();
        for (obs, pred) in pairs {
            cm.record(obs, pred);
        }
        cm
    }

    pub fn record(&mut self, observed: Outcome, predicted: Outcome) {
        match (observed, predicted) {
            (Outcome::Pass, Outcome::Pass) => self.obs_pass_pred_pass += 1,
            (Outcome::Pass, Outcome::Fail) => self.obs_pass_pred_fail += 1,
            (Outcome::Fail, Outcome::Pass) => self.obs_fail_pred_pass += 1,
            (Outcome::Fail, Outcome::Fail) => self.obs_fail_pred_fail += 1,
        }
    }

    pub fn observed_pass(&self) -> usize {
        self.obs_pass_pred_pass + self.obs_pass_pred_fail
    }

    pub fn observed_fail(&self) -> usize {
        self.obs_fail_pred_pass + self.obs_fail_pred_fail
    }

    pub fn predicted_pass(&self) -> usize {
        self.obs_pass_pred_pass + self.obs_fail_pred_pass
    }

    pub fn predicted_fail(&self) -> usize {
        self.obs_pass_pred_fail + self.obs_fail_pred_fail
    }

    pub fn total(&self) -> usize {
        self.observed_pass() + self.observed_fail()
    }

    pub fn misclassified(&self) -> usize {
        self.obs_pass_pred_fail + self.obs_fail_pred_pass
    }

    /// Writes the 3×3 observed/predicted table with margins.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let rows = [
            ["observed", "predicted_pass", "predicted_fail", "total"].map(String::from),
            [
                "pass".into(),
                self.obs_pass_pred_pass.to_string(),
                self.obs_pass_pred_fail.to_string(),
                self.observed_pass().to_string(),
            ],
            [
                "fail".into(),
                self.obs_fail_pred_pass.to_string(),
                self.obs_fail_pred_fail.to_string(),
                self.observed_fail().to_string(),
            ],
            [
                "total".into(),
                self.predicted_pass().to_string(),
                self.predicted_fail().to_string(),
                self.total().to_string(),
            ],
        ];
        for r in rows {
            w.write_record(&r).map_err(|e| Error::Write {
                path: Default::default(),
                source: std::io::Error::other(e),
            })?;
        }
        w.flush().map_err(|source| Error::Write {
            path: Default::default(),
            source,
        })
    }
}

pub fn apply_stump(
    model: &StumpModel,
    abilities: &[f64],
    labels: &[Outcome],
) -> Result<ConfusionMatrix> {
    check_inputs(abilities, labels)?;
    Ok(ConfusionMatrix::from_pairs(
        labels
            .iter()
            .zip(abilities)
            .map(|(&obs, &a)| (obs, model.predict(a))),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub misclassification_rate: f64,
    /// Share of predicted failures that actually failed (the "hitting ratio").
    pub fail_precision: Option<f64>,
    pub fail_recall: Option<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Metrics {
        misclassification_rate: cm.misclassified() as f64 / total as f64,
        fail_precision: ratio(cm.obs_fail_pred_fail, cm.predicted_fail()),
        fail_recall: ratio(cm.obs_fail_pred_fail, cm.observed_fail()),
    })
}
