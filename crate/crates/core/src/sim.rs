//! Seeded synthetic cohorts with known ground truth.
//!
//! Each student gets a latent ability, an absence propensity tied to that
//! ability, and placement scores correlated with it. For every session the
//! student attends or not; attendees answer the session's items by Bernoulli
//! draws from the 2PL model. Follow-up class attendance depends on an
//! ability stratum, and the final score is an affine function of the ability
//! and the attendance counts plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::{default_pass_mark, lct_outcome, LctOutcome};
use crate::error::{Error, Result};
use crate::irt::{prob_2pl, ItemParameters};
use crate::model::{
    AttendanceLog, CardRecord, Dataset, ItemId, Response, ResponseMatrix, Session, StudentId,
    StudentRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsenceModel {
    /// Probability of missing a class for a student of ability 0.
    pub base_rate: f64,
    /// Logit-scale weight: higher ability lowers the absence probability.
    pub ability_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcModel {
    /// Ability cut points separating the low / mid / high strata.
    pub strata_cuts: [f64; 2],
    /// Probability of attending a required follow-up class, per stratum.
    pub attend_prob: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementModel {
    pub fundamental_mean: f64,
    pub fundamental_sd: f64,
    pub advanced_mean: f64,
    pub advanced_sd: f64,
    /// Correlation of both placement scores with the standardized ability.
    pub correlation: f64,
    pub missing_rate: f64,
}

/// `final = intercept + Σ weight · driver + N(0, noise_sd²)`, truncated to `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub intercept: f64,
    pub ability_weight: f64,
    pub class_absence_weight: f64,
    pub fpc_absence_weight: f64,
    pub fpt_not_required_weight: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_students: usize,
    pub n_sessions: usize,
    pub items_per_session: usize,
    pub seed: u64,
    /// Abilities are drawn from N(ability_mean, 1).
    pub ability_mean: f64,
    pub discrimination_range: [f64; 2],
    pub difficulty_range: [f64; 2],
    pub absence: AbsenceModel,
    /// Card recorded but the LCT was not taken.
    pub card_dropout: f64,
    /// LCT taken but no card record.
    pub card_miss: f64,
    /// Correct answers needed for an LCT success; defaults to 60 % of the items.
    pub lct_pass_mark: Option<usize>,
    /// Correct answers exempting a student from the follow-up test; defaults to all but one.
    pub fpt_exempt_mark: Option<usize>,
    pub fpc: FpcModel,
    pub placement: PlacementModel,
    pub score: ScoreModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_students: 1043,
            n_sessions: 14,
            items_per_session: 5,
            seed: 42,
            ability_mean: 0.0,
            discrimination_range: [0.5, 2.0],
            difficulty_range: [-2.0, 2.0],
            absence: AbsenceModel {
                base_rate: 0.08,
                ability_weight: 1.0,
            },
            card_dropout: 0.02,
            card_miss: 0.02,
            lct_pass_mark: None,
            fpt_exempt_mark: None,
            fpc: FpcModel {
                strata_cuts: [-0.5, 0.5],
                attend_prob: [0.1, 0.85, 0.97],
            },
            placement: PlacementModel {
                fundamental_mean: 60.0,
                fundamental_sd: 15.0,
                advanced_mean: 45.0,
                advanced_sd: 18.0,
                correlation: 0.7,
                missing_rate: 0.03,
            },
            score: ScoreModel {
                intercept: 71.0,
                ability_weight: 2.0,
                class_absence_weight: -0.8,
                fpc_absence_weight: -0.4,
                fpt_not_required_weight: 2.5,
                noise_sd: 8.0,
            },
        }
    }
}

fn prob_ok(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{what} = {p} is not a probability")));
    }
    Ok(())
}

fn range_ok(r: [f64; 2], what: &str) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
        return Err(Error::Config(format!(
            "{what} [{}, {}] is degenerate",
            r[0], r[1]
        )));
    }
    Ok(())
}

impl SimConfig {
    pub fn pass_mark(&self) -> usize {
        self.lct_pass_mark
            .unwrap_or_else(|| default_pass_mark(self.items_per_session))
    }

    pub fn exempt_mark(&self) -> usize {
        self.fpt_exempt_mark
            .unwrap_or(self.items_per_session.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_students < 2 {
            return Err(Error::Config("need at least 2 students".into()));
        }
        if self.n_sessions == 0 {
            return Err(Error::Config("need at least 1 session".into()));
        }
        if self.items_per_session < 2 {
            return Err(Error::Config("need at least 2 items per session".into()));
        }
        range_ok(self.discrimination_range, "discrimination range")?;
        if self.discrimination_range[0] <= 0.0 {
            return Err(Error::Config("discrimination must be positive".into()));
        }
        range_ok(self.difficulty_range, "difficulty range")?;
        prob_ok(self.absence.base_rate, "absence base rate")?;
        if self.absence.base_rate >= 1.0 {
            return Err(Error::Config(
                "absence base rate 1.0 leaves no attendance to observe".into(),
            ));
        }
        if !self.absence.ability_weight.is_finite() || !self.ability_mean.is_finite() {
            return Err(Error::Config("ability parameters must be finite".into()));
        }
        prob_ok(self.card_dropout, "card dropout")?;
        prob_ok(self.card_miss, "card miss")?;
        for (k, &p) in self.fpc.attend_prob.iter().enumerate() {
            prob_ok(p, &format!("FPC attendance probability {k}"))?;
        }
        if self.fpc.strata_cuts[0] > self.fpc.strata_cuts[1] {
            return Err(Error::Config("FPC strata cuts must be ordered".into()));
        }
        prob_ok(self.placement.missing_rate, "placement missing rate")?;
        if !(-1.0..=1.0).contains(&self.placement.correlation) {
            return Err(Error::Config(
                "placement correlation must lie in [-1, 1]".into(),
            ));
        }
        if self.placement.fundamental_sd < 0.0 || self.placement.advanced_sd < 0.0 {
            return Err(Error::Config(
                "placement spreads must be non-negative".into(),
            ));
        }
        if self.score.noise_sd.is_nan() || self.score.noise_sd < 0.0 {
            return Err(Error::Config("score noise must be non-negative".into()));
        }
        let (pass, exempt) = (self.pass_mark(), self.exempt_mark());
        if pass == 0 || pass > self.items_per_session {
            return Err(Error::Config(format!(
                "LCT pass mark {pass} is out of range"
            )));
        }
        if exempt == 0 || exempt > self.items_per_session {
            return Err(Error::Config(format!(
                "FPT exemption mark {exempt} is out of range"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueAbility {
    pub student_id: String,
    pub theta: f64,
    pub absence_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueItem {
    /// `<session>:<item>`, matching the joined response matrix.
    pub item_id: String,
    pub a: f64,
    pub b: f64,
}

/// Generating values, kept apart from the dataset handed to the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub abilities: Vec<TrueAbility>,
    pub items: Vec<TrueItem>,
    pub score: ScoreModel,
    pub pass_mark: usize,
    pub exempt_mark: usize,
}

impl GroundTruth {
    pub fn thetas(&self) -> Vec<f64> {
        self.abilities.iter().map(|a| a.theta).collect()
    }

    pub fn item_parameters(&self) -> Vec<ItemParameters> {
        self.items
            .iter()
            .map(|i| ItemParameters { a: i.a, b: i.b })
            .collect()
    }
}

/// One Bernoulli draw from the 2PL model.
pub fn draw_response<R: Rng>(rng: &mut R, theta: f64, item: ItemParameters) -> bool {
    rng.random::<f64>() < prob_2pl(theta, item)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn simulate(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (n, t, m) = (
        config.n_students,
        config.n_sessions,
        config.items_per_session,
    );
    let sid_width = n.to_string().len().max(4);
    let ses_width = t.to_string().len().max(2);

    let students: Vec<StudentId> = (1..=n)
        .map(|i| StudentId::new(format!("st{i:0sid_width$}")))
        .collect::<Result<_>>()?;
    let session_ids: Vec<String> = (1..=t).map(|k| format!("l{k:0ses_width$}")).collect();
    let item_ids: Vec<ItemId> = (1..=m)
        .map(|j| ItemId::new(format!("q{j}")))
        .collect::<Result<_>>()?;

    // Items, session by session.
    let mut items: Vec<Vec<ItemParameters>> = Vec::with_capacity(t);
    for _ in 0..t {
        items.push(
            (0..m)
                .map(|_| ItemParameters {
                    a: rng.random_range(
                        config.discrimination_range[0]..config.discrimination_range[1],
                    ),
                    b: rng.random_range(config.difficulty_range[0]..config.difficulty_range[1]),
                })
                .collect(),
        );
    }

    // Student traits.
    let base_logit = (config.absence.base_rate / (1.0 - config.absence.base_rate)).ln();
    let rho = config.placement.correlation;
    let resid = (1.0 - rho * rho).max(0.0).sqrt();
    let mut truths = Vec::with_capacity(n);
    let mut placements = Vec::with_capacity(n);
    for id in &students {
        let z: f64 = std_normal.sample(&mut rng);
        let theta = config.ability_mean + z;
        let p_abs = logistic(base_logit - config.absence.ability_weight * theta);
        let placement = |mean: f64, sd: f64, rng: &mut ChaCha8Rng| {
            let e: f64 = std_normal.sample(rng);
            let score = (mean + sd * (rho * z + resid * e))
                .round()
                .clamp(0.0, 100.0);
            let missing = rng.random::<f64>() < config.placement.missing_rate;
            (!missing).then_some(score)
        };
        let fund = placement(
            config.placement.fundamental_mean,
            config.placement.fundamental_sd,
            &mut rng,
        );
        let adv = placement(
            config.placement.advanced_mean,
            config.placement.advanced_sd,
            &mut rng,
        );
        placements.push((fund, adv));
        truths.push(TrueAbility {
            student_id: id.to_string(),
            theta,
            absence_probability: p_abs,
        });
    }

    let pass_mark = config.pass_mark();
    let exempt_mark = config.exempt_mark();
    let mut cells: Vec<Vec<Response>> = vec![Vec::with_capacity(n * m); t];
    let mut cards = vec![Vec::with_capacity(t); n];
    let mut records = Vec::with_capacity(n);
    for (i, truth) in truths.iter().enumerate() {
        let theta = truth.theta;
        let stratum = if theta < config.fpc.strata_cuts[0] {
            0
        } else if theta < config.fpc.strata_cuts[1] {
            1
        } else {
            2
        };
        let (mut succ, mut fail, mut card_absent, mut exempt, mut fpc_absent) =
            (0u32, 0u32, 0u32, 0u32, 0u32);
        for k in 0..t {
            let attends = rng.random::<f64>() >= truth.absence_probability;
            let (card, takes) = if !attends {
                (CardRecord::Absent, false)
            } else if rng.random::<f64>() < config.card_dropout {
                (CardRecord::Present, false)
            } else if rng.random::<f64>() < config.card_miss {
                (CardRecord::Absent, true)
            } else {
                (CardRecord::Present, true)
            };
            let row: Vec<Response> = items[k]
                .iter()
                .map(|&it| {
                    if !takes {
                        Response::Absent
                    } else if draw_response(&mut rng, theta, it) {
                        Response::Correct
                    } else {
                        Response::Incorrect
                    }
                })
                .collect();
            match lct_outcome(&row, pass_mark) {
                LctOutcome::Success => succ += 1,
                LctOutcome::Failed => fail += 1,
                LctOutcome::NotTaken => {}
            }
            let correct = row.iter().filter(|r| r.is_correct()).count();
            if takes && correct >= exempt_mark {
                exempt += 1;
            } else if rng.random::<f64>() >= config.fpc.attend_prob[stratum] {
                fpc_absent += 1;
            }
            if card == CardRecord::Absent {
                card_absent += 1;
            }
            cards[i].push(Some(card));
            cells[k].extend(row);
        }
        let s = &config.score;
        let noise = if s.noise_sd > 0.0 {
            s.noise_sd * std_normal.sample(&mut rng)
        } else {
            0.0
        };
        let final_exam = (s.intercept
            + s.ability_weight * theta
            + s.class_absence_weight * card_absent as f64
            + s.fpc_absence_weight * fpc_absent as f64
            + s.fpt_not_required_weight * exempt as f64
            + noise)
            .clamp(0.0, 100.0);
        records.push(StudentRecord {
            id: students[i].clone(),
            placement_fundamental: placements[i].0,
            placement_advanced: placements[i].1,
            final_exam,
            lct_success_count: succ,
            lct_failure_count: fail,
            class_absence_count: card_absent,
            fpc_absence_count: fpc_absent,
            fpt_not_required_count: exempt,
        });
    }

    let sessions = session_ids
        .iter()
        .zip(cells)
        .map(|(id, c)| {
            Ok(Session {
                id: id.clone(),
                responses: ResponseMatrix::new(students.clone(), item_ids.clone(), c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let attendance = AttendanceLog {
        sessions: session_ids.clone(),
        students: students.clone(),
        cells: cards,
    };
    let truth_items = session_ids
        .iter()
        .zip(&items)
        .flat_map(|(sid, its)| {
            item_ids.iter().zip(its).map(move |(iid, p)| TrueItem {
                item_id: format!("{sid}:{iid}"),
                a: p.a,
                b: p.b,
            })
        })
        .collect();
    let dataset = Dataset::new(sessions, records, attendance)?;
    Ok((
        dataset,
        GroundTruth {
            seed: config.seed,
            abilities: truths,
            items: truth_items,
            score: config.score.clone(),
            pass_mark,
            exempt_mark,
        },
    ))
}
