//! Two-parameter logistic (2PL) item response model and joint maximum
//! likelihood calibration.
//!
//! The success probability of student `i` on item `j` is
//!
//! ```text
//! P(theta; a, b) = 1 / (1 + exp(-D * a * (theta - b)))
//! ```
//!
//! with the scaling constant `D = 1.7`. Calibration alternates bounded Newton
//! updates of the abilities (items held fixed) and Fisher-scoring updates of
//! each item's `(a, b)` (abilities held fixed), then re-standardizes the
//! interior abilities to mean 0 / variance 1 and folds the affine change into
//! the item parameters. Every update is guarded by step halving so that it
//! never lowers the log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Response, ResponseMatrix};

pub const SCALING_CONSTANT: f64 = 1.7;

/// Discrimination `a` and difficulty `b` of one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParameters {
    pub a: f64,
    pub b: f64,
}

impl ItemParameters {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Domain(format!(
                "discrimination must be positive, got {a}"
            )));
        }
        if !b.is_finite() {
            return Err(Error::Domain(format!("difficulty must be finite, got {b}")));
        }
        Ok(Self { a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub theta: f64,
    pub converged: bool,
}

/// Closed interval used for parameter bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate("bounds")?;
        Ok(b)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "{what} [{}, {}] are degenerate",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn is_interior(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub max_sweeps: usize,
    /// Absolute log-likelihood improvement below which calibration stops.
    pub tolerance: f64,
    pub ability_bounds: Bounds,
    pub a_bounds: Bounds,
    pub b_bounds: Bounds,
    pub scaling_constant: f64,
    /// Newton iterations per parameter block within one sweep.
    pub newton_steps: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            tolerance: 1e-6,
            ability_bounds: Bounds { lo: -3.0, hi: 3.0 },
            a_bounds: Bounds { lo: 0.1, hi: 4.0 },
            b_bounds: Bounds { lo: -4.0, hi: 4.0 },
            scaling_constant: SCALING_CONSTANT,
            newton_steps: 25,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.scaling_constant.is_finite() && self.scaling_constant > 0.0) {
            return Err(Error::Config("scaling constant must be positive".into()));
        }
        if self.newton_steps == 0 {
            return Err(Error::Config("newton_steps must be at least 1".into()));
        }
        self.ability_bounds.validate("ability bounds")?;
        self.a_bounds.validate("discrimination bounds")?;
        self.b_bounds.validate("difficulty bounds")?;
        if self.a_bounds.lo <= 0.0 {
            return Err(Error::Config(
                "discrimination bounds must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-likelihood contribution of one response at logit `z`.
#[inline]
fn cell_ll(delta: f64, z: f64) -> f64 {
    // ln P = -softplus(-z), ln Q = -softplus(z)
    if delta > 0.5 {
        -softplus(-z)
    } else {
        -softplus(z)
    }
}

/// Success probability under the 2PL model with `D = 1.7`.
pub fn prob_2pl(theta: f64, params: ItemParameters) -> f64 {
    prob_2pl_scaled(theta, params, SCALING_CONSTANT)
}

pub fn prob_2pl_scaled(theta: f64, params: ItemParameters, d: f64) -> f64 {
    logistic(d * params.a * (theta - params.b))
}

/// Log-likelihood of a single response.
pub fn cell_log_likelihood(response: Response, theta: f64, params: ItemParameters) -> f64 {
    cell_ll(
        response.delta(),
        SCALING_CONSTANT * params.a * (theta - params.b),
    )
}

fn check_shapes(matrix: &ResponseMatrix, thetas: usize, items: usize) -> Result<()> {
    if thetas != matrix.n_students() || items != matrix.n_items() {
        return Err(Error::Shape(format!(
            "{thetas} abilities and {items} items for a {}x{} matrix",
            matrix.n_students(),
            matrix.n_items()
        )));
    }
    Ok(())
}

/// Joint log-likelihood over every cell; absences count as failures.
pub fn log_likelihood(
    matrix: &ResponseMatrix,
    thetas: &[f64],
    items: &[ItemParameters],
) -> Result<f64> {
    check_shapes(matrix, thetas.len(), items.len())?;
    let d = SCALING_CONSTANT;
    let mut ll = 0.0;
    for (i, &theta) in thetas.iter().enumerate() {
        for (r, it) in matrix.row(i).iter().zip(items) {
            ll += cell_ll(r.delta(), d * it.a * (theta - it.b));
        }
    }
    Ok(ll)
}

/// Partial derivatives of [`log_likelihood`].
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGradient {
    pub theta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn log_likelihood_gradient(
    matrix: &ResponseMatrix,
    thetas: &[f64],
    items: &[ItemParameters],
) -> Result<LikelihoodGradient> {
    check_shapes(matrix, thetas.len(), items.len())?;
    let d = SCALING_CONSTANT;
    let mut g = LikelihoodGradient {
        theta: vec![0.0; thetas.len()],
        a: vec![0.0; items.len()],
        b: vec![0.0; items.len()],
    };
    for (i, &theta) in thetas.iter().enumerate() {
        for (j, (r, it)) in matrix.row(i).iter().zip(items).enumerate() {
            let resid = r.delta() - logistic(d * it.a * (theta - it.b));
            g.theta[i] += d * it.a * resid;
            g.a[j] += d * (theta - it.b) * resid;
            g.b[j] -= d * it.a * resid;
        }
    }
    Ok(g)
}

const MAX_HALVINGS: usize = 40;
const STEP_EPS: f64 = 1e-10;
/// Largest Newton move in ability units per iteration.
const MAX_THETA_STEP: f64 = 2.0;

/// Log-likelihood of one cell together with its success probability, sharing
/// a single exponential.
#[inline]
fn cell_eval(delta: f64, z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    // e lies in (0, 1], where ln(1 + e) is accurate to an ulp and much
    // cheaper than ln_1p.
    let l = (1.0 + e).ln();
    let p = if z >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    };
    // ln P = -softplus(-z), ln Q = -softplus(z)
    let ll = if delta > 0.5 {
        -((-z).max(0.0) + l)
    } else {
        -(z.max(0.0) + l)
    };
    (ll, p)
}

/// Log-likelihood, gradient and Hessian of one student's responses in theta.
fn student_eval(deltas: &[f64], items: &[ItemParameters], d: f64, theta: f64) -> (f64, f64, f64) {
    let (mut ll, mut g, mut h) = (0.0, 0.0, 0.0);
    for (&y, it) in deltas.iter().zip(items) {
        let da = d * it.a;
        let (c, p) = cell_eval(y, da * (theta - it.b));
        ll += c;
        g += da * (y - p);
        h -= da * da * p * (1.0 - p);
    }
    (ll, g, h)
}

fn student_ll(deltas: &[f64], items: &[ItemParameters], d: f64, theta: f64) -> f64 {
    deltas
        .iter()
        .zip(items)
        .map(|(&y, it)| cell_eval(y, d * it.a * (theta - it.b)).0)
        .sum()
}

/// Bounded Newton ascent on one ability. Returns the new value and whether the
/// iteration settled (small step, or pinned at a bound).
fn update_theta(
    deltas: &[f64],
    items: &[ItemParameters],
    d: f64,
    theta0: f64,
    bounds: Bounds,
    max_steps: usize,
) -> (f64, bool) {
    let mut theta = theta0;
    let (mut ll, mut g, mut h) = student_eval(deltas, items, d, theta);
    for _ in 0..max_steps {
        if g.abs() < 1e-12 {
            return (theta, true);
        }
        let step = if h < -1e-300 {
            (-g / h).clamp(-MAX_THETA_STEP, MAX_THETA_STEP)
        } else {
            g.signum() * MAX_THETA_STEP
        };
        if step.abs() < STEP_EPS {
            return (theta, true);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = bounds.clamp(theta + t * step);
            let eval = student_eval(deltas, items, d, cand);
            if eval.0 >= ll {
                accepted = Some((cand, eval));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, (cll, cg, ch))) => {
                let moved = (cand - theta).abs();
                theta = cand;
                (ll, g, h) = (cll, cg, ch);
                if moved < STEP_EPS {
                    return (theta, true);
                }
            }
            None => return (theta, true),
        }
    }
    (theta, false)
}

/// Log-likelihood, score and Fisher information of one item in `(a, b)`.
struct ItemEval {
    ll: f64,
    ga: f64,
    gb: f64,
    iaa: f64,
    iab: f64,
    ibb: f64,
}

fn item_eval(deltas: &[f64], thetas: &[f64], d: f64, a: f64, b: f64) -> ItemEval {
    let mut e = ItemEval {
        ll: 0.0,
        ga: 0.0,
        gb: 0.0,
        iaa: 0.0,
        iab: 0.0,
        ibb: 0.0,
    };
    for (&y, &th) in deltas.iter().zip(thetas) {
        let x = th - b;
        let (c, p) = cell_eval(y, d * a * x);
        let w = d * d * p * (1.0 - p);
        e.ll += c;
        e.ga += d * x * (y - p);
        e.gb -= d * a * (y - p);
        e.iaa += w * x * x;
        e.iab -= w * a * x;
        e.ibb += w * a * a;
    }
    e
}

/// Fisher scoring on one item's `(a, b)` with step halving and box bounds.
fn update_item(
    deltas: &[f64],
    thetas: &[f64],
    d: f64,
    start: ItemParameters,
    cfg: &CalibrationConfig,
) -> ItemParameters {
    let (mut a, mut b) = (start.a, start.b);
    let mut cur = item_eval(deltas, thetas, d, a, b);
    for _ in 0..cfg.newton_steps {
        let ItemEval { ga, gb, .. } = cur;
        if ga.abs() < 1e-12 && gb.abs() < 1e-12 {
            break;
        }
        // Ridge keeps the 2x2 solve well posed when information is nearly singular.
        let ridge = 1e-9 * (cur.iaa + cur.ibb).max(1e-12);
        let (iaa, ibb, iab) = (cur.iaa + ridge, cur.ibb + ridge, cur.iab);
        let det = iaa * ibb - iab * iab;
        let (mut sa, mut sb) = ((ibb * ga - iab * gb) / det, (iaa * gb - iab * ga) / det);
        if !(sa.is_finite() && sb.is_finite()) {
            sa = ga.signum() * 0.1;
            sb = gb.signum() * 0.1;
        }
        if sa.abs() < STEP_EPS && sb.abs() < STEP_EPS {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        let (mut moved_a, mut moved_b) = (0.0, 0.0);
        for _ in 0..MAX_HALVINGS {
            let ca = cfg.a_bounds.clamp(a + t * sa);
            let cb = cfg.b_bounds.clamp(b + t * sb);
            let cand = item_eval(deltas, thetas, d, ca, cb);
            if cand.ll >= cur.ll {
                moved_a = (ca - a).abs();
                moved_b = (cb - b).abs();
                a = ca;
                b = cb;
                cur = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (moved_a < STEP_EPS && moved_b < STEP_EPS) {
            break;
        }
    }
    ItemParameters { a, b }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Why an item took no part in calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    AllCorrect,
    AllIncorrect,
    /// Every remaining informative student answered it the same way.
    NoInformativeStudents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub index: usize,
    pub item_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sweeps: usize,
    pub converged: bool,
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
    /// Log-likelihood over the calibrated cells after every sweep.
    pub log_likelihood_trace: Vec<f64>,
    pub clamped_abilities: usize,
    pub clamped_items: usize,
    /// Students with an all-correct or all-incorrect pattern, pinned to a bound.
    pub extreme_students: usize,
    pub excluded_items: Vec<ExcludedItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub abilities: Vec<AbilityEstimate>,
    pub items: Vec<ItemParameters>,
    pub diagnostics: Diagnostics,
}

/// Working state over the informative submatrix.
struct Joint<'a> {
    cfg: &'a CalibrationConfig,
    /// Row-major deltas of active students × active items.
    by_student: Vec<f64>,
    /// Column-major copy for item updates.
    by_item: Vec<f64>,
    n_s: usize,
    n_i: usize,
    thetas: Vec<f64>,
    items: Vec<ItemParameters>,
    /// Box for abilities while iterating; wider than the reported bounds.
    theta_bounds: Bounds,
}

/// Half-width of the working ability box. Reported abilities are clamped to
/// the configured bounds only at the end, so that re-standardizing never
/// pushes an interior ability into a bound and costs likelihood.
const WORKING_ABILITY_LIMIT: f64 = 10.0;
/// Damping attempts on a sweep's ability move before falling back.
const SWEEP_HALVINGS: usize = 8;

impl Joint<'_> {
    fn log_likelihood(&self) -> f64 {
        let d = self.cfg.scaling_constant;
        (0..self.n_s)
            .map(|i| {
                student_ll(
                    &self.by_student[i * self.n_i..(i + 1) * self.n_i],
                    &self.items,
                    d,
                    self.thetas[i],
                )
            })
            .sum()
    }

    fn theta_step(&mut self) -> bool {
        let d = self.cfg.scaling_constant;
        let mut all_settled = true;
        for i in 0..self.n_s {
            let row = &self.by_student[i * self.n_i..(i + 1) * self.n_i];
            let (t, settled) = update_theta(
                row,
                &self.items,
                d,
                self.thetas[i],
                self.theta_bounds,
                self.cfg.newton_steps,
            );
            self.thetas[i] = t;
            all_settled &= settled;
        }
        all_settled
    }

    /// One ability step, item step and identification. Re-standardizing can
    /// cost likelihood when an item sits at its discrimination bound, so the
    /// ability move is damped until the whole sweep does not lose likelihood;
    /// with no ability move at all the sweep reduces to the item step, which
    /// never does. Returns the new log-likelihood.
    fn sweep(&mut self, prev_ll: f64) -> f64 {
        let start_thetas = self.thetas.clone();
        let start_items = self.items.clone();
        self.theta_step();
        let target = std::mem::take(&mut self.thetas);
        let mut t = 1.0;
        for _ in 0..SWEEP_HALVINGS {
            self.thetas = start_thetas
                .iter()
                .zip(&target)
                .map(|(&old, &new)| old + t * (new - old))
                .collect();
            self.items.clone_from(&start_items);
            self.item_step();
            self.identify();
            let ll = self.log_likelihood();
            if ll >= prev_ll {
                return ll;
            }
            t *= 0.5;
        }
        log::debug!("sweep fell back to an item-only update");
        self.thetas = start_thetas;
        self.items.clone_from(&start_items);
        self.item_step();
        let ll = self.log_likelihood();
        if ll >= prev_ll {
            return ll;
        }
        // Only summation-order rounding is left; keep the previous state.
        self.items = start_items;
        prev_ll
    }

    fn item_step(&mut self) {
        let d = self.cfg.scaling_constant;
        for j in 0..self.n_i {
            let col = &self.by_item[j * self.n_s..(j + 1) * self.n_s];
            self.items[j] = update_item(col, &self.thetas, d, self.items[j], self.cfg);
        }
    }

    /// Standardizes interior abilities to mean 0 / variance 1, absorbing the
    /// affine map into the items. The map is applied to every ability so the
    /// likelihood is unchanged; an ability pinned at a bound is re-clamped,
    /// which can only move it toward its unconstrained optimum.
    fn identify(&mut self) {
        let bounds = self.theta_bounds;
        for _ in 0..64 {
            let interior: Vec<f64> = self
                .thetas
                .iter()
                .copied()
                .filter(|&t| bounds.is_interior(t))
                .collect();
            if interior.is_empty() {
                return;
            }
            let n = interior.len() as f64;
            let mean = interior.iter().sum::<f64>() / n;
            let var = interior
                .iter()
                .map(|t| (t - mean) * (t - mean))
                .sum::<f64>()
                / n;
            let sd = if interior.len() >= 2 && var > 0.0 {
                var.sqrt()
            } else {
                1.0
            };
            if mean.abs() <= 1e-14 && (sd - 1.0).abs() <= 1e-14 {
                return;
            }
            for t in &mut self.thetas {
                *t = bounds.clamp((*t - mean) / sd);
            }
            for it in &mut self.items {
                it.a = self.cfg.a_bounds.clamp(it.a * sd);
                it.b = self.cfg.b_bounds.clamp((it.b - mean) / sd);
            }
        }
    }
}

/// Joint maximum-likelihood estimation of all abilities and item parameters.
///
/// Students who answered every informative item the same way have no finite
/// MLE; they are pinned to the matching ability bound and left out of the item
/// updates, as are items whose column carries no information.
#[allow(clippy::needless_range_loop)] // the activity masks are updated while being scanned
pub fn estimate_joint(matrix: &ResponseMatrix, config: &CalibrationConfig) -> Result<Calibration> {
    config.validate()?;
    let (n_students, n_items) = (matrix.n_students(), matrix.n_items());
    let correct = |i: usize, j: usize| matrix.get(i, j).is_correct();

    let mut item_active = vec![true; n_items];
    let mut student_active = vec![true; n_students];
    let mut excluded: Vec<ExcludedItem> = Vec::new();
    let mut first_pass = true;
    loop {
        let mut changed = false;
        for j in 0..n_items {
            if !item_active[j] {
                continue;
            }
            let (mut hits, mut total) = (0usize, 0usize);
            for i in (0..n_students).filter(|&i| student_active[i]) {
                total += 1;
                hits += correct(i, j) as usize;
            }
            if hits == 0 || hits == total {
                item_active[j] = false;
                changed = true;
                let reason = match (first_pass, hits == 0) {
                    (true, true) => ExclusionReason::AllIncorrect,
                    (true, false) => ExclusionReason::AllCorrect,
                    (false, _) => ExclusionReason::NoInformativeStudents,
                };
                log::warn!(
                    "item `{}` excluded from calibration: {reason:?}",
                    matrix.items()[j]
                );
                excluded.push(ExcludedItem {
                    index: j,
                    item_id: matrix.items()[j].to_string(),
                    reason,
                });
            }
        }
        first_pass = false;
        for i in 0..n_students {
            if !student_active[i] {
                continue;
            }
            let (mut hits, mut total) = (0usize, 0usize);
            for j in (0..n_items).filter(|&j| item_active[j]) {
                total += 1;
                hits += correct(i, j) as usize;
            }
            if total == 0 || hits == 0 || hits == total {
                student_active[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    excluded.sort_by_key(|e| e.index);

    let s_idx: Vec<usize> = (0..n_students).filter(|&i| student_active[i]).collect();
    let i_idx: Vec<usize> = (0..n_items).filter(|&j| item_active[j]).collect();
    let bounds = config.ability_bounds;

    // Full-matrix item defaults: a = 1, b from the logit of the proportion incorrect.
    let mut items_out: Vec<ItemParameters> = (0..n_items)
        .map(|j| {
            let hits = (0..n_students).filter(|&i| correct(i, j)).count() as f64;
            let p_wrong = 1.0 - hits / n_students as f64;
            ItemParameters {
                a: config.a_bounds.clamp(1.0),
                b: config.b_bounds.clamp(logit(p_wrong)),
            }
        })
        .collect();

    // Extreme students, scored over the items still in play (all items when none are).
    let scored_items: Vec<usize> = if i_idx.is_empty() {
        (0..n_items).collect()
    } else {
        i_idx.clone()
    };
    let mut thetas_out: Vec<f64> = (0..n_students)
        .map(|i| {
            let hits = scored_items.iter().filter(|&&j| correct(i, j)).count();
            if hits == scored_items.len() {
                bounds.hi
            } else if hits == 0 {
                bounds.lo
            } else {
                0.0
            }
        })
        .collect();

    if s_idx.is_empty() || i_idx.is_empty() {
        log::warn!("no student has a mixed response pattern; nothing to calibrate");
        let clamped_items = items_out
            .iter()
            .filter(|p| !config.a_bounds.is_interior(p.a) || !config.b_bounds.is_interior(p.b))
            .count();
        return Ok(Calibration {
            abilities: thetas_out
                .into_iter()
                .map(|theta| AbilityEstimate {
                    theta,
                    converged: true,
                })
                .collect(),
            items: items_out,
            diagnostics: Diagnostics {
                sweeps: 0,
                converged: true,
                initial_log_likelihood: 0.0,
                final_log_likelihood: 0.0,
                log_likelihood_trace: Vec::new(),
                clamped_abilities: n_students,
                clamped_items,
                extreme_students: n_students,
                excluded_items: excluded,
            },
        });
    }

    let (n_s, n_i) = (s_idx.len(), i_idx.len());
    let mut by_student = Vec::with_capacity(n_s * n_i);
    for &i in &s_idx {
        by_student.extend(i_idx.iter().map(|&j| matrix.get(i, j).delta()));
    }
    let mut by_item = Vec::with_capacity(n_s * n_i);
    for &j in &i_idx {
        by_item.extend(s_idx.iter().map(|&i| matrix.get(i, j).delta()));
    }

    let theta_bounds = Bounds {
        lo: bounds.lo.min(-WORKING_ABILITY_LIMIT),
        hi: bounds.hi.max(WORKING_ABILITY_LIMIT),
    };
    let thetas: Vec<f64> = (0..n_s)
        .map(|k| {
            let p = by_student[k * n_i..(k + 1) * n_i].iter().sum::<f64>() / n_i as f64;
            bounds.clamp(logit(p))
        })
        .collect();
    let items: Vec<ItemParameters> = (0..n_i)
        .map(|k| {
            let p = by_item[k * n_s..(k + 1) * n_s].iter().sum::<f64>() / n_s as f64;
            ItemParameters {
                a: config.a_bounds.clamp(1.0),
                b: config.b_bounds.clamp(logit(1.0 - p)),
            }
        })
        .collect();

    let mut state = Joint {
        cfg: config,
        by_student,
        by_item,
        n_s,
        n_i,
        thetas,
        items,
        theta_bounds,
    };
    state.identify();
    let initial = state.log_likelihood();
    let mut prev = initial;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let ll = state.sweep(prev);
        trace.push(ll);
        log::debug!("sweep {sweeps}: log-likelihood {ll:.8}");
        if ll - prev < config.tolerance {
            converged = true;
            break;
        }
        prev = ll;
    }
    if !converged {
        log::warn!("calibration stopped after {sweeps} sweeps without converging");
    }

    for (k, &i) in s_idx.iter().enumerate() {
        thetas_out[i] = bounds.clamp(state.thetas[k]);
    }
    for (k, &j) in i_idx.iter().enumerate() {
        items_out[j] = state.items[k];
    }
    // Excluded items diverge; pin their difficulty to the bound they run toward.
    for e in &excluded {
        let p = &mut items_out[e.index];
        p.a = config.a_bounds.clamp(1.0);
        match e.reason {
            ExclusionReason::AllCorrect => p.b = config.b_bounds.lo,
            ExclusionReason::AllIncorrect => p.b = config.b_bounds.hi,
            ExclusionReason::NoInformativeStudents => {}
        }
    }

    let clamped_abilities = thetas_out
        .iter()
        .filter(|&&t| !bounds.is_interior(t))
        .count();
    let clamped_items = items_out
        .iter()
        .filter(|p| !config.a_bounds.is_interior(p.a) || !config.b_bounds.is_interior(p.b))
        .count();
    let final_ll = trace.last().copied().unwrap_or(initial);
    Ok(Calibration {
        abilities: thetas_out
            .into_iter()
            .map(|theta| AbilityEstimate { theta, converged })
            .collect(),
        items: items_out,
        diagnostics: Diagnostics {
            sweeps,
            converged,
            initial_log_likelihood: initial,
            final_log_likelihood: final_ll,
            log_likelihood_trace: trace,
            clamped_abilities,
            clamped_items,
            extreme_students: n_students - n_s,
            excluded_items: excluded,
        },
    })
}

/// Scores students against already-calibrated items with the default bounds.
pub fn estimate_abilities_fixed_items(
    matrix: &ResponseMatrix,
    items: &[ItemParameters],
) -> Result<Vec<AbilityEstimate>> {
    estimate_abilities_fixed_items_with(matrix, items, &CalibrationConfig::default())
}

pub fn estimate_abilities_fixed_items_with(
    matrix: &ResponseMatrix,
    items: &[ItemParameters],
    config: &CalibrationConfig,
) -> Result<Vec<AbilityEstimate>> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::Shape("no item parameters supplied".into()));
    }
    if items.len() != matrix.n_items() {
        return Err(Error::Shape(format!(
            "{} item parameters for {} items",
            items.len(),
            matrix.n_items()
        )));
    }
    let bounds = config.ability_bounds;
    let d = config.scaling_constant;
    let n = items.len();
    let estimates = (0..matrix.n_students())
        .map(|i| {
            let deltas: Vec<f64> = matrix.row(i).iter().map(|r| r.delta()).collect();
            let hits = deltas.iter().sum::<f64>();
            if hits == 0.0 {
                return AbilityEstimate {
                    theta: bounds.lo,
                    converged: true,
                };
            }
            if hits == n as f64 {
                return AbilityEstimate {
                    theta: bounds.hi,
                    converged: true,
                };
            }
            let start = bounds.clamp(logit(hits / n as f64));
            // Extra iterations here: nothing else refines these estimates.
            let (theta, converged) = update_theta(
                &deltas,
                items,
                d,
                start,
                bounds,
                config.newton_steps.max(100),
            );
            AbilityEstimate { theta, converged }
        })
        .collect();
    Ok(estimates)
}

/// Per-student mean over sessions of the ability scored on each session's
/// items alone, aligned with `dataset.records()`. `items` follows the column
/// order of [`Dataset::full_matrix`]; a student with no row in a session
/// counts as absent from it.
pub fn mean_session_abilities(
    dataset: &Dataset,
    items: &[ItemParameters],
    config: &CalibrationConfig,
) -> Result<Vec<f64>> {
    let students = dataset.student_ids();
    let expected: usize = dataset
        .sessions()
        .iter()
        .map(|s| s.responses.n_items())
        .sum();
    if items.len() != expected {
        return Err(Error::Shape(format!(
            "{} item parameters for {expected} session items",
            items.len()
        )));
    }
    let mut sums = vec![0.0; students.len()];
    let mut offset = 0;
    for session in dataset.sessions() {
        let m = ResponseMatrix::concat_sessions(&students, std::slice::from_ref(session))?;
        let width = m.n_items();
        let est = estimate_abilities_fixed_items_with(&m, &items[offset..offset + width], config)?;
        for (sum, e) in sums.iter_mut().zip(est) {
            *sum += e.theta;
        }
        offset += width;
    }
    let t = dataset.sessions().len() as f64;
    Ok(sums.into_iter().map(|s| s / t).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item_id: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRow {
    pub student_id: String,
    pub theta: f64,
    pub converged: bool,
}

/// On-disk form of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub items: Vec<ItemRow>,
    pub students: Vec<StudentRow>,
    pub diagnostics: Diagnostics,
}

impl CalibrationFile {
    pub fn new(matrix: &ResponseMatrix, cal: &Calibration) -> Self {
        Self {
            items: matrix
                .items()
                .iter()
                .zip(&cal.items)
                .map(|(id, p)| ItemRow {
                    item_id: id.to_string(),
                    a: p.a,
                    b: p.b,
                })
                .collect(),
            students: matrix
                .students()
                .iter()
                .zip(&cal.abilities)
                .map(|(id, e)| StudentRow {
                    student_id: id.to_string(),
                    theta: e.theta,
                    converged: e.converged,
                })
                .collect(),
            diagnostics: cal.diagnostics.clone(),
        }
    }

    pub fn item_parameters(&self, item_id: &str) -> Option<ItemParameters> {
        self.items
            .iter()
            .find(|r| r.item_id == item_id)
            .map(|r| ItemParameters { a: r.a, b: r.b })
    }
}
