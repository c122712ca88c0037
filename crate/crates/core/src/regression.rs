//! Multiple linear regression of the final-exam score on per-student factors,
//! with classical OLS inference.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{StudentId, StudentRecord};

pub const INTERCEPT: &str = "(Intercept)";

/// Candidate explanatory factors, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    #[serde(rename = "lct_ability")]
    LctAbility,
    #[serde(rename = "placement_fund")]
    PlacementFundamental,
    #[serde(rename = "placement_adv")]
    PlacementAdvanced,
    #[serde(rename = "class_absent")]
    ClassAbsence,
    #[serde(rename = "fpc_absent")]
    FpcAbsence,
    #[serde(rename = "fpt_not_required")]
    FptNotRequired,
    #[serde(rename = "lct_success")]
    LctSuccess,
}

impl Factor {
    pub const ALL: [Factor; 7] = [
        Factor::LctAbility,
        Factor::PlacementFundamental,
        Factor::PlacementAdvanced,
        Factor::ClassAbsence,
        Factor::FpcAbsence,
        Factor::FptNotRequired,
        Factor::LctSuccess,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::LctAbility => "lct_ability",
            Factor::PlacementFundamental => "placement_fund",
            Factor::PlacementAdvanced => "placement_adv",
            Factor::ClassAbsence => "class_absent",
            Factor::FpcAbsence => "fpc_absent",
            Factor::FptNotRequired => "fpt_not_required",
            Factor::LctSuccess => "lct_success",
        }
    }

    fn value(self, r: &StudentRecord, ability: Option<f64>) -> Option<f64> {
        match self {
            Factor::LctAbility => ability,
            Factor::PlacementFundamental => r.placement_fundamental,
            Factor::PlacementAdvanced => r.placement_advanced,
            Factor::ClassAbsence => Some(r.class_absence_count as f64),
            Factor::FpcAbsence => Some(r.fpc_absence_count as f64),
            Factor::FptNotRequired => Some(r.fpt_not_required_count as f64),
            Factor::LctSuccess => Some(r.lct_success_count as f64),
        }
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Factor::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| {
                let known: Vec<_> = Factor::ALL.iter().map(|f| f.name()).collect();
                Error::Config(format!(
                    "unknown factor `{s}` (known: {})",
                    known.join(", ")
                ))
            })
    }
}

/// Parses a comma-separated factor list.
pub fn parse_factors(list: &str) -> Result<Vec<Factor>> {
    let factors = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Factor>>>()?;
    if factors.is_empty() {
        return Err(Error::Config("factor list is empty".into()));
    }
    Ok(factors)
}

/// Regressor matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::Shape(format!(
                "{} column names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        Ok(Self { names, data })
    }

    /// Intercept column followed by the given named columns.
    pub fn with_intercept(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map_or(0, |(_, c)| c.len());
        if let Some((name, _)) = columns.iter().find(|(_, c)| c.len() != n) {
            return Err(Error::Shape(format!(
                "column `{name}` has the wrong length"
            )));
        }
        let mut names = vec![INTERCEPT.to_string()];
        let mut data = DMatrix::from_element(n, columns.len() + 1, 1.0);
        for (k, (name, col)) in columns.into_iter().enumerate() {
            names.push(name);
            data.column_mut(k + 1).copy_from_slice(&col);
        }
        Self::new(names, data)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DesignMatrix,
    /// Final-exam scores.
    pub y: Vec<f64>,
    pub students: Vec<StudentId>,
    /// Records left out because a requested factor was missing.
    pub dropped: usize,
}

/// Builds `X` (intercept first, then `factors` in the given order) and `y`.
/// `abilities` is aligned with `records`.
pub fn build_design(
    records: &[StudentRecord],
    abilities: &[Option<f64>],
    factors: &[Factor],
) -> Result<Design> {
    if abilities.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} abilities for {} records",
            abilities.len(),
            records.len()
        )));
    }
    if factors.is_empty() {
        return Err(Error::Config("no factors requested".into()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); factors.len()];
    let mut y = Vec::new();
    let mut students = Vec::new();
    let mut dropped = 0;
    for (r, &ability) in records.iter().zip(abilities) {
        let row: Option<Vec<f64>> = factors.iter().map(|f| f.value(r, ability)).collect();
        match row {
            Some(row) => {
                for (col, v) in columns.iter_mut().zip(row) {
                    col.push(v);
                }
                y.push(r.final_exam);
                students.push(r.id.clone());
            }
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} records with missing factor values");
    }
    if y.is_empty() {
        return Err(Error::EmptyDesign(format!(
            "all {} records have a missing factor",
            records.len()
        )));
    }
    let x = DesignMatrix::with_intercept(
        factors
            .iter()
            .map(|f| f.name().to_string())
            .zip(columns)
            .collect(),
    )?;
    Ok(Design {
        x,
        y,
        students,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub significance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub residual_std_error: f64,
    pub r_squared: f64,
    pub degrees_of_freedom: usize,
    pub n_obs: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// Conventional star code for a p-value.
pub fn significance_code(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// Two-sided p-value of a t statistic.
pub fn two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Relative size below which a diagonal entry of R marks a dependent column.
const RANK_TOL: f64 = 1e-10;

/// Least squares via Householder QR.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} rows", y.len())));
    }
    if p == 0 {
        return Err(Error::EmptyDesign("no columns".into()));
    }
    if n <= p {
        return Err(Error::Underdetermined { rows: n, cols: p });
    }
    let qr = x.data.clone().qr();
    let r = qr.r();
    for k in 0..p {
        let norm = x.data.column(k).norm();
        if r[(k, k)].abs() <= RANK_TOL * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::Collinear {
                column: x.names[k].clone(),
            });
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Collinear {
            column: x.names[p - 1].clone(),
        })?;
    let residuals: Vec<f64> = (&yv - &x.data * &beta).iter().copied().collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let dof = n - p;
    let s2 = rss / dof as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("R has a non-zero diagonal");

    let coefficients = (0..p)
        .map(|k| {
            let var = r_inv.row(k).iter().map(|v| v * v).sum::<f64>() * s2;
            let se = var.sqrt();
            let est = beta[k];
            let t = if se > 0.0 {
                est / se
            } else if est == 0.0 {
                0.0
            } else {
                est.signum() * f64::INFINITY
            };
            let pv = two_sided_p(t, dof as f64);
            Coefficient {
                name: x.names[k].clone(),
                estimate: est,
                std_error: se,
                t_value: t,
                p_value: pv,
                significance: significance_code(pv).to_string(),
            }
        })
        .collect();

    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if tss > 0.0 {
        1.0 - rss / tss
    } else if rss == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(RegressionResult {
        coefficients,
        residual_std_error: s2.sqrt(),
        r_squared,
        degrees_of_freedom: dof,
        n_obs: n,
        residuals,
    })
}

/// Non-intercept coefficients by ascending p-value; ties keep column order.
pub fn rank_factors(result: &RegressionResult) -> Vec<&Coefficient> {
    let mut ranked: Vec<&Coefficient> = result
        .coefficients
        .iter()
        .filter(|c| c.name != INTERCEPT)
        .collect();
    ranked.sort_by(|a, b| a.p_value.total_cmp(&b.p_value));
    ranked
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Fixed-width coefficient table.
    pub fn to_text(&self) -> String {
        let width = self
            .coefficients
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(12);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} {:>14} {:>14} {:>10} {:>12}",
            "Coefficients:", "Estimate", "Std. Error", "t value", "Pr(>|t|)"
        );
        for c in &self.coefficients {
            let _ = writeln!(
                s,
                "{:<width$} {:>14.6} {:>14.6} {:>10.3} {:>12.4e} {}",
                c.name, c.estimate, c.std_error, c.t_value, c.p_value, c.significance
            );
        }
        let _ = writeln!(s, "---");
        let _ = writeln!(
            s,
            "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
        );
        let _ = writeln!(
            s,
            "Residual standard error: {:.4} on {} degrees of freedom",
            self.residual_std_error, self.degrees_of_freedom
        );
        let _ = writeln!(
            s,
            "Multiple R-squared: {:.6}  (n = {})",
            self.r_squared, self.n_obs
        );
        s
    }
}
