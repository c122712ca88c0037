//! Frequency tables behind the cohort reports: ability histograms by
//! pass/fail, ability × placement scatter, LCT-success × FPC-absence joint
//! counts, and success-count frequencies per grade band with risk flags.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sub_band_of, Outcome, ScoreGroup, StudentRecord, SubBand};

fn csv_write_err(e: csv::Error) -> Error {
    Error::Write {
        path: Default::default(),
        source: std::io::Error::other(e),
    }
}

fn flush<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|source| Error::Write {
        path: Default::default(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub width: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            width: 0.25,
            lo: -3.5,
            hi: 3.5,
        }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!("invalid bin spec {self:?}")));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (((self.hi - self.lo) / self.width) - 1e-9).ceil().max(1.0) as usize
    }

    /// Bin of `v`; values outside the range land in the edge bins.
    pub fn index(&self, v: f64) -> usize {
        let k = ((v - self.lo) / self.width).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.n_bins() - 1)
        }
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let lo = self.lo + k as f64 * self.width;
        (lo, (lo + self.width).min(self.hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityHistogram {
    pub bins: BinSpec,
    pub pass: Vec<usize>,
    pub fail: Vec<usize>,
    pub pass_mean: Option<f64>,
    pub fail_mean: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Overlaid pass/fail ability histograms; group means include clamped values.
pub fn ability_histograms(
    abilities: &[f64],
    records: &[StudentRecord],
    bins: BinSpec,
) -> Result<AbilityHistogram> {
    bins.validate()?;
    if abilities.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} abilities for {} records",
            abilities.len(),
            records.len()
        )));
    }
    let n = bins.n_bins();
    let mut h = AbilityHistogram {
        bins,
        pass: vec![0; n],
        fail: vec![0; n],
        pass_mean: None,
        fail_mean: None,
    };
    let (mut pass_vals, mut fail_vals) = (Vec::new(), Vec::new());
    for (&theta, r) in abilities.iter().zip(records) {
        let k = bins.index(theta);
        match r.outcome() {
            Outcome::Pass => {
                h.pass[k] += 1;
                pass_vals.push(theta);
            }
            Outcome::Fail => {
                h.fail[k] += 1;
                fail_vals.push(theta);
            }
        }
    }
    h.pass_mean = mean(&pass_vals);
    h.fail_mean = mean(&fail_vals);
    Ok(h)
}

impl AbilityHistogram {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "pass", "fail"])
            .map_err(csv_write_err)?;
        for k in 0..self.pass.len() {
            let (lo, hi) = self.bins.edges(k);
            w.write_record([
                lo.to_string(),
                hi.to_string(),
                self.pass[k].to_string(),
                self.fail[k].to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        flush(&mut w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub student_id: String,
    pub theta: f64,
    pub placement_fundamental: f64,
    pub group: ScoreGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterTable {
    pub rows: Vec<ScatterRow>,
    /// Students left out for lack of a placement score.
    pub dropped: usize,
}

pub fn ability_placement_scatter(
    abilities: &[f64],
    records: &[StudentRecord],
) -> Result<ScatterTable> {
    if abilities.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} abilities for {} records",
            abilities.len(),
            records.len()
        )));
    }
    let mut table = ScatterTable {
        rows: Vec::new(),
        dropped: 0,
    };
    for (&theta, r) in abilities.iter().zip(records) {
        match r.placement_fundamental {
            Some(p) => table.rows.push(ScatterRow {
                student_id: r.id.to_string(),
                theta,
                placement_fundamental: p,
                group: r.score_group(),
            }),
            None => table.dropped += 1,
        }
    }
    Ok(table)
}

impl ScatterTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["student_id", "theta", "placement_fund", "group"])
            .map_err(csv_write_err)?;
        for r in &self.rows {
            w.write_record([
                r.student_id.clone(),
                r.theta.to_string(),
                r.placement_fundamental.to_string(),
                r.group.name().to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        flush(&mut w)
    }
}

/// Counts indexed `[successes][fpc_absences]`, each axis `0..=T`, per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFrequencyTable {
    pub sessions: u32,
    pub counts: BTreeMap<ScoreGroup, Vec<Vec<usize>>>,
}

pub fn lct_fpc_joint(records: &[StudentRecord], sessions: u32) -> Result<JointFrequencyTable> {
    let side = sessions as usize + 1;
    let mut counts: BTreeMap<ScoreGroup, Vec<Vec<usize>>> = ScoreGroup::ALL
        .iter()
        .map(|&g| (g, vec![vec![0; side]; side]))
        .collect();
    for r in records {
        if r.lct_success_count > sessions || r.fpc_absence_count > sessions {
            return Err(Error::Data(format!(
                "student `{}`: LCT successes {} / FPC absences {} exceed {sessions} sessions",
                r.id, r.lct_success_count, r.fpc_absence_count
            )));
        }
        let grid = counts
            .get_mut(&r.score_group())
            .expect("all groups present");
        grid[r.lct_success_count as usize][r.fpc_absence_count as usize] += 1;
    }
    Ok(JointFrequencyTable { sessions, counts })
}

impl JointFrequencyTable {
    pub fn group_total(&self, g: ScoreGroup) -> usize {
        self.counts[&g].iter().flatten().sum()
    }

    /// Success-count histogram of a group (sum over FPC absences).
    pub fn success_marginal(&self, g: ScoreGroup) -> Vec<usize> {
        self.counts[&g].iter().map(|row| row.iter().sum()).collect()
    }

    /// Long form, one line per cell: `group,lct_success,fpc_absent,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "lct_success", "fpc_absent", "count"])
            .map_err(csv_write_err)?;
        for (g, grid) in &self.counts {
            for (succ, row) in grid.iter().enumerate() {
                for (abs, &c) in row.iter().enumerate() {
                    w.write_record([
                        g.name().to_string(),
                        succ.to_string(),
                        abs.to_string(),
                        c.to_string(),
                    ])
                    .map_err(csv_write_err)?;
                }
            }
        }
        flush(&mut w)
    }
}

/// Grade bands of the success-count report, best first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReportBand {
    #[serde(rename = "A+")]
    APlus,
    A,
    B,
    C,
    #[serde(rename = "fail_40_59")]
    Fail40To59,
    #[serde(rename = "fail_0_39")]
    Fail0To39,
}

impl ReportBand {
    pub const ALL: [ReportBand; 6] = [
        ReportBand::APlus,
        ReportBand::A,
        ReportBand::B,
        ReportBand::C,
        ReportBand::Fail40To59,
        ReportBand::Fail0To39,
    ];

    pub fn of_score(score: f64) -> Result<Self> {
        Ok(match sub_band_of(score)? {
            Some(SubBand::APlus) => ReportBand::APlus,
            Some(SubBand::A) => ReportBand::A,
            Some(SubBand::B) => ReportBand::B,
            Some(SubBand::C) => ReportBand::C,
            None if ScoreGroup::of_score(score) == ScoreGroup::Fail40To59 => ReportBand::Fail40To59,
            None => ReportBand::Fail0To39,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ReportBand::APlus => "A+",
            ReportBand::A => "A",
            ReportBand::B => "B",
            ReportBand::C => "C",
            ReportBand::Fail40To59 => "fail_40_59",
            ReportBand::Fail0To39 => "fail_0_39",
        }
    }
}

/// Thresholds for the LCT-count risk flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskRules {
    /// Risk flag when failures exceed this.
    pub risk_fail_gt: u32,
    /// Strong flag when successes reach this.
    pub strong_succ_ge: u32,
}

impl RiskRules {
    /// Defaults for `sessions` tests: risk above ⌈T/2⌉ failures, strong from
    /// ⌈10T/13⌉ successes (7 and 10 for a 13-session course).
    pub fn for_sessions(sessions: u32) -> Self {
        Self {
            risk_fail_gt: sessions.div_ceil(2),
            strong_succ_ge: (10 * sessions).div_ceil(13),
        }
    }

    pub fn risk(&self, failures: u32) -> bool {
        failures > self.risk_fail_gt
    }

    pub fn strong(&self, successes: u32) -> bool {
        successes >= self.strong_succ_ge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentFlags {
    pub student_id: String,
    pub band: ReportBand,
    pub successes: u32,
    pub failures: u32,
    pub risk: bool,
    pub strong: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCountReport {
    pub sessions: u32,
    pub rules: RiskRules,
    /// Per band, student counts indexed by number of LCT successes `0..=T`.
    pub frequencies: BTreeMap<ReportBand, Vec<usize>>,
    pub flags: Vec<StudentFlags>,
}

pub fn success_count_report(
    records: &[StudentRecord],
    sessions: u32,
    rules: RiskRules,
) -> Result<SuccessCountReport> {
    if sessions == 0 {
        return Err(Error::Config("session count must be at least 1".into()));
    }
    let mut frequencies: BTreeMap<ReportBand, Vec<usize>> = ReportBand::ALL
        .iter()
        .map(|&b| (b, vec![0; sessions as usize + 1]))
        .collect();
    let mut flags = Vec::with_capacity(records.len());
    for r in records {
        let (s, f) = (r.lct_success_count, r.lct_failure_count);
        if s + f > sessions {
            return Err(Error::Data(format!(
                "student `{}`: {s} successes + {f} failures exceed {sessions} sessions",
                r.id
            )));
        }
        let band = ReportBand::of_score(r.final_exam)?;
        frequencies.get_mut(&band).expect("all bands present")[s as usize] += 1;
        flags.push(StudentFlags {
            student_id: r.id.to_string(),
            band,
            successes: s,
            failures: f,
            risk: rules.risk(f),
            strong: rules.strong(s),
        });
    }
    Ok(SuccessCountReport {
        sessions,
        rules,
        frequencies,
        flags,
    })
}

impl SuccessCountReport {
    /// `band,successes,count` for every band and count.
    pub fn write_frequencies_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["band", "successes", "count"])
            .map_err(csv_write_err)?;
        for (band, freq) in &self.frequencies {
            for (s, &c) in freq.iter().enumerate() {
                w.write_record([band.name().to_string(), s.to_string(), c.to_string()])
                    .map_err(csv_write_err)?;
            }
        }
        flush(&mut w)
    }

    pub fn write_flags_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "student_id",
            "band",
            "lct_success",
            "lct_fail",
            "risk",
            "strong",
        ])
        .map_err(csv_write_err)?;
        for f in &self.flags {
            w.write_record([
                f.student_id.clone(),
                f.band.name().to_string(),
                f.successes.to_string(),
                f.failures.to_string(),
                u8::from(f.risk).to_string(),
                u8::from(f.strong).to_string(),
            ])
            .map_err(csv_write_err)?;
        }
        flush(&mut w)
    }
}

/// Sidecar metadata written next to the report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub sessions: u32,
    pub group_sizes: BTreeMap<ScoreGroup, usize>,
    pub band_sizes: BTreeMap<ReportBand, usize>,
    pub rules: RiskRules,
    pub bins: BinSpec,
    pub pass_mean_ability: Option<f64>,
    pub fail_mean_ability: Option<f64>,
    pub scatter_dropped: usize,
}
