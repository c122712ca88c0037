//! Joint card-attendance / LCT-outcome codes per (student, session).
//!
//! Each cell carries an LCT-outcome code `x` and a card code `y`, both in
//! `1..=5`, combined as `s = 10x + y`. `11` means present and successful,
//! `55` means absent from both.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CardRecord, Dataset, Response, ScoreGroup, StudentId};

pub const CODE_MIN: u8 = 1;
pub const CODE_MAX: u8 = 5;
pub const S_MIN: u8 = 11;
pub const S_MAX: u8 = 55;

fn check_code(c: u8, axis: &str) -> Result<()> {
    if !(CODE_MIN..=CODE_MAX).contains(&c) {
        return Err(Error::Domain(format!("{axis} code {c} is outside 1..=5")));
    }
    Ok(())
}

pub fn encode_cell(x: u8, y: u8) -> Result<u8> {
    check_code(x, "LCT")?;
    check_code(y, "card")?;
    Ok(10 * x + y)
}

/// Inverse of [`encode_cell`].
pub fn decode_cell(s: u8) -> Result<(u8, u8)> {
    let (x, y) = (s / 10, s % 10);
    check_code(x, "LCT")
        .and(check_code(y, "card"))
        .map_err(|_| Error::Domain(format!("{s} is not a valid attendance code")))?;
    Ok((x, y))
}

/// What a student did on one session's LCT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LctOutcome {
    Success,
    Failed,
    NotTaken,
}

/// Correct answers needed to pass an LCT with `n_items` questions (60 %, rounded up).
pub fn default_pass_mark(n_items: usize) -> usize {
    (3 * n_items).div_ceil(5)
}

/// Classifies one student's row of a session matrix. A row of absences means
/// the test was not taken.
pub fn lct_outcome(row: &[Response], pass_mark: usize) -> LctOutcome {
    if row.iter().all(|&r| r == Response::Absent) {
        LctOutcome::NotTaken
    } else if row.iter().filter(|r| r.is_correct()).count() >= pass_mark {
        LctOutcome::Success
    } else {
        LctOutcome::Failed
    }
}

/// Mapping from raw observations to `(x, y)` codes. The endpoints are fixed:
/// success → 1, not taken → 5, card present → 1, card absent → 5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeMap {
    pub lct_failed: u8,
    /// `x` for a student with no row in the session matrix; `None` rejects.
    pub missing_lct: Option<u8>,
    /// `y` for a missing card record; `None` rejects.
    pub missing_card: Option<u8>,
}

impl Default for CodeMap {
    fn default() -> Self {
        Self {
            lct_failed: 3,
            missing_lct: None,
            missing_card: None,
        }
    }
}

impl CodeMap {
    pub fn validate(&self) -> Result<()> {
        check_code(self.lct_failed, "LCT")?;
        if let Some(c) = self.missing_lct {
            check_code(c, "LCT")?;
        }
        if let Some(c) = self.missing_card {
            check_code(c, "card")?;
        }
        Ok(())
    }

    pub fn x(&self, outcome: Option<LctOutcome>) -> Option<u8> {
        match outcome {
            Some(LctOutcome::Success) => Some(1),
            Some(LctOutcome::Failed) => Some(self.lct_failed),
            Some(LctOutcome::NotTaken) => Some(5),
            None => self.missing_lct,
        }
    }

    pub fn y(&self, card: Option<CardRecord>) -> Option<u8> {
        match card {
            Some(CardRecord::Present) => Some(1),
            Some(CardRecord::Absent) => Some(5),
            None => self.missing_card,
        }
    }
}

/// Student × session code matrix for one score group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatrix {
    pub students: Vec<StudentId>,
    pub cells: Vec<Vec<u8>>,
}

impl GroupMatrix {
    pub fn mean(&self) -> Option<f64> {
        let n: usize = self.cells.iter().map(Vec::len).sum();
        (n > 0).then(|| self.cells.iter().flatten().map(|&s| s as f64).sum::<f64>() / n as f64)
    }
}

/// Encodes every (student, session) cell and splits the rows by score group.
/// Rows are sorted by student id; columns follow session order.
pub fn build_group_matrices(
    dataset: &Dataset,
    codemap: &CodeMap,
    pass_mark: Option<usize>,
) -> Result<BTreeMap<ScoreGroup, GroupMatrix>> {
    codemap.validate()?;
    let mut out: BTreeMap<ScoreGroup, GroupMatrix> = ScoreGroup::ALL
        .iter()
        .map(|&g| {
            (
                g,
                GroupMatrix {
                    students: Vec::new(),
                    cells: Vec::new(),
                },
            )
        })
        .collect();
    let att = dataset.attendance();
    let att_rows: BTreeMap<&StudentId, usize> = att
        .students
        .iter()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    let session_rows: Vec<BTreeMap<&StudentId, usize>> = dataset
        .sessions()
        .iter()
        .map(|s| {
            s.responses
                .students()
                .iter()
                .enumerate()
                .map(|(i, id)| (id, i))
                .collect()
        })
        .collect();

    let mut records: Vec<_> = dataset.records().iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    for rec in records {
        let mut row = Vec::with_capacity(dataset.sessions().len());
        for (k, session) in dataset.sessions().iter().enumerate() {
            let m = &session.responses;
            let mark = pass_mark.unwrap_or_else(|| default_pass_mark(m.n_items()));
            let outcome = session_rows[k]
                .get(&rec.id)
                .map(|&i| lct_outcome(m.row(i), mark));
            let card = att_rows.get(&rec.id).and_then(|&i| att.cells[i][k]);
            let x = codemap.x(outcome).ok_or_else(|| {
                Error::Data(format!(
                    "student `{}` has no LCT row in session `{}` and no missing-LCT code is configured",
                    rec.id, session.id
                ))
            })?;
            let y = codemap.y(card).ok_or_else(|| {
                Error::Data(format!(
                    "student `{}` has no card record for session `{}` and no missing-card code is configured",
                    rec.id, session.id
                ))
            })?;
            row.push(encode_cell(x, y)?);
        }
        let g = out.get_mut(&rec.score_group()).expect("all groups present");
        g.students.push(rec.id.clone());
        g.cells.push(row);
    }
    Ok(out)
}

/// Position of `s` on the green (0) to red (1) ramp.
pub fn ramp_position(s: u8) -> f64 {
    (s.clamp(S_MIN, S_MAX) - S_MIN) as f64 / (S_MAX - S_MIN) as f64
}

/// Hex color for `s`, interpolated linearly from `#00ff00` to `#ff0000`.
pub fn ramp_color(s: u8) -> String {
    let t = ramp_position(s);
    let r = (255.0 * t).round() as u8;
    let g = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}{g:02x}00")
}

pub fn heatmap_file_name(group: ScoreGroup) -> String {
    format!("heatmap_{}.csv", group.name())
}

pub fn heatmap_colors_file_name(group: ScoreGroup) -> String {
    format!("heatmap_{}_colors.csv", group.name())
}

/// Writes one code CSV and one color CSV per group into `dir`.
pub fn export_heatmap(
    matrices: &BTreeMap<ScoreGroup, GroupMatrix>,
    dir: &Path,
    sessions: usize,
) -> Result<Vec<PathBuf>> {
    if matrices.is_empty() {
        return Err(Error::Data("no heatmap matrices to export".into()));
    }
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut header = vec!["student_id".to_string()];
    header.extend((1..=sessions).map(|k| format!("session_{k}")));
    let mut written = Vec::new();
    for (&group, m) in matrices {
        for (name, color) in [
            (heatmap_file_name(group), false),
            (heatmap_colors_file_name(group), true),
        ] {
            let path = dir.join(name);
            let write_err = |e: csv::Error| Error::Write {
                path: path.clone(),
                source: std::io::Error::other(e),
            };
            let file = File::create(&path).map_err(|source| Error::Write {
                path: path.clone(),
                source,
            })?;
            let mut w = csv::Writer::from_writer(file);
            w.write_record(&header).map_err(write_err)?;
            for (id, row) in m.students.iter().zip(&m.cells) {
                if row.len() != sessions {
                    return Err(Error::Shape(format!(
                        "row for `{id}` has {} cells, expected {sessions}",
                        row.len()
                    )));
                }
                let mut rec = vec![id.to_string()];
                rec.extend(
                    row.iter()
                        .map(|&s| if color { ramp_color(s) } else { s.to_string() }),
                );
                w.write_record(&rec).map_err(write_err)?;
            }
            w.flush().map_err(|source| Error::Write {
                path: path.clone(),
                source,
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(encode_cell(1, 1).unwrap(), 11);
        assert_eq!(encode_cell(5, 5).unwrap(), 55);
        assert_eq!(encode_cell(2, 3).unwrap(), 23);
        assert!(encode_cell(0, 1).is_err());
        assert!(encode_cell(1, 6).is_err());
        assert!(decode_cell(60).is_err());
        assert!(decode_cell(10).is_err());
    }

    #[test]
    fn injective_and_invertible() {
        let mut seen = std::collections::HashSet::new();
        for x in 1..=5 {
            for y in 1..=5 {
                let s = encode_cell(x, y).unwrap();
                assert!(seen.insert(s));
                assert_eq!(decode_cell(s).unwrap(), (x, y));
                assert!((S_MIN..=S_MAX).contains(&s));
            }
        }
        assert_eq!(seen.len(), 25);
    }

    #[test]
    fn ramp() {
        assert_eq!(ramp_position(11), 0.0);
        assert_eq!(ramp_position(55), 1.0);
        assert_eq!(ramp_position(33), 0.5);
        assert_eq!(ramp_color(11), "#00ff00");
        assert_eq!(ramp_color(55), "#ff0000");
        assert_eq!(ramp_color(33), "#808000");
    }

    #[test]
    fn outcomes() {
        use Response::*;
        assert_eq!(default_pass_mark(5), 3);
        assert_eq!(lct_outcome(&[Absent; 5], 3), LctOutcome::NotTaken);
        assert_eq!(
            lct_outcome(&[Correct, Correct, Absent, Correct, Incorrect], 3),
            LctOutcome::Success
        );
        assert_eq!(
            lct_outcome(&[Correct, Incorrect, Incorrect, Correct, Incorrect], 3),
            LctOutcome::Failed
        );
    }

    #[test]
    fn code_map_missing_rules() {
        let m = CodeMap::default();
        assert_eq!(m.x(None), None);
        assert_eq!(m.y(None), None);
        let m = CodeMap {
            missing_card: Some(4),
            ..CodeMap::default()
        };
        assert_eq!(m.y(None), Some(4));
        assert!(CodeMap {
            lct_failed: 7,
            ..CodeMap::default()
        }
        .validate()
        .is_err());
    }
}
