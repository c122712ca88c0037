//! Domain types shared by every analysis stage: identifiers, dichotomous
//! response matrices, per-student records, score groups and the dataset
//! container.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest final-exam score that counts as a pass.
pub const PASS_MARK: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StudentId(String);

impl StudentId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Domain("student id must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Domain("item id must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One student's answer to one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Response {
    Correct,
    Incorrect,
    Absent,
}

impl Response {
    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "1" => Some(Response::Correct),
            "0" => Some(Response::Incorrect),
            "A" => Some(Response::Absent),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Response::Correct => "1",
            Response::Incorrect => "0",
            Response::Absent => "A",
        }
    }

    /// Success indicator used by the likelihood. Absences score as failures.
    #[inline]
    pub fn delta(self) -> f64 {
        match self {
            Response::Correct => 1.0,
            Response::Incorrect | Response::Absent => 0.0,
        }
    }

    #[inline]
    pub fn is_correct(self) -> bool {
        self == Response::Correct
    }
}

/// Rectangular student × item table of responses, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    students: Vec<StudentId>,
    items: Vec<ItemId>,
    cells: Vec<Response>,
}

impl ResponseMatrix {
    pub fn new(students: Vec<StudentId>, items: Vec<ItemId>, cells: Vec<Response>) -> Result<Self> {
        if students.len() < 2 {
            return Err(Error::Shape(format!(
                "a response matrix needs at least 2 students, got {}",
                students.len()
            )));
        }
        if items.len() < 2 {
            return Err(Error::Shape(format!(
                "a response matrix needs at least 2 items, got {}",
                items.len()
            )));
        }
        if cells.len() != students.len() * items.len() {
            return Err(Error::Shape(format!(
                "{} cells for {} students x {} items",
                cells.len(),
                students.len(),
                items.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = students.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::Data(format!("duplicate student id `{dup}`")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::Data(format!("duplicate item id `{dup}`")));
        }
        Ok(Self {
            students,
            items,
            cells,
        })
    }

    /// Builds a matrix from per-student rows.
    pub fn from_rows(
        students: Vec<StudentId>,
        items: Vec<ItemId>,
        rows: Vec<Vec<Response>>,
    ) -> Result<Self> {
        if let Some((i, row)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != items.len())
        {
            return Err(Error::Shape(format!(
                "row {} has {} cells, expected {}",
                i + 1,
                row.len(),
                items.len()
            )));
        }
        Self::new(students, items, rows.into_iter().flatten().collect())
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn students(&self) -> &[StudentId] {
        &self.students
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    #[inline]
    pub fn get(&self, student: usize, item: usize) -> Response {
        self.cells[student * self.items.len() + item]
    }

    pub fn row(&self, student: usize) -> &[Response] {
        let n = self.items.len();
        &self.cells[student * n..(student + 1) * n]
    }

    pub fn column(&self, item: usize) -> impl Iterator<Item = Response> + '_ {
        self.cells
            .iter()
            .skip(item)
            .step_by(self.items.len())
            .copied()
    }

    pub fn student_index(&self, id: &StudentId) -> Option<usize> {
        self.students.iter().position(|s| s == id)
    }

    /// Reorders rows and columns: `student_order[k]` is the source row of new row `k`.
    pub fn permuted(&self, student_order: &[usize], item_order: &[usize]) -> Result<Self> {
        if !is_permutation(student_order, self.n_students())
            || !is_permutation(item_order, self.n_items())
        {
            return Err(Error::Shape("permutation indices are invalid".into()));
        }
        let mut cells = Vec::with_capacity(self.cells.len());
        for &i in student_order {
            for &j in item_order {
                cells.push(self.get(i, j));
            }
        }
        Ok(Self {
            students: student_order
                .iter()
                .map(|&i| self.students[i].clone())
                .collect(),
            items: item_order.iter().map(|&j| self.items[j].clone()).collect(),
            cells,
        })
    }

    /// Joins per-session matrices side by side over `students`. Item ids are
    /// prefixed with the session id; a student missing from a session is
    /// recorded as absent for every item of that session.
    pub fn concat_sessions(students: &[StudentId], sessions: &[Session]) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::Shape("no sessions to join".into()));
        }
        let mut items = Vec::new();
        for s in sessions {
            for item in s.responses.items() {
                items.push(ItemId::new(format!("{}:{}", s.id, item))?);
            }
        }
        let lookups: Vec<HashMap<&StudentId, usize>> = sessions
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
        let mut cells = Vec::with_capacity(students.len() * items.len());
        for id in students {
            for (s, lookup) in sessions.iter().zip(&lookups) {
                match lookup.get(id) {
                    Some(&row) => cells.extend_from_slice(s.responses.row(row)),
                    None => {
                        cells.extend(std::iter::repeat_n(Response::Absent, s.responses.n_items()))
                    }
                }
            }
        }
        Self::new(students.to_vec(), items, cells)
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    order
        .iter()
        .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Per-student facts that feed the regression and the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub id: StudentId,
    pub placement_fundamental: Option<f64>,
    pub placement_advanced: Option<f64>,
    pub final_exam: f64,
    pub lct_success_count: u32,
    pub lct_failure_count: u32,
    pub class_absence_count: u32,
    /// Follow-up class absences.
    pub fpc_absence_count: u32,
    pub fpt_not_required_count: u32,
}

impl StudentRecord {
    /// Checks score ranges and, when the session count is known, the count bounds.
    pub fn validate(&self, sessions: Option<u32>) -> Result<()> {
        check_score(self.final_exam, "final_exam", &self.id)?;
        if let Some(p) = self.placement_fundamental {
            check_score(p, "placement_fund", &self.id)?;
        }
        if let Some(p) = self.placement_advanced {
            check_score(p, "placement_adv", &self.id)?;
        }
        if let Some(t) = sessions {
            let taken = self.lct_success_count + self.lct_failure_count;
            if taken > t {
                return Err(Error::Data(format!(
                    "student `{}`: {} LCT successes + {} failures exceed {} sessions",
                    self.id, self.lct_success_count, self.lct_failure_count, t
                )));
            }
            for (name, v) in [
                ("class_absent", self.class_absence_count),
                ("fpc_absent", self.fpc_absence_count),
                ("fpt_not_required", self.fpt_not_required_count),
            ] {
                if v > t {
                    return Err(Error::Data(format!(
                        "student `{}`: {name} = {v} exceeds {t} sessions",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn outcome(&self) -> Outcome {
        Outcome::of_score(self.final_exam)
    }

    pub fn score_group(&self) -> ScoreGroup {
        ScoreGroup::of_score(self.final_exam)
    }
}

fn check_score(v: f64, field: &str, id: &StudentId) -> Result<()> {
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::Data(format!(
            "student `{id}`: {field} = {v} is outside [0, 100]"
        )));
    }
    Ok(())
}

/// Pass/fail in the final examination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn of_score(score: f64) -> Self {
        if score.floor() >= PASS_MARK {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

/// Final-exam score band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreGroup {
    #[serde(rename = "fail_0_39")]
    Fail0To39,
    #[serde(rename = "fail_40_59")]
    Fail40To59,
    #[serde(rename = "pass_60_100")]
    Pass60To100,
}

impl ScoreGroup {
    pub const ALL: [ScoreGroup; 3] = [
        ScoreGroup::Fail0To39,
        ScoreGroup::Fail40To59,
        ScoreGroup::Pass60To100,
    ];

    /// Fractional scores are floored before banding.
    pub fn of_score(score: f64) -> Self {
        let s = score.floor();
        if s < 40.0 {
            ScoreGroup::Fail0To39
        } else if s < PASS_MARK {
            ScoreGroup::Fail40To59
        } else {
            ScoreGroup::Pass60To100
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreGroup::Fail0To39 => "fail_0_39",
            ScoreGroup::Fail40To59 => "fail_40_59",
            ScoreGroup::Pass60To100 => "pass_60_100",
        }
    }
}

impl fmt::Display for ScoreGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grade within the passing band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubBand {
    C,
    B,
    A,
    APlus,
}

impl SubBand {
    pub fn name(self) -> &'static str {
        match self {
            SubBand::C => "C",
            SubBand::B => "B",
            SubBand::A => "A",
            SubBand::APlus => "A+",
        }
    }
}

/// Grade sub-band of a passing score; `None` below the pass mark.
pub fn sub_band_of(score: f64) -> Result<Option<SubBand>> {
    if !(0.0..=100.0).contains(&score) {
        return Err(Error::Domain(format!("score {score} is outside [0, 100]")));
    }
    let s = score.floor();
    Ok(if s >= 90.0 {
        Some(SubBand::APlus)
    } else if s >= 80.0 {
        Some(SubBand::A)
    } else if s >= 70.0 {
        Some(SubBand::B)
    } else if s >= PASS_MARK {
        Some(SubBand::C)
    } else {
        None
    })
}

/// Splits records into the three score groups, keeping input order within each.
pub fn partition_by_score_group(
    records: &[StudentRecord],
) -> BTreeMap<ScoreGroup, Vec<&StudentRecord>> {
    let mut groups: BTreeMap<ScoreGroup, Vec<&StudentRecord>> =
        ScoreGroup::ALL.iter().map(|&g| (g, Vec::new())).collect();
    for r in records {
        groups.entry(r.score_group()).or_default().push(r);
    }
    groups
}

/// Card-reader attendance for one class meeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CardRecord {
    Present,
    Absent,
}

impl CardRecord {
    pub fn from_code(code: &str) -> Option<Option<Self>> {
        match code {
            "P" => Some(Some(CardRecord::Present)),
            "A" => Some(Some(CardRecord::Absent)),
            "" => Some(None),
            _ => None,
        }
    }

    pub fn code(cell: Option<Self>) -> &'static str {
        match cell {
            Some(CardRecord::Present) => "P",
            Some(CardRecord::Absent) => "A",
            None => "",
        }
    }
}

/// Student × session card-attendance table. `None` marks a missing observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendanceLog {
    pub sessions: Vec<String>,
    pub students: Vec<StudentId>,
    pub cells: Vec<Vec<Option<CardRecord>>>,
}

impl AttendanceLog {
    pub fn get(&self, student: &StudentId, session: usize) -> Option<CardRecord> {
        let i = self.students.iter().position(|s| s == student)?;
        self.cells[i].get(session).copied().flatten()
    }
}

/// One learning-check session and its response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub responses: ResponseMatrix,
}

/// Everything an analysis run consumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    sessions: Vec<Session>,
    records: Vec<StudentRecord>,
    attendance: AttendanceLog,
}

impl Dataset {
    pub fn new(
        sessions: Vec<Session>,
        records: Vec<StudentRecord>,
        attendance: AttendanceLog,
    ) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::Data("dataset has no LCT sessions".into()));
        }
        let t = sessions.len() as u32;
        let ids: HashSet<&StudentId> = records.iter().map(|r| &r.id).collect();
        if ids.len() != records.len() {
            return Err(Error::Data("duplicate student id in records".into()));
        }
        for r in &records {
            r.validate(Some(t))?;
        }
        for s in &sessions {
            if let Some(missing) = s.responses.students().iter().find(|id| !ids.contains(id)) {
                return Err(Error::Data(format!(
                    "session `{}`: student `{missing}` has no record",
                    s.id
                )));
            }
        }
        let session_ids: Vec<&str> = sessions.iter().map(|s| s.id.as_str()).collect();
        if attendance
            .sessions
            .iter()
            .map(String::as_str)
            .ne(session_ids.iter().copied())
        {
            return Err(Error::Data(
                "attendance sessions do not match the LCT sessions".into(),
            ));
        }
        if attendance.cells.len() != attendance.students.len()
            || attendance.cells.iter().any(|r| r.len() != sessions.len())
        {
            return Err(Error::Shape("attendance table is not rectangular".into()));
        }
        Ok(Self {
            sessions,
            records,
            attendance,
        })
    }

    /// Number of LCT sessions.
    pub fn session_count(&self) -> u32 {
        self.sessions.len() as u32
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn records(&self) -> &[StudentRecord] {
        &self.records
    }

    pub fn attendance(&self) -> &AttendanceLog {
        &self.attendance
    }

    pub fn student_ids(&self) -> Vec<StudentId> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// All sessions joined into one student × item matrix in record order.
    pub fn full_matrix(&self) -> Result<ResponseMatrix> {
        ResponseMatrix::concat_sessions(&self.student_ids(), &self.sessions)
    }
}
