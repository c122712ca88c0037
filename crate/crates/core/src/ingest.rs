//! CSV readers and writers for response matrices, student records,
//! attendance logs and the on-disk dataset directory.
//!
//! Dataset directory layout:
//!
//! ```text
//! records.csv       student_id,placement_fund,placement_adv,final_exam,...
//! attendance.csv    student_id,<session>...   cells P / A / empty
//! lct_<session>.csv student_id,<item>...      cells 1 / 0 / A
//! ```
//!
//! Session order is the column order of `attendance.csv`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    AttendanceLog, CardRecord, Dataset, ItemId, Response, ResponseMatrix, Session, StudentId,
    StudentRecord,
};

pub const RECORDS_FILE: &str = "records.csv";
pub const ATTENDANCE_FILE: &str = "attendance.csv";

pub const RECORD_HEADER: [&str; 9] = [
    "student_id",
    "placement_fund",
    "placement_adv",
    "final_exam",
    "lct_success",
    "lct_fail",
    "class_absent",
    "fpc_absent",
    "fpt_not_required",
];

pub fn session_file_name(session: &str) -> String {
    format!("lct_{session}.csv")
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

struct Table {
    header: Vec<String>,
    /// (file line, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table<R: Read>(reader: R, path: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::EmptyInput {
                path: path.to_string(),
            })
        }
        Some(r) => r.map_err(|e| csv_error(path, e))?,
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    if header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput {
            path: path.to_string(),
        });
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput {
            path: path.to_string(),
        });
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Format {
        path: path.to_string(),
        line,
        message: e.to_string(),
    }
}

fn format_err(path: &str, line: usize, row: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        line,
        message: format!("row {row}: {}", message.into()),
    }
}

/// Parses a response matrix. `name` is used in error messages.
pub fn parse_responses<R: Read>(reader: R, name: &str) -> Result<ResponseMatrix> {
    let table = read_table(reader, name)?;
    if table.header.first().map(String::as_str) != Some("student_id") {
        return Err(format_err(
            name,
            1,
            0,
            "header must start with `student_id`",
        ));
    }
    let items = table.header[1..]
        .iter()
        .map(|s| ItemId::new(s.clone()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| format_err(name, 1, 0, e.to_string()))?;
    let width = table.header.len();
    let mut students = Vec::with_capacity(table.rows.len());
    let mut seen = HashSet::new();
    let mut cells = Vec::with_capacity(table.rows.len() * items.len());
    for (k, (line, fields)) in table.rows.iter().enumerate() {
        let row = k + 1;
        if fields.len() != width {
            return Err(format_err(
                name,
                *line,
                row,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let id = StudentId::new(fields[0].clone())
            .map_err(|e| format_err(name, *line, row, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::Duplicate {
                path: name.to_string(),
                line: *line,
                id: id.to_string(),
            });
        }
        for code in &fields[1..] {
            let r = Response::from_code(code).ok_or_else(|| {
                format_err(name, *line, row, format!("unknown response code `{code}`"))
            })?;
            cells.push(r);
        }
        students.push(id);
    }
    ResponseMatrix::new(students, items, cells).map_err(|e| Error::Format {
        path: name.to_string(),
        line: 0,
        message: e.to_string(),
    })
}

/// Reads one session's response CSV.
pub fn ingest_responses(path: &Path) -> Result<ResponseMatrix> {
    parse_responses(open(path)?, &path.display().to_string())
}

pub fn write_responses<W: Write>(m: &ResponseMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["student_id"];
    header.extend(m.items().iter().map(ItemId::as_str));
    w.write_record(&header).map_err(csv_io)?;
    for (i, id) in m.students().iter().enumerate() {
        let mut row = vec![id.as_str()];
        row.extend(m.row(i).iter().map(|r| r.code()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush().map_err(io_anon)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Write {
        path: Default::default(),
        source: io::Error::other(e),
    }
}

fn io_anon(e: io::Error) -> Error {
    Error::Write {
        path: Default::default(),
        source: e,
    }
}

fn parse_opt_score(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("`{s}` is not a number"))
}

fn parse_count(s: &str, field: &str) -> std::result::Result<u32, String> {
    s.parse::<u32>()
        .map_err(|_| format!("{field}: `{s}` is not a non-negative integer"))
}

/// Parses the student-record table. Session-count bounds are checked later by [`Dataset::new`].
pub fn parse_records<R: Read>(reader: R, name: &str) -> Result<Vec<StudentRecord>> {
    let table = read_table(reader, name)?;
    if table.header != RECORD_HEADER {
        return Err(format_err(
            name,
            1,
            0,
            format!("header must be `{}`", RECORD_HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (k, (line, f)) in table.rows.iter().enumerate() {
        let row = k + 1;
        let err = |m: String| format_err(name, *line, row, m);
        if f.len() != RECORD_HEADER.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                RECORD_HEADER.len(),
                f.len()
            )));
        }
        let id = StudentId::new(f[0].clone()).map_err(|e| err(e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::Duplicate {
                path: name.to_string(),
                line: *line,
                id: id.to_string(),
            });
        }
        let final_exam = parse_opt_score(&f[3])
            .map_err(&err)?
            .ok_or_else(|| err("final_exam is required".into()))?;
        let rec = StudentRecord {
            id,
            placement_fundamental: parse_opt_score(&f[1]).map_err(&err)?,
            placement_advanced: parse_opt_score(&f[2]).map_err(&err)?,
            final_exam,
            lct_success_count: parse_count(&f[4], "lct_success").map_err(&err)?,
            lct_failure_count: parse_count(&f[5], "lct_fail").map_err(&err)?,
            class_absence_count: parse_count(&f[6], "class_absent").map_err(&err)?,
            fpc_absence_count: parse_count(&f[7], "fpc_absent").map_err(&err)?,
            fpt_not_required_count: parse_count(&f[8], "fpt_not_required").map_err(&err)?,
        };
        rec.validate(None).map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn ingest_records(path: &Path) -> Result<Vec<StudentRecord>> {
    parse_records(open(path)?, &path.display().to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_records<W: Write>(records: &[StudentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER).map_err(csv_io)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            fmt_opt(r.placement_fundamental),
            fmt_opt(r.placement_advanced),
            r.final_exam.to_string(),
            r.lct_success_count.to_string(),
            r.lct_failure_count.to_string(),
            r.class_absence_count.to_string(),
            r.fpc_absence_count.to_string(),
            r.fpt_not_required_count.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush().map_err(io_anon)?;
    Ok(())
}

pub fn parse_attendance<R: Read>(reader: R, name: &str) -> Result<AttendanceLog> {
    let table = read_table(reader, name)?;
    if table.header.first().map(String::as_str) != Some("student_id") || table.header.len() < 2 {
        return Err(format_err(
            name,
            1,
            0,
            "header must be `student_id,<session>...`",
        ));
    }
    let sessions = table.header[1..].to_vec();
    let mut students = Vec::new();
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for (k, (line, f)) in table.rows.iter().enumerate() {
        let row = k + 1;
        if f.len() != table.header.len() {
            return Err(format_err(
                name,
                *line,
                row,
                format!("expected {} fields, found {}", table.header.len(), f.len()),
            ));
        }
        let id = StudentId::new(f[0].clone())
            .map_err(|e| format_err(name, *line, row, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::Duplicate {
                path: name.to_string(),
                line: *line,
                id: id.to_string(),
            });
        }
        let row_cells = f[1..]
            .iter()
            .map(|c| {
                CardRecord::from_code(c).ok_or_else(|| {
                    format_err(name, *line, row, format!("unknown attendance code `{c}`"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        students.push(id);
        cells.push(row_cells);
    }
    Ok(AttendanceLog {
        sessions,
        students,
        cells,
    })
}

pub fn write_attendance<W: Write>(log: &AttendanceLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["student_id".to_string()];
    header.extend(log.sessions.iter().cloned());
    w.write_record(&header).map_err(csv_io)?;
    for (id, row) in log.students.iter().zip(&log.cells) {
        let mut rec = vec![id.as_str()];
        rec.extend(row.iter().map(|&c| CardRecord::code(c)));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush().map_err(io_anon)?;
    Ok(())
}

/// Loads a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let att_path = dir.join(ATTENDANCE_FILE);
    let attendance = parse_attendance(open(&att_path)?, &att_path.display().to_string())?;
    let records = ingest_records(&dir.join(RECORDS_FILE))?;
    let sessions = attendance
        .sessions
        .iter()
        .map(|id| {
            Ok(Session {
                id: id.clone(),
                responses: ingest_responses(&dir.join(session_file_name(id)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sessions, records, attendance)
}

/// Writes a dataset directory, creating it if needed.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    write_records(ds.records(), create(&dir.join(RECORDS_FILE))?)?;
    write_attendance(ds.attendance(), create(&dir.join(ATTENDANCE_FILE))?)?;
    for s in ds.sessions() {
        write_responses(&s.responses, create(&dir.join(session_file_name(&s.id)))?)?;
    }
    Ok(())
}
