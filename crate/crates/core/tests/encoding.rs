use lcta_core::encoding::{
    build_group_matrices, decode_cell, encode_cell, export_heatmap, heatmap_colors_file_name,
    heatmap_file_name, ramp_color, CodeMap,
};
use lcta_core::model::{
    AttendanceLog, CardRecord, Dataset, ItemId, Response, ResponseMatrix, ScoreGroup, Session,
    StudentId, StudentRecord,
};
use lcta_core::sim::{simulate, SimConfig};
use lcta_core::Error;
use Response::{Absent as A, Correct as C, Incorrect as I};

fn id(s: &str) -> StudentId {
    StudentId::new(s).unwrap()
}

fn rec(s: &str, score: f64, succ: u32, fail: u32) -> StudentRecord {
    StudentRecord {
        id: id(s),
        placement_fundamental: None,
        placement_advanced: None,
        final_exam: score,
        lct_success_count: succ,
        lct_failure_count: fail,
        class_absence_count: 0,
        fpc_absence_count: 0,
        fpt_not_required_count: 0,
    }
}

fn session(k: usize, students: &[&str], cells: Vec<Response>) -> Session {
    Session {
        id: format!("l{k:02}"),
        responses: ResponseMatrix::new(
            students.iter().map(|s| id(s)).collect(),
            vec![ItemId::new("q1").unwrap(), ItemId::new("q2").unwrap()],
            cells,
        )
        .unwrap(),
    }
}

/// "weak" fails and skips; "good" always succeeds; "late" has no row in the
/// last session and no card record for it.
fn small_dataset() -> Dataset {
    use CardRecord::{Absent as Out, Present as In};
    let sessions = vec![
        session(1, &["weak", "good", "late"], vec![I, I, C, C, C, C]),
        session(2, &["weak", "good", "late"], vec![A, A, C, C, C, I]),
        session(3, &["weak", "good"], vec![C, I, C, C]),
    ];
    let attendance = AttendanceLog {
        sessions: vec!["l01".into(), "l02".into(), "l03".into()],
        students: vec![id("weak"), id("good"), id("late")],
        cells: vec![
            vec![Some(In), Some(Out), Some(In)],
            vec![Some(In), Some(In), Some(In)],
            vec![Some(In), Some(In), None],
        ],
    };
    let records = vec![
        rec("weak", 25.0, 0, 2),
        rec("good", 90.0, 3, 0),
        rec("late", 65.0, 1, 1),
    ];
    Dataset::new(sessions, records, attendance).unwrap()
}

#[test]
fn all_twenty_five_cells_round_trip() {
    let mut seen = std::collections::BTreeSet::new();
    for x in 1..=5 {
        for y in 1..=5 {
            let s = encode_cell(x, y).unwrap();
            assert!((11..=55).contains(&s));
            assert_eq!(decode_cell(s).unwrap(), (x, y));
            seen.insert(s);
        }
    }
    assert_eq!(seen.len(), 25);
    assert!(encode_cell(0, 1).is_err() && encode_cell(1, 6).is_err());
    assert!(decode_cell(10).is_err() && decode_cell(56).is_err() && decode_cell(26).is_err());
}

#[test]
fn missing_observations_need_an_explicit_code() {
    let ds = small_dataset();
    let err = build_group_matrices(&ds, &CodeMap::default(), Some(2)).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(
        err.to_string().contains("late") && err.to_string().contains("l03"),
        "{err}"
    );

    let lct_only = CodeMap {
        missing_lct: Some(4),
        ..CodeMap::default()
    };
    let err = build_group_matrices(&ds, &lct_only, Some(2)).unwrap_err();
    assert!(err.to_string().contains("card"), "{err}");

    let both = CodeMap {
        missing_lct: Some(4),
        missing_card: Some(2),
        ..CodeMap::default()
    };
    let m = build_group_matrices(&ds, &both, Some(2)).unwrap();
    assert_eq!(
        m[&ScoreGroup::Pass60To100].students,
        vec![id("good"), id("late")]
    );
    assert_eq!(
        m[&ScoreGroup::Pass60To100].cells,
        vec![vec![11, 11, 11], vec![11, 31, 42]]
    );
    assert_eq!(m[&ScoreGroup::Fail0To39].cells, vec![vec![31, 55, 31]]);
    assert!(m[&ScoreGroup::Fail40To59].cells.is_empty());
}

#[test]
fn weak_cohort_codes_run_hotter_than_passing_codes() {
    let (ds, _) = simulate(&SimConfig::default()).unwrap();
    let m = build_group_matrices(&ds, &CodeMap::default(), None).unwrap();
    let rows: usize = m.values().map(|g| g.cells.len()).sum();
    assert_eq!(rows, ds.records().len());
    let fail = m[&ScoreGroup::Fail0To39].mean().unwrap();
    let mid = m[&ScoreGroup::Fail40To59].mean().unwrap();
    let pass = m[&ScoreGroup::Pass60To100].mean().unwrap();
    assert!(fail > pass && mid > pass, "{fail} {mid} {pass}");
}

#[test]
fn heatmap_files_hold_codes_and_colors() {
    let ds = small_dataset();
    let map = CodeMap {
        missing_lct: Some(4),
        missing_card: Some(2),
        ..CodeMap::default()
    };
    let m = build_group_matrices(&ds, &map, Some(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = export_heatmap(&m, dir.path(), 3).unwrap();
    assert_eq!(written.len(), 6);

    let read = |name: String| -> Vec<Vec<String>> {
        csv::Reader::from_path(dir.path().join(name))
            .unwrap()
            .records()
            .map(|r| r.unwrap().iter().map(str::to_string).collect())
            .collect()
    };
    let codes = read(heatmap_file_name(ScoreGroup::Pass60To100));
    let colors = read(heatmap_colors_file_name(ScoreGroup::Pass60To100));
    assert_eq!(codes[1], ["late", "11", "31", "42"]);
    for (c_row, k_row) in codes.iter().zip(&colors) {
        assert_eq!(c_row[0], k_row[0]);
        for (c, k) in c_row[1..].iter().zip(&k_row[1..]) {
            assert_eq!(*k, ramp_color(c.parse().unwrap()));
        }
    }
    assert_eq!(colors[0][1], "#00ff00");
    assert_eq!(
        read(heatmap_colors_file_name(ScoreGroup::Fail0To39))[0][2],
        "#ff0000"
    );
    assert!(read(heatmap_file_name(ScoreGroup::Fail40To59)).is_empty());
    assert!(export_heatmap(&Default::default(), dir.path(), 3).is_err());
}
