use std::path::Path;

use lcta_core::irt::{estimate_joint, CalibrationConfig};
use lcta_core::model::{partition_by_score_group, Dataset, ScoreGroup, StudentId, StudentRecord};
use lcta_core::report::{
    ability_histograms, ability_placement_scatter, lct_fpc_joint, success_count_report, BinSpec,
    ReportBand, RiskRules,
};
use lcta_core::sim::{simulate, GroundTruth, SimConfig};
use proptest::prelude::*;

fn fixture(name: &str) -> SimConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn calibrated(cfg: &SimConfig) -> (Dataset, GroundTruth, Vec<f64>) {
    let (ds, truth) = simulate(cfg).unwrap();
    let cal = estimate_joint(&ds.full_matrix().unwrap(), &CalibrationConfig::default()).unwrap();
    let thetas = cal.abilities.iter().map(|a| a.theta).collect();
    (ds, truth, thetas)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, sx) = mean_sd(x);
    let (my, sy) = mean_sd(y);
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 * sx * sy)
}

fn rec(id: usize, score: f64, succ: u32, fail: u32, fpc_abs: u32) -> StudentRecord {
    StudentRecord {
        id: StudentId::new(format!("s{id}")).unwrap(),
        placement_fundamental: Some(50.0),
        placement_advanced: None,
        final_exam: score,
        lct_success_count: succ,
        lct_failure_count: fail,
        class_absence_count: 0,
        fpc_absence_count: fpc_abs,
        fpt_not_required_count: 0,
    }
}

fn records(t: u32) -> impl Strategy<Value = Vec<StudentRecord>> {
    prop::collection::vec((0.0f64..=100.0, 0..=t, 0..=t, 0..=t), 0..60).prop_map(move |rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (score, s, f, a))| rec(i, score, s.min(t - f.min(t)), f.min(t), a))
            .collect()
    })
}

proptest! {
    #[test]
    fn joint_table_totals_and_marginals(recs in records(14)) {
        let table = lct_fpc_joint(&recs, 14).unwrap();
        let groups = partition_by_score_group(&recs);
        for g in ScoreGroup::ALL {
            let members = &groups[&g];
            prop_assert_eq!(table.group_total(g), members.len());
            let mut hist = vec![0usize; 15];
            for r in members {
                hist[r.lct_success_count as usize] += 1;
            }
            prop_assert_eq!(table.success_marginal(g), hist);
        }
    }

    #[test]
    fn success_report_totals(recs in records(13)) {
        let report = success_count_report(&recs, 13, RiskRules::for_sessions(13)).unwrap();
        let total: usize = report.frequencies.values().flatten().sum();
        prop_assert_eq!(total, recs.len());
        let groups = partition_by_score_group(&recs);
        let fail_bands = report.frequencies[&ReportBand::Fail0To39].iter().sum::<usize>();
        prop_assert_eq!(fail_bands, groups[&ScoreGroup::Fail0To39].len());
        let fail_bands = report.frequencies[&ReportBand::Fail40To59].iter().sum::<usize>();
        prop_assert_eq!(fail_bands, groups[&ScoreGroup::Fail40To59].len());
    }

    #[test]
    fn histogram_counts_sum_to_group_sizes(
        thetas in prop::collection::vec(-4.0f64..4.0, 1..80),
        scores in prop::collection::vec(0.0f64..=100.0, 80),
    ) {
        let recs: Vec<StudentRecord> = thetas.iter().zip(&scores).enumerate()
            .map(|(i, (_, &s))| rec(i, s, 0, 0, 0)).collect();
        let h = ability_histograms(&thetas, &recs, BinSpec::default()).unwrap();
        let fails = recs.iter().filter(|r| r.final_exam < 60.0).count();
        prop_assert_eq!(h.fail.iter().sum::<usize>(), fails);
        prop_assert_eq!(h.pass.iter().sum::<usize>(), recs.len() - fails);
    }
}

#[test]
fn rules_at_thirteen_sessions_exhaustive() {
    let rules = RiskRules::for_sessions(13);
    for s in 0..=13u32 {
        for f in 0..=(13 - s) {
            assert_eq!(rules.risk(f), f > 7, "failures {f}");
            assert_eq!(rules.strong(s), s >= 10, "successes {s}");
        }
    }
}

#[test]
fn rules_are_monotone() {
    for t in 1..=30u32 {
        let rules = RiskRules::for_sessions(t);
        for k in 0..t {
            assert!(!rules.risk(k) || rules.risk(k + 1));
            assert!(!rules.strong(k) || rules.strong(k + 1));
        }
    }
}

#[test]
fn rule_examples() {
    let recs = [
        rec(0, 30.0, 5, 8, 0),
        rec(1, 85.0, 10, 3, 0),
        rec(2, 95.0, 13, 0, 0),
    ];
    let report = success_count_report(&recs, 13, RiskRules::for_sessions(13)).unwrap();
    assert!(report.flags[0].risk && !report.flags[0].strong);
    assert!(report.flags[1].strong && !report.flags[1].risk);
    assert!(report.flags[2].strong && !report.flags[2].risk);
    assert!(
        success_count_report(&[rec(3, 50.0, 10, 10, 0)], 13, RiskRules::for_sessions(13)).is_err()
    );
}

#[test]
fn identical_pairs_share_a_cell() {
    let recs = [rec(0, 20.0, 3, 2, 4), rec(1, 25.0, 3, 2, 4)];
    let table = lct_fpc_joint(&recs, 14).unwrap();
    assert_eq!(table.counts[&ScoreGroup::Fail0To39][3][4], 2);
    let err = lct_fpc_joint(&[rec(9, 20.0, 3, 2, 15)], 14).unwrap_err();
    assert!(err.to_string().contains("s9"), "{err}");
}

#[test]
fn single_student_histogram() {
    let h = ability_histograms(&[0.2], &[rec(0, 75.0, 0, 0, 0)], BinSpec::default()).unwrap();
    assert_eq!(h.pass.iter().sum::<usize>(), 1);
    assert_eq!(h.pass[BinSpec::default().index(0.2)], 1);
    assert_eq!(h.pass_mean, Some(0.2));
    assert_eq!(h.fail_mean, None);
}

#[test]
fn scatter_labels_and_drops() {
    let mut recs = vec![
        rec(0, 20.0, 0, 0, 0),
        rec(1, 50.0, 0, 0, 0),
        rec(2, 80.0, 0, 0, 0),
    ];
    let t = ability_placement_scatter(&[0.1, 0.2, 0.3], &recs).unwrap();
    let groups: Vec<ScoreGroup> = t.rows.iter().map(|r| r.group).collect();
    assert_eq!(
        groups,
        [
            ScoreGroup::Fail0To39,
            ScoreGroup::Fail40To59,
            ScoreGroup::Pass60To100
        ]
    );
    for r in &mut recs {
        r.placement_fundamental = None;
    }
    let t = ability_placement_scatter(&[0.1, 0.2, 0.3], &recs).unwrap();
    assert!(t.rows.is_empty());
    assert_eq!(t.dropped, 3);
}

#[test]
fn estimated_ability_tracks_latent_skill() {
    let (ds, truth, thetas) = calibrated(&SimConfig::default());
    let table = ability_placement_scatter(&thetas, ds.records()).unwrap();
    let latent: Vec<f64> = table
        .rows
        .iter()
        .map(|row| {
            let i = ds
                .records()
                .iter()
                .position(|r| r.id.as_str() == row.student_id)
                .unwrap();
            truth.abilities[i].theta
        })
        .collect();
    let est: Vec<f64> = table.rows.iter().map(|r| r.theta).collect();
    assert!(pearson(&est, &latent) > 0.7);
}

#[test]
fn planted_group_means_recovered() {
    let (ds, truth, thetas) = calibrated(&fixture("group_means_cohort.json"));
    let h = ability_histograms(&thetas, ds.records(), BinSpec::default()).unwrap();
    // The estimated scale is standardized; map it back onto the generating
    // scale by matching the first two moments of the true ability sample.
    let (m_hat, s_hat) = mean_sd(&thetas);
    let (m_true, s_true) = mean_sd(&truth.thetas());
    let link = |v: f64| m_true + s_true * (v - m_hat) / s_hat;
    let pass = link(h.pass_mean.unwrap());
    let fail = link(h.fail_mean.unwrap());
    assert!((pass - 0.63).abs() <= 0.05, "pass mean {pass}");
    assert!((fail + 0.17).abs() <= 0.05, "fail mean {fail}");
}

#[test]
fn absent_students_spike_at_the_floor() {
    let (ds, _, thetas) = calibrated(&fixture("single_session_cohort.json"));
    let h = ability_histograms(&thetas, ds.records(), BinSpec::default()).unwrap();
    let k = h.bins.index(-3.0);
    for counts in [&h.pass, &h.fail] {
        assert!(counts[k] > 0);
        assert!(
            counts[k] > counts[k + 1] && counts[k] > counts[k - 1],
            "{counts:?}"
        );
    }
}

#[test]
fn badly_failed_students_couple_successes_and_fpc_absences() {
    // weak students skip follow-up classes and exemption coincides with a success
    let (ds, _) = simulate(&fixture("weak_tail_cohort.json")).unwrap();
    let t = ds.session_count() as f64;
    let group: Vec<&StudentRecord> = ds
        .records()
        .iter()
        .filter(|r| r.score_group() == ScoreGroup::Fail0To39)
        .collect();
    assert!(group.len() >= 30, "{}", group.len());
    let succ: Vec<f64> = group.iter().map(|r| r.lct_success_count as f64).collect();
    let attended: Vec<f64> = group
        .iter()
        .map(|r| t - r.fpc_absence_count as f64)
        .collect();
    let r = pearson(&succ, &attended);
    assert!(r > 0.7, "{r}");
}

#[test]
fn attentive_passers_concentrate_on_zero_absences() {
    let (ds, _) = simulate(&fixture("attentive_cohort.json")).unwrap();
    let table = lct_fpc_joint(ds.records(), ds.session_count()).unwrap();
    let grid = &table.counts[&ScoreGroup::Pass60To100];
    let by_absence: Vec<usize> = (0..grid[0].len())
        .map(|a| grid.iter().map(|row| row[a]).sum())
        .collect();
    let total: usize = by_absence.iter().sum();
    assert!(by_absence[0] * 2 > total, "{by_absence:?}");
    assert_eq!(by_absence.iter().max(), Some(&by_absence[0]));
}
