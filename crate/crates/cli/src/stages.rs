use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lcta_core::classifier::{
    apply_stump, fit_stump, metrics, ConfusionMatrix, Metrics, StumpModel,
};
use lcta_core::encoding::{build_group_matrices, export_heatmap, CodeMap};
use lcta_core::ingest::{ingest_records, ingest_responses, load_dataset, write_dataset};
use lcta_core::irt::{
    estimate_joint, mean_session_abilities, CalibrationConfig, CalibrationFile, ItemParameters,
};
use lcta_core::model::{
    Dataset, Outcome, ResponseMatrix, ScoreGroup, Session, StudentId, StudentRecord,
};
use lcta_core::regression::{build_design, fit_ols, rank_factors, Factor, RegressionResult};
use lcta_core::report::{
    ability_histograms, ability_placement_scatter, lct_fpc_joint, success_count_report, BinSpec,
    ReportBand, ReportMetadata, RiskRules,
};
use lcta_core::sim::{simulate, SimConfig};
use serde::Serialize;

use crate::cli::{
    CalibrateArgs, ClassifyArgs, EncodeArgs, PipelineArgs, RegressArgs, ReportArgs, ReportOptions,
    SimulateArgs,
};
use crate::output::{
    ensure_dir, read_json, relative, sha256_file, write_json, write_text, write_with,
};

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn load_sim_config(path: Option<&Path>, seed: u64) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<SimConfig>(p)?,
        None => SimConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg)
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let cfg = load_sim_config(args.config.as_deref(), args.seed)?;
    simulate_into(&cfg, &args.out)
}

fn simulate_into(cfg: &SimConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (ds, truth) = simulate(cfg)?;
    let dir = ensure_dir(&out.join("dataset"))?;
    write_dataset(&dir, &ds)?;
    let mut written: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    written.sort();
    written.push(write_json(&out.join("truth.json"), &truth)?);
    written.push(write_json(&out.join("sim_config.json"), cfg)?);
    log::info!(
        "simulated {} students over {} sessions",
        ds.records().len(),
        ds.session_count()
    );
    Ok(written)
}

/// Session id encoded in a response file name (`lct_<id>.csv`).
fn session_id(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_prefix("lct_")
        .map(str::to_string)
        .unwrap_or(stem)
}

fn matrix_from_files(files: &[PathBuf]) -> Result<ResponseMatrix> {
    let sessions = files
        .iter()
        .map(|p| {
            Ok(Session {
                id: session_id(p),
                responses: ingest_responses(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let [only] = sessions.as_slice() {
        return Ok(only.responses.clone());
    }
    let mut students: Vec<StudentId> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for s in &sessions {
        for id in s.responses.students() {
            if seen.insert(id.clone()) {
                students.push(id.clone());
            }
        }
    }
    Ok(ResponseMatrix::concat_sessions(&students, &sessions)?)
}

pub fn run_calibrate(args: &CalibrateArgs) -> Result<Vec<PathBuf>> {
    let matrix = match &args.dataset {
        Some(dir) => load_dataset(dir)?.full_matrix()?,
        None => matrix_from_files(&args.files)?,
    };
    let mut cfg = CalibrationConfig::default();
    if let Some(n) = args.max_sweeps {
        cfg.max_sweeps = n;
    }
    calibrate_matrix(&matrix, &cfg, &args.out)
}

fn calibrate_matrix(
    matrix: &ResponseMatrix,
    cfg: &CalibrationConfig,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let cal = estimate_joint(matrix, cfg)?;
    let file = CalibrationFile::new(matrix, &cal);
    ensure_dir(out)?;
    Ok(vec![
        write_json(&out.join(CALIBRATION_FILE), &file)?,
        write_text(&out.join("calibration.txt"), &calibration_text(&file))?,
    ])
}

fn calibration_text(f: &CalibrationFile) -> String {
    let d = &f.diagnostics;
    let mut s = String::new();
    let _ = writeln!(s, "2PL joint maximum likelihood calibration");
    let _ = writeln!(
        s,
        "students: {} (extreme patterns: {})   items: {} (excluded: {})",
        f.students.len(),
        d.extreme_students,
        f.items.len(),
        d.excluded_items.len()
    );
    let _ = writeln!(
        s,
        "sweeps: {}   converged: {}   log-likelihood: {:.6} -> {:.6}",
        d.sweeps,
        if d.converged { "yes" } else { "no" },
        d.initial_log_likelihood,
        d.final_log_likelihood
    );
    let _ = writeln!(
        s,
        "clamped abilities: {}   clamped items: {}",
        d.clamped_abilities, d.clamped_items
    );
    for e in &d.excluded_items {
        let _ = writeln!(s, "excluded {}: {:?}", e.item_id, e.reason);
    }
    let width = f
        .items
        .iter()
        .map(|r| r.item_id.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(s, "\n{:<width$} {:>10} {:>10}", "item", "a", "b");
    for r in &f.items {
        let _ = writeln!(s, "{:<width$} {:>10.4} {:>10.4}", r.item_id, r.a, r.b);
    }
    s
}

/// Joint-calibration ability of every record, matched by student id.
fn record_abilities(cal: &CalibrationFile, records: &[StudentRecord]) -> Result<Vec<f64>> {
    let by_id: HashMap<&str, f64> = cal
        .students
        .iter()
        .map(|s| (s.student_id.as_str(), s.theta))
        .collect();
    records
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .copied()
                .ok_or_else(|| anyhow!("student `{}` has no ability in the calibration", r.id))
        })
        .collect()
}

#[derive(Serialize)]
struct ClassifyReport {
    fitted: bool,
    model: StumpModel,
    confusion: ConfusionMatrix,
    metrics: Metrics,
}

pub fn run_classify(args: &ClassifyArgs) -> Result<Vec<PathBuf>> {
    let records = match (&args.records, &args.dataset) {
        (Some(p), _) => ingest_records(p)?,
        (None, Some(dir)) => load_dataset(dir)?.records().to_vec(),
        (None, None) => bail!("no records given"),
    };
    let cal: CalibrationFile = read_json(&args.calibration)?;
    classify(&cal, &records, args.threshold, &args.out)
}

fn classify(
    cal: &CalibrationFile,
    records: &[StudentRecord],
    threshold: Option<f64>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let abilities = record_abilities(cal, records)?;
    let labels: Vec<Outcome> = records.iter().map(StudentRecord::outcome).collect();
    let model = match threshold {
        Some(t) => StumpModel::with_threshold(t)?,
        None => fit_stump(&abilities, &labels)?,
    };
    let confusion = apply_stump(&model, &abilities, &labels)?;
    let m = metrics(&confusion)?;
    let report = ClassifyReport {
        fitted: threshold.is_none(),
        model,
        confusion,
        metrics: m,
    };
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let mut text = String::new();
    let _ = writeln!(
        text,
        "threshold: {:.4} ({})",
        model.threshold,
        if report.fitted { "fitted" } else { "fixed" }
    );
    let _ = writeln!(text, "predict fail when ability < threshold\n");
    let _ = writeln!(
        text,
        "{:<10} {:>14} {:>14} {:>8}",
        "observed", "pred. pass", "pred. fail", "total"
    );
    for (name, p, f) in [
        (
            "pass",
            confusion.obs_pass_pred_pass,
            confusion.obs_pass_pred_fail,
        ),
        (
            "fail",
            confusion.obs_fail_pred_pass,
            confusion.obs_fail_pred_fail,
        ),
        (
            "total",
            confusion.predicted_pass(),
            confusion.predicted_fail(),
        ),
    ] {
        let _ = writeln!(text, "{name:<10} {p:>14} {f:>14} {:>8}", p + f);
    }
    let _ = writeln!(
        text,
        "\nmisclassification rate: {:.4}",
        m.misclassification_rate
    );
    let _ = writeln!(
        text,
        "hitting ratio (fail precision): {}",
        fmt(m.fail_precision)
    );
    let _ = writeln!(text, "fail recall: {}", fmt(m.fail_recall));

    ensure_dir(out)?;
    Ok(vec![
        write_with(&out.join("confusion.csv"), |w| confusion.write_csv(w))?,
        write_json(&out.join("classify.json"), &report)?,
        write_text(&out.join("classify.txt"), &text)?,
    ])
}

#[derive(Serialize)]
struct RankedFactor<'a> {
    name: &'a str,
    p_value: f64,
}

#[derive(Serialize)]
struct RegressReport<'a> {
    factors: Vec<&'static str>,
    ability: &'static str,
    dropped: usize,
    result: &'a RegressionResult,
    ranking: Vec<RankedFactor<'a>>,
}

/// Calibrated parameters for every dataset item, in full-matrix column order.
fn dataset_items(cal: &CalibrationFile, ds: &Dataset) -> Result<Vec<ItemParameters>> {
    let matrix = ds.full_matrix()?;
    matrix
        .items()
        .iter()
        .map(|id| {
            cal.item_parameters(id.as_str())
                .ok_or_else(|| anyhow!("item `{id}` is missing from the calibration"))
        })
        .collect()
}

pub fn run_regress(args: &RegressArgs) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&args.dataset)?;
    let cal: CalibrationFile = read_json(&args.calibration)?;
    let factors = args.factors.clone().unwrap_or_default();
    regress(&cal, &ds, &factors.0, &args.out)
}

fn regress(
    cal: &CalibrationFile,
    ds: &Dataset,
    factors: &[Factor],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let items = dataset_items(cal, ds)?;
    let abilities = mean_session_abilities(ds, &items, &CalibrationConfig::default())?;
    let abilities: Vec<Option<f64>> = abilities.into_iter().map(Some).collect();
    let design = build_design(ds.records(), &abilities, factors)?;
    let result = fit_ols(&design.x, &design.y)?;
    let ranked = rank_factors(&result);
    let report = RegressReport {
        factors: factors.iter().map(|f| f.name()).collect(),
        ability: "mean of per-session abilities on calibrated items",
        dropped: design.dropped,
        result: &result,
        ranking: ranked
            .iter()
            .map(|c| RankedFactor {
                name: &c.name,
                p_value: c.p_value,
            })
            .collect(),
    };
    let mut text = format!(
        "Final exam ~ {}\n{} records used, {} dropped\n\n",
        report.factors.join(" + "),
        result.n_obs,
        design.dropped
    );
    text.push_str(&result.to_text());
    text.push_str("\nFactors by significance:\n");
    for (k, c) in ranked.iter().enumerate() {
        let _ = writeln!(
            text,
            "{:>3}. {:<18} p = {:.4e} {}",
            k + 1,
            c.name,
            c.p_value,
            c.significance
        );
    }
    ensure_dir(out)?;
    Ok(vec![
        write_json(&out.join("regression.json"), &report)?,
        write_text(&out.join("regression.txt"), &text)?,
    ])
}

#[derive(Serialize)]
struct GroupSummary {
    students: usize,
    mean_code: Option<f64>,
}

#[derive(Serialize)]
struct EncodeReport {
    pass_mark: Option<usize>,
    codemap: CodeMap,
    groups: BTreeMap<ScoreGroup, GroupSummary>,
}

pub fn run_encode(args: &EncodeArgs) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&args.dataset)?;
    let codemap = CodeMap {
        missing_lct: args.missing_lct,
        missing_card: args.missing_card,
        ..CodeMap::default()
    };
    encode(&ds, codemap, args.pass_mark, &args.out)
}

fn encode(
    ds: &Dataset,
    codemap: CodeMap,
    pass_mark: Option<usize>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let matrices = build_group_matrices(ds, &codemap, pass_mark)?;
    ensure_dir(out)?;
    let mut written = export_heatmap(&matrices, out, ds.sessions().len())?;
    let report = EncodeReport {
        pass_mark,
        codemap,
        groups: matrices
            .iter()
            .map(|(&g, m)| {
                (
                    g,
                    GroupSummary {
                        students: m.students.len(),
                        mean_code: m.mean(),
                    },
                )
            })
            .collect(),
    };
    written.push(write_json(&out.join("encode.json"), &report)?);
    Ok(written)
}

pub fn run_report(args: &ReportArgs) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&args.dataset)?;
    let cal: CalibrationFile = read_json(&args.calibration)?;
    report(&cal, &ds, &args.options, &args.out)
}

fn report(
    cal: &CalibrationFile,
    ds: &Dataset,
    opts: &ReportOptions,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let records = ds.records();
    let t = ds.session_count();
    let abilities = record_abilities(cal, records)?;
    let bins = BinSpec {
        width: opts.bins,
        ..BinSpec::default()
    };
    let mut rules = RiskRules::for_sessions(t);
    if let Some(v) = opts.risk_fail_gt {
        rules.risk_fail_gt = v;
    }
    if let Some(v) = opts.strong_succ_ge {
        rules.strong_succ_ge = v;
    }
    let hist = ability_histograms(&abilities, records, bins)?;
    let scatter = ability_placement_scatter(&abilities, records)?;
    let joint = lct_fpc_joint(records, t)?;
    let success = success_count_report(records, t, rules)?;

    let mut group_sizes: BTreeMap<ScoreGroup, usize> =
        ScoreGroup::ALL.iter().map(|&g| (g, 0)).collect();
    for r in records {
        *group_sizes.entry(r.score_group()).or_default() += 1;
    }
    let band_sizes: BTreeMap<ReportBand, usize> = success
        .frequencies
        .iter()
        .map(|(&b, f)| (b, f.iter().sum()))
        .collect();
    let meta = ReportMetadata {
        sessions: t,
        group_sizes,
        band_sizes,
        rules,
        bins,
        pass_mean_ability: hist.pass_mean,
        fail_mean_ability: hist.fail_mean,
        scatter_dropped: scatter.dropped,
    };
    ensure_dir(out)?;
    Ok(vec![
        write_with(&out.join("ability_histograms.csv"), |w| hist.write_csv(w))?,
        write_with(&out.join("ability_placement.csv"), |w| scatter.write_csv(w))?,
        write_with(&out.join("lct_fpc_joint.csv"), |w| joint.write_csv(w))?,
        write_with(&out.join("success_frequencies.csv"), |w| {
            success.write_frequencies_csv(w)
        })?,
        write_with(&out.join("risk_flags.csv"), |w| success.write_flags_csv(w))?,
        write_json(&out.join("report.json"), &meta)?,
    ])
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Parameters {
    factors: Vec<&'static str>,
    threshold: Option<f64>,
    bin_width: f64,
    risk_fail_gt: Option<u32>,
    strong_succ_ge: Option<u32>,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    inputs: Vec<FileHash>,
    config: SimConfig,
    parameters: Parameters,
    stages: Vec<&'static str>,
    outputs: Vec<FileHash>,
}

pub fn run_pipeline(args: &PipelineArgs) -> Result<Vec<PathBuf>> {
    let out = ensure_dir(&args.out)?;
    let cfg = load_sim_config(args.config.as_deref(), args.seed)?;
    let factors = args.factors.clone().unwrap_or_default();
    let mut written = Vec::new();

    written.extend(simulate_into(&cfg, &out.join("simulate")).context("simulate stage")?);
    let dataset_dir = out.join("simulate").join("dataset");
    let ds = load_dataset(&dataset_dir)?;

    let cal_dir = out.join("calibrate");
    written.extend(
        calibrate_matrix(&ds.full_matrix()?, &CalibrationConfig::default(), &cal_dir)
            .context("calibrate stage")?,
    );
    let cal: CalibrationFile = read_json(&cal_dir.join(CALIBRATION_FILE))?;

    written.extend(
        classify(&cal, ds.records(), args.threshold, &out.join("classify"))
            .context("classify stage")?,
    );
    written.extend(regress(&cal, &ds, &factors.0, &out.join("regress")).context("regress stage")?);
    written.extend(
        encode(&ds, CodeMap::default(), None, &out.join("encode")).context("encode stage")?,
    );
    written.extend(report(&cal, &ds, &args.report, &out.join("report")).context("report stage")?);

    let hash = |p: &Path, base: &Path| -> Result<FileHash> {
        Ok(FileHash {
            path: relative(p, base),
            sha256: sha256_file(p)?,
        })
    };
    let mut outputs = written
        .iter()
        .map(|p| hash(p, &out))
        .collect::<Result<Vec<_>>>()?;
    outputs.sort_by(|a, b| a.path.cmp(&b.path));
    let inputs = match &args.config {
        Some(p) => vec![FileHash {
            path: p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_file(p)?,
        }],
        None => Vec::new(),
    };
    let manifest = Manifest {
        tool: "lcta",
        version: env!("CARGO_PKG_VERSION"),
        seed: args.seed,
        inputs,
        config: cfg,
        parameters: Parameters {
            factors: factors.0.iter().map(|f| f.name()).collect(),
            threshold: args.threshold,
            bin_width: args.report.bins,
            risk_fail_gt: args.report.risk_fail_gt,
            strong_succ_ge: args.report.strong_succ_ge,
        },
        stages: vec![
            "simulate",
            "calibrate",
            "classify",
            "regress",
            "encode",
            "report",
        ],
        outputs,
    };
    written.push(write_json(&out.join(MANIFEST_FILE), &manifest)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids_from_file_names() {
        assert_eq!(session_id(Path::new("data/lct_l03.csv")), "l03");
        assert_eq!(session_id(Path::new("week1.csv")), "week1");
    }

    #[test]
    fn relative_paths_use_forward_slashes() {
        let base = Path::new("/tmp/run");
        assert_eq!(relative(&base.join("a").join("b.csv"), base), "a/b.csv");
    }
}
