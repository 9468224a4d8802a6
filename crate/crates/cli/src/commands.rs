use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use mfpca_core::experiment::{
    coverage_experiment, coverage_study, run_study, sensitivity_study, setting1_study, setting2_study,
    setting3_study, summarize, CoverageStudy, Study, StudySummary, SENSITIVITY_PVE,
};
use mfpca_core::io::{read_dataset, write_bands, write_components, write_coverage, write_dataset, write_json, write_matrix, write_replicates};
use mfpca_core::pipeline::UnivariateFit;
use mfpca_core::simgen::SimulatedData;
use mfpca_core::{bootstrap_bands, fit, simulate, FitConfig, Fitted, MultiFunData};

use crate::config::{ExperimentBlock, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

pub struct Loaded {
    pub config: ExperimentConfig,
    /// Directory that relative paths in the config resolve against.
    pub base: PathBuf,
}

pub fn load_config(path: &Path) -> CliResult<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(format!("config file {}", path.display())),
        _ => CliError::Io(format!("{}: {e}", path.display())),
    })?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

fn require_config(g: &Globals) -> CliResult<Loaded> {
    let path = g.config.as_ref().ok_or_else(|| CliError::Schema("--config is required for this command".into()))?;
    load_config(path)
}

fn output_dir(g: &Globals, loaded: Option<&Loaded>) -> CliResult<PathBuf> {
    if let Some(o) = &g.out {
        return Ok(o.clone());
    }
    match loaded.and_then(|l| l.config.output.as_ref().map(|o| l.base.join(o))) {
        Some(o) => Ok(o),
        None => Err(CliError::Schema("no output directory: pass --out or set \"output\"".into())),
    }
}

/// Create `dir`, refusing a non-empty existing directory unless forced.
pub fn prepare_output(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Overwrite(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_run_info(dir: &Path, command: &str, seed: Option<u64>, config: &serde_json::Value) -> CliResult<()> {
    let info = json!({
        "tool": "mfpca",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config,
    });
    write_json(&dir.join("run.json"), &info)?;
    Ok(())
}

fn config_echo(loaded: Option<&Loaded>) -> serde_json::Value {
    loaded.map_or(serde_json::Value::Null, |l| serde_json::to_value(&l.config).unwrap_or_default())
}

fn simulate_from(config: &ExperimentConfig, seed: Option<u64>) -> CliResult<SimulatedData> {
    let mut spec = config
        .simulation
        .clone()
        .ok_or_else(|| CliError::Schema("a \"simulation\" block is required".into()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(simulate(&spec)?)
}

fn load_data(loaded: &Loaded, seed: Option<u64>) -> CliResult<MultiFunData> {
    match (&loaded.config.dataset, &loaded.config.simulation) {
        (Some(d), None) => {
            let dir = loaded.base.join(d);
            if !dir.exists() {
                return Err(CliError::Missing(format!("dataset directory {}", dir.display())));
            }
            Ok(read_dataset(&dir)?)
        }
        (None, Some(_)) => Ok(simulate_from(&loaded.config, seed)?.data),
        (Some(_), Some(_)) => Err(CliError::Schema("give either \"dataset\" or \"simulation\", not both".into())),
        (None, None) => Err(CliError::Schema("a \"dataset\" or \"simulation\" block is required".into())),
    }
}

fn fit_config(config: &ExperimentConfig) -> CliResult<FitConfig> {
    config.fit_config().ok_or_else(|| CliError::Schema("a \"univariate\" block is required".into()))
}

pub fn simulate_cmd(g: &Globals) -> CliResult<PathBuf> {
    let loaded = require_config(g)?;
    let out = output_dir(g, Some(&loaded))?;
    let sim = simulate_from(&loaded.config, g.seed)?;
    prepare_output(&out, g.force)?;
    write_dataset(&out.join("data"), &sim.data)?;
    write_dataset(&out.join("truth"), &sim.truth)?;
    let tdir = out.join("true_eigenfunctions");
    fs::create_dir_all(&tdir)?;
    for (j, e) in sim.basis.eigenfunctions.iter().enumerate() {
        write_matrix(&tdir.join(format!("psi_{j}.csv")), e)?;
    }
    write_matrix(&tdir.join("scores.csv"), &sim.scores)?;
    write_json(
        &tdir.join("truth.json"),
        &json!({ "eigenvalues": sim.eigenvalues, "signs": sim.basis.signs, "alpha": sim.basis.alpha }),
    )?;
    write_run_info(&out, "simulate", g.seed, &config_echo(Some(&loaded)))?;
    Ok(out)
}

#[derive(Serialize)]
struct UnivariateSummary {
    label: String,
    method: &'static str,
    components: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_df: Option<f64>,
}

fn univariate_summary(label: &str, u: &UnivariateFit) -> UnivariateSummary {
    let base = |method, components| UnivariateSummary {
        label: label.to_string(),
        method,
        components,
        eigenvalues: None,
        sigma2: None,
        lambda: None,
        effective_df: None,
    };
    match u {
        UnivariateFit::Fpca(r) | UnivariateFit::Tensor(r, _) => {
            let method = if matches!(u, UnivariateFit::Tensor(..)) { "tensor_pca" } else { "pca" };
            UnivariateSummary { eigenvalues: Some(r.eigenvalues.clone()), sigma2: Some(r.sigma2), ..base(method, r.m()) }
        }
        UnivariateFit::Spline(b) => UnivariateSummary {
            lambda: b.lambda,
            effective_df: b.effective_df,
            ..base("spline", b.coefficients.ncols())
        },
    }
}

fn write_fit(dir: &Path, data: &MultiFunData, fitted: &Fitted) -> CliResult<()> {
    let r = &fitted.result;
    let means: Vec<_> = r.means.iter().map(|m| nalgebra::DMatrix::from_row_slice(1, m.len(), m.as_slice())).collect();
    write_components(dir, &r.eigenfunctions, &means, &r.scores)?;
    let univariate: Vec<UnivariateSummary> = fitted
        .univariate
        .iter()
        .zip(data.labels())
        .map(|(u, l)| univariate_summary(l, u))
        .collect();
    let summary = json!({
        "n": r.n(),
        "p": r.p(),
        "labels": data.labels(),
        "m": r.m(),
        "eigenvalues": r.eigenvalues,
        "pve": r.pve,
        "weights": r.weights,
        "projection_scores": r.projection_scores,
        "degenerate": r.degenerate,
        "warnings": r.warnings,
        "univariate": univariate,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(())
}

pub fn fit_cmd(g: &Globals) -> CliResult<PathBuf> {
    let loaded = require_config(g)?;
    let out = output_dir(g, Some(&loaded))?;
    let config = fit_config(&loaded.config)?;
    let data = load_data(&loaded, g.seed)?;
    let fitted = fit(&data, &config)?;
    prepare_output(&out, g.force)?;
    write_fit(&out, &data, &fitted)?;
    write_run_info(&out, "fit", g.seed, &config_echo(Some(&loaded)))?;
    Ok(out)
}

pub fn bootstrap_cmd(g: &Globals) -> CliResult<PathBuf> {
    let loaded = require_config(g)?;
    let out = output_dir(g, Some(&loaded))?;
    let config = fit_config(&loaded.config)?;
    let mut opts = loaded
        .config
        .bootstrap
        .clone()
        .ok_or_else(|| CliError::Schema("a \"bootstrap\" block is required".into()))?;
    if let Some(s) = g.seed {
        opts.seed = s;
    }
    let data = load_data(&loaded, g.seed)?;
    let fitted = fit(&data, &config)?;
    let bands = bootstrap_bands(&data, &config, &fitted, &opts)?;
    prepare_output(&out, g.force)?;
    write_fit(&out, &data, &fitted)?;
    write_bands(&out.join("bands"), &bands)?;
    write_json(
        &out.join("bands.json"),
        &json!({
            "replicates": bands.replicates,
            "failed": bands.failed,
            "components": bands.components,
            "levels": bands.bands.iter().map(|b| b.level).collect::<Vec<_>>(),
        }),
    )?;
    write_run_info(&out, "bootstrap", g.seed, &config_echo(Some(&loaded)))?;
    Ok(out)
}

/// Overrides from the `experiment` command line.
#[derive(Clone, Debug, Default)]
pub struct ExperimentOverrides {
    pub replicates: Option<usize>,
    pub n: Option<usize>,
    pub sigma2: Option<f64>,
}

/// Summary written next to each study's `replicates.csv`; read back by
/// `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: String,
    pub label: String,
    pub seed: u64,
    pub mean_mrse_pct: f64,
    pub median_mrse_pct: f64,
    pub summary: StudySummary,
    pub study: Study,
}

fn apply(block: &mut ExperimentBlock, o: &ExperimentOverrides) {
    use ExperimentBlock::*;
    match block {
        Study { replicates, .. } => {
            if let Some(r) = o.replicates {
                *replicates = r;
            }
        }
        Setting1 { n, sigma2, replicates, .. } | Setting2 { n, sigma2, replicates, .. } | Setting3 { n, sigma2, replicates, .. } => {
            if let Some(r) = o.replicates {
                *replicates = r;
            }
            if let Some(v) = o.n {
                *n = v;
            }
            if let Some(s) = o.sigma2 {
                *sigma2 = s;
            }
        }
        Sensitivity { n, replicates } => {
            if let Some(r) = o.replicates {
                *replicates = r;
            }
            if let Some(v) = o.n {
                *n = v;
            }
        }
        Coverage { datasets, n, sigma2, .. } => {
            if let Some(r) = o.replicates {
                *datasets = r;
            }
            if let Some(v) = o.n {
                *n = v;
            }
            if let Some(s) = o.sigma2 {
                *sigma2 = s;
            }
        }
    }
}

fn run_and_write(dir: &Path, label: String, study: Study, seed: u64) -> CliResult<StudyReport> {
    let reps = run_study(&study, seed)?;
    fs::create_dir_all(dir)?;
    write_replicates(&dir.join("replicates.csv"), &reps)?;
    let summary = summarize(&reps);
    let report = StudyReport {
        kind: "study".into(),
        label,
        seed,
        mean_mrse_pct: 100.0 * summary.mean_mrse,
        median_mrse_pct: 100.0 * summary.median_mrse,
        summary,
        study,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

fn pve_tag(p: Option<f64>) -> String {
    p.map_or("full".into(), |v| format!("pve_{:.0}", v * 100.0))
}

pub fn experiment_cmd(g: &Globals, preset: Option<ExperimentBlock>, o: &ExperimentOverrides) -> CliResult<PathBuf> {
    let loaded = match &g.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let mut block = match (preset, loaded.as_ref().and_then(|l| l.config.experiment.clone())) {
        (Some(b), _) | (None, Some(b)) => b,
        (None, None) => return Err(CliError::Schema("no experiment given: name a preset or add an \"experiment\" block".into())),
    };
    apply(&mut block, o);
    let out = output_dir(g, loaded.as_ref())?;
    let seed = g.seed.unwrap_or(0);
    prepare_output(&out, g.force)?;
    let cfg = loaded.as_ref().map(|l| &l.config);
    use ExperimentBlock::*;
    match &block {
        Study { replicates, components } => {
            let c = cfg.ok_or_else(|| CliError::Schema("a study needs --config".into()))?;
            let simulation = c.simulation.clone().ok_or_else(|| CliError::Schema("a study needs a \"simulation\" block".into()))?;
            let study = mfpca_core::experiment::Study {
                simulation,
                fit: fit_config(c)?,
                replicates: *replicates,
                components: *components,
            };
            run_and_write(&out, "study".into(), study, seed)?;
        }
        Setting1 { n, decay, sigma2, replicates } => {
            let label = format!("setting1 decay={decay:?} sigma2={sigma2} n={n}");
            run_and_write(&out, label, setting1_study(*n, *decay, *sigma2, *replicates), seed)?;
        }
        Setting2 { n, decay, sigma2, sparsity, replicates } => {
            let label = format!("setting2 decay={decay:?} sigma2={sigma2} sparsity={sparsity:?} n={n}");
            run_and_write(&out, label, setting2_study(*n, *decay, *sigma2, *sparsity, *replicates), seed)?;
        }
        Setting3 { n, image, curve, sigma2, pathway, replicates } => {
            let label = format!("setting3 pathway={pathway:?} sigma2={sigma2} n={n}");
            run_and_write(&out, label, setting3_study(*n, *image, *curve, *sigma2, *pathway, *replicates), seed)?;
        }
        Sensitivity { n, replicates } => {
            let mut rows = Vec::new();
            for p in SENSITIVITY_PVE {
                let tag = pve_tag(p);
                let r = run_and_write(&out.join(&tag), format!("sensitivity {tag} n={n}"), sensitivity_study(*n, p, *replicates), seed)?;
                rows.push(json!({ "truncation": tag, "mean_mrse_pct": r.mean_mrse_pct, "median_mrse_pct": r.median_mrse_pct }));
            }
            write_json(&out.join("sensitivity.json"), &rows)?;
        }
        Coverage { datasets, n, image, curve, sigma2 } => {
            let c = cfg.ok_or_else(|| CliError::Schema("coverage needs --config with a \"bootstrap\" block".into()))?;
            let bootstrap = c.bootstrap.clone().ok_or_else(|| CliError::Schema("coverage needs a \"bootstrap\" block".into()))?;
            let study = match (&c.simulation, c.fit_config()) {
                (Some(simulation), Some(fit)) => {
                    CoverageStudy { simulation: simulation.clone(), fit, datasets: *datasets, bootstrap }
                }
                _ => coverage_study(*n, *image, *curve, *sigma2, *datasets, bootstrap),
            };
            let table = coverage_experiment(&study, seed)?;
            write_coverage(&out, &table)?;
            let per_element: Vec<Vec<f64>> = (0..table.levels.len())
                .map(|l| (0..table.mean[l].len()).map(|j| table.element_mean(l, j)).collect())
                .collect();
            write_json(
                &out.join("coverage.json"),
                &json!({
                    "kind": "coverage",
                    "seed": seed,
                    "datasets": table.datasets,
                    "components": table.components,
                    "levels": table.levels,
                    "mean": table.mean,
                    "element_mean": per_element,
                    "study": study,
                }),
            )?;
        }
    }
    let echo = json!({ "experiment": block, "config": config_echo(loaded.as_ref()) });
    write_run_info(&out, "experiment", Some(seed), &echo)?;
    Ok(out)
}

fn collect_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_summaries(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "summary.json" || n == "coverage.json") {
            found.push(p);
        }
    }
    Ok(())
}

/// Aggregate every study and coverage summary below `results` into
/// `report.csv` (MRSE table) and `coverage_report.csv`.
pub fn report_cmd(g: &Globals, results: &Path) -> CliResult<PathBuf> {
    if !results.is_dir() {
        return Err(CliError::Missing(format!("results directory {}", results.display())));
    }
    let mut found = Vec::new();
    collect_summaries(results, &mut found)?;
    let out = g.out.clone().unwrap_or_else(|| results.join("report"));
    let mut studies = Vec::new();
    let mut coverage = Vec::new();
    for path in &found {
        if path.starts_with(&out) {
            continue;
        }
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let rel = path.parent().and_then(|p| p.strip_prefix(results).ok()).map(|p| p.display().to_string()).unwrap_or_default();
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("study") => {
                let r: StudyReport = serde_json::from_value(value).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
                studies.push((rel, r));
            }
            Some("coverage") => coverage.push((rel, value)),
            _ => {}
        }
    }
    if studies.is_empty() && coverage.is_empty() {
        return Err(CliError::Missing(format!("no experiment summaries below {}", results.display())));
    }
    prepare_output(&out, g.force)?;

    let width = studies.iter().map(|(_, r)| r.summary.median_err_eigenvalue.len()).max().unwrap_or(0);
    let mut header = vec!["path".to_string(), "label".into(), "replicates".into(), "mean_mrse_pct".into(), "median_mrse_pct".into()];
    header.extend((1..=width).map(|k| format!("median_err_nu_{k}")));
    header.extend((1..=width).map(|k| format!("median_err_psi_{k}")));
    let mut lines = vec![header.join(",")];
    for (rel, r) in &studies {
        let mut row = vec![rel.clone(), format!("\"{}\"", r.label), r.summary.replicates.to_string()];
        row.push(format!("{:.6}", r.mean_mrse_pct));
        row.push(format!("{:.6}", r.median_mrse_pct));
        for v in [&r.summary.median_err_eigenvalue, &r.summary.median_err_eigenfunction] {
            row.extend((0..width).map(|k| v.get(k).map_or(String::new(), |x| format!("{x:.6e}"))));
        }
        lines.push(row.join(","));
    }
    fs::write(out.join("report.csv"), lines.join("\n") + "\n")?;

    let mut cov_lines = vec!["path,level,element,mean_coverage".to_string()];
    for (rel, v) in &coverage {
        let levels = v["levels"].as_array().cloned().unwrap_or_default();
        let means = v["element_mean"].as_array().cloned().unwrap_or_default();
        for (l, level) in levels.iter().enumerate() {
            for (j, m) in means.get(l).and_then(|x| x.as_array()).cloned().unwrap_or_default().iter().enumerate() {
                cov_lines.push(format!("{rel},{level},{j},{:.6}", m.as_f64().unwrap_or(f64::NAN)));
            }
        }
    }
    fs::write(out.join("coverage_report.csv"), cov_lines.join("\n") + "\n")?;
    let table: Vec<_> = studies
        .iter()
        .map(|(rel, r)| json!({ "path": rel, "label": r.label, "replicates": r.summary.replicates, "mean_mrse_pct": r.mean_mrse_pct, "median_mrse_pct": r.median_mrse_pct }))
        .collect();
    write_json(&out.join("report.json"), &json!({ "studies": table, "coverage": coverage.iter().map(|(rel, v)| json!({"path": rel, "element_mean": v["element_mean"], "levels": v["levels"]})).collect::<Vec<_>>() }))?;
    write_run_info(&out, "report", None, &json!({ "results": results }))?;
    Ok(out)
}
