//! The measurement loop: validate, build, time, normalize.

use std::path::{Path, PathBuf};

use regforest::backends::BaselineKind;
use regforest::planner::{select_layers, Family};
use regforest::verifier::differential_check;
use regforest::{load_model, Ensemble, PackMode, PlanOptions, Strategy, TargetDesc, TargetName};

use crate::build::{self, Variant, VariantFiles};
use crate::dataset::read_csv;
use crate::report::{self, BenchReport, Directional, SelfCheck, SizeClass};
use crate::runner::{Linker, RunOutput};
use crate::toolchain::Toolchain;
use crate::BenchError;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub model: PathBuf,
    pub datasets: Vec<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub registers: Vec<usize>,
    pub reps: usize,
    /// Rows used per dataset; all when `None`.
    pub batch_size: Option<usize>,
    pub target: TargetName,
    pub mode: PackMode,
    pub toolchain: Toolchain,
    /// Rows per dataset run through the IR interpreter before building.
    pub validate_rows: usize,
    /// Keeps build products here instead of a temporary directory.
    pub work_dir: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(model: PathBuf, datasets: Vec<PathBuf>) -> Self {
        BenchConfig {
            model,
            datasets,
            strategies: Strategy::ALL.to_vec(),
            registers: vec![5, 10, 20],
            reps: 5,
            batch_size: None,
            target: TargetDesc::host().map_or(TargetName::X86_64, |t| t.name),
            mode: PackMode::FullNode,
            toolchain: Toolchain::from_env(),
            validate_rows: 500,
            work_dir: None,
        }
    }
}

/// Register counts measured for `strategy`. Hybrid layer only moves at
/// whole layers, so each k becomes the largest number of registers any
/// tree fills with complete layers.
pub fn sweep_ks(strategy: Strategy, ks: &[usize], ensemble: &Ensemble) -> Vec<usize> {
    let mut out = Vec::new();
    for &k in ks {
        let k = if strategy == Strategy::HybridLayer {
            ensemble
                .trees
                .iter()
                .map(|t| select_layers(t, k).1.len())
                .max()
                .unwrap_or(0)
        } else {
            k
        };
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn baseline_name(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::Native => "native",
        BaselineKind::IfElse => "ifelse",
    }
}

/// Baselines a strategy is normalized to.
pub fn baselines_for(strategy: Strategy) -> Vec<BaselineKind> {
    match (strategy.family(), strategy.is_hybrid()) {
        (_, true) => vec![BaselineKind::Native, BaselineKind::IfElse],
        (Family::Native, false) => vec![BaselineKind::Native],
        (Family::IfElse, false) => vec![BaselineKind::IfElse],
    }
}

/// Every host prediction of every variant must equal direct inference.
fn check_predictions(
    ensemble: &Ensemble,
    xs: &[Vec<f32>],
    out: &RunOutput,
    names: &[String],
) -> Result<(), BenchError> {
    for (v, name) in names.iter().enumerate() {
        for (t, tree) in ensemble.trees.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                let got = out.prediction(v, t, i, xs.len());
                let want = tree.infer(x);
                if got.to_bits() != want.to_bits() {
                    return Err(BenchError::Validation(format!(
                        "{name}: tree {t} row {i} returned {got}, expected {want}"
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let bytes = std::fs::read(&cfg.model).map_err(|e| BenchError::io(&cfg.model, e))?;
    let ensemble = load_model(&bytes)?;
    let mut datasets = Vec::new();
    for p in &cfg.datasets {
        let name = p
            .file_stem()
            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        datasets.push((name, read_csv(p)?));
    }
    run_bench_on(&ensemble, &datasets, cfg)
}

/// Same as [`run_bench`] with the model and datasets already in memory.
pub fn run_bench_on(
    ensemble: &Ensemble,
    datasets: &[(String, Vec<Vec<f32>>)],
    cfg: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if cfg.reps < 3 {
        return Err(BenchError::Config(format!("{} repetitions, at least 3 needed", cfg.reps)));
    }
    let target = TargetDesc::new(cfg.target);
    if TargetDesc::host().map(|t| t.name) != Some(cfg.target) {
        return Err(BenchError::Config(format!("cannot run {} code on this host", cfg.target)));
    }
    for (name, rows) in datasets {
        if let Some(r) = rows.iter().find(|r| r.len() != ensemble.num_features) {
            return Err(BenchError::Config(format!(
                "dataset {name} has {} features, model expects {}",
                r.len(),
                ensemble.num_features
            )));
        }
    }
    let tmp;
    let dir: &Path = match &cfg.work_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| BenchError::io(d, e))?;
            d
        }
        None => {
            tmp = tempfile::tempdir().map_err(|e| BenchError::io(Path::new("tempdir"), e))?;
            tmp.path()
        }
    };
    let size_class = SizeClass::of_depth(ensemble.max_depth());
    let mut linker = Linker::new(&cfg.toolchain, dir);
    let native_c = build::write_variant(ensemble, Variant::C(BaselineKind::Native), &target, dir)?;
    let ifelse_c = build::write_variant(ensemble, Variant::C(BaselineKind::IfElse), &target, dir)?;
    let data = build::write_data(ensemble, &target, dir)?;
    let mut report = BenchReport::default();

    for (dname, rows) in datasets {
        let xs: Vec<Vec<f32>> = match cfg.batch_size {
            Some(b) => rows.iter().take(b).cloned().collect(),
            None => rows.clone(),
        };
        let check_rows = &xs[..xs.len().min(cfg.validate_rows)];

        // baselines against themselves
        let variants = [native_c.clone(), ifelse_c.clone(), native_c.clone(), ifelse_c.clone()];
        let runner = linker.runner("baselines", &variants, &[], ensemble.trees.len(), ensemble.num_features)?;
        let out = runner.run(&xs, cfg.reps)?;
        check_predictions(ensemble, &xs, &out, &["native_c".into(), "ifelse_c".into()])?;
        for (i, kind) in [BaselineKind::Native, BaselineKind::IfElse].into_iter().enumerate() {
            let name = baseline_name(kind);
            let row = report::normalize(name, 0, dname, name, size_class, &out.times[i], &out.times[i]);
            report.self_checks.push(SelfCheck {
                baseline: name.into(),
                dataset: dname.clone(),
                self_normalized: row.normalized_time,
                rerun_ratio: report::median(&out.times[i + 2]) / report::median(&out.times[i]),
            });
            report.rows.push(row);
        }

        for &s in &cfg.strategies {
            for k in sweep_ks(s, &cfg.registers, ensemble) {
                if s == Strategy::StaticFeature && k > target.usable_fpr.len() {
                    report.skipped.push(format!(
                        "{s} k={k}: only {} usable FPRs on {}",
                        target.usable_fpr.len(),
                        target.name
                    ));
                    continue;
                }
                let opts = PlanOptions::new(k, cfg.mode);
                let verdict = differential_check(ensemble, &[s], opts, &target, check_rows)
                    .map_err(|e| BenchError::Validation(format!("{s} k={k}: {e}")))?;
                if !verdict.passed() {
                    return Err(BenchError::Validation(format!(
                        "{s} k={k}: {} mismatches, {} residency violations in the IR check",
                        verdict.mismatches.len(),
                        verdict.violations.len()
                    )));
                }
                let variant = Variant::Strategy(s, opts);
                let files: VariantFiles = build::write_variant(ensemble, variant, &target, dir)?;
                let name = format!("run_{variant}");
                let runner = linker.runner(
                    &name,
                    &[native_c.clone(), ifelse_c.clone(), files],
                    std::slice::from_ref(&data),
                    ensemble.trees.len(),
                    ensemble.num_features,
                )?;
                let out = runner.run(&xs, cfg.reps)?;
                check_predictions(
                    ensemble,
                    &xs,
                    &out,
                    &["native_c".into(), "ifelse_c".into(), variant.to_string()],
                )?;
                for kind in baselines_for(s) {
                    let b = match kind {
                        BaselineKind::Native => 0,
                        BaselineKind::IfElse => 1,
                    };
                    report.rows.push(report::normalize(
                        s.abbrev(),
                        k,
                        dname,
                        baseline_name(kind),
                        size_class,
                        &out.times[2],
                        &out.times[b],
                    ));
                }
            }
        }
    }
    report.geomeans = report::geomeans(&report.rows);
    let hn: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.strategy == Strategy::HybridNode.abbrev() && r.baseline == "native")
        .map(|r| r.normalized_time)
        .collect();
    if !hn.is_empty() {
        let g = report::geomean(&hn);
        report.directional = Some(Directional {
            strategy: Strategy::HybridNode.abbrev().into(),
            baseline: "native".into(),
            geomean: g,
            holds: g < 1.0,
        });
    }
    Ok(report)
}
