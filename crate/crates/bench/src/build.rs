//! Emission of every realization of an ensemble into source files.

use std::fmt;
use std::path::{Path, PathBuf};

use regforest::backends::{self, emit_baseline_source, BaselineKind, EmittedUnit, LoweringError};
use regforest::ir::{build_ifelse_baseline, build_native_baseline, build_strategy, BuildError, InferenceIR};
use regforest::planner::plan_ensemble;
use regforest::{Ensemble, PackMode, PlanError, PlanOptions, Strategy, TargetDesc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Lowering(#[from] LoweringError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One way of running every tree of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// C baseline compiled by the system compiler.
    C(BaselineKind),
    /// Baseline IR lowered to assembly.
    AsmNative,
    AsmIfElse,
    Strategy(Strategy, PlanOptions),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::C(k) => f.write_str(k.suffix()),
            Variant::AsmNative => f.write_str("native"),
            Variant::AsmIfElse => f.write_str("ifelse"),
            Variant::Strategy(s, o) => {
                write!(f, "{s}_k{}", o.registers)?;
                if o.mode == PackMode::SplitOnly {
                    f.write_str("_split")?;
                }
                Ok(())
            }
        }
    }
}

/// IR for every tree of a variant; `None` for C baselines.
pub fn variant_irs(
    ensemble: &Ensemble,
    variant: Variant,
    target: &TargetDesc,
) -> Result<Option<Vec<InferenceIR>>, EmitError> {
    let nf = ensemble.num_features;
    let trees = ensemble.trees.iter().enumerate();
    Ok(match variant {
        Variant::C(_) => None,
        Variant::AsmNative => Some(trees.map(|(i, t)| build_native_baseline(t, i, nf)).collect()),
        Variant::AsmIfElse => Some(trees.map(|(i, t)| build_ifelse_baseline(t, i, nf)).collect()),
        Variant::Strategy(s, opts) => {
            let plans = plan_ensemble(ensemble, s, opts, target)?;
            Some(
                trees
                    .zip(&plans)
                    .map(|((_, t), p)| build_strategy(t, p, nf))
                    .collect::<Result<_, _>>()?,
            )
        }
    })
}

pub fn lower_all(irs: &[InferenceIR], target: &TargetDesc) -> Result<Vec<EmittedUnit>, EmitError> {
    Ok(irs
        .iter()
        .map(|ir| backends::lower(ir, target))
        .collect::<Result<_, _>>()?)
}

fn write(path: &Path, text: &str) -> Result<(), EmitError> {
    std::fs::write(path, text).map_err(|source| EmitError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Source files and batch entry points of a variant.
#[derive(Debug, Clone)]
pub struct VariantFiles {
    pub variant: Variant,
    pub sources: Vec<PathBuf>,
    pub batch_symbols: Vec<String>,
}

/// Writes one file per tree into `dir` (named after the variant).
pub fn write_variant(
    ensemble: &Ensemble,
    variant: Variant,
    target: &TargetDesc,
    dir: &Path,
) -> Result<VariantFiles, EmitError> {
    let tag = variant.to_string();
    let mut files = VariantFiles {
        variant,
        sources: Vec::new(),
        batch_symbols: Vec::new(),
    };
    match variant_irs(ensemble, variant, target)? {
        None => {
            let Variant::C(kind) = variant else { unreachable!() };
            for (i, tree) in ensemble.trees.iter().enumerate() {
                let p = dir.join(format!("{tag}_{i}.c"));
                write(&p, &emit_baseline_source(tree, i, ensemble.num_features, kind))?;
                files.sources.push(p);
                files
                    .batch_symbols
                    .push(format!("{}_batch", backends::baseline_symbol(i, kind)));
            }
        }
        Some(irs) => {
            for unit in lower_all(&irs, target)? {
                let p = dir.join(format!("{tag}_{}.s", files.sources.len()));
                write(&p, &unit.assembly)?;
                files.sources.push(p);
                files.batch_symbols.push(unit.batch_symbol);
            }
        }
    }
    Ok(files)
}

/// Record tables of every tree, shared by all assembly variants.
pub fn write_data(ensemble: &Ensemble, target: &TargetDesc, dir: &Path) -> Result<PathBuf, EmitError> {
    let p = dir.join("records.s");
    write(&p, &backends::emit_ensemble_data(ensemble, target.name)?)?;
    Ok(p)
}
