//! Lowering of [`InferenceIR`] to GNU assembler text, and portable C source
//! for the two baselines.
//!
//! Every tree gets two entry points:
//!
//! * `forest_tree_<i>_<kind>(const float *x) -> float` for one tuple, and
//! * `forest_tree_<i>_<kind>_batch(const float *x, uint64_t n, float *out)`
//!   which walks `n` consecutive tuples. Resident registers are set up once
//!   per batch call.
//!
//! Native record tables live in a separate data unit under
//! `forest_tree_<i>_nodes` so that all realizations of a tree share one table.

mod aarch64;
mod csource;
mod x86_64;

use thiserror::Error;

pub use csource::{baseline_symbol, emit_baseline_source, BaselineKind};

use crate::ir::{InferenceIR, Inst, IrKind, RecordError, RecordTable};
use crate::model::{Ensemble, Tree};
use crate::planner::{Register, TargetDesc, TargetName};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoweringError {
    #[error("target {0} cannot be lowered to assembly")]
    UnsupportedTarget(TargetName),
    #[error("register {reg} is outside the {target} usable set")]
    Register { reg: Register, target: TargetName },
    #[error("register {reg} is callee-saved on {target} but not saved")]
    Unsaved { reg: Register, target: TargetName },
    #[error(transparent)]
    Records(#[from] RecordError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedUnit {
    pub target: TargetName,
    pub symbol: String,
    pub batch_symbol: String,
    /// Record table symbol referenced by the code, if it reads records.
    pub data_symbol: Option<String>,
    pub assembly: String,
    /// Reserved registers the code writes, by physical name.
    pub clobbers: Vec<String>,
    /// Scratch registers the code uses besides the argument registers.
    pub scratch: Vec<&'static str>,
}

pub fn kind_suffix(kind: IrKind) -> String {
    match kind {
        IrKind::NativeBaseline => "native".into(),
        IrKind::IfElseBaseline => "ifelse".into(),
        IrKind::Strategy(s) => s.abbrev().into(),
    }
}

pub fn symbol_name(tree_index: usize, kind: IrKind) -> String {
    format!("forest_tree_{tree_index}_{}", kind_suffix(kind))
}

pub fn data_symbol(tree_index: usize) -> String {
    format!("forest_tree_{tree_index}_nodes")
}

pub(crate) struct Symbols {
    pub func: String,
    pub batch: String,
    pub data: String,
}

/// Every reserved register the IR mentions.
fn registers_of(ir: &InferenceIR) -> Vec<Register> {
    let mut regs: Vec<Register> = ir
        .instructions
        .iter()
        .flat_map(|i| match i {
            Inst::Prologue { save } => save.clone(),
            Inst::Epilogue { restore } => restore.clone(),
            Inst::SetupResident { reg, .. }
            | Inst::PinFeature { reg, .. }
            | Inst::UseFeatureReg { reg, .. }
            | Inst::UseNodeReg { reg, .. } => vec![*reg],
            Inst::LoadFeatureMem {
                dst: crate::ir::Dest::P(reg),
                ..
            } => vec![*reg],
            _ => Vec::new(),
        })
        .collect();
    regs.sort();
    regs.dedup();
    regs
}

pub fn lower(ir: &InferenceIR, target: &TargetDesc) -> Result<EmittedUnit, LoweringError> {
    if target.name == TargetName::Abstract {
        return Err(LoweringError::UnsupportedTarget(target.name));
    }
    let regs = registers_of(ir);
    for &reg in &regs {
        if target.name_of(reg).is_none() {
            return Err(LoweringError::Register {
                reg,
                target: target.name,
            });
        }
    }
    let saved = match ir.instructions.first() {
        Some(Inst::Prologue { save }) => save.clone(),
        _ => Vec::new(),
    };
    for &reg in &regs {
        if target.is_callee_saved(reg) && !saved.contains(&reg) {
            return Err(LoweringError::Unsaved {
                reg,
                target: target.name,
            });
        }
    }
    let symbol = symbol_name(ir.meta.tree_index, ir.meta.kind);
    let syms = Symbols {
        batch: format!("{symbol}_batch"),
        data: data_symbol(ir.meta.tree_index),
        func: symbol.clone(),
    };
    let (assembly, scratch) = match target.name {
        TargetName::X86_64 => (x86_64::lower(ir, target, &syms), x86_64::SCRATCH.to_vec()),
        TargetName::Aarch64 => (aarch64::lower(ir, target, &syms), aarch64::SCRATCH.to_vec()),
        TargetName::Abstract => unreachable!(),
    };
    Ok(EmittedUnit {
        target: target.name,
        symbol,
        batch_symbol: syms.batch,
        data_symbol: ir.meta.uses_records.then_some(syms.data),
        assembly,
        clobbers: regs
            .iter()
            .filter_map(|r| target.name_of(*r).map(String::from))
            .collect(),
        scratch,
    })
}

/// Read-only data unit holding the record tables of `trees`.
pub fn emit_data<'a>(
    trees: impl IntoIterator<Item = (usize, &'a Tree)>,
    target: TargetName,
) -> Result<String, LoweringError> {
    let (comment, ty) = match target {
        TargetName::X86_64 => ("#", "@"),
        TargetName::Aarch64 => ("//", "%"),
        TargetName::Abstract => return Err(LoweringError::UnsupportedTarget(target)),
    };
    let mut out = format!("{comment} native node records, 16 bytes each\n\t.section .rodata\n");
    for (i, tree) in trees {
        let table = RecordTable::from_tree(tree)?;
        let sym = data_symbol(i);
        out.push_str(&format!(
            "\t.p2align 4\n\t.globl {sym}\n\t.type {sym}, {ty}object\n\t.size {sym}, {}\n{sym}:\n",
            table.bytes().len()
        ));
        for r in (0..table.len()).map(|k| table.get(k).expect("in range")) {
            out.push_str(&format!(
                "\t.long {:#010x}\n\t.short {}, {}, {}\n\t.zero 6\n",
                r.value.to_bits(),
                r.feature,
                r.left,
                r.right
            ));
        }
    }
    out.push_str(&format!("\t.section .note.GNU-stack,\"\",{ty}progbits\n"));
    Ok(out)
}

pub fn emit_ensemble_data(ensemble: &Ensemble, target: TargetName) -> Result<String, LoweringError> {
    emit_data(ensemble.trees.iter().enumerate(), target)
}

/// Shared walk over the IR for both targets. `Return` and `Epilogue` depend
/// on whether the code is the single-tuple or the batch entry point.
pub(crate) struct Walk<'a> {
    pub ir: &'a InferenceIR,
    pub labels_at: Vec<Vec<usize>>,
}

impl<'a> Walk<'a> {
    pub fn new(ir: &'a InferenceIR) -> Self {
        let mut labels_at = vec![Vec::new(); ir.instructions.len() + 1];
        for (i, (_, at)) in ir.labels.iter().enumerate() {
            labels_at[*at].push(i);
        }
        Walk { ir, labels_at }
    }

    pub fn label(&self, func: &str, label: crate::ir::Label) -> String {
        format!(".L{func}_{}", self.ir.label_name(label))
    }

    /// Whether `label` is bound to the instruction right after `at`.
    pub fn is_next(&self, at: usize, label: crate::ir::Label) -> bool {
        self.ir.target_of(label) == at + 1
    }
}
