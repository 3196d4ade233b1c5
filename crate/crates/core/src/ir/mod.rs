//! Strategy-neutral inference IR for one tree.
//!
//! An [`InferenceIR`] is a flat instruction list with labels. Instructions
//! before `body_start` run once per batch (register setup); the rest runs
//! once per input tuple and ends every path with `EPILOGUE` + `RETURN`.
//!
//! Virtual registers are few and fixed: the builder only uses [`IDX`],
//! [`FEAT`], [`LEFT`], [`RIGHT`] (integers) and [`XVAL`], [`SPLIT`]
//! (binary32). Backends map each of them to a fixed scratch register.

mod build;
pub mod records;

use std::fmt::{self, Write as _};

use crate::model::NodeId;
use crate::planner::{Register, Strategy};

pub use build::{build_ifelse_baseline, build_native_baseline, build_strategy, BuildError};
pub use records::{Record, RecordError, RecordTable, RECORD_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VReg {
    Int(u8),
    Float(u8),
}

pub const IDX: VReg = VReg::Int(0);
pub const FEAT: VReg = VReg::Int(1);
pub const LEFT: VReg = VReg::Int(2);
pub const RIGHT: VReg = VReg::Int(3);
pub const XVAL: VReg = VReg::Float(0);
pub const SPLIT: VReg = VReg::Float(1);

pub const NUM_INT_VREGS: usize = 4;
pub const NUM_FLOAT_VREGS: usize = 2;

impl fmt::Display for VReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VReg::Int(i) => write!(f, "vi{i}"),
            VReg::Float(i) => write!(f, "vf{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(pub u32);

/// Field of a packed node payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Split,
    SlotA,
    SlotB,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Split => "split",
            Field::SlotA => "slot_a",
            Field::SlotB => "slot_b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureIndex {
    Imm(usize),
    Reg(VReg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    V(VReg),
    P(Register),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexSrc {
    Imm(u32),
    V(VReg),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inst {
    Prologue {
        save: Vec<Register>,
    },
    Epilogue {
        restore: Vec<Register>,
    },
    /// Materializes a packed node payload in a reserved register.
    SetupResident {
        reg: Register,
        payload: u64,
    },
    /// Loads a feature value into its pinned register for the current tuple.
    PinFeature {
        feature: usize,
        reg: Register,
    },
    LoadFeatureMem {
        index: FeatureIndex,
        dst: Dest,
    },
    UseFeatureReg {
        reg: Register,
        dst: VReg,
    },
    /// Loads the record at `index`. `index` is consumed: it is undefined
    /// afterwards unless it is also one of the destinations.
    LoadNodeRecord {
        index: VReg,
        split: VReg,
        feature: VReg,
        left: VReg,
        right: VReg,
    },
    UseNodeReg {
        reg: Register,
        field: Field,
        dst: VReg,
    },
    Const {
        value: f32,
        dst: VReg,
    },
    SetIndex {
        src: IndexSrc,
        dst: VReg,
    },
    /// Branches to `if_true` when `a <= b` as binary32 (false on NaN).
    CmpLeBranch {
        a: VReg,
        b: VReg,
        if_true: Label,
        if_false: Label,
    },
    /// Integer equality; falls through when unequal.
    CmpEqBranch {
        a: VReg,
        imm: u32,
        target: Label,
    },
    Jmp(Label),
    Return(VReg),
}

impl Inst {
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Inst::CmpLeBranch { .. } | Inst::Jmp(_) | Inst::Return(_)
        )
    }

    pub fn labels(&self) -> Vec<Label> {
        match self {
            Inst::CmpLeBranch {
                if_true, if_false, ..
            } => vec![*if_true, *if_false],
            Inst::CmpEqBranch { target, .. } | Inst::Jmp(target) => vec![*target],
            _ => Vec::new(),
        }
    }
}

/// Which realization a tree's IR implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrKind {
    NativeBaseline,
    IfElseBaseline,
    Strategy(Strategy),
}

impl fmt::Display for IrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrKind::NativeBaseline => f.write_str("native"),
            IrKind::IfElseBaseline => f.write_str("ifelse"),
            IrKind::Strategy(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrMeta {
    pub kind: IrKind,
    pub tree_index: usize,
    pub num_features: usize,
    /// Reserved registers written by the code.
    pub clobbers: Vec<Register>,
    /// Whether the code reads the native record table.
    pub uses_records: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceIR {
    pub instructions: Vec<Inst>,
    /// Label id → (name, instruction index).
    pub labels: Vec<(String, usize)>,
    /// Tree node each instruction implements, if any.
    pub origins: Vec<Option<NodeId>>,
    pub body_start: usize,
    pub meta: IrMeta,
}

impl InferenceIR {
    pub fn target_of(&self, label: Label) -> usize {
        self.labels[label.0 as usize].1
    }

    pub fn label_name(&self, label: Label) -> &str {
        &self.labels[label.0 as usize].0
    }

    /// Instructions and labels only, ignoring metadata.
    pub fn same_code(&self, other: &InferenceIR) -> bool {
        self.instructions == other.instructions
            && self.labels == other.labels
            && self.body_start == other.body_start
    }

    pub fn count(&self, pred: impl Fn(&Inst) -> bool) -> usize {
        self.instructions.iter().filter(|i| pred(i)).count()
    }

    /// Checks the structural invariants of a well-formed IR.
    pub fn validate(&self) -> Result<(), String> {
        if !matches!(self.instructions.first(), Some(Inst::Prologue { .. })) {
            return Err("first instruction is not PROLOGUE".into());
        }
        if self.count(|i| matches!(i, Inst::Prologue { .. })) != 1 {
            return Err("more than one PROLOGUE".into());
        }
        if self.origins.len() != self.instructions.len() {
            return Err("origin table length mismatch".into());
        }
        if self.body_start == 0 || self.body_start > self.instructions.len() {
            return Err("body start out of range".into());
        }
        for (at, inst) in self.instructions.iter().enumerate() {
            for l in inst.labels() {
                match self.labels.get(l.0 as usize) {
                    Some((_, t)) if *t < self.instructions.len() => {}
                    _ => return Err(format!("instruction {at} references unbound label {}", l.0)),
                }
            }
            if matches!(inst, Inst::Return(_))
                && !matches!(
                    at.checked_sub(1).map(|p| &self.instructions[p]),
                    Some(Inst::Epilogue { .. })
                )
            {
                return Err(format!("RETURN at {at} not preceded by EPILOGUE"));
            }
            if at < self.body_start
                && !matches!(inst, Inst::Prologue { .. } | Inst::SetupResident { .. })
            {
                return Err(format!("instruction {at} is per-tuple code in the setup section"));
            }
        }
        if !self.instructions.last().is_some_and(Inst::is_terminator) {
            return Err("code falls off the end".into());
        }
        let chains = self.count(|i| {
            matches!(i, Inst::CmpEqBranch { imm, .. } if *imm != u32::from(crate::model::LEAF_SENTINEL))
        });
        let chain_ok = matches!(
            self.meta.kind,
            IrKind::Strategy(Strategy::NativeNode) | IrKind::Strategy(Strategy::StaticFeature)
        );
        if chains > 0 && !chain_ok {
            return Err("comparison chain outside native node / static feature code".into());
        }
        Ok(())
    }

    /// Line-oriented text: one instruction per line, labels suffixed `:`.
    pub fn to_text(&self) -> String {
        let mut by_pos: Vec<Vec<&str>> = vec![Vec::new(); self.instructions.len() + 1];
        for (name, at) in &self.labels {
            by_pos[*at].push(name);
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "; tree {} {} features={}",
            self.meta.tree_index, self.meta.kind, self.meta.num_features
        );
        for (at, inst) in self.instructions.iter().enumerate() {
            if at == self.body_start && by_pos[at].is_empty() {
                let _ = writeln!(out, "; per-tuple body");
            }
            for name in &by_pos[at] {
                let _ = writeln!(out, "{name}:");
            }
            let _ = writeln!(out, "    {}", self.fmt_inst(inst));
        }
        out
    }

    fn fmt_inst(&self, inst: &Inst) -> String {
        let regs = |rs: &[Register]| {
            rs.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        };
        let l = |label: &Label| self.label_name(*label).to_string();
        match inst {
            Inst::Prologue { save } => format!("PROLOGUE [{}]", regs(save)),
            Inst::Epilogue { restore } => format!("EPILOGUE [{}]", regs(restore)),
            Inst::SetupResident { reg, payload } => {
                format!("SETUP_RESIDENT {reg}, {payload:#018x}")
            }
            Inst::PinFeature { feature, reg } => format!("PIN_FEATURE #{feature} -> {reg}"),
            Inst::LoadFeatureMem { index, dst } => {
                let idx = match index {
                    FeatureIndex::Imm(i) => format!("#{i}"),
                    FeatureIndex::Reg(v) => v.to_string(),
                };
                let dst = match dst {
                    Dest::V(v) => v.to_string(),
                    Dest::P(r) => r.to_string(),
                };
                format!("LOAD_FEATURE_MEM {idx} -> {dst}")
            }
            Inst::UseFeatureReg { reg, dst } => format!("USE_FEATURE_REG {reg} -> {dst}"),
            Inst::LoadNodeRecord {
                index,
                split,
                feature,
                left,
                right,
            } => format!("LOAD_NODE_RECORD {index} -> {split}, {feature}, {left}, {right}"),
            Inst::UseNodeReg { reg, field, dst } => format!("USE_NODE_REG {reg}.{field} -> {dst}"),
            Inst::Const { value, dst } => {
                format!("CONST {:#010x} -> {dst} ; {value:?}", value.to_bits())
            }
            Inst::SetIndex { src, dst } => match src {
                IndexSrc::Imm(i) => format!("SET_INDEX #{i} -> {dst}"),
                IndexSrc::V(v) => format!("SET_INDEX {v} -> {dst}"),
            },
            Inst::CmpLeBranch {
                a,
                b,
                if_true,
                if_false,
            } => format!("CMP_LE_BRANCH {a}, {b}, {}, {}", l(if_true), l(if_false)),
            Inst::CmpEqBranch { a, imm, target } => {
                format!("CMP_EQ_BRANCH {a}, #{imm}, {}", l(target))
            }
            Inst::Jmp(t) => format!("JMP {}", l(t)),
            Inst::Return(v) => format!("RETURN {v}"),
        }
    }
}
