//! Reference interpreter for [`InferenceIR`].

use std::collections::HashMap;

use thiserror::Error;

use crate::ir::{
    Dest, FeatureIndex, Field, IndexSrc, InferenceIR, Inst, RecordTable, VReg, NUM_FLOAT_VREGS,
    NUM_INT_VREGS,
};
use crate::model::NodeId;
use crate::planner::Register;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trap at instruction {at}: {reason}")]
pub struct TrapError {
    pub at: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLoad {
    pub at: usize,
    pub node: NodeId,
    pub leaf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLoad {
    pub at: usize,
    pub feature: usize,
}

/// What one tuple's execution touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecTrace {
    pub returned: f32,
    /// Indices of executed instructions, setup included on the first tuple.
    pub executed: Vec<usize>,
    pub record_loads: Vec<RecordLoad>,
    /// Feature reads from the input tuple, pinning excluded.
    pub feature_loads: Vec<FeatureLoad>,
    pub pin_loads: Vec<FeatureLoad>,
    pub reg_reads: Vec<(usize, Register)>,
    pub reg_writes: Vec<(usize, Register)>,
}

impl ExecTrace {
    pub fn decision_loads(&self) -> usize {
        self.record_loads.iter().filter(|l| !l.leaf).count()
    }
}

pub const DEFAULT_STEP_LIMIT: usize = 1 << 20;

/// Interpreter state that survives between tuples of a batch: the reserved
/// register file.
pub struct Machine<'a> {
    ir: &'a InferenceIR,
    records: &'a RecordTable,
    regs: HashMap<Register, u64>,
    resident_regs: Vec<Register>,
    pub step_limit: usize,
    set_up: bool,
}

#[derive(Default)]
struct VRegs {
    ints: [Option<u32>; NUM_INT_VREGS],
    floats: [Option<f32>; NUM_FLOAT_VREGS],
}

fn trap<T>(at: usize, reason: impl Into<String>) -> Result<T, TrapError> {
    Err(TrapError {
        at,
        reason: reason.into(),
    })
}

impl VRegs {
    fn int(&self, at: usize, v: VReg) -> Result<u32, TrapError> {
        match v {
            VReg::Int(i) => match self.ints.get(i as usize) {
                Some(Some(x)) => Ok(*x),
                Some(None) => trap(at, format!("read of undefined {v}")),
                None => trap(at, format!("no such register {v}")),
            },
            VReg::Float(_) => trap(at, format!("{v} used as an integer")),
        }
    }

    fn float(&self, at: usize, v: VReg) -> Result<f32, TrapError> {
        match v {
            VReg::Float(i) => match self.floats.get(i as usize) {
                Some(Some(x)) => Ok(*x),
                Some(None) => trap(at, format!("read of undefined {v}")),
                None => trap(at, format!("no such register {v}")),
            },
            VReg::Int(_) => trap(at, format!("{v} used as a float")),
        }
    }

    fn set_int(&mut self, at: usize, v: VReg, x: Option<u32>) -> Result<(), TrapError> {
        match v {
            VReg::Int(i) if (i as usize) < NUM_INT_VREGS => {
                self.ints[i as usize] = x;
                Ok(())
            }
            _ => trap(at, format!("{v} is not an integer register")),
        }
    }

    fn set_float(&mut self, at: usize, v: VReg, x: f32) -> Result<(), TrapError> {
        match v {
            VReg::Float(i) if (i as usize) < NUM_FLOAT_VREGS => {
                self.floats[i as usize] = Some(x);
                Ok(())
            }
            _ => trap(at, format!("{v} is not a float register")),
        }
    }
}

impl<'a> Machine<'a> {
    pub fn new(ir: &'a InferenceIR, records: &'a RecordTable) -> Self {
        let resident_regs = ir
            .instructions
            .iter()
            .filter_map(|i| match i {
                Inst::SetupResident { reg, .. } => Some(*reg),
                _ => None,
            })
            .collect();
        Machine {
            ir,
            records,
            regs: HashMap::new(),
            resident_regs,
            step_limit: DEFAULT_STEP_LIMIT,
            set_up: false,
        }
    }

    /// Current content of a reserved register.
    pub fn reg(&self, reg: Register) -> Option<u64> {
        self.regs.get(&reg).copied()
    }

    fn read_reg(&self, at: usize, reg: Register, trace: &mut ExecTrace) -> Result<u64, TrapError> {
        trace.reg_reads.push((at, reg));
        match self.regs.get(&reg) {
            Some(v) => Ok(*v),
            None => trap(at, format!("read of unwritten register {reg}")),
        }
    }

    fn feature(&self, at: usize, x: &[f32], i: usize) -> Result<f32, TrapError> {
        if i >= self.ir.meta.num_features {
            return trap(at, format!("feature index {i} out of range"));
        }
        match x.get(i) {
            Some(v) => Ok(*v),
            None => trap(at, format!("feature index {i} beyond the input tuple")),
        }
    }

    /// Runs one tuple. The setup section runs only on the first call.
    pub fn run(&mut self, x: &[f32]) -> Result<ExecTrace, TrapError> {
        let ir = self.ir;
        let mut trace = ExecTrace::default();
        let mut v = VRegs::default();
        let mut pc = if self.set_up { ir.body_start } else { 0 };
        let mut saved: Option<Vec<Register>> = None;
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > self.step_limit {
                return trap(pc, "step limit exceeded");
            }
            let Some(inst) = ir.instructions.get(pc) else {
                return trap(pc, "fell off the end of the code");
            };
            if pc == ir.body_start {
                self.set_up = true;
            }
            let at = pc;
            trace.executed.push(at);
            pc += 1;
            match inst {
                Inst::Prologue { save } => saved = Some(save.clone()),
                Inst::Epilogue { restore } => {
                    // the prologue runs once per batch; later tuples enter at
                    // the body with the same save set
                    let expected = saved.clone().or_else(|| match ir.instructions.first() {
                        Some(Inst::Prologue { save }) => Some(save.clone()),
                        _ => None,
                    });
                    if expected.as_ref() != Some(restore) {
                        return trap(at, "epilogue does not restore the saved registers");
                    }
                }
                Inst::SetupResident { reg, payload } => {
                    trace.reg_writes.push((at, *reg));
                    self.regs.insert(*reg, *payload);
                }
                Inst::PinFeature { feature, reg } => {
                    let value = self.feature(at, x, *feature)?;
                    trace.pin_loads.push(FeatureLoad {
                        at,
                        feature: *feature,
                    });
                    trace.reg_writes.push((at, *reg));
                    self.regs.insert(*reg, u64::from(value.to_bits()));
                }
                Inst::LoadFeatureMem { index, dst } => {
                    let i = match index {
                        FeatureIndex::Imm(i) => *i,
                        FeatureIndex::Reg(r) => v.int(at, *r)? as usize,
                    };
                    let value = self.feature(at, x, i)?;
                    trace.feature_loads.push(FeatureLoad { at, feature: i });
                    match dst {
                        Dest::V(d) => v.set_float(at, *d, value)?,
                        Dest::P(reg) => {
                            if self.resident_regs.contains(reg) {
                                return trap(at, format!("feature load overwrites resident {reg}"));
                            }
                            trace.reg_writes.push((at, *reg));
                            self.regs.insert(*reg, u64::from(value.to_bits()));
                        }
                    }
                }
                Inst::UseFeatureReg { reg, dst } => {
                    let bits = self.read_reg(at, *reg, &mut trace)?;
                    v.set_float(at, *dst, f32::from_bits(bits as u32))?;
                }
                Inst::LoadNodeRecord {
                    index,
                    split,
                    feature,
                    left,
                    right,
                } => {
                    let i = v.int(at, *index)? as usize;
                    let Some(rec) = self.records.get(i) else {
                        return trap(at, format!("record index {i} out of range"));
                    };
                    trace.record_loads.push(RecordLoad {
                        at,
                        node: i,
                        leaf: rec.is_leaf(),
                    });
                    v.set_int(at, *index, None)?;
                    v.set_float(at, *split, rec.value)?;
                    v.set_int(at, *feature, Some(u32::from(rec.feature)))?;
                    v.set_int(at, *left, Some(u32::from(rec.left)))?;
                    v.set_int(at, *right, Some(u32::from(rec.right)))?;
                }
                Inst::UseNodeReg { reg, field, dst } => {
                    let bits = self.read_reg(at, *reg, &mut trace)?;
                    match field {
                        Field::Split => v.set_float(at, *dst, f32::from_bits((bits >> 32) as u32))?,
                        Field::SlotA => v.set_int(at, *dst, Some(u32::from((bits >> 16) as u16)))?,
                        Field::SlotB => v.set_int(at, *dst, Some(u32::from(bits as u16)))?,
                    }
                }
                Inst::Const { value, dst } => v.set_float(at, *dst, *value)?,
                Inst::SetIndex { src, dst } => {
                    let value = match src {
                        IndexSrc::Imm(i) => *i,
                        IndexSrc::V(s) => v.int(at, *s)?,
                    };
                    v.set_int(at, *dst, Some(value))?;
                }
                Inst::CmpLeBranch {
                    a,
                    b,
                    if_true,
                    if_false,
                } => {
                    let taken = v.float(at, *a)? <= v.float(at, *b)?;
                    pc = self.jump(at, if taken { *if_true } else { *if_false })?;
                }
                Inst::CmpEqBranch { a, imm, target } => {
                    if v.int(at, *a)? == *imm {
                        pc = self.jump(at, *target)?;
                    }
                }
                Inst::Jmp(target) => pc = self.jump(at, *target)?,
                Inst::Return(r) => {
                    trace.returned = v.float(at, *r)?;
                    return Ok(trace);
                }
            }
        }
    }

    fn jump(&self, at: usize, label: crate::ir::Label) -> Result<usize, TrapError> {
        match self.ir.labels.get(label.0 as usize) {
            Some((_, t)) if *t < self.ir.instructions.len() => {
                if *t < self.ir.body_start {
                    return trap(at, "branch into the setup section");
                }
                Ok(*t)
            }
            _ => trap(at, format!("unbound label {}", label.0)),
        }
    }
}

/// Interprets a single tuple with a fresh register file.
pub fn interpret(ir: &InferenceIR, records: &RecordTable, x: &[f32]) -> Result<ExecTrace, TrapError> {
    Machine::new(ir, records).run(x)
}

/// Interprets a batch: setup runs once, the body once per tuple.
pub fn interpret_batch(
    ir: &InferenceIR,
    records: &RecordTable,
    xs: &[Vec<f32>],
) -> Result<Vec<ExecTrace>, TrapError> {
    let mut m = Machine::new(ir, records);
    xs.iter().map(|x| m.run(x)).collect()
}
