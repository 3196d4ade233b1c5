//! AAPCS64, GNU assembler syntax, ELF relocations.
//!
//! Fixed scratch assignment: `x0` input tuple, `x1` batch count, `x2`
//! output pointer, `x3` node index, `x4` feature index, `x5`/`x6` children,
//! `x7` record base, `x8` temporary, `s0` feature value, `s1` split.
//! Residents in vector registers are stored rotated by 32 bits so the split
//! sits in the low lane and the slots in halfword lanes 3 and 2.

use std::fmt::Write as _;

use super::{Symbols, Walk};
use crate::ir::{Dest, FeatureIndex, Field, IndexSrc, InferenceIR, Inst, Label, VReg};
use crate::planner::{RegClass, Register, TargetDesc};

pub const SCRATCH: [&str; 11] = [
    "x0", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "v0", "v1",
];

// above this many IR instructions conditional branches may be out of range
const FAR_BRANCH_THRESHOLD: usize = 30_000;

fn wv(v: VReg) -> String {
    match v {
        VReg::Int(i) => format!("w{}", 3 + i),
        VReg::Float(_) => panic!("{v} is not an integer register"),
    }
}

fn xv(v: VReg) -> String {
    match v {
        VReg::Int(i) => format!("x{}", 3 + i),
        VReg::Float(_) => panic!("{v} is not an integer register"),
    }
}

fn sv(v: VReg) -> String {
    match v {
        VReg::Float(i) => format!("s{i}"),
        VReg::Int(_) => panic!("{v} is not a float register"),
    }
}

/// `x9` → `w9`, `v16` → `s16` / `d16`.
fn view(name: &str, prefix: char) -> String {
    format!("{prefix}{}", &name[1..])
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Single,
    Batch,
}

struct Lower<'a> {
    walk: Walk<'a>,
    target: &'a TargetDesc,
    syms: &'a Symbols,
    out: String,
    far: bool,
    local: usize,
}

impl Lower<'_> {
    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push('\t');
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn name(&self, r: Register) -> &'static str {
        self.target.name_of(r).expect("checked by lower()")
    }

    fn mov_imm(&mut self, dst: &str, value: u64) {
        self.line(format!("movz {dst}, #{:#x}", value & 0xFFFF));
        for shift in [16, 32, 48] {
            let h = (value >> shift) & 0xFFFF;
            if h != 0 {
                self.line(format!("movk {dst}, #{h:#x}, lsl #{shift}"));
            }
        }
    }

    fn frame(save: &[Register]) -> usize {
        (save.len() * 8).div_ceil(16) * 16
    }

    fn save_restore(&mut self, save: &[Register], store: bool) {
        if save.is_empty() {
            return;
        }
        let size = Self::frame(save);
        if store {
            self.line(format!("sub sp, sp, #{size}"));
        }
        for (i, r) in save.iter().enumerate() {
            let n = self.name(*r);
            let reg = match r.class {
                RegClass::Gpr => n.to_string(),
                RegClass::Fpr => view(n, 'd'),
            };
            let op = if store { "str" } else { "ldr" };
            self.line(format!("{op} {reg}, [sp, #{}]", 8 * i));
        }
        if !store {
            self.line(format!("add sp, sp, #{size}"));
        }
    }

    fn cond_branch(&mut self, cond: &str, inverse: &str, label: &str) {
        if self.far {
            self.local += 1;
            let skip = format!(".Lfar{}_{}", self.syms.func, self.local);
            self.line(format!("b.{inverse} {skip}"));
            self.line(format!("b {label}"));
            let _ = writeln!(self.out, "{skip}:");
        } else {
            self.line(format!("b.{cond} {label}"));
        }
    }

    fn feature_load(&mut self, reg: &str, index: FeatureIndex) {
        match index {
            FeatureIndex::Imm(i) if 4 * i <= 16380 => {
                self.line(format!("ldr {reg}, [x0, #{}]", 4 * i))
            }
            FeatureIndex::Imm(i) => {
                self.mov_imm("x8", 4 * i as u64);
                self.line(format!("ldr {reg}, [x0, x8]"));
            }
            FeatureIndex::Reg(v) => self.line(format!("ldr {reg}, [x0, {}, lsl #2]", xv(v))),
        }
    }

    fn feature_reg(&self, reg: Register) -> String {
        let n = self.name(reg);
        match reg.class {
            RegClass::Fpr => view(n, 's'),
            RegClass::Gpr => view(n, 'w'),
        }
    }

    fn function(&mut self, mode: Mode) {
        let ir = self.walk.ir;
        let func = match mode {
            Mode::Single => self.syms.func.clone(),
            Mode::Batch => self.syms.batch.clone(),
        };
        let _ = write!(
            self.out,
            "\t.p2align 2\n\t.globl {func}\n\t.type {func}, %function\n{func}:\n"
        );
        for at in 0..ir.instructions.len() {
            if at == ir.body_start {
                if mode == Mode::Batch {
                    if self.far {
                        self.local += 1;
                        let skip = format!(".Lfar{}_{}", self.syms.func, self.local);
                        self.line(format!("cbnz x1, {skip}"));
                        self.line(format!("b .L{func}_done"));
                        let _ = writeln!(self.out, "{skip}:");
                    } else {
                        self.line(format!("cbz x1, .L{func}_done"));
                    }
                }
                if ir.meta.uses_records {
                    let data = &self.syms.data;
                    self.line(format!("adrp x7, {data}"));
                    self.line(format!("add x7, x7, :lo12:{data}"));
                }
                if mode == Mode::Batch {
                    let _ = writeln!(self.out, ".L{func}_tuple:");
                }
            }
            for &l in &self.walk.labels_at[at] {
                let _ = writeln!(self.out, ".L{func}_{}:", ir.labels[l].0);
            }
            self.inst(&func, at, mode);
        }
        if mode == Mode::Batch {
            let stride = 4 * ir.meta.num_features as u64;
            let _ = writeln!(self.out, ".L{func}_next:");
            if stride <= 4095 {
                self.line(format!("add x0, x0, #{stride}"));
            } else {
                self.mov_imm("x8", stride);
                self.line("add x0, x0, x8");
            }
            self.line("subs x1, x1, #1");
            let tuple = format!(".L{func}_tuple");
            self.cond_branch("ne", "eq", &tuple);
            let _ = writeln!(self.out, ".L{func}_done:");
            if let Some(Inst::Prologue { save }) = ir.instructions.first() {
                self.save_restore(&save.clone(), false);
            }
            self.line("ret");
        }
        let _ = writeln!(self.out, "\t.size {func}, .-{func}\n");
    }

    fn label(&self, func: &str, l: Label) -> String {
        self.walk.label(func, l)
    }

    fn inst(&mut self, func: &str, at: usize, mode: Mode) {
        let inst = &self.walk.ir.instructions[at];
        match inst {
            Inst::Prologue { save } => self.save_restore(save, true),
            Inst::Epilogue { restore } => {
                if mode == Mode::Single {
                    self.save_restore(restore, false);
                }
            }
            Inst::SetupResident { reg, payload } => {
                let n = self.name(*reg);
                match reg.class {
                    RegClass::Gpr => self.mov_imm(n, *payload),
                    RegClass::Fpr => {
                        self.mov_imm("x8", payload.rotate_left(32));
                        self.line(format!("fmov {}, x8", view(n, 'd')));
                    }
                }
            }
            Inst::PinFeature { feature, reg } => {
                let r = self.feature_reg(*reg);
                self.feature_load(&r, FeatureIndex::Imm(*feature));
            }
            Inst::LoadFeatureMem { index, dst } => {
                let r = match dst {
                    Dest::V(v) => sv(*v),
                    Dest::P(reg) => self.feature_reg(*reg),
                };
                self.feature_load(&r, *index);
            }
            Inst::UseFeatureReg { reg, dst } => {
                let r = self.feature_reg(*reg);
                self.line(format!("fmov {}, {r}", sv(*dst)));
            }
            Inst::LoadNodeRecord {
                index,
                split,
                feature,
                left,
                right,
            } => {
                self.line(format!("add x8, x7, {}, lsl #4", xv(*index)));
                self.line(format!("ldr {}, [x8]", sv(*split)));
                for (off, v) in [(4, feature), (6, left), (8, right)] {
                    self.line(format!("ldrh {}, [x8, #{off}]", wv(*v)));
                }
            }
            Inst::UseNodeReg { reg, field, dst } => {
                let n = self.name(*reg);
                match (reg.class, field) {
                    (RegClass::Gpr, Field::Split) => {
                        self.line(format!("lsr x8, {n}, #32"));
                        self.line(format!("fmov {}, w8", sv(*dst)));
                    }
                    (RegClass::Gpr, Field::SlotA) => {
                        self.line(format!("ubfx {}, {}, #16, #16", wv(*dst), view(n, 'w')))
                    }
                    (RegClass::Gpr, Field::SlotB) => {
                        self.line(format!("uxth {}, {}", wv(*dst), view(n, 'w')))
                    }
                    (RegClass::Fpr, Field::Split) => {
                        self.line(format!("fmov {}, {}", sv(*dst), view(n, 's')))
                    }
                    (RegClass::Fpr, Field::SlotA) => {
                        self.line(format!("umov {}, {n}.h[3]", wv(*dst)))
                    }
                    (RegClass::Fpr, Field::SlotB) => {
                        self.line(format!("umov {}, {n}.h[2]", wv(*dst)))
                    }
                }
            }
            Inst::Const { value, dst } => {
                self.mov_imm("w8", u64::from(value.to_bits()));
                self.line(format!("fmov {}, w8", sv(*dst)));
            }
            Inst::SetIndex { src, dst } => match src {
                IndexSrc::Imm(i) => self.mov_imm(&wv(*dst), u64::from(*i)),
                IndexSrc::V(s) => self.line(format!("mov {}, {}", wv(*dst), wv(*s))),
            },
            Inst::CmpLeBranch {
                a,
                b,
                if_true,
                if_false,
            } => {
                // ls: less or equal, false when unordered
                self.line(format!("fcmp {}, {}", sv(*a), sv(*b)));
                let (lt, lf) = (self.label(func, *if_true), self.label(func, *if_false));
                if self.walk.is_next(at, *if_false) {
                    self.cond_branch("ls", "hi", &lt);
                } else if self.walk.is_next(at, *if_true) {
                    self.cond_branch("hi", "ls", &lf);
                } else {
                    self.cond_branch("ls", "hi", &lt);
                    self.line(format!("b {lf}"));
                }
            }
            Inst::CmpEqBranch { a, imm, target } => {
                if *imm < 4096 {
                    self.line(format!("cmp {}, #{imm}", wv(*a)));
                } else {
                    self.mov_imm("w8", u64::from(*imm));
                    self.line(format!("cmp {}, w8", wv(*a)));
                }
                let l = self.label(func, *target);
                self.cond_branch("eq", "ne", &l);
            }
            Inst::Jmp(t) => {
                if !self.walk.is_next(at, *t) {
                    self.line(format!("b {}", self.label(func, *t)));
                }
            }
            Inst::Return(v) => match mode {
                Mode::Single => {
                    if sv(*v) != "s0" {
                        self.line(format!("fmov s0, {}", sv(*v)));
                    }
                    self.line("ret");
                }
                Mode::Batch => {
                    self.line(format!("str {}, [x2], #4", sv(*v)));
                    self.line(format!("b .L{func}_next"));
                }
            },
        }
    }
}

pub(super) fn lower(ir: &InferenceIR, target: &TargetDesc, syms: &Symbols) -> String {
    let mut l = Lower {
        walk: Walk::new(ir),
        target,
        syms,
        out: format!("// tree {} {}\n\t.text\n", ir.meta.tree_index, ir.meta.kind),
        far: ir.instructions.len() > FAR_BRANCH_THRESHOLD,
        local: 0,
    };
    l.function(Mode::Single);
    l.function(Mode::Batch);
    l.out.push_str("\t.section .note.GNU-stack,\"\",%progbits\n");
    l.out
}
