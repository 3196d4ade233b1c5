//! System V x86-64, AT&T syntax.
//!
//! Fixed scratch assignment: `rdi` input tuple, `rsi` batch count, `r11`
//! output pointer, `rdx` temporary / record base, `rax` node index,
//! `r8` feature index, `r9`/`rcx` children, `xmm0` feature value,
//! `xmm1` split. Residents in xmm registers are stored rotated by 32 bits so
//! the split sits in the low lane.

use std::fmt::Write as _;

use super::{Symbols, Walk};
use crate::ir::{Dest, FeatureIndex, Field, IndexSrc, InferenceIR, Inst, VReg};
use crate::planner::{RegClass, Register, TargetDesc};

pub const SCRATCH: [&str; 10] = [
    "rax", "rcx", "rdx", "rsi", "rdi", "r8", "r9", "r11", "xmm0", "xmm1",
];

const INT_VREGS: [&str; 4] = ["rax", "r8", "r9", "rcx"];

fn sub32(r: &str) -> String {
    match r {
        "rax" | "rbx" | "rcx" | "rdx" => format!("e{}", &r[1..]),
        "rsi" | "rdi" | "rbp" | "rsp" => format!("e{}", &r[1..]),
        _ => format!("{r}d"),
    }
}

fn sub16(r: &str) -> String {
    match r {
        "rax" | "rbx" | "rcx" | "rdx" | "rsi" | "rdi" | "rbp" | "rsp" => r[1..].to_string(),
        _ => format!("{r}w"),
    }
}

fn v64(v: VReg) -> &'static str {
    match v {
        VReg::Int(i) => INT_VREGS[i as usize],
        VReg::Float(_) => panic!("{v} is not an integer register"),
    }
}

fn vx(v: VReg) -> String {
    match v {
        VReg::Float(i) => format!("xmm{i}"),
        VReg::Int(_) => panic!("{v} is not a float register"),
    }
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

    fn feature_addr(&self, index: FeatureIndex) -> String {
        match index {
            FeatureIndex::Imm(i) => format!("{}(%rdi)", 4 * i),
            FeatureIndex::Reg(v) => format!("(%rdi,%{},4)", v64(v)),
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
            "\t.p2align 4\n\t.globl {func}\n\t.type {func}, @function\n{func}:\n"
        );
        let stride = 4 * ir.meta.num_features;
        for at in 0..ir.instructions.len() {
            if mode == Mode::Batch && at == ir.body_start {
                self.line("testq %rsi, %rsi");
                self.line(format!("je .L{func}_done"));
                let _ = writeln!(self.out, ".L{func}_tuple:");
            }
            for &l in &self.walk.labels_at[at] {
                let _ = writeln!(self.out, ".L{func}_{}:", ir.labels[l].0);
            }
            self.inst(&func, at, mode);
            if mode == Mode::Batch && at == 0 {
                self.line("movq %rdx, %r11");
            }
        }
        if mode == Mode::Batch {
            let _ = writeln!(self.out, ".L{func}_next:");
            self.line("addq $4, %r11");
            self.line(format!("addq ${stride}, %rdi"));
            self.line("decq %rsi");
            self.line(format!("jne .L{func}_tuple"));
            let _ = writeln!(self.out, ".L{func}_done:");
            if let Some(Inst::Prologue { save }) = ir.instructions.first() {
                for r in save.iter().rev() {
                    self.line(format!("popq %{}", self.name(*r)));
                }
            }
            self.line("ret");
        }
        let _ = writeln!(self.out, "\t.size {func}, .-{func}\n");
    }

    fn branch(&mut self, func: &str, at: usize, cond: &str, inverse: &str, t: crate::ir::Label, f: crate::ir::Label) {
        let (lt, lf) = (self.walk.label(func, t), self.walk.label(func, f));
        if self.walk.is_next(at, f) {
            self.line(format!("{cond} {lt}"));
        } else if self.walk.is_next(at, t) {
            self.line(format!("{inverse} {lf}"));
        } else {
            self.line(format!("{cond} {lt}"));
            self.line(format!("jmp {lf}"));
        }
    }

    fn inst(&mut self, func: &str, at: usize, mode: Mode) {
        let inst = &self.walk.ir.instructions[at];
        match inst {
            Inst::Prologue { save } => {
                for r in save {
                    self.line(format!("pushq %{}", self.name(*r)));
                }
            }
            Inst::Epilogue { restore } => {
                if mode == Mode::Single {
                    for r in restore.iter().rev() {
                        self.line(format!("popq %{}", self.name(*r)));
                    }
                }
            }
            Inst::SetupResident { reg, payload } => {
                let n = self.name(*reg);
                match reg.class {
                    RegClass::Gpr => self.line(format!("movabsq ${payload:#x}, %{n}")),
                    RegClass::Fpr => {
                        self.line(format!("movabsq ${:#x}, %rdx", payload.rotate_left(32)));
                        self.line(format!("movq %rdx, %{n}"));
                    }
                }
            }
            Inst::PinFeature { feature, reg } => {
                let addr = self.feature_addr(FeatureIndex::Imm(*feature));
                self.load_to_reg(&addr, *reg);
            }
            Inst::LoadFeatureMem { index, dst } => {
                let addr = self.feature_addr(*index);
                match dst {
                    Dest::V(v) => self.line(format!("movss {addr}, %{}", vx(*v))),
                    Dest::P(reg) => self.load_to_reg(&addr, *reg),
                }
            }
            Inst::UseFeatureReg { reg, dst } => {
                let n = self.name(*reg);
                match reg.class {
                    RegClass::Fpr => self.line(format!("movaps %{n}, %{}", vx(*dst))),
                    RegClass::Gpr => self.line(format!("movd %{}, %{}", sub32(n), vx(*dst))),
                }
            }
            Inst::LoadNodeRecord {
                index,
                split,
                feature,
                left,
                right,
            } => {
                let idx = v64(*index);
                self.line(format!("leaq {}(%rip), %rdx", self.syms.data));
                self.line(format!("shlq $4, %{idx}"));
                self.line(format!("movss (%rdx,%{idx}), %{}", vx(*split)));
                let mut fields = vec![(4, *feature), (6, *left), (8, *right)];
                // the index register is read by every load, write it last
                fields.sort_by_key(|(_, v)| *v == *index);
                for (off, v) in fields {
                    self.line(format!("movzwl {off}(%rdx,%{idx}), %{}", sub32(v64(v))));
                }
            }
            Inst::UseNodeReg { reg, field, dst } => {
                let n = self.name(*reg);
                match (reg.class, field) {
                    (RegClass::Gpr, Field::Split) => {
                        let d = vx(*dst);
                        self.line(format!("movq %{n}, %{d}"));
                        self.line(format!("psrlq $32, %{d}"));
                    }
                    (RegClass::Gpr, Field::SlotA) => {
                        let d = sub32(v64(*dst));
                        self.line(format!("movl %{}, %{d}", sub32(n)));
                        self.line(format!("shrl $16, %{d}"));
                    }
                    (RegClass::Gpr, Field::SlotB) => {
                        self.line(format!("movzwl %{}, %{}", sub16(n), sub32(v64(*dst))));
                    }
                    (RegClass::Fpr, Field::Split) => {
                        self.line(format!("movaps %{n}, %{}", vx(*dst)));
                    }
                    (RegClass::Fpr, Field::SlotA) => {
                        let d = v64(*dst);
                        self.line(format!("movq %{n}, %{d}"));
                        self.line(format!("shrq $48, %{d}"));
                    }
                    (RegClass::Fpr, Field::SlotB) => {
                        let d = v64(*dst);
                        self.line(format!("movq %{n}, %{d}"));
                        self.line(format!("shrq $32, %{d}"));
                        self.line(format!("movzwl %{}, %{}", sub16(d), sub32(d)));
                    }
                }
            }
            Inst::Const { value, dst } => {
                self.line(format!("movl ${:#x}, %edx", value.to_bits()));
                self.line(format!("movd %edx, %{}", vx(*dst)));
            }
            Inst::SetIndex { src, dst } => {
                let d = sub32(v64(*dst));
                match src {
                    IndexSrc::Imm(i) => self.line(format!("movl ${i}, %{d}")),
                    IndexSrc::V(s) => self.line(format!("movl %{}, %{d}", sub32(v64(*s)))),
                }
            }
            Inst::CmpLeBranch {
                a,
                b,
                if_true,
                if_false,
            } => {
                // CF is clear iff b >= a and the operands are ordered
                self.line(format!("ucomiss %{}, %{}", vx(*a), vx(*b)));
                self.branch(func, at, "jae", "jb", *if_true, *if_false);
            }
            Inst::CmpEqBranch { a, imm, target } => {
                self.line(format!("cmpl ${imm}, %{}", sub32(v64(*a))));
                self.line(format!("je {}", self.walk.label(func, *target)));
            }
            Inst::Jmp(t) => {
                if !self.walk.is_next(at, *t) {
                    self.line(format!("jmp {}", self.walk.label(func, *t)));
                }
            }
            Inst::Return(v) => match mode {
                Mode::Single => {
                    if vx(*v) != "xmm0" {
                        self.line(format!("movaps %{}, %xmm0", vx(*v)));
                    }
                    self.line("ret");
                }
                Mode::Batch => {
                    self.line(format!("movss %{}, (%r11)", vx(*v)));
                    self.line(format!("jmp .L{func}_next"));
                }
            },
        }
    }

    fn load_to_reg(&mut self, addr: &str, reg: Register) {
        let n = self.name(reg);
        match reg.class {
            RegClass::Fpr => self.line(format!("movss {addr}, %{n}")),
            RegClass::Gpr => self.line(format!("movl {addr}, %{}", sub32(n))),
        }
    }
}

pub(super) fn lower(ir: &InferenceIR, target: &TargetDesc, syms: &Symbols) -> String {
    let mut l = Lower {
        walk: Walk::new(ir),
        target,
        syms,
        out: format!(
            "# tree {} {}\n\t.text\n",
            ir.meta.tree_index, ir.meta.kind
        ),
    };
    l.function(Mode::Single);
    l.function(Mode::Batch);
    l.out.push_str("\t.section .note.GNU-stack,\"\",@progbits\n");
    l.out
}
