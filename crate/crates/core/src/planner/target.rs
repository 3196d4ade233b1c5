use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    X86_64,
    Aarch64,
    Abstract,
}

impl fmt::Display for TargetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetName::X86_64 => "x86_64",
            TargetName::Aarch64 => "aarch64",
            TargetName::Abstract => "abstract",
        })
    }
}

impl FromStr for TargetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x86_64" | "x86-64" => Ok(TargetName::X86_64),
            "aarch64" | "arm64" => Ok(TargetName::Aarch64),
            "abstract" => Ok(TargetName::Abstract),
            _ => Err(format!("unknown target {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegClass {
    Gpr,
    Fpr,
}

/// A reserved register: the `index`-th entry of the target's usable list for
/// `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Register {
    pub class: RegClass,
    pub index: u8,
}

impl Register {
    pub fn gpr(index: u8) -> Self {
        Register {
            class: RegClass::Gpr,
            index,
        }
    }

    pub fn fpr(index: u8) -> Self {
        Register {
            class: RegClass::Fpr,
            index,
        }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            RegClass::Gpr => write!(f, "pg{}", self.index),
            RegClass::Fpr => write!(f, "pf{}", self.index),
        }
    }
}

/// Register file of a target and the subset reserved for explicit allocation.
///
/// Everything outside `usable_gpr`/`usable_fpr` is left to the emitted code
/// for argument passing, loop state and scratch values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetDesc {
    pub name: TargetName,
    pub gpr_count: usize,
    pub gpr_bits: usize,
    pub fpr_count: usize,
    pub fpr_bits: usize,
    pub usable_gpr: Vec<&'static str>,
    pub usable_fpr: Vec<&'static str>,
    /// Registers callee-saved under the platform ABI. For FPRs only the low
    /// 64 bits are preserved on AArch64.
    pub callee_saved: Vec<&'static str>,
}

pub const MIN_SCRATCH_GPR: usize = 3;
pub const MIN_SCRATCH_FPR: usize = 2;

impl TargetDesc {
    pub fn new(name: TargetName) -> Self {
        match name {
            // rax rcx rdx rsi rdi r8 r9 r11 stay scratch, xmm0/xmm1 too
            TargetName::X86_64 => TargetDesc {
                name,
                gpr_count: 16,
                gpr_bits: 64,
                fpr_count: 16,
                fpr_bits: 128,
                usable_gpr: vec!["r10", "rbx", "r12", "r13", "r14", "r15", "rbp"],
                usable_fpr: vec![
                    "xmm2", "xmm3", "xmm4", "xmm5", "xmm6", "xmm7", "xmm8", "xmm9", "xmm10",
                    "xmm11", "xmm12", "xmm13", "xmm14", "xmm15",
                ],
                callee_saved: vec!["rbx", "rbp", "r12", "r13", "r14", "r15"],
            },
            // x0-x8, x16, x17 scratch; x18 platform, x29/x30/sp untouched
            TargetName::Aarch64 => TargetDesc {
                name,
                gpr_count: 32,
                gpr_bits: 64,
                fpr_count: 32,
                fpr_bits: 64,
                usable_gpr: vec![
                    "x9", "x10", "x11", "x12", "x13", "x14", "x15", "x19", "x20", "x21", "x22",
                    "x23", "x24", "x25", "x26", "x27", "x28",
                ],
                usable_fpr: vec![
                    "v16", "v17", "v18", "v19", "v20", "v21", "v22", "v23", "v24", "v25", "v26",
                    "v27", "v28", "v29", "v30", "v31", "v8", "v9", "v10", "v11", "v12", "v13",
                    "v14", "v15",
                ],
                callee_saved: vec![
                    "x19", "x20", "x21", "x22", "x23", "x24", "x25", "x26", "x27", "x28", "v8",
                    "v9", "v10", "v11", "v12", "v13", "v14", "v15",
                ],
            },
            TargetName::Abstract => TargetDesc {
                name,
                gpr_count: 16,
                gpr_bits: 64,
                fpr_count: 16,
                fpr_bits: 128,
                usable_gpr: vec!["g0", "g1", "g2", "g3", "g4", "g5", "g6", "g7"],
                usable_fpr: vec![
                    "f0", "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10", "f11",
                    "f12", "f13",
                ],
                callee_saved: vec![],
            },
        }
    }

    /// Host target, if the host is one of the supported architectures.
    pub fn host() -> Option<Self> {
        if cfg!(target_arch = "x86_64") {
            Some(Self::new(TargetName::X86_64))
        } else if cfg!(target_arch = "aarch64") {
            Some(Self::new(TargetName::Aarch64))
        } else {
            None
        }
    }

    /// Number of usable registers `r`.
    pub fn usable(&self) -> usize {
        self.usable_gpr.len() + self.usable_fpr.len()
    }

    pub fn count(&self, class: RegClass) -> usize {
        match class {
            RegClass::Gpr => self.usable_gpr.len(),
            RegClass::Fpr => self.usable_fpr.len(),
        }
    }

    pub fn name_of(&self, reg: Register) -> Option<&'static str> {
        match reg.class {
            RegClass::Gpr => self.usable_gpr.get(reg.index as usize).copied(),
            RegClass::Fpr => self.usable_fpr.get(reg.index as usize).copied(),
        }
    }

    pub fn is_callee_saved(&self, reg: Register) -> bool {
        self.name_of(reg)
            .is_some_and(|n| self.callee_saved.contains(&n))
    }

    /// Allocation order for `count` registers: all of `first` class, then
    /// the other class.
    pub fn pool(&self, first: RegClass) -> impl Iterator<Item = Register> + '_ {
        let second = match first {
            RegClass::Gpr => RegClass::Fpr,
            RegClass::Fpr => RegClass::Gpr,
        };
        [first, second].into_iter().flat_map(move |class| {
            (0..self.count(class)).map(move |i| Register {
                class,
                index: i as u8,
            })
        })
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let total = self.gpr_count + self.fpr_count;
        if self.usable() >= total {
            return Err(format!("r = {} must be below #R = {total}", self.usable()));
        }
        if self.gpr_count - self.usable_gpr.len() < MIN_SCRATCH_GPR {
            return Err("fewer than 3 scratch GPRs".into());
        }
        if self.fpr_count - self.usable_fpr.len() < MIN_SCRATCH_FPR {
            return Err("fewer than 2 scratch FPRs".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_keep_scratch_space() {
        for name in [TargetName::X86_64, TargetName::Aarch64, TargetName::Abstract] {
            let t = TargetDesc::new(name);
            t.check_invariants().unwrap();
            // the native-family default of 20 registers fits everywhere
            assert!(t.usable() >= 20, "{name}");
        }
    }

    #[test]
    fn pool_order() {
        let t = TargetDesc::new(TargetName::X86_64);
        let pool: Vec<_> = t.pool(RegClass::Gpr).collect();
        assert_eq!(pool.len(), 21);
        assert_eq!(t.name_of(pool[0]), Some("r10"));
        assert_eq!(t.name_of(pool[7]), Some("xmm2"));
        assert!(t.is_callee_saved(Register::gpr(1)));
        assert!(!t.is_callee_saved(Register::gpr(0)));
    }
}
