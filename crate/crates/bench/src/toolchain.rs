//! External compiler and assembler invocation.
//!
//! Commands can be overridden with `REGFOREST_CC` (host C compiler, also used
//! to assemble `.s` files), `REGFOREST_CFLAGS` (whitespace separated, default
//! `-O2`) and `REGFOREST_CROSS_CC` (a clang able to assemble other targets).

use std::path::{Path, PathBuf};
use std::process::Command;

use regforest::TargetName;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToolchainError {
    #[error("cannot run {tool}: {source}")]
    Missing {
        tool: String,
        source: std::io::Error,
    },
    #[error("{tool} failed on {input}:\n{stderr}")]
    Failed {
        tool: String,
        input: String,
        stderr: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Toolchain {
    pub cc: String,
    pub cflags: Vec<String>,
    pub cross_cc: String,
}

impl Default for Toolchain {
    fn default() -> Self {
        Toolchain {
            cc: "cc".into(),
            cflags: vec!["-O2".into()],
            cross_cc: "clang".into(),
        }
    }
}

fn probe(tool: &str, args: &[&str]) -> bool {
    Command::new(tool)
        .args(args)
        .output()
        .is_ok_and(|o| o.status.success())
}

impl Toolchain {
    pub fn from_env() -> Self {
        let mut t = Toolchain::default();
        if let Ok(cc) = std::env::var("REGFOREST_CC") {
            t.cc = cc;
        }
        if let Ok(flags) = std::env::var("REGFOREST_CFLAGS") {
            t.cflags = flags.split_whitespace().map(String::from).collect();
        }
        if let Ok(cc) = std::env::var("REGFOREST_CROSS_CC") {
            t.cross_cc = cc;
        }
        t
    }

    /// Whether the host compiler runs at all.
    pub fn available(&self) -> bool {
        probe(&self.cc, &["--version"])
    }

    /// Whether `target` code can be assembled here, natively or via the
    /// cross compiler.
    pub fn can_assemble(&self, target: TargetName) -> bool {
        match target {
            TargetName::Abstract => false,
            t if host_target() == Some(t) => self.available(),
            TargetName::Aarch64 => probe(&self.cross_cc, &["--target=aarch64-linux-gnu", "--version"]),
            TargetName::X86_64 => probe(&self.cross_cc, &["--target=x86_64-linux-gnu", "--version"]),
        }
    }

    fn run(&self, tool: &str, args: &[String], input: &Path) -> Result<(), ToolchainError> {
        let out = Command::new(tool)
            .args(args)
            .output()
            .map_err(|source| ToolchainError::Missing {
                tool: tool.into(),
                source,
            })?;
        if out.status.success() {
            Ok(())
        } else {
            Err(ToolchainError::Failed {
                tool: tool.into(),
                input: input.display().to_string(),
                stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
            })
        }
    }

    /// Compiles a `.c` or assembles a `.s` file for the host.
    pub fn compile(&self, src: &Path, obj: &Path) -> Result<(), ToolchainError> {
        let mut args = self.cflags.clone();
        args.extend(["-c".into(), path(src), "-o".into(), path(obj)]);
        self.run(&self.cc, &args, src)
    }

    pub fn link(&self, inputs: &[PathBuf], exe: &Path) -> Result<(), ToolchainError> {
        let mut args = self.cflags.clone();
        args.extend(inputs.iter().map(|p| path(p)));
        args.extend(["-o".into(), path(exe)]);
        self.run(&self.cc, &args, exe)
    }

    /// Assembles `src` for `target`, using the cross compiler when the
    /// target is not the host.
    pub fn assemble_for(&self, target: TargetName, src: &Path, obj: &Path) -> Result<(), ToolchainError> {
        if host_target() == Some(target) {
            return self.compile(src, obj);
        }
        let triple = match target {
            TargetName::Aarch64 => "aarch64-linux-gnu",
            _ => "x86_64-linux-gnu",
        };
        let args = vec![
            format!("--target={triple}"),
            "-c".into(),
            path(src),
            "-o".into(),
            path(obj),
        ];
        self.run(&self.cross_cc, &args, src)
    }
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

pub fn host_target() -> Option<TargetName> {
    regforest::TargetDesc::host().map(|t| t.name)
}
