//! Execution of emitted code on the host: oracle comparison and a
//! callee-saved register stress test.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

use regforest::backends;
use regforest::{Ensemble, TargetDesc, TargetName};
use serde::Serialize;

use crate::build::{self, Variant, VariantFiles};
use crate::runner::{write_inputs, Linker};
use crate::toolchain::Toolchain;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostCheck {
    pub variant: String,
    pub inputs: usize,
    pub trees: usize,
    pub mismatches: usize,
}

/// Runs every variant's batch entry points over `xs` and compares each
/// per-tree prediction with direct inference.
pub fn host_check(
    ensemble: &Ensemble,
    variants: &[Variant],
    xs: &[Vec<f32>],
    toolchain: &Toolchain,
    dir: &Path,
) -> Result<Vec<HostCheck>, BenchError> {
    let target = host_desc()?;
    let data = build::write_data(ensemble, &target, dir)?;
    let mut linker = Linker::new(toolchain, dir);
    let mut checks = Vec::new();
    // variants share symbol names, so each gets its own executable
    for (v, &variant) in variants.iter().enumerate() {
        let files = build::write_variant(ensemble, variant, &target, dir)?;
        let runner = linker.runner(
            &format!("host_check_{v}"),
            &[files],
            std::slice::from_ref(&data),
            ensemble.trees.len(),
            ensemble.num_features,
        )?;
        let out = runner.run(xs, 0)?;
        let mut mismatches = 0;
        for (t, tree) in ensemble.trees.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                if out.prediction(0, t, i, xs.len()).to_bits() != tree.infer(x).to_bits() {
                    mismatches += 1;
                }
            }
        }
        checks.push(HostCheck {
            variant: variant.to_string(),
            inputs: xs.len(),
            trees: ensemble.trees.len(),
            mismatches,
        });
    }
    Ok(checks)
}

pub fn host_desc() -> Result<TargetDesc, BenchError> {
    TargetDesc::host().ok_or_else(|| BenchError::Config("host architecture is not supported".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbiReport {
    pub calls: u64,
    /// Calls after which a callee-saved register or the stack pointer
    /// differed from its sentinel.
    pub corrupted: u64,
    /// Calls returning something other than the oracle prediction.
    pub mismatched: u64,
}

impl AbiReport {
    pub fn passed(&self) -> bool {
        self.corrupted == 0 && self.mismatched == 0 && self.calls > 0
    }
}

const X86_CALLEE_SAVED: [&str; 6] = ["rbx", "rbp", "r12", "r13", "r14", "r15"];

/// `abi_probe(fn, x, out, seed)`: loads seed-dependent sentinels into every
/// callee-saved register, calls `fn(x)`, stores the result to `*out` and
/// returns a bit mask of registers that changed (bit 6: stack pointer).
pub fn x86_probe_source() -> String {
    let mut s = String::from(
        "\t.text\n\t.p2align 4\n\t.globl abi_probe\n\t.type abi_probe, @function\nabi_probe:\n",
    );
    for r in X86_CALLEE_SAVED {
        let _ = writeln!(s, "\tpushq %{r}");
    }
    s.push_str("\tpushq %rdx\n\tpushq %rcx\n\tsubq $8, %rsp\n");
    for (i, r) in X86_CALLEE_SAVED.iter().enumerate() {
        let _ = writeln!(s, "\tmovabsq ${:#x}, %{r}\n\txorq %rcx, %{r}", sentinel(i));
    }
    s.push_str("\tmovq %rdi, %rax\n\tmovq %rsi, %rdi\n\tmovq %rsp, (%rsp)\n\tcallq *%rax\n");
    s.push_str("\tmovq 8(%rsp), %rcx\n\txorl %eax, %eax\n");
    for (i, r) in X86_CALLEE_SAVED.iter().enumerate() {
        let _ = writeln!(
            s,
            "\tmovabsq ${:#x}, %rdx\n\txorq %rcx, %rdx\n\tcmpq %rdx, %{r}\n\tje 1f\n\torl ${}, %eax\n1:",
            sentinel(i),
            1 << i
        );
    }
    s.push_str("\tcmpq %rsp, (%rsp)\n\tje 1f\n\torl $64, %eax\n1:\n");
    s.push_str("\taddq $16, %rsp\n\tpopq %rdx\n\tmovss %xmm0, (%rdx)\n");
    for r in X86_CALLEE_SAVED.iter().rev() {
        let _ = writeln!(s, "\tpopq %{r}");
    }
    s.push_str("\tret\n\t.size abi_probe, .-abi_probe\n\t.section .note.GNU-stack,\"\",@progbits\n");
    s
}

fn sentinel(i: usize) -> u64 {
    0x5A17_0000_0000_0001u64.wrapping_mul(i as u64 + 3) ^ 0x0123_4567_89AB_CDEF
}

fn stress_driver(symbols: &[String], num_features: usize) -> String {
    let mut s = String::from(
        "#include <stdint.h>\n#include <stdio.h>\n#include <stdlib.h>\n\n\
         extern int abi_probe(float (*fn)(const float *), const float *x, float *out, uint64_t seed);\n",
    );
    for sym in symbols {
        let _ = writeln!(s, "extern float {sym}(const float *);");
    }
    let _ = writeln!(
        s,
        "static float (*const fns[{}])(const float *) = {{{}}};\n#define NUM_FNS {}\n#define NUM_FEATURES {num_features}",
        symbols.len(),
        symbols.join(", "),
        symbols.len()
    );
    s.push_str(
        r#"
int main(int argc, char **argv)
{
	if (argc != 5)
		return 2;
	uint64_t rows = strtoull(argv[2], NULL, 10);
	uint64_t calls = strtoull(argv[4], NULL, 10);
	float *x = malloc((rows * NUM_FEATURES + 1) * sizeof(float));
	float *want = malloc((rows * NUM_FNS + 1) * sizeof(float));
	FILE *in = fopen(argv[1], "rb");
	FILE *exp = fopen(argv[3], "rb");
	if (!x || !want || !in || !exp
	    || fread(x, sizeof(float), rows * NUM_FEATURES, in) != rows * NUM_FEATURES
	    || fread(want, sizeof(float), rows * NUM_FNS, exp) != rows * NUM_FNS)
		return 1;
	uint64_t corrupted = 0, mismatched = 0, seed = 0x9E3779B97F4A7C15ull;
	for (uint64_t c = 0; c < calls; c++) {
		uint64_t f = c % NUM_FNS, r = (c / NUM_FNS) % rows;
		float got;
		seed = seed * 6364136223846793005ull + 1442695040888963407ull;
		if (abi_probe(fns[f], x + r * NUM_FEATURES, &got, seed))
			corrupted++;
		union { float f; uint32_t u; } a = {got}, b = {want[f * rows + r]};
		if (a.u != b.u)
			mismatched++;
	}
	printf("calls %llu corrupted %llu mismatched %llu\n", (unsigned long long)calls,
	       (unsigned long long)corrupted, (unsigned long long)mismatched);
	return 0;
}
"#,
    );
    s
}

/// Calls the single-tuple entry points of `variants` `calls` times through
/// the register probe, cycling over variants, trees and inputs. Variants must
/// have distinct symbols (different strategies or baselines).
pub fn abi_stress(
    ensemble: &Ensemble,
    variants: &[Variant],
    xs: &[Vec<f32>],
    calls: u64,
    toolchain: &Toolchain,
    dir: &Path,
) -> Result<AbiReport, BenchError> {
    let target = host_desc()?;
    if target.name != TargetName::X86_64 {
        return Err(BenchError::Config("the register probe is only available on x86-64".into()));
    }
    if xs.is_empty() || variants.is_empty() {
        return Err(BenchError::Config("nothing to call in the stress test".into()));
    }
    let mut files: Vec<VariantFiles> = Vec::new();
    for &v in variants {
        files.push(build::write_variant(ensemble, v, &target, dir)?);
    }
    let symbols: Vec<String> = files
        .iter()
        .flat_map(|f| &f.batch_symbols)
        .map(|s| s.trim_end_matches("_batch").to_string())
        .collect();
    let data = build::write_data(ensemble, &target, dir)?;
    let probe = dir.join("abi_probe.s");
    let driver = dir.join("abi_driver.c");
    std::fs::write(&probe, x86_probe_source()).map_err(|e| BenchError::io(&probe, e))?;
    std::fs::write(&driver, stress_driver(&symbols, ensemble.num_features))
        .map_err(|e| BenchError::io(&driver, e))?;
    let mut linker = Linker::new(toolchain, dir);
    let mut objs = vec![linker.object(&driver)?, linker.object(&probe)?, linker.object(&data)?];
    for s in files.iter().flat_map(|f| &f.sources) {
        objs.push(linker.object(s)?);
    }
    let exe = dir.join("abi_stress");
    toolchain.link(&objs, &exe)?;

    let input = dir.join("abi_input.bin");
    write_inputs(&input, xs)?;
    let expected: Vec<u8> = std::iter::repeat_n(&ensemble.trees, files.len())
        .flatten()
        .flat_map(|t| xs.iter().map(move |x| t.infer(x)))
        .flat_map(f32::to_le_bytes)
        .collect();
    let exp_path = dir.join("abi_expected.bin");
    std::fs::write(&exp_path, expected).map_err(|e| BenchError::io(&exp_path, e))?;
    let out = Command::new(&exe)
        .arg(&input)
        .arg(xs.len().to_string())
        .arg(&exp_path)
        .arg(calls.to_string())
        .output()
        .map_err(|e| BenchError::io(&exe, e))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let nums: Vec<u64> = text
        .split_whitespace()
        .filter_map(|w| w.parse().ok())
        .collect();
    match (out.status.success(), nums.as_slice()) {
        (true, &[calls, corrupted, mismatched]) => Ok(AbiReport {
            calls,
            corrupted,
            mismatched,
        }),
        _ => Err(BenchError::Run(format!(
            "stress driver failed ({}): {}{}",
            out.status,
            text,
            String::from_utf8_lossy(&out.stderr)
        ))),
    }
}

/// Assembles every tree of `variant` for `target` without running it.
pub fn assemble_check(
    ensemble: &Ensemble,
    variant: Variant,
    target: &TargetDesc,
    toolchain: &Toolchain,
    dir: &Path,
) -> Result<usize, BenchError> {
    let files = build::write_variant(ensemble, variant, target, dir)?;
    let data = dir.join(format!("records_{}.s", target.name));
    std::fs::write(&data, backends::emit_ensemble_data(ensemble, target.name).map_err(build::EmitError::from)?)
        .map_err(|e| BenchError::io(&data, e))?;
    for (i, s) in files.sources.iter().chain([&data]).enumerate() {
        toolchain.assemble_for(target.name, s, &dir.join(format!("check_{i}.o")))?;
    }
    Ok(files.sources.len())
}
