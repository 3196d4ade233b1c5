//! Generated C driver that times batch inference over a dataset.
//!
//! The driver takes `INPUT ROWS REPS OUTDIR MIN_NS`. It runs every variant
//! once to write its predictions to `OUTDIR/pred_<v>.bin` (tree-major
//! binary32), then runs `REPS` rounds, each timing every variant over all
//! trees, and prints `time <variant> <rep> <nanoseconds>` lines. A timed
//! sample repeats the batch until it spans at least `MIN_NS` and reports the
//! time of one pass.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::build::VariantFiles;
use crate::toolchain::Toolchain;
use crate::BenchError;

pub fn runner_source(variants: &[VariantFiles], num_trees: usize, num_features: usize) -> String {
    let mut out = String::from(
        "#define _GNU_SOURCE\n#include <stdint.h>\n#include <stdio.h>\n#include <stdlib.h>\n#include <time.h>\n\
         #ifdef __linux__\n#include <sched.h>\n#endif\n\n\
         typedef void (*batch_fn)(const float *, uint64_t, float *);\n\n",
    );
    let symbols: BTreeSet<&String> = variants.iter().flat_map(|v| &v.batch_symbols).collect();
    for s in symbols {
        let _ = writeln!(out, "extern void {s}(const float *, uint64_t, float *);");
    }
    for (i, v) in variants.iter().enumerate() {
        let _ = writeln!(
            out,
            "static const batch_fn variant_{i}[{}] = {{{}}};",
            num_trees.max(1),
            v.batch_symbols.join(", ")
        );
    }
    let _ = write!(
        out,
        "static const batch_fn *variants[{n}] = {{{list}}};\n\
         #define NUM_VARIANTS {n}\n#define NUM_TREES {num_trees}\n#define NUM_FEATURES {num_features}\n",
        n = variants.len(),
        list = (0..variants.len())
            .map(|i| format!("variant_{i}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    out.push_str(
        r#"
static double now_ns(void)
{
	struct timespec ts;
	clock_gettime(CLOCK_MONOTONIC, &ts);
	return (double)ts.tv_sec * 1e9 + (double)ts.tv_nsec;
}

static void run(int v, const float *x, uint64_t rows, float *out)
{
	for (int t = 0; t < NUM_TREES; t++)
		variants[v][t](x, rows, out + (uint64_t)t * rows);
}

int main(int argc, char **argv)
{
	if (argc != 6) {
		fprintf(stderr, "usage: %s INPUT ROWS REPS OUTDIR MIN_NS\n", argv[0]);
		return 2;
	}
	uint64_t rows = strtoull(argv[2], NULL, 10);
	int reps = atoi(argv[3]);
	double min_ns = atof(argv[5]);
	long passes[NUM_VARIANTS];
#ifdef __linux__
	cpu_set_t set;
	CPU_ZERO(&set);
	CPU_SET(0, &set);
	sched_setaffinity(0, sizeof set, &set);
#endif
	float *x = malloc((rows * NUM_FEATURES + 1) * sizeof(float));
	float *out = malloc((rows * NUM_TREES + 1) * sizeof(float));
	FILE *in = fopen(argv[1], "rb");
	if (!x || !out || !in || fread(x, sizeof(float), rows * NUM_FEATURES, in) != rows * NUM_FEATURES) {
		fprintf(stderr, "cannot read %s\n", argv[1]);
		return 1;
	}
	fclose(in);
	char path[4096];
	for (int v = 0; v < NUM_VARIANTS; v++) {
		run(v, x, rows, out);
		double t0 = now_ns();
		run(v, x, rows, out);
		double once = now_ns() - t0;
		passes[v] = once >= min_ns ? 1 : (long)(min_ns / (once > 1.0 ? once : 1.0)) + 1;
		snprintf(path, sizeof path, "%s/pred_%d.bin", argv[4], v);
		FILE *f = fopen(path, "wb");
		if (!f || fwrite(out, sizeof(float), rows * NUM_TREES, f) != rows * NUM_TREES) {
			fprintf(stderr, "cannot write %s\n", path);
			return 1;
		}
		fclose(f);
	}
	for (int r = 0; r < reps; r++) {
		for (int v = 0; v < NUM_VARIANTS; v++) {
			double t0 = now_ns();
			for (long p = 0; p < passes[v]; p++)
				run(v, x, rows, out);
			double t1 = now_ns();
			printf("time %d %d %.1f\n", v, r, (t1 - t0) / (double)passes[v]);
		}
	}
	free(x);
	free(out);
	return 0;
}
"#,
    );
    out
}

/// Compiles sources once and links runners out of the cached objects.
pub struct Linker<'a> {
    pub toolchain: &'a Toolchain,
    pub dir: PathBuf,
    objects: HashMap<PathBuf, PathBuf>,
}

impl<'a> Linker<'a> {
    pub fn new(toolchain: &'a Toolchain, dir: &Path) -> Self {
        Linker {
            toolchain,
            dir: dir.to_path_buf(),
            objects: HashMap::new(),
        }
    }

    pub fn object(&mut self, src: &Path) -> Result<PathBuf, BenchError> {
        if let Some(o) = self.objects.get(src) {
            return Ok(o.clone());
        }
        let obj = self.dir.join(format!("obj_{}.o", self.objects.len()));
        self.toolchain.compile(src, &obj)?;
        self.objects.insert(src.to_path_buf(), obj.clone());
        Ok(obj)
    }

    pub fn runner(
        &mut self,
        name: &str,
        variants: &[VariantFiles],
        extra: &[PathBuf],
        num_trees: usize,
        num_features: usize,
    ) -> Result<Runner, BenchError> {
        let src = self.dir.join(format!("{name}.c"));
        std::fs::write(&src, runner_source(variants, num_trees, num_features))
            .map_err(|e| BenchError::io(&src, e))?;
        let mut inputs = vec![self.object(&src)?];
        let mut seen = BTreeSet::new();
        for s in variants.iter().flat_map(|v| &v.sources).chain(extra) {
            if seen.insert(s.clone()) {
                inputs.push(self.object(s)?);
            }
        }
        let exe = self.dir.join(name);
        self.toolchain.link(&inputs, &exe)?;
        Ok(Runner {
            exe,
            min_sample_ns: DEFAULT_MIN_SAMPLE_NS,
            variants: variants.len(),
            num_trees,
            num_features,
        })
    }
}

/// Shortest span of one timed sample.
pub const DEFAULT_MIN_SAMPLE_NS: u64 = 20_000_000;

#[derive(Debug, Clone)]
pub struct Runner {
    pub exe: PathBuf,
    pub min_sample_ns: u64,
    pub variants: usize,
    pub num_trees: usize,
    pub num_features: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Per variant, per repetition, nanoseconds.
    pub times: Vec<Vec<f64>>,
    /// Per variant, tree-major predictions.
    pub predictions: Vec<Vec<f32>>,
}

impl RunOutput {
    pub fn prediction(&self, variant: usize, tree: usize, row: usize, rows: usize) -> f32 {
        self.predictions[variant][tree * rows + row]
    }
}

pub fn write_inputs(path: &Path, xs: &[Vec<f32>]) -> Result<(), BenchError> {
    let bytes: Vec<u8> = xs.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

impl Runner {
    pub fn run(&self, xs: &[Vec<f32>], reps: usize) -> Result<RunOutput, BenchError> {
        let dir = tempfile::tempdir().map_err(|e| BenchError::io(Path::new("tempdir"), e))?;
        let input = dir.path().join("input.bin");
        if xs.iter().any(|x| x.len() != self.num_features) {
            return Err(BenchError::Config("input width does not match the model".into()));
        }
        write_inputs(&input, xs)?;
        let out = Command::new(&self.exe)
            .arg(&input)
            .arg(xs.len().to_string())
            .arg(reps.to_string())
            .arg(dir.path())
            .arg(self.min_sample_ns.to_string())
            .output()
            .map_err(|e| BenchError::io(&self.exe, e))?;
        if !out.status.success() {
            return Err(BenchError::Run(format!(
                "{} exited with {}: {}",
                self.exe.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        let mut result = RunOutput {
            times: vec![vec![f64::NAN; reps]; self.variants],
            predictions: Vec::new(),
        };
        for line in String::from_utf8_lossy(&out.stdout).lines() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if let ["time", v, r, ns] = f[..] {
                let parse = |s: &str| s.parse::<usize>().ok();
                match (parse(v), parse(r), ns.parse::<f64>().ok()) {
                    (Some(v), Some(r), Some(ns)) if v < self.variants && r < reps => {
                        result.times[v][r] = ns
                    }
                    _ => return Err(BenchError::Run(format!("bad runner line {line:?}"))),
                }
            }
        }
        if result.times.iter().flatten().any(|t| t.is_nan()) {
            return Err(BenchError::Run("runner output is missing timings".into()));
        }
        for v in 0..self.variants {
            let p = dir.path().join(format!("pred_{v}.bin"));
            let bytes = std::fs::read(&p).map_err(|e| BenchError::io(&p, e))?;
            result.predictions.push(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        Ok(result)
    }
}
