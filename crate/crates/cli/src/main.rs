use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regforest::planner::{plan_ensemble, PlanDoc};
use regforest::profiler::profile;
use regforest::synth::{grow_ensemble, random_dataset, GrowConfig};
use regforest::verifier::{differential_check, verification_inputs};
use regforest::{load_model, Ensemble, PackMode, PlanOptions, Strategy, TargetDesc, TargetName};
use regforest_bench::build::{lower_all, variant_irs, write_data};
use regforest_bench::dataset::write_csv;
use regforest_bench::report::sweep_csv;
use regforest_bench::{run_bench, BenchConfig, BenchError, Toolchain, Variant};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "regforest", version, about = "Register-allocated decision tree code generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Branch probabilities, absolute probabilities and feature suitability
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register allocation plan of every tree
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[command(flatten)]
        alloc: AllocArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assembly (or IR text for the abstract target) for every tree
    Emit {
        #[arg(long)]
        model: PathBuf,
        /// sf, df, nn, hn, hl, in, or a baseline: native, ifelse
        #[arg(long)]
        strategy: String,
        #[command(flatten)]
        alloc: AllocArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpret every realization and compare with direct inference
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Comma separated; all strategies by default
        #[arg(long, value_delimiter = ',')]
        strategy: Vec<Strategy>,
        #[command(flatten)]
        alloc: AllocArgs,
        /// Random inputs in addition to one input per reachable leaf
        #[arg(long, default_value_t = 1000)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time strategies against the C baselines on the host
    Bench {
        #[arg(long)]
        model: PathBuf,
        /// CSV of feature rows; may be repeated
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "sf,df,nn,hn,hl,in")]
        strategies: Vec<Strategy>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        registers: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value = "full-node")]
        pack: PackMode,
        /// Sweep CSV
        #[arg(long)]
        out: PathBuf,
        /// Full report with geometric means and self checks
        #[arg(long)]
        json: Option<PathBuf>,
        /// Keep generated sources and executables here
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Synthetic ensemble grown on a random dataset
    Gen {
        #[arg(long, default_value_t = 10)]
        trees: usize,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a dataset drawn from the same distribution
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AllocArgs {
    #[arg(long, default_value_t = 10)]
    registers: usize,
    #[arg(long, default_value = "full-node")]
    pack: PackMode,
    #[arg(long, default_value = "abstract")]
    target: TargetName,
}

impl AllocArgs {
    fn opts(&self) -> PlanOptions {
        PlanOptions::new(self.registers, self.pack)
    }
}

fn read_model(path: &Path) -> Result<Ensemble> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_model(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_variant(s: &str, opts: PlanOptions) -> Result<Variant> {
    Ok(match s {
        "native" => Variant::AsmNative,
        "ifelse" => Variant::AsmIfElse,
        _ => Variant::Strategy(s.parse().map_err(anyhow::Error::msg)?, opts),
    })
}

#[derive(Serialize)]
struct Manifest {
    target: TargetName,
    variant: String,
    registers: usize,
    pack: PackMode,
    data: Option<String>,
    units: Vec<UnitDoc>,
}

#[derive(Serialize)]
struct UnitDoc {
    tree: usize,
    file: String,
    symbol: Option<String>,
    batch_symbol: Option<String>,
    clobbers: Vec<String>,
    scratch: Vec<String>,
}

fn emit(model: &Path, strategy: &str, alloc: &AllocArgs, out: &Path) -> Result<()> {
    let ensemble = read_model(model)?;
    let target = TargetDesc::new(alloc.target);
    let variant = parse_variant(strategy, alloc.opts())?;
    let irs = variant_irs(&ensemble, variant, &target)?.expect("assembly variant");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest {
        target: target.name,
        variant: variant.to_string(),
        registers: alloc.registers,
        pack: alloc.pack,
        data: None,
        units: Vec::new(),
    };
    if target.name == TargetName::Abstract {
        for (i, ir) in irs.iter().enumerate() {
            let file = format!("tree_{i}.ir");
            fs::write(out.join(&file), ir.to_text())?;
            manifest.units.push(UnitDoc {
                tree: i,
                file,
                symbol: None,
                batch_symbol: None,
                clobbers: ir.meta.clobbers.iter().map(|r| r.to_string()).collect(),
                scratch: Vec::new(),
            });
        }
    } else {
        for (i, unit) in lower_all(&irs, &target)?.into_iter().enumerate() {
            let file = format!("tree_{i}.s");
            fs::write(out.join(&file), &unit.assembly)?;
            manifest.units.push(UnitDoc {
                tree: i,
                file,
                symbol: Some(unit.symbol),
                batch_symbol: Some(unit.batch_symbol),
                clobbers: unit.clobbers,
                scratch: unit.scratch.iter().map(|s| s.to_string()).collect(),
            });
        }
        let data = write_data(&ensemble, &target, out)?;
        manifest.data = data.file_name().map(|f| f.to_string_lossy().into_owned());
    }
    write_json(&manifest, Some(&out.join("manifest.json")))
}

fn verify(
    model: &Path,
    strategies: &[Strategy],
    alloc: &AllocArgs,
    inputs: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<bool> {
    let ensemble = read_model(model)?;
    let target = TargetDesc::new(alloc.target);
    let strategies = if strategies.is_empty() { Strategy::ALL.to_vec() } else { strategies.to_vec() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = verification_inputs(&mut rng, &ensemble, inputs);
    let report = differential_check(&ensemble, &strategies, alloc.opts(), &target, &xs)?;
    write_json(&report, out)?;
    Ok(report.passed())
}

fn gen(
    trees: usize,
    depth: usize,
    features: usize,
    rows: usize,
    seed: u64,
    out: &Path,
    data: Option<&Path>,
) -> Result<()> {
    if features == 0 || rows == 0 {
        bail!("features and rows must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = random_dataset(&mut rng, rows, features);
    let cfg = GrowConfig {
        max_depth: depth.max(1),
        ..GrowConfig::default()
    };
    let ensemble = grow_ensemble(&mut rng, &train, trees, &cfg);
    fs::write(out, ensemble.to_json()).with_context(|| format!("writing {}", out.display()))?;
    if let Some(d) = data {
        write_csv(d, &random_dataset(&mut rng, rows, features))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Profile { model, out } => {
            write_json(&profile(&read_model(&model)?), out.as_deref())?;
        }
        Command::Plan {
            model,
            strategy,
            alloc,
            out,
        } => {
            let ensemble = read_model(&model)?;
            let target = TargetDesc::new(alloc.target);
            let plans = plan_ensemble(&ensemble, strategy, alloc.opts(), &target)?;
            let docs: Vec<PlanDoc> = plans.iter().map(|p| PlanDoc::new(p, &target)).collect();
            write_json(&docs, out.as_deref())?;
        }
        Command::Emit {
            model,
            strategy,
            alloc,
            out,
        } => emit(&model, &strategy, &alloc, &out)?,
        Command::Verify {
            model,
            strategy,
            alloc,
            inputs,
            seed,
            out,
        } => {
            if !verify(&model, &strategy, &alloc, inputs, seed, out.as_deref())? {
                eprintln!("verification failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench {
            model,
            data,
            strategies,
            registers,
            reps,
            batch_size,
            pack,
            out,
            json,
            work_dir,
        } => {
            let mut cfg = BenchConfig::new(model, data);
            cfg.strategies = strategies;
            cfg.registers = registers;
            cfg.reps = reps;
            cfg.batch_size = batch_size;
            cfg.mode = pack;
            cfg.toolchain = Toolchain::from_env();
            cfg.work_dir = work_dir;
            let report = match run_bench(&cfg) {
                Ok(r) => r,
                Err(e @ BenchError::Validation(_)) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(3));
                }
                Err(e) => return Err(e.into()),
            };
            fs::write(&out, sweep_csv(&report.rows)).with_context(|| format!("writing {}", out.display()))?;
            if let Some(j) = json {
                write_json(&report, Some(&j))?;
            }
            for g in &report.geomeans {
                eprintln!(
                    "{:>6} vs {:<6} {:?}: {:.3} ({} rows)",
                    g.strategy, g.baseline, g.size_class, g.value, g.rows
                );
            }
            for s in &report.skipped {
                eprintln!("skipped {s}");
            }
            if let Some(d) = &report.directional {
                eprintln!(
                    "hybrid node vs native geomean {:.3}: {}",
                    d.geomean,
                    if d.holds { "below 1.0" } else { "not below 1.0" }
                );
            }
        }
        Command::Gen {
            trees,
            depth,
            features,
            rows,
            seed,
            out,
            data,
        } => gen(trees, depth, features, rows, seed, &out, data.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
