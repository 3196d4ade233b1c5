//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Host-dependent criteria print SKIP when no usable toolchain is
//! present.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regforest::planner::{plan_tree, CacheAction, PlanError, TargetDesc};
use regforest::profiler::{annotate, tree_suitability};
use regforest::synth::{grow_ensemble, random_dataset, random_inputs, random_tree, GrowConfig, RandomTreeConfig};
use regforest::verifier::{differential_check, path_inputs};
use regforest::{Aggregation, Ensemble, Node, PackMode, PlanOptions, Strategy, TargetName, Tree};
use regforest_bench::host::{abi_stress, assemble_check, host_check};
use regforest_bench::report::SizeClass;
use regforest_bench::{run_bench_on, sweep_ks, BenchConfig, Toolchain, Variant};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(pass: bool, detail: String) -> Verdict {
    if pass {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn ensemble_of(tree: Tree, nf: usize) -> Ensemble {
    Ensemble::new(vec![tree], nf, Aggregation::Average).expect("valid tree")
}

fn branch_p(node: &Node, left: bool) -> f64 {
    let (l, r) = (node.left_count, node.right_count);
    if l + r == 0 {
        0.5
    } else if left {
        l as f64 / (l + r) as f64
    } else {
        r as f64 / (l + r) as f64
    }
}

#[derive(Default)]
struct SuiteTotals {
    strategy_checks: usize,
    mismatches: usize,
    record_violations: usize,
    feature_violations: usize,
    other_violations: usize,
    resident_nodes: usize,
    cache_hits: usize,
}

/// 6 strategies x 100 random trees of depth 1 to 15 x 1000 inputs on the
/// abstract target.
fn differential_suite() -> Result<SuiteTotals, String> {
    let target = TargetDesc::new(TargetName::Abstract);
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    let mut totals = SuiteTotals::default();
    const NF: usize = 8;
    for i in 0..100 {
        let tree = random_tree(
            &mut rng,
            &RandomTreeConfig {
                max_depth: 1 + i % 15,
                num_features: NF,
                inner_prob: 0.85,
                ..RandomTreeConfig::default()
            },
        );
        let xs = random_inputs(&mut rng, &tree, NF, 1000);
        let k = [0, 1, 3, 6, 10, 14][i % 6];
        let mode = if i % 2 == 0 { PackMode::FullNode } else { PackMode::SplitOnly };
        let opts = PlanOptions::new(k, mode);
        for s in Strategy::ALL {
            let plan = plan_tree(&tree, 0, s, opts, &target).map_err(|e| format!("tree {i} {s}: {e}"))?;
            totals.resident_nodes += plan.resident_nodes().len();
            totals.cache_hits += plan
                .cache_schedule
                .values()
                .filter(|a| matches!(a, CacheAction::Hit(_)))
                .count();
        }
        let e = ensemble_of(tree, NF);
        let r = differential_check(&e, &Strategy::ALL, opts, &target, &xs)
            .map_err(|err| format!("tree {i}: {err}"))?;
        totals.strategy_checks += Strategy::ALL.len() * xs.len();
        totals.mismatches += r.mismatches.len();
        for v in &r.violations {
            if v.detail.contains("record") {
                totals.record_violations += 1;
            } else if v.detail.contains("feature") {
                totals.feature_violations += 1;
            } else {
                totals.other_violations += 1;
            }
        }
    }
    Ok(totals)
}

fn differential(totals: &Result<SuiteTotals, String>) -> Verdict {
    match totals {
        Err(e) => Verdict::Fail(e.clone()),
        Ok(t) => check(
            t.mismatches == 0 && t.strategy_checks >= 600_000,
            format!("{} strategy executions, {} mismatches", t.strategy_checks, t.mismatches),
        ),
    }
}

fn residency(totals: &Result<SuiteTotals, String>) -> Verdict {
    match totals {
        Err(e) => Verdict::Fail(e.clone()),
        Ok(t) => check(
            t.record_violations == 0 && t.feature_violations == 0 && t.other_violations == 0,
            format!(
                "{} resident-node record loads, {} feature loads on cache hits, {} other ({} resident nodes, {} scheduled hits planned)",
                t.record_violations, t.feature_violations, t.other_violations, t.resident_nodes, t.cache_hits
            ),
        ),
    }
}

/// Leaves whose root path constraints can be satisfied by some input.
fn reachable_leaves(tree: &Tree, nf: usize) -> BTreeSet<usize> {
    tree.leaves()
        .filter(|&leaf| {
            let mut lo = vec![f32::NEG_INFINITY; nf];
            let mut hi = vec![f32::INFINITY; nf];
            for w in tree.path(leaf).windows(2) {
                let n = tree.node(w[0]);
                let f = n.feature().unwrap();
                if w[1] == n.children().unwrap().0 {
                    hi[f] = hi[f].min(n.value());
                } else {
                    lo[f] = lo[f].max(n.value());
                }
            }
            lo.iter().zip(&hi).all(|(l, h)| l < h)
        })
        .collect()
}

fn brute_force() -> Verdict {
    let target = TargetDesc::new(TargetName::Abstract);
    let mut rng = ChaCha8Rng::seed_from_u64(0xB00F);
    const NF: usize = 5;
    let mut trees: Vec<Tree> = (0..400)
        .map(|i| {
            random_tree(
                &mut rng,
                &RandomTreeConfig {
                    max_depth: 1 + i % 7,
                    num_features: NF,
                    ..RandomTreeConfig::default()
                },
            )
        })
        .collect();
    let data = random_dataset(&mut rng, 200, NF);
    let grown = grow_ensemble(&mut rng, &data, 100, &GrowConfig { max_depth: 6, ..GrowConfig::default() });
    trees.extend(grown.trees);
    trees.retain(|t| t.len() <= 64);
    let (mut leaves, mut reached, mut execs, mut mismatches) = (0, 0, 0, 0);
    for (i, tree) in trees.iter().enumerate() {
        let xs = path_inputs(tree, NF);
        let want = reachable_leaves(tree, NF);
        let got: BTreeSet<usize> = xs.iter().map(|x| tree.leaf_for(x)).collect();
        leaves += want.len();
        reached += got.intersection(&want).count();
        let e = ensemble_of(tree.clone(), NF);
        for k in [1, 4, 14] {
            match differential_check(&e, &Strategy::ALL, PlanOptions::new(k, PackMode::FullNode), &target, &xs) {
                Ok(r) => {
                    execs += r.checks;
                    mismatches += r.mismatches.len();
                }
                Err(err) => return Verdict::Fail(format!("tree {i}: {err}")),
            }
        }
    }
    check(
        reached == leaves && mismatches == 0,
        format!(
            "{} trees, {reached}/{leaves} reachable leaves exercised, {execs} executions, {mismatches} mismatches",
            trees.len()
        ),
    )
}

fn absprob() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAB5);
    let (mut worst, mut inexact, mut nodes) = (0f64, 0, 0);
    for i in 0..1000 {
        let tree = random_tree(
            &mut rng,
            &RandomTreeConfig {
                max_depth: 1 + i % 15,
                max_count: [0, 3, 100, 1_000_000][i % 4],
                ..RandomTreeConfig::default()
            },
        );
        let ann = annotate(&tree);
        let sum: f64 = tree.leaves().map(|l| ann.absprob[l]).sum();
        worst = worst.max((sum - 1.0).abs());
        for id in 0..tree.len() {
            let path = tree.path(id);
            let mut p = 1.0f64;
            for w in path.windows(2) {
                let n = tree.node(w[0]);
                p *= branch_p(n, w[1] == n.children().unwrap().0);
            }
            nodes += 1;
            if p.to_bits() != ann.absprob[id].to_bits() {
                inexact += 1;
            }
        }
    }
    check(
        worst <= 1e-9 && inexact == 0,
        format!("1000 trees, max |sum - 1| = {worst:.2e}, {inexact}/{nodes} path products differ"),
    )
}

fn suitability() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5017);
    const NF: usize = 6;
    const N: usize = 100_000;
    let (mut worst_z, mut failures, mut comparisons) = (0f64, 0, 0);
    for i in 0..100 {
        let tree = random_tree(
            &mut rng,
            &RandomTreeConfig {
                max_depth: 2 + i % 14,
                num_features: NF,
                ..RandomTreeConfig::default()
            },
        );
        let analytic = tree_suitability(&tree, NF).scores;
        let mut sum = [0f64; NF];
        let mut sumsq = [0f64; NF];
        for _ in 0..N {
            let mut reads = [0u32; NF];
            let mut id = 0;
            while let (Some(f), Some((l, r))) = (tree.node(id).feature(), tree.node(id).children()) {
                reads[f] += 1;
                id = if rng.gen_bool(branch_p(tree.node(id), true)) { l } else { r };
            }
            for f in 0..NF {
                sum[f] += reads[f] as f64;
                sumsq[f] += (reads[f] as f64).powi(2);
            }
        }
        for f in 0..NF {
            let mean = sum[f] / N as f64;
            let var = (sumsq[f] / N as f64 - mean * mean).max(0.0) * N as f64 / (N - 1) as f64;
            let se = (var / N as f64).sqrt();
            let diff = (analytic[f] - mean).abs();
            comparisons += 1;
            if se == 0.0 {
                if diff > 1e-9 {
                    failures += 1;
                }
            } else {
                let z = diff / se;
                worst_z = worst_z.max(z);
                if z > 4.0 {
                    failures += 1;
                }
            }
        }
    }
    let t2 = Tree::new(vec![
        Node::inner(0, 0.0, 1, 2).with_counts(50, 50),
        Node::inner(0, -1.0, 3, 4).with_counts(25, 25),
        Node::inner(1, 1.0, 5, 6).with_counts(25, 25),
        Node::leaf(0.0),
        Node::leaf(1.0),
        Node::leaf(2.0),
        Node::leaf(3.0),
    ])
    .expect("valid fixture");
    let s = tree_suitability(&t2, 2).scores;
    let fixture = s == [1.5, 0.5];
    check(
        failures == 0 && fixture,
        format!(
            "{comparisons} features on 100 trees, {failures} outside 4 SE (max z = {worst_z:.2}); T2 S = {s:?}"
        ),
    )
}

/// `a` ranks strictly ahead of `b` under the documented tie-break.
fn ranks_ahead(tree: &Tree, abs: &[f64], a: usize, b: usize) -> bool {
    abs[a]
        .total_cmp(&abs[b])
        .reverse()
        .then(tree.level(a).cmp(&tree.level(b)))
        .then(a.cmp(&b))
        .is_lt()
}

fn plan_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x91A4);
    let (mut plans, mut errors) = (0, Vec::new());
    for i in 0..200 {
        let tree = random_tree(
            &mut rng,
            &RandomTreeConfig {
                max_depth: 2 + i % 11,
                num_features: 6,
                ..RandomTreeConfig::default()
            },
        );
        let abs = annotate(&tree).absprob;
        let mut cumulative = vec![0];
        for id in tree.bfs_order() {
            if cumulative.len() <= tree.level(id) + 1 {
                cumulative.push(*cumulative.last().unwrap());
            }
            *cumulative.last_mut().unwrap() += 1;
        }
        for name in [TargetName::X86_64, TargetName::Aarch64, TargetName::Abstract] {
            let target = TargetDesc::new(name);
            let r = target.usable();
            for s in Strategy::ALL {
                let budget = if s == Strategy::StaticFeature { target.usable_fpr.len() } else { r };
                for k in [0, 1, 2, 3, 5, 8, 13, budget, budget + 1] {
                    for mode in [PackMode::FullNode, PackMode::SplitOnly] {
                        let tag = format!("tree {i} {name} {s} k={k} {mode:?}");
                        let plan = match plan_tree(&tree, 0, s, PlanOptions::new(k, mode), &target) {
                            Ok(p) => p,
                            Err(PlanError::TooManyRegisters { .. }) if k > budget => continue,
                            Err(e) => {
                                errors.push(format!("{tag}: {e}"));
                                continue;
                            }
                        };
                        if k > budget {
                            errors.push(format!("{tag}: accepted over budget"));
                        }
                        plans += 1;
                        if let Err(e) = plan.check(&tree, &target) {
                            errors.push(format!("{tag}: {e}"));
                        }
                        let used = plan.registers_used().len();
                        if used > r || used > k {
                            errors.push(format!("{tag}: {used} registers used"));
                        }
                        let chosen = plan.resident_nodes();
                        match s {
                            Strategy::NativeNode | Strategy::HybridNode | Strategy::IfElseNode => {
                                let set: BTreeSet<usize> = chosen.iter().copied().collect();
                                let top_ok = chosen.len() == k.min(tree.len())
                                    && set.iter().all(|&c| {
                                        (0..tree.len())
                                            .filter(|u| !set.contains(u))
                                            .all(|u| !ranks_ahead(&tree, &abs, u, c))
                                    });
                                if !top_ok {
                                    errors.push(format!("{tag}: residents {chosen:?} are not the top-k prefix"));
                                }
                            }
                            Strategy::HybridLayer => {
                                let want = cumulative.iter().copied().filter(|&c| c <= k).max().unwrap_or(0);
                                let levels_ok = chosen.iter().all(|&n| tree.level(n) < cumulative.iter().position(|&c| c == want).unwrap());
                                if chosen.len() != want || !levels_ok {
                                    errors.push(format!("{tag}: {} residents, cumulative layer size {want}", chosen.len()));
                                }
                            }
                            Strategy::StaticFeature => {
                                let top = tree_suitability(&tree, tree.max_feature().map_or(1, |f| f + 1)).top(k);
                                if plan.resident_features() != top {
                                    errors.push(format!("{tag}: pinned {:?}, expected {top:?}", plan.resident_features()));
                                }
                            }
                            Strategy::DynamicFeature => {}
                        }
                    }
                }
            }
        }
    }
    let first = errors.first().cloned().unwrap_or_default();
    check(
        errors.is_empty(),
        format!("{plans} plans over 3 targets, {} violations {first}", errors.len()),
    )
}

fn host_ready(tc: &Toolchain) -> Option<TargetDesc> {
    TargetDesc::host().filter(|_| tc.available())
}

fn host_end_to_end() -> Verdict {
    let tc = Toolchain::from_env();
    let Some(target) = host_ready(&tc) else {
        return Verdict::Skip("host architecture or system toolchain not available".into());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xE2E);
    const NF: usize = 10;
    let data = random_dataset(&mut rng, 4000, NF);
    let e = grow_ensemble(&mut rng, &data, 8, &GrowConfig { max_depth: 12, ..GrowConfig::default() });
    let mut xs = random_dataset(&mut rng, 6000, NF);
    for t in &e.trees {
        xs.extend(random_inputs(&mut rng, t, NF, 500));
    }
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(err) => return Verdict::Fail(err.to_string()),
    };
    let r = target.usable();
    let fprs = target.usable_fpr.len();
    let mut variants = vec![
        Variant::AsmNative,
        Variant::AsmIfElse,
        Variant::C(regforest::backends::BaselineKind::Native),
        Variant::C(regforest::backends::BaselineKind::IfElse),
    ];
    for s in Strategy::ALL {
        let budget = if s == Strategy::StaticFeature { fprs } else { r };
        for k in [1, 4, budget / 2, budget] {
            for mode in [PackMode::FullNode, PackMode::SplitOnly] {
                variants.push(Variant::Strategy(s, PlanOptions::new(k, mode)));
            }
        }
    }
    variants.dedup();
    let checks = match host_check(&e, &variants, &xs, &tc, dir.path()) {
        Ok(c) => c,
        Err(err) => return Verdict::Fail(err.to_string()),
    };
    let bad: Vec<String> = checks
        .iter()
        .filter(|c| c.mismatches > 0 || c.inputs < 10_000)
        .map(|c| format!("{}: {} mismatches", c.variant, c.mismatches))
        .collect();

    let abi = if target.name == TargetName::X86_64 {
        let mut vs = vec![Variant::AsmNative, Variant::AsmIfElse];
        for s in Strategy::ALL {
            let k = if s == Strategy::StaticFeature { fprs } else { r };
            vs.push(Variant::Strategy(s, PlanOptions::new(k, PackMode::FullNode)));
        }
        match abi_stress(&e, &vs, &xs, 1_000_000, &tc, dir.path()) {
            Ok(rep) => Some(rep),
            Err(err) => return Verdict::Fail(format!("ABI stress: {err}")),
        }
    } else {
        None
    };
    let abi_ok = abi.as_ref().is_none_or(|a| a.passed() && a.calls >= 1_000_000);
    let abi_text = abi.map_or_else(
        || "register probe not available on this host".to_string(),
        |a| format!("ABI {} calls, {} corrupted, {} mismatched", a.calls, a.corrupted, a.mismatched),
    );

    let mut cross = String::new();
    if target.name == TargetName::X86_64 && tc.can_assemble(TargetName::Aarch64) {
        let arm = TargetDesc::new(TargetName::Aarch64);
        let mut units = 0;
        for s in Strategy::ALL {
            match assemble_check(&e, Variant::Strategy(s, PlanOptions::new(8, PackMode::FullNode)), &arm, &tc, dir.path()) {
                Ok(n) => units += n,
                Err(err) => return Verdict::Fail(format!("aarch64 assembly: {err}")),
            }
        }
        cross = format!("; {units} aarch64 units assembled");
    }
    check(
        bad.is_empty() && abi_ok,
        format!(
            "{} configurations x {} inputs on {}, {} failing{}; {abi_text}{cross}",
            checks.len(),
            xs.len(),
            target.name,
            bad.len(),
            bad.first().map(|b| format!(" ({b})")).unwrap_or_default()
        ),
    )
}

fn bench_methodology() -> Verdict {
    let tc = Toolchain::from_env();
    if host_ready(&tc).is_none() {
        return Verdict::Skip("host architecture or system toolchain not available".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE4C);
    const NF: usize = 10;
    let train = random_dataset(&mut rng, 20_000, NF);
    let small = grow_ensemble(&mut rng, &train[..4000], 20, &GrowConfig { max_depth: 8, ..GrowConfig::default() });
    let large = grow_ensemble(
        &mut rng,
        &train[..8000],
        100,
        &GrowConfig { max_depth: 15, min_samples_split: 40, ..GrowConfig::default() },
    );
    let data = vec![("synthetic".to_string(), random_dataset(&mut rng, 10_000, NF))];
    let mut cfg = BenchConfig::new("synthetic".into(), Vec::new());
    cfg.reps = 11;
    cfg.toolchain = tc;
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    let mut directional = String::from("no hybrid node rows");
    for (label, e) in [("small", &small), ("large", &large)] {
        let report = match run_bench_on(e, &data, &cfg) {
            Ok(r) => r,
            Err(err) => return Verdict::Fail(format!("{label}: {err}")),
        };
        let class = SizeClass::of_depth(e.max_depth());
        let mut expected = 2;
        for &s in &cfg.strategies {
            let per = regforest_bench::bench::baselines_for(s).len();
            let ks = sweep_ks(s, &cfg.registers, e);
            let measured = ks
                .iter()
                .filter(|&&k| !(s == Strategy::StaticFeature && k > TargetDesc::host().unwrap().usable_fpr.len()))
                .count();
            expected += measured * per;
            if measured > 0
                && !report
                    .geomeans
                    .iter()
                    .any(|g| g.strategy == s.abbrev() && g.size_class == class && g.value.is_finite() && g.value > 0.0)
            {
                problems.push(format!("{label}: no {s} geomean"));
            }
        }
        if report.rows.len() != expected {
            problems.push(format!("{label}: {} rows, expected {expected}", report.rows.len()));
        }
        for c in &report.self_checks {
            if c.self_normalized != 1.0 || (c.rerun_ratio - 1.0).abs() > 0.05 {
                problems.push(format!(
                    "{label} {}: self {} rerun ratio {:.3}",
                    c.baseline, c.self_normalized, c.rerun_ratio
                ));
            }
            summary.push(format!("{label} {} rerun {:.3}", c.baseline, c.rerun_ratio));
        }
        if label == "large" {
            if let Some(d) = &report.directional {
                directional = format!(
                    "hn/native geomean {:.3} on depth-{} {}-tree ensemble: {} (non-gating)",
                    d.geomean,
                    e.max_depth(),
                    e.trees.len(),
                    if d.holds { "below 1.0" } else { "NOT below 1.0" }
                );
            }
        }
    }
    check(
        problems.is_empty(),
        format!(
            "{}; {}; {directional}",
            if problems.is_empty() { "rows and small/large geomeans complete".to_string() } else { problems.join(", ") },
            summary.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = false;
    let mut emit = |name: &str, started: Instant, v: Verdict| {
        let secs = started.elapsed().as_secs_f64();
        match v {
            Verdict::Pass(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
            Verdict::Skip(d) => println!("SKIP {name}: {d}"),
            Verdict::Fail(d) => {
                failed = true;
                println!("FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    let suite = differential_suite();
    emit("differential correctness", t, differential(&suite));
    let t = Instant::now();
    emit("brute-force path oracle", t, brute_force());
    let t = Instant::now();
    emit("absolute probabilities", t, absprob());
    let t = Instant::now();
    emit("suitability vs Monte Carlo", t, suitability());
    let t = Instant::now();
    emit("plan properties", t, plan_properties());
    emit("residency traces", Instant::now(), residency(&suite));
    let t = Instant::now();
    emit("host end-to-end", t, host_end_to_end());
    let t = Instant::now();
    emit("benchmark methodology", t, bench_methodology());
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
