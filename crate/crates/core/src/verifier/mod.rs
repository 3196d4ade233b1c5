//! Differential verification of generated IR against direct tree inference.
//!
//! Every realization of a tree (both baselines and each planned strategy) is
//! interpreted on the same inputs and must return the bit-identical
//! prediction. Traces are also checked for residency: nothing the plan put
//! in a register may be fetched from memory.

mod interp;

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub use interp::{
    interpret, interpret_batch, ExecTrace, FeatureLoad, Machine, RecordLoad, TrapError,
    DEFAULT_STEP_LIMIT,
};

use crate::ir::{
    build_ifelse_baseline, build_native_baseline, build_strategy, BuildError, InferenceIR, Inst,
    IrKind, RecordError, RecordTable,
};
use crate::model::{aggregate, Ensemble, NodeId, Tree};
use crate::planner::{
    plan_ensemble, AllocationPlan, CacheAction, PlanError, PlanOptions, Strategy, TargetDesc,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// One input per reachable leaf that drives the tree to that leaf, with
/// every `<=` decision taken at its boundary where possible.
pub fn path_inputs(tree: &Tree, num_features: usize) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    for leaf in tree.leaves() {
        let path = tree.path(leaf);
        let mut lo = vec![f32::NEG_INFINITY; num_features];
        let mut hi = vec![f32::INFINITY; num_features];
        for w in path.windows(2) {
            let node = tree.node(w[0]);
            let (f, s) = (node.feature().expect("inner"), node.value());
            let (l, _) = node.children().expect("inner");
            if w[1] == l {
                hi[f] = hi[f].min(s);
            } else {
                lo[f] = lo[f].max(s);
            }
        }
        let x: Option<Vec<f32>> = (0..num_features)
            .map(|f| {
                let (lo, hi) = (lo[f], hi[f]);
                if lo >= hi {
                    None
                } else if hi.is_finite() {
                    Some(hi)
                } else if lo.is_finite() {
                    Some(lo.next_up())
                } else {
                    Some(0.0)
                }
            })
            .collect();
        if let Some(x) = x {
            debug_assert_eq!(tree.leaf_for(&x), leaf);
            out.push(x);
        }
    }
    out
}

/// Path inputs for every tree plus random tuples.
pub fn verification_inputs<R: Rng + ?Sized>(
    rng: &mut R,
    ensemble: &Ensemble,
    random: usize,
) -> Vec<Vec<f32>> {
    let nf = ensemble.num_features;
    let mut xs: Vec<Vec<f32>> = ensemble.trees.iter().flat_map(|t| path_inputs(t, nf)).collect();
    for (i, t) in ensemble.trees.iter().enumerate() {
        let share = random / ensemble.trees.len().max(1) + usize::from(i < random % ensemble.trees.len().max(1));
        xs.extend(crate::synth::random_inputs(rng, t, nf, share));
    }
    xs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub tree: usize,
    pub realization: String,
    pub input: usize,
    pub expected: f32,
    pub got: Option<f32>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub tree: usize,
    pub realization: String,
    pub input: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub trees: usize,
    pub inputs: usize,
    pub realizations: Vec<String>,
    /// Tuple executions compared against direct inference.
    pub checks: usize,
    pub mismatches: Vec<Mismatch>,
    pub violations: Vec<Violation>,
    /// Inputs where the aggregated ensemble output differs, per strategy.
    pub ensemble_mismatches: Vec<(String, usize)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.violations.is_empty() && self.ensemble_mismatches.is_empty()
    }
}

/// Residency problems in one trace.
pub fn residency_violations(
    ir: &InferenceIR,
    plan: &AllocationPlan,
    trace: &ExecTrace,
) -> Vec<String> {
    let mut out = Vec::new();
    let resident: BTreeSet<NodeId> = plan.resident_nodes().into_iter().collect();
    let pinned: BTreeSet<usize> = plan.resident_features().into_iter().collect();
    for l in &trace.record_loads {
        if resident.contains(&l.node) {
            out.push(format!("record of resident node {} loaded from memory", l.node));
        } else if plan.ifelse_set.contains(&l.node) {
            out.push(format!("record of if-else node {} loaded from memory", l.node));
        }
    }
    for l in &trace.feature_loads {
        if pinned.contains(&l.feature) {
            out.push(format!("pinned feature {} loaded from memory", l.feature));
        }
        if let Some(origin) = ir.origins[l.at] {
            if matches!(plan.cache_schedule.get(&origin), Some(CacheAction::Hit(_))) {
                out.push(format!("node {origin}: cached feature loaded from memory"));
            }
        }
    }
    for &at in &trace.executed {
        if let (Inst::Const { .. }, Some(origin)) = (&ir.instructions[at], ir.origins[at]) {
            if resident.contains(&origin) {
                out.push(format!("resident node {origin} used an immediate"));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    report: &mut VerifyReport,
    tree_index: usize,
    tree: &Tree,
    name: &str,
    ir: &InferenceIR,
    plan: Option<&AllocationPlan>,
    records: &RecordTable,
    xs: &[Vec<f32>],
    outputs: &mut [f32],
) {
    let mut machine = Machine::new(ir, records);
    for (i, x) in xs.iter().enumerate() {
        let expected = tree.infer(x);
        report.checks += 1;
        match machine.run(x) {
            Ok(trace) => {
                outputs[i] = trace.returned;
                if trace.returned.to_bits() != expected.to_bits() {
                    report.mismatches.push(Mismatch {
                        tree: tree_index,
                        realization: name.to_string(),
                        input: i,
                        expected,
                        got: Some(trace.returned),
                        detail: String::new(),
                    });
                }
                if let Some(plan) = plan {
                    for detail in residency_violations(ir, plan, &trace) {
                        report.violations.push(Violation {
                            tree: tree_index,
                            realization: name.to_string(),
                            input: i,
                            detail,
                        });
                    }
                }
            }
            Err(e) => {
                outputs[i] = f32::NAN;
                report.mismatches.push(Mismatch {
                    tree: tree_index,
                    realization: name.to_string(),
                    input: i,
                    expected,
                    got: None,
                    detail: e.to_string(),
                });
                // the register file may be inconsistent after a trap
                machine = Machine::new(ir, records);
            }
        }
    }
}

/// Plans and builds every strategy for every tree, then compares all
/// realizations against direct inference on `xs`.
pub fn differential_check(
    ensemble: &Ensemble,
    strategies: &[Strategy],
    opts: PlanOptions,
    target: &TargetDesc,
    xs: &[Vec<f32>],
) -> Result<VerifyReport, VerifyError> {
    let plans: Vec<(Strategy, Vec<AllocationPlan>)> = strategies
        .iter()
        .map(|&s| Ok((s, plan_ensemble(ensemble, s, opts, target)?)))
        .collect::<Result<_, PlanError>>()?;
    let nf = ensemble.num_features;
    let mut report = VerifyReport {
        trees: ensemble.trees.len(),
        inputs: xs.len(),
        realizations: ["native", "ifelse"]
            .into_iter()
            .map(String::from)
            .chain(strategies.iter().map(|s| s.abbrev().to_string()))
            .collect(),
        ..Default::default()
    };
    // per realization, per input, per tree
    let mut outputs = vec![vec![vec![0f32; ensemble.trees.len()]; xs.len()]; report.realizations.len()];
    let mut scratch = vec![0f32; xs.len()];
    for (t, tree) in ensemble.trees.iter().enumerate() {
        let records = RecordTable::from_tree(tree)?;
        let mut irs: Vec<(String, InferenceIR, Option<&AllocationPlan>)> = vec![
            ("native".into(), build_native_baseline(tree, t, nf), None),
            ("ifelse".into(), build_ifelse_baseline(tree, t, nf), None),
        ];
        for (s, ps) in &plans {
            irs.push((s.abbrev().into(), build_strategy(tree, &ps[t], nf)?, Some(&ps[t])));
        }
        for (r, (name, ir, plan)) in irs.iter().enumerate() {
            run_one(&mut report, t, tree, name, ir, *plan, &records, xs, &mut scratch);
            for (i, v) in scratch.iter().enumerate() {
                outputs[r][i][t] = *v;
            }
        }
    }
    for (r, name) in report.realizations.clone().iter().enumerate() {
        let bad = xs
            .iter()
            .enumerate()
            .filter(|(i, x)| {
                aggregate(&outputs[r][*i], ensemble.aggregation).to_bits()
                    != ensemble.infer(x).to_bits()
            })
            .count();
        if bad > 0 {
            report.ensemble_mismatches.push((name.clone(), bad));
        }
    }
    Ok(report)
}

/// Checks that an IR is the realization it claims to be.
pub fn kind_matches(ir: &InferenceIR, strategy: Strategy) -> bool {
    ir.meta.kind == IrKind::Strategy(strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::planner::{plan_tree, PackMode, Payload, TargetName};
    use crate::synth::{random_ensemble, RandomTreeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn abstract_target() -> TargetDesc {
        TargetDesc::new(TargetName::Abstract)
    }

    #[test]
    fn path_inputs_reach_every_leaf() {
        for t in [t1(), t2(), complete(3)] {
            let xs = path_inputs(&t, 3);
            let leaves: BTreeSet<NodeId> = xs.iter().map(|x| t.leaf_for(x)).collect();
            assert_eq!(leaves, t.leaves().collect());
        }
        // later chain leaves contradict earlier tests on the same feature
        let xs = path_inputs(&chain(7), 1);
        let leaves: BTreeSet<NodeId> = xs.iter().map(|x| chain(7).leaf_for(x)).collect();
        assert_eq!(leaves, BTreeSet::from([1, 14]));
    }

    #[test]
    fn unreachable_leaves_are_skipped() {
        // second test on feature 0 contradicts the first on the left side
        let t = Tree::new(vec![
            crate::model::Node::inner(0, 0.0, 1, 2),
            crate::model::Node::inner(0, 1.0, 3, 4),
            crate::model::Node::leaf(2.0),
            crate::model::Node::leaf(3.0),
            crate::model::Node::leaf(4.0),
        ])
        .unwrap();
        assert_eq!(path_inputs(&t, 1).len(), 2);
    }

    #[test]
    fn all_strategies_agree_on_random_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = RandomTreeConfig {
            max_depth: 7,
            num_features: 5,
            ..RandomTreeConfig::default()
        };
        let e = random_ensemble(&mut rng, 6, &cfg);
        let xs = verification_inputs(&mut rng, &e, 200);
        let no_sf: Vec<Strategy> = Strategy::ALL
            .into_iter()
            .filter(|s| *s != Strategy::StaticFeature)
            .collect();
        for k in [1, 4, 14, 20] {
            // static feature caching is limited to the 14 abstract FPRs
            let strategies = if k > 14 { &no_sf[..] } else { &Strategy::ALL[..] };
            for mode in [PackMode::FullNode, PackMode::SplitOnly] {
                let r = differential_check(&e, strategies, PlanOptions::new(k, mode), &abstract_target(), &xs)
                    .unwrap();
                assert!(r.passed(), "k={k} {mode:?}: {r:?}");
                assert_eq!(r.checks, xs.len() * e.trees.len() * (2 + strategies.len()));
            }
        }
    }

    #[test]
    fn corrupted_payload_is_caught() {
        let t = complete(5);
        let target = abstract_target();
        let xs = path_inputs(&t, 3);
        let rec = RecordTable::from_tree(&t).unwrap();
        for s in [Strategy::NativeNode, Strategy::HybridNode, Strategy::IfElseNode] {
            let plan = plan_tree(&t, 0, s, PlanOptions::new(6, PackMode::FullNode), &target).unwrap();
            let mut ir = build_strategy(&t, &plan, 3).unwrap();
            let clean = interpret_batch(&ir, &rec, &xs).unwrap();
            assert!(clean.iter().zip(&xs).all(|(tr, x)| tr.returned == t.infer(x)));
            // flip one bit in the split field of the root payload
            let Some(Inst::SetupResident { payload, .. }) = ir.instructions.get_mut(1) else {
                panic!("expected a resident")
            };
            *payload ^= 1 << 60;
            let bad = xs
                .iter()
                .filter(|x| interpret(&ir, &rec, x).map(|tr| tr.returned) != Ok(t.infer(x)))
                .count();
            assert!(bad > 0, "{s}");
        }
    }

    #[test]
    fn residency_is_respected() {
        let t = complete(6);
        let target = abstract_target();
        let xs = path_inputs(&t, 3);
        let rec = RecordTable::from_tree(&t).unwrap();
        for s in Strategy::ALL {
            let plan = plan_tree(&t, 0, s, PlanOptions::new(8, PackMode::FullNode), &target).unwrap();
            let ir = build_strategy(&t, &plan, 3).unwrap();
            for tr in interpret_batch(&ir, &rec, &xs).unwrap() {
                assert!(residency_violations(&ir, &plan, &tr).is_empty());
            }
        }
    }

    #[test]
    fn residency_checker_flags_memory_reads() {
        let t = complete(4);
        let target = abstract_target();
        let plan = plan_tree(&t, 0, Strategy::NativeNode, PlanOptions::new(3, PackMode::FullNode), &target)
            .unwrap();
        // the baseline loads every record, including resident ones
        let ir = build_native_baseline(&t, 0, 3);
        let rec = RecordTable::from_tree(&t).unwrap();
        let tr = interpret(&ir, &rec, &[0.0, 0.0, 0.0]).unwrap();
        assert!(!residency_violations(&ir, &plan, &tr).is_empty());
        assert!(plan.residents.iter().any(|r| matches!(r.payload, Payload::Node { id: 0, .. })));
    }

    #[test]
    fn native_node_skips_resident_record_loads() {
        let t = chain(6);
        let target = abstract_target();
        let rec = RecordTable::from_tree(&t).unwrap();
        let plan = plan_tree(&t, 0, Strategy::NativeNode, PlanOptions::new(4, PackMode::FullNode), &target)
            .unwrap();
        let ir = build_strategy(&t, &plan, 1).unwrap();
        let base = build_native_baseline(&t, 0, 1);
        for x in path_inputs(&t, 1) {
            let a = interpret(&ir, &rec, &x).unwrap();
            let b = interpret(&base, &rec, &x).unwrap();
            let resident_on_path = t
                .path(t.leaf_for(&x))
                .iter()
                .filter(|n| plan.resident_nodes().contains(n))
                .count();
            assert_eq!(b.record_loads.len() - a.record_loads.len(), resident_on_path);
        }
    }

    #[test]
    fn dynamic_cache_persists_across_a_batch() {
        let t = t2();
        let target = abstract_target();
        let rec = RecordTable::from_tree(&t).unwrap();
        let plan = plan_tree(&t, 0, Strategy::DynamicFeature, PlanOptions::new(1, PackMode::FullNode), &target)
            .unwrap();
        let ir = build_strategy(&t, &plan, 2).unwrap();
        let xs = vec![vec![-2.0, 0.0], vec![0.5, 2.0], vec![-0.5, 0.0]];
        let traces = interpret_batch(&ir, &rec, &xs).unwrap();
        for (tr, x) in traces.iter().zip(&xs) {
            assert_eq!(tr.returned, t.infer(x));
        }
        // node 1 reuses the root's feature 0
        assert_eq!(traces[0].feature_loads.len(), 1);
        assert!(kind_matches(&ir, Strategy::DynamicFeature));
    }
}
