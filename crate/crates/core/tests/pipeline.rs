use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regforest::backends::lower;
use regforest::ir::{build_ifelse_baseline, build_native_baseline, build_strategy, RecordTable};
use regforest::planner::{plan_ensemble, plan_tree, Family};
use regforest::synth::{random_ensemble, random_inputs, random_tree, RandomTreeConfig};
use regforest::verifier::{differential_check, interpret, path_inputs, verification_inputs};
use regforest::{load_model, PackMode, PlanOptions, Strategy, TargetDesc, TargetName, Tree};

fn tree_from_seed(seed: u64, depth: usize) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree(
        &mut rng,
        &RandomTreeConfig {
            max_depth: depth,
            num_features: 5,
            ..RandomTreeConfig::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip(seed in any::<u64>(), trees in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_ensemble(&mut rng, trees, &RandomTreeConfig::default());
        let back = load_model(e.to_json().as_bytes()).unwrap();
        prop_assert_eq!(&back, &e);
    }

    #[test]
    fn strategies_with_no_registers_are_baselines(seed in any::<u64>(), depth in 1usize..10) {
        let t = tree_from_seed(seed, depth);
        let target = TargetDesc::new(TargetName::Abstract);
        let native = build_native_baseline(&t, 0, 5);
        let ifelse = build_ifelse_baseline(&t, 0, 5);
        for s in Strategy::ALL {
            let plan = plan_tree(&t, 0, s, PlanOptions::new(0, PackMode::FullNode), &target).unwrap();
            let ir = build_strategy(&t, &plan, 5).unwrap();
            let base = match s.family() {
                Family::Native => &native,
                Family::IfElse => &ifelse,
            };
            prop_assert!(ir.same_code(base), "{}", s);
        }
    }

    #[test]
    fn native_loads_one_record_per_decision(seed in any::<u64>(), depth in 1usize..12) {
        let t = tree_from_seed(seed, depth);
        let ir = build_native_baseline(&t, 0, 5);
        let records = RecordTable::from_tree(&t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for x in random_inputs(&mut rng, &t, 5, 50) {
            let trace = interpret(&ir, &records, &x).unwrap();
            let path = t.visit(&x);
            prop_assert_eq!(trace.decision_loads(), path.len() - 1);
            // a lone leaf is returned without touching the record table
            let total = if t.len() == 1 { 0 } else { path.len() };
            prop_assert_eq!(trace.record_loads.len(), total);
            prop_assert_eq!(trace.returned.to_bits(), t.infer(&x).to_bits());
        }
    }

    #[test]
    fn every_realization_agrees(seed in any::<u64>(), k in 0usize..15, split_only in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_ensemble(&mut rng, 3, &RandomTreeConfig { max_depth: 9, ..RandomTreeConfig::default() });
        let xs = verification_inputs(&mut rng, &e, 100);
        let mode = if split_only { PackMode::SplitOnly } else { PackMode::FullNode };
        let target = TargetDesc::new(TargetName::Abstract);
        let report = differential_check(&e, &Strategy::ALL, PlanOptions::new(k, mode), &target, &xs).unwrap();
        prop_assert!(report.passed(), "{:?}", report.mismatches.first());
    }
}

#[test]
fn path_inputs_hit_leaf_boundaries() {
    let t = tree_from_seed(11, 8);
    for x in path_inputs(&t, 5) {
        let leaf = t.leaf_for(&x);
        assert!(t.node(leaf).is_leaf());
    }
}

#[test]
fn host_plans_lower_for_both_architectures() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = random_ensemble(&mut rng, 4, &RandomTreeConfig { max_depth: 10, ..RandomTreeConfig::default() });
    for name in [TargetName::X86_64, TargetName::Aarch64] {
        let target = TargetDesc::new(name);
        for s in Strategy::ALL {
            let k = if s == Strategy::StaticFeature { target.usable_fpr.len() } else { target.usable() };
            for k in [1, k / 2, k] {
                for mode in [PackMode::FullNode, PackMode::SplitOnly] {
                    let plans = plan_ensemble(&e, s, PlanOptions::new(k, mode), &target).unwrap();
                    for (t, plan) in e.trees.iter().zip(&plans) {
                        let ir = build_strategy(t, plan, e.num_features).unwrap();
                        let unit = lower(&ir, &target).unwrap();
                        assert!(unit.assembly.contains(&format!("{}:", unit.batch_symbol)));
                    }
                }
            }
        }
    }
}
