use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use super::{
    Dest, FeatureIndex, Field, IndexSrc, InferenceIR, Inst, IrKind, IrMeta, Label, FEAT, IDX,
    LEFT, RIGHT, SPLIT, XVAL,
};
use crate::model::{NodeId, NodeKind, Tree, LEAF_SENTINEL};
use crate::planner::{
    AllocationPlan, CacheAction, Family, PackedNode, Payload, Register, SlotSemantics, Strategy,
    TargetDesc,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error("plan does not match tree: {0}")]
    PlanMismatch(String),
}

fn mismatch(msg: impl Into<String>) -> BuildError {
    BuildError::PlanMismatch(msg.into())
}

/// Index-chasing loop over the node record table.
pub fn build_native_baseline(tree: &Tree, tree_index: usize, num_features: usize) -> InferenceIR {
    let ctx = Ctx::baseline(tree, BTreeSet::new());
    Gen::new(tree, ctx).run(IrKind::NativeBaseline, tree_index, num_features)
}

/// One code block per node, splits as instruction immediates.
pub fn build_ifelse_baseline(tree: &Tree, tree_index: usize, num_features: usize) -> InferenceIR {
    let ctx = Ctx::baseline(tree, (0..tree.len()).collect());
    Gen::new(tree, ctx).run(IrKind::IfElseBaseline, tree_index, num_features)
}

pub fn build_strategy(
    tree: &Tree,
    plan: &AllocationPlan,
    num_features: usize,
) -> Result<InferenceIR, BuildError> {
    check_plan(tree, plan)?;
    let target = TargetDesc::new(plan.target);
    let used = plan.registers_used();
    let ctx = Ctx {
        ifelse: plan.ifelse_set.clone(),
        residents: plan
            .residents
            .iter()
            .filter_map(|r| match r.payload {
                Payload::Node { id, packed } => Some((id, (r.reg, packed))),
                Payload::Feature(_) => None,
            })
            .collect(),
        resident_order: plan.resident_nodes(),
        pinned: plan
            .residents
            .iter()
            .filter_map(|r| match r.payload {
                Payload::Feature(f) => Some((f, r.reg)),
                Payload::Node { .. } => None,
            })
            .collect(),
        chain: plan.strategy == Strategy::NativeNode,
        cache: plan.cache_schedule.clone().into_iter().collect(),
        save: used
            .iter()
            .copied()
            .filter(|r| target.is_callee_saved(*r))
            .collect(),
        clobbers: used.into_iter().collect(),
    };
    let ir = Gen::new(tree, ctx).run(IrKind::Strategy(plan.strategy), plan.tree_index, num_features);
    Ok(ir)
}

fn check_plan(tree: &Tree, plan: &AllocationPlan) -> Result<(), BuildError> {
    let n = tree.len();
    let in_range = |id: &NodeId| *id < n;
    if !plan.ifelse_set.iter().all(in_range)
        || !plan.native_set.iter().all(in_range)
        || !plan.cache_schedule.keys().all(in_range)
        || !plan.resident_nodes().iter().all(in_range)
    {
        return Err(mismatch("plan references node ids outside the tree"));
    }
    if !plan.ifelse_set.is_disjoint(&plan.native_set)
        || plan.ifelse_set.len() + plan.native_set.len() != n
    {
        return Err(mismatch("if-else and native sets do not partition the tree"));
    }
    let regs: BTreeSet<Register> = plan.residents.iter().map(|r| r.reg).collect();
    if regs.len() != plan.residents.len() {
        return Err(mismatch("two residents share a register"));
    }
    let has_nodes = !plan.resident_nodes().is_empty();
    let has_features = !plan.resident_features().is_empty();
    match plan.strategy {
        Strategy::StaticFeature if has_nodes => {
            return Err(mismatch("static feature plan with node residents"))
        }
        Strategy::DynamicFeature if has_nodes || has_features => {
            return Err(mismatch("dynamic feature plan with static residents"))
        }
        Strategy::NativeNode | Strategy::HybridNode | Strategy::HybridLayer | Strategy::IfElseNode
            if has_features =>
        {
            return Err(mismatch("node plan with feature residents"))
        }
        _ => {}
    }
    match plan.strategy.family() {
        Family::IfElse if !plan.native_set.is_empty() => {
            return Err(mismatch("if-else strategy with native nodes"))
        }
        Family::Native if !plan.strategy.is_hybrid() && !plan.ifelse_set.is_empty() => {
            return Err(mismatch("native strategy with if-else nodes"))
        }
        _ => {}
    }
    // native code never jumps back into if-else code
    for &id in &plan.native_set {
        if let Some((l, r)) = tree.node(id).children() {
            if plan.ifelse_set.contains(&l) || plan.ifelse_set.contains(&r) {
                return Err(mismatch(format!("native node {id} has an if-else child")));
            }
        }
    }
    if !plan.ifelse_set.is_empty() && !plan.ifelse_set.contains(&0) {
        return Err(mismatch("if-else nodes must include the root"));
    }
    for r in &plan.residents {
        if let Payload::Node { id, packed } = r.payload {
            check_semantics(tree, plan, id, packed)?;
        }
    }
    if plan.strategy == Strategy::DynamicFeature {
        check_cache(tree, plan)?;
    }
    Ok(())
}

fn check_semantics(
    tree: &Tree,
    plan: &AllocationPlan,
    id: NodeId,
    packed: PackedNode,
) -> Result<(), BuildError> {
    use SlotSemantics::*;
    let node = tree.node(id);
    let ok = match (node.children(), packed.semantics) {
        (None, Leaf | Empty) => true,
        (None, _) | (Some(_), Leaf) => false,
        (Some(_), Empty) => true,
        (Some((l, r)), sem) => {
            let ie = |c: NodeId| plan.ifelse_set.contains(&c);
            let expected = match (ie(l), ie(r)) {
                (false, false) => Children,
                (true, true) => FeatureOnly,
                (false, true) => FeatureAndLeft,
                (true, false) => FeatureAndRight,
            };
            sem == expected
        }
    };
    if ok {
        Ok(())
    } else {
        Err(mismatch(format!(
            "payload of node {id} has {:?} slots, which does not match its children",
            packed.semantics
        )))
    }
}

fn check_cache(tree: &Tree, plan: &AllocationPlan) -> Result<(), BuildError> {
    if plan.registers == 0 {
        return if plan.cache_schedule.is_empty() {
            Ok(())
        } else {
            Err(mismatch("cache schedule without cache registers"))
        };
    }
    let mut stack: Vec<(NodeId, HashMap<Register, usize>)> = vec![(0, HashMap::new())];
    while let Some((id, mut cache)) = stack.pop() {
        let node = tree.node(id);
        let (Some(f), Some((l, r))) = (node.feature(), node.children()) else {
            continue;
        };
        match plan.cache_schedule.get(&id) {
            None => return Err(mismatch(format!("no cache action for node {id}"))),
            Some(CacheAction::Hit(reg)) => {
                if cache.get(reg) != Some(&f) {
                    return Err(mismatch(format!("node {id}: cache hit on a register not holding feature {f}")));
                }
            }
            Some(CacheAction::Load { reg, evict }) => {
                if cache.get(reg).copied() != *evict {
                    return Err(mismatch(format!("node {id}: eviction does not match cache state")));
                }
                cache.insert(*reg, f);
            }
        }
        stack.push((r, cache.clone()));
        stack.push((l, cache));
    }
    Ok(())
}

struct Ctx {
    ifelse: BTreeSet<NodeId>,
    residents: HashMap<NodeId, (Register, PackedNode)>,
    resident_order: Vec<NodeId>,
    pinned: Vec<(usize, Register)>,
    chain: bool,
    cache: HashMap<NodeId, CacheAction>,
    save: Vec<Register>,
    clobbers: Vec<Register>,
}

impl Ctx {
    fn baseline(_tree: &Tree, ifelse: BTreeSet<NodeId>) -> Self {
        Ctx {
            ifelse,
            residents: HashMap::new(),
            resident_order: Vec::new(),
            pinned: Vec::new(),
            chain: false,
            cache: HashMap::new(),
            save: Vec::new(),
            clobbers: Vec::new(),
        }
    }
}

struct Gen<'a> {
    tree: &'a Tree,
    ctx: Ctx,
    insts: Vec<Inst>,
    origins: Vec<Option<NodeId>>,
    labels: Vec<(String, usize)>,
    origin: Option<NodeId>,
    node_labels: HashMap<NodeId, Label>,
    loop_label: Option<Label>,
}

impl<'a> Gen<'a> {
    fn new(tree: &'a Tree, ctx: Ctx) -> Self {
        Gen {
            tree,
            ctx,
            insts: Vec::new(),
            origins: Vec::new(),
            labels: Vec::new(),
            origin: None,
            node_labels: HashMap::new(),
            loop_label: None,
        }
    }

    fn label(&mut self, name: impl Into<String>) -> Label {
        self.labels.push((name.into(), usize::MAX));
        Label(self.labels.len() as u32 - 1)
    }

    fn bind(&mut self, l: Label) {
        self.labels[l.0 as usize].1 = self.insts.len();
    }

    fn emit(&mut self, inst: Inst) {
        self.insts.push(inst);
        self.origins.push(self.origin);
    }

    fn loop_label(&mut self) -> Label {
        match self.loop_label {
            Some(l) => l,
            None => {
                let l = self.label("loop");
                self.loop_label = Some(l);
                l
            }
        }
    }

    fn ret(&mut self) {
        self.emit(Inst::Epilogue {
            restore: self.ctx.save.clone(),
        });
        self.emit(Inst::Return(SPLIT));
    }

    fn run(mut self, kind: IrKind, tree_index: usize, num_features: usize) -> InferenceIR {
        self.emit(Inst::Prologue {
            save: self.ctx.save.clone(),
        });
        for id in self.ctx.resident_order.clone() {
            let (reg, packed) = self.ctx.residents[&id];
            self.origin = Some(id);
            self.emit(Inst::SetupResident {
                reg,
                payload: packed.bits,
            });
        }
        self.origin = None;
        let body_start = self.insts.len();
        let body = self.label("body");
        self.bind(body);
        for (feature, reg) in self.ctx.pinned.clone() {
            self.emit(Inst::PinFeature { feature, reg });
        }

        let root = self.tree.node(0);
        if self.ctx.ifelse.contains(&0) {
            self.emit_ifelse_tree();
            if let Some(l) = self.loop_label {
                self.emit_loop(l);
            }
        } else if root.is_leaf() {
            self.emit_static_leaf(0);
        } else {
            self.emit(Inst::SetIndex {
                src: IndexSrc::Imm(0),
                dst: IDX,
            });
            let l = self.loop_label();
            self.emit_loop(l);
        }

        for (name, at) in &self.labels {
            debug_assert!(*at != usize::MAX, "label {name} left unbound");
        }
        InferenceIR {
            instructions: self.insts,
            labels: self.labels,
            origins: self.origins,
            body_start,
            meta: IrMeta {
                kind,
                tree_index,
                num_features,
                clobbers: self.ctx.clobbers,
                uses_records: self.loop_label.is_some(),
            },
        }
    }

    /// Returns a leaf whose location is known at compile time.
    fn emit_static_leaf(&mut self, id: NodeId) {
        self.origin = Some(id);
        match self.ctx.residents.get(&id) {
            Some(&(reg, _)) => self.emit(Inst::UseNodeReg {
                reg,
                field: Field::Split,
                dst: SPLIT,
            }),
            None => self.emit(Inst::Const {
                value: self.tree.node(id).value(),
                dst: SPLIT,
            }),
        }
        self.ret();
        self.origin = None;
    }

    fn emit_loop(&mut self, top: Label) {
        self.origin = None;
        self.bind(top);
        let arms: Vec<(NodeId, Label)> = if self.ctx.chain {
            self.ctx
                .resident_order
                .clone()
                .into_iter()
                .map(|id| (id, self.label(format!("r{id}"))))
                .collect()
        } else {
            Vec::new()
        };
        for &(id, arm) in &arms {
            self.emit(Inst::CmpEqBranch {
                a: IDX,
                imm: id as u32,
                target: arm,
            });
        }
        self.emit(Inst::LoadNodeRecord {
            index: IDX,
            split: SPLIT,
            feature: FEAT,
            left: LEFT,
            right: RIGHT,
        });
        let leaf = self.label("leaf");
        self.emit(Inst::CmpEqBranch {
            a: FEAT,
            imm: u32::from(LEAF_SENTINEL),
            target: leaf,
        });
        if self.ctx.pinned.is_empty() {
            self.emit(Inst::LoadFeatureMem {
                index: FeatureIndex::Reg(FEAT),
                dst: Dest::V(XVAL),
            });
        } else {
            let pinned = self.ctx.pinned.clone();
            let uses: Vec<Label> = pinned
                .iter()
                .map(|(f, _)| self.label(format!("pinned_f{f}")))
                .collect();
            let cmp = self.label("compare");
            for (&(f, _), &u) in pinned.iter().zip(&uses) {
                self.emit(Inst::CmpEqBranch {
                    a: FEAT,
                    imm: f as u32,
                    target: u,
                });
            }
            self.emit(Inst::LoadFeatureMem {
                index: FeatureIndex::Reg(FEAT),
                dst: Dest::V(XVAL),
            });
            self.emit(Inst::Jmp(cmp));
            for (&(_, reg), &u) in pinned.iter().zip(&uses) {
                self.bind(u);
                self.emit(Inst::UseFeatureReg { reg, dst: XVAL });
                self.emit(Inst::Jmp(cmp));
            }
            self.bind(cmp);
        }
        let go_left = self.label("go_left");
        let go_right = self.label("go_right");
        self.emit(Inst::CmpLeBranch {
            a: XVAL,
            b: SPLIT,
            if_true: go_left,
            if_false: go_right,
        });
        for (l, v) in [(go_left, LEFT), (go_right, RIGHT)] {
            self.bind(l);
            self.emit(Inst::SetIndex {
                src: IndexSrc::V(v),
                dst: IDX,
            });
            self.emit(Inst::Jmp(top));
        }
        self.bind(leaf);
        self.ret();

        for (id, arm) in arms {
            self.bind(arm);
            self.emit_chain_arm(id, top);
        }
        self.origin = None;
    }

    fn emit_chain_arm(&mut self, id: NodeId, top: Label) {
        self.origin = Some(id);
        let (reg, packed) = self.ctx.residents[&id];
        let NodeKind::Inner {
            feature,
            left,
            right,
            ..
        } = self.tree.node(id).kind
        else {
            self.emit_static_leaf(id);
            return;
        };
        self.emit(Inst::UseNodeReg {
            reg,
            field: Field::Split,
            dst: SPLIT,
        });
        self.emit(Inst::LoadFeatureMem {
            index: FeatureIndex::Imm(feature),
            dst: Dest::V(XVAL),
        });
        let l = self.label(format!("r{id}_left"));
        let r = self.label(format!("r{id}_right"));
        self.emit(Inst::CmpLeBranch {
            a: XVAL,
            b: SPLIT,
            if_true: l,
            if_false: r,
        });
        let slots = packed.semantics == SlotSemantics::Children;
        for (label, child, field) in [(l, left, Field::SlotA), (r, right, Field::SlotB)] {
            self.bind(label);
            if slots {
                self.emit(Inst::UseNodeReg {
                    reg,
                    field,
                    dst: IDX,
                });
            } else {
                self.emit(Inst::SetIndex {
                    src: IndexSrc::Imm(child as u32),
                    dst: IDX,
                });
            }
            self.emit(Inst::Jmp(top));
        }
    }

    fn node_label(&mut self, id: NodeId) -> Label {
        if let Some(&l) = self.node_labels.get(&id) {
            return l;
        }
        let l = self.label(format!("n{id}"));
        self.node_labels.insert(id, l);
        l
    }

    /// If-else blocks in depth-first order, left child first so the left
    /// branch tends to fall through.
    fn emit_ifelse_tree(&mut self) {
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let label = self.node_label(id);
            self.bind(label);
            if self.tree.node(id).is_leaf() {
                self.emit_static_leaf(id);
                continue;
            }
            self.emit_ifelse_node(id);
            let (l, r) = self.tree.node(id).children().expect("inner");
            for c in [r, l] {
                if self.ctx.ifelse.contains(&c) {
                    stack.push(c);
                }
            }
        }
        self.origin = None;
    }

    fn emit_ifelse_node(&mut self, id: NodeId) {
        self.origin = Some(id);
        let NodeKind::Inner {
            feature,
            split,
            left,
            right,
        } = self.tree.node(id).kind
        else {
            unreachable!("leaves handled by caller")
        };
        let resident = self.ctx.residents.get(&id).copied();

        match (self.ctx.cache.get(&id).copied(), resident) {
            (Some(CacheAction::Hit(reg)), _) => self.emit(Inst::UseFeatureReg { reg, dst: XVAL }),
            (Some(CacheAction::Load { reg, .. }), _) => {
                self.emit(Inst::LoadFeatureMem {
                    index: FeatureIndex::Imm(feature),
                    dst: Dest::P(reg),
                });
                self.emit(Inst::UseFeatureReg { reg, dst: XVAL });
            }
            (None, Some((reg, packed)))
                if matches!(
                    packed.semantics,
                    SlotSemantics::FeatureOnly
                        | SlotSemantics::FeatureAndLeft
                        | SlotSemantics::FeatureAndRight
                ) =>
            {
                self.emit(Inst::UseNodeReg {
                    reg,
                    field: Field::SlotA,
                    dst: FEAT,
                });
                self.emit(Inst::LoadFeatureMem {
                    index: FeatureIndex::Reg(FEAT),
                    dst: Dest::V(XVAL),
                });
            }
            (None, _) => self.emit(Inst::LoadFeatureMem {
                index: FeatureIndex::Imm(feature),
                dst: Dest::V(XVAL),
            }),
        }
        match resident {
            Some((reg, _)) => self.emit(Inst::UseNodeReg {
                reg,
                field: Field::Split,
                dst: SPLIT,
            }),
            None => self.emit(Inst::Const {
                value: split,
                dst: SPLIT,
            }),
        }

        let mut transitions = Vec::new();
        let mut targets = [Label(0); 2];
        for (side, child) in [left, right].into_iter().enumerate() {
            targets[side] = if self.ctx.ifelse.contains(&child) {
                self.node_label(child)
            } else {
                let t = self.label(format!("n{id}_{}", if side == 0 { "to_left" } else { "to_right" }));
                transitions.push((t, side, child));
                t
            };
        }
        self.emit(Inst::CmpLeBranch {
            a: XVAL,
            b: SPLIT,
            if_true: targets[0],
            if_false: targets[1],
        });
        for (t, side, child) in transitions {
            self.bind(t);
            let src = match resident.map(|(reg, p)| (reg, p.semantics)) {
                Some((reg, SlotSemantics::Children)) => Some((reg, if side == 0 { Field::SlotA } else { Field::SlotB })),
                Some((reg, SlotSemantics::FeatureAndLeft)) if side == 0 => Some((reg, Field::SlotB)),
                Some((reg, SlotSemantics::FeatureAndRight)) if side == 1 => Some((reg, Field::SlotB)),
                _ => None,
            };
            match src {
                Some((reg, field)) => self.emit(Inst::UseNodeReg {
                    reg,
                    field,
                    dst: IDX,
                }),
                None => self.emit(Inst::SetIndex {
                    src: IndexSrc::Imm(child as u32),
                    dst: IDX,
                }),
            }
            let top = self.loop_label();
            self.emit(Inst::Jmp(top));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::planner::{plan_tree, PackMode, PlanOptions, TargetName};

    fn plan(tree: &Tree, s: Strategy, k: usize, mode: PackMode) -> AllocationPlan {
        plan_tree(tree, 0, s, PlanOptions::new(k, mode), &TargetDesc::new(TargetName::Abstract)).unwrap()
    }

    #[test]
    fn baselines_are_well_formed() {
        for t in [t1(), t2(), chain(5), complete(4)] {
            let n = build_native_baseline(&t, 0, 3);
            n.validate().unwrap();
            assert!(n.meta.uses_records);
            let i = build_ifelse_baseline(&t, 0, 3);
            i.validate().unwrap();
            assert_eq!(i.count(|x| matches!(x, Inst::LoadNodeRecord { .. })), 0);
            // one CMP per inner node, one RETURN per leaf
            let inner = t.nodes().iter().filter(|n| !n.is_leaf()).count();
            assert_eq!(i.count(|x| matches!(x, Inst::CmpLeBranch { .. })), inner);
            assert_eq!(i.count(|x| matches!(x, Inst::Return(_))), t.len() - inner);
        }
    }

    #[test]
    fn native_baseline_size_is_constant() {
        let small = build_native_baseline(&complete(2), 0, 3);
        let big = build_native_baseline(&complete(9), 0, 3);
        assert_eq!(small.instructions.len(), big.instructions.len());
    }

    #[test]
    fn single_leaf_returns_immediately() {
        let t = Tree::new(vec![crate::model::Node::leaf(4.0)]).unwrap();
        let ir = build_native_baseline(&t, 0, 1);
        ir.validate().unwrap();
        assert!(!ir.meta.uses_records);
        assert_eq!(ir.instructions.len(), 4);
    }

    #[test]
    fn empty_plans_degenerate_to_baselines() {
        let t = complete(4);
        let native = build_native_baseline(&t, 0, 3);
        let ifelse = build_ifelse_baseline(&t, 0, 3);
        for s in Strategy::ALL {
            let p = plan(&t, s, 0, PackMode::FullNode);
            let ir = build_strategy(&t, &p, 3).unwrap();
            let base = match s.family() {
                Family::Native => &native,
                Family::IfElse => &ifelse,
            };
            assert!(ir.same_code(base), "{s}");
        }
    }

    #[test]
    fn strategies_are_well_formed() {
        for t in [t1(), t2(), chain(6), complete(5)] {
            for s in Strategy::ALL {
                for k in [1, 3, 8] {
                    for mode in [PackMode::FullNode, PackMode::SplitOnly] {
                        let p = plan(&t, s, k, mode);
                        let ir = build_strategy(&t, &p, 3).unwrap();
                        ir.validate().unwrap_or_else(|e| panic!("{s} k={k}: {e}\n{}", ir.to_text()));
                    }
                }
            }
        }
    }

    #[test]
    fn mismatched_plans_are_rejected() {
        let t = t1();
        let mut p = plan(&t, Strategy::HybridNode, 1, PackMode::FullNode);
        p.ifelse_set.insert(9);
        assert!(build_strategy(&t, &p, 1).is_err());

        let mut p = plan(&t, Strategy::HybridNode, 1, PackMode::FullNode);
        // claim the leaves are if-else code without updating the payload
        p.ifelse_set.extend([1, 2]);
        p.native_set.clear();
        assert!(build_strategy(&t, &p, 1).is_err());

        let mut p = plan(&t2(), Strategy::DynamicFeature, 1, PackMode::FullNode);
        p.cache_schedule.insert(1, CacheAction::Hit(Register::fpr(0)));
        p.cache_schedule.insert(0, CacheAction::Load { reg: Register::fpr(0), evict: Some(1) });
        assert!(build_strategy(&t2(), &p, 2).is_err());
    }

    #[test]
    fn text_format_is_stable() {
        let ir = build_native_baseline(&t1(), 0, 1);
        let text = ir.to_text();
        assert_eq!(text, ir.to_text());
        let expected = "\
; tree 0 native features=1
    PROLOGUE []
body:
    SET_INDEX #0 -> vi0
loop:
    LOAD_NODE_RECORD vi0 -> vf1, vi1, vi2, vi3
    CMP_EQ_BRANCH vi1, #65535, leaf
    LOAD_FEATURE_MEM vi1 -> vf0
    CMP_LE_BRANCH vf0, vf1, go_left, go_right
go_left:
    SET_INDEX vi2 -> vi0
    JMP loop
go_right:
    SET_INDEX vi3 -> vi0
    JMP loop
leaf:
    EPILOGUE []
    RETURN vf1
";
        assert_eq!(text, expected);
    }
}
