//! Allocation plans: which features or nodes live in which reserved
//! registers, which nodes become if-else code, and the compile-time feature
//! cache schedule.

mod pack;
mod target;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Ensemble, NodeId, Tree};
use crate::profiler::{ProbAnnotation, SuitabilityScores};

pub use pack::{
    compose, pack_node, PackError, PackMode, PackedNode, Realization, SlotSemantics,
};
pub use target::{RegClass, Register, TargetDesc, TargetName, MIN_SCRATCH_FPR, MIN_SCRATCH_GPR};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan needs {requested} registers but the target reserves only {available}")]
    TooManyRegisters { requested: usize, available: usize },
    #[error(transparent)]
    Pack(#[from] PackError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Strategy {
    #[serde(rename = "sf")]
    StaticFeature,
    #[serde(rename = "df")]
    DynamicFeature,
    #[serde(rename = "nn")]
    NativeNode,
    #[serde(rename = "hn")]
    HybridNode,
    #[serde(rename = "hl")]
    HybridLayer,
    #[serde(rename = "in")]
    IfElseNode,
}

/// Which basic implementation a strategy modifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Native,
    IfElse,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::StaticFeature,
        Strategy::DynamicFeature,
        Strategy::NativeNode,
        Strategy::HybridNode,
        Strategy::HybridLayer,
        Strategy::IfElseNode,
    ];

    pub fn abbrev(self) -> &'static str {
        match self {
            Strategy::StaticFeature => "sf",
            Strategy::DynamicFeature => "df",
            Strategy::NativeNode => "nn",
            Strategy::HybridNode => "hn",
            Strategy::HybridLayer => "hl",
            Strategy::IfElseNode => "in",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Strategy::DynamicFeature | Strategy::IfElseNode => Family::IfElse,
            _ => Family::Native,
        }
    }

    /// Hybrid strategies are reported against both baselines.
    pub fn is_hybrid(self) -> bool {
        matches!(self, Strategy::HybridNode | Strategy::HybridLayer)
    }

    pub fn default_registers(self) -> usize {
        match self.family() {
            Family::Native => 20,
            Family::IfElse => 10,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.abbrev() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected sf, df, nn, hn, hl or in)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Feature(usize),
    Node { id: NodeId, packed: PackedNode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resident {
    pub reg: Register,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheAction {
    Hit(Register),
    Load {
        reg: Register,
        evict: Option<usize>,
    },
}

impl CacheAction {
    pub fn reg(self) -> Register {
        match self {
            CacheAction::Hit(r) | CacheAction::Load { reg: r, .. } => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub strategy: Strategy,
    pub tree_index: usize,
    pub target: TargetName,
    pub mode: PackMode,
    /// Registers requested for the plan.
    pub registers: usize,
    pub residents: Vec<Resident>,
    pub ifelse_set: BTreeSet<NodeId>,
    pub native_set: BTreeSet<NodeId>,
    /// Dynamic feature caching only: per inner node, where its feature value
    /// comes from.
    pub cache_schedule: BTreeMap<NodeId, CacheAction>,
}

impl AllocationPlan {
    fn empty(strategy: Strategy, tree_index: usize, target: TargetName, tree: &Tree) -> Self {
        let all: BTreeSet<NodeId> = (0..tree.len()).collect();
        let (ifelse_set, native_set) = match strategy.family() {
            Family::IfElse => (all, BTreeSet::new()),
            Family::Native => (BTreeSet::new(), all),
        };
        AllocationPlan {
            strategy,
            tree_index,
            target,
            mode: PackMode::FullNode,
            registers: 0,
            residents: Vec::new(),
            ifelse_set,
            native_set,
            cache_schedule: BTreeMap::new(),
        }
    }

    pub fn resident_nodes(&self) -> Vec<NodeId> {
        self.residents
            .iter()
            .filter_map(|r| match r.payload {
                Payload::Node { id, .. } => Some(id),
                Payload::Feature(_) => None,
            })
            .collect()
    }

    pub fn resident_features(&self) -> Vec<usize> {
        self.residents
            .iter()
            .filter_map(|r| match r.payload {
                Payload::Feature(f) => Some(f),
                Payload::Node { .. } => None,
            })
            .collect()
    }

    /// Distinct registers touched by the plan.
    pub fn registers_used(&self) -> BTreeSet<Register> {
        self.residents
            .iter()
            .map(|r| r.reg)
            .chain(self.cache_schedule.values().map(|a| a.reg()))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.residents.is_empty() && self.cache_schedule.is_empty()
    }

    /// Checks the structural plan invariants against a tree and target.
    pub fn check(&self, tree: &Tree, target: &TargetDesc) -> Result<(), String> {
        let used = self.registers_used();
        if used.len() > target.usable() {
            return Err(format!("{} registers used, r = {}", used.len(), target.usable()));
        }
        if let Some(r) = used.iter().find(|r| target.name_of(**r).is_none()) {
            return Err(format!("register {r} not in the usable set"));
        }
        if self.residents.iter().map(|r| r.reg).collect::<BTreeSet<_>>().len()
            != self.residents.len()
        {
            return Err("two residents share a register".into());
        }
        if !self.ifelse_set.is_disjoint(&self.native_set) {
            return Err("if-else and native sets overlap".into());
        }
        if self.ifelse_set.len() + self.native_set.len() != tree.len()
            || self.ifelse_set.iter().chain(&self.native_set).any(|&n| n >= tree.len())
        {
            return Err("if-else and native sets do not partition the tree".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    pub registers: usize,
    pub mode: PackMode,
    /// Let leaves compete for registers (they carry predictions).
    pub include_leaves: bool,
}

impl PlanOptions {
    pub fn new(registers: usize, mode: PackMode) -> Self {
        PlanOptions {
            registers,
            mode,
            include_leaves: true,
        }
    }
}

/// The `k` nodes with the highest absprob; ties go to shallower nodes, then
/// smaller ids.
pub fn select_nodes(
    tree: &Tree,
    ann: &ProbAnnotation,
    k: usize,
    include_leaves: bool,
) -> Vec<NodeId> {
    let mut ids: Vec<NodeId> = (0..tree.len())
        .filter(|&id| include_leaves || !tree.node(id).is_leaf())
        .collect();
    ids.sort_by(|&a, &b| {
        ann.absprob[b]
            .total_cmp(&ann.absprob[a])
            .then(tree.level(a).cmp(&tree.level(b)))
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

/// Largest number of complete layers whose node count fits in `k`, and the
/// nodes of those layers in breadth-first order.
pub fn select_layers(tree: &Tree, k: usize) -> (usize, Vec<NodeId>) {
    let bfs = tree.bfs_order();
    let mut layers = 0;
    let mut taken = 0;
    let mut i = 0;
    while i < bfs.len() {
        let level = tree.level(bfs[i]);
        let end = bfs[i..]
            .iter()
            .position(|&id| tree.level(id) != level)
            .map_or(bfs.len(), |off| i + off);
        if end > k {
            break;
        }
        layers += 1;
        taken = end;
        i = end;
    }
    (layers, bfs[..taken].to_vec())
}

fn check_budget(requested: usize, available: usize) -> Result<(), PlanError> {
    if requested > available {
        Err(PlanError::TooManyRegisters {
            requested,
            available,
        })
    } else {
        Ok(())
    }
}

/// Top-`n` features by ensemble suitability pinned to the first `n` usable
/// FPRs. The same residents are used for every tree of the ensemble.
pub fn plan_static_feature(
    ensemble: &Ensemble,
    scores: &SuitabilityScores,
    n: usize,
    target: &TargetDesc,
) -> Result<Vec<AllocationPlan>, PlanError> {
    check_budget(n, target.usable_fpr.len())?;
    let residents: Vec<Resident> = scores
        .top(n)
        .into_iter()
        .enumerate()
        .map(|(i, f)| Resident {
            reg: Register::fpr(i as u8),
            payload: Payload::Feature(f),
        })
        .collect();
    Ok(ensemble
        .trees
        .iter()
        .enumerate()
        .map(|(t, tree)| {
            let mut plan = AllocationPlan::empty(Strategy::StaticFeature, t, target.name, tree);
            plan.registers = n;
            plan.residents = residents.clone();
            plan
        })
        .collect())
}

/// FIFO feature cache of `k` registers resolved at compile time. Every
/// if-else node has a unique root path, so the cache content on entry to
/// each node is fixed.
pub fn plan_dynamic_feature(
    tree: &Tree,
    tree_index: usize,
    k: usize,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    check_budget(k, target.usable())?;
    let mut plan = AllocationPlan::empty(Strategy::DynamicFeature, tree_index, target.name, tree);
    plan.registers = k;
    if k == 0 {
        return Ok(plan);
    }
    let pool: Vec<Register> = target.pool(RegClass::Fpr).take(k).collect();
    let mut stack = vec![(0usize, VecDeque::<(usize, Register)>::new())];
    while let Some((id, mut cache)) = stack.pop() {
        let node = tree.node(id);
        let (Some(f), Some((l, r))) = (node.feature(), node.children()) else {
            continue;
        };
        let action = if let Some(&(_, reg)) = cache.iter().find(|(cf, _)| *cf == f) {
            CacheAction::Hit(reg)
        } else if cache.len() < k {
            let reg = pool[cache.len()];
            cache.push_back((f, reg));
            CacheAction::Load { reg, evict: None }
        } else {
            let (old, reg) = cache.pop_front().expect("full cache");
            cache.push_back((f, reg));
            CacheAction::Load {
                reg,
                evict: Some(old),
            }
        };
        plan.cache_schedule.insert(id, action);
        stack.push((r, cache.clone()));
        stack.push((l, cache));
    }
    Ok(plan)
}

/// Replays the cache schedule along the root path of `id` and returns the
/// cache content (feature, register) on entry to `id`, oldest first.
pub fn cache_state_at(plan: &AllocationPlan, tree: &Tree, id: NodeId) -> Vec<(usize, Register)> {
    let mut cache: VecDeque<(usize, Register)> = VecDeque::new();
    let path = tree.path(id);
    for &n in &path[..path.len() - 1] {
        let f = tree.node(n).feature().expect("inner node on path");
        match plan.cache_schedule[&n] {
            CacheAction::Hit(_) => {}
            CacheAction::Load { reg, evict } => {
                if let Some(e) = evict {
                    let pos = cache.iter().position(|(cf, _)| *cf == e).expect("evicted feature cached");
                    cache.remove(pos);
                }
                cache.push_back((f, reg));
            }
        }
    }
    cache.into()
}

fn pack_residents(
    tree: &Tree,
    nodes: &[NodeId],
    ifelse: &BTreeSet<NodeId>,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<Vec<Resident>, PlanError> {
    let first = match opts.mode {
        PackMode::FullNode => RegClass::Gpr,
        PackMode::SplitOnly => RegClass::Fpr,
    };
    let realize = |c: NodeId| {
        if ifelse.contains(&c) {
            Realization::IfElse
        } else {
            Realization::Native
        }
    };
    nodes
        .iter()
        .zip(target.pool(first))
        .map(|(&id, reg)| {
            let node = tree.node(id);
            let children = node
                .children()
                .map_or((Realization::Native, Realization::Native), |(l, r)| {
                    (realize(l), realize(r))
                });
            Ok(Resident {
                reg,
                payload: Payload::Node {
                    id,
                    packed: pack_node(node, children, opts.mode)?,
                },
            })
        })
        .collect()
}

/// Whole tree native; the top-k nodes by absprob live in registers and are
/// located through a comparison chain on the current index.
pub fn plan_native_node(
    tree: &Tree,
    tree_index: usize,
    ann: &ProbAnnotation,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    check_budget(opts.registers, target.usable())?;
    let mut plan = AllocationPlan::empty(Strategy::NativeNode, tree_index, target.name, tree);
    plan.registers = opts.registers;
    plan.mode = opts.mode;
    let nodes = select_nodes(tree, ann, opts.registers, opts.include_leaves);
    plan.residents = pack_residents(tree, &nodes, &plan.ifelse_set, opts, target)?;
    Ok(plan)
}

fn hybrid(
    strategy: Strategy,
    tree: &Tree,
    tree_index: usize,
    nodes: Vec<NodeId>,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    let mut plan = AllocationPlan::empty(strategy, tree_index, target.name, tree);
    plan.registers = opts.registers;
    plan.mode = opts.mode;
    plan.ifelse_set = nodes.iter().copied().collect();
    plan.native_set = (0..tree.len()).filter(|n| !plan.ifelse_set.contains(n)).collect();
    plan.residents = pack_residents(tree, &nodes, &plan.ifelse_set, opts, target)?;
    Ok(plan)
}

/// The top-k nodes become register-backed if-else code; the rest of the tree
/// stays native.
pub fn plan_hybrid_node(
    tree: &Tree,
    tree_index: usize,
    ann: &ProbAnnotation,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    check_budget(opts.registers, target.usable())?;
    let nodes = select_nodes(tree, ann, opts.registers, opts.include_leaves);
    hybrid(Strategy::HybridNode, tree, tree_index, nodes, opts, target)
}

/// Like hybrid node, but whole top layers are taken.
pub fn plan_hybrid_layer(
    tree: &Tree,
    tree_index: usize,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    check_budget(opts.registers, target.usable())?;
    let (_, nodes) = select_layers(tree, opts.registers);
    hybrid(Strategy::HybridLayer, tree, tree_index, nodes, opts, target)
}

/// Whole tree as if-else code; the top-k nodes read their values from
/// registers instead of instruction immediates.
pub fn plan_ifelse_node(
    tree: &Tree,
    tree_index: usize,
    ann: &ProbAnnotation,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    check_budget(opts.registers, target.usable())?;
    let mut plan = AllocationPlan::empty(Strategy::IfElseNode, tree_index, target.name, tree);
    plan.registers = opts.registers;
    plan.mode = opts.mode;
    let nodes = select_nodes(tree, ann, opts.registers, opts.include_leaves);
    plan.residents = pack_residents(tree, &nodes, &plan.ifelse_set, opts, target)?;
    Ok(plan)
}

/// Plans every tree of an ensemble with one strategy.
pub fn plan_ensemble(
    ensemble: &Ensemble,
    strategy: Strategy,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<Vec<AllocationPlan>, PlanError> {
    if strategy == Strategy::StaticFeature {
        let scores = crate::profiler::ensemble_suitability(ensemble);
        return plan_static_feature(ensemble, &scores, opts.registers, target);
    }
    ensemble
        .trees
        .iter()
        .enumerate()
        .map(|(t, tree)| plan_tree(tree, t, strategy, opts, target))
        .collect()
}

/// Plans a single tree. Static feature plans use the tree's own
/// suitability scores here; [`plan_ensemble`] ranks over the whole ensemble.
pub fn plan_tree(
    tree: &Tree,
    tree_index: usize,
    strategy: Strategy,
    opts: PlanOptions,
    target: &TargetDesc,
) -> Result<AllocationPlan, PlanError> {
    let ann = crate::profiler::annotate(tree);
    match strategy {
        Strategy::StaticFeature => {
            let nf = tree.max_feature().map_or(1, |f| f + 1);
            let scores = crate::profiler::tree_suitability(tree, nf);
            check_budget(opts.registers, target.usable_fpr.len())?;
            let mut plan =
                AllocationPlan::empty(Strategy::StaticFeature, tree_index, target.name, tree);
            plan.registers = opts.registers;
            plan.residents = scores
                .top(opts.registers)
                .into_iter()
                .enumerate()
                .map(|(i, f)| Resident {
                    reg: Register::fpr(i as u8),
                    payload: Payload::Feature(f),
                })
                .collect();
            Ok(plan)
        }
        Strategy::DynamicFeature => plan_dynamic_feature(tree, tree_index, opts.registers, target),
        Strategy::NativeNode => plan_native_node(tree, tree_index, &ann, opts, target),
        Strategy::HybridNode => plan_hybrid_node(tree, tree_index, &ann, opts, target),
        Strategy::HybridLayer => plan_hybrid_layer(tree, tree_index, opts, target),
        Strategy::IfElseNode => plan_ifelse_node(tree, tree_index, &ann, opts, target),
    }
}

// ---------------------------------------------------------------------------
// JSON view written by the `plan` command.

#[derive(Debug, Serialize)]
pub struct PlanDoc {
    pub strategy: Strategy,
    pub tree_index: usize,
    pub target: TargetName,
    pub pack: PackMode,
    pub registers: usize,
    pub register_residents: Vec<ResidentDoc>,
    pub ifelse_set: Vec<NodeId>,
    pub native_set: Vec<NodeId>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub cache_schedule: BTreeMap<NodeId, CacheDoc>,
}

#[derive(Debug, Serialize)]
pub struct ResidentDoc {
    pub register: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub packed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slots: Option<SlotSemantics>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheDoc {
    Hit(String),
    LoadInto {
        register: String,
        evict: Option<usize>,
    },
}

impl PlanDoc {
    pub fn new(plan: &AllocationPlan, target: &TargetDesc) -> Self {
        let name = |r: Register| {
            target
                .name_of(r)
                .map_or_else(|| r.to_string(), str::to_string)
        };
        PlanDoc {
            strategy: plan.strategy,
            tree_index: plan.tree_index,
            target: plan.target,
            pack: plan.mode,
            registers: plan.registers,
            register_residents: plan
                .residents
                .iter()
                .map(|r| match r.payload {
                    Payload::Feature(f) => ResidentDoc {
                        register: name(r.reg),
                        feature: Some(f),
                        node: None,
                        packed: None,
                        slots: None,
                    },
                    Payload::Node { id, packed } => ResidentDoc {
                        register: name(r.reg),
                        feature: None,
                        node: Some(id),
                        packed: Some(format!("{:#018x}", packed.bits)),
                        slots: Some(packed.semantics),
                    },
                })
                .collect(),
            ifelse_set: plan.ifelse_set.iter().copied().collect(),
            native_set: plan.native_set.iter().copied().collect(),
            cache_schedule: plan
                .cache_schedule
                .iter()
                .map(|(&n, &a)| {
                    let doc = match a {
                        CacheAction::Hit(r) => CacheDoc::Hit(name(r)),
                        CacheAction::Load { reg, evict } => CacheDoc::LoadInto {
                            register: name(reg),
                            evict,
                        },
                    };
                    (n, doc)
                })
                .collect(),
        }
    }
}
