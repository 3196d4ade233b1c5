//! Plain C versions of the two baselines, compiled by the system compiler.

use std::fmt::Write as _;

use crate::model::{NodeId, NodeKind, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Native,
    IfElse,
}

impl BaselineKind {
    pub fn suffix(self) -> &'static str {
        match self {
            BaselineKind::Native => "native_c",
            BaselineKind::IfElse => "ifelse_c",
        }
    }
}

// deeper subtrees continue at a label instead of another nested block
const MAX_NESTING: usize = 32;

fn literal(v: f32) -> String {
    format!("{v:?}f")
}

pub fn baseline_symbol(tree_index: usize, kind: BaselineKind) -> String {
    format!("forest_tree_{tree_index}_{}", kind.suffix())
}

/// Self-contained translation unit defining the single-tuple function and
/// its `_batch` wrapper.
pub fn emit_baseline_source(
    tree: &Tree,
    tree_index: usize,
    num_features: usize,
    kind: BaselineKind,
) -> String {
    let sym = baseline_symbol(tree_index, kind);
    let mut out = String::from("#include <stdint.h>\n\n");
    match kind {
        BaselineKind::Native => native(&mut out, tree, &sym),
        BaselineKind::IfElse => ifelse(&mut out, tree, &sym),
    }
    let _ = write!(
        out,
        "\nvoid {sym}_batch(const float *x, uint64_t n, float *out)\n{{\n\
         \tfor (uint64_t t = 0; t < n; t++)\n\
         \t\tout[t] = {sym}(x + t * {num_features});\n}}\n"
    );
    out
}

fn native(out: &mut String, tree: &Tree, sym: &str) {
    let _ = writeln!(
        out,
        "struct {sym}_node {{\n\tfloat value;\n\tuint16_t feature, left, right;\n}};\n"
    );
    let _ = writeln!(out, "static const struct {sym}_node {sym}_nodes[{}] = {{", tree.len());
    for node in tree.nodes() {
        let (v, f, l, r) = match node.kind {
            NodeKind::Inner {
                feature,
                split,
                left,
                right,
            } => (split, feature, left, right),
            NodeKind::Leaf { prediction } => (prediction, 0xFFFF, 0, 0),
        };
        let _ = writeln!(out, "\t{{{}, {f}, {l}, {r}}},", literal(v));
    }
    let _ = write!(
        out,
        "}};\n\nfloat {sym}(const float *x)\n{{\n\
         \tconst struct {sym}_node *n = &{sym}_nodes[0];\n\
         \twhile (n->feature != 0xFFFF)\n\
         \t\tn = &{sym}_nodes[x[n->feature] <= n->value ? n->left : n->right];\n\
         \treturn n->value;\n}}\n"
    );
}

fn ifelse(out: &mut String, tree: &Tree, sym: &str) {
    let _ = writeln!(out, "float {sym}(const float *x)\n{{");
    let mut deferred = vec![0];
    let mut first = true;
    while let Some(root) = deferred.pop() {
        if !first {
            let _ = writeln!(out, "n{root}:");
        }
        first = false;
        block(out, tree, root, 1, &mut deferred);
    }
    out.push_str("}\n");
}

fn block(out: &mut String, tree: &Tree, id: NodeId, depth: usize, deferred: &mut Vec<NodeId>) {
    let pad = "\t".repeat(depth);
    if depth > MAX_NESTING {
        let _ = writeln!(out, "{pad}goto n{id};");
        deferred.push(id);
        return;
    }
    match tree.node(id).kind {
        NodeKind::Leaf { prediction } => {
            let _ = writeln!(out, "{pad}return {};", literal(prediction));
        }
        NodeKind::Inner {
            feature,
            split,
            left,
            right,
        } => {
            let _ = writeln!(out, "{pad}if (x[{feature}] <= {}) {{", literal(split));
            block(out, tree, left, depth + 1, deferred);
            let _ = writeln!(out, "{pad}}} else {{");
            block(out, tree, right, depth + 1, deferred);
            let _ = writeln!(out, "{pad}}}");
        }
    }
}
