use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub label: Option<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Length of the branch to the parent; 0 for the naive leaf.
    pub branch_length: f64,
}

/// Unrooted binary clonal tree, stored rooted at the naive leaf.
///
/// Node 0 is always the naive leaf. Its only child is the attachment node,
/// joined by the root branch `t0`. Every other internal node has exactly two
/// children; the attachment node may carry a polytomy.
#[derive(Debug, Clone, PartialEq)]
pub struct CladeTree {
    nodes: Vec<Node>,
    postorder: Vec<NodeId>,
}

pub const NAIVE: NodeId = 0;

impl CladeTree {
    /// Builds a tree from an undirected edge list. Unlabelled degree-2 nodes are
    /// suppressed (their two branches merged) before rooting at the naive leaf.
    pub fn from_edges(
        labels: Vec<Option<String>>,
        edges: &[(usize, usize, f64)],
        naive_label: &str,
    ) -> Result<Self> {
        let n = labels.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(a, b, len) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidTree(format!("bad edge ({a}, {b})")));
            }
            if !(len.is_finite() && len >= 0.0) {
                return Err(Error::InvalidTree(format!("branch length {len} must be finite and >= 0")));
            }
            adj[a].push((b, len));
            adj[b].push((a, len));
        }
        if edges.len() + 1 != n {
            return Err(Error::InvalidTree(format!(
                "{} nodes and {} edges do not form a tree",
                n,
                edges.len()
            )));
        }

        let naive = labels
            .iter()
            .position(|l| l.as_deref() == Some(naive_label))
            .ok_or_else(|| Error::MissingNaive(naive_label.to_string()))?;
        if adj[naive].len() != 1 {
            return Err(Error::InvalidTree(format!(
                "naive node {naive_label:?} must be a leaf"
            )));
        }

        // Suppress unlabelled degree-2 nodes.
        let mut alive = vec![true; n];
        for v in 0..n {
            if adj[v].len() == 2 && labels[v].is_none() {
                let (a, la) = adj[v][0];
                let (b, lb) = adj[v][1];
                adj[a].retain(|&(x, _)| x != v);
                adj[b].retain(|&(x, _)| x != v);
                adj[a].push((b, la + lb));
                adj[b].push((a, la + lb));
                adj[v].clear();
                alive[v] = false;
            }
        }

        let mut nodes = Vec::with_capacity(n);
        let mut index = vec![usize::MAX; n];
        let mut stack = vec![(naive, usize::MAX, 0.0)];
        let mut seen = vec![false; n];
        while let Some((v, parent_old, len)) = stack.pop() {
            if seen[v] {
                return Err(Error::InvalidTree("graph contains a cycle".into()));
            }
            seen[v] = true;
            let id = nodes.len();
            index[v] = id;
            let parent = (parent_old != usize::MAX).then(|| index[parent_old]);
            if let Some(p) = parent {
                let parent_node: &mut Node = &mut nodes[p];
                parent_node.children.push(id);
            }
            nodes.push(Node {
                label: labels[v].clone(),
                parent,
                children: Vec::new(),
                branch_length: len,
            });
            // Reverse so children keep their input order.
            for &(w, l) in adj[v].iter().rev() {
                if w != parent_old {
                    stack.push((w, v, l));
                }
            }
        }
        if (0..n).any(|v| alive[v] && !seen[v]) {
            return Err(Error::InvalidTree("graph is disconnected".into()));
        }
        let tree = Self::from_nodes(nodes)?;
        tree.validate(naive_label)?;
        Ok(tree)
    }

    /// Builds from a rooted node arena whose node 0 is the naive leaf.
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        let mut tree = Self {
            nodes,
            postorder: Vec::new(),
        };
        tree.refresh_order();
        if tree.postorder.len() != tree.nodes.len() {
            return Err(Error::InvalidTree("nodes unreachable from the naive leaf".into()));
        }
        Ok(tree)
    }

    pub(crate) fn refresh_order(&mut self) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(NAIVE, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
            } else {
                stack.push((v, true));
                for &c in self.nodes[v].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        self.postorder = order;
    }

    fn validate(&self, naive_label: &str) -> Result<()> {
        let naive = &self.nodes[NAIVE];
        if naive.children.len() != 1 {
            return Err(Error::InvalidTree("naive leaf must have exactly one neighbour".into()));
        }
        let attachment = naive.children[0];
        let mut labels = HashSet::new();
        for (id, node) in self.nodes.iter().enumerate().skip(1) {
            if node.children.is_empty() {
                let label = node
                    .label
                    .as_deref()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| Error::InvalidTree("unlabelled leaf".into()))?;
                if label == naive_label {
                    return Err(Error::InvalidTree(format!("duplicate naive label {label:?}")));
                }
                if !labels.insert(label) {
                    return Err(Error::InvalidTree(format!("duplicate leaf label {label:?}")));
                }
            } else if id != attachment && node.children.len() != 2 {
                return Err(Error::InvalidTree(format!(
                    "internal node {} has {} children; only the naive attachment may be multifurcating",
                    node.label.as_deref().unwrap_or("<unnamed>"),
                    node.children.len()
                )));
            } else if id == attachment && node.children.len() < 2 {
                return Err(Error::InvalidTree("attachment node must have two or more children".into()));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn naive_label(&self) -> &str {
        self.nodes[NAIVE].label.as_deref().unwrap_or_default()
    }

    pub fn attachment(&self) -> NodeId {
        self.nodes[NAIVE].children[0]
    }

    pub fn t0(&self) -> f64 {
        self.nodes[self.attachment()].branch_length
    }

    /// Children before parents; the naive leaf is last.
    pub fn postorder(&self) -> &[NodeId] {
        &self.postorder
    }

    pub fn preorder(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.postorder.iter().rev().copied()
    }

    pub fn is_tip(&self, id: NodeId) -> bool {
        id != NAIVE && self.nodes[id].children.is_empty()
    }

    /// Observed leaves (every leaf except the naive one), in node order.
    pub fn tips(&self) -> Vec<NodeId> {
        (1..self.nodes.len()).filter(|&v| self.is_tip(v)).collect()
    }

    /// Internal nodes other than the naive leaf, in node order.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        (1..self.nodes.len())
            .filter(|&v| !self.nodes[v].children.is_empty())
            .collect()
    }

    pub fn tip_label(&self, id: NodeId) -> &str {
        self.nodes[id].label.as_deref().unwrap_or_default()
    }

    pub fn find_tip(&self, label: &str) -> Option<NodeId> {
        (1..self.nodes.len()).find(|&v| self.is_tip(v) && self.tip_label(v) == label)
    }

    pub fn branch_length(&self, id: NodeId) -> f64 {
        self.nodes[id].branch_length
    }

    pub fn set_branch_length(&mut self, id: NodeId, len: f64) {
        debug_assert!(id != NAIVE && len >= 0.0);
        self.nodes[id].branch_length = len;
    }

    pub fn branch_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().skip(1).map(|n| n.branch_length)
    }

    pub fn total_length(&self) -> f64 {
        self.branch_lengths().sum()
    }

    /// Sorted tip labels below `id`, joined by commas. Identifies a clade across trees.
    pub fn clade_signature(&self, id: NodeId) -> String {
        let mut labels = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            if self.is_tip(v) {
                labels.insert(self.tip_label(v));
            }
            stack.extend(&self.nodes[v].children);
        }
        labels.into_iter().collect::<Vec<_>>().join(",")
    }

    /// Path from the naive leaf down to `id`, both ends included.
    pub fn path_from_naive(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut v = id;
        while let Some(p) = self.nodes[v].parent {
            path.push(p);
            v = p;
        }
        path.reverse();
        path
    }

    /// Distance from the naive leaf to every node.
    pub fn depths(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.nodes.len()];
        for v in self.preorder() {
            if let Some(p) = self.nodes[v].parent {
                depth[v] = depth[p] + self.nodes[v].branch_length;
            }
        }
        depth
    }

    /// Swaps the subtrees rooted at `a` and `b`, keeping each subtree's own branch length.
    /// Neither may be an ancestor of the other.
    pub(crate) fn swap_subtrees(&mut self, a: NodeId, b: NodeId) {
        let pa = self.nodes[a].parent.expect("swap on root");
        let pb = self.nodes[b].parent.expect("swap on root");
        for c in self.nodes[pa].children.iter_mut() {
            if *c == a {
                *c = b;
            }
        }
        for c in self.nodes[pb].children.iter_mut() {
            if *c == b {
                *c = a;
            }
        }
        self.nodes[a].parent = Some(pb);
        self.nodes[b].parent = Some(pa);
        self.refresh_order();
    }

    /// Newick text rooted at the attachment node, with the naive leaf as its last child.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        let attachment = self.attachment();
        out.push('(');
        if self.is_tip(attachment) {
            let _ = write!(out, "{}:0", self.tip_label(attachment));
        } else {
            for (i, &c) in self.nodes[attachment].children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write_subtree(c, &mut out);
            }
        }
        let _ = write!(out, ",{}:{});", self.naive_label(), self.t0());
        out
    }

    fn write_subtree(&self, v: NodeId, out: &mut String) {
        let node = &self.nodes[v];
        if !node.children.is_empty() {
            out.push('(');
            for (i, &c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write_subtree(c, out);
            }
            out.push(')');
        } else {
            out.push_str(self.tip_label(v));
        }
        let _ = write!(out, ":{}", node.branch_length);
    }

    /// Rotation-invariant description of topology and branch lengths.
    pub fn canonical_form(&self) -> String {
        fn rec(t: &CladeTree, v: NodeId) -> String {
            let node = &t.nodes[v];
            let mut parts: Vec<String> = node.children.iter().map(|&c| rec(t, c)).collect();
            parts.sort();
            let head = if node.children.is_empty() {
                t.tip_label(v).to_string()
            } else {
                format!("({})", parts.join(","))
            };
            format!("{head}:{}", node.branch_length)
        }
        rec(self, self.attachment())
    }

    /// Rotation-invariant topology only (ignores branch lengths).
    pub fn topology_key(&self) -> String {
        fn rec(t: &CladeTree, v: NodeId) -> String {
            let node = &t.nodes[v];
            if node.children.is_empty() {
                return t.tip_label(v).to_string();
            }
            let mut parts: Vec<String> = node.children.iter().map(|&c| rec(t, c)).collect();
            parts.sort();
            format!("({})", parts.join(","))
        }
        rec(self, self.attachment())
    }

    pub(crate) fn label_index(&self) -> HashMap<&str, NodeId> {
        self.tips().into_iter().map(|v| (self.tip_label(v), v)).collect()
    }
}

/// Population standard deviation of naive-to-tip path lengths.
pub fn tree_imbalance(tree: &CladeTree) -> f64 {
    let depth = tree.depths();
    let d: Vec<f64> = tree.tips().into_iter().map(|v| depth[v]).collect();
    population_sd(&d)
}

fn population_sd(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}
