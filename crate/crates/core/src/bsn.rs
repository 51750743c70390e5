//! Bayesian Strategy Networks: DAGs over groups of action coordinates.
//!
//! Each node owns a set of coordinates of the joint action vector and lists
//! the nodes whose sampled actions it conditions on. The joint policy factors
//! as the product over nodes of `π_i(a_i | s, a_parents(i))`.
//!
//! Declarations are line oriented:
//!
//! ```text
//! # hopper: hip -> knee -> ankle
//! node t1 dims 0
//! node t2 dims 1 parents t1
//! node t3 dims 2 parents t2
//! ```

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsnNode {
    pub id: String,
    pub dims: Vec<usize>,
    pub parents: Vec<String>,
}

/// Validated strategy network. Construct with [`BsnGraph::new`] or [`parse_bsn`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BsnNode>", into = "Vec<BsnNode>")]
pub struct BsnGraph {
    nodes: Vec<BsnNode>,
    total_action_dim: usize,
    index: HashMap<String, usize>,
    order: Vec<usize>,
}

impl TryFrom<Vec<BsnNode>> for BsnGraph {
    type Error = Error;

    fn try_from(nodes: Vec<BsnNode>) -> Result<Self> {
        BsnGraph::new(nodes)
    }
}

impl From<BsnGraph> for Vec<BsnNode> {
    fn from(g: BsnGraph) -> Self {
        g.nodes
    }
}

impl BsnGraph {
    pub fn new(nodes: Vec<BsnNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Partition("a BSN needs at least one node".into()));
        }
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::usage(format!("duplicate node id `{}`", n.id)));
            }
        }
        for n in &nodes {
            if n.dims.is_empty() {
                return Err(Error::Partition(format!("node `{}` owns no action dims", n.id)));
            }
            let mut seen = BTreeSet::new();
            for &d in &n.dims {
                if !seen.insert(d) {
                    return Err(Error::Partition(format!("node `{}` repeats dim {d}", n.id)));
                }
            }
            let mut seen_parents = BTreeSet::new();
            for p in &n.parents {
                if !index.contains_key(p) {
                    return Err(Error::Reference(p.clone()));
                }
                if !seen_parents.insert(p) {
                    return Err(Error::usage(format!("node `{}` lists parent `{p}` twice", n.id)));
                }
            }
        }

        let mut owner: HashMap<usize, &str> = HashMap::new();
        for n in &nodes {
            for &d in &n.dims {
                if let Some(prev) = owner.insert(d, &n.id) {
                    return Err(Error::Partition(format!("dim {d} owned by both `{prev}` and `{}`", n.id)));
                }
            }
        }
        let total_action_dim = owner.keys().max().map_or(0, |m| m + 1);
        if let Some(missing) = (0..total_action_dim).find(|d| !owner.contains_key(d)) {
            return Err(Error::Partition(format!(
                "dim {missing} is not owned by any node (dims must cover 0..{total_action_dim})"
            )));
        }

        let order = kahn_order(&nodes, &index)?;
        Ok(BsnGraph { nodes, total_action_dim, index, order })
    }

    /// One node `pi` owning every coordinate: the flat SAC policy.
    pub fn single(action_dim: usize) -> Result<Self> {
        BsnGraph::new(vec![BsnNode { id: "pi".into(), dims: (0..action_dim).collect(), parents: vec![] }])
    }

    pub fn nodes(&self) -> &[BsnNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Result<&BsnNode> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::Reference(id.to_string()))
    }

    /// Number of sub-policies `m`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_action_dim(&self) -> usize {
        self.total_action_dim
    }

    /// Node indices with parents before children; ties go to the smaller id.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn topo_order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.nodes[i].id.as_str()).collect()
    }

    /// Summed action width of the parents of node `i`.
    pub fn parent_width(&self, i: usize) -> usize {
        self.nodes[i].parents.iter().map(|p| self.nodes[self.index[p]].dims.len()).sum()
    }

    /// Joint-action columns feeding node `i`, in declared parent order.
    pub fn parent_columns(&self, i: usize) -> Vec<usize> {
        self.nodes[i]
            .parents
            .iter()
            .flat_map(|p| self.nodes[self.index[p]].dims.iter().copied())
            .collect()
    }

    /// True when `a` is a strict ancestor of `b` (both node indices).
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut stack: Vec<usize> = self.nodes[b].parents.iter().map(|p| self.index[p]).collect();
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == a {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.nodes[n].parents.iter().map(|p| self.index[p]));
            }
        }
        false
    }

    /// Fails unless the graph covers exactly `action_dim` coordinates.
    pub fn check_action_dim(&self, action_dim: usize) -> Result<()> {
        if self.total_action_dim != action_dim {
            return Err(Error::Partition(format!(
                "BSN covers {} action dims but the environment has {action_dim}",
                self.total_action_dim
            )));
        }
        Ok(())
    }

    /// Parents' slices of `joint` (`[D]` or `[b, D]`), concatenated in the
    /// node's declared parent order. Roots yield an empty tensor.
    pub fn gather_parent_actions(&self, node_id: &str, joint: &Tensor) -> Result<Tensor> {
        let i = self.index_of(node_id)?;
        if joint.cols() != self.total_action_dim {
            return Err(Error::shape(format!(
                "joint action has {} columns, BSN covers {}",
                joint.cols(),
                self.total_action_dim
            )));
        }
        let cols = self.parent_columns(i);
        let m = crate::numerics::tensor::gather_cols(&joint.as_row()?, &cols)?;
        if joint.rank() == 1 {
            m.reshape(vec![cols.len()])
        } else {
            Ok(m)
        }
    }

    /// Render back into the declaration format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let dims: Vec<String> = n.dims.iter().map(usize::to_string).collect();
            out.push_str(&format!("node {} dims {}", n.id, dims.join(",")));
            if !n.parents.is_empty() {
                out.push_str(&format!(" parents {}", n.parents.join(",")));
            }
            out.push('\n');
        }
        out
    }
}

/// Free-function alias for [`BsnGraph::topo_order`].
pub fn topo_order(graph: &BsnGraph) -> Vec<&str> {
    graph.topo_order()
}

fn kahn_order(nodes: &[BsnNode], index: &HashMap<String, usize>) -> Result<Vec<usize>> {
    let mut indegree: Vec<usize> = nodes.iter().map(|n| n.parents.len()).collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for p in &n.parents {
            children[index[p]].push(i);
        }
    }
    let mut ready: BTreeSet<(&str, usize)> =
        (0..nodes.len()).filter(|&i| indegree[i] == 0).map(|i| (nodes[i].id.as_str(), i)).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert((nodes[c].id.as_str(), c));
            }
        }
    }
    if order.len() < nodes.len() {
        return Err(Error::Cycle(find_cycle(nodes, index, &indegree)));
    }
    Ok(order)
}

/// Walk parent links among unresolved nodes until one repeats.
fn find_cycle(nodes: &[BsnNode], index: &HashMap<String, usize>, indegree: &[usize]) -> Vec<String> {
    let start = (0..nodes.len())
        .filter(|&i| indegree[i] > 0)
        .min_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id))
        .expect("called only when a cycle exists");
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let next = nodes[cur]
            .parents
            .iter()
            .map(|p| index[p])
            .filter(|&p| indegree[p] > 0)
            .min_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id))
            .expect("a node on a cycle has an unresolved parent");
        if let Some(&at) = pos.get(&next) {
            // Following parent links walks edges backwards; reverse into edge order.
            let mut cycle: Vec<String> = path[at..].iter().rev().map(|&i| nodes[i].id.clone()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        pos.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

/// Parse a BSN declaration document.
pub fn parse_bsn(text: &str) -> Result<BsnGraph> {
    let mut nodes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let err = |message: String| Error::Parse { line: line_no, message };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["node", id, "dims", dims, rest @ ..] => {
                let parents = match rest {
                    [] => Vec::new(),
                    ["parents", list] => split_list(list).map(str::to_string).collect(),
                    _ => return Err(err(format!("expected `parents <id>[,<id>...]`, found `{}`", rest.join(" ")))),
                };
                let dims = split_list(dims)
                    .map(|d| d.parse::<usize>().map_err(|_| err(format!("invalid dim `{d}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if parents.iter().any(|p: &String| p.is_empty()) {
                    return Err(err("empty parent id".into()));
                }
                nodes.push(BsnNode { id: (*id).to_string(), dims, parents });
            }
            _ => return Err(err(format!("expected `node <id> dims <d0>[,<d1>...] [parents ...]`, found `{line}`"))),
        }
    }
    if nodes.is_empty() {
        return Err(Error::Parse { line: 0, message: "no nodes declared".into() });
    }
    BsnGraph::new(nodes)
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parents_of<'a>(g: &'a BsnGraph, id: &str) -> Vec<&'a str> {
        g.node(id).unwrap().parents.iter().map(String::as_str).collect()
    }

    #[test]
    fn hopper_chain() {
        let g = parse_bsn("node t1 dims 0\nnode t2 dims 1 parents t1\nnode t3 dims 2 parents t2\n").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.total_action_dim(), 3);
        assert!(parents_of(&g, "t1").is_empty());
        assert_eq!(parents_of(&g, "t2"), ["t1"]);
        assert_eq!(parents_of(&g, "t3"), ["t2"]);
        assert_eq!(g.topo_order(), ["t1", "t2", "t3"]);
    }

    #[test]
    fn walker_tree() {
        let text = "node t1 dims 0\nnode t2 dims 1 parents t1\nnode t3 dims 2 parents t1\n\
                    node t4 dims 3 parents t2\nnode t5 dims 4 parents t3\n";
        let g = parse_bsn(text).unwrap();
        assert_eq!(parents_of(&g, "t4"), ["t2"]);
        assert_eq!(parents_of(&g, "t5"), ["t3"]);
        assert_eq!(g.topo_order(), ["t1", "t2", "t3", "t4", "t5"]);
    }

    #[test]
    fn two_cycle_is_rejected_with_path() {
        let err = parse_bsn("node t1 dims 0 parents t2\nnode t2 dims 1 parents t1\n").unwrap_err();
        match err {
            Error::Cycle(path) => {
                assert_eq!(path.first(), path.last());
                assert_eq!(path.len(), 3);
                assert!(path.contains(&"t1".to_string()) && path.contains(&"t2".to_string()));
            }
            other => panic!("expected cycle, got {other}"),
        }
    }

    #[test]
    fn self_loop_is_a_cycle() {
        assert!(matches!(parse_bsn("node a dims 0 parents a"), Err(Error::Cycle(_))));
    }

    #[test]
    fn cycle_path_follows_edges() {
        // a -> b -> c -> a, plus a root feeding into the loop
        let text = "node r dims 0\nnode a dims 1 parents c,r\nnode b dims 2 parents a\nnode c dims 3 parents b\n";
        match parse_bsn(text).unwrap_err() {
            Error::Cycle(path) => {
                assert_eq!(path.len(), 4);
                for w in path.windows(2) {
                    let child = parse_child_parent(text, &w[1]);
                    assert!(child.contains(&w[0]), "{path:?}");
                }
            }
            other => panic!("{other}"),
        }
    }

    fn parse_child_parent(text: &str, id: &str) -> Vec<String> {
        text.lines()
            .find(|l| l.split_whitespace().nth(1) == Some(id))
            .and_then(|l| l.split("parents ").nth(1))
            .map(|p| p.split(',').map(str::to_string).collect())
            .unwrap_or_default()
    }

    #[test]
    fn unknown_parent_is_reference_error() {
        assert!(matches!(parse_bsn("node a dims 0 parents zz"), Err(Error::Reference(id)) if id == "zz"));
    }

    #[test]
    fn partition_errors() {
        assert!(matches!(parse_bsn("node a dims 0,1\nnode b dims 1"), Err(Error::Partition(_))));
        assert!(matches!(parse_bsn("node a dims 0\nnode b dims 2"), Err(Error::Partition(_))));
        assert!(matches!(parse_bsn("node a dims 0,0"), Err(Error::Partition(_))));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        match parse_bsn("# comment\nnode a dims 0\nnod b dims 1") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_bsn("node a dims x"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_bsn("node a dims 0 parent b"), Err(Error::Parse { .. })));
        assert!(matches!(parse_bsn("  # nothing\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn comments_and_multi_dim_nodes() {
        let g = parse_bsn("node a dims 2,0 # trailing\n\nnode b dims 1 parents a\n").unwrap();
        assert_eq!(g.total_action_dim(), 3);
        assert_eq!(g.node("a").unwrap().dims, vec![2, 0]);
        assert_eq!(g.parent_columns(1), vec![2, 0]);
    }

    #[test]
    fn star_order_and_tie_break() {
        let text = "node t1 dims 0\nnode t5 dims 4 parents t1\nnode t3 dims 2 parents t1\n\
                    node t2 dims 1 parents t1\nnode t4 dims 3 parents t1\n";
        assert_eq!(parse_bsn(text).unwrap().topo_order(), ["t1", "t2", "t3", "t4", "t5"]);
        assert_eq!(parse_bsn("node b dims 0\nnode a dims 1").unwrap().topo_order(), ["a", "b"]);
    }

    #[test]
    fn gather_parent_actions_basics() {
        let g = parse_bsn("node t1 dims 0\nnode t2 dims 1 parents t1\n").unwrap();
        let joint = Tensor::vector(vec![0.3, -0.7]);
        assert!(g.gather_parent_actions("t1", &joint).unwrap().is_empty());
        assert_eq!(g.gather_parent_actions("t2", &joint).unwrap().data(), &[0.3]);
        assert!(matches!(g.gather_parent_actions("t9", &joint), Err(Error::Reference(_))));
    }

    #[test]
    fn multi_parent_concatenates_in_declared_order() {
        let g = parse_bsn("node a dims 0\nnode b dims 1,2\nnode c dims 3 parents b,a\n").unwrap();
        let joint = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.gather_parent_actions("c", &joint).unwrap().data(), &[2.0, 3.0, 1.0]);
        assert_eq!(g.parent_width(g.index_of("c").unwrap()), 3);
    }

    #[test]
    fn ancestry() {
        let g = parse_bsn("node t1 dims 0\nnode t2 dims 1 parents t1\nnode t3 dims 2 parents t2\nnode x dims 3").unwrap();
        let i = |s: &str| g.index_of(s).unwrap();
        assert!(g.is_ancestor(i("t1"), i("t3")));
        assert!(!g.is_ancestor(i("t3"), i("t1")));
        assert!(!g.is_ancestor(i("x"), i("t3")));
    }

    #[test]
    fn text_round_trip() {
        let text = "node t1 dims 0\nnode t2 dims 1,2 parents t1\n";
        let g = parse_bsn(text).unwrap();
        assert_eq!(g.to_text(), text);
        let json = serde_json::to_string(&g).unwrap();
        let back: BsnGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn env_cross_check() {
        let g = BsnGraph::single(3).unwrap();
        assert!(g.check_action_dim(3).is_ok());
        assert!(matches!(g.check_action_dim(4), Err(Error::Partition(_))));
    }
}
