use bsac::{parse_bsn, topo_order, BsnGraph, BsnNode, Tensor};
use proptest::prelude::*;

/// Random DAG: nodes get shuffled names, a random partition of `0..dim`, and
/// parents drawn only from earlier nodes of a hidden order.
fn arb_graph() -> impl Strategy<Value = BsnGraph> {
    (1usize..7, 0usize..4)
        .prop_flat_map(|(n, extra)| {
            let dim = n + extra;
            (
                Just(n),
                Just((0..dim).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(0..n, dim - n),
                proptest::collection::vec(proptest::bool::weighted(0.4), n * n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(n, perm, owners, edges, names)| {
            // first n columns of the permutation seed every node, the rest go to `owners`
            let mut dims: Vec<Vec<usize>> = (0..n).map(|i| vec![perm[i]]).collect();
            for (c, &o) in perm[n..].iter().zip(&owners) {
                dims[o].push(*c);
            }
            let nodes = (0..n)
                .map(|i| BsnNode {
                    id: format!("n{}", names[i]),
                    dims: dims[i].clone(),
                    parents: (0..i).filter(|&j| edges[i * n + j]).map(|j| format!("n{}", names[j])).collect(),
                })
                .collect::<Vec<_>>();
            BsnGraph::new(nodes).expect("generated graphs are valid")
        })
}

proptest! {
    #[test]
    fn partition_covers_every_dimension_once(g in arb_graph()) {
        let mut all: Vec<usize> = g.nodes().iter().flat_map(|n| n.dims.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..g.total_action_dim()).collect::<Vec<_>>());
    }

    #[test]
    fn topo_order_respects_edges_and_is_pure(g in arb_graph()) {
        let order = topo_order(&g);
        prop_assert_eq!(order.len(), g.len());
        let pos = |id: &str| order.iter().position(|o| *o == id).unwrap();
        for n in g.nodes() {
            for p in &n.parents {
                prop_assert!(pos(p) < pos(&n.id));
            }
        }
        let again = g.clone();
        prop_assert_eq!(topo_order(&again), order);
    }

    #[test]
    fn text_round_trip(g in arb_graph()) {
        prop_assert_eq!(parse_bsn(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn parent_gather_ignores_non_parent_coordinates(g in arb_graph(), seed in any::<u64>()) {
        let mut rng = bsac::seeded_rng(seed);
        let d = g.total_action_dim();
        let joint = Tensor::vector((0..d).map(|_| rng.normal()).collect());
        for node in g.nodes() {
            let base = g.gather_parent_actions(&node.id, &joint).unwrap();
            let mut expect = Vec::new();
            for p in &node.parents {
                for &c in &g.node(p).unwrap().dims {
                    expect.push(joint.data()[c]);
                }
            }
            prop_assert_eq!(base.data(), &expect[..]);
            let parent_cols = g.parent_columns(g.index_of(&node.id).unwrap());
            let mut perturbed = joint.clone();
            for c in 0..d {
                if !parent_cols.contains(&c) {
                    perturbed.data_mut()[c] += 10.0 + rng.normal();
                }
            }
            prop_assert_eq!(g.gather_parent_actions(&node.id, &perturbed).unwrap(), base);
        }
    }
}

#[test]
fn walker_t4_sees_exactly_t2() {
    let g = parse_bsn(
        "node t1 dims 0\nnode t2 dims 1 parents t1\nnode t3 dims 2 parents t1\nnode t4 dims 3 parents t2\nnode t5 dims 4 parents t3",
    )
    .unwrap();
    let a = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
    let b = Tensor::vector(vec![-0.9, 0.2, 0.8, -0.7, 0.6]);
    assert_eq!(g.gather_parent_actions("t4", &a).unwrap().data(), &[0.2]);
    assert_eq!(g.gather_parent_actions("t4", &b).unwrap().data(), &[0.2]);
    assert!(g.gather_parent_actions("t1", &a).unwrap().is_empty());
}

#[test]
fn isolated_nodes_sort_lexicographically() {
    let g = parse_bsn("node b dims 0\nnode a dims 1").unwrap();
    assert_eq!(topo_order(&g), ["a", "b"]);
}
