//! World generation and shortest-path oracle: brute-force
//! cross-checks on small graphs plus structural property suites.

use avn_core::world::{
    generate_world, oracle_next_move, shortest_path, ExploredGraph, NodeFlag, WorldConfig,
};
use proptest::prelude::*;

fn small_cfg() -> WorldConfig {
    WorldConfig {
        nodes_min: 6,
        nodes_max: 10,
        degree_min: 2,
        degree_max: 4,
        side_m: 10.0,
        feature_dim: 4,
    }
}

/// Exhaustive DFS over simple paths; feasible on <= 10 nodes.
fn brute_force_shortest(
    world: &avn_core::world::World,
    from: usize,
    to: usize,
) -> Option<(f64, Vec<usize>)> {
    fn dfs(
        world: &avn_core::world::World,
        cur: usize,
        to: usize,
        visited: &mut Vec<bool>,
        path: &mut Vec<usize>,
        acc: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if cur == to {
            let better = match best {
                None => true,
                Some((bw, bp)) => {
                    acc < *bw - 1e-12 || ((acc - *bw).abs() <= 1e-12 && path < bp)
                }
            };
            if better {
                *best = Some((acc, path.clone()));
            }
            return;
        }
        for &nb in world.neighbors(cur).unwrap() {
            if !visited[nb] {
                visited[nb] = true;
                path.push(nb);
                dfs(world, nb, to, visited, path, acc + world.dist(cur, nb), best);
                path.pop();
                visited[nb] = false;
            }
        }
    }
    let mut visited = vec![false; world.len()];
    visited[from] = true;
    let mut path = vec![from];
    let mut best = None;
    dfs(world, from, to, &mut visited, &mut path, 0.0, &mut best);
    best
}

#[test]
fn shortest_path_matches_brute_force_on_small_graphs() {
    let cfg = small_cfg();
    for seed in 0..20u64 {
        let w = generate_world(seed, &cfg).unwrap();
        for from in 0..w.len() {
            for to in 0..w.len() {
                let got = shortest_path(&w, from, to).unwrap();
                let (bw, _) = brute_force_shortest(&w, from, to).unwrap();
                let gw = w.path_weight(&got);
                assert!(
                    (gw - bw).abs() < 1e-9,
                    "seed {seed} {from}->{to}: dijkstra {gw} vs brute {bw}"
                );
                assert_eq!(got[0], from);
                assert_eq!(*got.last().unwrap(), to);
                // Simple path: no repeated nodes.
                let mut sorted = got.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), got.len());
            }
        }
    }
}

#[test]
fn shortest_path_tie_break_is_deterministic() {
    let cfg = small_cfg();
    for seed in 0..10u64 {
        let w = generate_world(seed, &cfg).unwrap();
        let a = shortest_path(&w, 0, w.len() - 1).unwrap();
        let b = shortest_path(&w, 0, w.len() - 1).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn oracle_next_move_cases() {
    let w = generate_world(3, &small_cfg()).unwrap();
    // At goal: stop signal (current returned).
    assert_eq!(oracle_next_move(&w, 2, 2).unwrap(), 2);
    // Otherwise: the second node of the shortest path.
    let path = shortest_path(&w, 0, w.len() - 1).unwrap();
    assert_eq!(oracle_next_move(&w, 0, w.len() - 1).unwrap(), path[1]);
    // Following the oracle reaches the goal in |path| - 1 hops.
    let mut cur = 0;
    let mut hops = 0;
    while cur != w.len() - 1 {
        cur = oracle_next_move(&w, cur, w.len() - 1).unwrap();
        hops += 1;
        assert!(hops <= w.len());
    }
    assert_eq!(hops, path.len() - 1);
}

#[test]
fn shortest_path_reversal_preserves_weight() {
    let cfg = small_cfg();
    for seed in 0..10u64 {
        let w = generate_world(seed, &cfg).unwrap();
        for from in 0..w.len() {
            for to in from + 1..w.len() {
                let fwd = shortest_path(&w, from, to).unwrap();
                let bwd = shortest_path(&w, to, from).unwrap();
                assert!((w.path_weight(&fwd) - w.path_weight(&bwd)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn unknown_node_is_error() {
    let w = generate_world(0, &small_cfg()).unwrap();
    assert!(shortest_path(&w, 0, w.len()).is_err());
    assert!(shortest_path(&w, w.len(), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_worlds_are_connected_with_degree_bounds(seed in 0u64..10_000) {
        let cfg = WorldConfig::default();
        let w = generate_world(seed, &cfg).unwrap();
        prop_assert!(w.len() >= cfg.nodes_min && w.len() <= cfg.nodes_max);
        // Connectivity: every node reachable from 0.
        for to in 0..w.len() {
            prop_assert!(shortest_path(&w, 0, to).is_ok());
        }
        // Degree lower bound always holds; the upper bound may be
        // exceeded only by second-pass/bridging edges, so allow slack.
        for id in 0..w.len() {
            let deg = w.neighbors(id).unwrap().len();
            prop_assert!(deg >= cfg.degree_min, "node {id} degree {deg}");
        }
        // Edges canonical: i < j, sorted, unique.
        for win in w.edges.windows(2) {
            prop_assert!(win[0] < win[1]);
        }
        for &(a, b) in &w.edges {
            prop_assert!(a < b && b < w.len());
        }
        // Positions inside the square.
        for id in 0..w.len() {
            let p = w.pos(id);
            prop_assert!(p[0] >= 0.0 && p[0] <= cfg.side_m);
            prop_assert!(p[1] >= 0.0 && p[1] <= cfg.side_m);
        }
    }

    #[test]
    fn world_generation_is_deterministic(seed in 0u64..1_000) {
        let cfg = small_cfg();
        let a = generate_world(seed, &cfg).unwrap();
        let b = generate_world(seed, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn explored_graph_flags_are_monotone(seed in 0u64..500, steps in 1usize..8) {
        let w = generate_world(seed, &small_cfg()).unwrap();
        let mut g = ExploredGraph::at_start(&w, 0).unwrap();
        prop_assert_eq!(g.flag(0), NodeFlag::Visited);
        let mut cur = 0usize;
        for _ in 0..steps {
            let before: Vec<NodeFlag> = (0..w.len()).map(|i| g.flag(i)).collect();
            let nav = g.navigable_neighbors(&w, cur).unwrap();
            // Navigable neighbors are observed, unvisited, adjacent, ascending.
            for win in nav.windows(2) {
                prop_assert!(win[0] < win[1]);
            }
            for &n in &nav {
                prop_assert_eq!(g.flag(n), NodeFlag::Navigable);
                prop_assert!(w.neighbors(cur).unwrap().contains(&n));
            }
            let Some(&next) = nav.first() else { break };
            g.observe_and_expand(&w, next).unwrap();
            cur = next;
            // Never downgrades: Visited stays Visited, observed stays observed.
            for i in 0..w.len() {
                let rank = |f: NodeFlag| match f {
                    NodeFlag::Unobserved => 0,
                    NodeFlag::Navigable => 1,
                    NodeFlag::Visited => 2,
                };
                prop_assert!(rank(g.flag(i)) >= rank(before[i]));
            }
        }
        // explored_nodes ascending and consistent with flags.
        let ex = g.explored_nodes();
        for win in ex.windows(2) {
            prop_assert!(win[0] < win[1]);
        }
        for i in 0..w.len() {
            prop_assert_eq!(ex.contains(&i), g.flag(i) != NodeFlag::Unobserved);
        }
    }
}

#[test]
fn world_survives_serde_roundtrip() {
    let w = generate_world(11, &small_cfg()).unwrap();
    let json = serde_json::to_string(&w).unwrap();
    let back: avn_core::world::World = serde_json::from_str(&json).unwrap();
    assert_eq!(w, back);
    // Adjacency is rebuilt: neighbors still work.
    assert_eq!(w.neighbors(0).unwrap(), back.neighbors(0).unwrap());
}
