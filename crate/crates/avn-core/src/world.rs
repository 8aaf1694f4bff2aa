//! Synthetic navigable worlds: seeded random geometric graphs, the
//! agent's explored-graph bookkeeping, and the shortest-path oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub degree_min: usize,
    pub degree_max: usize,
    /// Side of the square the nodes are scattered in, meters.
    pub side_m: f64,
    pub feature_dim: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            nodes_min: 30,
            nodes_max: 60,
            degree_min: 2,
            degree_max: 5,
            side_m: 20.0,
            feature_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldNode {
    pub pos: [f64; 2],
    /// Seeded Gaussian base feature; language annotation later mixes in
    /// landmark embeddings.
    pub base_feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "WorldSer", into = "WorldSer")]
pub struct World {
    pub seed: u64,
    pub cfg: WorldConfig,
    pub nodes: Vec<WorldNode>,
    /// Undirected edges, i < j.
    pub edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct WorldSer {
    seed: u64,
    cfg: WorldConfig,
    nodes: Vec<WorldNode>,
    edges: Vec<(usize, usize)>,
}

impl From<WorldSer> for World {
    fn from(w: WorldSer) -> Self {
        let adj = build_adj(w.nodes.len(), &w.edges);
        World {
            seed: w.seed,
            cfg: w.cfg,
            nodes: w.nodes,
            edges: w.edges,
            adj,
        }
    }
}

impl From<World> for WorldSer {
    fn from(w: World) -> Self {
        WorldSer {
            seed: w.seed,
            cfg: w.cfg,
            nodes: w.nodes,
            edges: w.edges,
        }
    }
}

fn build_adj(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
    }
    adj
}

impl World {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, id: usize) -> Result<&[usize]> {
        self.adj.get(id).map(|v| v.as_slice()).ok_or(AvnError::UnknownNode(id))
    }

    pub fn pos(&self, id: usize) -> [f64; 2] {
        self.nodes[id].pos
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        let pa = self.nodes[a].pos;
        let pb = self.nodes[b].pos;
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }

    pub fn path_weight(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|w| self.dist(w[0], w[1])).sum()
    }
}

/// Seeded random geometric graph: nodes uniform in a square, each
/// connected to nearest neighbors within degree bounds, components
/// bridged by their closest node pair afterwards.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<World> {
    if cfg.nodes_min < 4 {
        return Err(AvnError::Generation("need at least 4 nodes".into()));
    }
    if cfg.degree_min < 2 || cfg.degree_max < cfg.degree_min {
        return Err(AvnError::Generation("degree bounds must satisfy 2 <= min <= max".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.nodes_min..=cfg.nodes_max);
    if cfg.degree_min > n - 1 {
        return Err(AvnError::Generation(format!(
            "degree lower bound {} exceeds node count {} - 1",
            cfg.degree_min, n
        )));
    }
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let pos = [rng.gen::<f64>() * cfg.side_m, rng.gen::<f64>() * cfg.side_m];
        let base_feature = (0..cfg.feature_dim).map(|_| standard_normal(&mut rng)).collect();
        nodes.push(WorldNode { pos, base_feature });
    }
    let dist = |a: usize, b: usize| -> f64 {
        let (pa, pb) = (nodes[a].pos, nodes[b].pos);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    };

    let mut degree = vec![0usize; n];
    let mut has_edge = vec![false; n * n];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let add_edge = |a: usize,
                        b: usize,
                        degree: &mut Vec<usize>,
                        has_edge: &mut Vec<bool>,
                        edges: &mut Vec<(usize, usize)>| {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        if i != j && !has_edge[i * n + j] {
            has_edge[i * n + j] = true;
            degree[i] += 1;
            degree[j] += 1;
            edges.push((i, j));
        }
    };

    // Nearest-neighbor wiring up to the lower degree bound, preferring
    // targets that still have capacity.
    for a in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        order.sort_by(|&x, &y| dist(a, x).partial_cmp(&dist(a, y)).unwrap().then(x.cmp(&y)));
        for pass in 0..2 {
            for &b in &order {
                if degree[a] >= cfg.degree_min {
                    break;
                }
                let (i, j) = if a < b { (a, b) } else { (b, a) };
                if has_edge[i * n + j] {
                    continue;
                }
                if pass == 0 && degree[b] >= cfg.degree_max {
                    continue;
                }
                add_edge(a, b, &mut degree, &mut has_edge, &mut edges);
            }
        }
    }

    // Bridge components via their closest node pair.
    loop {
        let comp = components(n, &edges);
        let ncomp = *comp.iter().max().unwrap() + 1;
        if ncomp == 1 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in (a + 1)..n {
                if comp[a] != comp[b] {
                    let d = dist(a, b);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, a, b));
                    }
                }
            }
        }
        let (_, a, b) = best.unwrap();
        add_edge(a, b, &mut degree, &mut has_edge, &mut edges);
    }

    edges.sort_unstable();
    let adj = build_adj(n, &edges);
    Ok(World {
        seed,
        cfg: cfg.clone(),
        nodes,
        edges,
        adj,
    })
}

fn components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let adj = build_adj(n, edges);
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Minimal-weight path with deterministic tie-break (at each step the
/// smallest-id next node among optimal continuations).
pub fn shortest_path(world: &World, from: usize, to: usize) -> Result<Vec<usize>> {
    let n = world.len();
    if from >= n {
        return Err(AvnError::UnknownNode(from));
    }
    if to >= n {
        return Err(AvnError::UnknownNode(to));
    }
    let dist_to_goal = dijkstra(world, to);
    if dist_to_goal[from].is_infinite() {
        return Err(AvnError::NoPath { from, to });
    }
    let mut path = vec![from];
    let mut cur = from;
    while cur != to {
        // Neighbors iterate in ascending id order, so keeping the first
        // optimum implements the lexicographic tie-break.
        let mut best: Option<(f64, usize)> = None;
        for &nb in world.neighbors(cur)? {
            let total = world.dist(cur, nb) + dist_to_goal[nb];
            let better = match best {
                None => true,
                Some((bd, _)) => total < bd - 1e-12,
            };
            if better {
                best = Some((total, nb));
            }
        }
        let (_, next) = best.ok_or(AvnError::NoPath { from, to })?;
        path.push(next);
        cur = next;
        if path.len() > n + 1 {
            return Err(AvnError::Numeric("shortest_path walk did not terminate".into()));
        }
    }
    Ok(path)
}

fn dijkstra(world: &World, source: usize) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = world.len();
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    let mut heap: BinaryHeap<(Reverse<Ordered>, usize)> = BinaryHeap::new();
    heap.push((Reverse(Ordered(0.0)), source));
    while let Some((Reverse(d), u)) = heap.pop() {
        if d.0 > dist[u] {
            continue;
        }
        for &v in &world.adj[u] {
            let nd = dist[u] + world.dist(u, v);
            if nd < dist[v] {
                dist[v] = nd;
                heap.push((Reverse(Ordered(nd)), v));
            }
        }
    }
    dist
}

#[derive(PartialEq, PartialOrd)]
struct Ordered(f64);
impl Eq for Ordered {}
#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap()
    }
}

/// Second node on the shortest path toward the goal; the current node
/// itself when already there (stop signal).
pub fn oracle_next_move(world: &World, current: usize, goal: usize) -> Result<usize> {
    if current == goal {
        return Ok(current);
    }
    let path = shortest_path(world, current, goal)?;
    Ok(path[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeFlag {
    Unobserved,
    Navigable,
    Visited,
}

/// The agent's explored view of the world: per-node flags, monotone
/// over a rollout (unobserved -> navigable -> visited).
#[derive(Clone, Debug, PartialEq)]
pub struct ExploredGraph {
    flags: Vec<NodeFlag>,
}

impl ExploredGraph {
    pub fn at_start(world: &World, start: usize) -> Result<Self> {
        let mut g = ExploredGraph {
            flags: vec![NodeFlag::Unobserved; world.len()],
        };
        g.observe_and_expand(world, start)?;
        Ok(g)
    }

    pub fn flag(&self, id: usize) -> NodeFlag {
        self.flags[id]
    }

    /// Flags the current node visited and previously-unobserved
    /// world-neighbors navigable. Idempotent; never downgrades a flag.
    pub fn observe_and_expand(&mut self, world: &World, current: usize) -> Result<()> {
        if current >= self.flags.len() {
            return Err(AvnError::UnknownNode(current));
        }
        self.flags[current] = NodeFlag::Visited;
        for &nb in world.neighbors(current)? {
            if self.flags[nb] == NodeFlag::Unobserved {
                self.flags[nb] = NodeFlag::Navigable;
            }
        }
        Ok(())
    }

    /// Observed node ids (visited or navigable), ascending.
    pub fn explored_nodes(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != NodeFlag::Unobserved)
            .map(|(i, _)| i)
            .collect()
    }

    /// Unvisited observed neighbors of `current`, ascending.
    pub fn navigable_neighbors(&self, world: &World, current: usize) -> Result<Vec<usize>> {
        Ok(world
            .neighbors(current)?
            .iter()
            .copied()
            .filter(|&nb| self.flags[nb] == NodeFlag::Navigable)
            .collect())
    }
}

/// Agent position plus the executed path.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub current: usize,
    pub path: Vec<usize>,
}

impl AgentState {
    pub fn at(start: usize) -> Self {
        AgentState {
            current: start,
            path: vec![start],
        }
    }

    pub fn step_to(&mut self, node: usize) {
        self.current = node;
        self.path.push(node);
    }

    pub fn t(&self) -> usize {
        self.path.len() - 1
    }
}
