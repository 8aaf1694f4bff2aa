//! Episode generation: landmark annotation of worlds, templated
//! sub-instructions aligned to ground-truth path nodes, coarsened
//! instruction variants, and fixed token embeddings.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::tensor::Tensor2;
use crate::world::{shortest_path, World};

pub type TokenId = usize;

const FUNCTION_WORDS: &[&str] = &[
    "go", "turn", "left", "right", "straight", "forward", "pass", "the", "walk", "to", "stop",
    "at", "then", "continue", "past", "reach", "head", "toward", "room", "by", "near", "into",
    "through", "next", "take", "keep",
];

const LANDMARKS: &[&str] = &[
    "door", "lamp", "sofa", "table", "chair", "plant", "window", "mirror", "shelf", "rug", "vase",
    "painting", "clock", "stairs", "bench", "cabinet", "piano", "desk", "fridge", "oven", "sink",
    "bed", "couch", "tv", "bookcase", "fireplace", "statue", "fountain", "pillar", "arch",
    "curtain", "wardrobe", "ladder", "barrel",
];

/// Fixed token table with seeded, non-trainable unit-norm embeddings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    embeddings: Tensor2,
    landmark_start: usize,
}

impl Vocab {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut symbols: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        let landmark_start = symbols.len();
        symbols.extend(LANDMARKS.iter().map(|s| s.to_string()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_70ce);
        let mut emb = Tensor2::zeros(symbols.len(), dim);
        for r in 0..symbols.len() {
            let row = emb.row_mut(r);
            let mut norm = 0.0;
            for v in row.iter_mut() {
                *v = normal(&mut rng);
                norm += *v * *v;
            }
            let norm = norm.sqrt();
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Vocab {
            symbols,
            embeddings: emb,
            landmark_start,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbol(&self, id: TokenId) -> Result<&str> {
        self.symbols
            .get(id)
            .map(|s| s.as_str())
            .ok_or(AvnError::UnknownToken(id))
    }

    pub fn landmark_ids(&self) -> std::ops::Range<TokenId> {
        self.landmark_start..self.symbols.len()
    }

    pub fn is_landmark(&self, id: TokenId) -> bool {
        id >= self.landmark_start && id < self.symbols.len()
    }

    pub fn embedding(&self, id: TokenId) -> Result<&[f64]> {
        if id >= self.symbols.len() {
            return Err(AvnError::UnknownToken(id));
        }
        Ok(self.embeddings.row(id))
    }
}

/// Scale of the additive sinusoidal token-position encoding.
const TOKEN_POSENC_SCALE: f64 = 0.3;

/// Row i = embedding of token i plus a sinusoidal position encoding,
/// so downstream attention can represent phrase order.
pub fn embed_instruction(tokens: &[TokenId], vocab: &Vocab) -> Result<Tensor2> {
    if tokens.is_empty() {
        return Err(AvnError::Domain("embed_instruction: empty token sequence".into()));
    }
    let dim = vocab.dim();
    let mut out = Tensor2::zeros(tokens.len(), dim);
    for (r, &t) in tokens.iter().enumerate() {
        let row = out.row_mut(r);
        row.copy_from_slice(vocab.embedding(t)?);
        for (k, v) in row.iter_mut().enumerate() {
            let freq = 10_000f64.powf(-((k / 2) as f64) / (dim as f64 / 2.0));
            let phase = r as f64 * freq;
            let pe = if k % 2 == 0 { phase.sin() } else { phase.cos() };
            *v += TOKEN_POSENC_SCALE * pe;
        }
    }
    Ok(out)
}

/// World plus per-node landmark tokens and final node features
/// (landmark embedding + positional encoding + seeded noise).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnotatedWorld {
    pub world: World,
    pub landmarks: Vec<TokenId>,
    pub features: Tensor2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangConfig {
    /// Probability that a landmark token is deliberately assigned to a
    /// second (non-adjacent) node, creating genuine ambiguity.
    pub collision_prob: f64,
    pub posenc_scale: f64,
    pub noise_scale: f64,
    pub hops_min: usize,
    pub hops_max: usize,
    /// Max ground-truth nodes covered by one sub-instruction chunk.
    pub chunk_max_nodes: usize,
}

impl Default for LangConfig {
    fn default() -> Self {
        LangConfig {
            collision_prob: 0.5,
            // Positional structure in node features lets the navigator
            // memorize worlds instead of matching landmarks, which
            // destroys unseen-world generalization; off by default.
            posenc_scale: 0.0,
            noise_scale: 0.05,
            hops_min: 4,
            hops_max: 8,
            chunk_max_nodes: 2,
        }
    }
}

pub fn annotate_world(world: World, vocab: &Vocab, cfg: &LangConfig, seed: u64) -> AnnotatedWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa110_7a7e);
    let n = world.len();
    let dim = vocab.dim();
    let mut pool: Vec<TokenId> = vocab.landmark_ids().collect();
    pool.shuffle(&mut rng);

    let mut landmarks = vec![usize::MAX; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    // A token may repeat across the world (that is the point) but never
    // on adjacent nodes, so the ambiguity is global rather than local.
    let conflicts = |landmarks: &[TokenId], m: usize, t: TokenId| {
        world.neighbors(m).unwrap().iter().any(|&nb| landmarks[nb] == t)
    };
    let mut pool_iter = 0usize;
    let mut i = 0usize;
    while i < order.len() {
        let node = order[i];
        let mut token = pool[pool_iter % pool.len()];
        for off in 0..pool.len() {
            let cand = pool[(pool_iter + off) % pool.len()];
            if !conflicts(&landmarks, node, cand) {
                token = cand;
                pool_iter += off;
                break;
            }
        }
        pool_iter += 1;
        landmarks[node] = token;
        i += 1;
        // Duplicate the landmark onto a later, non-adjacent node.
        if i < order.len() && rng.gen::<f64>() < cfg.collision_prob {
            let nbs = world.neighbors(node).unwrap();
            if let Some(pos) = order[i..]
                .iter()
                .position(|&m| !nbs.contains(&m) && m != node && !conflicts(&landmarks, m, token))
            {
                let j = i + pos;
                order.swap(i, j);
                landmarks[order[i]] = token;
                i += 1;
            }
        }
    }

    let mut features = Tensor2::zeros(n, dim);
    let side = world.cfg.side_m;
    for node in 0..n {
        let emb = vocab.embedding(landmarks[node]).unwrap();
        let pos = world.pos(node);
        let row = features.row_mut(node);
        row.copy_from_slice(emb);
        for (k, v) in row.iter_mut().enumerate() {
            let freq = (1 + k / 4) as f64;
            let coord = if k % 2 == 0 { pos[0] } else { pos[1] };
            let phase = std::f64::consts::TAU * freq * coord / side;
            let pe = if k % 4 < 2 { phase.sin() } else { phase.cos() };
            *v += cfg.posenc_scale * pe + cfg.noise_scale * normal(&mut rng);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
    }

    AnnotatedWorld {
        world,
        landmarks,
        features,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubInstruction {
    pub tokens: Vec<TokenId>,
    /// Inclusive range of ground-truth path indices this chunk covers.
    pub covers: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Orig,
    Short,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    /// Drop k seeded-random non-goal chunks (k clamped to [1, |SI|-1]).
    RandomK(usize),
    Tail,
    Salient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub world_idx: usize,
    pub start: usize,
    pub goal: usize,
    pub gp: Vec<usize>,
    pub si: Vec<SubInstruction>,
    /// Ground-truth path index -> sub-instruction index.
    pub rel_si: Vec<usize>,
    pub i_orig: Vec<TokenId>,
    pub i_short: Vec<TokenId>,
    pub dropped: BTreeSet<usize>,
    pub style: Style,
    pub seed: u64,
}

impl Episode {
    /// Tokens the agent actually receives under the episode's style.
    pub fn input_tokens(&self) -> &[TokenId] {
        match self.style {
            Style::Orig => &self.i_orig,
            Style::Short => &self.i_short,
        }
    }

    /// Token offset and length of a chunk inside I_orig.
    pub fn chunk_span(&self, si_index: usize) -> (usize, usize) {
        let start: usize = self.si[..si_index].iter().map(|s| s.tokens.len()).sum();
        (start, self.si[si_index].tokens.len())
    }

    /// Binary relevance labels over I_orig for the move into gp[gp_index].
    pub fn relevance_labels(&self, gp_index: usize) -> Result<Vec<f64>> {
        if gp_index >= self.gp.len() {
            return Err(AvnError::Domain(format!("gp_index {gp_index} out of range")));
        }
        let (start, len) = self.chunk_span(self.rel_si[gp_index]);
        let mut labels = vec![0.0; self.i_orig.len()];
        for l in labels[start..start + len].iter_mut() {
            *l = 1.0;
        }
        Ok(labels)
    }
}

/// The sub-instruction aligned with gp[gp_index].
pub fn rel_si_lookup(ep: &Episode, gp_index: usize) -> Result<&SubInstruction> {
    if gp_index >= ep.gp.len() {
        return Err(AvnError::Domain(format!(
            "gp_index {gp_index} out of range (|GP| = {})",
            ep.gp.len()
        )));
    }
    Ok(&ep.si[ep.rel_si[gp_index]])
}

pub fn generate_episode(
    world_idx: usize,
    aw: &AnnotatedWorld,
    vocab: &Vocab,
    cfg: &LangConfig,
    seed: u64,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe915_0de5);
    let n = aw.world.len();
    let mut gp = None;
    for _ in 0..400 {
        let start = rng.gen_range(0..n);
        let goal = rng.gen_range(0..n);
        if start == goal {
            continue;
        }
        let path = shortest_path(&aw.world, start, goal)?;
        let hops = path.len() - 1;
        if hops >= cfg.hops_min && hops <= cfg.hops_max {
            gp = Some(path);
            break;
        }
    }
    let gp = gp.ok_or_else(|| {
        AvnError::Generation(format!(
            "no start/goal pair with hop distance in [{}, {}]",
            cfg.hops_min, cfg.hops_max
        ))
    })?;
    let (start, goal) = (gp[0], *gp.last().unwrap());
    let hops = gp.len() - 1;

    // One phrase per hop, describing the move into gp[k].
    let w = |s: &str| vocab.id(s).expect("builtin word");
    let mut phrases: Vec<Vec<TokenId>> = Vec::with_capacity(hops);
    for k in 1..=hops {
        let lm = aw.landmarks[gp[k]];
        let dir: Vec<TokenId> = if k == 1 {
            vec![w("go"), w("forward")]
        } else {
            match turn_direction(&aw.world, gp[k - 2], gp[k - 1], gp[k]) {
                Turn::Left => vec![w("turn"), w("left")],
                Turn::Right => vec![w("turn"), w("right")],
                Turn::Straight => vec![w("go"), w("straight")],
            }
        };
        let mut p = dir;
        if k == hops {
            p.extend([w("stop"), w("at"), w("the"), lm]);
        } else {
            p.extend([w("pass"), w("the"), lm]);
        }
        phrases.push(p);
    }

    // Group hops into chunks of 1..=chunk_max_nodes; chunk 0 also covers
    // the start node (gp index 0).
    let mut si = Vec::new();
    let mut rel_si = vec![0usize; gp.len()];
    let mut hop = 1usize;
    while hop <= hops {
        let take = rng.gen_range(1..=cfg.chunk_max_nodes).min(hops - hop + 1);
        let mut tokens = Vec::new();
        for k in hop..hop + take {
            tokens.extend_from_slice(&phrases[k - 1]);
        }
        let cover_lo = if si.is_empty() { 0 } else { hop };
        let cover_hi = hop + take - 1;
        for idx in cover_lo..=cover_hi {
            rel_si[idx] = si.len();
        }
        si.push(SubInstruction {
            tokens,
            covers: (cover_lo, cover_hi),
        });
        hop += take;
    }

    let i_orig: Vec<TokenId> = si.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    Ok(Episode {
        world_idx,
        start,
        goal,
        gp,
        si,
        rel_si,
        i_short: i_orig.clone(),
        i_orig,
        dropped: BTreeSet::new(),
        style: Style::Orig,
        seed,
    })
}

/// Coarsened copy of an episode: drops sub-instruction chunks per
/// `policy` (the goal-bearing final chunk is always kept) and switches
/// the style to short.
pub fn make_short(ep: &Episode, policy: DropPolicy, seed: u64) -> Result<Episode> {
    let m = ep.si.len();
    if m < 2 {
        return Err(AvnError::CannotCoarsen(format!("only {m} sub-instruction(s)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5402_7c0a);
    let goal_chunk = m - 1;
    let mut dropped: BTreeSet<usize> = BTreeSet::new();
    match policy {
        DropPolicy::Tail => {
            // Keep S_1 and the goal chunk, drop everything between; with
            // only two chunks, drop the first so coarsening still happens.
            if m == 2 {
                dropped.insert(0);
            } else {
                dropped.extend(1..goal_chunk);
            }
        }
        DropPolicy::RandomK(k) => {
            let k = k.clamp(1, m - 1);
            let mut candidates: Vec<usize> = (0..goal_chunk).collect();
            candidates.shuffle(&mut rng);
            dropped.extend(candidates.into_iter().take(k));
        }
        DropPolicy::Salient => {
            // Keep chunks whose covered moves end at globally-unique
            // landmarks, drop the ambiguous ones (they are the chunks a
            // hurried instructor would consider redundant).
            for idx in 0..goal_chunk {
                if !chunk_has_unique_landmark(ep, idx) {
                    dropped.insert(idx);
                }
            }
            if dropped.is_empty() {
                dropped.insert(if goal_chunk > 1 { 1 } else { 0 });
            }
        }
    }
    if dropped.is_empty() {
        return Err(AvnError::CannotCoarsen("drop policy produced empty drop set".into()));
    }
    let i_short: Vec<TokenId> = ep
        .si
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .flat_map(|(_, s)| s.tokens.iter().copied())
        .collect();
    debug_assert!(i_short.len() < ep.i_orig.len());
    Ok(Episode {
        i_short,
        dropped,
        style: Style::Short,
        ..ep.clone()
    })
}

fn chunk_has_unique_landmark(ep: &Episode, si_index: usize) -> bool {
    // A chunk is "salient" when any of its landmark tokens appears only
    // once across the whole instruction; ambiguous landmarks repeat.
    let chunk = &ep.si[si_index];
    chunk.tokens.iter().any(|t| {
        let total = ep.i_orig.iter().filter(|&&u| u == *t).count();
        let here = chunk.tokens.iter().filter(|&&u| u == *t).count();
        total == here && here == 1
    })
}

enum Turn {
    Left,
    Right,
    Straight,
}

fn turn_direction(world: &World, a: usize, b: usize, c: usize) -> Turn {
    let (pa, pb, pc) = (world.pos(a), world.pos(b), world.pos(c));
    let v1 = [pb[0] - pa[0], pb[1] - pa[1]];
    let v2 = [pc[0] - pb[0], pc[1] - pb[1]];
    let cross = v1[0] * v2[1] - v1[1] * v2[0];
    let norm = (v1[0].hypot(v1[1])) * (v2[0].hypot(v2[1]));
    if norm == 0.0 {
        return Turn::Straight;
    }
    let s = cross / norm;
    if s > 0.35 {
        Turn::Left
    } else if s < -0.35 {
        Turn::Right
    } else {
        Turn::Straight
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}
