//! Toy attention navigator: text self-attention encoder, cross
//! attention from explored-graph nodes onto the instruction, and a
//! bilinear action scorer over navigable neighbors plus a learned stop
//! pseudo-node. Trained by teacher-forced imitation, frozen afterwards.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::iv::label_gp;
use crate::lang::{embed_instruction, AnnotatedWorld, Episode, Style, Vocab};
use crate::nn::{
    init_mha, linear_forward, multihead_attention, param, AdamWConfig, MHAConfig, ParamStore,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor2;
use crate::world::{oracle_next_move, AgentState, ExploredGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveChoice {
    Node(usize),
    Stop,
}

#[derive(Clone, Debug)]
pub struct NavigatorModel {
    pub params: ParamStore,
    pub cfg: MHAConfig,
}

impl NavigatorModel {
    pub fn init(cfg: MHAConfig, seed: u64) -> Self {
        let d = cfg.model_dim;
        let std = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0a71_9a70);
        let mut params = ParamStore::new();
        init_mha(&mut params, "nav.text.mha", &cfg, std, &mut rng);
        params.insert_randn("nav.text.lin.w", d, d, std, &mut rng);
        params.insert("nav.text.lin.b", Tensor2::zeros(1, d));
        init_mha(&mut params, "nav.cross.mha", &cfg, std, &mut rng);
        params.insert_randn("nav.act.wa", d, d, std, &mut rng);
        params.insert_randn("nav.act.wc", d, d, std, &mut rng);
        params.insert_randn("nav.act.stop", 1, d, std, &mut rng);
        NavigatorModel { params, cfg }
    }
}

/// Builds the instruction encoder on `tape`: Î = I + Linear(MHA(I, I)).
pub fn encode_text(tape: &mut Tape, instr: NodeId, model: &NavigatorModel) -> Result<NodeId> {
    let d = model.cfg.model_dim;
    if tape.value(instr).cols() != d {
        return Err(AvnError::dim("encode_text", tape.value(instr).shape_str(), d));
    }
    let mha = multihead_attention(tape, instr, instr, &model.params, "nav.text.mha", &model.cfg)?;
    let w = param(tape, &model.params, "nav.text.lin.w")?;
    let b = param(tape, &model.params, "nav.text.lin.b")?;
    let lin = linear_forward(tape, mha.out, w, b)?;
    tape.add(instr, lin)
}

/// Frozen-model instruction encoding as a plain value (cacheable per
/// episode during rollouts).
pub fn encode_text_value(model: &NavigatorModel, instr: &Tensor2) -> Result<Tensor2> {
    let mut tape = Tape::new();
    let i = tape.constant(instr.clone());
    let out = encode_text(&mut tape, i, model)?;
    Ok(tape.value(out).clone())
}

/// Cross attention: explored-node features attend over Î.
/// Returns (Ĝ_t, α_t); α_t rows are head-averaged softmax
/// distributions over instruction tokens.
pub fn cross_attend(
    tape: &mut Tape,
    i_hat: NodeId,
    node_feats: NodeId,
    model: &NavigatorModel,
) -> Result<(NodeId, NodeId)> {
    if tape.value(node_feats).rows() == 0 {
        return Err(AvnError::Domain("cross_attend: empty explored graph".into()));
    }
    let mha = multihead_attention(tape, node_feats, i_hat, &model.params, "nav.cross.mha", &model.cfg)?;
    let g_hat = tape.add(node_feats, mha.out)?;
    Ok((g_hat, mha.attn))
}

/// Action scores: the query mixes the instruction goal summary (mean
/// of Î rows) with the current node's encoding, so progress along the
/// path conditions the choice; candidates are scored bilinearly and
/// the stop pseudo-node is the current node's encoding plus a learned
/// marker. Returns the logits node (1 x (len(candidates)+1), stop
/// last).
pub fn action_scores(
    tape: &mut Tape,
    i_hat: NodeId,
    g_hat: NodeId,
    cand_rows: &[usize],
    cur_row: usize,
    model: &NavigatorModel,
) -> Result<NodeId> {
    let goal = tape.mean_rows(i_hat);
    let wa = param(tape, &model.params, "nav.act.wa")?;
    let gw = tape.matmul_nt(goal, wa)?;
    let cur = tape.gather_rows(g_hat, &[cur_row])?;
    let wc = param(tape, &model.params, "nav.act.wc")?;
    let cw = tape.matmul_nt(cur, wc)?;
    let query = tape.add(gw, cw)?;
    let stop_marker = param(tape, &model.params, "nav.act.stop")?;
    let stop_enc = tape.add(cur, stop_marker)?;
    let all = if cand_rows.is_empty() {
        stop_enc
    } else {
        let cands = tape.gather_rows(g_hat, cand_rows)?;
        tape.concat_rows(&[cands, stop_enc])?
    };
    tape.matmul_nt(query, all)
}

/// Plain-value outputs of one navigator step on a frozen model.
pub struct StepOutputs {
    pub i_hat: Tensor2,
    pub g_hat: Tensor2,
    pub alpha: Tensor2,
    /// Probabilities over candidates + stop (stop last).
    pub beta: Vec<f64>,
    /// Explored node ids, in Ĝ row order.
    pub explored: Vec<usize>,
    /// Candidate node ids (navigable neighbors of current, ascending).
    pub candidates: Vec<usize>,
    pub cur_row: usize,
    pub n_hat: MoveChoice,
}

impl StepOutputs {
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.explored.binary_search(&node).ok()
    }
}

/// One frozen forward step at `current` on the explored graph.
pub fn navigator_step(
    model: &NavigatorModel,
    aw: &AnnotatedWorld,
    explored: &ExploredGraph,
    current: usize,
    i_hat_cached: &Tensor2,
) -> Result<StepOutputs> {
    let explored_ids = explored.explored_nodes();
    let candidates = explored.navigable_neighbors(&aw.world, current)?;
    let mut feats = Tensor2::zeros(explored_ids.len(), aw.features.cols());
    for (r, &id) in explored_ids.iter().enumerate() {
        feats.row_mut(r).copy_from_slice(aw.features.row(id));
    }
    let cur_row = explored_ids
        .binary_search(&current)
        .map_err(|_| AvnError::UnknownNode(current))?;
    let cand_rows: Vec<usize> = candidates
        .iter()
        .map(|&c| explored_ids.binary_search(&c).unwrap())
        .collect();

    let mut tape = Tape::new();
    let i_hat = tape.constant(i_hat_cached.clone());
    let nf = tape.constant(feats);
    let (g_hat, alpha) = cross_attend(&mut tape, i_hat, nf, model)?;
    let logits = action_scores(&mut tape, i_hat, g_hat, &cand_rows, cur_row, model)?;
    let probs = tape.softmax_rows(logits);
    let beta: Vec<f64> = tape.value(probs).row(0).to_vec();

    // Argmax with lexicographic tie-break over node ids; stop last.
    let mut best = 0usize;
    for j in 1..beta.len() {
        if beta[j] > beta[best] {
            best = j;
        }
    }
    let n_hat = if best < candidates.len() {
        MoveChoice::Node(candidates[best])
    } else {
        MoveChoice::Stop
    };
    Ok(StepOutputs {
        i_hat: i_hat_cached.clone(),
        g_hat: tape.value(g_hat).clone(),
        alpha: tape.value(alpha).clone(),
        beta,
        explored: explored_ids,
        candidates,
        cur_row,
        n_hat,
    })
}

/// Summary features of α_t that are independent of node/token counts:
/// [mean over tokens of the node-averaged distribution, its max, its
/// normalized entropy].
pub fn pooled_alpha_features(alpha: &Tensor2) -> [f64; 3] {
    let l = alpha.cols();
    let k = alpha.rows() as f64;
    let mut dist = vec![0.0; l];
    for r in 0..alpha.rows() {
        for (d, &v) in dist.iter_mut().zip(alpha.row(r)) {
            *d += v / k;
        }
    }
    let mean = dist.iter().sum::<f64>() / l as f64;
    let max = dist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let entropy: f64 = -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    let norm_entropy = if l > 1 { entropy / (l as f64).ln() } else { 0.0 };
    [mean, max, norm_entropy]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Certain,
    Uncertain,
}

/// Per-step context handed to uncertainty gates during a rollout.
pub struct StepContext<'a> {
    pub outputs: &'a StepOutputs,
    /// Rows in Ĝ of the executed path nodes, in path order.
    pub path_rows: &'a [usize],
    pub current: usize,
}

pub trait UncertaintyGate {
    fn name(&self) -> &'static str;
    fn decide(&self, ctx: &StepContext) -> GateDecision;
}

pub struct NeverAsk;
impl UncertaintyGate for NeverAsk {
    fn name(&self) -> &'static str {
        "never"
    }
    fn decide(&self, _ctx: &StepContext) -> GateDecision {
        GateDecision::Certain
    }
}

pub struct AlwaysAsk;
impl UncertaintyGate for AlwaysAsk {
    fn name(&self) -> &'static str {
        "always"
    }
    fn decide(&self, _ctx: &StepContext) -> GateDecision {
        GateDecision::Uncertain
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub beta: Vec<f64>,
    pub candidates: Vec<usize>,
    pub alpha_feat: [f64; 3],
    pub n_hat: MoveChoice,
    pub decision: GateDecision,
    pub label_gp: u8,
    pub label_ip: Option<u8>,
    pub intervention: bool,
    pub move_taken: MoveChoice,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_seed: u64,
    pub world_idx: usize,
    pub style: Style,
    pub goal: usize,
    pub shortest_len_m: f64,
    pub steps: Vec<StepRecord>,
    pub final_node: usize,
    pub success: bool,
    pub path_len_m: f64,
    /// Straight-line distance from the final node to the goal, meters.
    pub ne_m: f64,
    pub truncated: bool,
}

impl Trajectory {
    pub fn interventions(&self) -> usize {
        self.steps.iter().filter(|s| s.intervention).count()
    }
}

/// Frozen-model rollout with an uncertainty gate and oracle
/// intervention. Deterministic given (episode, gate, max_steps).
pub fn rollout(
    model: &NavigatorModel,
    aw: &AnnotatedWorld,
    vocab: &Vocab,
    ep: &Episode,
    gate: &dyn UncertaintyGate,
    max_steps: usize,
) -> Result<Trajectory> {
    let instr = embed_instruction(ep.input_tokens(), vocab)?;
    let i_hat = encode_text_value(model, &instr)?;
    let mut explored = ExploredGraph::at_start(&aw.world, ep.start)?;
    let mut state = AgentState::at(ep.start);
    let shortest_len_m = aw.world.path_weight(&ep.gp);

    let mut steps = Vec::new();
    let mut stopped = false;
    while state.t() < max_steps {
        let out = navigator_step(model, aw, &explored, state.current, &i_hat)?;
        let path_rows: Vec<usize> = state
            .path
            .iter()
            .map(|&n| out.row_of(n).expect("path nodes are explored"))
            .collect();
        let ctx = StepContext {
            outputs: &out,
            path_rows: &path_rows,
            current: state.current,
        };
        let decision = gate.decide(&ctx);

        let gt_next = oracle_next_move(&aw.world, state.current, ep.goal)?;
        let gt_move = if gt_next == state.current {
            MoveChoice::Stop
        } else {
            MoveChoice::Node(gt_next)
        };
        let lbl_gp = label_gp(out.n_hat, gt_move);
        let lbl_ip = if state.path == ep.gp[..state.path.len().min(ep.gp.len())]
            && state.t() + 1 < ep.gp.len()
        {
            Some(crate::iv::label_ip(ep, state.t() + 1)?)
        } else {
            None
        };

        let intervention = decision == GateDecision::Uncertain;
        let move_taken = if intervention { gt_move } else { out.n_hat };
        steps.push(StepRecord {
            beta: out.beta.clone(),
            candidates: out.candidates.clone(),
            alpha_feat: pooled_alpha_features(&out.alpha),
            n_hat: out.n_hat,
            decision,
            label_gp: lbl_gp,
            label_ip: lbl_ip,
            intervention,
            move_taken,
        });
        match move_taken {
            MoveChoice::Stop => {
                stopped = true;
                break;
            }
            MoveChoice::Node(n) => {
                state.step_to(n);
                explored.observe_and_expand(&aw.world, n)?;
            }
        }
    }
    let truncated = !stopped;
    Ok(Trajectory {
        episode_seed: ep.seed,
        world_idx: ep.world_idx,
        style: ep.style,
        goal: ep.goal,
        shortest_len_m,
        steps,
        final_node: state.current,
        success: stopped && state.current == ep.goal,
        path_len_m: aw.world.path_weight(&state.path),
        ne_m: aw.world.dist(state.current, ep.goal),
        truncated,
    })
}

#[derive(Clone, Debug)]
pub struct NavTrainConfig {
    pub iterations: usize,
    pub batch_episodes: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for NavTrainConfig {
    fn default() -> Self {
        NavTrainConfig {
            iterations: 8000,
            batch_episodes: 8,
            lr: 3e-3,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Teacher-forced imitation on fine-grained instructions only.
pub fn train_navigator(
    corpus: &[Episode],
    worlds: &[AnnotatedWorld],
    vocab: &Vocab,
    mha_cfg: MHAConfig,
    tcfg: &NavTrainConfig,
) -> Result<NavigatorModel> {
    if corpus.is_empty() {
        return Err(AvnError::Training("empty navigator corpus".into()));
    }
    let mut model = NavigatorModel::init(mha_cfg, tcfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x7a41_9000);
    let opt = AdamWConfig {
        lr: tcfg.lr,
        weight_decay: tcfg.weight_decay,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = corpus.len(); // force shuffle on first use
    for _ in 0..tcfg.iterations {
        let snapshot = model.params.clone();
        let mut total_steps = 0usize;
        for _ in 0..tcfg.batch_episodes {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ep = &corpus[order[cursor]];
            cursor += 1;
            total_steps += teacher_forced_episode(&mut model, &worlds[ep.world_idx], vocab, ep)?;
        }
        if total_steps == 0 {
            continue;
        }
        model.params.scale_grads(1.0 / total_steps as f64);
        model.params.adamw_step(&opt).map_err(|e| {
            model.params = snapshot.clone();
            AvnError::Training(format!("navigator diverged: {e}"))
        })?;
    }
    Ok(model)
}

/// Accumulates gradients for one teacher-forced episode; returns the
/// number of decision steps contributed.
fn teacher_forced_episode(
    model: &mut NavigatorModel,
    aw: &AnnotatedWorld,
    vocab: &Vocab,
    ep: &Episode,
) -> Result<usize> {
    debug_assert_eq!(ep.style, Style::Orig);
    let instr = embed_instruction(&ep.i_orig, vocab)?;
    let mut tape = Tape::new();
    let i_node = tape.constant(instr);
    let i_hat = encode_text(&mut tape, i_node, model)?;

    let mut explored = ExploredGraph::at_start(&aw.world, ep.start)?;
    let mut losses = Vec::new();
    for t in 0..ep.gp.len() {
        let current = ep.gp[t];
        let explored_ids = explored.explored_nodes();
        let candidates = explored.navigable_neighbors(&aw.world, current)?;
        let target = if t + 1 < ep.gp.len() {
            match candidates.iter().position(|&c| c == ep.gp[t + 1]) {
                Some(j) => j,
                // Revisited target (cannot happen on simple shortest paths).
                None => {
                    return Err(AvnError::Training("ground-truth move not navigable".into()))
                }
            }
        } else {
            candidates.len() // stop slot
        };
        let mut feats = Tensor2::zeros(explored_ids.len(), aw.features.cols());
        for (r, &id) in explored_ids.iter().enumerate() {
            feats.row_mut(r).copy_from_slice(aw.features.row(id));
        }
        let cur_row = explored_ids.binary_search(&current).unwrap();
        let cand_rows: Vec<usize> = candidates
            .iter()
            .map(|&c| explored_ids.binary_search(&c).unwrap())
            .collect();
        let nf = tape.constant(feats);
        let (g_hat, _alpha) = cross_attend(&mut tape, i_hat, nf, model)?;
        let logits = action_scores(&mut tape, i_hat, g_hat, &cand_rows, cur_row, model)?;
        losses.push(tape.softmax_ce(logits, target)?);

        if t + 1 < ep.gp.len() {
            explored.observe_and_expand(&aw.world, ep.gp[t + 1])?;
        }
    }
    let total = tape.sum_scalars(&losses)?;
    let grads = tape.backward(total)?;
    for (name, g) in tape.param_grads(&grads) {
        model.params.accumulate_grad(name, g)?;
    }
    Ok(losses.len())
}

/// Fraction of teacher-forced steps where the frozen model's argmax
/// matches the ground-truth move.
pub fn teacher_forced_accuracy(
    model: &NavigatorModel,
    corpus: &[Episode],
    worlds: &[AnnotatedWorld],
    vocab: &Vocab,
) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for ep in corpus {
        let aw = &worlds[ep.world_idx];
        let instr = embed_instruction(ep.input_tokens(), vocab)?;
        let i_hat = encode_text_value(model, &instr)?;
        let mut explored = ExploredGraph::at_start(&aw.world, ep.start)?;
        for t in 0..ep.gp.len() {
            let out = navigator_step(model, aw, &explored, ep.gp[t], &i_hat)?;
            let gt = if t + 1 < ep.gp.len() {
                MoveChoice::Node(ep.gp[t + 1])
            } else {
                MoveChoice::Stop
            };
            if out.n_hat == gt {
                hit += 1;
            }
            total += 1;
            if t + 1 < ep.gp.len() {
                explored.observe_and_expand(&aw.world, ep.gp[t + 1])?;
            }
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}
