//! Navigator forward pass and gated rollouts: attention invariants,
//! action distribution sanity, determinism, and the two degenerate
//! gates (always ask = oracle walk, never ask = raw model).

use approx::assert_abs_diff_eq;
use avn_core::lang::{annotate_world, generate_episode, LangConfig, Vocab};
use avn_core::navigator::{
    cross_attend, encode_text_value, navigator_step, pooled_alpha_features, rollout, AlwaysAsk,
    MoveChoice, NavigatorModel, NeverAsk,
};
use avn_core::nn::MHAConfig;
use avn_core::tape::Tape;
use avn_core::tensor::Tensor2;
use avn_core::world::{generate_world, shortest_path, ExploredGraph, WorldConfig};

mod common;
use common::randn_mat;

const D: usize = 16;

fn fixture(seed: u64) -> (avn_core::lang::AnnotatedWorld, Vocab, avn_core::lang::Episode) {
    let wcfg = WorldConfig {
        feature_dim: D,
        ..Default::default()
    };
    let world = generate_world(seed, &wcfg).unwrap();
    let vocab = Vocab::new(D, 0);
    let ecfg = LangConfig::default();
    let aw = annotate_world(world, &vocab, &ecfg, seed);
    let ep = generate_episode(0, &aw, &vocab, &ecfg, seed ^ 0x5eed).unwrap();
    (aw, vocab, ep)
}

#[test]
fn encode_text_is_deterministic_and_checks_width() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 0);
    let (aw, vocab, ep) = fixture(1);
    let _ = aw;
    let instr = avn_core::lang::embed_instruction(&ep.i_orig, &vocab).unwrap();
    let a = encode_text_value(&model, &instr).unwrap();
    let b = encode_text_value(&model, &instr).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.rows(), a.cols()), (ep.i_orig.len(), D));
    // Wrong embedding width is rejected.
    let bad = Tensor2::zeros(3, D - 1);
    assert!(encode_text_value(&model, &bad).is_err());
}

#[test]
fn cross_attention_rows_are_stochastic_over_tokens() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 3);
    let mut rng = rand::SeedableRng::seed_from_u64(9);
    let i_hat = randn_mat(5, D, &mut rng);
    let feats = randn_mat(4, D, &mut rng);
    let mut tape = Tape::new();
    let i = tape.constant(i_hat);
    let f = tape.constant(feats);
    let (g_hat, alpha) = cross_attend(&mut tape, i, f, &model).unwrap();
    let a = tape.value(alpha).clone();
    assert_eq!((a.rows(), a.cols()), (4, 5));
    for r in 0..4 {
        assert_abs_diff_eq!(a.row(r).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
    assert_eq!(tape.value(g_hat).rows(), 4);
    // Empty explored graph is rejected.
    let mut tape = Tape::new();
    let i = tape.constant(Tensor2::zeros(5, D));
    let f = tape.constant(Tensor2::zeros(0, D));
    assert!(cross_attend(&mut tape, i, f, &model).is_err());
}

#[test]
fn single_token_instruction_gives_degenerate_alpha() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 3);
    let mut rng = rand::SeedableRng::seed_from_u64(10);
    let i_hat = randn_mat(1, D, &mut rng);
    let feats = randn_mat(3, D, &mut rng);
    let mut tape = Tape::new();
    let i = tape.constant(i_hat);
    let f = tape.constant(feats);
    let (_, alpha) = cross_attend(&mut tape, i, f, &model).unwrap();
    let a = tape.value(alpha);
    for r in 0..3 {
        assert_abs_diff_eq!(a.get(r, 0), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn duplicate_node_features_get_identical_attention_rows() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 4);
    let mut rng = rand::SeedableRng::seed_from_u64(11);
    let i_hat = randn_mat(4, D, &mut rng);
    let one = randn_mat(1, D, &mut rng);
    let mut feats = Tensor2::zeros(2, D);
    feats.row_mut(0).copy_from_slice(one.row(0));
    feats.row_mut(1).copy_from_slice(one.row(0));
    let mut tape = Tape::new();
    let i = tape.constant(i_hat);
    let f = tape.constant(feats);
    let (g_hat, alpha) = cross_attend(&mut tape, i, f, &model).unwrap();
    let a = tape.value(alpha).clone();
    let g = tape.value(g_hat).clone();
    for c in 0..a.cols() {
        assert_abs_diff_eq!(a.get(0, c), a.get(1, c), epsilon = 1e-12);
    }
    for c in 0..D {
        assert_abs_diff_eq!(g.get(0, c), g.get(1, c), epsilon = 1e-12);
    }
}

#[test]
fn step_beta_is_a_distribution_and_n_hat_is_argmax() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 0);
    let (aw, vocab, ep) = fixture(2);
    let instr = avn_core::lang::embed_instruction(&ep.i_orig, &vocab).unwrap();
    let i_hat = encode_text_value(&model, &instr).unwrap();
    let explored = ExploredGraph::at_start(&aw.world, ep.start).unwrap();
    let out = navigator_step(&model, &aw, &explored, ep.start, &i_hat).unwrap();
    // β covers candidates + stop and sums to one.
    assert_eq!(out.beta.len(), out.candidates.len() + 1);
    assert_abs_diff_eq!(out.beta.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    // N̂ is the argmax slot: a candidate node or stop.
    let best = out
        .beta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let want = if best < out.candidates.len() {
        MoveChoice::Node(out.candidates[best])
    } else {
        MoveChoice::Stop
    };
    assert_eq!(out.n_hat, want);
    // Candidates are the navigable neighbors, ascending.
    for w in out.candidates.windows(2) {
        assert!(w[0] < w[1]);
    }
    // An untrained model stays reasonably undecided (no β above 0.9).
    for &p in &out.beta {
        assert!(p < 0.9, "untrained model overly confident: {:?}", out.beta);
    }
    // Pooled α features are finite and the entropy term is in [0, 1].
    let f = pooled_alpha_features(&out.alpha);
    assert!(f.iter().all(|v| v.is_finite()));
    assert!((0.0..=1.0 + 1e-12).contains(&f[2]));
}

#[test]
fn rollouts_are_deterministic() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 1);
    let (aw, vocab, ep) = fixture(3);
    let a = rollout(&model, &aw, &vocab, &ep, &NeverAsk, 20).unwrap();
    let b = rollout(&model, &aw, &vocab, &ep, &NeverAsk, 20).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn always_ask_walks_the_shortest_path_exactly() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 7);
    for seed in 0..8u64 {
        let (aw, vocab, ep) = fixture(seed);
        let t = rollout(&model, &aw, &vocab, &ep, &AlwaysAsk, 40).unwrap();
        assert!(t.success);
        assert!(!t.truncated);
        assert_eq!(t.final_node, ep.goal);
        assert_eq!(t.ne_m, 0.0);
        // Every step intervenes; the executed path is the ground truth,
        // so hop count (+ the stop step) matches |GP|.
        assert!(t.steps.iter().all(|s| s.intervention));
        assert_eq!(t.interventions(), ep.gp.len());
        let sp = shortest_path(&aw.world, ep.start, ep.goal).unwrap();
        assert_abs_diff_eq!(t.path_len_m, aw.world.path_weight(&sp), epsilon = 1e-12);
        // SPL of an exact shortest-path walk is 100%.
        assert_abs_diff_eq!(
            avn_core::eval::spl(&[t]),
            100.0,
            epsilon = 1e-12
        );
    }
}

#[test]
fn never_ask_executes_raw_model_choices() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 5);
    let (aw, vocab, ep) = fixture(6);
    let t = rollout(&model, &aw, &vocab, &ep, &NeverAsk, 20).unwrap();
    assert_eq!(t.interventions(), 0);
    for s in &t.steps {
        assert_eq!(s.move_taken, s.n_hat);
    }
    // Truncation flag: truncated iff no stop was executed.
    let stopped = t.steps.iter().any(|s| s.move_taken == MoveChoice::Stop);
    assert_eq!(t.truncated, !stopped);
    if t.truncated {
        assert!(t.steps.len() == 20);
        assert!(!t.success);
    }
}

#[test]
fn max_steps_zero_yields_empty_truncated_trajectory() {
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 5);
    let (aw, vocab, ep) = fixture(6);
    let t = rollout(&model, &aw, &vocab, &ep, &NeverAsk, 0).unwrap();
    assert!(t.steps.is_empty());
    assert!(t.truncated);
    assert!(!t.success);
    assert_eq!(t.final_node, ep.start);
}

#[test]
fn step_labels_match_oracle_on_always_ask_rollout() {
    // Under intervention the executed prefix follows GP, so label_gp is
    // 1 exactly when the model's own proposal differs from the oracle
    // move, and label_ip is present on every on-path step.
    let model = NavigatorModel::init(MHAConfig::new(2, D).unwrap(), 2);
    let (aw, vocab, ep) = fixture(4);
    let t = rollout(&model, &aw, &vocab, &ep, &AlwaysAsk, 40).unwrap();
    for (i, s) in t.steps.iter().enumerate() {
        let gt = if i + 1 < ep.gp.len() {
            MoveChoice::Node(ep.gp[i + 1])
        } else {
            MoveChoice::Stop
        };
        assert_eq!(s.move_taken, gt);
        assert_eq!(s.label_gp, u8::from(s.n_hat != gt));
        if i + 1 < ep.gp.len() {
            assert!(s.label_ip.is_some());
        } else {
            assert!(s.label_ip.is_none());
        }
    }
}

#[test]
fn pooled_alpha_features_unit_cases() {
    // Uniform rows: mean 1/L, max 1/L, entropy 1.
    let a = Tensor2::from_vec(2, 4, vec![0.25; 8]).unwrap();
    let f = pooled_alpha_features(&a);
    assert_abs_diff_eq!(f[0], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(f[1], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(f[2], 1.0, epsilon = 1e-12);
    // One-hot rows on the same token: max 1, entropy 0.
    let a = Tensor2::from_vec(2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let f = pooled_alpha_features(&a);
    assert_abs_diff_eq!(f[1], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(f[2], 0.0, epsilon = 1e-12);
    // Single-column α defines entropy as 0.
    let a = Tensor2::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
    assert_eq!(pooled_alpha_features(&a)[2], 0.0);
}

#[test]
fn training_on_tiny_corpus_improves_teacher_forced_accuracy() {
    let wcfg = WorldConfig {
        feature_dim: D,
        ..Default::default()
    };
    let vocab = Vocab::new(D, 0);
    let ecfg = LangConfig::default();
    let mut worlds = Vec::new();
    let mut corpus = Vec::new();
    for w in 0..3u64 {
        let world = generate_world(w, &wcfg).unwrap();
        let aw = annotate_world(world, &vocab, &ecfg, w);
        for e in 0..6u64 {
            corpus.push(generate_episode(w as usize, &aw, &vocab, &ecfg, w * 100 + e).unwrap());
        }
        worlds.push(aw);
    }
    let mha = MHAConfig::new(2, D).unwrap();
    let base = NavigatorModel::init(mha, 0);
    let acc0 =
        avn_core::navigator::teacher_forced_accuracy(&base, &corpus, &worlds, &vocab).unwrap();
    let tcfg = avn_core::navigator::NavTrainConfig {
        iterations: 300,
        ..Default::default()
    };
    let trained =
        avn_core::navigator::train_navigator(&corpus, &worlds, &vocab, mha, &tcfg).unwrap();
    let acc1 =
        avn_core::navigator::teacher_forced_accuracy(&trained, &corpus, &worlds, &vocab).unwrap();
    assert!(
        acc1 > acc0 + 0.2 && acc1 > 0.6,
        "accuracy {acc0:.3} -> {acc1:.3}"
    );
    // Empty corpus is rejected.
    assert!(avn_core::navigator::train_navigator(&[], &worlds, &vocab, mha, &tcfg).is_err());
}
