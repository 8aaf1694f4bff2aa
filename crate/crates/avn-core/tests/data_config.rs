//! Benchmark assembly and run configuration: split shapes, pairing
//! guarantees, determinism, serialization, and config file parsing.

use avn_core::config::Config;
use avn_core::data::{
    all_orig, all_short, build_dataset, build_worlds, mixed, split_holdout, DataConfig, Dataset,
    WorldSet, DATASET_SCHEMA_VERSION,
};
use avn_core::lang::Style;

fn tiny_cfg(seed: u64) -> DataConfig {
    DataConfig {
        train_worlds: 3,
        unseen_worlds: 2,
        nav_episodes_per_world: 4,
        gate_episodes_per_world: 3,
        test_episodes: 6,
        seed,
        ..Default::default()
    }
}

#[test]
fn dataset_has_expected_shapes_and_split_discipline() {
    let cfg = tiny_cfg(0);
    let ds = build_dataset(&cfg).unwrap();
    assert_eq!(ds.worlds.len(), 5);
    assert_eq!(ds.n_train_worlds, 3);
    assert_eq!(ds.nav_train.len(), 12);
    assert_eq!(ds.gate_train.len(), 9);
    assert_eq!(ds.test.len(), 6);
    // Imitation corpus is fine-grained only, on training worlds only.
    for ep in &ds.nav_train {
        assert_eq!(ep.style, Style::Orig);
        assert!(ep.world_idx < 3);
    }
    for p in &ds.gate_train {
        assert!(p.orig.world_idx < 3);
    }
    // Test episodes live exclusively on unseen worlds.
    for p in &ds.test {
        assert!(p.orig.world_idx >= 3, "test episode on training world");
    }
}

#[test]
fn pairs_share_world_path_and_differ_in_granularity() {
    let ds = build_dataset(&tiny_cfg(1)).unwrap();
    for p in ds.gate_train.iter().chain(ds.test.iter()) {
        assert_eq!(p.orig.style, Style::Orig);
        assert_eq!(p.short.style, Style::Short);
        assert_eq!(p.orig.world_idx, p.short.world_idx);
        assert_eq!(p.orig.gp, p.short.gp);
        assert!(p.short.i_short.len() < p.orig.i_orig.len());
        assert!(!p.short.dropped.is_empty());
    }
}

#[test]
fn dataset_generation_is_deterministic_and_seed_sensitive() {
    let a = build_dataset(&tiny_cfg(7)).unwrap();
    let b = build_dataset(&tiny_cfg(7)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let c = build_dataset(&tiny_cfg(8)).unwrap();
    assert_ne!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&c).unwrap()
    );
}

#[test]
fn two_stage_build_equals_one_shot_build() {
    let cfg = tiny_cfg(3);
    let ws = build_worlds(&cfg).unwrap();
    let staged = avn_core::data::build_episodes(&ws).unwrap();
    let direct = build_dataset(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&staged).unwrap(),
        serde_json::to_string(&direct).unwrap()
    );
}

#[test]
fn mixed_alternates_styles_with_equal_counts() {
    let ds = build_dataset(&tiny_cfg(2)).unwrap();
    let mix = mixed(&ds.test);
    assert_eq!(mix.len(), ds.test.len());
    for (i, ep) in mix.iter().enumerate() {
        let want = if i % 2 == 0 { Style::Orig } else { Style::Short };
        assert_eq!(ep.style, want);
    }
    assert!(all_orig(&ds.test).iter().all(|e| e.style == Style::Orig));
    assert!(all_short(&ds.test).iter().all(|e| e.style == Style::Short));
}

#[test]
fn split_holdout_cases() {
    let ds = build_dataset(&tiny_cfg(4)).unwrap();
    let eps = ds.nav_train;
    let (tr, ho) = split_holdout(&eps, 0.25);
    assert_eq!(tr.len() + ho.len(), eps.len());
    assert_eq!(ho.len(), 3); // 12 * 0.25
    // Order-preserving: concatenation reproduces the corpus.
    let rejoined: Vec<_> = tr.iter().chain(ho.iter()).cloned().collect();
    assert_eq!(rejoined, eps);
    // Degenerate holdouts never empty the training side.
    let (tr, _) = split_holdout(&eps, 1.0);
    assert_eq!(tr.len(), 1);
    let (tr, ho) = split_holdout(&eps, 0.0);
    assert_eq!(tr.len(), eps.len());
    assert!(ho.is_empty());
}

#[test]
fn dataset_and_worldset_roundtrip_and_reject_bad_schema() {
    let dir = std::env::temp_dir().join(format!("avn-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = tiny_cfg(5);
    let ws = build_worlds(&cfg).unwrap();
    let wpath = dir.join("worlds.json");
    ws.save(&wpath).unwrap();
    let ws2 = WorldSet::load(&wpath).unwrap();
    assert_eq!(
        serde_json::to_string(&ws.worlds).unwrap(),
        serde_json::to_string(&ws2.worlds).unwrap()
    );

    let ds = build_dataset(&cfg).unwrap();
    let dpath = dir.join("dataset.json");
    ds.save(&dpath).unwrap();
    let ds2 = Dataset::load(&dpath).unwrap();
    assert_eq!(
        serde_json::to_string(&ds).unwrap(),
        serde_json::to_string(&ds2).unwrap()
    );

    // Tampered schema version is refused.
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dpath).unwrap()).unwrap();
    v["schema_version"] = serde_json::json!(DATASET_SCHEMA_VERSION + 1);
    std::fs::write(&dpath, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(Dataset::load(&dpath).is_err());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mismatched_feature_and_embed_dims_are_rejected() {
    let mut cfg = tiny_cfg(0);
    cfg.world.feature_dim = cfg.embed_dim + 1;
    assert!(build_dataset(&cfg).is_err());
}

#[test]
fn config_defaults_cover_every_known_key() {
    let cfg = Config::defaults();
    for (key, default, _) in avn_core::config::KNOWN_KEYS {
        assert_eq!(cfg.get(key).unwrap(), *default);
    }
    assert_eq!(cfg.get_u64("seed").unwrap(), 0);
    assert_eq!(cfg.get_f64("cp_tolerance").unwrap(), 0.9);
    assert_eq!(cfg.get_usize("max_steps").unwrap(), 15);
}

#[test]
fn config_file_parsing_overrides_and_rejections() {
    let dir = std::env::temp_dir().join(format!("avn-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "# a comment\nseed = 42\nmax_steps=9 # trailing comment\n\n  cp_tolerance =0.8\n",
    )
    .unwrap();
    let cfg = Config::from_file(&path).unwrap();
    assert_eq!(cfg.get_u64("seed").unwrap(), 42);
    assert_eq!(cfg.get_usize("max_steps").unwrap(), 9);
    assert_eq!(cfg.get_f64("cp_tolerance").unwrap(), 0.8);
    // Untouched keys keep defaults.
    assert_eq!(cfg.get("embed_dim").unwrap(), "16");

    // Unknown key and malformed line are configuration errors.
    std::fs::write(&path, "sead = 42\n").unwrap();
    assert!(Config::from_file(&path).is_err());
    std::fs::write(&path, "just words\n").unwrap();
    assert!(Config::from_file(&path).is_err());
    // Type errors surface on access.
    let mut cfg = Config::defaults();
    cfg.set("seed", "banana").unwrap();
    assert!(cfg.get_u64("seed").is_err());
    assert!(cfg.set("nope", "1").is_err());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_render_roundtrips_through_parser() {
    let mut cfg = Config::defaults();
    cfg.set("seed", "123").unwrap();
    cfg.set("out_dir", "elsewhere").unwrap();
    let dir = std::env::temp_dir().join(format!("avn-cfgr-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("echo.cfg");
    std::fs::write(&path, cfg.render()).unwrap();
    let back = Config::from_file(&path).unwrap();
    assert_eq!(back, cfg);
    std::fs::remove_dir_all(&dir).ok();
}
