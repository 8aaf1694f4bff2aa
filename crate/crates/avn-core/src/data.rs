//! Benchmark assembly: seeded world batches, episode corpora with
//! paired fine/coarse instructions, and the train / gate-train / test
//! splits used throughout the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::lang::{
    annotate_world, generate_episode, make_short, AnnotatedWorld, DropPolicy, Episode, LangConfig,
    Vocab,
};
use crate::world::{generate_world, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub world: WorldConfig,
    pub lang: LangConfig,
    pub embed_dim: usize,
    pub train_worlds: usize,
    pub unseen_worlds: usize,
    /// Fine-grained episodes per training world for navigator imitation.
    pub nav_episodes_per_world: usize,
    /// Episode pairs per training world for gate training/calibration.
    pub gate_episodes_per_world: usize,
    /// Episode pairs on unseen worlds for the test benchmark.
    pub test_episodes: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let embed_dim = 16;
        DataConfig {
            world: WorldConfig {
                feature_dim: embed_dim,
                ..Default::default()
            },
            lang: LangConfig::default(),
            embed_dim,
            train_worlds: 30,
            unseen_worlds: 4,
            nav_episodes_per_world: 30,
            gate_episodes_per_world: 6,
            test_episodes: 100,
            seed: 0,
        }
    }
}

/// A fine-grained episode together with its coarsened twin (same
/// world, path, and alignment; fewer sub-instructions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodePair {
    pub orig: Episode,
    pub short: Episode,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    pub cfg: DataConfig,
    pub vocab: Vocab,
    /// Training worlds first, then unseen worlds.
    pub worlds: Vec<AnnotatedWorld>,
    pub n_train_worlds: usize,
    /// Fine-grained imitation corpus on training worlds.
    pub nav_train: Vec<Episode>,
    /// Paired corpus on training worlds for gate training and
    /// conformal calibration.
    pub gate_train: Vec<EpisodePair>,
    /// Paired benchmark on unseen worlds.
    pub test: Vec<EpisodePair>,
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

fn drop_policy_for(index: usize) -> DropPolicy {
    match index % 3 {
        0 => DropPolicy::Tail,
        1 => DropPolicy::RandomK(2),
        _ => DropPolicy::Salient,
    }
}

/// Generates an episode whose coarsened twin exists, retrying the
/// episode seed when the path is too short to coarsen.
fn generate_pair(
    world_idx: usize,
    aw: &AnnotatedWorld,
    vocab: &Vocab,
    lang: &LangConfig,
    base_seed: u64,
    policy: DropPolicy,
) -> Result<EpisodePair> {
    for attempt in 0..64u64 {
        let seed = base_seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let orig = generate_episode(world_idx, aw, vocab, lang, seed)?;
        match make_short(&orig, policy, seed) {
            Ok(short) => return Ok(EpisodePair { orig, short }),
            Err(AvnError::CannotCoarsen(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(AvnError::Generation(
        "no coarsenable episode found in 64 attempts".into(),
    ))
}

/// Worlds plus vocabulary, the output of the world-generation stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldSet {
    pub schema_version: u32,
    pub cfg: DataConfig,
    pub vocab: Vocab,
    /// Training worlds first, then unseen worlds.
    pub worlds: Vec<AnnotatedWorld>,
}

pub fn build_worlds(cfg: &DataConfig) -> Result<WorldSet> {
    if cfg.world.feature_dim != cfg.embed_dim {
        return Err(AvnError::Config(format!(
            "world feature_dim {} must equal embed_dim {}",
            cfg.world.feature_dim, cfg.embed_dim
        )));
    }
    let vocab = Vocab::new(cfg.embed_dim, cfg.seed);
    let mut worlds = Vec::with_capacity(cfg.train_worlds + cfg.unseen_worlds);
    for w in 0..cfg.train_worlds + cfg.unseen_worlds {
        let wseed = cfg.seed ^ (0x0057_0000 + w as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
        let world = generate_world(wseed, &cfg.world)?;
        worlds.push(annotate_world(world, &vocab, &cfg.lang, wseed));
    }
    Ok(WorldSet {
        schema_version: DATASET_SCHEMA_VERSION,
        cfg: cfg.clone(),
        vocab,
        worlds,
    })
}

pub fn build_episodes(ws: &WorldSet) -> Result<Dataset> {
    let cfg = &ws.cfg;
    let (vocab, worlds) = (&ws.vocab, &ws.worlds);
    let mut nav_train = Vec::new();
    for w in 0..cfg.train_worlds {
        for e in 0..cfg.nav_episodes_per_world {
            let eseed = cfg.seed ^ (0x11a0_0000 + (w * 1000 + e) as u64) << 8;
            nav_train.push(generate_episode(w, &worlds[w], vocab, &cfg.lang, eseed)?);
        }
    }

    let mut gate_train = Vec::new();
    for w in 0..cfg.train_worlds {
        for e in 0..cfg.gate_episodes_per_world {
            let idx = w * cfg.gate_episodes_per_world + e;
            let eseed = cfg.seed ^ (0x6a7e_0000 + (w * 1000 + e) as u64) << 8;
            gate_train.push(generate_pair(
                w,
                &worlds[w],
                vocab,
                &cfg.lang,
                eseed,
                drop_policy_for(idx),
            )?);
        }
    }

    let mut test = Vec::new();
    for e in 0..cfg.test_episodes {
        let w = cfg.train_worlds + e % cfg.unseen_worlds;
        let eseed = cfg.seed ^ (0x7e57_0000 + e as u64) << 8;
        test.push(generate_pair(
            w,
            &worlds[w],
            vocab,
            &cfg.lang,
            eseed,
            drop_policy_for(e),
        )?);
    }

    Ok(Dataset {
        schema_version: DATASET_SCHEMA_VERSION,
        cfg: cfg.clone(),
        vocab: vocab.clone(),
        worlds: worlds.clone(),
        n_train_worlds: cfg.train_worlds,
        nav_train,
        gate_train,
        test,
    })
}

pub fn build_dataset(cfg: &DataConfig) -> Result<Dataset> {
    build_episodes(&build_worlds(cfg)?)
}

/// Alternating-parity 50/50 fine/coarse mix of a paired corpus.
pub fn mixed(pairs: &[EpisodePair]) -> Vec<Episode> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 2 == 0 {
                p.orig.clone()
            } else {
                p.short.clone()
            }
        })
        .collect()
}

pub fn all_orig(pairs: &[EpisodePair]) -> Vec<Episode> {
    pairs.iter().map(|p| p.orig.clone()).collect()
}

pub fn all_short(pairs: &[EpisodePair]) -> Vec<Episode> {
    pairs.iter().map(|p| p.short.clone()).collect()
}

/// Leading `1 - holdout` fraction and trailing `holdout` fraction;
/// the split point is deterministic in corpus order.
pub fn split_holdout(episodes: &[Episode], holdout: f64) -> (Vec<Episode>, Vec<Episode>) {
    let n = episodes.len();
    let cut = ((n as f64) * (1.0 - holdout)).round() as usize;
    let cut = cut.clamp(usize::from(n > 1), n);
    (episodes[..cut].to_vec(), episodes[cut..].to_vec())
}

impl WorldSet {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| AvnError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        let ws: WorldSet = serde_json::from_str(&raw)?;
        if ws.schema_version != DATASET_SCHEMA_VERSION {
            return Err(AvnError::Checkpoint(format!(
                "world set schema {} unsupported (expected {DATASET_SCHEMA_VERSION})",
                ws.schema_version
            )));
        }
        Ok(ws)
    }
}

impl Dataset {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| AvnError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        let ds: Dataset = serde_json::from_str(&raw)?;
        if ds.schema_version != DATASET_SCHEMA_VERSION {
            return Err(AvnError::Checkpoint(format!(
                "dataset schema {} unsupported (expected {DATASET_SCHEMA_VERSION})",
                ds.schema_version
            )));
        }
        Ok(ds)
    }
}
