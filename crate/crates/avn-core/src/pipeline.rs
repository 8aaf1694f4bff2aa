//! End-to-end orchestration: dataset build, navigator imitation,
//! relevance pre-training, gate training/calibration, and gated
//! evaluation. Shared by the CLI and the experiment tests.

use crate::baselines::{
    cp_calibrate, train_base_gate, train_vdn_gate, BaselineTrainConfig, CpCalibration, CpGate,
    LinearGate,
};
use crate::config::Config;
use crate::data::{all_orig, build_dataset, mixed, DataConfig, Dataset};
use crate::error::{AvnError, Result};
use crate::eval::{run_experiment, RunReport};
use crate::iv::{collect_iv_dataset, train_iv, IVModel, IvGate, IvSample, LabelScheme, Pooling};
use crate::iv::IvTrainConfig;
use crate::navigator::{
    train_navigator, AlwaysAsk, NavTrainConfig, NavigatorModel, NeverAsk, Trajectory,
    UncertaintyGate,
};
use crate::nn::MHAConfig;
use crate::pretrain::{
    collect_pretrain_dataset, train_pretrain, transfer_mha, PretrainConfig, PretrainModel,
    PretrainReport,
};

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub num_heads: usize,
    pub nav: NavTrainConfig,
    pub pretrain: PretrainConfig,
    pub pretrain_hidden: usize,
    pub pretrain_holdout: f64,
    pub iv: IvTrainConfig,
    pub baseline: BaselineTrainConfig,
    pub cp_tolerance: f64,
    pub max_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataConfig::default(),
            num_heads: 2,
            nav: NavTrainConfig::default(),
            pretrain: PretrainConfig::default(),
            pretrain_hidden: 16,
            pretrain_holdout: 0.2,
            iv: IvTrainConfig::default(),
            baseline: BaselineTrainConfig::default(),
            cp_tolerance: 0.9,
            max_steps: crate::eval::DEFAULT_MAX_STEPS,
        }
    }
}

impl PipelineConfig {
    /// Maps the flat key-value run config onto the typed pipeline
    /// config, propagating the master seed into every stage.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let seed = cfg.get_u64("seed")?;
        let embed_dim = cfg.get_usize("embed_dim")?;
        let mut pc = PipelineConfig::default();
        pc.data.embed_dim = embed_dim;
        pc.data.world.feature_dim = embed_dim;
        pc.data.seed = seed;
        pc.data.train_worlds = cfg.get_usize("train_worlds")?;
        pc.data.unseen_worlds = cfg.get_usize("unseen_worlds")?;
        pc.data.nav_episodes_per_world = cfg.get_usize("nav_episodes_per_world")?;
        pc.data.gate_episodes_per_world = cfg.get_usize("gate_episodes_per_world")?;
        pc.data.test_episodes = cfg.get_usize("test_episodes")?;
        pc.num_heads = cfg.get_usize("num_heads")?;
        pc.nav.iterations = cfg.get_usize("nav_iterations")?;
        pc.nav.lr = cfg.get_f64("nav_lr")?;
        pc.nav.seed = seed;
        pc.pretrain.iterations = cfg.get_usize("pretrain_iterations")?;
        pc.pretrain.lr = cfg.get_f64("pretrain_lr")?;
        pc.pretrain.seed = seed;
        pc.pretrain_hidden = cfg.get_usize("pretrain_hidden")?;
        pc.pretrain_holdout = cfg.get_f64("pretrain_holdout")?;
        pc.iv.iterations = cfg.get_usize("iv_iterations")?;
        pc.iv.lr = cfg.get_f64("iv_lr")?;
        pc.iv.seed = seed;
        pc.baseline.iterations = cfg.get_usize("baseline_iterations")?;
        pc.baseline.lr = cfg.get_f64("baseline_lr")?;
        pc.baseline.entropy_epsilon = cfg.get_f64("entropy_epsilon")?;
        pc.baseline.seed = seed;
        pc.cp_tolerance = cfg.get_f64("cp_tolerance")?;
        pc.max_steps = cfg.get_usize("max_steps")?;
        Ok(pc)
    }

    pub fn mha(&self) -> Result<MHAConfig> {
        MHAConfig::new(self.num_heads, self.data.embed_dim)
    }
}

/// Every trained artifact of one pipeline run.
pub struct Artifacts {
    pub cfg: PipelineConfig,
    pub dataset: Dataset,
    pub navigator: NavigatorModel,
    pub iv_samples: Vec<IvSample>,
    pub iv_gp: IVModel,
    pub iv_gp_pre: IVModel,
    pub iv_ip: IVModel,
    pub pretrained: PretrainModel,
    pub pretrain_report: PretrainReport,
    pub base: LinearGate,
    pub vdn: LinearGate,
    pub cp: CpCalibration,
}

pub const GATE_NAMES: &[&str] = &[
    "iv-gp",
    "iv-gp+pretrain",
    "iv-ip",
    "base",
    "vdn",
    "cp",
    "never",
    "always",
];

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Artifacts> {
    let mha = cfg.mha()?;
    let dataset = build_dataset(&cfg.data)?;
    let navigator = train_navigator(
        &dataset.nav_train,
        &dataset.worlds,
        &dataset.vocab,
        mha,
        &cfg.nav,
    )?;

    let gate_mix = mixed(&dataset.gate_train);
    let iv_samples = collect_iv_dataset(&navigator, &dataset.worlds, &dataset.vocab, &gate_mix)?;

    let iv_init = IVModel::init(mha, Pooling::Mean, cfg.iv.seed);
    let (iv_gp, _) = train_iv(iv_init.clone(), &iv_samples, LabelScheme::Gp, &cfg.iv)?;
    let (iv_ip, _) = train_iv(iv_init, &iv_samples, LabelScheme::Ip, &cfg.iv)?;

    let pre_corpus = all_orig(&dataset.gate_train);
    let (pre_train, _pre_val) = crate::data::split_holdout(&pre_corpus, cfg.pretrain_holdout);
    let pre_samples =
        collect_pretrain_dataset(&navigator, &dataset.worlds, &dataset.vocab, &pre_train)?;
    let pre_init = PretrainModel::init(mha, cfg.pretrain_hidden, cfg.pretrain.seed);
    let (pretrained, pretrain_report) = train_pretrain(pre_init, &pre_samples, &cfg.pretrain)?;
    let iv_pre_init = transfer_mha(&pretrained, Pooling::Mean, cfg.iv.seed)?;
    let (iv_gp_pre, _) = train_iv(iv_pre_init, &iv_samples, LabelScheme::Gp, &cfg.iv)?;

    let base = train_base_gate(&iv_samples, &cfg.baseline)?;
    let vdn = train_vdn_gate(&iv_samples, &cfg.baseline)?;
    let calib: Vec<(f64, bool)> = iv_samples
        .iter()
        .map(|s| {
            let top = s.beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (top, s.label_gp == 0)
        })
        .collect();
    let cp = cp_calibrate(&calib, cfg.cp_tolerance)?;

    Ok(Artifacts {
        cfg: cfg.clone(),
        dataset,
        navigator,
        iv_samples,
        iv_gp,
        iv_gp_pre,
        iv_ip,
        pretrained,
        pretrain_report,
        base,
        vdn,
        cp,
    })
}

impl Artifacts {
    pub fn gate(&self, name: &str) -> Result<Box<dyn UncertaintyGate + '_>> {
        Ok(match name {
            "iv-gp" => Box::new(IvGate {
                model: self.iv_gp.clone(),
                name: "iv-gp",
            }),
            "iv-gp+pretrain" => Box::new(IvGate {
                model: self.iv_gp_pre.clone(),
                name: "iv-gp+pretrain",
            }),
            "iv-ip" => Box::new(IvGate {
                model: self.iv_ip.clone(),
                name: "iv-ip",
            }),
            "base" => Box::new(self.base.clone()),
            "vdn" => Box::new(self.vdn.clone()),
            "cp" => Box::new(CpGate {
                calibration: self.cp,
            }),
            "never" => Box::new(NeverAsk),
            "always" => Box::new(AlwaysAsk),
            other => {
                return Err(AvnError::Config(format!(
                    "unknown gate `{other}` (expected one of {GATE_NAMES:?})"
                )))
            }
        })
    }

    /// Evaluates one gate on the 50/50 test mix.
    pub fn evaluate(&self, gate_name: &str) -> Result<(RunReport, Vec<Trajectory>)> {
        let gate = self.gate(gate_name)?;
        let episodes = mixed(&self.dataset.test);
        run_experiment(
            &self.navigator,
            &self.dataset,
            &episodes,
            gate.as_ref(),
            self.cfg.data.seed,
            self.max_steps(),
        )
    }

    /// Evaluates one gate on a chosen episode list.
    pub fn evaluate_on(
        &self,
        gate_name: &str,
        episodes: &[crate::lang::Episode],
    ) -> Result<(RunReport, Vec<Trajectory>)> {
        let gate = self.gate(gate_name)?;
        run_experiment(
            &self.navigator,
            &self.dataset,
            episodes,
            gate.as_ref(),
            self.cfg.data.seed,
            self.max_steps(),
        )
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }
}
