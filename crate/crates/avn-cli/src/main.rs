//! `avn`: staged pipeline driver. Every subcommand reads the shared
//! key-value config (flags override file values) and exchanges
//! artifacts through JSON files in the output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avn_core::baselines::{cp_calibrate, train_base_gate, train_vdn_gate, CpCalibration, LinearGate};
use avn_core::config::Config;
use avn_core::data::{all_orig, build_episodes, build_worlds, mixed, split_holdout, Dataset, WorldSet};
use avn_core::eval::{emit_report, load_trajectories, report_from_trajectories, run_experiment, RunReport};
use avn_core::iv::{collect_iv_dataset, train_iv, IVModel, IvGate, IvSample, LabelScheme, Pooling};
use avn_core::navigator::{train_navigator, AlwaysAsk, NavigatorModel, NeverAsk, UncertaintyGate};
use avn_core::nn::ParamStore;
use avn_core::pipeline::{PipelineConfig, GATE_NAMES};
use avn_core::pretrain::{
    collect_pretrain_dataset, train_pretrain, transfer_mha, validation_f1, PretrainModel,
};
use avn_core::{AvnError, Result};

#[derive(Parser)]
#[command(name = "avn", version, about = "Ask-for-help navigation pipeline on synthetic worlds")]
struct Cli {
    /// Key-value config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable): --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Master seed (overrides config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Artifact directory (overrides config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the seeded world batch (worlds.json).
    GenWorld,
    /// Generate episode corpora over the worlds (dataset.json).
    GenData,
    /// Train the navigator by teacher-forced imitation (nav.ckpt.json).
    TrainNav,
    /// Train the relevance-span alignment model (pretrain.ckpt.json).
    Pretrain,
    /// Train the direct and entropy-label linear baselines.
    TrainBaseline,
    /// Calibrate the conformal threshold (cp.json).
    CalibrateCp,
    /// Train the IV classifiers (GP, IP, and GP on pretrained MHA when
    /// a pretrain checkpoint exists).
    TrainIv,
    /// Evaluate one gate on the test mix and emit its report.
    Eval {
        #[arg(long)]
        gate: String,
    },
    /// Recompute a report directory's aggregates from its
    /// trajectories.jsonl.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration/artifact problems, 3 for numeric/training
/// failures.
fn exit_code(e: &AvnError) -> u8 {
    match e {
        AvnError::Config(_)
        | AvnError::Io { .. }
        | AvnError::Serde(_)
        | AvnError::Checkpoint(_) => 2,
        _ => 3,
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::defaults(),
    };
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| AvnError::Config(format!("--set `{kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.set("out_dir", &dir.display().to_string())?;
    }
    Ok(cfg)
}

struct Paths {
    out: PathBuf,
}

impl Paths {
    fn new(cfg: &Config) -> Result<Self> {
        Ok(Paths {
            out: cfg.get_path("out_dir")?,
        })
    }
    fn worlds(&self) -> PathBuf {
        self.out.join("worlds.json")
    }
    fn dataset(&self) -> PathBuf {
        self.out.join("dataset.json")
    }
    fn nav(&self) -> PathBuf {
        self.out.join("nav.ckpt.json")
    }
    fn pretrain(&self) -> PathBuf {
        self.out.join("pretrain.ckpt.json")
    }
    fn iv(&self, name: &str) -> PathBuf {
        self.out.join(format!("{name}.ckpt.json"))
    }
    fn cp(&self) -> PathBuf {
        self.out.join("cp.json")
    }
    fn eval_dir(&self, gate: &str) -> PathBuf {
        self.out.join("eval").join(gate)
    }
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(AvnError::Config(format!(
            "missing artifact {} (run `avn {produced_by}` first)",
            path.display()
        )))
    }
}

fn load_dataset(paths: &Paths) -> Result<Dataset> {
    require(&paths.dataset(), "gen-data")?;
    Dataset::load(&paths.dataset())
}

fn load_navigator(paths: &Paths, pc: &PipelineConfig) -> Result<NavigatorModel> {
    require(&paths.nav(), "train-nav")?;
    Ok(NavigatorModel {
        params: ParamStore::load(&paths.nav())?,
        cfg: pc.mha()?,
    })
}

fn collect_samples(
    paths: &Paths,
    pc: &PipelineConfig,
) -> Result<(Dataset, NavigatorModel, Vec<IvSample>)> {
    let ds = load_dataset(paths)?;
    let nav = load_navigator(paths, pc)?;
    let gate_mix = mixed(&ds.gate_train);
    let samples = collect_iv_dataset(&nav, &ds.worlds, &ds.vocab, &gate_mix)?;
    Ok((ds, nav, samples))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let pc = PipelineConfig::from_config(&cfg)?;
    let paths = Paths::new(&cfg)?;
    std::fs::create_dir_all(&paths.out)
        .map_err(|e| AvnError::io(paths.out.display().to_string(), e))?;

    match &cli.cmd {
        Cmd::GenWorld => {
            let ws = build_worlds(&pc.data)?;
            ws.save(&paths.worlds())?;
            println!("wrote {} ({} worlds)", paths.worlds().display(), ws.worlds.len());
        }
        Cmd::GenData => {
            require(&paths.worlds(), "gen-world")?;
            let ws = WorldSet::load(&paths.worlds())?;
            let ds = build_episodes(&ws)?;
            ds.save(&paths.dataset())?;
            println!(
                "wrote {} ({} nav, {} gate pairs, {} test pairs)",
                paths.dataset().display(),
                ds.nav_train.len(),
                ds.gate_train.len(),
                ds.test.len()
            );
        }
        Cmd::TrainNav => {
            let ds = load_dataset(&paths)?;
            let nav = train_navigator(&ds.nav_train, &ds.worlds, &ds.vocab, pc.mha()?, &pc.nav)?;
            nav.params.save(&paths.nav())?;
            println!("wrote {}", paths.nav().display());
        }
        Cmd::Pretrain => {
            let ds = load_dataset(&paths)?;
            let nav = load_navigator(&paths, &pc)?;
            let corpus = all_orig(&ds.gate_train);
            let (train, val) = split_holdout(&corpus, pc.pretrain_holdout);
            let samples = collect_pretrain_dataset(&nav, &ds.worlds, &ds.vocab, &train)?;
            let init = PretrainModel::init(pc.mha()?, pc.pretrain_hidden, pc.pretrain.seed);
            let (model, report) = train_pretrain(init, &samples, &pc.pretrain)?;
            let val_samples = collect_pretrain_dataset(&nav, &ds.worlds, &ds.vocab, &val)?;
            let f1 = validation_f1(&model, &val_samples, 0.5)?;
            model.params.save(&paths.pretrain())?;
            println!(
                "wrote {} (loss {:.4} -> {:.4}, val token F1 {:.3})",
                paths.pretrain().display(),
                report.initial_loss,
                report.final_loss,
                f1
            );
        }
        Cmd::TrainBaseline => {
            let (_, _, samples) = collect_samples(&paths, &pc)?;
            let base = train_base_gate(&samples, &pc.baseline)?;
            base.save(&paths.iv("base"))?;
            let vdn = train_vdn_gate(&samples, &pc.baseline)?;
            vdn.save(&paths.iv("vdn"))?;
            println!("wrote {} and {}", paths.iv("base").display(), paths.iv("vdn").display());
        }
        Cmd::CalibrateCp => {
            let (_, _, samples) = collect_samples(&paths, &pc)?;
            let calib: Vec<(f64, bool)> = samples
                .iter()
                .map(|s| {
                    let top = s.beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    (top, s.label_gp == 0)
                })
                .collect();
            let cal = cp_calibrate(&calib, pc.cp_tolerance)?;
            cal.save(&paths.cp())?;
            println!(
                "wrote {} (threshold {:.4} from {} scores)",
                paths.cp().display(),
                cal.threshold,
                cal.n_calibration
            );
        }
        Cmd::TrainIv => {
            let (_, _, samples) = collect_samples(&paths, &pc)?;
            let mha = pc.mha()?;
            let init = IVModel::init(mha, Pooling::Mean, pc.iv.seed);
            let (gp, r) = train_iv(init.clone(), &samples, LabelScheme::Gp, &pc.iv)?;
            gp.params.save(&paths.iv("iv-gp"))?;
            println!("wrote {} (loss {:.4} -> {:.4})", paths.iv("iv-gp").display(), r.initial_loss, r.final_loss);
            let (ip, r) = train_iv(init, &samples, LabelScheme::Ip, &pc.iv)?;
            ip.params.save(&paths.iv("iv-ip"))?;
            println!("wrote {} (loss {:.4} -> {:.4})", paths.iv("iv-ip").display(), r.initial_loss, r.final_loss);
            if paths.pretrain().exists() {
                let pre = PretrainModel {
                    params: ParamStore::load(&paths.pretrain())?,
                    cfg: mha,
                    hidden_dim: pc.pretrain_hidden,
                };
                let init = transfer_mha(&pre, Pooling::Mean, pc.iv.seed)?;
                let (gp_pre, r) = train_iv(init, &samples, LabelScheme::Gp, &pc.iv)?;
                gp_pre.params.save(&paths.iv("iv-gp+pretrain"))?;
                println!(
                    "wrote {} (loss {:.4} -> {:.4})",
                    paths.iv("iv-gp+pretrain").display(),
                    r.initial_loss,
                    r.final_loss
                );
            } else {
                println!("no pretrain checkpoint; skipping iv-gp+pretrain");
            }
        }
        Cmd::Eval { gate } => {
            let ds = load_dataset(&paths)?;
            let nav = load_navigator(&paths, &pc)?;
            let gate_box = load_gate(&paths, &pc, gate)?;
            let episodes = mixed(&ds.test);
            let (report, trajectories) = run_experiment(
                &nav,
                &ds,
                &episodes,
                gate_box.as_ref(),
                pc.data.seed,
                pc.max_steps,
            )?;
            let dir = paths.eval_dir(gate);
            emit_report(&report, &trajectories, &dir)?;
            println!(
                "{}: SPL {:.2}% NE {:.3} m P {:.2}% R {:.2}% balance {:.4} -> {}",
                report.method,
                report.spl_pct,
                report.ne_m,
                report.precision_pct,
                report.recall_pct,
                report.balance,
                dir.display()
            );
        }
        Cmd::Report { dir } => {
            let report_path = dir.join("report.json");
            require(&report_path, "eval")?;
            let prev: RunReport = serde_json::from_str(
                &std::fs::read_to_string(&report_path)
                    .map_err(|e| AvnError::io(report_path.display().to_string(), e))?,
            )?;
            let trajectories = load_trajectories(&dir.join("trajectories.jsonl"))?;
            let report = report_from_trajectories(&prev.method, prev.seed, &trajectories)?;
            emit_report(&report, &trajectories, dir)?;
            println!(
                "recomputed {} from {} trajectories",
                report_path.display(),
                trajectories.len()
            );
        }
    }
    Ok(())
}

fn load_gate(paths: &Paths, pc: &PipelineConfig, name: &str) -> Result<Box<dyn UncertaintyGate>> {
    let mha = pc.mha()?;
    let iv = |ckpt: &str, static_name: &'static str| -> Result<Box<dyn UncertaintyGate>> {
        let p = paths.iv(ckpt);
        require(&p, "train-iv")?;
        Ok(Box::new(IvGate {
            model: IVModel {
                params: ParamStore::load(&p)?,
                cfg: mha,
                pooling: Pooling::Mean,
            },
            name: static_name,
        }))
    };
    match name {
        "iv-gp" => iv("iv-gp", "iv-gp"),
        "iv-gp+pretrain" => iv("iv-gp+pretrain", "iv-gp+pretrain"),
        "iv-ip" => iv("iv-ip", "iv-ip"),
        "base" => {
            require(&paths.iv("base"), "train-baseline")?;
            Ok(Box::new(LinearGate::load(&paths.iv("base"), "base")?))
        }
        "vdn" => {
            require(&paths.iv("vdn"), "train-baseline")?;
            Ok(Box::new(LinearGate::load(&paths.iv("vdn"), "vdn")?))
        }
        "cp" => {
            require(&paths.cp(), "calibrate-cp")?;
            Ok(Box::new(avn_core::baselines::CpGate {
                calibration: CpCalibration::load(&paths.cp())?,
            }))
        }
        "never" => Ok(Box::new(NeverAsk)),
        "always" => Ok(Box::new(AlwaysAsk)),
        other => Err(AvnError::Config(format!(
            "unknown gate `{other}` (expected one of {GATE_NAMES:?})"
        ))),
    }
}
