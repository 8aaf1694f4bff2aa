//! Dev harness: caches the expensive pipeline stages (dataset,
//! navigator, pre-training) per seed and retrains only the gates, so
//! gate hyperparameters can be iterated in seconds.

use std::path::PathBuf;

use avn_core::baselines::{cp_calibrate, train_vdn_gate, BaselineTrainConfig};
use avn_core::data::{build_dataset, mixed, Dataset};
use avn_core::eval::run_experiment;
use avn_core::iv::{collect_iv_dataset, train_iv, IVModel, IvGate, IvTrainConfig, LabelScheme, Pooling};
use avn_core::navigator::{train_navigator, NavigatorModel};
use avn_core::nn::{MHAConfig, ParamStore};
use avn_core::pipeline::PipelineConfig;
use avn_core::pretrain::{collect_pretrain_dataset, train_pretrain, transfer_mha, PretrainModel};

fn main() -> avn_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);

    let mut cfg = PipelineConfig::default();
    cfg.data.seed = seed;
    cfg.nav.seed = seed;
    cfg.pretrain.seed = seed;
    cfg.iv.seed = seed;
    cfg.baseline.seed = seed;
    for (k, v) in std::env::vars() {
        match k.as_str() {
            "IV_ITERS" => cfg.iv.iterations = v.parse().unwrap(),
            "IV_IMB" => cfg.iv.imbalance_threshold = v.parse().unwrap(),
            "IV_LR" => cfg.iv.lr = v.parse().unwrap(),
            "IV_WD" => cfg.iv.weight_decay = v.parse().unwrap(),
            _ => {}
        }
    }
    let mha = cfg.mha()?;

    let cache = PathBuf::from(format!("/tmp/avn-tune-{seed}"));
    std::fs::create_dir_all(&cache).unwrap();
    let ds_path = cache.join("dataset.json");
    let nav_path = cache.join("nav.json");
    let pre_path = cache.join("pre.json");

    let t0 = std::time::Instant::now();
    let (dataset, navigator, pretrained) = if ds_path.exists() {
        let dataset = Dataset::load(&ds_path)?;
        let navigator = NavigatorModel {
            params: ParamStore::load(&nav_path)?,
            cfg: mha,
        };
        let pretrained = PretrainModel {
            params: ParamStore::load(&pre_path)?,
            cfg: mha,
            hidden_dim: cfg.pretrain_hidden,
        };
        println!("loaded cached stages in {:.1?}", t0.elapsed());
        (dataset, navigator, pretrained)
    } else {
        let dataset = build_dataset(&cfg.data)?;
        let navigator = train_navigator(
            &dataset.nav_train,
            &dataset.worlds,
            &dataset.vocab,
            mha,
            &cfg.nav,
        )?;
        let pre_corpus = avn_core::data::all_orig(&dataset.gate_train);
        let (pre_train, _) = avn_core::data::split_holdout(&pre_corpus, cfg.pretrain_holdout);
        let pre_samples =
            collect_pretrain_dataset(&navigator, &dataset.worlds, &dataset.vocab, &pre_train)?;
        let pre_init = PretrainModel::init(mha, cfg.pretrain_hidden, cfg.pretrain.seed);
        let (pretrained, _) = train_pretrain(pre_init, &pre_samples, &cfg.pretrain)?;
        dataset.save(&ds_path)?;
        navigator.params.save(&nav_path)?;
        pretrained.params.save(&pre_path)?;
        println!("trained + cached stages in {:.1?}", t0.elapsed());
        (dataset, navigator, pretrained)
    };

    let gate_mix = mixed(&dataset.gate_train);
    let iv_samples = collect_iv_dataset(&navigator, &dataset.worlds, &dataset.vocab, &gate_mix)?;
    let n = iv_samples.len();
    let gp1 = iv_samples.iter().filter(|s| s.label_gp != 0).count();
    println!("iv samples {n}: gp+ {gp1} ({:.1}%)", 100.0 * gp1 as f64 / n as f64);

    let t1 = std::time::Instant::now();
    let iv_init = IVModel::init(mha, Pooling::Mean, cfg.iv.seed);
    let (iv_gp, rep) = train_iv(iv_init, &iv_samples, LabelScheme::Gp, &cfg.iv)?;
    println!(
        "iv-gp: loss {:.4} -> {:.4} weighted {}",
        rep.initial_loss, rep.final_loss, rep.class_weighted
    );
    let iv_pre_init = transfer_mha(&pretrained, Pooling::Mean, cfg.iv.seed)?;
    let (iv_gp_pre, rep) = train_iv(iv_pre_init, &iv_samples, LabelScheme::Gp, &cfg.iv)?;
    println!(
        "iv-gp+pre: loss {:.4} -> {:.4} weighted {}",
        rep.initial_loss, rep.final_loss, rep.class_weighted
    );
    let bcfg = BaselineTrainConfig {
        seed,
        ..Default::default()
    };
    let vdn = train_vdn_gate(&iv_samples, &bcfg)?;
    let calib: Vec<(f64, bool)> = iv_samples
        .iter()
        .map(|s| {
            let top = s.beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (top, s.label_gp == 0)
        })
        .collect();
    let cp = cp_calibrate(&calib, cfg.cp_tolerance)?;
    let iv_ip_init = IVModel::init(mha, Pooling::Mean, cfg.iv.seed);
    let (iv_ip, _) = train_iv(iv_ip_init, &iv_samples, LabelScheme::Ip, &cfg.iv)?;
    println!("gate training {:.1?}", t1.elapsed());

    let never = avn_core::navigator::NeverAsk;
    let orig_eps = avn_core::data::all_orig(&dataset.test);
    let short_eps = avn_core::data::all_short(&dataset.test);
    let (ro, _) = run_experiment(&navigator, &dataset, &orig_eps, &never, seed, cfg.max_steps)?;
    let (rs, _) = run_experiment(&navigator, &dataset, &short_eps, &never, seed, cfg.max_steps)?;
    println!(
        "nav: SPL orig {:.2} short {:.2} gap {:.2}pp",
        ro.spl_pct,
        rs.spl_pct,
        ro.spl_pct - rs.spl_pct
    );

    let test_mix = mixed(&dataset.test);
    let gates: Vec<(&str, Box<dyn avn_core::navigator::UncertaintyGate>)> = vec![
        (
            "iv-gp",
            Box::new(IvGate {
                model: iv_gp,
                name: "iv-gp",
            }),
        ),
        (
            "iv-gp+pre",
            Box::new(IvGate {
                model: iv_gp_pre,
                name: "iv-gp+pretrain",
            }),
        ),
        (
            "iv-ip",
            Box::new(IvGate {
                model: iv_ip,
                name: "iv-ip",
            }),
        ),
        ("vdn", Box::new(vdn)),
        ("cp", Box::new(avn_core::baselines::CpGate { calibration: cp })),
    ];
    for (label, gate) in &gates {
        let (r, _) = run_experiment(&navigator, &dataset, &test_mix, gate.as_ref(), seed, cfg.max_steps)?;
        println!(
            "{label}: SPL {:.2} NE {:.2} P {:.2} R {:.2} bal {:+.4} orig% {:.1} short% {:.1}",
            r.spl_pct,
            r.ne_m,
            r.precision_pct,
            r.recall_pct,
            r.balance,
            r.interventions.orig_pct,
            r.interventions.short_pct
        );
    }
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
