//! Dev harness: trains the pipeline at configurable budgets and prints
//! the quantities the experiment criteria depend on.

use avn_core::data::{all_orig, all_short, mixed};
use avn_core::navigator::teacher_forced_accuracy;
use avn_core::pipeline::{run_pipeline, PipelineConfig};

fn main() -> avn_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let nav_iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8000);

    let mut cfg = PipelineConfig::default();
    cfg.data.seed = seed;
    cfg.nav.seed = seed;
    cfg.pretrain.seed = seed;
    cfg.iv.seed = seed;
    cfg.baseline.seed = seed;
    cfg.nav.iterations = nav_iters;
    for (k, v) in std::env::vars() {
        match k.as_str() {
            "NAV_LR" => cfg.nav.lr = v.parse().unwrap(),
            "PRE_ITERS" => cfg.pretrain.iterations = v.parse().unwrap(),
            "IV_ITERS" => cfg.iv.iterations = v.parse().unwrap(),
            "IV_IMB" => cfg.iv.imbalance_threshold = v.parse().unwrap(),
            "IV_LR" => cfg.iv.lr = v.parse().unwrap(),
            "BASE_ITERS" => cfg.baseline.iterations = v.parse().unwrap(),
            "NAV_EPS" => cfg.data.nav_episodes_per_world = v.parse().unwrap(),
            "TEST_EPS" => cfg.data.test_episodes = v.parse().unwrap(),
            "TRAIN_WORLDS" => cfg.data.train_worlds = v.parse().unwrap(),
            "GATE_EPS" => cfg.data.gate_episodes_per_world = v.parse().unwrap(),
            "NOISE" => cfg.data.lang.noise_scale = v.parse().unwrap(),
            "POSENC" => cfg.data.lang.posenc_scale = v.parse().unwrap(),
            "COLL" => cfg.data.lang.collision_prob = v.parse().unwrap(),
            "EMBED" => {
                let d: usize = v.parse().unwrap();
                cfg.data.embed_dim = d;
                cfg.data.world.feature_dim = d;
            }
            "HEADS" => cfg.num_heads = v.parse().unwrap(),
            _ => {}
        }
    }

    let t0 = std::time::Instant::now();
    let art = run_pipeline(&cfg)?;
    println!("pipeline trained in {:.1?}", t0.elapsed());
    let n = art.iv_samples.len();
    let gp1 = art.iv_samples.iter().filter(|s| s.label_gp != 0).count();
    let ip1 = art.iv_samples.iter().filter(|s| s.label_ip != 0).count();
    println!(
        "iv samples {n}: gp+ {gp1} ({:.1}%) ip+ {ip1} ({:.1}%) imb_thresh {}",
        100.0 * gp1 as f64 / n as f64,
        100.0 * ip1 as f64 / n as f64,
        cfg.iv.imbalance_threshold
    );

    let ds = &art.dataset;
    let tf_train = teacher_forced_accuracy(&art.navigator, &ds.nav_train, &ds.worlds, &ds.vocab)?;
    let test_orig = all_orig(&ds.test);
    let test_short = all_short(&ds.test);
    let tf_test = teacher_forced_accuracy(&art.navigator, &test_orig, &ds.worlds, &ds.vocab)?;
    println!("teacher-forced acc: train {tf_train:.3} test-orig {tf_test:.3}");

    let (r_orig, _) = art.evaluate_on("never", &test_orig)?;
    let (r_short, _) = art.evaluate_on("never", &test_short)?;
    println!(
        "never: SPL orig {:.2} short {:.2} (gap {:.2}pp) NE orig {:.2} short {:.2}",
        r_orig.spl_pct,
        r_short.spl_pct,
        r_orig.spl_pct - r_short.spl_pct,
        r_orig.ne_m,
        r_short.ne_m
    );

    let mix = mixed(&ds.test);
    for g in ["cp", "base", "vdn", "iv-gp", "iv-gp+pretrain", "iv-ip"] {
        let (r, _) = art.evaluate_on(g, &mix)?;
        println!(
            "{g}: SPL {:.2} NE {:.2} P {:.2} R {:.2} bal {:+.4} orig% {:.1} short% {:.1}",
            r.spl_pct,
            r.ne_m,
            r.precision_pct,
            r.recall_pct,
            r.balance,
            r.interventions.orig_pct,
            r.interventions.short_pct
        );
    }
    let dis = avn_core::baselines::entropy_label_disagreement(
        &art.iv_samples,
        cfg.baseline.entropy_epsilon,
    );
    println!("entropy/gp disagreement: {dis:.3}");
    println!("total {:.1?}", t0.elapsed());
    Ok(())
}
