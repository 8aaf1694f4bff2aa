//! Metrics (SPL, NE, precision/recall, balance), oracle-intervention
//! accounting, experiment orchestration, and report emission.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::lang::{Episode, Style};
use crate::navigator::{rollout, GateDecision, NavigatorModel, Trajectory, UncertaintyGate};

/// Success weighted by path length, in percent. A zero-length shortest
/// path with success contributes 1 (start = goal convention).
pub fn spl(trajectories: &[Trajectory]) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    let total: f64 = trajectories
        .iter()
        .map(|t| {
            if !t.success {
                0.0
            } else if t.shortest_len_m == 0.0 {
                1.0
            } else {
                t.shortest_len_m / t.path_len_m.max(t.shortest_len_m)
            }
        })
        .sum();
    100.0 * total / trajectories.len() as f64
}

/// Mean navigation error in meters.
pub fn mean_ne(trajectories: &[Trajectory]) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    trajectories.iter().map(|t| t.ne_m).sum::<f64>() / trajectories.len() as f64
}

/// Precision and recall (percent) over "uncertain" as the positive
/// class. Empty denominators yield 0 with a warning on stderr.
pub fn precision_recall(decisions: &[GateDecision], labels: &[u8]) -> Result<(f64, f64)> {
    if decisions.len() != labels.len() {
        return Err(AvnError::dim("precision_recall", decisions.len(), labels.len()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnn = 0usize;
    for (&d, &l) in decisions.iter().zip(labels) {
        match (d == GateDecision::Uncertain, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 {
        eprintln!("warning: precision undefined (no positive decisions); reporting 0");
        0.0
    } else {
        100.0 * tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnn == 0 {
        eprintln!("warning: recall undefined (no positive labels); reporting 0");
        0.0
    } else {
        100.0 * tp as f64 / (tp + fnn) as f64
    };
    Ok((precision, recall))
}

/// (P − R)/(P + R); defined 0 when P + R = 0.
pub fn balance(precision: f64, recall: f64) -> f64 {
    let s = precision + recall;
    if s == 0.0 {
        0.0
    } else {
        (precision - recall) / s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionStats {
    /// histogram[k] = % of trajectories with exactly k interventions.
    pub histogram_pct: Vec<f64>,
    /// % of fine-grained trajectories with ≥ 1 intervention.
    pub orig_pct: f64,
    /// % of coarsened trajectories with ≥ 1 intervention.
    pub short_pct: f64,
}

pub fn intervention_stats(trajectories: &[Trajectory]) -> InterventionStats {
    let max_asks = trajectories
        .iter()
        .map(Trajectory::interventions)
        .max()
        .unwrap_or(0);
    let mut histogram_pct = vec![0.0; max_asks + 1];
    let mut counts = [[0usize; 2]; 2]; // [style][asked >= 1]
    for t in trajectories {
        let asks = t.interventions();
        histogram_pct[asks] += 1.0;
        let s = usize::from(t.style == Style::Short);
        counts[s][usize::from(asks > 0)] += 1;
    }
    let n = trajectories.len().max(1) as f64;
    for h in histogram_pct.iter_mut() {
        *h *= 100.0 / n;
    }
    let rate = |c: [usize; 2]| {
        let total = c[0] + c[1];
        if total == 0 {
            0.0
        } else {
            100.0 * c[1] as f64 / total as f64
        }
    };
    InterventionStats {
        histogram_pct,
        orig_pct: rate(counts[0]),
        short_pct: rate(counts[1]),
    }
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub method: String,
    pub seed: u64,
    pub n_trajectories: usize,
    pub spl_pct: f64,
    pub ne_m: f64,
    /// SPL restricted to each instruction style.
    pub spl_orig_pct: f64,
    pub spl_short_pct: f64,
    pub ne_orig_m: f64,
    pub ne_short_m: f64,
    /// Gate quality against per-step ground-truth-move labels.
    pub precision_pct: f64,
    pub recall_pct: f64,
    pub balance: f64,
    pub interventions: InterventionStats,
}

/// Aggregates a report from trajectories alone (pure function, so any
/// report is recomputable from its trajectories.jsonl).
pub fn report_from_trajectories(
    method: &str,
    seed: u64,
    trajectories: &[Trajectory],
) -> Result<RunReport> {
    let mut decisions = Vec::new();
    let mut labels = Vec::new();
    for t in trajectories {
        for s in &t.steps {
            decisions.push(s.decision);
            labels.push(s.label_gp);
        }
    }
    let (precision_pct, recall_pct) = precision_recall(&decisions, &labels)?;
    let by_style = |style: Style| -> Vec<Trajectory> {
        trajectories.iter().filter(|t| t.style == style).cloned().collect()
    };
    let orig = by_style(Style::Orig);
    let short = by_style(Style::Short);
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: method.to_string(),
        seed,
        n_trajectories: trajectories.len(),
        spl_pct: spl(trajectories),
        ne_m: mean_ne(trajectories),
        spl_orig_pct: spl(&orig),
        spl_short_pct: spl(&short),
        ne_orig_m: mean_ne(&orig),
        ne_short_m: mean_ne(&short),
        precision_pct,
        recall_pct,
        balance: balance(precision_pct, recall_pct),
        interventions: intervention_stats(trajectories),
    })
}

/// Default rollout step budget (an upper time limit on lost agents).
pub const DEFAULT_MAX_STEPS: usize = 15;

/// Rolls the frozen navigator with `gate` over every episode and
/// aggregates a report.
pub fn run_experiment(
    model: &NavigatorModel,
    dataset: &crate::data::Dataset,
    episodes: &[Episode],
    gate: &dyn UncertaintyGate,
    seed: u64,
    max_steps: usize,
) -> Result<(RunReport, Vec<Trajectory>)> {
    let mut trajectories = Vec::with_capacity(episodes.len());
    for ep in episodes {
        trajectories.push(rollout(
            model,
            &dataset.worlds[ep.world_idx],
            &dataset.vocab,
            ep,
            gate,
            max_steps,
        )?);
    }
    let report = report_from_trajectories(gate.name(), seed, &trajectories)?;
    Ok((report, trajectories))
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| AvnError::io(path.display().to_string(), e))
}

fn wio<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| AvnError::io(path.display().to_string(), e))
}

/// Writes report.json, summary.csv, histogram.csv, and
/// trajectories.jsonl into `dir`.
pub fn emit_report(report: &RunReport, trajectories: &[Trajectory], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AvnError::io(dir.display().to_string(), e))?;

    let report_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    wio(&report_path, std::fs::write(&report_path, json))?;

    let summary_path = dir.join("summary.csv");
    let mut f = create(&summary_path)?;
    wio(
        &summary_path,
        writeln!(
            f,
            "method,spl_pct,ne_m,precision_pct,recall_pct,balance,orig_pct,short_pct"
        ),
    )?;
    wio(
        &summary_path,
        writeln!(
            f,
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            report.method,
            report.spl_pct,
            report.ne_m,
            report.precision_pct,
            report.recall_pct,
            report.balance,
            report.interventions.orig_pct,
            report.interventions.short_pct
        ),
    )?;

    let hist_path = dir.join("histogram.csv");
    let mut f = create(&hist_path)?;
    wio(&hist_path, writeln!(f, "asks_per_trajectory,trajectories_pct"))?;
    for (k, pct) in report.interventions.histogram_pct.iter().enumerate() {
        wio(&hist_path, writeln!(f, "{k},{pct:.6}"))?;
    }

    let traj_path = dir.join("trajectories.jsonl");
    let mut f = create(&traj_path)?;
    for t in trajectories {
        let line = serde_json::to_string(t)?;
        wio(&traj_path, writeln!(f, "{line}"))?;
    }
    Ok(())
}

/// Reads trajectories.jsonl back.
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| AvnError::io(path.display().to_string(), e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(AvnError::from))
        .collect()
}
