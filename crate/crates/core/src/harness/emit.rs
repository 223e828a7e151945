use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::run::{RunRecord, Sweep, SweepSummary};
use crate::error::{Error, Result};
use crate::federation::RoundMetrics;
use crate::fsutil::write_atomic;

pub const METRICS_HEADER: &str =
    "round,lr,train_loss,test_accuracy,fedfim_trace,cum_trace,active_ratio,pool_size,n_selected,wall_ms";

pub const SUMMARY_HEADER: &str = "recover_round,n_seeds,mean_final_accuracy,std_final_accuracy,mean_rounds_to_target,mean_final_cum_trace,std_final_cum_trace";

/// 17 significant digits, which round-trips every `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

/// Per-round CSV; rounds without a Fisher measurement leave `fedfim_trace` empty.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            m.round,
            format_number(m.lr),
            format_number(m.train_loss),
            format_number(m.test_accuracy),
            format_opt(m.fedfim_trace),
            format_number(m.cum_trace),
            format_number(m.active_ratio),
            m.pool_size,
            m.n_selected(),
            format_number(m.wall_ms),
        )
        .unwrap();
    }
    out
}

pub fn summary_csv(summary: &SweepSummary) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in &summary.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.recover_round,
            r.n_seeds,
            format_number(r.mean_final_accuracy),
            format_number(r.std_final_accuracy),
            format_opt(r.mean_rounds_to_target),
            format_number(r.mean_final_cum_trace),
            format_number(r.std_final_cum_trace),
        )
        .unwrap();
    }
    out
}

fn run_json(record: &RunRecord) -> String {
    let doc = json!({
        "version": crate::VERSION,
        "seed": record.seed(),
        "final_accuracy": record.final_accuracy,
        "best_accuracy": record.best_accuracy,
        "target_accuracy": record.target_accuracy,
        "rounds_to_target": record.rounds_to_target,
        "final_cum_trace": record.final_cum_trace,
        "critical_period_end": record.critical_period_end,
        "config": record.config,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("run record serializes");
    text.push('\n');
    text
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `metrics.csv` and `run.json` into `out_dir`.
pub fn emit_run(record: &RunRecord, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let metrics = out_dir.join("metrics.csv");
    write_atomic(&metrics, metrics_csv(&record.metrics).as_bytes())?;
    let run = out_dir.join("run.json");
    write_atomic(&run, run_json(record).as_bytes())?;
    Ok(vec![metrics, run])
}

/// Writes one `recover_<M>_seed_<s>/` directory per run plus `summary.csv`
/// and `sweep.json` at the top of `out_dir`.
pub fn emit_sweep(sweep: &Sweep, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for run in &sweep.runs {
        let dir = out_dir.join(format!("recover_{}_seed_{}", run.recover_round(), run.seed()));
        written.extend(emit_run(run, &dir)?);
    }
    let summary = out_dir.join("summary.csv");
    write_atomic(&summary, summary_csv(&sweep.summary).as_bytes())?;
    written.push(summary);
    let base = sweep.runs.first().map(|r| &r.config);
    let doc = json!({
        "version": crate::VERSION,
        "seeds": sweep.summary.seeds,
        "rows": sweep.summary.rows,
        "config": base,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("sweep serializes");
    text.push('\n');
    let path = out_dir.join("sweep.json");
    write_atomic(&path, text.as_bytes())?;
    written.push(path);
    Ok(written)
}
