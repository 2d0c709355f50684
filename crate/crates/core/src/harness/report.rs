//! Result emission: one CSV row per trial, one JSON summary per grid
//! point. Both are versioned, echo the config hash and seed, and are
//! byte-deterministic for a given (config, seed) regardless of thread
//! count.

use super::{ExperimentConfig, GridPointResult, HarnessError, EXPERIMENT_SCHEMA_VERSION};
use crate::trees::Taxon;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// FNV-1a over the canonical JSON encoding of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let encoded = serde_json::to_string(cfg).expect("config serializes");
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in encoded.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Write one row per trial. Skipped points emit a single marker row with
/// trial = -1.
pub fn write_trials_csv<W: Write>(
    points: &[GridPointResult],
    cfg: &ExperimentConfig,
    taxa: &[Taxon],
    w: W,
) -> Result<(), HarnessError> {
    let hash = config_hash(cfg);
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "schema_version",
        "config_hash",
        "seed",
        "f",
        "m",
        "k",
        "regime",
        "trial",
        "truth",
        "declared",
        "correct",
        "delta_err_max",
        "i_size_min",
        "clamp_events",
        "retries_used",
    ])?;
    for p in points {
        let base = |trial: String| -> Vec<String> {
            vec![
                EXPERIMENT_SCHEMA_VERSION.to_string(),
                format!("{hash:016x}"),
                cfg.seed.to_string(),
                format!("{}", p.f),
                p.m.to_string(),
                p.k.to_string(),
                format!("{:?}", p.regime).to_lowercase(),
                trial,
            ]
        };
        if p.skipped {
            let mut row = base("-1".to_string());
            row.extend(["", "skipped", "", "", "", "", ""].map(String::from));
            wtr.write_record(&row)?;
            continue;
        }
        for t in &p.trials {
            let mut row = base(t.trial.to_string());
            row.push(t.truth.format_with(taxa));
            row.push(t.declared.format_with(taxa));
            row.push(if t.correct { "1" } else { "0" }.to_string());
            row.push(t.delta_err_max.map(|v| format!("{v}")).unwrap_or_default());
            row.push(t.i_size_min.map(|v| v.to_string()).unwrap_or_default());
            row.push(t.clamp_events.to_string());
            row.push(t.retries_used.to_string());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| HarnessError::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

#[derive(Serialize)]
struct PointSummary {
    f: f64,
    m: usize,
    k: usize,
    regime: super::Regime,
    trials: u32,
    successes: u32,
    success_rate: f64,
    ci_low: f64,
    ci_high: f64,
    skipped: bool,
    mean_delta_err: Option<f64>,
    mean_i_size_min: Option<f64>,
    clamp_events: u32,
    unresolved: u32,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    config: &'a ExperimentConfig,
    points: Vec<PointSummary>,
}

/// JSON summary: config echo plus one entry per grid point. Every summary
/// field is recomputable from the CSV rows.
pub fn write_summary_json<W: Write>(
    points: &[GridPointResult],
    cfg: &ExperimentConfig,
    w: W,
) -> Result<(), HarnessError> {
    let summaries: Vec<PointSummary> = points
        .iter()
        .map(|p| {
            let with_delta: Vec<f64> =
                p.trials.iter().filter_map(|t| t.delta_err_max).collect();
            let with_i: Vec<f64> = p
                .trials
                .iter()
                .filter_map(|t| t.i_size_min.map(|v| v as f64))
                .collect();
            PointSummary {
                f: p.f,
                m: p.m,
                k: p.k,
                regime: p.regime,
                trials: p.trials.len() as u32,
                successes: p.successes,
                success_rate: p.success_rate,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                skipped: p.skipped,
                mean_delta_err: (!with_delta.is_empty()).then(|| crate::stats::mean(&with_delta)),
                mean_i_size_min: (!with_i.is_empty()).then(|| crate::stats::mean(&with_i)),
                clamp_events: p.trials.iter().map(|t| t.clamp_events).sum(),
                unresolved: p
                    .trials
                    .iter()
                    .filter(|t| !t.declared.is_resolved())
                    .count() as u32,
            }
        })
        .collect();
    let summary = Summary {
        schema_version: EXPERIMENT_SCHEMA_VERSION,
        config_hash: format!("{:016x}", config_hash(cfg)),
        seed: cfg.seed,
        config: cfg,
        points: summaries,
    };
    serde_json::to_writer_pretty(w, &summary)
        .map_err(|e| HarnessError::BadConfig(format!("summary serialization: {e}")))?;
    Ok(())
}

/// Write `trials.csv` and `summary.json` under `dir`.
pub fn emit_report(
    points: &[GridPointResult],
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let csv_path = dir.join("trials.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| HarnessError::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;
    write_trials_csv(points, cfg, &experiment_taxa(cfg), file)?;
    let json_path = dir.join("summary.json");
    let file = std::fs::File::create(&json_path).map_err(|e| HarnessError::Io {
        path: json_path.display().to_string(),
        source: e,
    })?;
    write_summary_json(points, cfg, file)?;
    Ok(())
}

fn experiment_taxa(cfg: &ExperimentConfig) -> Vec<Taxon> {
    cfg.tree_for(cfg.f_grid[0])
        .map(|t| t.taxa().to_vec())
        .unwrap_or_else(|_| {
            (0..3)
                .map(|i| Taxon { id: i, label: format!("{}", i + 1) })
                .collect()
        })
}
