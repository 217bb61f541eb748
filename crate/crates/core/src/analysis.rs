//! Measurement and reporting: throughput in programs per second, rank
//! diagnostics for pruned candidates, and the quality/throughput trade-off
//! table.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Programs-per-second measurement over repeated runs of one workload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub pps: f64,
    pub programs: usize,
    pub runs: usize,
    pub per_run_seconds: Vec<f64>,
}

/// Runs `workload` `runs` times, timing each run, and reports
/// `programs / mean wall-clock seconds`. The workload must do everything
/// that counts (verification, scoring, ranking) and nothing that does not
/// (loading inputs from disk, writing outputs). A failing run aborts the
/// measurement.
pub fn measure_pps(
    workload: &mut dyn FnMut() -> Result<()>,
    programs: usize,
    runs: usize,
) -> Result<ThroughputReport> {
    if programs == 0 {
        return Err(Error::Config(
            "throughput is undefined for zero programs".into(),
        ));
    }
    if runs == 0 {
        return Err(Error::Config("throughput needs at least one run".into()));
    }
    let mut per_run_seconds = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        workload()?;
        per_run_seconds.push(start.elapsed().as_secs_f64());
    }
    let mean = per_run_seconds.iter().sum::<f64>() / runs as f64;
    if mean <= 0.0 {
        return Err(Error::NonFinite("mean wall-clock time is zero".into()));
    }
    Ok(ThroughputReport {
        pps: programs as f64 / mean,
        programs,
        runs,
        per_run_seconds,
    })
}

/// Where pruned candidates sat in a scorer-only ranking. Rank fields are
/// `None` when nothing was removed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneDiagnostics {
    /// Problems this record covers (1 for a per-problem record).
    pub problems: usize,
    /// Removed candidates (mean per problem after aggregation).
    pub n_removed: f64,
    /// Mean 1-based rank of removed candidates.
    pub avg_rank: Option<f64>,
    /// Rank of the best-ranked removed candidate.
    pub m1_rank: Option<f64>,
    /// Mean rank of the five best-ranked removed candidates (fewer if
    /// fewer were removed).
    pub m5_rank: Option<f64>,
    /// Removed share of the pool, in percent.
    pub pct_removed: f64,
    /// Share of problems whose whole pool was removed, in percent.
    pub pct_problems_all_removed: f64,
}

/// Computes rank diagnostics for one problem: where the candidates in
/// `removed` appear in the scorer-only ranking `ordered` (1-based; rank 1
/// is the scorer's top pick). Every removed id must appear in `ordered`.
pub fn removed_rank_stats(
    ordered: &[String],
    removed: &HashSet<String>,
) -> Result<PruneDiagnostics> {
    if ordered.is_empty() {
        return Err(Error::Config("ranking is empty".into()));
    }
    for id in removed {
        if !ordered.iter().any(|o| o == id) {
            return Err(Error::Config(format!(
                "removed candidate `{id}` is not in the ranking"
            )));
        }
    }
    let mut ranks: Vec<f64> = ordered
        .iter()
        .enumerate()
        .filter(|(_, id)| removed.contains(id.as_str()))
        .map(|(i, _)| (i + 1) as f64)
        .collect();
    ranks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_removed = ranks.len();
    let pct_removed = 100.0 * n_removed as f64 / ordered.len() as f64;
    let all_removed = n_removed == ordered.len();
    if ranks.is_empty() {
        return Ok(PruneDiagnostics {
            problems: 1,
            n_removed: 0.0,
            avg_rank: None,
            m1_rank: None,
            m5_rank: None,
            pct_removed,
            pct_problems_all_removed: 0.0,
        });
    }
    let avg = ranks.iter().sum::<f64>() / n_removed as f64;
    let top5 = &ranks[..n_removed.min(5)];
    Ok(PruneDiagnostics {
        problems: 1,
        n_removed: n_removed as f64,
        avg_rank: Some(avg),
        m1_rank: Some(ranks[0]),
        m5_rank: Some(top5.iter().sum::<f64>() / top5.len() as f64),
        pct_removed,
        pct_problems_all_removed: if all_removed { 100.0 } else { 0.0 },
    })
}

/// Averages per-problem diagnostics across problems. Rank statistics
/// average over the problems that removed anything; count and percentage
/// fields average over all problems.
pub fn aggregate_prune_diagnostics(items: &[PruneDiagnostics]) -> Result<PruneDiagnostics> {
    if items.is_empty() {
        return Err(Error::Config("no diagnostics to aggregate".into()));
    }
    let problems: usize = items.iter().map(|d| d.problems).sum();
    if problems == 0 {
        return Err(Error::Config("diagnostics cover zero problems".into()));
    }
    let weighted = |f: fn(&PruneDiagnostics) -> f64| {
        items.iter().map(|d| f(d) * d.problems as f64).sum::<f64>() / problems as f64
    };
    let rank_mean = |f: fn(&PruneDiagnostics) -> Option<f64>| {
        let values: Vec<f64> = items.iter().filter_map(f).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    Ok(PruneDiagnostics {
        problems,
        n_removed: weighted(|d| d.n_removed),
        avg_rank: rank_mean(|d| d.avg_rank),
        m1_rank: rank_mean(|d| d.m1_rank),
        m5_rank: rank_mean(|d| d.m5_rank),
        pct_removed: weighted(|d| d.pct_removed),
        pct_problems_all_removed: weighted(|d| d.pct_problems_all_removed),
    })
}

/// One point on a strategy's quality curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BofPoint {
    pub k: usize,
    pub best_of_k: f64,
}

/// Everything measured about one strategy, ready for the trade-off table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy_id: String,
    pub points: Vec<BofPoint>,
    pub pps: Option<f64>,
    pub runs: usize,
    pub programs: usize,
    pub fallback_count: usize,
    pub problems: usize,
}

/// Orders strategies fastest first (unmeasured ones last, ties by id) and
/// drops rows that scored zero problems, returning a warning per drop.
pub fn tradeoff_report(rows: Vec<StrategySummary>) -> (Vec<StrategySummary>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut kept: Vec<StrategySummary> = Vec::with_capacity(rows.len());
    for row in rows {
        if row.problems == 0 {
            warnings.push(format!(
                "strategy `{}` produced no rankings and was dropped from the report",
                row.strategy_id
            ));
        } else {
            kept.push(row);
        }
    }
    kept.sort_by(|a, b| {
        let pa = a.pps.unwrap_or(f64::NEG_INFINITY);
        let pb = b.pps.unwrap_or(f64::NEG_INFINITY);
        pb.partial_cmp(&pa)
            .unwrap()
            .then_with(|| a.strategy_id.cmp(&b.strategy_id))
    });
    (kept, warnings)
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// The trade-off table: one row per strategy and k.
pub fn render_report_csv(rows: &[StrategySummary]) -> String {
    let mut out = String::from("strategy_id,k,best_of_k,pps,runs,programs,fallback_count\n");
    for row in rows {
        for point in &row.points {
            let pps = row.pps.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&row.strategy_id),
                point.k,
                point.best_of_k,
                pps,
                row.runs,
                row.programs,
                row.fallback_count
            ));
        }
    }
    out
}

/// Quality-versus-throughput curve points for plotting.
pub fn render_curve_csv(rows: &[StrategySummary]) -> String {
    let mut out = String::from("strategy_id,k,best_of_k,pps\n");
    for row in rows {
        for point in &row.points {
            let pps = row.pps.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&row.strategy_id),
                point.k,
                point.best_of_k,
                pps
            ));
        }
    }
    out
}
