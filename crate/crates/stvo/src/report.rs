//! Text artifacts: metric reports, loss tables, plot series and timing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use stvo_core::evaluation::MetricsReport;
use stvo_core::training::EpochRecord;
use stvo_core::Trajectory;

/// Metrics of one sequence, or the aggregate over all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sequence: String,
    pub frames: usize,
    /// Percent.
    pub t_err: Option<f64>,
    /// Degrees per 100 m.
    pub r_err: Option<f64>,
    pub ate: f64,
    pub rpe_trans: f64,
    pub rpe_rot: f64,
    pub aligned: bool,
    pub alignment_scale: f64,
}

impl MetricsRow {
    pub fn new(sequence: impl Into<String>, frames: usize, m: &MetricsReport) -> Self {
        Self {
            sequence: sequence.into(),
            frames,
            t_err: m.t_err,
            r_err: m.r_err,
            ate: m.ate,
            rpe_trans: m.rpe_trans,
            rpe_rot: m.rpe_rot,
            aligned: m.aligned,
            alignment_scale: m.alignment_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub sequences: Vec<MetricsRow>,
    pub aggregate: MetricsRow,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsDocument {
    /// Aggregate fields are unweighted means over sequences; segment errors
    /// average only the sequences long enough to have them.
    pub fn new(sequences: Vec<MetricsRow>) -> Self {
        let rows = &sequences;
        let aggregate = MetricsRow {
            sequence: "all".into(),
            frames: rows.iter().map(|r| r.frames).sum(),
            t_err: mean(rows.iter().filter_map(|r| r.t_err)),
            r_err: mean(rows.iter().filter_map(|r| r.r_err)),
            ate: mean(rows.iter().map(|r| r.ate)).unwrap_or(0.0),
            rpe_trans: mean(rows.iter().map(|r| r.rpe_trans)).unwrap_or(0.0),
            rpe_rot: mean(rows.iter().map(|r| r.rpe_rot)).unwrap_or(0.0),
            aligned: rows.iter().all(|r| r.aligned),
            alignment_scale: mean(rows.iter().map(|r| r.alignment_scale)).unwrap_or(1.0),
        };
        Self {
            sequences,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Tab-separated table with one row per sequence and a final `all` row.
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "sequence\tframes\tt_err_pct\tr_err_deg_per_100m\tate_m\trpe_trans_m\trpe_rot_deg\taligned\tscale\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for r in self
            .sequences
            .iter()
            .chain(std::iter::once(&self.aggregate))
        {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.6}",
                r.sequence,
                r.frames,
                opt(r.t_err),
                opt(r.r_err),
                r.ate,
                r.rpe_trans,
                r.rpe_rot,
                r.aligned,
                r.alignment_scale
            )
            .unwrap();
        }
        out
    }
}

/// Whitespace-separated `epoch train_loss val_loss`; a missing validation
/// loss is written as `NA`. Wall-clock time is left out so that repeated
/// runs produce identical tables.
pub fn loss_table(epochs: &[EpochRecord]) -> String {
    let mut out = String::from("epoch train_loss val_loss\n");
    for r in epochs {
        let val = r
            .val_loss
            .map_or_else(|| "NA".to_string(), |v| format!("{v:e}"));
        writeln!(out, "{} {:e} {}", r.epoch, r.train_loss, val).unwrap();
    }
    out
}

/// Ground-plane series: one `x`/`z` column pair per trajectory, padded with
/// `NA` where a trajectory is shorter.
pub fn plot_series(trajectories: &[(String, Trajectory)]) -> String {
    let mut out = String::new();
    let header: Vec<String> = trajectories
        .iter()
        .flat_map(|(label, _)| [format!("{label}_x"), format!("{label}_z")])
        .collect();
    out.push_str(&header.join(" "));
    out.push('\n');
    let rows = trajectories.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    let positions: Vec<Vec<_>> = trajectories
        .iter()
        .map(|(_, t)| t.positions().collect())
        .collect();
    for i in 0..rows {
        let cells: Vec<String> = positions
            .iter()
            .flat_map(|ps| match ps.get(i) {
                Some(p) => [format!("{:.6}", p[0]), format!("{:.6}", p[2])],
                None => ["NA".to_string(), "NA".to_string()],
            })
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStat {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl TimingStat {
    pub fn from_samples(samples_ms: &[f64]) -> Self {
        let n = samples_ms.len().max(1) as f64;
        let mean_ms = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms
            .iter()
            .map(|v| (v - mean_ms).powi(2))
            .sum::<f64>()
            / n;
        Self {
            mean_ms,
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub clips: usize,
    pub threads: usize,
    pub preprocessing: TimingStat,
    pub inference: TimingStat,
    pub postprocessing: TimingStat,
}
