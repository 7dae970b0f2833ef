//! Displacement metrics and error histograms.
//!
//! Trajectories include the anchor at step 0; every metric sums over steps
//! `1..=T_pred`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GftnnError, Result};
use crate::model::Trajectory;

/// Default histogram bin width, meters.
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

fn check_pair(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.x.len() != pred.y.len() || truth.x.len() != truth.y.len() {
        return Err(GftnnError::Dimension("trajectory x and y lengths differ".into()));
    }
    if pred.len() != truth.len() {
        return Err(GftnnError::Dimension(format!(
            "prediction has {} steps, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(GftnnError::Dimension("trajectory has no future steps".into()));
    }
    Ok(())
}

fn check_sets(preds: &[Trajectory], truths: &[Trajectory]) -> Result<()> {
    if preds.is_empty() {
        return Err(GftnnError::Data("no scenarios to evaluate".into()));
    }
    if preds.len() != truths.len() {
        return Err(GftnnError::Dimension(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    preds.iter().zip(truths).try_for_each(|(p, t)| check_pair(p, t))
}

/// Mean squared displacement over steps `1..=T_pred`.
fn mean_squared_displacement(pred: &Trajectory, truth: &Trajectory) -> f64 {
    let n = pred.len() - 1;
    (1..=n)
        .map(|i| (pred.x[i] - truth.x[i]).powi(2) + (pred.y[i] - truth.y[i]).powi(2))
        .sum::<f64>()
        / n as f64
}

/// Root of the scenario-and-step mean of squared displacement.
pub fn ade(preds: &[Trajectory], truths: &[Trajectory]) -> Result<f64> {
    check_sets(preds, truths)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| mean_squared_displacement(p, t))
        .sum();
    Ok((total / preds.len() as f64).sqrt())
}

/// Mean Euclidean displacement at the final step.
pub fn fde(preds: &[Trajectory], truths: &[Trajectory]) -> Result<f64> {
    check_sets(preds, truths)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let n = p.len() - 1;
            (p.x[n] - t.x[n]).hypot(p.y[n] - t.y[n])
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Conventional ADE: mean over scenarios and steps of the Euclidean
/// displacement.
pub fn ade_euclid_mean(preds: &[Trajectory], truths: &[Trajectory]) -> Result<f64> {
    check_sets(preds, truths)?;
    let total: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let n = p.len() - 1;
            (1..=n).map(|i| (p.x[i] - t.x[i]).hypot(p.y[i] - t.y[i])).sum::<f64>() / n as f64
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Per-scenario RMS displacement over steps `1..=T_pred`.
pub fn per_scenario_ade(preds: &[Trajectory], truths: &[Trajectory]) -> Result<Vec<f64>> {
    if preds.len() != truths.len() {
        return Err(GftnnError::Dimension(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            check_pair(p, t)?;
            Ok(mean_squared_displacement(p, t).sqrt())
        })
        .collect()
}

/// Fixed-width histogram starting at 0; bin `i` covers `[i·w, (i+1)·w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts.len() + 1` edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Lower edge of the fullest bin; the first such bin on ties.
    pub fn mode(&self) -> Option<f64> {
        let (best, &count) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (count > 0).then(|| self.bin_edges[best])
    }
}

pub fn histogram(errors: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(GftnnError::Config(format!("bin width must be positive, got {bin_width}")));
    }
    if let Some(bad) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(GftnnError::Data(format!("invalid error value {bad}")));
    }
    let bins: Vec<usize> = errors.iter().map(|e| (e / bin_width).floor() as usize).collect();
    let n_bins = bins.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0; n_bins];
    for b in bins {
        counts[b] += 1;
    }
    let bin_edges = if n_bins == 0 {
        Vec::new()
    } else {
        (0..=n_bins).map(|i| i as f64 * bin_width).collect()
    };
    Ok(Histogram {
        bin_width,
        bin_edges,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade: f64,
    pub fde: f64,
    pub ade_euclid_mean: f64,
    pub n_scenarios: usize,
    pub scenario_ids: Vec<String>,
    pub per_scenario_ade: Vec<f64>,
    pub histogram: Histogram,
}

impl EvalReport {
    pub fn new(ids: Vec<String>, preds: &[Trajectory], truths: &[Trajectory], bin_width: f64) -> Result<EvalReport> {
        if ids.len() != preds.len() {
            return Err(GftnnError::Dimension(format!(
                "{} ids for {} predictions",
                ids.len(),
                preds.len()
            )));
        }
        let per_scenario = per_scenario_ade(preds, truths)?;
        Ok(EvalReport {
            ade: ade(preds, truths)?,
            fde: fde(preds, truths)?,
            ade_euclid_mean: ade_euclid_mean(preds, truths)?,
            n_scenarios: preds.len(),
            scenario_ids: ids,
            histogram: histogram(&per_scenario, bin_width)?,
            per_scenario_ade: per_scenario,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| GftnnError::io(path, e))
    }

    /// Histogram table `bin_start,bin_end,count`.
    pub fn write_histogram_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_start", "bin_end", "count"])?;
        for (i, c) in self.histogram.counts.iter().enumerate() {
            w.write_record([
                format!("{:?}", self.histogram.bin_edges[i]),
                format!("{:?}", self.histogram.bin_edges[i + 1]),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| GftnnError::Data(format!("writing histogram: {e}")))?;
        Ok(())
    }
}
