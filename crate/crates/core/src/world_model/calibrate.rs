use std::fmt::Write as _;

use super::WorldModel;
use crate::datasets::{count_windows, sample_windows, OfflineDataset};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng;
use crate::stats;

pub const MIN_CALIBRATION_WINDOWS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub depth: usize,
    /// Mean absolute prediction error in normalized units.
    pub abs_error: f64,
    pub epistemic: f64,
    pub aleatoric: f64,
    /// Correlations between per-window epistemic scalar and error norm.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    pub windows: usize,
}

impl CalibrationReport {
    pub const COLUMNS: [&'static str; 4] = ["depth", "abs_error", "epistemic", "aleatoric"];

    pub fn to_csv(&self) -> String {
        let mut s = Self::COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            writeln!(s, "{},{:.9e},{:.9e},{:.9e}", r.depth, r.abs_error, r.epistemic, r.aleatoric).unwrap();
        }
        s
    }

    pub fn row(&self, depth: usize) -> Option<&CalibrationRow> {
        self.rows.iter().find(|r| r.depth == depth)
    }
}

/// Open-loop autoregressive rollouts from held-out histories, replaying
/// the recorded actions and feeding predictions back (exogenous dimensions
/// from data), aggregated at each requested depth.
pub fn calibration_report(
    model: &WorldModel,
    held_out: &OfflineDataset,
    depths: &[usize],
    windows: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    let max_depth = *depths.iter().max().ok_or_else(|| Error::Input("no depths requested".into()))?;
    if depths.contains(&0) {
        return Err(Error::Input("depths start at 1".into()));
    }
    let m = model.config.history;
    let available = count_windows(held_out, m, max_depth);
    if available < MIN_CALIBRATION_WINDOWS || windows < MIN_CALIBRATION_WINDOWS {
        return Err(Error::Statistics(format!(
            "need at least {MIN_CALIBRATION_WINDOWS} windows of {} frames, have {available} (asked for {windows})",
            m + max_depth
        )));
    }
    let mut r = rng::rng(rng::child(seed, "calibration"));
    let batch = sample_windows(held_out, m, max_depth, windows, model.ensemble(), 1.0, &mut r)?;
    let dims = model.modeled_dims();
    let mut roll = super::BatchRollout::start(model, &batch.history_obs, &batch.history_act[..m - 1])?;
    let mut action = batch.history_act[m - 1].clone();
    let mut per_depth: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for d in 1..=max_depth {
        let pred = roll.step(&action)?;
        let truth = &batch.future_obs[d - 1];
        if depths.contains(&d) {
            let tn = model.norm.obs(truth);
            let err: Vec<f64> = (0..windows)
                .map(|i| {
                    let (p, t) = (pred.obs_norm.row_slice(i), tn.row_slice(i));
                    dims.iter().map(|&j| (p[j] - t[j]).abs()).sum::<f64>() / dims.len() as f64
                })
                .collect();
            per_depth.push((err, pred.epistemic_scalar.clone(), pred.aleatoric_scalar.clone()));
        }
        let mut next = pred.obs.clone();
        overwrite(&mut next, truth, &model.exogenous);
        roll.set_last_obs(next)?;
        action = batch.future_act[d - 1].clone();
    }
    let mut sorted: Vec<usize> = depths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let rows = sorted
        .iter()
        .zip(per_depth)
        .map(|(&depth, (err, epi, ale))| CalibrationRow {
            depth,
            abs_error: stats::mean(&err),
            epistemic: stats::mean(&epi),
            aleatoric: stats::mean(&ale),
            pearson: stats::pearson(&epi, &err),
            spearman: stats::spearman(&epi, &err),
        })
        .collect();
    Ok(CalibrationReport { rows, windows })
}

fn overwrite(dst: &mut Tensor, src: &Tensor, dims: &[usize]) {
    let c = dst.cols();
    for r in 0..dst.rows() {
        for &j in dims {
            dst.data_mut()[r * c + j] = src.row_slice(r)[j];
        }
    }
}
