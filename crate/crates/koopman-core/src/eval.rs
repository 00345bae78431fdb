//! Scoring: single-step reconstruction error and its RMS aggregate,
//! multi-step open-loop rollouts, convergence sweeps over dictionary orders
//! and sample counts, and pose-tracking error curves.
//!
//! The single-step error of column i is
//! `e_i = |x+_predict - x+_actual| / |x+_actual - x_i|` with 45-dim norms at
//! the projected-state level; verification columns whose denominator is
//! exactly zero (bitwise-stationary samples) are excluded and counted.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hdmd::{fit_with_rcond, LiftedModel};
use crate::numerics::RealMatrix;
use crate::observables::{concat_sets, delay_lift, lift_point, monomial_lift, DictionaryKind};
use crate::observables::LiftedSnapshotSet;
use crate::plant::Trajectory;

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    /// Per-column relative errors, in verification order (stationary samples
    /// skipped).
    pub errors: Vec<f64>,
    pub e_rms: f64,
    /// Columns excluded for a bitwise-zero denominator.
    pub excluded_stationary: usize,
}

impl EvaluationReport {
    pub fn used(&self) -> usize {
        self.errors.len()
    }
}

/// Score one-step predictions of `model` on a held-out lifted snapshot set.
pub fn single_step_error(
    model: &LiftedModel,
    verification: &LiftedSnapshotSet,
) -> Result<EvaluationReport> {
    let k = verification.len();
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if verification.lifted_dim() != model.lifted_dim()
        || verification.input_dim() != model.input_dim()
    {
        return Err(Error::InvalidMatrix(format!(
            "verification set ({} x {}) does not match model ({} x {})",
            verification.lifted_dim(),
            verification.input_dim(),
            model.lifted_dim(),
            model.input_dim()
        )));
    }

    // Batched prediction, then projection to the observed state.
    let mut z_pred = &model.a * &verification.x_lift;
    if model.input_dim() > 0 {
        z_pred.gemm(1.0, &model.b, &verification.u, 1.0);
    }
    let x_pred = &model.c * z_pred;
    let x_plus = &model.c * &verification.x_plus_lift;
    let x_now = &model.c * &verification.x_lift;

    let mut errors = Vec::with_capacity(k);
    let mut excluded = 0usize;
    for col in 0..k {
        let den = (x_plus.column(col) - x_now.column(col)).norm();
        if den == 0.0 {
            excluded += 1;
            continue;
        }
        let num = (x_pred.column(col) - x_plus.column(col)).norm();
        errors.push(num / den);
    }
    if errors.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let e_rms = rms(&errors);
    Ok(EvaluationReport { errors, e_rms, excluded_stationary: excluded })
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|e| e * e).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct RolloutReport {
    /// Projected model prediction, one column per sample (start included).
    pub predicted: RealMatrix,
    /// Per-step error normalized by the RMS amplitude of the actual
    /// trajectory (`sqrt(mean_k |x_k|^2)`).
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub mean_error: f64,
}

/// Iterate the lifted model forward from a lifted initial history under the
/// known inputs and compare against the recorded trajectory.
pub fn rollout_reconstruction(
    model: &LiftedModel,
    initial_history: &RealMatrix,
    inputs: &RealMatrix,
    actual: &Trajectory,
) -> Result<RolloutReport> {
    let steps = inputs.ncols();
    if actual.len() != steps + 1 {
        return Err(Error::InvalidMatrix(format!(
            "actual trajectory has {} samples for {steps} inputs",
            actual.len()
        )));
    }
    let mut z = lift_point(initial_history, &model.dictionary)?;
    let n_obs = model.c.nrows();
    let mut predicted = RealMatrix::zeros(n_obs, steps + 1);
    predicted.column_mut(0).copy_from(&(&model.c * &z));
    for k in 0..steps {
        z = &model.a * z + &model.b * inputs.column(k);
        predicted.column_mut(k + 1).copy_from(&(&model.c * &z));
    }

    let amplitude = (actual.states.iter().map(|v| v * v).sum::<f64>()
        / actual.len() as f64)
        .sqrt();
    if amplitude == 0.0 {
        return Err(Error::InvalidReference("actual trajectory has zero amplitude".into()));
    }
    let errors: Vec<f64> = (0..=steps)
        .map(|k| (predicted.column(k) - actual.states.column(k)).norm() / amplitude)
        .collect();
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(RolloutReport { predicted, errors, max_error, mean_error })
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub order: usize,
    pub samples: usize,
    pub e_rms: Option<f64>,
    /// "ok" or the per-cell failure message; failed cells never abort the
    /// sweep.
    pub status: String,
}

/// Grid of e_RMS values over (dictionary order, training sample count), each
/// cell fit on a balanced prefix of the pooled training trajectories and
/// scored on the pooled verification set.
///
/// Orders run sequentially (their lifted matrices dominate memory); the cells
/// of one order run in parallel and are assembled in deterministic grid
/// order.
pub fn convergence_sweep(
    training: &[Trajectory],
    verification: &[Trajectory],
    kind: DictionaryKind,
    orders: &[usize],
    sample_counts: &[usize],
    rcond: f64,
    verification_cap: usize,
) -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(orders.len() * sample_counts.len());
    for &order in orders {
        cells.extend(sweep_one_order(
            training,
            verification,
            kind,
            order,
            sample_counts,
            rcond,
            verification_cap,
        ));
    }
    cells
}

fn lift_pool(
    trajectories: &[Trajectory],
    kind: DictionaryKind,
    order: usize,
) -> Result<Vec<LiftedSnapshotSet>> {
    trajectories
        .iter()
        .map(|t| match kind {
            DictionaryKind::Delay => delay_lift(t, order),
            DictionaryKind::Monomial => monomial_lift(t, order),
        })
        .collect()
}

/// Proportionally sized prefixes of each pooled set, concatenated.
fn balanced_prefix(sets: &[LiftedSnapshotSet], count: usize) -> Result<LiftedSnapshotSet> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    if count > total {
        return Err(Error::InsufficientData { needed: count, got: total });
    }
    let mut takes: Vec<usize> = sets
        .iter()
        .map(|s| ((count as f64) * (s.len() as f64) / (total as f64)).floor() as usize)
        .collect();
    let mut short = count - takes.iter().sum::<usize>();
    for (i, t) in takes.iter_mut().enumerate() {
        while short > 0 && *t < sets[i].len() {
            *t += 1;
            short -= 1;
        }
    }
    let parts: Vec<LiftedSnapshotSet> = sets
        .iter()
        .zip(takes.iter())
        .filter(|(_, &t)| t > 0)
        .map(|(s, &t)| s.prefix(t))
        .collect::<Result<_>>()?;
    concat_sets(&parts)
}

fn sweep_one_order(
    training: &[Trajectory],
    verification: &[Trajectory],
    kind: DictionaryKind,
    order: usize,
    sample_counts: &[usize],
    rcond: f64,
    verification_cap: usize,
) -> Vec<SweepCell> {
    let fail_all = |msg: String| {
        sample_counts
            .iter()
            .map(|&samples| SweepCell { order, samples, e_rms: None, status: msg.clone() })
            .collect::<Vec<_>>()
    };
    let train_sets = match lift_pool(training, kind, order) {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    let verify_set = match lift_pool(verification, kind, order)
        .and_then(|sets| balanced_prefix(&sets, verification_cap.min(sets.iter().map(|s| s.len()).sum())))
    {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };

    sample_counts
        .par_iter()
        .map(|&samples| {
            let run = || -> Result<f64> {
                let subset = balanced_prefix(&train_sets, samples)?;
                let model = fit_with_rcond(&subset, rcond)?;
                Ok(single_step_error(&model, &verify_set)?.e_rms)
            };
            match run() {
                Ok(e_rms) => SweepCell { order, samples, e_rms: Some(e_rms), status: "ok".into() },
                Err(e) => SweepCell { order, samples, e_rms: None, status: e.to_string() },
            }
        })
        .collect()
}

/// Normalized pose error over time: `|x(t) - x_ref| / |x0 - x_ref|`
/// (1 at the start, 0 at perfect arrival).
pub fn pose_error_curve(
    actual: &Trajectory,
    x_ref: &DVector<f64>,
    x0: &DVector<f64>,
) -> Result<Vec<(f64, f64)>> {
    if actual.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let scale = (x0 - x_ref).norm();
    if scale == 0.0 {
        return Err(Error::InvalidReference(
            "initial state coincides with the reference pose".into(),
        ));
    }
    Ok((0..actual.len())
        .map(|k| {
            let e = (actual.states.column(k) - x_ref).norm() / scale;
            (k as f64 * actual.sample_dt, e)
        })
        .collect())
}

/// Mean of the trailing fraction of a pose-error curve.
pub fn steady_state_error(curve: &[(f64, f64)], tail_fraction: f64) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    let tail = ((curve.len() as f64 * tail_fraction).ceil() as usize).clamp(1, curve.len());
    let start = curve.len() - tail;
    curve[start..].iter().map(|&(_, e)| e).sum::<f64>() / tail as f64
}
