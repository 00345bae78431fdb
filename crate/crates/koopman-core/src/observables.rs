//! Lifting maps from state snapshots to observable vectors, and the linear
//! projection recovering the state from a lifted vector.
//!
//! Two dictionaries are supported: time-delay stacking (newest sample on top
//! of the previous `d`) and elementwise monomials (`[x; x^2; ...; x^i]`).
//! Delay columns are ordered newest-first so the projection is always the
//! leading-block selector `[I 0 ... 0]`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;
use crate::plant::Trajectory;

/// Guard against runaway lifted dimensions in sweeps.
pub const MAX_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    Delay,
    Monomial,
}

/// Declarative description of a lifting map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservableDictionary {
    pub kind: DictionaryKind,
    /// Delay depth `d >= 0`, or maximum monomial power `i >= 1`.
    pub order: usize,
    pub state_dim: usize,
}

impl ObservableDictionary {
    pub fn delay(order: usize, state_dim: usize) -> ObservableDictionary {
        ObservableDictionary { kind: DictionaryKind::Delay, order, state_dim }
    }

    pub fn monomial(order: usize, state_dim: usize) -> ObservableDictionary {
        ObservableDictionary { kind: DictionaryKind::Monomial, order, state_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::InvalidSpec("dictionary state_dim must be positive".into()));
        }
        match self.kind {
            DictionaryKind::Delay if self.order > MAX_ORDER => Err(Error::InvalidSpec(
                format!("delay order {} exceeds cap {MAX_ORDER}", self.order),
            )),
            DictionaryKind::Monomial if self.order == 0 || self.order > MAX_ORDER => {
                Err(Error::InvalidSpec(format!(
                    "monomial order {} outside 1..={MAX_ORDER}",
                    self.order
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn lifted_dim(&self) -> usize {
        match self.kind {
            DictionaryKind::Delay => self.state_dim * (self.order + 1),
            DictionaryKind::Monomial => self.state_dim * self.order,
        }
    }

    /// Samples of history needed to form one lifted vector.
    pub fn history_len(&self) -> usize {
        match self.kind {
            DictionaryKind::Delay => self.order + 1,
            DictionaryKind::Monomial => 1,
        }
    }
}

/// Time-aligned lifted snapshot matrices: column k of `x_plus_lift` is the
/// one-step successor of column k of `x_lift` under input column k of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSnapshotSet {
    pub x_lift: RealMatrix,
    pub x_plus_lift: RealMatrix,
    pub u: RealMatrix,
    pub dictionary: ObservableDictionary,
    pub sample_dt: f64,
}

impl LiftedSnapshotSet {
    /// Number of snapshot pairs.
    pub fn len(&self) -> usize {
        self.x_lift.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x_lift.ncols() == 0
    }

    pub fn lifted_dim(&self) -> usize {
        self.x_lift.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    /// First `k` snapshot pairs as an owned set.
    pub fn prefix(&self, k: usize) -> Result<LiftedSnapshotSet> {
        if k == 0 || k > self.len() {
            return Err(Error::InsufficientData { needed: k.max(1), got: self.len() });
        }
        Ok(LiftedSnapshotSet {
            x_lift: self.x_lift.columns(0, k).into_owned(),
            x_plus_lift: self.x_plus_lift.columns(0, k).into_owned(),
            u: self.u.columns(0, k).into_owned(),
            dictionary: self.dictionary,
            sample_dt: self.sample_dt,
        })
    }
}

/// Column-concatenate lifted sets built with the same dictionary (pairs from
/// different trajectories never straddle a seam, so pooling is sound).
pub fn concat_sets(sets: &[LiftedSnapshotSet]) -> Result<LiftedSnapshotSet> {
    let first = sets.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let m = first.lifted_dim();
    let p = first.input_dim();
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let mut x_lift = RealMatrix::zeros(m, total);
    let mut x_plus_lift = RealMatrix::zeros(m, total);
    let mut u = RealMatrix::zeros(p, total);
    let mut col = 0;
    for s in sets {
        if s.dictionary != first.dictionary || s.lifted_dim() != m || s.input_dim() != p {
            return Err(Error::InvalidSpec("cannot pool lifted sets with different dictionaries".into()));
        }
        x_lift.columns_mut(col, s.len()).copy_from(&s.x_lift);
        x_plus_lift.columns_mut(col, s.len()).copy_from(&s.x_plus_lift);
        u.columns_mut(col, s.len()).copy_from(&s.u);
        col += s.len();
    }
    Ok(LiftedSnapshotSet {
        x_lift,
        x_plus_lift,
        u,
        dictionary: first.dictionary,
        sample_dt: first.sample_dt,
    })
}

/// Fill one delay-stacked column: `[x_k; x_{k-1}; ...; x_{k-d}]`.
fn fill_delay_column(dst: &mut RealMatrix, col: usize, traj: &Trajectory, k: usize, d: usize) {
    let n = traj.state_dim();
    for b in 0..=d {
        dst.view_mut((b * n, col), (n, 1)).copy_from(&traj.states.column(k - b));
    }
}

/// Build delay-lifted snapshot matrices with depth `d`: one column per time
/// index `k` in `d..transitions`, giving `transitions - d` pairs.
pub fn delay_lift(traj: &Trajectory, d: usize) -> Result<LiftedSnapshotSet> {
    let dict = ObservableDictionary::delay(d, traj.state_dim());
    dict.validate()?;
    let transitions = traj.transitions();
    if transitions < d + 1 {
        return Err(Error::InsufficientData { needed: d + 2, got: traj.len() });
    }
    let k_count = transitions - d;
    let m = dict.lifted_dim();
    let mut x_lift = RealMatrix::zeros(m, k_count);
    let mut x_plus_lift = RealMatrix::zeros(m, k_count);
    let mut u = RealMatrix::zeros(traj.input_dim(), k_count);
    for (col, k) in (d..transitions).enumerate() {
        fill_delay_column(&mut x_lift, col, traj, k, d);
        fill_delay_column(&mut x_plus_lift, col, traj, k + 1, d);
        u.column_mut(col).copy_from(&traj.inputs.column(k));
    }
    Ok(LiftedSnapshotSet { x_lift, x_plus_lift, u, dictionary: dict, sample_dt: traj.sample_dt })
}

/// Elementwise monomial powers of one state vector into a column.
fn fill_monomial_column(
    dst: &mut RealMatrix,
    col: usize,
    x: nalgebra::DVectorView<'_, f64>,
    max_order: usize,
) -> bool {
    let n = x.len();
    let mut finite = true;
    for row in 0..n {
        dst[(row, col)] = x[row];
    }
    for pow in 2..=max_order {
        for row in 0..n {
            let v = dst[((pow - 2) * n + row, col)] * x[row];
            finite &= v.is_finite();
            dst[((pow - 1) * n + row, col)] = v;
        }
    }
    finite
}

/// Build monomial-lifted snapshot matrices `z = [x; x^2; ...; x^i]`.
pub fn monomial_lift(traj: &Trajectory, max_order: usize) -> Result<LiftedSnapshotSet> {
    let dict = ObservableDictionary::monomial(max_order, traj.state_dim());
    dict.validate()?;
    let transitions = traj.transitions();
    if transitions == 0 {
        return Err(Error::InsufficientData { needed: 2, got: traj.len() });
    }
    let m = dict.lifted_dim();
    let mut x_lift = RealMatrix::zeros(m, transitions);
    let mut x_plus_lift = RealMatrix::zeros(m, transitions);
    let mut u = RealMatrix::zeros(traj.input_dim(), transitions);
    for k in 0..transitions {
        if !fill_monomial_column(&mut x_lift, k, traj.states.column(k), max_order) {
            return Err(Error::LiftOverflow { sample: k });
        }
        if !fill_monomial_column(&mut x_plus_lift, k, traj.states.column(k + 1), max_order) {
            return Err(Error::LiftOverflow { sample: k + 1 });
        }
        u.column_mut(k).copy_from(&traj.inputs.column(k));
    }
    Ok(LiftedSnapshotSet { x_lift, x_plus_lift, u, dictionary: dict, sample_dt: traj.sample_dt })
}

/// Projection `C` with `x = C z`: the leading-block selector picking the
/// current sample (delay) or the power-1 block (monomial).
pub fn projection_matrix(dict: &ObservableDictionary) -> RealMatrix {
    let n = dict.state_dim;
    let mut c = RealMatrix::zeros(n, dict.lifted_dim());
    c.view_mut((0, 0), (n, n)).fill_with_identity();
    c
}

/// Lift a single point from a time-ordered history (oldest first, newest
/// last), consistent with the column construction of the batch lifts.
pub fn lift_point(history: &RealMatrix, dict: &ObservableDictionary) -> Result<DVector<f64>> {
    dict.validate()?;
    if history.nrows() != dict.state_dim {
        return Err(Error::InvalidSpec(format!(
            "history rows {} do not match state_dim {}",
            history.nrows(),
            dict.state_dim
        )));
    }
    let need = dict.history_len();
    let have = history.ncols();
    if have < need {
        return Err(Error::InsufficientData { needed: need, got: have });
    }
    let n = dict.state_dim;
    let mut z = DVector::zeros(dict.lifted_dim());
    match dict.kind {
        DictionaryKind::Delay => {
            for b in 0..=dict.order {
                z.rows_mut(b * n, n).copy_from(&history.column(have - 1 - b));
            }
        }
        DictionaryKind::Monomial => {
            let x = history.column(have - 1);
            for row in 0..n {
                z[row] = x[row];
            }
            for pow in 2..=dict.order {
                for row in 0..n {
                    let v = z[(pow - 2) * n + row] * x[row];
                    if !v.is_finite() {
                        return Err(Error::LiftOverflow { sample: have - 1 });
                    }
                    z[(pow - 1) * n + row] = v;
                }
            }
        }
    }
    Ok(z)
}
