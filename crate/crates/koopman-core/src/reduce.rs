//! Mode-power model reduction: select the highest-power Koopman modes,
//! project the lifted model onto their span (`A~ = V^+ A V`, `B~ = V^+ B`,
//! `C~ = C V`), and realify conjugate pairs into 2x2 rotation-scaling blocks
//! so everything downstream stays in real arithmetic.

use nalgebra::{Complex, DVector};

use crate::error::{Error, Result};
use crate::hdmd::{KoopmanSpectrum, LiftedModel};
use crate::numerics::{ComplexMatrix, ComplexVector, RealMatrix};
use crate::observables::ObservableDictionary;

/// Condition cap on the selected mode basis.
pub const BASIS_COND_CAP: f64 = 1e12;
/// Largest imaginary residue tolerated when discarding the imaginary parts
/// of a realified model.
pub const REALIFICATION_IMAG_TOL: f64 = 1e-10;

/// How each real coordinate (or coordinate pair) of the reduced state maps
/// onto spectrum entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeBlock {
    /// One real eigenvalue; index into the sorted spectrum.
    Real { index: usize },
    /// Conjugate pair realified as [[a, b], [-b, a]]; `plus` has Im > 0.
    Pair { plus: usize, minus: usize },
}

/// Real state-space model on a basis spanning the selected Koopman modes.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    /// Selected mode columns (pre-realification).
    pub basis: ComplexMatrix,
    /// Moore-Penrose pseudoinverse of `basis`.
    pub basis_pinv: ComplexMatrix,
    /// Realification record, in reduced-coordinate order.
    pub blocks: Vec<ModeBlock>,
    /// Sorted-spectrum indices retained (conjugate-closed, ascending).
    pub kept_indices: Vec<usize>,
    /// Largest imaginary entry discarded during realification.
    pub realification_imag: f64,
    /// Fingerprint of the parent lifted model.
    pub parent: u64,
    pub dictionary: ObservableDictionary,
    pub sample_dt: f64,
}

impl ReducedModel {
    /// Real reduced dimension (post conjugate closure).
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Map a lifted vector into reduced real coordinates:
    /// `z~ = realify(V^+ z)`.
    pub fn reduce_state(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.basis.nrows() {
            return Err(Error::InvalidMatrix(format!(
                "lifted vector length {} does not match basis rows {}",
                z.len(),
                self.basis.nrows()
            )));
        }
        let zc = z.map(|x| Complex::new(x, 0.0));
        let coords = &self.basis_pinv * zc;
        Ok(realify_vector(&coords, &self.blocks))
    }
}

/// Indices (into the power-sorted spectrum) of the `n` largest mode powers,
/// closed under conjugate pairing. A kept complex mode pulls in its partner,
/// so the result may exceed `n` by the number of half-open pairs.
pub fn select_modes(spec: &KoopmanSpectrum, n: usize) -> Vec<usize> {
    let m = spec.len();
    let n = n.clamp(1, m.max(1));
    // Entries are already sorted by power (ties: |lambda|, then source order).
    let mut keep: Vec<bool> = vec![false; m];
    for (i, k) in keep.iter_mut().enumerate().take(n) {
        let _ = i;
        *k = true;
    }
    for i in 0..n {
        if let Some(p) = spec.conj_partner[i] {
            keep[p] = true;
        }
    }
    (0..m).filter(|&i| keep[i]).collect()
}

/// Project the lifted model onto the selected modes and realify.
pub fn project(
    model: &LiftedModel,
    spec: &KoopmanSpectrum,
    indices: &[usize],
) -> Result<ReducedModel> {
    let m = model.lifted_dim();
    if spec.len() != m {
        return Err(Error::InvalidMatrix(format!(
            "spectrum size {} does not match model dimension {m}",
            spec.len()
        )));
    }
    validate_selection(spec, indices)?;
    let n = indices.len();

    let mut basis = ComplexMatrix::zeros(m, n);
    for (col, &idx) in indices.iter().enumerate() {
        basis.column_mut(col).copy_from(&spec.modes.column(idx));
    }
    let blocks = block_structure(spec, indices)?;

    // V^+ = R^-1 Q^H from a thin QR; the diagonal of R doubles as a cheap
    // condition estimate for the selected basis.
    let qr = basis.clone().qr();
    let r = qr.r();
    let diag_mags: Vec<f64> = (0..n).map(|i| r[(i, i)].norm()).collect();
    let dmax = diag_mags.iter().cloned().fold(0.0, f64::max);
    let dmin = diag_mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if !condition.is_finite() || condition > BASIS_COND_CAP {
        return Err(Error::IllConditionedBasis { condition });
    }
    let basis_pinv = r
        .solve_upper_triangular(&qr.q().adjoint())
        .ok_or(Error::IllConditionedBasis { condition })?;

    // Complex reduced matrices. A V and C V are done on split real/imaginary
    // parts so the big products stay in real arithmetic.
    let v_re = basis.map(|c| c.re);
    let v_im = basis.map(|c| c.im);
    let av = complex_from_parts(&(&model.a * &v_re), &(&model.a * &v_im));
    let a_c = &basis_pinv * av;
    let b_c = &basis_pinv * model.b.map(|x| Complex::new(x, 0.0));
    let c_c = complex_from_parts(&(&model.c * &v_re), &(&model.c * &v_im));

    // Realify: A~ = M A_c M^-1, B~ = M B_c, C~ = C_c M^-1.
    let mut a_t = a_c;
    apply_minv_columns(&mut a_t, &blocks);
    apply_m_rows(&mut a_t, &blocks);
    let mut b_t = b_c;
    apply_m_rows(&mut b_t, &blocks);
    let mut c_t = c_c;
    apply_minv_columns(&mut c_t, &blocks);

    let imag = [&a_t, &b_t, &c_t]
        .iter()
        .flat_map(|mat| mat.iter())
        .map(|c| c.im.abs())
        .fold(0.0, f64::max);
    let scale = [&a_t, &b_t, &c_t]
        .iter()
        .flat_map(|mat| mat.iter())
        .map(|c| c.norm())
        .fold(1.0, f64::max);
    if imag > REALIFICATION_IMAG_TOL * scale {
        return Err(Error::NumericalFailure(format!(
            "realification left imaginary residue {imag:.3e} (scale {scale:.3e})"
        )));
    }

    Ok(ReducedModel {
        a: a_t.map(|c| c.re),
        b: b_t.map(|c| c.re),
        c: c_t.map(|c| c.re),
        basis,
        basis_pinv,
        blocks,
        kept_indices: indices.to_vec(),
        realification_imag: imag,
        parent: model.fingerprint(),
        dictionary: model.dictionary,
        sample_dt: model.sample_dt,
    })
}

/// Iterate the reduced dynamics from `z~_0` under the given inputs, returning
/// the projected state sequence (one column per step, including the start).
pub fn reduced_rollout(
    rm: &ReducedModel,
    z0: &DVector<f64>,
    inputs: &RealMatrix,
) -> Result<RealMatrix> {
    if z0.len() != rm.dim() || (inputs.ncols() > 0 && inputs.nrows() != rm.input_dim()) {
        return Err(Error::InvalidMatrix("rollout dimensions inconsistent".into()));
    }
    let steps = inputs.ncols();
    let mut out = RealMatrix::zeros(rm.c.nrows(), steps + 1);
    let mut z = z0.clone();
    out.column_mut(0).copy_from(&(&rm.c * &z));
    for k in 0..steps {
        z = &rm.a * z + &rm.b * inputs.column(k);
        out.column_mut(k + 1).copy_from(&(&rm.c * &z));
    }
    Ok(out)
}

fn validate_selection(spec: &KoopmanSpectrum, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidSpec("empty mode selection".into()));
    }
    let m = spec.len();
    let mut seen = vec![false; m];
    let mut prev = None;
    for &i in indices {
        if i >= m {
            return Err(Error::InvalidSpec(format!("mode index {i} out of range {m}")));
        }
        if seen[i] || prev.map_or(false, |p| p >= i) {
            return Err(Error::InvalidSpec("mode indices must be strictly ascending".into()));
        }
        seen[i] = true;
        prev = Some(i);
    }
    for &i in indices {
        if let Some(p) = spec.conj_partner[i] {
            if !seen[p] {
                return Err(Error::InvalidSpec(format!(
                    "selection not conjugate-closed: mode {i} needs partner {p}"
                )));
            }
        }
    }
    Ok(())
}

/// Reduced-coordinate block layout for a conjugate-closed ascending selection.
fn block_structure(spec: &KoopmanSpectrum, indices: &[usize]) -> Result<Vec<ModeBlock>> {
    let mut blocks = Vec::new();
    let mut iter = indices.iter().copied().peekable();
    while let Some(i) = iter.next() {
        match spec.conj_partner[i] {
            None => blocks.push(ModeBlock::Real { index: i }),
            Some(p) => {
                let j = iter.next().ok_or_else(|| {
                    Error::InvalidSpec(format!("mode {i} lost its conjugate partner"))
                })?;
                if j != p {
                    return Err(Error::InvalidSpec(format!(
                        "conjugate pair ({i}, {p}) is not adjacent in the selection"
                    )));
                }
                let (plus, minus) = if spec.eigenvalues[i].im >= 0.0 { (i, j) } else { (j, i) };
                blocks.push(ModeBlock::Pair { plus, minus });
            }
        }
    }
    Ok(blocks)
}

fn complex_from_parts(re: &RealMatrix, im: &RealMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(re.nrows(), re.ncols(), |r, c| Complex::new(re[(r, c)], im[(r, c)]))
}

/// Offsets of each block's leading coordinate.
fn block_offsets(blocks: &[ModeBlock]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut at = 0;
    for b in blocks {
        offsets.push(at);
        at += match b {
            ModeBlock::Real { .. } => 1,
            ModeBlock::Pair { .. } => 2,
        };
    }
    offsets
}

/// Right-multiply by M^-1 (per pair: col_j' = (col_j + col_j1)/2,
/// col_j1' = i (col_j1 - col_j)/2).
fn apply_minv_columns(mat: &mut ComplexMatrix, blocks: &[ModeBlock]) {
    let half = Complex::new(0.5, 0.0);
    let half_i = Complex::new(0.0, 0.5);
    for (b, &j) in blocks.iter().zip(block_offsets(blocks).iter()) {
        if let ModeBlock::Pair { .. } = b {
            for r in 0..mat.nrows() {
                let cj = mat[(r, j)];
                let cj1 = mat[(r, j + 1)];
                mat[(r, j)] = (cj + cj1) * half;
                mat[(r, j + 1)] = (cj1 - cj) * half_i;
            }
        }
    }
}

/// Left-multiply by M (per pair: row_j' = row_j + row_j1,
/// row_j1' = i (row_j - row_j1)).
fn apply_m_rows(mat: &mut ComplexMatrix, blocks: &[ModeBlock]) {
    let i_unit = Complex::new(0.0, 1.0);
    for (b, &j) in blocks.iter().zip(block_offsets(blocks).iter()) {
        if let ModeBlock::Pair { .. } = b {
            for c in 0..mat.ncols() {
                let rj = mat[(j, c)];
                let rj1 = mat[(j + 1, c)];
                mat[(j, c)] = rj + rj1;
                mat[(j + 1, c)] = (rj - rj1) * i_unit;
            }
        }
    }
}

/// Realify a complex coordinate vector (pair entries become
/// `(2 Re, -2 Im)` of the + component).
pub(crate) fn realify_vector(y: &ComplexVector, blocks: &[ModeBlock]) -> DVector<f64> {
    let mut out = DVector::zeros(y.len());
    for (b, &j) in blocks.iter().zip(block_offsets(blocks).iter()) {
        match b {
            ModeBlock::Real { .. } => out[j] = y[j].re,
            ModeBlock::Pair { .. } => {
                let yj = y[j];
                let yj1 = y[j + 1];
                out[j] = (yj + yj1).re;
                out[j + 1] = ((yj - yj1) * Complex::new(0.0, 1.0)).re;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdmd;
    use crate::numerics;
    use crate::observables::{LiftedSnapshotSet, ObservableDictionary};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Hand-built spectrum for selection tests.
    fn synthetic_spectrum(
        eigenvalues: Vec<Complex<f64>>,
        powers: Vec<f64>,
        partners: Vec<Option<usize>>,
    ) -> KoopmanSpectrum {
        let m = eigenvalues.len();
        KoopmanSpectrum {
            eigenvalues,
            modes: ComplexMatrix::identity(m, m),
            adjoint_modes: ComplexMatrix::identity(m, m),
            mode_powers: powers,
            conj_partner: partners,
            source_index: (0..m).collect(),
        }
    }

    #[test]
    fn select_all_modes_returns_all_indices() {
        let spec = synthetic_spectrum(
            vec![Complex::new(0.9, 0.0), Complex::new(0.5, 0.0)],
            vec![2.0, 1.0],
            vec![None, None],
        );
        assert_eq!(select_modes(&spec, 2), vec![0, 1]);
    }

    #[test]
    fn selection_closes_under_conjugation() {
        // Powers (5, 3, 3, 1) with entries 1 and 2 a conjugate pair.
        let spec = synthetic_spectrum(
            vec![
                Complex::new(0.9, 0.0),
                Complex::new(0.5, 0.4),
                Complex::new(0.5, -0.4),
                Complex::new(0.2, 0.0),
            ],
            vec![5.0, 3.0, 3.0, 1.0],
            vec![None, Some(2), Some(1), None],
        );
        assert_eq!(select_modes(&spec, 2), vec![0, 1, 2]);
        assert_eq!(select_modes(&spec, 1), vec![0]);
    }

    fn model_from_a(a: RealMatrix) -> LiftedModel {
        let m = a.nrows();
        LiftedModel {
            a,
            b: RealMatrix::from_fn(m, 1, |r, _| 1.0 + r as f64),
            c: RealMatrix::identity(m, m),
            dictionary: ObservableDictionary::delay(0, m),
            sample_dt: 0.02,
            training_snapshots: 0,
        }
    }

    #[test]
    fn diagonal_projection_keeps_selected_eigenvalues() {
        let model = model_from_a(RealMatrix::from_partial_diagonal(3, 3, &[0.9, 0.5, 0.1]));
        let spec = synthetic_spectrum(
            vec![Complex::new(0.9, 0.0), Complex::new(0.5, 0.0), Complex::new(0.1, 0.0)],
            vec![3.0, 2.0, 1.0],
            vec![None, None, None],
        );
        let rm = project(&model, &spec, &[0, 1]).unwrap();
        assert_eq!(rm.dim(), 2);
        assert_relative_eq!(rm.a, RealMatrix::from_partial_diagonal(2, 2, &[0.9, 0.5]), epsilon = 1e-12);
        assert_relative_eq!(rm.b, RealMatrix::from_row_slice(2, 1, &[1.0, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn conjugate_pair_realifies_to_rotation_block() {
        // A with eigenvalues a +/- bi and one real mode.
        let (a, b) = (0.8, 0.3);
        let model = model_from_a(RealMatrix::from_row_slice(
            3,
            3,
            &[a, b, 0.0, -b, a, 0.0, 0.0, 0.0, 0.5],
        ));
        let spec = hdmd::spectrum(
            &model,
            &LiftedSnapshotSet {
                x_lift: RealMatrix::identity(3, 3),
                x_plus_lift: model.a.clone(),
                u: RealMatrix::zeros(1, 3),
                dictionary: model.dictionary,
                sample_dt: 0.02,
            },
        )
        .unwrap();
        let pair_sel: Vec<usize> = (0..3)
            .filter(|&i| spec.eigenvalues[i].im != 0.0)
            .collect();
        assert_eq!(pair_sel.len(), 2);
        let rm = project(&model, &spec, &pair_sel).unwrap();
        assert!(rm.realification_imag < 1e-12);
        let at = &rm.a;
        assert_relative_eq!(at[(0, 0)], a, epsilon = 1e-9);
        assert_relative_eq!(at[(1, 1)], a, epsilon = 1e-9);
        assert_relative_eq!(at[(0, 1)], b.abs(), epsilon = 1e-9);
        assert_relative_eq!(at[(1, 0)], -b.abs(), epsilon = 1e-9);
    }

    #[test]
    fn full_selection_preserves_eigenvalues_and_rollout() {
        let mut rng = StdRng::seed_from_u64(14);
        let mut a = RealMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        a *= 0.9 / numerics::spectral_radius(&a).unwrap();
        let model = model_from_a(a);
        let training = LiftedSnapshotSet {
            x_lift: RealMatrix::from_fn(6, 40, |_, _| rng.gen_range(-1.0..1.0)),
            x_plus_lift: RealMatrix::zeros(6, 40),
            u: RealMatrix::zeros(1, 40),
            dictionary: model.dictionary,
            sample_dt: 0.02,
        };
        let spec = hdmd::spectrum(&model, &training).unwrap();
        let all: Vec<usize> = (0..6).collect();
        let rm = project(&model, &spec, &all).unwrap();

        // Eigenvalue multiset preserved to 1e-8.
        let mut got: Vec<(f64, f64)> = numerics::eigenvalues(&rm.a)
            .unwrap()
            .iter()
            .map(|l| (l.re, l.im))
            .collect();
        let mut want: Vec<(f64, f64)> = spec.eigenvalues.iter().map(|l| (l.re, l.im)).collect();
        let key = |p: &(f64, f64)| (p.0, p.1);
        got.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        want.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g.0 - w.0).abs() < 1e-8 && (g.1 - w.1).abs() < 1e-8);
        }

        // Rollout equivalence against the unreduced model.
        let steps = 60;
        let inputs = RealMatrix::from_fn(1, steps, |_, k| (k as f64 * 0.1).sin());
        let z0 = DVector::from_fn(6, |r, _| 0.3 * (r as f64 + 1.0));
        let z0_red = rm.reduce_state(&z0).unwrap();
        let predicted = reduced_rollout(&rm, &z0_red, &inputs).unwrap();
        let mut z = z0.clone();
        let mut max_rel = 0.0f64;
        for k in 0..=steps {
            let x_full = &model.c * &z;
            let err = (predicted.column(k) - &x_full).norm() / x_full.norm().max(1e-9);
            max_rel = max_rel.max(err);
            if k < steps {
                z = &model.a * z + &model.b * inputs.column(k);
            }
        }
        assert!(max_rel < 1e-6, "rollout deviated by {max_rel}");
    }

    #[test]
    fn trivial_rollout_cases() {
        let model = model_from_a(RealMatrix::from_partial_diagonal(2, 2, &[0.9, 0.2]));
        let spec = synthetic_spectrum(
            vec![Complex::new(0.9, 0.0), Complex::new(0.2, 0.0)],
            vec![2.0, 1.0],
            vec![None, None],
        );
        let rm = project(&model, &spec, &[0, 1]).unwrap();
        // Zero state, zero input: identically zero output.
        let out = reduced_rollout(&rm, &DVector::zeros(2), &RealMatrix::zeros(1, 10)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        // Stable A, bounded inputs: bounded outputs over 10^4 steps.
        let inputs = RealMatrix::from_fn(1, 10_000, |_, k| if k % 2 == 0 { 1.0 } else { -1.0 });
        let out = reduced_rollout(&rm, &DVector::from_element(2, 1.0), &inputs).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e3));
    }

    #[test]
    fn cumulative_power_is_monotone_in_n() {
        let spec = synthetic_spectrum(
            vec![
                Complex::new(0.9, 0.0),
                Complex::new(0.7, 0.0),
                Complex::new(0.5, 0.0),
                Complex::new(0.2, 0.0),
            ],
            vec![4.0, 2.0, 1.0, 0.5],
            vec![None, None, None, None],
        );
        let mut prev = 0.0;
        for n in 1..=4 {
            let cum = spec.cumulative_power(n);
            assert!(cum >= prev);
            prev = cum;
        }
        assert_relative_eq!(prev, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_basis_is_rejected() {
        let model = model_from_a(RealMatrix::from_partial_diagonal(2, 2, &[0.9, 0.5]));
        let mut spec = synthetic_spectrum(
            vec![Complex::new(0.9, 0.0), Complex::new(0.5, 0.0)],
            vec![2.0, 1.0],
            vec![None, None],
        );
        // Two identical mode columns: rank-deficient selection.
        let col0 = spec.modes.column(0).clone_owned();
        spec.modes.column_mut(1).copy_from(&col0);
        assert!(matches!(
            project(&model, &spec, &[0, 1]),
            Err(Error::IllConditionedBasis { .. })
        ));
    }

    #[test]
    fn non_closed_selection_is_rejected() {
        let spec = synthetic_spectrum(
            vec![Complex::new(0.5, 0.4), Complex::new(0.5, -0.4)],
            vec![1.0, 1.0],
            vec![Some(1), Some(0)],
        );
        let model = model_from_a(RealMatrix::from_row_slice(2, 2, &[0.5, 0.4, -0.4, 0.5]));
        assert!(matches!(
            project(&model, &spec, &[0]),
            Err(Error::InvalidSpec(_))
        ));
    }
}
