//! Least-squares identification of the lifted linear input/output system
//! `z+ = A z + B u`, `x = C z`, and the Koopman spectrum of the fitted `A`
//! with per-mode powers averaged over the training data.

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix, RealMatrix};
use crate::observables::{projection_matrix, LiftedSnapshotSet, ObservableDictionary};

/// Lifted linear model `z+ = A z + B u`, `x = C z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    pub dictionary: ObservableDictionary,
    pub sample_dt: f64,
    pub training_snapshots: usize,
}

impl LiftedModel {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Content hash of the model matrices (FNV-1a over dimensions and
    /// little-endian entry bytes); used to chain downstream artifacts.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for m in [&self.a, &self.b, &self.c] {
            eat(&(m.nrows() as u64).to_le_bytes());
            eat(&(m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                eat(&v.to_le_bytes());
            }
        }
        eat(&self.sample_dt.to_le_bytes());
        h
    }
}

/// Fit `[A B] = X+_lift ([X_lift; U])^+` with the default singular-value
/// cutoff.
pub fn fit(data: &LiftedSnapshotSet) -> Result<LiftedModel> {
    fit_with_rcond(data, numerics::DEFAULT_RCOND)
}

pub fn fit_with_rcond(data: &LiftedSnapshotSet, rcond: f64) -> Result<LiftedModel> {
    let k = data.len();
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let m = data.lifted_dim();
    let p = data.input_dim();
    if data.x_plus_lift.shape() != (m, k) || data.u.ncols() != k {
        return Err(Error::InvalidMatrix("misaligned lifted snapshot matrices".into()));
    }

    // Stack [X_lift; U]; p = 0 degenerates to the plain DMD fit.
    let mut g = RealMatrix::zeros(m + p, k);
    g.view_mut((0, 0), (m, k)).copy_from(&data.x_lift);
    if p > 0 {
        g.view_mut((m, 0), (p, k)).copy_from(&data.u);
    }
    let g_pinv = numerics::pseudoinverse(&g, rcond)?;
    drop(g);
    let ab = &data.x_plus_lift * g_pinv;

    Ok(LiftedModel {
        a: ab.columns(0, m).into_owned(),
        b: ab.columns(m, p).into_owned(),
        c: projection_matrix(&data.dictionary),
        dictionary: data.dictionary,
        sample_dt: data.sample_dt,
        training_snapshots: k,
    })
}

/// Eigen-triplets of the fitted `A` ranked by mode power.
///
/// Entries are sorted by descending `mode_powers` (ties: larger eigenvalue
/// magnitude, then source order), which keeps conjugate pairs adjacent since
/// partners share bitwise-identical power and magnitude. `source_index` maps
/// back to the unsorted eigendecomposition.
#[derive(Debug, Clone)]
pub struct KoopmanSpectrum {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Right eigenvectors (Koopman modes), one column per entry.
    pub modes: ComplexMatrix,
    /// Left eigenvectors scaled so `<v_i, w_j> = delta_ij`.
    pub adjoint_modes: ComplexMatrix,
    /// Mean of `|<z_k, w_i>|` over all training columns, sorted descending.
    pub mode_powers: Vec<f64>,
    pub conj_partner: Vec<Option<usize>>,
    pub source_index: Vec<usize>,
}

impl KoopmanSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Cumulative power share of the first `n` (sorted) entries.
    pub fn cumulative_power(&self, n: usize) -> f64 {
        let total: f64 = self.mode_powers.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        self.mode_powers.iter().take(n).sum::<f64>() / total
    }
}

/// Koopman spectrum of a fitted model, with mode powers averaged over the
/// lifted training snapshots: `power_i = mean_k |<z_k, w_i>|`.
pub fn spectrum(model: &LiftedModel, training: &LiftedSnapshotSet) -> Result<KoopmanSpectrum> {
    if training.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let m = model.lifted_dim();
    if training.lifted_dim() != m {
        return Err(Error::InvalidMatrix(format!(
            "training lift dim {} does not match model dim {m}",
            training.lifted_dim()
        )));
    }
    let eig = numerics::eig_biorthonormal(&model.a)?;

    // phi = W^H Z via two real products: (Re W)^T Z - i (Im W)^T Z.
    let w_re = eig.left.map(|c| c.re);
    let w_im = eig.left.map(|c| c.im);
    let phi_re = w_re.tr_mul(&training.x_lift);
    let phi_im = w_im.tr_mul(&training.x_lift);
    let k = training.len() as f64;
    let powers: Vec<f64> = (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for col in 0..training.len() {
                acc += phi_re[(i, col)].hypot(-phi_im[(i, col)]);
            }
            acc / k
        })
        .collect();

    // Descending power; ties by |lambda| then source order. Conjugate pairs
    // tie bitwise on both keys, so partners stay adjacent (+Im first).
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        powers[j]
            .partial_cmp(&powers[i])
            .unwrap()
            .then(eig.values[j].norm().partial_cmp(&eig.values[i].norm()).unwrap())
            .then(i.cmp(&j))
    });
    let mut rank = vec![0usize; m];
    for (new_idx, &src) in order.iter().enumerate() {
        rank[src] = new_idx;
    }

    let mut modes = ComplexMatrix::zeros(m, m);
    let mut adjoint_modes = ComplexMatrix::zeros(m, m);
    let mut eigenvalues = Vec::with_capacity(m);
    let mut mode_powers = Vec::with_capacity(m);
    let mut conj_partner = vec![None; m];
    for (new_idx, &src) in order.iter().enumerate() {
        modes.column_mut(new_idx).copy_from(&eig.right.column(src));
        adjoint_modes.column_mut(new_idx).copy_from(&eig.left.column(src));
        eigenvalues.push(eig.values[src]);
        mode_powers.push(powers[src]);
        conj_partner[new_idx] = eig.conj_partner[src].map(|p| rank[p]);
    }

    Ok(KoopmanSpectrum {
        eigenvalues,
        modes,
        adjoint_modes,
        mode_powers,
        conj_partner,
        source_index: order,
    })
}
