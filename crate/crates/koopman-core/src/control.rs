//! LQR design on the (full or reduced) lifted model and open-loop deployment
//! of the planned input sequence to the surrogate plant. The control law is
//! `u = clamp(-K (z - z_ref))`: inputs are computed against the model once,
//! frozen, and replayed on the plant without feedback.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hdmd::LiftedModel;
use crate::numerics::{self, RealMatrix};
use crate::observables::{lift_point, ObservableDictionary};
use crate::plant::{self, PlantConfig, PlantState, Trajectory};
use crate::reduce::ReducedModel;

/// Borrowed (A, B, C) triple so planning and design work identically on full
/// and reduced models.
#[derive(Clone, Copy)]
pub struct ModelMatrices<'a> {
    pub a: &'a RealMatrix,
    pub b: &'a RealMatrix,
    pub c: &'a RealMatrix,
}

impl<'a> From<&'a LiftedModel> for ModelMatrices<'a> {
    fn from(m: &'a LiftedModel) -> Self {
        ModelMatrices { a: &m.a, b: &m.b, c: &m.c }
    }
}

impl<'a> From<&'a ReducedModel> for ModelMatrices<'a> {
    fn from(m: &'a ReducedModel) -> Self {
        ModelMatrices { a: &m.a, b: &m.b, c: &m.c }
    }
}

/// An LQR gain with its target and actuation limits.
#[derive(Debug, Clone)]
pub struct LqrDesign {
    /// State penalty on the projected (observed) state.
    pub q: RealMatrix,
    /// Input penalty.
    pub r: RealMatrix,
    pub gain: RealMatrix,
    pub x_ref: DVector<f64>,
    pub z_ref: DVector<f64>,
    pub u_bounds: (f64, f64),
    pub horizon: usize,
    pub closed_loop_radius: f64,
    pub dare_iterations: usize,
}

/// Open-loop plan: the frozen input sequence, the model-predicted projected
/// states, and how often the actuator bounds clipped the raw LQR command.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub inputs: RealMatrix,
    pub predicted: RealMatrix,
    pub saturation_fraction: f64,
}

/// Lift a target pose into the model's coordinates: a steady-pose history for
/// delay dictionaries, elementwise powers for monomials, then the reduced
/// realified coordinates when a reduced model is given.
pub fn lift_reference(
    x_ref: &DVector<f64>,
    dict: &ObservableDictionary,
    rm: Option<&ReducedModel>,
) -> Result<DVector<f64>> {
    let history = RealMatrix::from_fn(x_ref.len(), dict.history_len(), |r, _| x_ref[r]);
    let z_ref = lift_point(&history, dict)?;
    match rm {
        Some(rm) => rm.reduce_state(&z_ref),
        None => Ok(z_ref),
    }
}

/// Solve the Riccati problem for the given model with the observed-state
/// penalty lifted through the projection (`Q_z = C^T Q C`) and certify the
/// closed loop.
pub fn design(
    mats: ModelMatrices<'_>,
    q: &RealMatrix,
    r: &RealMatrix,
    x_ref: DVector<f64>,
    z_ref: DVector<f64>,
    u_bounds: (f64, f64),
    horizon: usize,
) -> Result<LqrDesign> {
    let n = mats.a.nrows();
    if mats.c.nrows() != q.nrows() || mats.c.ncols() != n || z_ref.len() != n {
        return Err(Error::InvalidMatrix("design dimensions inconsistent".into()));
    }
    if u_bounds.0 > u_bounds.1 {
        return Err(Error::InvalidSpec(format!(
            "input bounds ({}, {}) are inverted",
            u_bounds.0, u_bounds.1
        )));
    }
    let q_z = mats.c.tr_mul(&(q * mats.c));
    let sol = numerics::solve_dare(mats.a, mats.b, &q_z, r)?;
    let closed_loop = mats.a - mats.b * &sol.gain;
    let rho = numerics::spectral_radius(&closed_loop)?;
    if !(rho < 1.0) {
        return Err(Error::NoStabilizingSolution { iterations: sol.iterations, residual: rho });
    }
    Ok(LqrDesign {
        q: q.clone(),
        r: r.clone(),
        gain: sol.gain,
        x_ref,
        z_ref,
        u_bounds,
        horizon,
        closed_loop_radius: rho,
        dare_iterations: sol.iterations,
    })
}

/// Simulate the control law on the model from `z0`, clamping each input to
/// the actuator bounds, and freeze the resulting sequence.
pub fn plan_open_loop(
    design: &LqrDesign,
    mats: ModelMatrices<'_>,
    z0: &DVector<f64>,
    steps: usize,
    feedforward: Option<&DVector<f64>>,
) -> Result<PlanResult> {
    let n = mats.a.nrows();
    let p = mats.b.ncols();
    if z0.len() != n || design.gain.shape() != (p, n) {
        return Err(Error::InvalidMatrix("plan dimensions inconsistent".into()));
    }
    if let Some(u_ref) = feedforward {
        if u_ref.len() != p {
            return Err(Error::InvalidMatrix("feedforward length mismatch".into()));
        }
    }
    let (lo, hi) = design.u_bounds;
    let mut inputs = RealMatrix::zeros(p, steps);
    let mut predicted = RealMatrix::zeros(mats.c.nrows(), steps + 1);
    let mut z = z0.clone();
    let mut clipped = 0usize;
    predicted.column_mut(0).copy_from(&(mats.c * &z));
    for k in 0..steps {
        let mut u = -(&design.gain * (&z - &design.z_ref));
        if let Some(u_ref) = feedforward {
            u += u_ref;
        }
        for c in 0..p {
            let raw = u[c];
            let clamped = raw.clamp(lo, hi);
            if clamped != raw {
                clipped += 1;
            }
            u[c] = clamped;
        }
        inputs.column_mut(k).copy_from(&u);
        z = mats.a * z + mats.b * &u;
        predicted.column_mut(k + 1).copy_from(&(mats.c * &z));
    }
    let saturation_fraction = if steps == 0 { 0.0 } else { clipped as f64 / (steps * p) as f64 };
    Ok(PlanResult { inputs, predicted, saturation_fraction })
}

/// Replay a frozen input sequence on the plant (no feedback).
pub fn deploy(x0: &PlantState, inputs: &RealMatrix, cfg: &PlantConfig) -> Result<Trajectory> {
    plant::simulate(x0, inputs, cfg)
}

/// Quadratic tracking cost over a projected trajectory and its inputs.
pub fn quadratic_cost(
    q: &RealMatrix,
    r: &RealMatrix,
    x_ref: &DVector<f64>,
    states: &RealMatrix,
    inputs: &RealMatrix,
) -> f64 {
    let mut j = 0.0;
    for k in 0..states.ncols() {
        let e = states.column(k) - x_ref;
        j += (q * &e).dot(&e);
    }
    for k in 0..inputs.ncols() {
        let u = inputs.column(k);
        j += (r * u).dot(&inputs.column(k));
    }
    j
}

/// Training-set input at the snapshot nearest the target pose; the optional
/// feedforward estimate for holding a pose against gravity.
pub fn nearest_training_input(traj: &Trajectory, x_ref: &DVector<f64>) -> Result<(usize, DVector<f64>)> {
    if traj.transitions() == 0 {
        return Err(Error::InsufficientData { needed: 2, got: traj.len() });
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for k in 0..traj.len() {
        let d = (traj.states.column(k) - x_ref).norm();
        if d < best_dist {
            best_dist = d;
            best = k;
        }
    }
    let col = best.min(traj.transitions() - 1);
    Ok((best, traj.inputs.column(col).clone_owned()))
}

/// Build the lifted initial condition from the most recent plant samples
/// (a rested plant has a constant history).
pub fn initial_lift(
    history: &RealMatrix,
    dict: &ObservableDictionary,
    rm: Option<&ReducedModel>,
) -> Result<DVector<f64>> {
    let z0 = lift_point(history, dict)?;
    match rm {
        Some(rm) => rm.reduce_state(&z0),
        None => Ok(z0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hdmd;
    use crate::observables::{delay_lift, DictionaryKind};
    use crate::signals;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scalar_model(a: f64, b: f64) -> LiftedModel {
        LiftedModel {
            a: RealMatrix::from_element(1, 1, a),
            b: RealMatrix::from_element(1, 1, b),
            c: RealMatrix::identity(1, 1),
            dictionary: ObservableDictionary::delay(0, 1),
            sample_dt: 0.02,
            training_snapshots: 0,
        }
    }

    #[test]
    fn scalar_design_matches_dare_oracle() {
        let model = scalar_model(0.5, 1.0);
        let q = RealMatrix::identity(1, 1);
        let r = RealMatrix::identity(1, 1);
        let d = design(
            (&model).into(),
            &q,
            &r,
            DVector::zeros(1),
            DVector::zeros(1),
            (-1e9, 1e9),
            10,
        )
        .unwrap();
        assert!((d.gain[(0, 0)] - 0.26557).abs() < 1e-5);
        assert!(d.closed_loop_radius < 1.0);
    }

    #[test]
    fn zero_state_penalty_gives_zero_gain() {
        let model = scalar_model(0.5, 1.0);
        let q = RealMatrix::zeros(1, 1);
        let r = RealMatrix::identity(1, 1);
        let d = design(
            (&model).into(),
            &q,
            &r,
            DVector::zeros(1),
            DVector::zeros(1),
            (-1.0, 1.0),
            10,
        )
        .unwrap();
        assert!(d.gain.norm() < 1e-12);
    }

    #[test]
    fn lift_reference_by_dictionary() {
        let x_ref = DVector::from_vec(vec![0.1, -0.2]);
        let d0 = ObservableDictionary::delay(0, 2);
        assert_eq!(lift_reference(&x_ref, &d0, None).unwrap(), x_ref);

        let d2 = ObservableDictionary::delay(2, 2);
        let z = lift_reference(&x_ref, &d2, None).unwrap();
        assert_eq!(z.len(), 6);
        for b in 0..3 {
            assert_eq!(z[2 * b], 0.1);
            assert_eq!(z[2 * b + 1], -0.2);
        }
        // C z_ref = x_ref for delay lifts.
        let c = crate::observables::projection_matrix(&d2);
        assert_eq!(&c * &z, x_ref);

        let m3 = ObservableDictionary::monomial(3, 2);
        let z = lift_reference(&x_ref, &m3, None).unwrap();
        assert_relative_eq!(z[2], 0.1 * 0.1, epsilon = 1e-15);
        assert_relative_eq!(z[5], -0.2f64.powi(3), epsilon = 1e-15);
    }

    #[test]
    fn plan_from_reference_fixed_point_is_stationary() {
        // z_ref is an equilibrium of A, so with clamp(0) = 0 the plan stays put.
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let b = RealMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let model = LiftedModel {
            a,
            b,
            c: RealMatrix::identity(2, 2),
            dictionary: ObservableDictionary::delay(0, 2),
            sample_dt: 0.02,
            training_snapshots: 0,
        };
        let q = RealMatrix::identity(2, 2);
        let r = RealMatrix::identity(1, 1);
        let z_ref = DVector::from_vec(vec![2.0, 0.0]);
        let d = design(
            (&model).into(),
            &q,
            &r,
            z_ref.clone(),
            z_ref.clone(),
            (-1.0, 1.0),
            50,
        )
        .unwrap();
        let plan = plan_open_loop(&d, (&model).into(), &z_ref, 50, None).unwrap();
        assert!(plan.inputs.amax() < 1e-12);
        for k in 0..=50 {
            assert_relative_eq!(plan.predicted[(0, k)], 2.0, epsilon = 1e-10);
            assert_relative_eq!(plan.predicted[(1, k)], 0.0, epsilon = 1e-10);
        }
        assert_eq!(plan.saturation_fraction, 0.0);
    }

    #[test]
    fn unclamped_plan_is_cost_optimal_against_perturbations() {
        let mut rng = StdRng::seed_from_u64(77);
        let mut a = RealMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        a *= 0.8 / numerics::spectral_radius(&a).unwrap();
        let b = RealMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let model = LiftedModel {
            a: a.clone(),
            b: b.clone(),
            c: RealMatrix::identity(3, 3),
            dictionary: ObservableDictionary::delay(0, 3),
            sample_dt: 0.02,
            training_snapshots: 0,
        };
        let q = RealMatrix::identity(3, 3);
        let r = RealMatrix::identity(2, 2) * 0.5;
        let x_ref = DVector::zeros(3);
        let d = design(
            (&model).into(),
            &q,
            &r,
            x_ref.clone(),
            x_ref.clone(),
            (-1e9, 1e9),
            300,
        )
        .unwrap();
        let z0 = DVector::from_vec(vec![1.0, -0.5, 0.25]);
        let plan = plan_open_loop(&d, (&model).into(), &z0, 300, None).unwrap();
        assert_eq!(plan.saturation_fraction, 0.0);
        let j_opt = quadratic_cost(&q, &r, &x_ref, &plan.predicted, &plan.inputs);

        // Replaying any perturbed input sequence on the model costs more.
        for trial in 0..5 {
            let mut u_pert = plan.inputs.clone();
            let mut rng_t = StdRng::seed_from_u64(100 + trial);
            for v in u_pert.iter_mut() {
                *v += rng_t.gen_range(-0.01..0.01);
            }
            let mut z = z0.clone();
            let mut states = RealMatrix::zeros(3, 301);
            states.column_mut(0).copy_from(&z);
            for k in 0..300 {
                z = &a * z + &b * u_pert.column(k);
                states.column_mut(k + 1).copy_from(&z);
            }
            let j_pert = quadratic_cost(&q, &r, &x_ref, &states, &u_pert);
            assert!(
                j_pert > j_opt - 1e-9,
                "perturbation beat the LQR plan: {j_pert} < {j_opt}"
            );
        }
    }

    #[test]
    fn planned_inputs_respect_actuator_bounds() {
        let model = scalar_model(0.9, 1.0);
        let q = RealMatrix::identity(1, 1) * 10.0;
        let r = RealMatrix::identity(1, 1);
        let z_ref = DVector::from_element(1, 5.0);
        let d = design(
            (&model).into(),
            &q,
            &r,
            z_ref.clone(),
            z_ref.clone(),
            (0.3, 0.85),
            100,
        )
        .unwrap();
        let plan = plan_open_loop(&d, (&model).into(), &DVector::zeros(1), 100, None).unwrap();
        for v in plan.inputs.iter() {
            assert!((0.3..=0.85).contains(v), "input {v} escaped bounds");
        }
        assert!(plan.saturation_fraction > 0.0);
    }

    #[test]
    fn surrogate_design_stabilizes_short_delay_model() {
        let cfg = plant::PlantConfig {
            noise_std: 1e-4,
            noise_seed: 3,
            ..plant::PlantConfig::default()
        };
        let eq = plant::equilibrium(&cfg).unwrap();
        let sig = signals::SignalSpec::gaussian(40.0, cfg.sample_dt, 11);
        let traj = plant::simulate(&eq, &signals::gaussian_signal(&sig).unwrap(), &cfg).unwrap();
        let set = delay_lift(&traj, 1).unwrap();
        let model = hdmd::fit(&set).unwrap();
        assert_eq!(model.dictionary.kind, DictionaryKind::Delay);
        let q = RealMatrix::identity(45, 45);
        let r = RealMatrix::identity(3, 3) * 10.0;
        let x_ref = traj.states.column(500).clone_owned();
        let z_ref = lift_reference(&x_ref, &model.dictionary, None).unwrap();
        let d = design((&model).into(), &q, &r, x_ref, z_ref, (0.3, 0.85), 100).unwrap();
        assert!(d.closed_loop_radius < 1.0);
    }

    #[test]
    fn deploy_is_deterministic_and_zero_length_is_identity() {
        let cfg = plant::PlantConfig::default();
        let eq = plant::equilibrium(&cfg).unwrap();
        let empty = deploy(&eq, &RealMatrix::zeros(3, 0), &cfg).unwrap();
        assert_eq!(empty.len(), 1);
        assert_eq!(empty.states.column(0), plant::observe(&eq));

        let inputs = RealMatrix::from_element(3, 40, 0.55);
        let t1 = deploy(&eq, &inputs, &cfg).unwrap();
        let t2 = deploy(&eq, &inputs, &cfg).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn nearest_training_input_finds_the_snapshot() {
        let states = RealMatrix::from_fn(2, 5, |r, c| (c as f64) + 0.1 * r as f64);
        let inputs = RealMatrix::from_fn(3, 4, |_, c| 0.1 * (c as f64 + 1.0));
        let traj = Trajectory { sample_dt: 0.02, states, inputs };
        let x_ref = DVector::from_vec(vec![3.02, 3.1]);
        let (idx, u) = nearest_training_input(&traj, &x_ref).unwrap();
        assert_eq!(idx, 3);
        assert_relative_eq!(u[0], 0.4, epsilon = 1e-12);
    }
}
