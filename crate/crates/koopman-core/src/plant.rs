//! Nonlinear surrogate plant: a gravity-loaded chain of point masses with a
//! heavy tip, cubic-stiffened axial springs, next-nearest-neighbor bending
//! springs, and three helically biased muscle force fields. It stands in for
//! the physical arm and its motion-capture rig; `observe` plays the role of
//! the fifteen LED trackers (45 coordinates).
//!
//! Node 0 is clamped at the origin; the `node_count` moving nodes hang along
//! -z at rest. All dynamics are integrated with semi-implicit Euler at
//! `integrator_dt`, sampled every `sample_dt`.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

pub const INPUT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub node_count: usize,
    /// Rest length of one segment, meters.
    pub segment_rest_length: f64,
    /// Linear axial spring constant k1, N/m.
    pub axial_stiffness: f64,
    /// Cubic axial spring constant k3, N/m^3.
    pub cubic_stiffness: f64,
    /// Next-nearest-neighbor bending spring constant, N/m.
    pub bending_stiffness: f64,
    /// Viscous damping on each node, N s/m.
    pub damping: f64,
    pub node_mass: f64,
    /// Extra mass adhered to the tip node, kg.
    pub tip_extra_mass: f64,
    /// Muscle force per unit input on each node, N.
    pub muscle_gain: f64,
    /// Helical phase advance per node, rad.
    pub helical_pitch: f64,
    /// Axial (z) component of the muscle direction before normalization.
    pub axial_component: f64,
    /// Gravitational acceleration, m/s^2, acting along -z.
    pub gravity: f64,
    pub integrator_dt: f64,
    pub sample_dt: f64,
    /// Additive Gaussian sensor noise on recorded observations, meters.
    /// Zero disables the noise path entirely.
    pub noise_std: f64,
    pub noise_seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            node_count: 15,
            segment_rest_length: 0.05,
            axial_stiffness: 50.0,
            cubic_stiffness: 5000.0,
            bending_stiffness: 10.0,
            damping: 0.05,
            node_mass: 0.0008,
            tip_extra_mass: 0.040,
            muscle_gain: 0.02,
            helical_pitch: 0.3,
            axial_component: 0.5,
            gravity: 9.81,
            integrator_dt: 0.002,
            sample_dt: 0.02,
            noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 2 {
            return Err(Error::InvalidSpec("plant needs at least 2 nodes".into()));
        }
        for (name, v) in [
            ("segment_rest_length", self.segment_rest_length),
            ("axial_stiffness", self.axial_stiffness),
            ("cubic_stiffness", self.cubic_stiffness),
            ("bending_stiffness", self.bending_stiffness),
            ("node_mass", self.node_mass),
            ("integrator_dt", self.integrator_dt),
            ("sample_dt", self.sample_dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("plant {name} must be positive")));
            }
        }
        for (name, v) in [
            ("damping", self.damping),
            ("tip_extra_mass", self.tip_extra_mass),
            ("muscle_gain", self.muscle_gain),
            ("gravity", self.gravity),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("plant {name} must be nonnegative")));
            }
        }
        self.substeps()?;
        Ok(())
    }

    /// Number of integrator substeps per sample; sample_dt must be an
    /// integer multiple of integrator_dt.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.sample_dt / self.integrator_dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "sample_dt {} is not an integer multiple of integrator_dt {}",
                self.sample_dt, self.integrator_dt
            )));
        }
        Ok(n as usize)
    }

    pub fn state_dim(&self) -> usize {
        3 * self.node_count
    }

    fn mass(&self, node: usize) -> f64 {
        if node == self.node_count - 1 {
            self.node_mass + self.tip_extra_mass
        } else {
            self.node_mass
        }
    }
}

/// Positions and velocities of the moving nodes (the clamped base node is
/// implicit at the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
}

impl PlantState {
    /// Straight rest configuration hanging along -z with unstretched segments.
    pub fn rest_line(cfg: &PlantConfig) -> PlantState {
        let positions = (0..cfg.node_count)
            .map(|j| Vector3::new(0.0, 0.0, -(((j + 1) as f64) * cfg.segment_rest_length)))
            .collect();
        let velocities = vec![Vector3::zeros(); cfg.node_count];
        PlantState { positions, velocities }
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(self.velocities.iter()).all(|v| {
            v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
        })
    }
}

/// Time-indexed observation/input record at a fixed sample period.
///
/// `states` has one column per sample (3 * node_count rows); `inputs` holds
/// the input active during each transition, so it has one column fewer.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_dt: f64,
    pub states: RealMatrix,
    pub inputs: RealMatrix,
}

impl Trajectory {
    pub fn new(sample_dt: f64, states: RealMatrix, inputs: RealMatrix) -> Result<Trajectory> {
        let ns = states.ncols();
        let ni = inputs.ncols();
        if ns == 0 || (ns != ni + 1 && ns != ni) {
            return Err(Error::InvalidSpec(format!(
                "trajectory with {ns} states and {ni} inputs is not aligned"
            )));
        }
        if !crate::numerics::is_finite_matrix(&states) || !crate::numerics::is_finite_matrix(&inputs)
        {
            return Err(Error::InvalidSpec("trajectory has non-finite entries".into()));
        }
        Ok(Trajectory { sample_dt, states, inputs })
    }

    /// Number of recorded samples.
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// Number of recorded transitions (snapshot pairs before lifting).
    pub fn transitions(&self) -> usize {
        self.inputs.ncols().min(self.states.ncols().saturating_sub(1))
    }

    /// Split into a training prefix and a verification suffix at a fraction of
    /// the transitions. The boundary state is shared; the transition sets are
    /// disjoint: training covers transitions `0..mid`, verification `mid..`.
    pub fn split(&self, train_fraction: f64) -> Result<(Trajectory, Trajectory)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidSpec(format!(
                "train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let k = self.transitions();
        let mid = ((k as f64) * train_fraction).floor() as usize;
        let train = Trajectory {
            sample_dt: self.sample_dt,
            states: self.states.columns(0, mid + 1).into_owned(),
            inputs: self.inputs.columns(0, mid).into_owned(),
        };
        let verify = Trajectory {
            sample_dt: self.sample_dt,
            states: self.states.columns(mid, self.states.ncols() - mid).into_owned(),
            inputs: self.inputs.columns(mid, k - mid).into_owned(),
        };
        Ok((train, verify))
    }
}

/// Flatten tracker positions into the observation vector `[p_1; ...; p_N]`.
pub fn observe(state: &PlantState) -> nalgebra::DVector<f64> {
    let n = state.positions.len();
    let mut x = nalgebra::DVector::zeros(3 * n);
    for (j, p) in state.positions.iter().enumerate() {
        x[3 * j] = p.x;
        x[3 * j + 1] = p.y;
        x[3 * j + 2] = p.z;
    }
    x
}

/// Unit muscle directions per (muscle, node); fixed by the config.
fn muscle_directions(cfg: &PlantConfig) -> Vec<[Vector3<f64>; 3]> {
    let gamma = cfg.axial_component;
    (0..cfg.node_count)
        .map(|j| {
            let node = (j + 1) as f64;
            std::array::from_fn(|i| {
                let phase = 2.0 * std::f64::consts::PI * ((i + 1) as f64) / 3.0
                    + cfg.helical_pitch * node;
                Vector3::new(phase.cos(), phase.sin(), gamma).normalize()
            })
        })
        .collect()
}

fn check_input(u: &Vector3<f64>) -> Result<()> {
    for c in [u.x, u.y, u.z] {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidSpec(format!("input component {c} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Net force on every moving node for the given state and input.
pub fn force_model(state: &PlantState, u: &Vector3<f64>, cfg: &PlantConfig) -> Vec<Vector3<f64>> {
    let dirs = muscle_directions(cfg);
    let mut forces = vec![Vector3::zeros(); cfg.node_count];
    accumulate_forces(state, u, cfg, &dirs, &mut forces);
    forces
}

fn accumulate_forces(
    state: &PlantState,
    u: &Vector3<f64>,
    cfg: &PlantConfig,
    muscle_dirs: &[[Vector3<f64>; 3]],
    forces: &mut [Vector3<f64>],
) {
    let n = cfg.node_count;
    let l0 = cfg.segment_rest_length;
    for f in forces.iter_mut() {
        *f = Vector3::zeros();
    }

    // Spring between positions a and b (rest length rest, linear k plus
    // optional cubic k3); pulls the endpoints together when stretched.
    let anchor = Vector3::zeros();
    let pos = |idx: isize| -> Vector3<f64> {
        if idx < 0 {
            anchor
        } else {
            state.positions[idx as usize]
        }
    };

    // Axial springs along consecutive segments, including the anchor segment.
    for seg in 0..n {
        let prev = seg as isize - 1;
        let d = pos(seg as isize) - pos(prev);
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let e = len - l0;
        let f_mag = cfg.axial_stiffness * e + cfg.cubic_stiffness * e * e * e;
        let f = d * (-f_mag / len);
        forces[seg] += f;
        if prev >= 0 {
            forces[prev as usize] -= f;
        }
    }

    // Next-nearest bending springs with rest length 2 L0.
    for j in 2..=n {
        let far = j as isize - 3; // node j-2 in 1-based numbering
        let near = (j - 1) as usize;
        let d = pos(near as isize) - pos(far);
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let e = len - 2.0 * l0;
        let f = d * (-cfg.bending_stiffness * e / len);
        forces[near] += f;
        if far >= 0 {
            forces[far as usize] -= f;
        }
    }

    for j in 0..n {
        // Damping and gravity.
        forces[j] -= state.velocities[j] * cfg.damping;
        forces[j].z -= cfg.mass(j) * cfg.gravity;
        // Three helically biased muscles.
        let uc = [u.x, u.y, u.z];
        for i in 0..3 {
            forces[j] += muscle_dirs[j][i] * (uc[i] * cfg.muscle_gain);
        }
    }
}

/// Advance one sample period with the input held constant, using
/// `sample_dt / integrator_dt` semi-implicit Euler substeps.
pub fn step(state: &PlantState, u: &Vector3<f64>, cfg: &PlantConfig) -> Result<PlantState> {
    check_input(u)?;
    let dirs = muscle_directions(cfg);
    let mut next = state.clone();
    step_with(&mut next, u, cfg, &dirs)?;
    Ok(next)
}

fn step_with(
    state: &mut PlantState,
    u: &Vector3<f64>,
    cfg: &PlantConfig,
    muscle_dirs: &[[Vector3<f64>; 3]],
) -> Result<()> {
    let substeps = cfg.substeps()?;
    let dt = cfg.integrator_dt;
    let mut forces = vec![Vector3::zeros(); cfg.node_count];
    for _ in 0..substeps {
        accumulate_forces(state, u, cfg, muscle_dirs, &mut forces);
        for j in 0..cfg.node_count {
            state.velocities[j] += forces[j] * (dt / cfg.mass(j));
            let vj = state.velocities[j];
            state.positions[j] += vj * dt;
        }
    }
    if !state.is_finite() {
        return Err(Error::SimulationDiverged { step: 0 });
    }
    Ok(())
}

/// Run the plant from `x0` through an input sequence (columns of `inputs`),
/// recording one observation per sample. Deterministic given (x0, inputs,
/// cfg); optional sensor noise is drawn from a config-seeded generator.
pub fn simulate(x0: &PlantState, inputs: &RealMatrix, cfg: &PlantConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if inputs.nrows() != INPUT_DIM && inputs.ncols() > 0 {
        return Err(Error::InvalidSpec(format!(
            "plant expects {INPUT_DIM} input rows, got {}",
            inputs.nrows()
        )));
    }
    let k = inputs.ncols();
    let dirs = muscle_directions(cfg);
    let mut noise = if cfg.noise_std > 0.0 {
        let rng = Xoshiro256PlusPlus::seed_from_u64(cfg.noise_seed);
        let dist = Normal::new(0.0, cfg.noise_std)
            .map_err(|e| Error::InvalidSpec(format!("noise std: {e}")))?;
        Some((rng, dist))
    } else {
        None
    };

    let mut states = RealMatrix::zeros(cfg.state_dim(), k + 1);
    let mut record = |col: usize,
                      state: &PlantState,
                      states: &mut RealMatrix,
                      noise: &mut Option<(Xoshiro256PlusPlus, Normal<f64>)>| {
        let x = observe(state);
        for row in 0..x.len() {
            let eps = match noise {
                Some((rng, dist)) => dist.sample(rng),
                None => 0.0,
            };
            states[(row, col)] = x[row] + eps;
        }
    };

    let mut state = x0.clone();
    record(0, &state, &mut states, &mut noise);
    for col in 0..k {
        let u = Vector3::new(inputs[(0, col)], inputs[(1, col)], inputs[(2, col)]);
        check_input(&u)?;
        step_with(&mut state, &u, cfg, &dirs)
            .map_err(|_| Error::SimulationDiverged { step: col })?;
        record(col + 1, &state, &mut states, &mut noise);
    }

    Ok(Trajectory { sample_dt: cfg.sample_dt, states, inputs: inputs.clone() })
}

/// Total mechanical energy: kinetic + axial/bending spring potential +
/// gravitational potential.
pub fn energy(state: &PlantState, cfg: &PlantConfig) -> f64 {
    let n = cfg.node_count;
    let l0 = cfg.segment_rest_length;
    let anchor = Vector3::zeros();
    let pos = |idx: isize| -> Vector3<f64> {
        if idx < 0 {
            anchor
        } else {
            state.positions[idx as usize]
        }
    };

    let mut e_total = 0.0;
    for j in 0..n {
        e_total += 0.5 * cfg.mass(j) * state.velocities[j].norm_squared();
        e_total += cfg.mass(j) * cfg.gravity * state.positions[j].z;
    }
    for seg in 0..n {
        let e = (pos(seg as isize) - pos(seg as isize - 1)).norm() - l0;
        e_total += 0.5 * cfg.axial_stiffness * e * e + 0.25 * cfg.cubic_stiffness * e.powi(4);
    }
    for j in 2..=n {
        let e = (pos(j as isize - 1) - pos(j as isize - 3)).norm() - 2.0 * l0;
        e_total += 0.5 * cfg.bending_stiffness * e * e;
    }
    e_total
}

/// Gravity-settled equilibrium: a 60 s zero-input settling run from the rest
/// line. This is the initial condition for every experiment.
pub fn equilibrium(cfg: &PlantConfig) -> Result<PlantState> {
    cfg.validate()?;
    let dirs = muscle_directions(cfg);
    let mut state = PlantState::rest_line(cfg);
    let u = Vector3::zeros();
    let samples = (60.0 / cfg.sample_dt).round() as usize;
    for k in 0..samples {
        step_with(&mut state, &u, cfg, &dirs).map_err(|_| Error::SimulationDiverged { step: k })?;
    }
    Ok(state)
}
