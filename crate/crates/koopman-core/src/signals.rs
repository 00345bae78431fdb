//! Training-input generation: superimposed random Gaussians for smooth
//! state-space exploration, random-height steps for overshoot/settling, and
//! the complementary exhaust channel.
//!
//! All randomness comes from a xoshiro256++ generator seeded through
//! splitmix64 (`seed_from_u64`), with uniforms built directly from the top 53
//! bits, so identical specs produce identical streams on every platform.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    GaussianMixture,
    RandomSteps,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    /// Signal duration in seconds; the sequence covers [0, duration).
    pub duration: f64,
    pub sample_dt: f64,
    /// Per-channel admissible range (u_min, u_max).
    pub bounds: (f64, f64),
    pub channel_count: usize,
    pub seed: u64,
    /// Number of superimposed bumps per channel (gaussian_mixture only).
    pub n_gaussians: usize,
    /// Hold-duration range in seconds (random_steps only).
    pub hold_range: (f64, f64),
}

impl SignalSpec {
    pub fn gaussian(duration: f64, sample_dt: f64, seed: u64) -> SignalSpec {
        SignalSpec {
            kind: SignalKind::GaussianMixture,
            duration,
            sample_dt,
            bounds: (0.3, 0.85),
            channel_count: 3,
            seed,
            n_gaussians: 150,
            hold_range: (1.0, 4.0),
        }
    }

    pub fn steps(duration: f64, sample_dt: f64, seed: u64) -> SignalSpec {
        SignalSpec {
            kind: SignalKind::RandomSteps,
            ..SignalSpec::gaussian(duration, sample_dt, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSpec(format!("bounds ({lo}, {hi}) need u_min < u_max")));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidSpec("duration must be positive".into()));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::InvalidSpec("sample_dt must be positive".into()));
        }
        if self.channel_count == 0 {
            return Err(Error::InvalidSpec("channel_count must be at least 1".into()));
        }
        if self.kind == SignalKind::RandomSteps {
            let (hmin, hmax) = self.hold_range;
            if !(hmin.is_finite() && hmax.is_finite() && hmin > 0.0 && hmin <= hmax) {
                return Err(Error::InvalidSpec(format!(
                    "hold_range ({hmin}, {hmax}) needs 0 < min <= max"
                )));
            }
        }
        Ok(())
    }

    /// Number of input samples covering [0, duration).
    pub fn sample_count(&self) -> usize {
        (self.duration / self.sample_dt).round() as usize
    }
}

/// Uniform in [lo, hi) from the top 53 bits of the generator.
fn uniform(rng: &mut Xoshiro256PlusPlus, lo: f64, hi: f64) -> f64 {
    let frac = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + frac * (hi - lo)
}

/// Derive a per-stage seed from the experiment's global seed (splitmix64 of
/// the seed xor an FNV-1a tag hash).
pub fn stage_seed(global: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(global ^ h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Smoothly varying signal: per channel, `n_gaussians` bumps
/// `A exp(-(t - mu)^2 / (2 sigma^2))` with `A ~ U(-1,1)`, `mu ~ U(0, D)`,
/// `sigma ~ U(D/200, D/20)`, affinely rescaled so the channel's min/max land
/// exactly on the configured bounds. Zero bumps degenerate to the midpoint.
pub fn gaussian_signal(spec: &SignalSpec) -> Result<RealMatrix> {
    if spec.kind != SignalKind::GaussianMixture {
        return Err(Error::InvalidSpec("gaussian_signal needs kind gaussian_mixture".into()));
    }
    spec.validate()?;
    let n = spec.sample_count();
    let (lo, hi) = spec.bounds;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut out = RealMatrix::zeros(spec.channel_count, n);

    for ch in 0..spec.channel_count {
        let bumps: Vec<(f64, f64, f64)> = (0..spec.n_gaussians)
            .map(|_| {
                let a = uniform(&mut rng, -1.0, 1.0);
                let mu = uniform(&mut rng, 0.0, spec.duration);
                let sigma = uniform(&mut rng, spec.duration / 200.0, spec.duration / 20.0);
                (a, mu, sigma)
            })
            .collect();
        let mut raw = vec![0.0; n];
        for (k, r) in raw.iter_mut().enumerate() {
            let t = k as f64 * spec.sample_dt;
            *r = bumps
                .iter()
                .map(|&(a, mu, sigma)| a * (-(t - mu) * (t - mu) / (2.0 * sigma * sigma)).exp())
                .sum();
        }
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mid = 0.5 * (lo + hi);
        for (k, r) in raw.iter().enumerate() {
            let v = if n == 0 || max <= min {
                mid
            } else {
                let frac = (r - min) / (max - min);
                (lo * (1.0 - frac) + hi * frac).clamp(lo, hi)
            };
            out[(ch, k)] = v;
        }
    }
    Ok(out)
}

/// Piecewise-constant signal: per channel, hold durations `~ U(hold_range)`
/// and heights `~ U(bounds)`.
pub fn step_signal(spec: &SignalSpec) -> Result<RealMatrix> {
    if spec.kind != SignalKind::RandomSteps {
        return Err(Error::InvalidSpec("step_signal needs kind random_steps".into()));
    }
    spec.validate()?;
    let n = spec.sample_count();
    let (lo, hi) = spec.bounds;
    let (hmin, hmax) = spec.hold_range;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut out = RealMatrix::zeros(spec.channel_count, n);

    for ch in 0..spec.channel_count {
        let mut k = 0;
        while k < n {
            let hold = uniform(&mut rng, hmin, hmax);
            let height = uniform(&mut rng, lo, hi).clamp(lo, hi);
            let hold_samples = ((hold / spec.sample_dt).round() as usize).max(1);
            for _ in 0..hold_samples {
                if k >= n {
                    break;
                }
                out[(ch, k)] = height;
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Constant midpoint reference signal.
pub fn constant_signal(spec: &SignalSpec) -> Result<RealMatrix> {
    spec.validate()?;
    let mid = 0.5 * (spec.bounds.0 + spec.bounds.1);
    Ok(RealMatrix::from_element(spec.channel_count, spec.sample_count(), mid))
}

/// Exhaust-valve channel: elementwise `1 - u`.
pub fn exhaust_of(u: &RealMatrix) -> RealMatrix {
    u.map(|x| 1.0 - x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn short_gaussian(seed: u64) -> SignalSpec {
        SignalSpec { duration: 30.0, ..SignalSpec::gaussian(30.0, 0.02, seed) }
    }

    #[test]
    fn gaussian_samples_stay_inside_bounds() {
        let u = gaussian_signal(&short_gaussian(1)).unwrap();
        assert_eq!(u.shape(), (3, 1500));
        for v in u.iter() {
            assert!((0.3..=0.85).contains(v), "sample {v} escaped bounds");
        }
        // Rescaling hits both bounds somewhere.
        assert_eq!(u.iter().cloned().fold(f64::INFINITY, f64::min), 0.3);
        assert!(u.iter().cloned().fold(f64::NEG_INFINITY, f64::max) >= 0.85 - 1e-12);
    }

    #[test]
    fn gaussian_is_seed_deterministic() {
        let a = gaussian_signal(&short_gaussian(7)).unwrap();
        let b = gaussian_signal(&short_gaussian(7)).unwrap();
        assert_eq!(a, b);
        let c = gaussian_signal(&short_gaussian(8)).unwrap();
        assert!((a - c).amax() > 0.0);
    }

    #[test]
    fn zero_gaussians_degenerate_to_midpoint() {
        let spec = SignalSpec { n_gaussians: 0, ..short_gaussian(3) };
        let u = gaussian_signal(&spec).unwrap();
        let mid = 0.5 * (0.3 + 0.85);
        assert!(u.iter().all(|&v| v == mid));
    }

    #[test]
    fn gaussian_signal_is_smooth_at_50hz() {
        let u = gaussian_signal(&short_gaussian(11)).unwrap();
        let max_jump = (0..3)
            .flat_map(|ch| (1..u.ncols()).map(move |k| (ch, k)))
            .map(|(ch, k)| (u[(ch, k)] - u[(ch, k - 1)]).abs())
            .fold(0.0, f64::max);
        assert!(max_jump < (0.85 - 0.3) / 4.0, "jump {max_jump} too large");
    }

    #[test]
    fn step_signal_heights_inside_bounds() {
        let spec = SignalSpec { duration: 60.0, ..SignalSpec::steps(60.0, 0.02, 5) };
        let u = step_signal(&spec).unwrap();
        for v in u.iter() {
            assert!((0.3..=0.85).contains(v));
        }
    }

    #[test]
    fn degenerate_hold_range_gives_single_level() {
        let spec = SignalSpec {
            hold_range: (20.0, 20.0),
            ..SignalSpec::steps(20.0, 0.02, 2)
        };
        let u = step_signal(&spec).unwrap();
        for ch in 0..3 {
            let first = u[(ch, 0)];
            assert!((0..u.ncols()).all(|k| u[(ch, k)] == first));
        }
    }

    #[test]
    fn step_count_tracks_mean_hold() {
        let spec = SignalSpec { duration: 100.0, ..SignalSpec::steps(100.0, 0.02, 17) };
        let u = step_signal(&spec).unwrap();
        // ~ duration / mean(hold) = 100 / 2.5 = 40 levels per channel.
        for ch in 0..3 {
            let changes = (1..u.ncols()).filter(|&k| u[(ch, k)] != u[(ch, k - 1)]).count();
            let levels = changes + 1;
            assert!((20..=60).contains(&levels), "channel {ch} has {levels} levels");
        }
    }

    #[test]
    fn exhaust_is_complement_and_involution() {
        let u = RealMatrix::from_row_slice(1, 3, &[0.3, 1.0, 0.45]);
        let v = exhaust_of(&u);
        assert_eq!(v[(0, 0)], 0.7);
        assert_eq!(v[(0, 1)], 0.0);
        // Involution up to one rounding of 1 - (1 - x).
        assert!((exhaust_of(&v) - &u).amax() < 1e-15);
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        let spec = SignalSpec { bounds: (0.9, 0.3), ..short_gaussian(1) };
        assert!(matches!(gaussian_signal(&spec), Err(Error::InvalidSpec(_))));
        let spec = SignalSpec { hold_range: (0.0, 1.0), ..SignalSpec::steps(10.0, 0.02, 1) };
        assert!(matches!(step_signal(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn stage_seeds_differ_by_tag() {
        let a = stage_seed(42, "signals.gaussian");
        let b = stage_seed(42, "signals.steps");
        assert_ne!(a, b);
        assert_eq!(a, stage_seed(42, "signals.gaussian"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_generated_signals_respect_bounds(seed in 0u64..1000, lo in 0.0f64..0.4, width in 0.1f64..0.6) {
            let bounds = (lo, lo + width);
            let g = SignalSpec { bounds, duration: 5.0, ..SignalSpec::gaussian(5.0, 0.02, seed) };
            let s = SignalSpec { bounds, duration: 5.0, ..SignalSpec::steps(5.0, 0.02, seed) };
            for u in [gaussian_signal(&g).unwrap(), step_signal(&s).unwrap()] {
                for v in u.iter() {
                    prop_assert!((bounds.0..=bounds.1).contains(v));
                }
            }
        }

        #[test]
        fn prop_same_seed_same_bytes(seed in 0u64..1000) {
            let spec = SignalSpec { duration: 2.0, ..SignalSpec::gaussian(2.0, 0.02, seed) };
            prop_assert_eq!(gaussian_signal(&spec).unwrap(), gaussian_signal(&spec).unwrap());
        }
    }
}
