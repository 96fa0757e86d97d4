//! Scenario geometry, steering vectors and Rician channel generation.
//!
//! Coordinates: the RIS sits at the origin as a ULA along the x-axis facing
//! +y. Angles are measured from the RIS broadside (+y) towards +x, so a point
//! at range `r` and angle `θ` is `(r·sin θ, r·cos θ)`. The BS array is a ULA
//! parallel to the RIS with the same element spacing.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{SystemConfig, Target};
use crate::error::{Error, Result};
use crate::linalg::{diag_conj_mul, CMat, CVec};

/// ULA steering vector `[1, e^{j2πδ sinθ}, …, e^{j2πδ(m−1) sinθ}]ᵀ`.
pub fn steering_vector(theta: f64, m: usize, spacing_ratio: f64) -> CVec {
    let step = 2.0 * PI * spacing_ratio * theta.sin();
    CVec::from_fn(m, |p, _| Complex64::from_polar(1.0, step * p as f64))
}

/// Distance-dependent power gain `ref_gain · d^(−exponent)`.
pub fn pathloss(distance: f64, exponent: f64, ref_gain: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("path loss needs distance > 0, got {distance}")));
    }
    Ok(ref_gain * distance.powf(-exponent))
}

/// Circularly-symmetric complex normal sample with unit variance.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `sqrt(gain)·(sqrt(k/(k+1))·LoS + sqrt(1/(k+1))·NLoS)` with i.i.d. CN(0,1)
/// NLoS entries. An infinite `k_factor` returns the scaled LoS term without
/// consuming randomness.
pub fn rician_channel<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    k_factor: f64,
    los: &CMat,
    gain: f64,
    rng: &mut R,
) -> Result<CMat> {
    if !(k_factor >= 0.0) {
        return Err(Error::Domain(format!("Rician factor must be ≥ 0, got {k_factor}")));
    }
    if !(gain >= 0.0) {
        return Err(Error::Domain(format!("channel gain must be ≥ 0, got {gain}")));
    }
    if los.nrows() != rows || los.ncols() != cols {
        return Err(Error::Shape(format!(
            "LoS component is {}x{}, expected {rows}x{cols}",
            los.nrows(),
            los.ncols()
        )));
    }
    let amp = gain.sqrt();
    if k_factor.is_infinite() {
        return Ok(los.map(|z| z * amp));
    }
    let w_los = (k_factor / (k_factor + 1.0)).sqrt();
    let w_nlos = (1.0 / (k_factor + 1.0)).sqrt();
    let nlos = CMat::from_fn(rows, cols, |_, _| cn01(rng));
    Ok((los.map(|z| z * w_los) + nlos.map(|z| z * w_nlos)).map(|z| z * amp))
}

/// Angle of a point as seen from the RIS (radians from broadside).
pub fn angle_from_ris(x: f64, y: f64) -> f64 {
    x.atan2(y)
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterGeometry {
    /// shared by both users of the cluster
    pub angle: f64,
    pub near_radius: f64,
    pub far_radius: f64,
}

impl ClusterGeometry {
    pub fn near_position(&self) -> [f64; 2] {
        [self.near_radius * self.angle.sin(), self.near_radius * self.angle.cos()]
    }

    pub fn far_position(&self) -> [f64; 2] {
        [self.far_radius * self.angle.sin(), self.far_radius * self.angle.cos()]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioGeometry {
    pub bs_position: [f64; 2],
    pub bs_ris_distance: f64,
    /// direction of the BS seen from the RIS
    pub arrival_angle: f64,
    /// direction of the RIS seen from the BS array
    pub departure_angle: f64,
    pub clusters: Vec<ClusterGeometry>,
    pub targets: Vec<Target>,
}

/// One channel realization: `G` (BS→RIS) and RIS→user vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub g: CMat,
    pub near: Vec<CVec>,
    pub far: Vec<CVec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum UserKind {
    Near,
    Far,
}

impl ChannelSet {
    pub fn n_clusters(&self) -> usize {
        self.near.len()
    }

    pub fn n_ris(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.g.ncols()
    }

    pub fn user(&self, k: usize, kind: UserKind) -> &CVec {
        match kind {
            UserKind::Near => &self.near[k],
            UserKind::Far => &self.far[k],
        }
    }

    /// `Γ = diag(g^H)·G` for the given user.
    pub fn cascaded(&self, k: usize, kind: UserKind) -> CMat {
        diag_conj_mul(self.user(k, kind), &self.g)
    }

    /// Users flattened as `[near₀, far₀, near₁, far₁, …]`.
    pub fn flat_users(&self) -> Vec<(UserKind, &CVec)> {
        self.near
            .iter()
            .zip(&self.far)
            .flat_map(|(n, f)| [(UserKind::Near, n), (UserKind::Far, f)])
            .collect()
    }

    pub fn check_dims(&self, n_tx: usize, n_ris: usize) -> Result<()> {
        if self.g.nrows() != n_ris || self.g.ncols() != n_tx {
            return Err(Error::Shape(format!(
                "G is {}x{}, expected {n_ris}x{n_tx}",
                self.g.nrows(),
                self.g.ncols()
            )));
        }
        if self.near.len() != self.far.len() || self.near.iter().chain(&self.far).any(|g| g.len() != n_ris) {
            return Err(Error::Shape("user channel dimensions inconsistent".into()));
        }
        Ok(())
    }
}

/// Independent random stream for `(config.rng_seed, trial seed, purpose)`.
pub fn trial_rng(config: &SystemConfig, seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(seed);
    rng
}

pub const CHANNEL_STREAM: u64 = 0;
pub const RIS_INIT_STREAM: u64 = 1;

fn uniform_left_open<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    hi - u * (hi - lo)
}

fn uniform_closed<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo..=hi)
}

/// Samples user positions and composes every channel for one trial. A pure
/// function of `(config, seed)`.
pub fn build_scenario(config: &SystemConfig, seed: u64) -> Result<(ScenarioGeometry, ChannelSet)> {
    config.validate()?;
    let mut rng = trial_rng(config, seed, CHANNEL_STREAM);
    let (m, n) = (config.n_ris, config.n_tx);

    let [bx, by] = config.bs_position;
    let bs_ris_distance = bx.hypot(by);
    let arrival_angle = angle_from_ris(bx, by);
    let departure_angle = angle_from_ris(-bx, -by);
    let los_g = steering_vector(arrival_angle, m, config.spacing_ratio)
        * steering_vector(departure_angle, n, config.spacing_ratio).adjoint();
    let gain_g = pathloss(bs_ris_distance, config.pathloss_exp_bs_ris, config.pathloss_ref)?;
    let g = rician_channel(m, n, config.rician_k, &los_g, gain_g, &mut rng)?;

    let mut clusters = Vec::with_capacity(config.n_clusters);
    let mut near = Vec::with_capacity(config.n_clusters);
    let mut far = Vec::with_capacity(config.n_clusters);
    for range in &config.cluster_angle_ranges[..config.n_clusters] {
        let angle = uniform_left_open(&mut rng, range[0], range[1]);
        let near_radius = uniform_closed(&mut rng, config.near_radius[0], config.near_radius[1]);
        let far_radius = uniform_closed(&mut rng, config.far_radius[0], config.far_radius[1]);
        let a = steering_vector(angle, m, config.spacing_ratio);
        let los = CMat::from_column_slice(m, 1, a.as_slice());
        for (radius, out) in [(near_radius, &mut near), (far_radius, &mut far)] {
            let gain = pathloss(radius, config.pathloss_exp_ris_user, config.pathloss_ref)?;
            let h = rician_channel(m, 1, config.rician_k, &los, gain, &mut rng)?;
            out.push(h.column(0).into_owned());
        }
        clusters.push(ClusterGeometry { angle, near_radius, far_radius });
    }

    let geometry = ScenarioGeometry {
        bs_position: config.bs_position,
        bs_ris_distance,
        arrival_angle,
        departure_angle,
        clusters,
        targets: config.targets.clone(),
    };
    Ok((geometry, ChannelSet { g, near, far }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Profile, SystemConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_vec(v: &CVec, want: &[Complex64]) {
        assert_eq!(v.len(), want.len());
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn steering_vector_examples() {
        assert_vec(&steering_vector(0.0, 4, 0.5), &[c(1.0, 0.0); 4]);
        assert_vec(
            &steering_vector(PI / 2.0, 3, 0.5),
            &[c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
        );
        assert_vec(
            &steering_vector(PI / 6.0, 4, 0.5),
            &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)],
        );
    }

    #[test]
    fn pathloss_examples() {
        assert_abs_diff_eq!(pathloss(1.0, 2.2, 1e-3).unwrap(), 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(pathloss(10.0, 2.2, 1e-3).unwrap(), 6.309_573_444_801_93e-6, epsilon = 1e-16);
        for d in [0.3, 7.0, 1e4] {
            assert_abs_diff_eq!(pathloss(d, 0.0, 0.25).unwrap(), 0.25, epsilon = 1e-15);
        }
        assert!(matches!(pathloss(0.0, 2.2, 1e-3), Err(Error::Domain(_))));
        assert!(matches!(pathloss(-1.0, 2.2, 1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn rician_los_limit_and_zero_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let los = steering_vector(0.3, 5, 0.5) * steering_vector(-0.2, 3, 0.5).adjoint();
        let h = rician_channel(5, 3, f64::INFINITY, &los, 4.0, &mut rng).unwrap();
        assert!((h - los.map(|z| z * 2.0)).norm() < 1e-12);
        let z = rician_channel(5, 3, 3.0, &los, 0.0, &mut rng).unwrap();
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn rician_rejects_negative_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let los = CMat::from_element(2, 2, c(1.0, 0.0));
        assert!(matches!(rician_channel(2, 2, -1.0, &los, 1.0, &mut rng), Err(Error::Domain(_))));
        assert!(matches!(rician_channel(2, 2, 1.0, &los, -1.0, &mut rng), Err(Error::Domain(_))));
        assert!(matches!(rician_channel(3, 2, 1.0, &los, 1.0, &mut rng), Err(Error::Shape(_))));
    }

    #[test]
    fn rician_moments_monte_carlo() {
        // E‖H‖²_F = gain·rows·cols and E[H] = sqrt(gain·k/(k+1))·LoS.
        let (rows, cols, k, gain) = (4, 3, 3.0, 2.5);
        let los = steering_vector(0.4, rows, 0.5) * steering_vector(1.0, cols, 0.5).adjoint();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut energy = 0.0;
        let mut mean = CMat::zeros(rows, cols);
        for _ in 0..draws {
            let h = rician_channel(rows, cols, k, &los, gain, &mut rng).unwrap();
            energy += h.norm_squared();
            mean += h;
        }
        energy /= draws as f64;
        mean /= Complex64::from(draws as f64);
        let expect = gain * (rows * cols) as f64;
        assert!((energy - expect).abs() / expect < 0.03, "energy {energy} vs {expect}");
        let amp = (gain * k / (k + 1.0)).sqrt();
        for (m, l) in mean.iter().zip(los.iter()) {
            assert!((m.norm() - amp * l.norm()).abs() / amp < 0.03);
        }
    }

    #[test]
    fn scenario_is_deterministic_and_seed_dependent() {
        let cfg = SystemConfig::profile(Profile::Desk);
        let (_, a) = build_scenario(&cfg, 7).unwrap();
        let (_, b) = build_scenario(&cfg, 7).unwrap();
        let (_, c) = build_scenario(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check_dims(cfg.n_tx, cfg.n_ris).unwrap();
        assert!(a.g.iter().chain(a.near.iter().flatten()).all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn scenario_respects_radius_bands() {
        let cfg = SystemConfig::profile(Profile::Paper);
        for seed in 0..50 {
            let (geo, _) = build_scenario(&cfg, seed).unwrap();
            for (k, cl) in geo.clusters.iter().enumerate() {
                assert!((20.0..=25.0).contains(&cl.near_radius));
                assert!((80.0..=85.0).contains(&cl.far_radius));
                let r = cfg.cluster_angle_ranges[k];
                assert!(cl.angle > r[0] && cl.angle <= r[1]);
            }
        }
    }

    #[test]
    fn single_cluster_angle_range() {
        let mut cfg = SystemConfig::profile(Profile::Desk);
        cfg.n_clusters = 1;
        cfg.cluster_angle_ranges = vec![[20f64.to_radians(), 30f64.to_radians()]];
        let (geo, ch) = build_scenario(&cfg, 3).unwrap();
        assert_eq!(geo.clusters.len(), 1);
        assert_eq!(ch.n_clusters(), 1);
        let a = geo.clusters[0].angle;
        assert!(a > 20f64.to_radians() && a <= 30f64.to_radians());
        let (pn, pf) = (geo.clusters[0].near_position(), geo.clusters[0].far_position());
        assert_abs_diff_eq!(angle_from_ris(pn[0], pn[1]), angle_from_ris(pf[0], pf[1]), epsilon = 1e-12);
    }

    #[test]
    fn empty_range_is_config_error() {
        let mut cfg = SystemConfig::profile(Profile::Desk);
        cfg.cluster_angle_ranges[1] = [0.2, 0.1];
        assert!(matches!(build_scenario(&cfg, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn steering_entries_unit_modulus(theta in -1.6f64..1.6, m in 1usize..40, d in 0.1f64..1.0) {
            let a = steering_vector(theta, m, d);
            prop_assert!((a[0] - c(1.0, 0.0)).norm() < 1e-15);
            for z in a.iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn pathloss_strictly_decreasing(d in 0.1f64..500.0, step in 0.01f64..50.0, e in 0.1f64..4.0) {
            prop_assert!(pathloss(d + step, e, 1e-3).unwrap() < pathloss(d, e, 1e-3).unwrap());
        }
    }
}
