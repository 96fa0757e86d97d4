//! NOMA downlink rates under the fixed SIC order (the near user decodes the
//! far user's message first) and the trace-form channel quadratics.
//!
//! RIS convention: the reflection matrix is `Θ = diag(v)` and the lifted
//! variable is `V = v̄·v̄ᴴ` (entrywise conjugate of `v`). With that choice
//! `|gᴴΘGw|² = Tr(V·Γ·W·Γᴴ)` holds exactly for `Γ = diag(gᴴ)·G`.

use num_complex::Complex64;
use serde::Serialize;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::geometry::{ChannelSet, UserKind};
use crate::linalg::{diag_conj_mul, outer, principal_eigpair, trace_re, CMat, CVec};

/// Optimization variables for one design.
#[derive(Clone, Debug)]
pub struct BeamState {
    /// `W_k`, one `N_T×N_T` PSD block per cluster
    pub w_cov: Vec<CMat>,
    pub a_near: Vec<f64>,
    pub a_far: Vec<f64>,
    /// `V`, `M×M` PSD with unit diagonal
    pub v_cov: CMat,
    /// beamformers extracted from `w_cov`
    pub w: Vec<CVec>,
    /// unit-modulus RIS reflection coefficients, `Θ = diag(v)`
    pub v: CVec,
}

/// `V = v̄·v̄ᴴ` for reflection coefficients `v`.
pub fn ris_covariance(v: &CVec) -> CMat {
    outer(&v.map(|z| z.conj()))
}

/// `w = sqrt(λ_max)·e_max(W)`.
pub fn principal_beamformer(w_cov: &CMat) -> CVec {
    let (l, e) = principal_eigpair(w_cov);
    e * Complex64::from(l.max(0.0).sqrt())
}

/// Unit-modulus reflection vector `v` whose covariance best matches `V`.
pub fn reflection_from_covariance(v_cov: &CMat) -> CVec {
    let (_, e) = principal_eigpair(v_cov);
    e.map(|z| {
        let r = z.norm();
        if r < 1e-12 {
            Complex64::new(1.0, 0.0)
        } else {
            z.conj() / r
        }
    })
}

impl BeamState {
    /// Rank-one state from beamformers and reflection coefficients.
    pub fn from_vectors(w: Vec<CVec>, a_near: Vec<f64>, v: CVec) -> Self {
        let w_cov = w.iter().map(outer).collect();
        let a_far = a_near.iter().map(|a| 1.0 - a).collect();
        BeamState { w_cov, a_near, a_far, v_cov: ris_covariance(&v), w, v }
    }

    /// State from covariance blocks; vectors are principal components.
    pub fn from_covariances(w_cov: Vec<CMat>, a_near: Vec<f64>, v_cov: CMat) -> Self {
        let w = w_cov.iter().map(principal_beamformer).collect();
        let v = reflection_from_covariance(&v_cov);
        let a_far = a_near.iter().map(|a| 1.0 - a).collect();
        BeamState { w_cov, a_near, a_far, v_cov, w, v }
    }

    /// Rank-one state rebuilt from the extracted `(w, a, v)`.
    pub fn extracted(&self) -> Self {
        Self::from_vectors(self.w.clone(), self.a_near.clone(), self.v.clone())
    }

    pub fn n_clusters(&self) -> usize {
        self.w_cov.len()
    }

    pub fn total_power(&self) -> f64 {
        self.w_cov.iter().map(crate::linalg::trace).sum()
    }

    /// Checks the structural invariants: power split sums to one, power
    /// budget, unit diagonal of `V`, and PSD blocks (all within `tol`).
    pub fn validate(&self, p_max: f64, tol: f64) -> Result<()> {
        let k = self.w_cov.len();
        if self.a_near.len() != k || self.a_far.len() != k || self.w.len() != k {
            return Err(Error::State("per-cluster vectors have inconsistent lengths".into()));
        }
        for (an, af) in self.a_near.iter().zip(&self.a_far) {
            if (an + af - 1.0).abs() > tol || !(*an > 0.0 && *an < 1.0) {
                return Err(Error::State(format!("invalid power split ({an}, {af})")));
            }
        }
        if self.total_power() > p_max * (1.0 + tol) + tol {
            return Err(Error::State(format!("power {} exceeds budget {p_max}", self.total_power())));
        }
        for (m, d) in self.v_cov.diagonal().iter().enumerate() {
            if (d.re - 1.0).abs() > tol.max(1e-6) {
                return Err(Error::State(format!("[V]_{m}{m} = {d}")));
            }
        }
        for (i, w) in self.w_cov.iter().chain(std::iter::once(&self.v_cov)).enumerate() {
            let (vals, _) = crate::linalg::hermitian_eigen(w);
            let min = vals.last().copied().unwrap_or(0.0);
            if min < -tol.max(1e-9) * (1.0 + vals[0].abs()) {
                return Err(Error::State(format!("block {i} not PSD (λ_min = {min:e})")));
            }
        }
        Ok(())
    }
}

fn check_gain_dims(v_cov: &CMat, w_cov: &CMat, channel: &CVec, g: &CMat) -> Result<()> {
    let (m, n) = (g.nrows(), g.ncols());
    if v_cov.shape() != (m, m) || w_cov.shape() != (n, n) || channel.len() != m {
        return Err(Error::Shape(format!(
            "V {:?}, W {:?}, g {} against G {m}x{n}",
            v_cov.shape(),
            w_cov.shape(),
            channel.len()
        )));
    }
    Ok(())
}

/// `Tr(V·Γ·W·Γᴴ)` with `Γ = diag(channelᴴ)·G`.
pub fn effective_gain(v_cov: &CMat, w_cov: &CMat, channel: &CVec, g: &CMat) -> Result<f64> {
    check_gain_dims(v_cov, w_cov, channel, g)?;
    let gamma = diag_conj_mul(channel, g);
    Ok(trace_re(v_cov, &(&gamma * w_cov * gamma.adjoint())).max(0.0))
}

/// `|channelᴴ·diag(v)·G·w|²`, the vector form of [`effective_gain`].
pub fn direct_gain(channel: &CVec, v: &CVec, g: &CMat, w: &CVec) -> f64 {
    let gw = g * w;
    channel
        .iter()
        .zip(v.iter())
        .zip(gw.iter())
        .map(|((c, v), x)| c.conj() * v * x)
        .sum::<Complex64>()
        .norm_sqr()
}

/// Gains of every cluster's beam at every user: `gains[k][kind][j]` is the
/// power of beam `j` received by user `(k, kind)`.
#[derive(Clone, Debug)]
pub struct LinkGains {
    near: Vec<Vec<f64>>,
    far: Vec<Vec<f64>>,
}

impl LinkGains {
    pub fn compute(v_cov: &CMat, w_cov: &[CMat], channels: &ChannelSet) -> Result<Self> {
        let per_user = |k: usize, kind| -> Result<Vec<f64>> {
            w_cov
                .iter()
                .map(|w| effective_gain(v_cov, w, channels.user(k, kind), &channels.g))
                .collect()
        };
        let kk = channels.n_clusters();
        if w_cov.len() != kk {
            return Err(Error::Shape(format!("{} beams for {kk} clusters", w_cov.len())));
        }
        let near = (0..kk).map(|k| per_user(k, UserKind::Near)).collect::<Result<_>>()?;
        let far = (0..kk).map(|k| per_user(k, UserKind::Far)).collect::<Result<_>>()?;
        Ok(LinkGains { near, far })
    }

    fn row(&self, k: usize, kind: UserKind) -> &[f64] {
        match kind {
            UserKind::Near => &self.near[k],
            UserKind::Far => &self.far[k],
        }
    }

    /// Own-beam gain of user `(k, kind)`.
    pub fn own(&self, k: usize, kind: UserKind) -> f64 {
        self.row(k, kind)[k]
    }

    /// Inter-cluster interference `Σ_{j≠k}` at user `(k, kind)`.
    pub fn inter(&self, k: usize, kind: UserKind) -> f64 {
        self.row(k, kind).iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g).sum()
    }
}

fn log2_1p(sinr: f64) -> f64 {
    (1.0 + sinr.max(0.0)).log2()
}

fn f_at_n(gains: &LinkGains, a_near: f64, a_far: f64, k: usize, noise: f64) -> f64 {
    let g = gains.own(k, UserKind::Near);
    log2_1p(a_far * g / (a_near * g + gains.inter(k, UserKind::Near) + noise))
}

fn near(gains: &LinkGains, a_near: f64, k: usize, noise: f64) -> f64 {
    let g = gains.own(k, UserKind::Near);
    log2_1p(a_near * g / (gains.inter(k, UserKind::Near) + noise))
}

fn f_at_f(gains: &LinkGains, a_near: f64, a_far: f64, k: usize, noise: f64) -> f64 {
    let g = gains.own(k, UserKind::Far);
    log2_1p(a_far * g / (a_near * g + gains.inter(k, UserKind::Far) + noise))
}

/// Rate at which the near user of cluster `k` decodes the far user's message.
pub fn rate_f_at_n(state: &BeamState, channels: &ChannelSet, k: usize, noise: f64) -> Result<f64> {
    let gains = LinkGains::compute(&state.v_cov, &state.w_cov, channels)?;
    Ok(f_at_n(&gains, state.a_near[k], state.a_far[k], k, noise))
}

/// Near-user rate after SIC removes the far user's signal.
pub fn rate_n(state: &BeamState, channels: &ChannelSet, k: usize, noise: f64) -> Result<f64> {
    let gains = LinkGains::compute(&state.v_cov, &state.w_cov, channels)?;
    Ok(near(&gains, state.a_near[k], k, noise))
}

/// Far user decoding its own message, near user's signal as interference.
pub fn rate_f_at_f(state: &BeamState, channels: &ChannelSet, k: usize, noise: f64) -> Result<f64> {
    let gains = LinkGains::compute(&state.v_cov, &state.w_cov, channels)?;
    Ok(f_at_f(&gains, state.a_near[k], state.a_far[k], k, noise))
}

/// `min(R_{f→n}, R_{f→f})`.
pub fn rate_far(state: &BeamState, channels: &ChannelSet, k: usize, noise: f64) -> Result<f64> {
    let gains = LinkGains::compute(&state.v_cov, &state.w_cov, channels)?;
    Ok(f_at_n(&gains, state.a_near[k], state.a_far[k], k, noise)
        .min(f_at_f(&gains, state.a_near[k], state.a_far[k], k, noise)))
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterRates {
    pub f_at_n: f64,
    pub near: f64,
    pub f_at_f: f64,
    pub far: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub clusters: Vec<ClusterRates>,
    /// `2^{R_min} − 1` thresholds the report was produced against
    pub sinr_min_near: f64,
    pub sinr_min_far: f64,
}

impl RateReport {
    pub fn evaluate(state: &BeamState, channels: &ChannelSet, config: &SystemConfig) -> Result<Self> {
        let gains = LinkGains::compute(&state.v_cov, &state.w_cov, channels)?;
        let noise = config.noise_power;
        let clusters = (0..channels.n_clusters())
            .map(|k| {
                let (an, af) = (state.a_near[k], state.a_far[k]);
                let fn_ = f_at_n(&gains, an, af, k, noise);
                let ff = f_at_f(&gains, an, af, k, noise);
                ClusterRates { f_at_n: fn_, near: near(&gains, an, k, noise), f_at_f: ff, far: fn_.min(ff) }
            })
            .collect();
        Ok(RateReport { clusters, sinr_min_near: config.sinr_min_near(), sinr_min_far: config.sinr_min_far() })
    }

    /// Smallest margin `R − R_min` over all users.
    pub fn worst_margin(&self, config: &SystemConfig) -> f64 {
        self.clusters
            .iter()
            .flat_map(|c| [c.near - config.r_min_near, c.far - config.r_min_far])
            .fold(f64::INFINITY, f64::min)
    }
}

/// True when every user meets its QoS floor up to `slack` bits/s/Hz.
pub fn qos_satisfied(report: &RateReport, config: &SystemConfig, slack: f64) -> bool {
    report
        .clusters
        .iter()
        .all(|c| c.near >= config.r_min_near - slack && c.far >= config.r_min_far - slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Profile, SystemConfig};
    use crate::linalg::testutil::{random_cmat, random_cvec};
    use crate::linalg::ONE;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_phases<R: Rng>(rng: &mut R, m: usize) -> CVec {
        CVec::from_fn(m, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
    }

    fn random_channels<R: Rng>(rng: &mut R, k: usize, m: usize, n: usize) -> ChannelSet {
        ChannelSet {
            g: random_cmat(rng, m, n),
            near: (0..k).map(|_| random_cvec(rng, m)).collect(),
            far: (0..k).map(|_| random_cvec(rng, m)).collect(),
        }
    }

    fn scalar_channels(near: f64, far: f64) -> ChannelSet {
        ChannelSet {
            g: CMat::from_element(1, 1, ONE),
            near: vec![CVec::from_element(1, Complex64::from(near.sqrt()))],
            far: vec![CVec::from_element(1, Complex64::from(far.sqrt()))],
        }
    }

    fn scalar_state(power: f64, a_near: f64) -> BeamState {
        BeamState::from_vectors(
            vec![CVec::from_element(1, Complex64::from(power.sqrt()))],
            vec![a_near],
            CVec::from_element(1, ONE),
        )
    }

    #[test]
    fn effective_gain_zero_beam() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = random_channels(&mut rng, 1, 5, 3);
        let v = ris_covariance(&unit_phases(&mut rng, 5));
        assert_eq!(effective_gain(&v, &CMat::zeros(3, 3), &ch.near[0], &ch.g).unwrap(), 0.0);
    }

    #[test]
    fn effective_gain_scalar_case() {
        let g = CMat::from_element(1, 1, Complex64::new(0.0, 2.0));
        let h = CVec::from_element(1, Complex64::new(1.5, 0.0));
        let w = CVec::from_element(1, Complex64::new(0.5, 0.5));
        let v = CVec::from_element(1, ONE);
        let got = effective_gain(&ris_covariance(&v), &outer(&w), &h, &g).unwrap();
        let want = 1.5f64.powi(2) * 4.0 * 0.5;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn effective_gain_trace_matches_vector_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = rng.random_range(1..=12);
            let n = rng.random_range(1..=6);
            let g = random_cmat(&mut rng, m, n);
            let h = random_cvec(&mut rng, m);
            let w = random_cvec(&mut rng, n);
            let v = unit_phases(&mut rng, m);
            let trace = effective_gain(&ris_covariance(&v), &outer(&w), &h, &g).unwrap();
            let direct = direct_gain(&h, &v, &g, &w);
            assert!((trace - direct).abs() <= 1e-9 * direct.max(1e-300), "{trace} vs {direct}");
        }
    }

    #[test]
    fn effective_gain_shape_error() {
        let v = CMat::identity(3, 3);
        let w = CMat::identity(2, 2);
        let g = CMat::zeros(4, 2);
        let h = CVec::zeros(4);
        assert!(matches!(effective_gain(&v, &w, &h, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn rate_f_at_n_examples() {
        let noise = 1e-12;
        let ch = scalar_channels(1.0, 1.0);
        // a_far = 0 (a_near → 1 limit) kills the numerator
        let mut st = scalar_state(2.0 * noise, 0.5);
        st.a_near[0] = 1.0;
        st.a_far[0] = 0.0;
        assert_eq!(rate_f_at_n(&st, &ch, 0, noise).unwrap(), 0.0);
        // g_n = 2σ², a = (0.5, 0.5): log2(1 + σ²/(σ²+σ²))
        let st = scalar_state(2.0 * noise, 0.5);
        let r = rate_f_at_n(&st, &ch, 0, noise).unwrap();
        assert!((r - 1.5f64.log2()).abs() < 1e-12);
        assert!((r - 0.584_962_500_721_156).abs() < 1e-12);
        let bigger = scalar_state(6.0 * noise, 0.5);
        assert!(rate_f_at_n(&bigger, &ch, 0, noise).unwrap() > r);
    }

    #[test]
    fn rate_n_examples() {
        let noise = 1e-12;
        let ch = scalar_channels(3.0, 1.0);
        let mut st = scalar_state(4.0 * noise, 0.3);
        let r = rate_n(&st, &ch, 0, noise).unwrap();
        assert!((r - (1.0 + 0.3 * 12.0f64).log2()).abs() < 1e-12);
        st.a_near[0] = 0.0;
        assert_eq!(rate_n(&st, &ch, 0, noise).unwrap(), 0.0);
    }

    #[test]
    fn rate_n_orthogonal_clusters_have_no_interference() {
        let noise = 0.1;
        let ch = ChannelSet {
            g: CMat::identity(2, 2),
            near: vec![CVec::from_vec(vec![ONE, 0.0.into()]), CVec::from_vec(vec![0.0.into(), ONE])],
            far: vec![CVec::from_vec(vec![ONE, 0.0.into()]), CVec::from_vec(vec![0.0.into(), ONE])],
        };
        let w1 = CVec::from_vec(vec![Complex64::from(2.0), 0.0.into()]);
        let w2 = CVec::from_vec(vec![0.0.into(), Complex64::from(3.0)]);
        let v = CVec::from_element(2, ONE);
        let st = BeamState::from_vectors(vec![w1, w2], vec![0.4, 0.25], v);
        let r1 = rate_n(&st, &ch, 0, noise).unwrap();
        assert!((r1 - (1.0 + 0.4 * 4.0 / noise).log2()).abs() < 1e-12);
        let r2 = rate_n(&st, &ch, 1, noise).unwrap();
        assert!((r2 - (1.0 + 0.25 * 9.0 / noise).log2()).abs() < 1e-12);
    }

    #[test]
    fn rate_f_at_f_examples() {
        let noise: f64 = 1e-3;
        let ch = scalar_channels(1.0, 0.5);
        let mut st = scalar_state(0.2, 1e-9);
        st.a_far[0] = 1.0 - 1e-9;
        let limit = (1.0 + 0.5 * 0.2 / noise).log2();
        assert!((rate_f_at_f(&st, &ch, 0, noise).unwrap() - limit).abs() < 1e-6);

        let dead = scalar_channels(1.0, 0.0);
        assert_eq!(rate_f_at_f(&scalar_state(0.2, 0.3), &dead, 0, noise).unwrap(), 0.0);
    }

    #[test]
    fn rate_f_at_f_matches_vector_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = 0.05;
        let ch = random_channels(&mut rng, 2, 6, 3);
        let w: Vec<CVec> = (0..2).map(|_| random_cvec(&mut rng, 3)).collect();
        let v = unit_phases(&mut rng, 6);
        let st = BeamState::from_vectors(w.clone(), vec![0.3, 0.2], v.clone());
        let own = direct_gain(&ch.far[0], &v, &ch.g, &w[0]);
        let other = direct_gain(&ch.far[0], &v, &ch.g, &w[1]);
        let want = (1.0 + 0.7 * own / (0.3 * own + other + noise)).log2();
        assert!((rate_f_at_f(&st, &ch, 0, noise).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn rate_far_examples() {
        let noise = 1e-2;
        // near channel much stronger ⇒ the far user's own decoding is the bottleneck
        let ch = scalar_channels(10.0, 1.0);
        let st = scalar_state(1.0, 0.2);
        let far = rate_far(&st, &ch, 0, noise).unwrap();
        assert_eq!(far, rate_f_at_f(&st, &ch, 0, noise).unwrap());
        assert!(far <= rate_f_at_n(&st, &ch, 0, noise).unwrap());

        let equal = scalar_channels(1.0, 1.0);
        let r = rate_far(&st, &equal, 0, noise).unwrap();
        assert!((r - rate_f_at_f(&st, &equal, 0, noise).unwrap()).abs() < 1e-15);

        assert_eq!(rate_far(&scalar_state(0.0, 0.2), &ch, 0, noise).unwrap(), 0.0);
    }

    #[test]
    fn qos_examples() {
        let cfg = SystemConfig::profile(Profile::Desk);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = random_channels(&mut rng, cfg.n_clusters, cfg.n_ris, cfg.n_tx);
        let zero = BeamState::from_vectors(
            vec![CVec::zeros(cfg.n_tx); cfg.n_clusters],
            vec![0.2; cfg.n_clusters],
            CVec::from_element(cfg.n_ris, ONE),
        );
        let rep = RateReport::evaluate(&zero, &ch, &cfg).unwrap();
        assert!(!qos_satisfied(&rep, &cfg, 0.0));
        let free = SystemConfig { r_min_near: 0.0, r_min_far: 0.0, ..cfg.clone() };
        assert!(qos_satisfied(&rep, &free, 0.0));
    }

    proptest! {
        #[test]
        fn sic_consistency_and_phase_invariance(seed in 0u64..10_000, an in 0.01f64..0.99, phase in 0.0f64..6.28) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_channels(&mut rng, 2, 4, 3);
            let w: Vec<CVec> = (0..2).map(|_| random_cvec(&mut rng, 3)).collect();
            let v = unit_phases(&mut rng, 4);
            let st = BeamState::from_vectors(w.clone(), vec![an, 1.0 - an], v.clone());
            let cfg = SystemConfig { noise_power: 0.1, ..SystemConfig::profile(Profile::Desk) };
            let rep = RateReport::evaluate(&st, &ch, &cfg).unwrap();
            let rotated = BeamState::from_vectors(w, vec![an, 1.0 - an], v * Complex64::from_polar(1.0, phase));
            let rep2 = RateReport::evaluate(&rotated, &ch, &cfg).unwrap();
            for (c, c2) in rep.clusters.iter().zip(&rep2.clusters) {
                prop_assert!(c.far <= c.f_at_f && c.far <= c.f_at_n);
                prop_assert!(c.near >= 0.0 && c.far >= 0.0);
                prop_assert!((c.near - c2.near).abs() < 1e-9 && (c.far - c2.far).abs() < 1e-9);
            }
        }

        #[test]
        fn far_rate_nonincreasing_in_near_share(seed in 0u64..10_000, a1 in 0.01f64..0.98, d in 0.001f64..0.5) {
            let a2 = (a1 + d).min(0.99);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_channels(&mut rng, 2, 3, 2);
            let w: Vec<CVec> = (0..2).map(|_| random_cvec(&mut rng, 2)).collect();
            let v = unit_phases(&mut rng, 3);
            let lo = BeamState::from_vectors(w.clone(), vec![a1, 0.5], v.clone());
            let hi = BeamState::from_vectors(w, vec![a2, 0.5], v);
            prop_assert!(rate_f_at_f(&hi, &ch, 0, 0.1).unwrap() <= rate_f_at_f(&lo, &ch, 0, 0.1).unwrap() + 1e-12);
        }
    }
}
