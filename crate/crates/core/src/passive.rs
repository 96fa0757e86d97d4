//! RIS phase design for fixed beams: sequential rank-one constraint
//! relaxation (SRCR) on the lifted variable `V`.

use log::warn;

use crate::comm::{reflection_from_covariance, ris_covariance};
use crate::config::SystemConfig;
use crate::conic::{self, Affine, Bounds, HermitianVar, ScalarVar, SdpProblem};
use crate::error::{Error, Result};
use crate::geometry::{ChannelSet, UserKind};
use crate::linalg::{frobenius, hermitian_part, outer, principal_eigpair, trace, trace_re, CMat, CVec};
use crate::sensing::{gain_scale, upsilon, AngleGrid};

/// Step-size floor below which the relaxation is declared stalled.
pub const RHO_FLOOR: f64 = 1e-8;

/// One rate constraint in `V`: `SINR = num·s / (den·s + i + 1) ≥ r`, where
/// `s = Tr(V·signal)` and `i = Tr(V·interference)` are in SNR units.
#[derive(Clone, Debug)]
pub struct QosRow {
    pub label: String,
    pub signal: CMat,
    pub interference: CMat,
    pub num: f64,
    pub den: f64,
    /// SINR threshold `2^R − 1`
    pub sinr_min: f64,
    /// rate floor in bits/s/Hz
    pub rate_min: f64,
}

impl QosRow {
    pub fn sinr(&self, v_cov: &CMat) -> f64 {
        let s = trace_re(&self.signal, v_cov).max(0.0);
        let i = trace_re(&self.interference, v_cov).max(0.0);
        self.num * s / (self.den * s + i + 1.0)
    }

    pub fn rate_margin(&self, v_cov: &CMat) -> f64 {
        (1.0 + self.sinr(v_cov)).log2() - self.rate_min
    }
}

/// A link served by its own beam in the orthogonal (no-NOMA) design.
#[derive(Clone, Debug)]
pub struct UserLink {
    pub channel: CVec,
    /// bits/s/Hz
    pub rate_min: f64,
}

/// Quadratic forms in `V` induced by fixed beams (and power splits).
#[derive(Clone, Debug)]
pub struct PassiveForms {
    pub rows: Vec<QosRow>,
    /// `Υ_q (Σ W) Υ_qᴴ / gain_scale` per interested angle
    pub beams: Vec<CMat>,
    pub gain_scale: f64,
}

fn cascaded_form(gamma: &CMat, w: &CMat, s: f64) -> CMat {
    hermitian_part(&(gamma * w * gamma.adjoint())).scale(s)
}

fn beam_forms(g: &CMat, w_cov: &[CMat], config: &SystemConfig, angles: &[f64]) -> Result<(Vec<CMat>, f64)> {
    if angles.is_empty() {
        return Err(Error::Domain("no interested angles".into()));
    }
    let n = g.ncols();
    let scale = gain_scale(config.p_max, g);
    let total = w_cov.iter().fold(CMat::zeros(n, n), |acc, w| acc + w);
    let beams = angles
        .iter()
        .map(|&t| cascaded_form(&upsilon(t, g, config.spacing_ratio), &total, 1.0 / scale))
        .collect();
    Ok((beams, scale))
}

impl PassiveForms {
    /// NOMA clusters: three rate constraints per cluster (near user, far
    /// message at the near user, far message at the far user).
    pub fn new(channels: &ChannelSet, w_cov: &[CMat], a_near: &[f64], config: &SystemConfig) -> Result<Self> {
        let angles = AngleGrid::new(config).interested_angles();
        Self::with_angles(channels, w_cov, a_near, config, &angles)
    }

    pub fn with_angles(
        channels: &ChannelSet,
        w_cov: &[CMat],
        a_near: &[f64],
        config: &SystemConfig,
        angles: &[f64],
    ) -> Result<Self> {
        let kk = channels.n_clusters();
        let n = channels.n_tx();
        if w_cov.len() != kk || a_near.len() != kk || w_cov.iter().any(|w| w.shape() != (n, n)) {
            return Err(Error::Shape(format!("expected {kk} beams of size {n}x{n} and {kk} power splits")));
        }
        let snr = 1.0 / config.noise_power;
        let m = channels.n_ris();
        let (rn, rf) = (config.sinr_min_near(), config.sinr_min_far());
        let mut rows = Vec::with_capacity(3 * kk);
        for k in 0..kk {
            let a = a_near[k];
            let split = |kind| {
                let gamma = channels.cascaded(k, kind);
                let own = cascaded_form(&gamma, &w_cov[k], snr);
                let inter = (0..kk)
                    .filter(|&j| j != k)
                    .fold(CMat::zeros(m, m), |acc, j| acc + cascaded_form(&gamma, &w_cov[j], snr));
                (own, inter)
            };
            let (own_n, inter_n) = split(UserKind::Near);
            let (own_f, inter_f) = split(UserKind::Far);
            let row = |label: String, s: &CMat, i: &CMat, num, den, sinr_min, rate_min| QosRow {
                label,
                signal: s.clone(),
                interference: i.clone(),
                num,
                den,
                sinr_min,
                rate_min,
            };
            rows.push(row(format!("near[{k}]"), &own_n, &inter_n, a, 0.0, rn, config.r_min_near));
            rows.push(row(format!("f_at_n[{k}]"), &own_n, &inter_n, 1.0 - a, a, rf, config.r_min_far));
            rows.push(row(format!("f_at_f[{k}]"), &own_f, &inter_f, 1.0 - a, a, rf, config.r_min_far));
        }
        let (beams, gain_scale) = beam_forms(&channels.g, w_cov, config, angles)?;
        Ok(PassiveForms { rows, beams, gain_scale })
    }

    /// One beam per link, every other beam is interference.
    pub fn orthogonal(g: &CMat, links: &[UserLink], w_cov: &[CMat], config: &SystemConfig) -> Result<Self> {
        let (m, n) = g.shape();
        if w_cov.len() != links.len() || w_cov.iter().any(|w| w.shape() != (n, n)) {
            return Err(Error::Shape(format!("expected {} beams of size {n}x{n}", links.len())));
        }
        let snr = 1.0 / config.noise_power;
        let rows = links
            .iter()
            .enumerate()
            .map(|(u, link)| {
                let gamma = crate::linalg::diag_conj_mul(&link.channel, g);
                let inter = (0..links.len())
                    .filter(|&i| i != u)
                    .fold(CMat::zeros(m, m), |acc, i| acc + cascaded_form(&gamma, &w_cov[i], snr));
                QosRow {
                    label: format!("user[{u}]"),
                    signal: cascaded_form(&gamma, &w_cov[u], snr),
                    interference: inter,
                    num: 1.0,
                    den: 0.0,
                    sinr_min: link.rate_min.exp2() - 1.0,
                    rate_min: link.rate_min,
                }
            })
            .collect();
        let angles = AngleGrid::new(config).interested_angles();
        let (beams, gain_scale) = beam_forms(g, w_cov, config, &angles)?;
        Ok(PassiveForms { rows, beams, gain_scale })
    }

    /// Normalized min beampattern gain at a given `V`.
    pub fn min_gain(&self, v_cov: &CMat) -> f64 {
        self.beams.iter().map(|b| trace_re(b, v_cov)).fold(f64::INFINITY, f64::min)
    }

    /// Smallest rate margin `R − R_min` (bits/s/Hz) over all rows at `V`.
    pub fn worst_rate_margin(&self, v_cov: &CMat) -> f64 {
        self.rows.iter().map(|r| r.rate_margin(v_cov)).fold(f64::INFINITY, f64::min)
    }
}

/// Iterate of the rank-one relaxation.
#[derive(Clone, Debug)]
pub struct SrcrState {
    pub v_cov: CMat,
    /// ε ∈ [0, 1]
    pub epsilon: f64,
    pub rho: f64,
    pub iteration: usize,
    pub e_max: CVec,
    pub lambda_max: f64,
}

impl SrcrState {
    pub fn new(v_cov: CMat, epsilon: f64, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::State(format!("ε = {epsilon} outside [0, 1]")));
        }
        if !(rho > 0.0) {
            return Err(Error::State(format!("ρ = {rho} must be positive")));
        }
        for (m, d) in v_cov.diagonal().iter().enumerate() {
            if (d.re - 1.0).abs() > 1e-6 {
                return Err(Error::State(format!("[V]_{m}{m} = {d}, expected 1")));
            }
        }
        let (lambda_max, e_max) = principal_eigpair(&v_cov);
        Ok(SrcrState { v_cov, epsilon, rho, iteration: 0, e_max, lambda_max })
    }

    /// `Tr(V)/λ_max(V)`, equal to 1 exactly for rank one.
    pub fn rank_ratio(&self) -> f64 {
        trace(&self.v_cov) / self.lambda_max
    }
}

/// `ε ← min(1, λ_max(V)/Tr(V) + ρ)`.
pub fn update_epsilon(v_cov: &CMat, rho: f64) -> f64 {
    let tr = trace(v_cov);
    if tr <= 0.0 {
        return rho.min(1.0);
    }
    let (l, _) = principal_eigpair(v_cov);
    (l / tr + rho).min(1.0)
}

#[derive(Clone, Debug)]
pub struct SrcrProblem {
    pub problem: SdpProblem,
    pub chi: ScalarVar,
    pub v: HermitianVar,
}

/// SDP in `V` for the current relaxation state.
pub fn build_srcr_problem(forms: &PassiveForms, state: &SrcrState) -> Result<SrcrProblem> {
    let m = state.v_cov.nrows();
    if forms.beams.first().is_some_and(|b| b.nrows() != m) {
        return Err(Error::Shape(format!("state V is {m}x{m}, forms are {}", forms.beams[0].nrows())));
    }
    if !(0.0..=1.0).contains(&state.epsilon) {
        return Err(Error::State(format!("ε = {} outside [0, 1]", state.epsilon)));
    }
    let mut p = SdpProblem::new();
    let chi = p.add_scalar("chi", Bounds::nonneg());
    let v = p.add_psd("V", m);
    for row in &forms.rows {
        let lhs = Affine::trace(v, row.signal.clone()).scaled(row.num - row.sinr_min * row.den);
        let rhs = Affine::trace(v, row.interference.clone()).plus_const(1.0).scaled(row.sinr_min);
        p.add_ge(row.label.clone(), lhs, rhs);
    }
    for (q, b) in forms.beams.iter().enumerate() {
        p.add_ge(format!("beam[{q}]"), Affine::trace(v, b.clone()), Affine::scalar(chi));
    }
    for i in 0..m {
        let mut e = CMat::zeros(m, m);
        e[(i, i)] = 1.0.into();
        p.add_eq(format!("diag[{i}]"), Affine::trace(v, e), Affine::constant(1.0));
    }
    let cut = outer(&state.e_max) - CMat::identity(m, m).scale(state.epsilon);
    p.add_ge("eigen_cut", Affine::trace(v, cut), Affine::zero());
    p.maximize(Affine::scalar(chi));
    Ok(SrcrProblem { problem: p, chi, v })
}

/// Unit-modulus reflection coefficients from `V` and the fidelity
/// `‖V − V(v)‖_F / M²`. A vanishing eigenvector entry falls back to phase 0.
pub fn extract_phases(v_cov: &CMat) -> (CVec, f64) {
    let v = reflection_from_covariance(v_cov);
    let m = v_cov.nrows() as f64;
    let fidelity = frobenius(&(v_cov - ris_covariance(&v))) / (m * m);
    (v, fidelity)
}

#[derive(Clone, Debug)]
pub struct PassiveOutcome {
    /// reflection coefficients actually returned
    pub v: CVec,
    /// `V(v)`, exactly rank one
    pub v_cov: CMat,
    /// last accepted relaxation iterate
    pub srcr_v_cov: CMat,
    /// min beampattern gain at `v_cov`, physical units
    pub chi: f64,
    /// objective of every accepted iterate, physical units
    pub trace: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `Tr(V)/λ_max(V)` of the last accepted iterate
    pub rank_ratio: f64,
    pub fidelity: f64,
    /// extraction lost to the input configuration, which was kept
    pub kept_input: bool,
}

/// Diagonal rescaling `D^{-1/2} V D^{-1/2}` to remove solver residue on the
/// unit-diagonal constraint.
fn unit_diagonal(v: &CMat) -> CMat {
    let d: Vec<f64> = v.diagonal().iter().map(|z| z.re.max(1e-300).sqrt().recip()).collect();
    hermitian_part(&CMat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * d[i] * d[j]))
}

/// Runs the relaxation from `v_init` (rank one, unit diagonal) and extracts a
/// phase vector. If the extracted design is worse than the input or breaks
/// QoS by more than `1e-4` bits/s/Hz, the input is kept.
pub fn algorithm2(
    channels: &ChannelSet,
    w_cov: &[CMat],
    a_near: &[f64],
    config: &SystemConfig,
    v_init: &CMat,
) -> Result<PassiveOutcome> {
    let forms = PassiveForms::new(channels, w_cov, a_near, config)?;
    algorithm2_with_forms(&forms, config, v_init)
}

pub fn algorithm2_with_forms(forms: &PassiveForms, config: &SystemConfig, v_init: &CMat) -> Result<PassiveOutcome> {
    let rho0 = config.srcr_step;
    let mut state = SrcrState::new(v_init.clone(), 0.0, rho0)?;
    let mut trace_hat: Vec<f64> = Vec::new();
    let mut epsilons = Vec::new();
    let mut accepted: Option<CMat> = None;
    let mut converged = false;

    while state.iteration < config.t2_max {
        state.iteration += 1;
        let prob = build_srcr_problem(forms, &state)?;
        let sol = conic::solve(&prob.problem, config.solver_tol)?;
        match (sol.psd(prob.v), sol.scalar(prob.chi)) {
            (Some(v), Some(chi)) if sol.is_optimal() => {
                let v = unit_diagonal(v);
                let (l, e) = principal_eigpair(&v);
                trace_hat.push(chi);
                epsilons.push(state.epsilon);
                state.v_cov = v.clone();
                state.lambda_max = l;
                state.e_max = e;
                state.rho = rho0;
                accepted = Some(v);
            }
            _ => {
                state.rho /= 2.0;
                if state.rho < RHO_FLOOR {
                    let best = accepted.unwrap_or_else(|| v_init.clone());
                    return Err(Error::Stall {
                        iterations: state.iteration,
                        rho_floor: RHO_FLOOR,
                        chi: trace_hat.last().map_or(0.0, |c| c * forms.gain_scale),
                        best: Box::new(best),
                    });
                }
            }
        }
        state.epsilon = update_epsilon(&state.v_cov, state.rho);
        if accepted.is_some() && state.rank_ratio() <= 1.0 + config.srcr_rank_tol {
            let n = trace_hat.len();
            let settled = n >= 2 && (trace_hat[n - 1] - trace_hat[n - 2]).abs() <= config.srcr_rank_tol;
            if settled {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        warn!("SRCR stopped at the iteration cap with Tr(V)/λ_max = {:.6}", state.rank_ratio());
    }
    let srcr_v = accepted.unwrap_or_else(|| v_init.clone());
    let mut out = finalize(forms, &srcr_v, v_init);
    out.trace = trace_hat.iter().map(|c| c * forms.gain_scale).collect();
    out.epsilons = epsilons;
    out.iterations = state.iteration;
    out.converged = converged;
    Ok(out)
}

/// Extracts phases from a terminal relaxation iterate and applies the
/// keep-input safeguard.
pub fn finalize(forms: &PassiveForms, srcr_v: &CMat, v_init: &CMat) -> PassiveOutcome {
    let (v, fidelity) = extract_phases(srcr_v);
    let candidate = ris_covariance(&v);
    let (l, _) = principal_eigpair(srcr_v);
    let rank_ratio = trace(srcr_v) / l;
    let cand_chi = forms.min_gain(&candidate);
    let init_chi = forms.min_gain(v_init);
    let qos_ok = forms.worst_rate_margin(&candidate) >= -1e-4;
    let kept_input = !(qos_ok && cand_chi >= init_chi);
    let (v, v_cov, chi) = if kept_input {
        (reflection_from_covariance(v_init), v_init.clone(), init_chi)
    } else {
        (v, candidate, cand_chi)
    };
    PassiveOutcome {
        v,
        v_cov,
        srcr_v_cov: srcr_v.clone(),
        chi: chi.max(0.0) * forms.gain_scale,
        trace: Vec::new(),
        epsilons: Vec::new(),
        iterations: 0,
        converged: false,
        rank_ratio,
        fidelity,
        kept_input,
    }
}
