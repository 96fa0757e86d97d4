//! Transmit beamforming and NOMA power allocation for a fixed RIS
//! configuration: successive convex approximation over the semidefinite
//! relaxation in `W_k`.
//!
//! Internally the beams are normalized as `W̄_k = W_k / P_max`, user forms are
//! expressed in SNR units and beampattern gains in units of
//! [`gain_scale`](crate::sensing::gain_scale).

use log::warn;

use crate::config::SystemConfig;
use crate::conic::{self, Affine, Bounds, HermitianVar, ScalarVar, SdpProblem, SdpSolution, SolveStatus};
use crate::error::{Error, Result};
use crate::geometry::{ChannelSet, UserKind};
use crate::linalg::{frobenius, hermitian_eigen, hermitian_part, outer, second_to_first_eigen_ratio, trace_re, CMat, CVec};
use crate::comm::principal_beamformer;
use crate::sensing::{gain_scale, upsilon, AngleGrid};

/// Power-split coefficients live in `[A_MIN, 1 − A_MIN]`.
pub const A_MIN: f64 = 1e-4;
const BETA_FLOOR: f64 = 1e-12;
/// Candidate power splits tried when the SCA cannot start from the default
/// point.
const RESTORATION_SPLITS: [f64; 9] = [0.2, 0.3, 0.1, 0.4, 0.5, 0.05, 0.6, 0.7, 0.8];

/// First-order under-estimator of `η²` around `η̃`.
pub fn taylor_lower_bound(eta: f64, eta_tilde: f64) -> f64 {
    eta_tilde * eta_tilde + 2.0 * eta_tilde * (eta - eta_tilde)
}

/// `β a²/2 + t²/(2β) ≥ a·t`, tight at `β = t/a`.
pub fn agm_upper_bound(a: f64, t: f64, beta: f64) -> f64 {
    beta * a * a / 2.0 + t * t / (2.0 * beta)
}

/// Quadratic forms induced by one fixed `V`.
#[derive(Clone, Debug)]
pub struct ActiveForms {
    /// `P_max/σ² · Γᴴ V Γ` per cluster, near user
    pub near: Vec<CMat>,
    /// same for the far user
    pub far: Vec<CMat>,
    /// `Υ_qᴴ V Υ_q · P_max / gain_scale` per interested angle
    pub beams: Vec<CMat>,
    pub angles: Vec<f64>,
    pub gain_scale: f64,
    pub r_near: f64,
    pub r_far: f64,
    pub p_max: f64,
}

impl ActiveForms {
    pub fn new(channels: &ChannelSet, v_cov: &CMat, config: &SystemConfig) -> Result<Self> {
        let angles = AngleGrid::new(config).interested_angles();
        Self::with_angles(channels, v_cov, config, angles)
    }

    pub fn with_angles(channels: &ChannelSet, v_cov: &CMat, config: &SystemConfig, angles: Vec<f64>) -> Result<Self> {
        let (m, _) = channels.g.shape();
        if v_cov.shape() != (m, m) {
            return Err(Error::Shape(format!("V is {:?}, RIS has {m} elements", v_cov.shape())));
        }
        for (i, d) in v_cov.diagonal().iter().enumerate() {
            if (d.re - 1.0).abs() > 1e-6 {
                return Err(Error::State(format!("[V]_{i}{i} = {d}, expected 1")));
            }
        }
        if angles.is_empty() {
            return Err(Error::Domain("no interested angles".into()));
        }
        let snr = config.p_max / config.noise_power;
        let form = |gamma: CMat, s: f64| hermitian_part(&(gamma.adjoint() * v_cov * gamma)).scale(s);
        let kk = channels.n_clusters();
        let near = (0..kk).map(|k| form(channels.cascaded(k, UserKind::Near), snr)).collect();
        let far = (0..kk).map(|k| form(channels.cascaded(k, UserKind::Far), snr)).collect();
        let scale = gain_scale(config.p_max, &channels.g);
        let beams = angles
            .iter()
            .map(|&t| form(upsilon(t, &channels.g, config.spacing_ratio), config.p_max / scale))
            .collect();
        Ok(ActiveForms {
            near,
            far,
            beams,
            angles,
            gain_scale: scale,
            r_near: config.sinr_min_near(),
            r_far: config.sinr_min_far(),
            p_max: config.p_max,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.near.len()
    }

    pub fn n_tx(&self) -> usize {
        self.near.first().map_or(0, |h| h.nrows())
    }

    fn forms(&self, kind: UserKind) -> &[CMat] {
        match kind {
            UserKind::Near => &self.near,
            UserKind::Far => &self.far,
        }
    }

    /// SNR of beam `j` at user `(k, kind)` for normalized beams.
    pub fn snr(&self, k: usize, kind: UserKind, w_bar: &CMat) -> f64 {
        trace_re(&self.forms(kind)[k], w_bar)
    }

    pub fn interference(&self, k: usize, kind: UserKind, w_bar: &[CMat]) -> f64 {
        (0..w_bar.len()).filter(|&j| j != k).map(|j| self.snr(k, kind, &w_bar[j])).sum()
    }

    /// Normalized min beampattern gain over the interested angles.
    pub fn min_gain(&self, w_bar: &[CMat]) -> f64 {
        self.beams
            .iter()
            .map(|b| w_bar.iter().map(|w| trace_re(b, w)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    fn trace_sum(&self, k: usize, kind: UserKind, w: &[HermitianVar], own: bool) -> Affine {
        let h = &self.forms(kind)[k];
        w.iter()
            .enumerate()
            .filter(|(j, _)| (*j == k) == own)
            .fold(Affine::zero(), |acc, (_, &x)| acc.plus_trace(x, h.clone(), 1.0))
    }

    /// Necessary conditions: even a full-power beam aligned with the best
    /// eigenvector cannot reach the SINR floor.
    pub fn precheck(&self) -> Result<()> {
        for k in 0..self.n_clusters() {
            let top = |h: &CMat| hermitian_eigen(h).0[0];
            let (ln, lf) = (top(&self.near[k]), top(&self.far[k]));
            if self.r_near > 0.0 && self.r_near >= ln {
                return Err(Error::Infeasible(format!(
                    "cluster {k}: near-user SINR floor {:.3e} exceeds the best attainable {ln:.3e}",
                    self.r_near
                )));
            }
            if self.r_far > 0.0 && (self.r_far >= lf || self.r_far >= ln) {
                return Err(Error::Infeasible(format!(
                    "cluster {k}: far-user SINR floor {:.3e} exceeds the best attainable {:.3e}",
                    self.r_far,
                    lf.min(ln)
                )));
            }
        }
        Ok(())
    }
}

/// Fixed points of the convex surrogates.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaState {
    pub eta_tilde: Vec<f64>,
    /// AGM weight for the far message decoded at the near user
    pub beta_near: Vec<f64>,
    /// AGM weight for the far message decoded at the far user
    pub beta_far: Vec<f64>,
    pub iteration: usize,
    /// normalized objective after each solve
    pub chi_trace: Vec<f64>,
}

impl ScaState {
    /// Fixed points that make every surrogate tight at `(W̄, a)`.
    pub fn at_point(forms: &ActiveForms, w_bar: &[CMat], a_near: &[f64]) -> Result<Self> {
        let etas: Vec<f64> = (0..forms.n_clusters())
            .map(|k| (a_near[k] * forms.snr(k, UserKind::Near, &w_bar[k])).max(0.0).sqrt())
            .collect();
        Self::from_parts(forms, w_bar, a_near, etas, 0, Vec::new())
    }

    fn from_parts(
        forms: &ActiveForms,
        w_bar: &[CMat],
        a_near: &[f64],
        etas: Vec<f64>,
        iteration: usize,
        chi_trace: Vec<f64>,
    ) -> Result<Self> {
        let kk = forms.n_clusters();
        if w_bar.len() != kk || a_near.len() != kk || etas.len() != kk {
            return Err(Error::Shape(format!("expected {kk} clusters")));
        }
        let mut beta_near = Vec::with_capacity(kk);
        let mut beta_far = Vec::with_capacity(kk);
        for k in 0..kk {
            let a = a_near[k];
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::State(format!("cluster {k}: power split a = {a} is not positive")));
            }
            if forms.r_near > 0.0 && !(etas[k] > 0.0) {
                return Err(Error::State(format!("cluster {k}: fixed point η̃ = {} is not positive", etas[k])));
            }
            beta_near.push((forms.snr(k, UserKind::Near, &w_bar[k]) / a).max(BETA_FLOOR));
            beta_far.push((forms.snr(k, UserKind::Far, &w_bar[k]) / a).max(BETA_FLOOR));
        }
        Ok(ScaState { eta_tilde: etas, beta_near, beta_far, iteration, chi_trace })
    }
}

/// The convex surrogate problem and handles to its variables.
#[derive(Clone, Debug)]
pub struct RelaxedProblem {
    pub problem: SdpProblem,
    pub chi: ScalarVar,
    pub a: Vec<ScalarVar>,
    pub eta: Vec<ScalarVar>,
    pub w: Vec<HermitianVar>,
}

impl RelaxedProblem {
    /// `(W̄, a, η, χ̂)` at an optimal solution.
    pub fn point(&self, sol: &SdpSolution) -> Option<(Vec<CMat>, Vec<f64>, Vec<f64>, f64)> {
        let w = self.w.iter().map(|&x| sol.psd(x).map(hermitian_part)).collect::<Option<Vec<_>>>()?;
        let a = self.a.iter().map(|&x| sol.scalar(x)).collect::<Option<Vec<_>>>()?;
        let eta = self.eta.iter().map(|&x| sol.scalar(x)).collect::<Option<Vec<_>>>()?;
        Some((w, a, eta, sol.scalar(self.chi)?))
    }
}

fn common_problem(forms: &ActiveForms) -> (SdpProblem, ScalarVar, Vec<HermitianVar>) {
    let n = forms.n_tx();
    let mut p = SdpProblem::new();
    let chi = p.add_scalar("chi", Bounds::nonneg());
    let w: Vec<HermitianVar> = (0..forms.n_clusters()).map(|k| p.add_psd(format!("W{k}"), n)).collect();
    for (q, b) in forms.beams.iter().enumerate() {
        let gain = w.iter().fold(Affine::zero(), |acc, &x| acc.plus_trace(x, b.clone(), 1.0));
        p.add_ge(format!("beam[{q}]"), gain, Affine::scalar(chi));
    }
    let power = w.iter().fold(Affine::zero(), |acc, &x| acc.plus_trace(x, CMat::identity(n, n), 1.0));
    p.add_le("power", power, Affine::constant(1.0));
    p.maximize(Affine::scalar(chi));
    (p, chi, w)
}

/// Builds the SCA surrogate around `state` for the forms of a fixed `V`.
pub fn build_relaxed_problem(forms: &ActiveForms, state: &ScaState) -> Result<RelaxedProblem> {
    let kk = forms.n_clusters();
    if state.eta_tilde.len() != kk || state.beta_near.len() != kk || state.beta_far.len() != kk {
        return Err(Error::Shape(format!("SCA state does not match {kk} clusters")));
    }
    let (mut p, chi, w) = common_problem(forms);
    let mut a = Vec::with_capacity(kk);
    let mut eta = Vec::with_capacity(kk);
    for k in 0..kk {
        a.push(p.add_scalar(format!("a{k}"), Bounds::between(A_MIN, 1.0 - A_MIN)));
        eta.push(p.add_scalar(format!("eta{k}"), Bounds::nonneg()));
    }
    for k in 0..kk {
        let (et, b1, b2) = (state.eta_tilde[k], state.beta_near[k], state.beta_far[k]);
        if forms.r_near > 0.0 && !(et > 0.0) {
            return Err(Error::State(format!("cluster {k}: fixed point η̃ = {et} is not positive")));
        }
        if forms.r_far > 0.0 && !(b1 > 0.0 && b2 > 0.0) {
            return Err(Error::State(format!("cluster {k}: AGM weights ({b1}, {b2}) not positive")));
        }
        let t_n = forms.trace_sum(k, UserKind::Near, &w, true);
        let i_n = forms.trace_sum(k, UserKind::Near, &w, false);
        let t_f = forms.trace_sum(k, UserKind::Far, &w, true);
        let i_f = forms.trace_sum(k, UserKind::Far, &w, false);
        if forms.r_near > 0.0 {
            p.add_lmi(
                format!("schur[{k}]"),
                vec![
                    vec![Affine::scalar(a[k]), Affine::scalar(eta[k])],
                    vec![Affine::scalar(eta[k]), t_n.clone()],
                ],
            );
            let lin = Affine::constant(-et * et).plus_scalar(eta[k], 2.0 * et);
            p.add_ge(format!("taylor[{k}]"), lin, i_n.clone().plus_const(1.0).scaled(forms.r_near));
        }
        if forms.r_far > 0.0 {
            let r = forms.r_far;
            for (label, t, i, beta) in [("agm_near", &t_n, &i_n, b1), ("agm_far", &t_f, &i_f, b2)] {
                let bound = t.clone().minus(&i.clone().plus_const(1.0).scaled(r)).scaled(1.0 / (r + 1.0));
                let z = vec![
                    Affine::scalar(a[k]).scaled((beta / 2.0).sqrt()),
                    t.clone().scaled(1.0 / (2.0 * beta).sqrt()),
                ];
                p.add_sum_squares_le(format!("{label}[{k}]"), z, bound);
            }
        }
    }
    Ok(RelaxedProblem { problem: p, chi, a, eta, w })
}

/// Moves the fixed points to the solution just obtained: `η̃ ← η` and both
/// AGM weights to their tight values.
pub fn update_fixed_points(forms: &ActiveForms, relaxed: &RelaxedProblem, sol: &SdpSolution, prev: &ScaState) -> Result<ScaState> {
    let (w, a, eta, chi) = relaxed
        .point(sol)
        .ok_or_else(|| Error::State(format!("cannot update fixed points from a {} solve", sol.status)))?;
    let mut trace = prev.chi_trace.clone();
    trace.push(chi);
    ScaState::from_parts(forms, &w, &a, eta, prev.iteration + 1, trace)
}

/// The QoS constraints for a fixed power split are linear in `W̄`.
fn fixed_split_problem(forms: &ActiveForms, a_near: &[f64]) -> (SdpProblem, ScalarVar, Vec<HermitianVar>) {
    let (mut p, chi, w) = common_problem(forms);
    for (k, &a) in a_near.iter().enumerate() {
        let t_n = forms.trace_sum(k, UserKind::Near, &w, true);
        let i_n = forms.trace_sum(k, UserKind::Near, &w, false);
        let t_f = forms.trace_sum(k, UserKind::Far, &w, true);
        let i_f = forms.trace_sum(k, UserKind::Far, &w, false);
        if forms.r_near > 0.0 {
            p.add_ge(format!("near[{k}]"), t_n.clone().scaled(a), i_n.clone().plus_const(1.0).scaled(forms.r_near));
        }
        if forms.r_far > 0.0 {
            let r = forms.r_far;
            for (label, t, i) in [("f_at_n", &t_n, &i_n), ("f_at_f", &t_f, &i_f)] {
                let rhs = t.clone().scaled(a).plus(i).plus_const(1.0).scaled(r);
                p.add_ge(format!("{label}[{k}]"), t.clone().scaled(1.0 - a), rhs);
            }
        }
    }
    (p, chi, w)
}

/// Feasible starting point found by scanning a common power split.
fn restoration(forms: &ActiveForms, tol: f64) -> Result<Option<(Vec<CMat>, Vec<f64>, f64)>> {
    let mut best: Option<(Vec<CMat>, Vec<f64>, f64)> = None;
    for &split in &RESTORATION_SPLITS {
        let a = vec![split; forms.n_clusters()];
        let (p, chi, w) = fixed_split_problem(forms, &a);
        let sol = conic::solve(&p, tol)?;
        if !sol.is_optimal() {
            continue;
        }
        let value = sol.scalar(chi).unwrap_or(0.0);
        if best.as_ref().is_none_or(|b| value > b.2) {
            let ws = w.iter().map(|&x| sol.psd(x).map(hermitian_part).unwrap_or_default()).collect();
            best = Some((ws, a, value));
        }
    }
    Ok(best)
}

/// Starting point for [`algorithm1`].
#[derive(Clone, Copy, Debug)]
pub enum ActiveInit<'a> {
    /// `a = 0.2`, `W = P_max/(K N_T)·I`
    Default,
    /// continue from a previous `(W, a)` in physical units
    Warm { w_cov: &'a [CMat], a_near: &'a [f64] },
}

#[derive(Clone, Debug)]
pub struct ActiveOutcome {
    /// physical covariance blocks `W_k`
    pub w_cov: Vec<CMat>,
    pub a_near: Vec<f64>,
    /// min beampattern gain over the interested angles at the returned `W`
    pub chi: f64,
    /// objective after each SCA solve, physical units
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// the default start was infeasible and a fixed-split search was used
    pub restored: bool,
    /// `λ₂/λ₁` per block
    pub rank_ratios: Vec<f64>,
}

fn starting_points(forms: &ActiveForms, init: ActiveInit) -> Vec<(Vec<CMat>, Vec<f64>)> {
    let (kk, n) = (forms.n_clusters(), forms.n_tx());
    let default = (vec![CMat::identity(n, n).scale(1.0 / (kk * n) as f64); kk], vec![0.2; kk]);
    match init {
        ActiveInit::Default => vec![default],
        ActiveInit::Warm { w_cov, a_near } => {
            let w = w_cov.iter().map(|w| w.scale(1.0 / forms.p_max)).collect();
            let a = a_near.iter().map(|a| a.clamp(A_MIN, 1.0 - A_MIN)).collect();
            vec![(w, a), default]
        }
    }
}

/// Alternates surrogate solves and fixed-point updates until the objective
/// settles.
pub fn algorithm1(channels: &ChannelSet, v_cov: &CMat, config: &SystemConfig, init: ActiveInit) -> Result<ActiveOutcome> {
    let forms = ActiveForms::new(channels, v_cov, config)?;
    algorithm1_with_forms(&forms, config, init)
}

pub fn algorithm1_with_forms(forms: &ActiveForms, config: &SystemConfig, init: ActiveInit) -> Result<ActiveOutcome> {
    forms.precheck()?;
    let tol = config.solver_tol;

    // first surrogate solve, falling back through the candidate starts
    let mut first = None;
    let mut last_status = SolveStatus::Infeasible;
    let mut restored = false;
    for (w, a) in starting_points(forms, init) {
        let state = match ScaState::at_point(forms, &w, &a) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let relaxed = build_relaxed_problem(forms, &state)?;
        let sol = conic::solve(&relaxed.problem, tol)?;
        if sol.is_optimal() {
            first = Some((state, relaxed, sol));
            break;
        }
        last_status = sol.status;
    }
    if first.is_none() {
        if let Some((w, a, _)) = restoration(forms, tol)? {
            restored = true;
            let state = ScaState::at_point(forms, &w, &a)?;
            let relaxed = build_relaxed_problem(forms, &state)?;
            let sol = conic::solve(&relaxed.problem, tol)?;
            if sol.is_optimal() {
                first = Some((state, relaxed, sol));
            } else {
                last_status = sol.status;
            }
        }
    }
    let (state, relaxed, sol) = first.ok_or_else(|| match last_status {
        SolveStatus::NumericalFailure => Error::Solver("surrogate solve failed at every starting point".into()),
        _ => Error::Infeasible("QoS floors cannot be met for this RIS configuration".into()),
    })?;

    let mut state = update_fixed_points(forms, &relaxed, &sol, &state)?;
    let (mut w, mut a, _, _) = relaxed.point(&sol).expect("optimal solution has values");
    let mut converged = false;
    while state.iteration < config.t1_max {
        let relaxed = build_relaxed_problem(forms, &state)?;
        let sol = conic::solve(&relaxed.problem, tol)?;
        if !sol.is_optimal() {
            warn!("SCA surrogate became {} at iteration {}; keeping the previous iterate", sol.status, state.iteration + 1);
            break;
        }
        let next = update_fixed_points(forms, &relaxed, &sol, &state)?;
        let (nw, na, _, _) = relaxed.point(&sol).expect("optimal solution has values");
        w = nw;
        a = na;
        let t = &next.chi_trace;
        let (prev, cur) = (t[t.len() - 2], t[t.len() - 1]);
        state = next;
        if (cur - prev).abs() <= config.sca_tol {
            converged = true;
            break;
        }
    }

    let chi = forms.min_gain(&w).max(0.0) * forms.gain_scale;
    let w_cov: Vec<CMat> = w.iter().map(|x| x.scale(forms.p_max)).collect();
    Ok(ActiveOutcome {
        rank_ratios: w_cov.iter().map(second_to_first_eigen_ratio).collect(),
        trace: state.chi_trace.iter().map(|c| c * forms.gain_scale).collect(),
        iterations: state.iteration,
        converged,
        restored,
        w_cov,
        a_near: a,
        chi,
    })
}

/// Principal-component beamformers and the relative reconstruction error
/// `‖W − w wᴴ‖_F / ‖W‖_F` of each block.
pub fn extract_beamformers(w_cov: &[CMat]) -> Vec<(CVec, f64)> {
    w_cov
        .iter()
        .map(|w| {
            let v = principal_beamformer(w);
            let norm = frobenius(w);
            let err = if norm > 0.0 { frobenius(&(w - outer(&v))) / norm } else { 0.0 };
            (v, err)
        })
        .collect()
}
