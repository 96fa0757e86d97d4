//! Outer alternation between the transmit design and the RIS design, and the
//! orthogonal-beam (no NOMA) reference system.

use log::warn;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::active::{algorithm1, extract_beamformers, ActiveInit, ActiveOutcome};
use crate::comm::{ris_covariance, BeamState};
use crate::config::SystemConfig;
use crate::conic::{self, Affine, Bounds, SdpProblem};
use crate::error::{Error, Result};
use crate::geometry::{trial_rng, ChannelSet, UserKind, RIS_INIT_STREAM};
use crate::linalg::{diag_conj_mul, hermitian_eigen, hermitian_part, outer, principal_eigpair, second_to_first_eigen_ratio, trace_re, CMat, CVec};
use crate::passive::{algorithm2_with_forms, finalize, PassiveForms, PassiveOutcome, UserLink};
use crate::sensing::{gain_scale, min_gain, upsilon, AngleGrid};

/// Blocks with `λ₂/λ₁` above this are treated as not rank one.
pub const RANK_ONE_TOL: f64 = 1e-5;

/// Random unit-modulus starting point for the RIS, drawn from the trial's
/// dedicated stream.
pub fn initial_reflection(config: &SystemConfig, seed: u64) -> CVec {
    let mut rng = trial_rng(config, seed, RIS_INIT_STREAM);
    CVec::from_fn(config.n_ris, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
}

/// Diagnostics of one outer iteration.
#[derive(Clone, Debug, Serialize)]
pub struct OuterStep {
    pub active_trace: Vec<f64>,
    pub active_iterations: usize,
    pub active_restored: bool,
    /// `λ₂/λ₁` of each transmit block
    pub active_rank_ratios: Vec<f64>,
    pub passive_trace: Vec<f64>,
    pub passive_iterations: usize,
    pub passive_converged: bool,
    pub passive_stalled: bool,
    pub passive_kept_input: bool,
    /// `Tr(V)/λ_max(V)` of the terminal relaxation iterate
    pub passive_rank_ratio: f64,
    /// max deviation of `diag(V)` from 1 at the terminal relaxation iterate
    pub passive_diag_error: f64,
    /// min beampattern gain after the step
    pub chi: f64,
}

#[derive(Clone, Debug)]
pub struct JointOutcome {
    pub state: BeamState,
    pub chi: f64,
    pub outer_trace: Vec<f64>,
    pub steps: Vec<OuterStep>,
    pub converged: bool,
    /// `P_max·M·‖G‖_F²`, the unit in which tolerances are applied
    pub gain_scale: f64,
    /// `‖W − wwᴴ‖_F/‖W‖_F` per cluster
    pub extraction_errors: Vec<f64>,
    /// `‖V − V(v)‖_F/M²` of the last relaxation iterate
    pub phase_fidelity: f64,
}

fn diag_error(v: &CMat) -> f64 {
    v.diagonal().iter().map(|d| (d - Complex64::from(1.0)).norm()).fold(0.0, f64::max)
}

/// Runs the RIS relaxation and turns a stall into its best iterate.
fn passive_step(forms: &PassiveForms, config: &SystemConfig, v_cov: &CMat) -> Result<(PassiveOutcome, bool)> {
    match algorithm2_with_forms(forms, config, v_cov) {
        Ok(p) => Ok((p, false)),
        Err(Error::Stall { best, iterations, .. }) => {
            warn!("RIS relaxation stalled after {iterations} iterations; using its best iterate");
            let mut p = finalize(forms, &best, v_cov);
            p.iterations = iterations;
            Ok((p, true))
        }
        Err(e) => Err(e),
    }
}

fn outer_step(active: &ActiveOutcome, passive: &PassiveOutcome, stalled: bool) -> OuterStep {
    OuterStep {
        active_trace: active.trace.clone(),
        active_iterations: active.iterations,
        active_restored: active.restored,
        active_rank_ratios: active.rank_ratios.clone(),
        passive_trace: passive.trace.clone(),
        passive_iterations: passive.iterations,
        passive_converged: passive.converged,
        passive_stalled: stalled,
        passive_kept_input: passive.kept_input,
        passive_rank_ratio: passive.rank_ratio,
        passive_diag_error: diag_error(&passive.srcr_v_cov),
        chi: passive.chi,
    }
}

/// Last step of a physical-unit trace, measured in units of `scale`.
fn settled(trace: &[f64], scale: f64, tol: f64) -> bool {
    match trace {
        [.., prev, cur] => (cur - prev).abs() <= tol * scale,
        _ => false,
    }
}

/// Alternates the transmit design (given `V`) and the RIS design (given
/// `W`, `a`) from a seeded random RIS configuration.
pub fn algorithm3(channels: &ChannelSet, config: &SystemConfig, seed: u64) -> Result<JointOutcome> {
    config.validate()?;
    channels.check_dims(config.n_tx, config.n_ris)?;
    let scale = gain_scale(config.p_max, &channels.g);
    let mut v = initial_reflection(config, seed);
    let mut v_cov = ris_covariance(&v);
    let mut last: Option<ActiveOutcome> = None;
    let mut steps = Vec::new();
    let mut outer_trace = Vec::new();
    let mut fidelity = 0.0;
    let mut converged = false;

    for t in 0..config.t3_max {
        let init = match &last {
            Some(p) => ActiveInit::Warm { w_cov: &p.w_cov, a_near: &p.a_near },
            None => ActiveInit::Default,
        };
        let active = match algorithm1(channels, &v_cov, config, init) {
            Ok(a) => a,
            Err(e) if t == 0 => return Err(e),
            Err(e) => {
                warn!("transmit design failed at outer iteration {}: {e}; keeping the previous iterate", t + 1);
                break;
            }
        };
        let step = PassiveForms::new(channels, &active.w_cov, &active.a_near, config)
            .and_then(|forms| passive_step(&forms, config, &v_cov));
        let (passive, stalled) = match step {
            Ok(p) => p,
            Err(e) => {
                warn!("RIS design failed at outer iteration {}: {e}; keeping the previous iterate", t + 1);
                last = Some(active);
                break;
            }
        };
        steps.push(outer_step(&active, &passive, stalled));
        outer_trace.push(passive.chi);
        v = passive.v;
        v_cov = passive.v_cov;
        fidelity = passive.fidelity;
        last = Some(active);
        if settled(&outer_trace, scale, config.outer_tol) {
            converged = true;
            break;
        }
    }

    let active = last.expect("first outer iteration either succeeds or returns");
    let extracted = extract_beamformers(&active.w_cov);
    let state = BeamState {
        a_far: active.a_near.iter().map(|a| 1.0 - a).collect(),
        a_near: active.a_near.clone(),
        w: extracted.iter().map(|(w, _)| w.clone()).collect(),
        w_cov: active.w_cov.clone(),
        v_cov,
        v,
    };
    let angles = AngleGrid::new(config).interested_angles();
    let (chi, _) = min_gain(&state.v_cov, &state.w_cov, &channels.g, &angles, config.spacing_ratio)?;
    Ok(JointOutcome {
        state,
        chi,
        outer_trace,
        steps,
        converged,
        gain_scale: scale,
        extraction_errors: extracted.iter().map(|(_, e)| *e).collect(),
        phase_fidelity: fidelity,
    })
}

/// Links of the orthogonal system: every NOMA user gets its own beam, RNUs
/// keep the near QoS floor and RFUs the far one.
pub fn orthogonal_links(channels: &ChannelSet, config: &SystemConfig) -> Vec<UserLink> {
    channels
        .flat_users()
        .into_iter()
        .map(|(kind, h)| UserLink {
            channel: h.clone(),
            rate_min: match kind {
                UserKind::Near => config.r_min_near,
                UserKind::Far => config.r_min_far,
            },
        })
        .collect()
}

/// Transmit design of the orthogonal system for a fixed `V`.
#[derive(Clone, Debug)]
pub struct OrthogonalActive {
    /// physical covariance blocks, one per link
    pub w_cov: Vec<CMat>,
    pub chi: f64,
    pub rank_ratios: Vec<f64>,
    /// the relaxation was not rank one and powers were refitted on the
    /// principal directions
    pub refitted: bool,
}

struct LinkForms {
    /// `P_max/σ² · Γ_uᴴ V Γ_u`
    users: Vec<CMat>,
    sinr_min: Vec<f64>,
    /// `Υ_qᴴ V Υ_q · P_max/gain_scale`
    beams: Vec<CMat>,
    scale: f64,
}

impl LinkForms {
    fn new(g: &CMat, links: &[UserLink], v_cov: &CMat, config: &SystemConfig) -> Self {
        let form = |gamma: CMat, s: f64| hermitian_part(&(gamma.adjoint() * v_cov * gamma)).scale(s);
        let snr = config.p_max / config.noise_power;
        let scale = gain_scale(config.p_max, g);
        LinkForms {
            users: links.iter().map(|l| form(diag_conj_mul(&l.channel, g), snr)).collect(),
            sinr_min: links.iter().map(|l| l.rate_min.exp2() - 1.0).collect(),
            beams: AngleGrid::new(config)
                .interested_angles()
                .iter()
                .map(|&t| form(upsilon(t, g, config.spacing_ratio), config.p_max / scale))
                .collect(),
            scale,
        }
    }
}

/// SDR of the max-min beampattern problem with one SINR constraint per link.
/// Non-rank-one blocks are replaced by their principal directions with
/// refitted powers.
pub fn orthogonal_active(g: &CMat, links: &[UserLink], v_cov: &CMat, config: &SystemConfig) -> Result<OrthogonalActive> {
    let forms = LinkForms::new(g, links, v_cov, config);
    let n = g.ncols();
    let u_count = links.len();
    for (u, (h, r)) in forms.users.iter().zip(&forms.sinr_min).enumerate() {
        let top = hermitian_eigen(h).0[0];
        if *r > 0.0 && *r >= top {
            return Err(Error::Infeasible(format!("link {u}: SINR floor {r:.3e} exceeds the best attainable {top:.3e}")));
        }
    }
    let mut p = SdpProblem::new();
    let chi = p.add_scalar("chi", Bounds::nonneg());
    let w: Vec<_> = (0..u_count).map(|u| p.add_psd(format!("W{u}"), n)).collect();
    for (q, b) in forms.beams.iter().enumerate() {
        let gain = w.iter().fold(Affine::zero(), |acc, &x| acc.plus_trace(x, b.clone(), 1.0));
        p.add_ge(format!("beam[{q}]"), gain, Affine::scalar(chi));
    }
    let power = w.iter().fold(Affine::zero(), |acc, &x| acc.plus_trace(x, CMat::identity(n, n), 1.0));
    p.add_le("power", power, Affine::constant(1.0));
    for u in 0..u_count {
        let r = forms.sinr_min[u];
        if r <= 0.0 {
            continue;
        }
        let h = &forms.users[u];
        let inter = (0..u_count).filter(|&i| i != u).fold(Affine::zero(), |acc, i| acc.plus_trace(w[i], h.clone(), 1.0));
        p.add_ge(format!("sinr[{u}]"), Affine::trace(w[u], h.clone()), inter.plus_const(1.0).scaled(r));
    }
    p.maximize(Affine::scalar(chi));
    let sol = conic::solve(&p, config.solver_tol)?;
    if !sol.is_optimal() {
        return Err(match sol.status {
            conic::SolveStatus::Infeasible => Error::Infeasible("orthogonal QoS floors cannot be met".into()),
            s => Error::Solver(format!("orthogonal design solve ended {s}")),
        });
    }
    let w_bar: Vec<CMat> = w.iter().map(|&x| hermitian_part(sol.psd(x).expect("optimal"))).collect();
    let ratios: Vec<f64> = w_bar.iter().map(second_to_first_eigen_ratio).collect();
    let mut out = OrthogonalActive {
        w_cov: w_bar.iter().map(|x| x.scale(config.p_max)).collect(),
        chi: sol.scalar(chi).expect("optimal") * forms.scale,
        rank_ratios: ratios.clone(),
        refitted: false,
    };
    if ratios.iter().any(|&r| r > RANK_ONE_TOL) {
        let dirs: Vec<CVec> = w_bar.iter().map(|x| principal_eigpair(x).1).collect();
        match refit_powers(&forms, &dirs, config.solver_tol)? {
            Some((powers, value)) => {
                out.w_cov = dirs.iter().zip(&powers).map(|(d, p)| outer(d).scale(p * config.p_max)).collect();
                out.chi = value * forms.scale;
                out.rank_ratios = vec![0.0; u_count];
                out.refitted = true;
            }
            None => warn!("power refit on principal directions is infeasible; keeping the relaxed blocks"),
        }
    }
    Ok(out)
}

/// Max-min gain over nonnegative powers on fixed unit directions. Linear in
/// the powers.
fn refit_powers(forms: &LinkForms, dirs: &[CVec], tol: f64) -> Result<Option<(Vec<f64>, f64)>> {
    let quad = |a: &CMat, d: &CVec| trace_re(a, &outer(d));
    let mut p = SdpProblem::new();
    let chi = p.add_scalar("chi", Bounds::nonneg());
    let pw: Vec<_> = (0..dirs.len()).map(|u| p.add_scalar(format!("p{u}"), Bounds::nonneg())).collect();
    for (q, b) in forms.beams.iter().enumerate() {
        let gain = pw.iter().zip(dirs).fold(Affine::zero(), |acc, (&x, d)| acc.plus_scalar(x, quad(b, d)));
        p.add_ge(format!("beam[{q}]"), gain, Affine::scalar(chi));
    }
    let total = pw.iter().fold(Affine::zero(), |acc, &x| acc.plus_scalar(x, 1.0));
    p.add_le("power", total, Affine::constant(1.0));
    for (u, h) in forms.users.iter().enumerate() {
        let r = forms.sinr_min[u];
        if r <= 0.0 {
            continue;
        }
        let inter = (0..dirs.len())
            .filter(|&i| i != u)
            .fold(Affine::zero(), |acc, i| acc.plus_scalar(pw[i], quad(h, &dirs[i])));
        p.add_ge(format!("sinr[{u}]"), Affine::scalar(pw[u]).scaled(quad(h, &dirs[u])), inter.plus_const(1.0).scaled(r));
    }
    p.maximize(Affine::scalar(chi));
    let sol = conic::solve(&p, tol)?;
    if !sol.is_optimal() {
        return Ok(None);
    }
    let powers = pw.iter().map(|&x| sol.scalar(x).unwrap_or(0.0).max(0.0)).collect();
    Ok(Some((powers, sol.scalar(chi).unwrap_or(0.0))))
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub w_cov: Vec<CMat>,
    pub w: Vec<CVec>,
    pub v: CVec,
    pub v_cov: CMat,
    pub chi: f64,
    pub outer_trace: Vec<f64>,
    pub converged: bool,
    pub gain_scale: f64,
    /// outer iterations whose transmit relaxation needed a power refit
    pub refit_events: usize,
}

/// Orthogonal-beam ISAC reference: one beam per user, no power splitting,
/// same sensing objective and alternation.
pub fn baseline_ris_isac(channels: &ChannelSet, config: &SystemConfig, seed: u64) -> Result<BaselineOutcome> {
    config.validate()?;
    channels.check_dims(config.n_tx, config.n_ris)?;
    let links = orthogonal_links(channels, config);
    baseline_with_links(&channels.g, &links, config, seed)
}

/// [`baseline_ris_isac`] for an arbitrary list of links.
pub fn baseline_with_links(g: &CMat, links: &[UserLink], config: &SystemConfig, seed: u64) -> Result<BaselineOutcome> {
    if links.is_empty() {
        return Err(Error::Domain("orthogonal system needs at least one link".into()));
    }
    let scale = gain_scale(config.p_max, g);
    let mut v = initial_reflection(config, seed);
    let mut v_cov = ris_covariance(&v);
    let mut best: Option<OrthogonalActive> = None;
    let mut outer_trace = Vec::new();
    let mut refit_events = 0;
    let mut converged = false;
    for t in 0..config.t3_max {
        let active = match orthogonal_active(g, links, &v_cov, config) {
            Ok(a) => a,
            Err(e) if t == 0 => return Err(e),
            Err(e) => {
                warn!("orthogonal transmit design failed at outer iteration {}: {e}", t + 1);
                break;
            }
        };
        refit_events += usize::from(active.refitted);
        let step = PassiveForms::orthogonal(g, links, &active.w_cov, config)
            .and_then(|forms| passive_step(&forms, config, &v_cov));
        let passive = match step {
            Ok((p, _)) => p,
            Err(e) => {
                warn!("orthogonal RIS design failed at outer iteration {}: {e}", t + 1);
                best = Some(active);
                break;
            }
        };
        outer_trace.push(passive.chi);
        v = passive.v;
        v_cov = passive.v_cov;
        best = Some(active);
        if settled(&outer_trace, scale, config.outer_tol) {
            converged = true;
            break;
        }
    }
    let active = best.expect("first outer iteration either succeeds or returns");
    let angles = AngleGrid::new(config).interested_angles();
    let (chi, _) = min_gain(&v_cov, &active.w_cov, g, &angles, config.spacing_ratio)?;
    Ok(BaselineOutcome {
        w: extract_beamformers(&active.w_cov).into_iter().map(|(w, _)| w).collect(),
        w_cov: active.w_cov,
        v,
        v_cov,
        chi,
        outer_trace,
        converged,
        gain_scale: scale,
        refit_events,
    })
}
