//! Radar side: beampattern gain at the RIS, the interested-angle set and the
//! illumination map.

use nalgebra::DMatrix;

use crate::comm::BeamState;
use crate::config::{SystemConfig, Target};
use crate::error::{Error, Result};
use crate::geometry::{angle_from_ris, pathloss, steering_vector, ChannelSet};
use crate::linalg::{diag_conj_mul, trace_re, CMat, CVec};

/// Angle grid `[−π/2 : step : π/2]` and the subset `Q_θ` inside the target
/// windows.
#[derive(Clone, Debug)]
pub struct AngleGrid {
    pub grid: Vec<f64>,
    /// indices into `grid`
    pub interested: Vec<usize>,
}

impl AngleGrid {
    pub fn new(config: &SystemConfig) -> Self {
        Self::with_targets(config.angle_grid_step, &config.targets, config.beam_width)
    }

    pub fn with_targets(step: f64, targets: &[Target], beam_width: f64) -> Self {
        let n = (std::f64::consts::PI / step).round() as usize;
        let grid: Vec<f64> = (0..=n).map(|i| -std::f64::consts::FRAC_PI_2 + i as f64 * step).collect();
        let interested = grid
            .iter()
            .enumerate()
            .filter(|(_, &t)| desired_beampattern(t, targets, beam_width) > 0.0)
            .map(|(i, _)| i)
            .collect();
        AngleGrid { grid, interested }
    }

    pub fn interested_angles(&self) -> Vec<f64> {
        self.interested.iter().map(|&i| self.grid[i]).collect()
    }
}

/// `Υ = diag(aᴴ(θ))·G`.
pub fn upsilon(theta: f64, g: &CMat, spacing_ratio: f64) -> CMat {
    diag_conj_mul(&steering_vector(theta, g.nrows(), spacing_ratio), g)
}

/// Reference level `P_max·M·‖G‖_F²` used to bring beampattern gains to
/// order one inside the optimizers.
pub fn gain_scale(p_max: f64, g: &CMat) -> f64 {
    let f = crate::linalg::frobenius(g);
    (p_max * g.nrows() as f64 * f * f).max(f64::MIN_POSITIVE)
}

/// Beampattern gain `Tr[V·Υ·(Σ W_k)·Υᴴ]` toward `theta`.
pub fn beampattern_gain(v_cov: &CMat, w_cov: &[CMat], g: &CMat, theta: f64, spacing_ratio: f64) -> Result<f64> {
    let (m, n) = g.shape();
    if v_cov.shape() != (m, m) || w_cov.iter().any(|w| w.shape() != (n, n)) {
        return Err(Error::Shape(format!("V {:?} / W blocks against G {m}x{n}", v_cov.shape())));
    }
    let mut sum = CMat::zeros(n, n);
    for w in w_cov {
        sum += w;
    }
    let ups = upsilon(theta, g, spacing_ratio);
    Ok(trace_re(v_cov, &(&ups * sum * ups.adjoint())).max(0.0))
}

/// Vector form `Σ_k |aᴴ(θ)·diag(v)·G·w_k|²`.
pub fn beampattern_gain_vectors(v: &CVec, w: &[CVec], g: &CMat, theta: f64, spacing_ratio: f64) -> f64 {
    let a = steering_vector(theta, g.nrows(), spacing_ratio);
    w.iter()
        .map(|wk| crate::comm::direct_gain(&a, v, g, wk))
        .sum()
}

/// Minimum gain over `angles`, with the angle that attains it.
pub fn min_gain(v_cov: &CMat, w_cov: &[CMat], g: &CMat, angles: &[f64], spacing_ratio: f64) -> Result<(f64, f64)> {
    if angles.is_empty() {
        return Err(Error::Domain("empty interested-angle set".into()));
    }
    let mut best = (f64::INFINITY, angles[0]);
    for &t in angles {
        let val = beampattern_gain(v_cov, w_cov, g, t, spacing_ratio)?;
        if val < best.0 {
            best = (val, t);
        }
    }
    Ok(best)
}

/// 1 inside any target window `|θ − θ_T| ≤ Δθ/2`, else 0.
pub fn desired_beampattern(theta: f64, targets: &[Target], beam_width: f64) -> f64 {
    // absorbs rounding of grid points that sit exactly on a window edge
    let half = beam_width / 2.0 + 1e-12;
    if targets.iter().any(|t| (theta - t.angle).abs() <= half) {
        1.0
    } else {
        0.0
    }
}

/// Scales a curve so its maximum is 1 (left untouched if all zero).
pub fn normalize_by_max(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        values.to_vec()
    }
}

/// Illumination power `pathloss(‖p‖)·gain(angle(p))` on the grid
/// `ys × xs`, normalized to unit maximum. The RIS position itself is
/// assigned 0.
pub fn illumination_heatmap(
    state: &BeamState,
    channels: &ChannelSet,
    config: &SystemConfig,
    xs: &[f64],
    ys: &[f64],
) -> Result<DMatrix<f64>> {
    use rayon::prelude::*;
    let rows: Vec<Vec<f64>> = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let d = x.hypot(y);
                    if d == 0.0 {
                        return Ok(0.0);
                    }
                    let pl = pathloss(d, config.pathloss_exp_ris_user, config.pathloss_ref)?;
                    let gain = beampattern_gain(
                        &state.v_cov,
                        &state.w_cov,
                        &channels.g,
                        angle_from_ris(x, y),
                        config.spacing_ratio,
                    )?;
                    Ok(pl * gain)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut map = DMatrix::from_fn(ys.len(), xs.len(), |i, j| rows[i][j]);
    let max = map.max();
    if max > 0.0 {
        map /= max;
    }
    Ok(map)
}
