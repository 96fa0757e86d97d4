//! Scenario configuration.
//!
//! Files are JSON in user-facing units (dBm, dB, degrees). [`load_config`]
//! converts everything once into the linear/radian [`SystemConfig`] used by
//! the rest of the crate.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const USERS_PER_CLUSTER: usize = 2;

const PAPER_PROFILE: &str = include_str!("../../../configs/paper.json");
const DESK_PROFILE: &str = include_str!("../../../configs/desk.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile '{other}' (expected paper|desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// radians, measured from the RIS broadside
    pub angle: f64,
    /// meters from the RIS
    pub radius: f64,
}

/// Validated scenario in linear units and radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_ris: usize,
    pub n_clusters: usize,
    /// W
    pub p_max: f64,
    /// W
    pub noise_power: f64,
    /// bits/s/Hz
    pub r_min_near: f64,
    pub r_min_far: f64,
    /// d/λ, shared by the BS array and the RIS
    pub spacing_ratio: f64,
    /// linear power gain at 1 m
    pub pathloss_ref: f64,
    pub pathloss_exp_bs_ris: f64,
    pub pathloss_exp_ris_user: f64,
    /// linear Rician factor
    pub rician_k: f64,
    pub targets: Vec<Target>,
    /// Δθ, radians
    pub beam_width: f64,
    /// radians
    pub angle_grid_step: f64,
    pub bs_position: [f64; 2],
    pub near_radius: [f64; 2],
    pub far_radius: [f64; 2],
    /// `(lo, hi]` in radians, one per cluster
    pub cluster_angle_ranges: Vec<[f64; 2]>,
    pub sca_tol: f64,
    pub srcr_rank_tol: f64,
    pub outer_tol: f64,
    pub t1_max: usize,
    pub t2_max: usize,
    pub t3_max: usize,
    /// ρ⁽⁰⁾
    pub srcr_step: f64,
    pub solver_tol: f64,
    pub rng_seed: u64,
    /// RIS sizes swept by the M experiments
    pub m_sweep: Vec<usize>,
    /// default number of Monte-Carlo seeds
    pub seeds: usize,
    pub heatmap_x: [f64; 2],
    pub heatmap_y: [f64; 2],
}

fn default_sca_tol() -> f64 {
    1e-4
}
fn default_srcr_rank_tol() -> f64 {
    1e-4
}
fn default_outer_tol() -> f64 {
    1e-3
}
fn default_t1() -> usize {
    30
}
fn default_t2() -> usize {
    50
}
fn default_t3() -> usize {
    20
}
fn default_srcr_step() -> f64 {
    0.1
}
fn default_solver_tol() -> f64 {
    1e-8
}
fn default_grid_divisions() -> usize {
    100
}
fn default_seeds() -> usize {
    20
}
fn default_heatmap_x() -> [f64; 2] {
    [-100.0, 100.0]
}
fn default_heatmap_y() -> [f64; 2] {
    [0.0, 100.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub angle_deg: f64,
    pub radius_m: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossExponents {
    pub bs_ris: f64,
    pub ris_user: f64,
}

/// On-disk configuration schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n_tx: usize,
    pub n_ris: usize,
    pub n_clusters: usize,
    pub p_max_dbm: f64,
    pub noise_dbm: f64,
    pub r_min_near: f64,
    pub r_min_far: f64,
    pub spacing_ratio: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_exp: PathlossExponents,
    pub rician_k: f64,
    pub targets: Vec<TargetSpec>,
    pub beam_width_deg: f64,
    /// The angle grid spans [−π/2, π/2] in steps of π / divisions.
    #[serde(default = "default_grid_divisions")]
    pub angle_grid_divisions: usize,
    pub bs_position_m: [f64; 2],
    pub near_radius_m: [f64; 2],
    pub far_radius_m: [f64; 2],
    pub cluster_angle_ranges_deg: Vec<[f64; 2]>,
    #[serde(default = "default_sca_tol")]
    pub sca_tol: f64,
    #[serde(default = "default_srcr_rank_tol")]
    pub srcr_rank_tol: f64,
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "default_t1")]
    pub t1_max: usize,
    #[serde(default = "default_t2")]
    pub t2_max: usize,
    #[serde(default = "default_t3")]
    pub t3_max: usize,
    #[serde(default = "default_srcr_step")]
    pub srcr_step: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub m_sweep: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_heatmap_x")]
    pub heatmap_x_m: [f64; 2],
    #[serde(default = "default_heatmap_y")]
    pub heatmap_y_m: [f64; 2],
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ConfigFile {
    pub fn into_config(self) -> Result<SystemConfig> {
        if self.angle_grid_divisions == 0 {
            return Err(Error::Config("angle_grid_divisions must be ≥ 1".into()));
        }
        let cfg = SystemConfig {
            n_tx: self.n_tx,
            n_ris: self.n_ris,
            n_clusters: self.n_clusters,
            p_max: dbm_to_watts(self.p_max_dbm),
            noise_power: dbm_to_watts(self.noise_dbm),
            r_min_near: self.r_min_near,
            r_min_far: self.r_min_far,
            spacing_ratio: self.spacing_ratio,
            pathloss_ref: db_to_linear(self.pathloss_ref_db),
            pathloss_exp_bs_ris: self.pathloss_exp.bs_ris,
            pathloss_exp_ris_user: self.pathloss_exp.ris_user,
            rician_k: self.rician_k,
            targets: self
                .targets
                .iter()
                .map(|t| Target { angle: t.angle_deg.to_radians(), radius: t.radius_m })
                .collect(),
            beam_width: self.beam_width_deg.to_radians(),
            angle_grid_step: PI / self.angle_grid_divisions as f64,
            bs_position: self.bs_position_m,
            near_radius: self.near_radius_m,
            far_radius: self.far_radius_m,
            cluster_angle_ranges: self
                .cluster_angle_ranges_deg
                .iter()
                .map(|r| [r[0].to_radians(), r[1].to_radians()])
                .collect(),
            sca_tol: self.sca_tol,
            srcr_rank_tol: self.srcr_rank_tol,
            outer_tol: self.outer_tol,
            t1_max: self.t1_max,
            t2_max: self.t2_max,
            t3_max: self.t3_max,
            srcr_step: self.srcr_step,
            solver_tol: self.solver_tol,
            rng_seed: self.rng_seed,
            m_sweep: if self.m_sweep.is_empty() { vec![self.n_ris] } else { self.m_sweep },
            seeds: self.seeds,
            heatmap_x: self.heatmap_x_m,
            heatmap_y: self.heatmap_y_m,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn in_half_plane(theta: f64) -> bool {
    (-FRAC_PI_2..FRAC_PI_2).contains(&theta)
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_tx < 1 || self.n_ris < 1 || self.n_clusters < 1 {
            return fail("n_tx, n_ris and n_clusters must be ≥ 1".into());
        }
        if !(self.p_max > 0.0) || !(self.noise_power > 0.0) {
            return fail("p_max and noise_power must be positive".into());
        }
        if !(self.r_min_near >= 0.0) || !(self.r_min_far >= 0.0) {
            return fail("QoS floors must be ≥ 0".into());
        }
        if !(self.beam_width > 0.0) {
            return fail("beam_width must be positive".into());
        }
        if !(self.spacing_ratio > 0.0) || !(self.pathloss_ref > 0.0) {
            return fail("spacing_ratio and pathloss_ref must be positive".into());
        }
        if !(self.rician_k >= 0.0) || self.pathloss_exp_bs_ris < 0.0 || self.pathloss_exp_ris_user < 0.0 {
            return fail("rician_k and path-loss exponents must be ≥ 0".into());
        }
        if self.targets.is_empty() {
            return fail("at least one target is required".into());
        }
        for t in &self.targets {
            if !in_half_plane(t.angle) {
                return fail(format!("target angle {:.3} rad outside [-π/2, π/2)", t.angle));
            }
            if !(t.radius > 0.0) {
                return fail("target radius must be positive".into());
            }
        }
        if self.cluster_angle_ranges.len() < self.n_clusters {
            return fail(format!(
                "{} clusters but only {} angle ranges",
                self.n_clusters,
                self.cluster_angle_ranges.len()
            ));
        }
        for r in &self.cluster_angle_ranges[..self.n_clusters] {
            if !(r[0] < r[1]) {
                return fail(format!("empty cluster angle range ({:.4}, {:.4}]", r[0], r[1]));
            }
            if !in_half_plane(r[0]) || !in_half_plane(r[1]) {
                return fail("cluster angle range outside [-π/2, π/2)".into());
            }
        }
        for (name, band) in [("near_radius", self.near_radius), ("far_radius", self.far_radius)] {
            if !(band[0] > 0.0 && band[0] <= band[1]) {
                return fail(format!("{name} band must satisfy 0 < lo ≤ hi"));
            }
        }
        if self.bs_position == [0.0, 0.0] {
            return fail("BS cannot be co-located with the RIS".into());
        }
        for (name, v) in [
            ("sca_tol", self.sca_tol),
            ("srcr_rank_tol", self.srcr_rank_tol),
            ("outer_tol", self.outer_tol),
            ("srcr_step", self.srcr_step),
            ("solver_tol", self.solver_tol),
            ("angle_grid_step", self.angle_grid_step),
        ] {
            if !(v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.t1_max < 1 || self.t2_max < 1 || self.t3_max < 1 {
            return fail("iteration caps must be ≥ 1".into());
        }
        if self.m_sweep.iter().any(|&m| m < 1) {
            return fail("m_sweep entries must be ≥ 1".into());
        }
        Ok(())
    }

    /// SINR threshold `2^R − 1` for the near-user floor.
    pub fn sinr_min_near(&self) -> f64 {
        2f64.powf(self.r_min_near) - 1.0
    }

    pub fn sinr_min_far(&self) -> f64 {
        2f64.powf(self.r_min_far) - 1.0
    }

    pub fn with_n_ris(&self, m: usize) -> Self {
        SystemConfig { n_ris: m, ..self.clone() }
    }

    /// Short stable hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn profile(profile: Profile) -> Self {
        let text = match profile {
            Profile::Paper => PAPER_PROFILE,
            Profile::Desk => DESK_PROFILE,
        };
        parse_config(text).expect("shipped profiles are valid")
    }
}

pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.into_config()
}

/// Reads, converts and validates a JSON configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
