//! The RSRP model family and the path-information representation.
//!
//! Three mutually consistent RSRP routes exist, from most to least
//! channel-aware:
//!
//! * [`rsrp_exact`] — the per-subcarrier average `(1/K) Σ P_t[k] |w* H[k] f|²`,
//!   computed from the full channel; contains all cross-path terms.
//! * [`rsrp_simplified`] — drops cross-path terms:
//!   `Σ_ℓ γ_r γ_t (1/K) Σ_k P_t[k] |β_{ℓ,k}|² |g_rᵀ X g_t|²`. Identical to the
//!   exact form for a single path.
//! * [`rsrp_from_pathinfo`] — the compact PSD form
//!   `Σ_ℓ γ_r γ_t tr(R̂_ℓ B_ℓ)`, which needs only *path information* (angles
//!   and 4x4 Hermitian PSD matrices) plus the antenna configuration. No
//!   channel access: this is the heterogeneity-agnostic forward model that
//!   beam selection runs on.
//!
//! Conventions pinned here and relied on everywhere: `vec(·)` is
//! column-major and the polarization Kronecker vector satisfies
//! `bᵀ vec(X) = g_rᵀ X g_t`.

use nalgebra::{DVector, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::antenna::{beam_gain, global_gain_vector, steering_vector, PanelConfig};
use crate::channel::{beta_vector, effective_channel, ls_estimate_rsrp, Scene};
use crate::geometry::{gcs_to_lcs, SphericalAngle};
use crate::linalg::{eigvals4, hermitian_defect, C64};
use crate::seeding;
use crate::{Error, Result};

/// Per-path AoD/AoA pair, global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathAngles {
    pub aod: SphericalAngle,
    pub aoa: SphericalAngle,
}

/// Heterogeneity-agnostic propagation state: the AoA/AoD set and the path
/// matrix set. Each matrix is 4x4 complex Hermitian PSD and absorbs path
/// gain, pulse-delay spectrum, depolarization, and (for noisy traces) the
/// noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathInfo {
    pub angles: Vec<PathAngles>,
    pub matrices: Vec<Matrix4<C64>>,
}

impl PathInfo {
    pub fn new(angles: Vec<PathAngles>, matrices: Vec<Matrix4<C64>>) -> Result<Self> {
        let pi = Self { angles, matrices };
        pi.validate()?;
        Ok(pi)
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Checks the Hermitian and PSD invariants on every path matrix.
    pub fn validate(&self) -> Result<()> {
        if self.angles.len() != self.matrices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} angle pairs vs {} matrices",
                self.angles.len(),
                self.matrices.len()
            )));
        }
        for m in &self.matrices {
            let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if hermitian_defect(m) > 1e-10 * scale.max(1.0) {
                return Err(Error::InvalidParameter("path matrix is not Hermitian".into()));
            }
            let w = eigvals4(m);
            let max_eig = w[3].max(0.0);
            if w[0] < -1e-10 * max_eig.max(1e-300) {
                return Err(Error::NotPsd { min_eig: w[0], max_eig });
            }
        }
        Ok(())
    }

    /// Scales every path matrix in place (e.g. undoing max-normalization).
    pub fn scale_matrices(&mut self, factor: f64) {
        for m in &mut self.matrices {
            *m *= C64::new(factor, 0.0);
        }
    }
}

/// One RSRP observation: which panel, which beam pair, and the measured
/// linear-scale power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    /// Measured RSRP, linear watts.
    pub rsrp: f64,
    pub panel: usize,
    pub ue_beam: usize,
    pub bs_beam: usize,
}

/// A single user's measurement set, tagged with the full antenna
/// configuration (panels carry their codebooks, orientations, patterns and
/// polarization angles; records reference beams by index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub records: Vec<MeasurementRecord>,
    pub bs_panel: PanelConfig,
    pub ue_panels: Vec<PanelConfig>,
    /// User coordinates, meters.
    pub location: [f64; 2],
    /// Max-normalization constant: the largest measured RSRP, watts.
    pub norm_factor: f64,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Measurements divided by the normalization constant.
    pub fn normalized_rsrps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rsrp / self.norm_factor).collect()
    }
}

/// Which (panel, UE beam, BS beam) combinations to measure: the full cross
/// product of all panels, all UE beams per panel, and the listed BS beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub bs_beams: Vec<usize>,
    /// Skip the noise draw and record exact RSRPs.
    pub noiseless: bool,
}

impl SamplingPlan {
    /// Evenly strided sub-grid of an `n_y x n_z` BS codebook: `per_axis`
    /// beams per axis, covering azimuth and elevation bins.
    pub fn bs_subgrid(n_y: usize, n_z: usize, per_axis: usize, noiseless: bool) -> Self {
        let pick = |n: usize| -> Vec<usize> {
            let k = per_axis.min(n);
            (0..k).map(|i| i * n / k).collect()
        };
        let mut bs_beams = Vec::new();
        for &mz in &pick(n_z) {
            for &my in &pick(n_y) {
                bs_beams.push(mz * n_y + my);
            }
        }
        Self { bs_beams, noiseless }
    }
}

/// Exact RSRP: `(1/K) Σ_k P_t[k] |w* H_p[k] f|²`.
pub fn rsrp_exact(scene: &Scene, p: usize, w: &DVector<C64>, f: &DVector<C64>) -> f64 {
    let h = effective_channel(scene, p, w, f);
    let pt = scene.tx_power_per_sc();
    h.iter().map(|hk| pt * hk.norm_sqr()).sum::<f64>() / scene.n_subcarriers as f64
}

/// Column-major vectorization of a 2x2 matrix.
pub fn vec2_colmajor(x: &Matrix2<C64>) -> Vector4<C64> {
    Vector4::new(x[(0, 0)], x[(1, 0)], x[(0, 1)], x[(1, 1)])
}

/// Polarization Kronecker vector `b` for a path, built so that
/// `bᵀ vec(X) = g_rᵀ X g_t` with column-major `vec`.
pub fn pol_kron(g_r: &Vector2<C64>, g_t: &Vector2<C64>) -> Vector4<C64> {
    Vector4::new(g_t.x * g_r.x, g_t.x * g_r.y, g_t.y * g_r.x, g_t.y * g_r.y)
}

/// Companion outer product `B = conj(b) bᵀ`: Hermitian PSD rank one, with
/// `bᵀ R conj(b) = tr(R B)`.
pub fn b_outer(b: &Vector4<C64>) -> Matrix4<C64> {
    let mut m = Matrix4::from_element(C64::new(0.0, 0.0));
    for i in 0..4 {
        for j in 0..4 {
            m[(i, j)] = b[i].conj() * b[j];
        }
    }
    m
}

/// Transmit-side array gain `|aᵀ(Q(aod, Θ_t)) f|²` (transpose, not adjoint:
/// the TX response enters the channel as `G_tᵀ f`).
pub fn tx_beam_gain(bs: &PanelConfig, aod: &SphericalAngle, f: &DVector<C64>) -> f64 {
    let a = steering_vector(bs, &gcs_to_lcs(aod, &bs.orientation));
    let dot: C64 = a.iter().zip(f.iter()).map(|(ai, fi)| ai * fi).sum();
    dot.norm_sqr()
}

/// Simplified RSRP (cross-path terms dropped):
/// `Σ_ℓ γ_r γ_t (1/K) Σ_k P_t[k] |β_{ℓ,k}|² |g_rᵀ X_ℓ g_t|²`.
pub fn rsrp_simplified(scene: &Scene, p: usize, w: &DVector<C64>, f: &DVector<C64>) -> f64 {
    let ue = &scene.ue_panels[p];
    let bs = &scene.bs_panel;
    let pt = scene.tx_power_per_sc();
    let kk = scene.n_subcarriers as f64;
    scene
        .paths
        .iter()
        .map(|path| {
            let gamma_r = beam_gain(w, ue, &path.aoa).expect("beam matches panel");
            let gamma_t = tx_beam_gain(bs, &path.aod, f);
            let g_r = global_gain_vector(ue, &path.aoa);
            let g_t = global_gain_vector(bs, &path.aod);
            let c = g_r.x * (path.depol[(0, 0)] * g_t.x + path.depol[(0, 1)] * g_t.y)
                + g_r.y * (path.depol[(1, 0)] * g_t.x + path.depol[(1, 1)] * g_t.y);
            let pulse_power: f64 =
                beta_vector(path, scene).iter().map(|b| pt * b.norm_sqr()).sum::<f64>() / kk;
            gamma_r * gamma_t * pulse_power * c.norm_sqr()
        })
        .sum()
}

/// Heterogeneity-agnostic forward model: `Σ_ℓ γ_r γ_t tr(R̂_ℓ B_ℓ)` from path
/// information plus antenna configuration only. Validates the PSD invariant
/// on every call; see [`rsrp_from_pathinfo_unchecked`] for pre-validated use.
pub fn rsrp_from_pathinfo(
    pi: &PathInfo,
    bs: &PanelConfig,
    ue: &PanelConfig,
    w: &DVector<C64>,
    f: &DVector<C64>,
) -> Result<f64> {
    pi.validate()?;
    Ok(rsrp_from_pathinfo_unchecked(pi, bs, ue, w, f))
}

/// [`rsrp_from_pathinfo`] without the per-call invariant check, for callers
/// that validate once and evaluate many beam pairs.
pub fn rsrp_from_pathinfo_unchecked(
    pi: &PathInfo,
    bs: &PanelConfig,
    ue: &PanelConfig,
    w: &DVector<C64>,
    f: &DVector<C64>,
) -> f64 {
    let mut acc = 0.0;
    for (ang, r_hat) in pi.angles.iter().zip(pi.matrices.iter()) {
        let gamma_r = beam_gain(w, ue, &ang.aoa).expect("beam matches panel");
        let gamma_t = tx_beam_gain(bs, &ang.aod, f);
        let g_r = global_gain_vector(ue, &ang.aoa);
        let g_t = global_gain_vector(bs, &ang.aod);
        let b = pol_kron(&g_r, &g_t);
        // tr(R B) = b' R conj(b), real for Hermitian R and PSD B.
        let mut tr = C64::new(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                tr += b[i] * r_hat[(i, j)] * b[j].conj();
            }
        }
        acc += gamma_r * gamma_t * tr.re;
    }
    acc.max(0.0)
}

/// Closed-form path information of a known synthetic scene:
/// `R_ℓ = (1/K) Σ_k P_t[k] |β_{ℓ,k}|² x_ℓ x_ℓ*` with `x_ℓ = vec(X_ℓ)`.
///
/// This is the constructive end of the model chain; with it,
/// [`rsrp_from_pathinfo`] reproduces [`rsrp_simplified`] exactly.
pub fn path_info_from_scene(scene: &Scene) -> PathInfo {
    let pt = scene.tx_power_per_sc();
    let kk = scene.n_subcarriers as f64;
    let mut angles = Vec::with_capacity(scene.paths.len());
    let mut matrices = Vec::with_capacity(scene.paths.len());
    for path in &scene.paths {
        let pulse_power: f64 =
            beta_vector(path, scene).iter().map(|b| pt * b.norm_sqr()).sum::<f64>() / kk;
        let x = vec2_colmajor(&path.depol);
        let mut m = Matrix4::from_element(C64::new(0.0, 0.0));
        for i in 0..4 {
            for j in 0..4 {
                m[(i, j)] = x[i] * x[j].conj() * pulse_power;
            }
        }
        angles.push(PathAngles { aod: path.aod, aoa: path.aoa });
        matrices.push(m);
    }
    PathInfo { angles, matrices }
}

/// Measures the full sampling plan against a scene. Covers every panel and
/// every UE beam for each listed BS beam; enforces the `M > 36 L_all`
/// identifiability bound; records the max-normalization constant.
pub fn build_measurement_set(
    scene: &Scene,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<MeasurementSet> {
    scene.validate()?;
    if plan.bs_beams.is_empty() {
        return Err(Error::InvalidParameter("sampling plan lists no BS beams".into()));
    }
    for &fb in &plan.bs_beams {
        if fb >= scene.bs_panel.codebook.len() {
            return Err(Error::InvalidParameter(format!(
                "BS beam {fb} out of range ({} beams)",
                scene.bs_panel.codebook.len()
            )));
        }
    }
    let m: usize = scene.ue_panels.iter().map(|p| p.codebook.len() * plan.bs_beams.len()).sum();
    let l_all = scene.paths.len();
    let bound = 36 * l_all;
    if m <= bound {
        return Err(Error::InsufficientMeasurements { got: m, bound, paths: l_all });
    }

    let mut records = Vec::with_capacity(m);
    let mut idx = 0u64;
    for (p, panel) in scene.ue_panels.iter().enumerate() {
        for ue_beam in 0..panel.codebook.len() {
            for &bs_beam in &plan.bs_beams {
                let w = panel.codebook.beam(ue_beam);
                let f = scene.bs_panel.codebook.beam(bs_beam);
                let rsrp = if plan.noiseless {
                    rsrp_exact(scene, p, w, f)
                } else {
                    ls_estimate_rsrp(scene, p, w, f, seeding::derive(seed, idx))
                };
                records.push(MeasurementRecord { rsrp, panel: p, ue_beam, bs_beam });
                idx += 1;
            }
        }
    }
    let norm_factor = records.iter().map(|r| r.rsrp).fold(0.0f64, f64::max).max(1e-300);
    Ok(MeasurementSet {
        records,
        bs_panel: scene.bs_panel.clone(),
        ue_panels: scene.ue_panels.clone(),
        location: scene.ue_location,
        norm_factor,
    })
}
