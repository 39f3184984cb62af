//! Synthetic scenes and the double-directional clustered channel.
//!
//! A scene is one user drop: a BS panel, the UE's multi-panel array, and a
//! small set of propagation paths with complex gains, delays, angles and 2x2
//! depolarization matrices. Scene synthesis is geometric: the LOS path comes
//! straight from the BS/UE positions and NLOS paths bounce off random
//! scatterers, so angles, delays and Friis-type gains stay mutually
//! consistent. Everything is deterministic given (seed, params).
//!
//! The per-subcarrier channel is `H[k] = Σ_ℓ β_{ℓ,k} G_r X_ℓ G_tᵀ`, where
//! `β_{ℓ,k}` folds the path gain with the DFT of the sampled pulse at the
//! path delay, and `G` is the combined array response of each end.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::antenna::{
    combined_response, make_angle_limited_codebook, make_dft_codebook, steering_vector,
    ElementPattern, PanelConfig, UE_SECTOR_AZ, UE_SECTOR_EL,
};
use crate::geometry::{gcs_to_lcs, Orientation, SphericalAngle};
use crate::linalg::C64;
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Transmit/receive pulse shaping filter, sampled at the tap period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pulse {
    /// `g(0) = 1`, zero elsewhere: each path lands on exactly one tap.
    Ideal,
    /// Truncated raised cosine with the given roll-off, supported on `taps`
    /// delay taps.
    RaisedCosine { rolloff: f64, taps: usize },
}

impl Pulse {
    /// Filter value at time `t` for tap period `period`.
    pub fn eval(&self, t: f64, period: f64) -> f64 {
        match *self {
            Pulse::Ideal => {
                if t.abs() < 1e-9 * period {
                    1.0
                } else {
                    0.0
                }
            }
            Pulse::RaisedCosine { rolloff, .. } => {
                let x = t / period;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let denom = 1.0 - (2.0 * rolloff * x).powi(2);
                if denom.abs() < 1e-9 {
                    // Limit value at the roll-off singularity.
                    (PI / 4.0) * sinc_at(1.0 / (2.0 * rolloff))
                } else {
                    sinc * (PI * rolloff * x).cos() / denom
                }
            }
        }
    }

    /// Number of delay taps the filter is evaluated on.
    pub fn tap_count(&self) -> usize {
        match *self {
            Pulse::Ideal => 8,
            Pulse::RaisedCosine { taps, .. } => taps,
        }
    }
}

fn sinc_at(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// One propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Complex gain alpha.
    pub gain: C64,
    /// Delay in seconds, relative to the earliest path.
    pub delay: f64,
    /// Angle of departure, global frame.
    pub aod: SphericalAngle,
    /// Angle of arrival, global frame.
    pub aoa: SphericalAngle,
    /// 2x2 depolarization matrix.
    pub depol: Matrix2<C64>,
}

/// One user drop: panels, location, paths, and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bs_panel: PanelConfig,
    /// UE panels; all share the same path list.
    pub ue_panels: Vec<PanelConfig>,
    /// User coordinates on the ground plane, meters.
    pub ue_location: [f64; 2],
    pub paths: Vec<Path>,
    /// Per-subcarrier noise power at the combiner input, watts.
    pub noise_power_per_sc: f64,
    /// Total transmit power over the band, watts; split uniformly across
    /// subcarriers.
    pub tx_power_total: f64,
    pub n_subcarriers: usize,
    pub subcarrier_spacing: f64,
    /// Delay-tap sampling period T of the pulse, seconds.
    pub symbol_period: f64,
    pub pulse: Pulse,
}

impl Scene {
    /// Uniform per-subcarrier transmit power `P_t / K`.
    pub fn tx_power_per_sc(&self) -> f64 {
        self.tx_power_total / self.n_subcarriers as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 1 {
            return Err(Error::InvalidParameter("need at least one subcarrier".into()));
        }
        if self.ue_panels.is_empty() {
            return Err(Error::InvalidParameter("need at least one UE panel".into()));
        }
        self.bs_panel.validate()?;
        for p in &self.ue_panels {
            p.validate()?;
        }
        Ok(())
    }
}

/// Which codebook a panel carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodebookKind {
    Dft,
    /// Steering-vector beams over the UE sector (az +/-60 deg, el 30..150 deg).
    AngleLimited,
}

/// UE multi-panel array description used by scene synthesis and the
/// heterogeneity sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeArraySpec {
    pub n_y: usize,
    pub n_z: usize,
    pub spacing_wavelengths: f64,
    /// Boresight azimuth of each panel at zero offset, degrees.
    pub panel_azimuths_deg: Vec<f64>,
    /// Orientation offset added to every panel (the heterogeneity knob), degrees.
    pub delta_alpha_deg: f64,
    /// Polarization angle, radians.
    pub pol_angle: f64,
    pub pattern: ElementPattern,
    pub codebook: CodebookKind,
}

impl Default for UeArraySpec {
    fn default() -> Self {
        Self {
            n_y: 3,
            n_z: 3,
            spacing_wavelengths: 0.5,
            // Rear, front-right, front-left: an equilateral triangle layout.
            panel_azimuths_deg: vec![180.0, 60.0, -60.0],
            delta_alpha_deg: 0.0,
            pol_angle: 0.0,
            // A mild patch-like element: breaks the front/back symmetry of
            // the panel response (which is what makes arrival angles
            // identifiable from RSRP) while staying wide enough that three
            // panels cover the sphere without deep gaps.
            pattern: ElementPattern::Directional {
                peak_gain_dbi: 3.0,
                beamwidth_deg: 110.0,
                max_attenuation_db: 12.0,
            },
            codebook: CodebookKind::AngleLimited,
        }
    }
}

impl UeArraySpec {
    pub fn build_panels(&self) -> Result<Vec<PanelConfig>> {
        let codebook = match self.codebook {
            CodebookKind::Dft => make_dft_codebook(self.n_y, self.n_z),
            CodebookKind::AngleLimited => {
                make_angle_limited_codebook(self.n_y, self.n_z, UE_SECTOR_AZ, UE_SECTOR_EL)?
            }
        };
        self.panel_azimuths_deg
            .iter()
            .map(|&az| {
                let pc = PanelConfig {
                    n_y: self.n_y,
                    n_z: self.n_z,
                    spacing_wavelengths: self.spacing_wavelengths,
                    orientation: Orientation::about_z((az + self.delta_alpha_deg).to_radians()),
                    pol_angle: self.pol_angle,
                    pattern: self.pattern,
                    codebook: codebook.clone(),
                };
                pc.validate()?;
                Ok(pc)
            })
            .collect()
    }
}

/// BS array description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsArraySpec {
    pub n_y: usize,
    pub n_z: usize,
    pub spacing_wavelengths: f64,
    pub orientation: Orientation,
    pub pol_angle: f64,
    pub pattern: ElementPattern,
}

impl Default for BsArraySpec {
    fn default() -> Self {
        Self {
            n_y: 8,
            n_z: 8,
            spacing_wavelengths: 0.5,
            orientation: Orientation::identity(),
            pol_angle: 0.0,
            pattern: ElementPattern::directional_default(),
        }
    }
}

impl BsArraySpec {
    pub fn build_panel(&self) -> Result<PanelConfig> {
        let pc = PanelConfig {
            n_y: self.n_y,
            n_z: self.n_z,
            spacing_wavelengths: self.spacing_wavelengths,
            orientation: self.orientation,
            pol_angle: self.pol_angle,
            pattern: self.pattern,
            codebook: make_dft_codebook(self.n_y, self.n_z),
        };
        pc.validate()?;
        Ok(pc)
    }
}

/// Scene synthesis parameters. Defaults mirror the desk-scale urban drop:
/// 15 GHz carrier, 64 subcarriers at 240 kHz, 11 dBm transmit power, 10 dB
/// noise figure over -174 dBm/Hz thermal noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub carrier_hz: f64,
    pub n_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub thermal_noise_dbm_hz: f64,
    /// BS antenna position, meters (3D).
    pub bs_position: [f64; 3],
    pub ue_height: f64,
    /// User drop area on the ground plane.
    pub area_x: (f64, f64),
    pub area_y: (f64, f64),
    /// Total path count L_all.
    pub n_paths: usize,
    /// Probability that a user is NLOS-only (LOS blocked).
    pub blockage_probability: f64,
    /// Extra NLOS loss range, dB.
    pub nlos_extra_loss_db: (f64, f64),
    /// Depolarization attenuation range for NLOS paths.
    pub depol_attenuation: (f64, f64),
    /// Bounce-point distance range from the UE for NLOS paths, meters.
    pub nlos_bounce_distance: (f64, f64),
    /// Elevation range of NLOS arrival directions at the UE, degrees.
    pub nlos_elevation_deg: (f64, f64),
    /// Cap on NLOS excess delay, in delay taps: keeps every path inside the
    /// pulse window so no path is silently erased by truncation.
    pub max_excess_delay_taps: f64,
    /// Minimum AoA separation between paths, degrees. Paths model dominant
    /// rays of distinct clusters; separation at the receive side is what
    /// keeps the cross-path terms small through the wide UE beams.
    pub min_path_separation_deg: f64,
    /// Minimum AoD separation between paths, degrees (the narrow BS beams
    /// need much less than the UE side).
    pub min_aod_separation_deg: f64,
    pub pulse: Pulse,
    pub bs: BsArraySpec,
    pub ue: UeArraySpec,
    /// Pin the user position instead of sampling it from the area.
    pub fixed_location: Option<[f64; 2]>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            carrier_hz: 15e9,
            n_subcarriers: 64,
            subcarrier_spacing_hz: 240e3,
            tx_power_dbm: 11.0,
            noise_figure_db: 10.0,
            thermal_noise_dbm_hz: -174.0,
            bs_position: [0.0, 0.0, 10.0],
            ue_height: 1.5,
            area_x: (60.0, 240.0),
            area_y: (-60.0, 60.0),
            n_paths: 3,
            blockage_probability: 0.15,
            nlos_extra_loss_db: (1.0, 5.0),
            depol_attenuation: (0.65, 1.0),
            nlos_bounce_distance: (40.0, 110.0),
            nlos_elevation_deg: (60.0, 120.0),
            max_excess_delay_taps: 5.0,
            min_path_separation_deg: 30.0,
            min_aod_separation_deg: 25.0,
            pulse: Pulse::RaisedCosine { rolloff: 0.25, taps: 8 },
            bs: BsArraySpec::default(),
            ue: UeArraySpec::default(),
            fixed_location: None,
        }
    }
}

impl SceneParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn tx_power_watts(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Per-subcarrier noise power: thermal density + noise figure over one
    /// subcarrier bandwidth.
    pub fn noise_power_per_sc_watts(&self) -> f64 {
        let dbm = self.thermal_noise_dbm_hz
            + 10.0 * self.subcarrier_spacing_hz.log10()
            + self.noise_figure_db;
        dbm_to_watts(dbm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidParameter("need at least one path".into()));
        }
        if !(self.area_x.1 > self.area_x.0) || !(self.area_y.1 > self.area_y.0) {
            return Err(Error::InvalidParameter("degenerate user drop area".into()));
        }
        if !(self.nlos_extra_loss_db.1 >= self.nlos_extra_loss_db.0) {
            return Err(Error::InvalidParameter("NLOS loss range reversed".into()));
        }
        if !(self.depol_attenuation.0 > 0.0 && self.depol_attenuation.1 >= self.depol_attenuation.0)
        {
            return Err(Error::InvalidParameter("bad depolarization attenuation range".into()));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

fn direction_between(from: [f64; 3], to: [f64; 3]) -> SphericalAngle {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let theta = (d[2] / n).clamp(-1.0, 1.0).acos();
    let phi = d[1].atan2(d[0]);
    SphericalAngle::new(theta, phi)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn random_unitary2(rng: &mut ChaCha8Rng) -> Matrix2<C64> {
    // Gram-Schmidt on a random complex 2x2 with Gaussian-ish entries.
    let draw = |rng: &mut ChaCha8Rng| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    loop {
        let a = nalgebra::Vector2::new(draw(rng), draw(rng));
        let na = a.norm();
        if na < 1e-6 {
            continue;
        }
        let a = a / C64::new(na, 0.0);
        let mut b = nalgebra::Vector2::new(draw(rng), draw(rng));
        let proj = a.dotc(&b);
        b -= a * proj;
        let nb = b.norm();
        if nb < 1e-6 {
            continue;
        }
        let b = b / C64::new(nb, 0.0);
        return Matrix2::new(a.x, b.x, a.y, b.y);
    }
}

/// Generates one user drop. Deterministic given `(seed, params)`.
///
/// The LOS path (unless the user is blocked) points straight between the BS
/// and UE positions; NLOS paths bounce off scatterers sampled inside an
/// extended drop area, with Friis-type gain over the total bounce length plus
/// an extra random loss, and a random unitary-times-attenuation
/// depolarization. Delays are relative to the earliest arrival.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let loc = params.fixed_location.unwrap_or_else(|| {
        [
            rng.random_range(params.area_x.0..params.area_x.1),
            rng.random_range(params.area_y.0..params.area_y.1),
        ]
    });
    let ue_pos = [loc[0], loc[1], params.ue_height];
    let bs_pos = params.bs_position;
    let lambda = params.wavelength();

    let blocked = rng.random_range(0.0..1.0) < params.blockage_probability;
    let n_nlos = if blocked { params.n_paths } else { params.n_paths - 1 };

    let los_len = distance(bs_pos, ue_pos);
    let mut paths = Vec::with_capacity(params.n_paths);

    if !blocked {
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = lambda / (4.0 * PI * los_len);
        paths.push(Path {
            gain: C64::from_polar(amp, phase),
            delay: 0.0, // filled below once the minimum arrival is known
            aod: direction_between(bs_pos, ue_pos),
            aoa: direction_between(ue_pos, bs_pos),
            depol: Matrix2::identity(),
        });
    }

    // NLOS paths bounce once. The bounce point is sampled by arrival
    // direction and distance from the UE, which makes the AoA separation
    // constraint direct; the AoD and delay follow from geometry and are
    // rejection-checked. If the constraints cannot all be met the best
    // candidate seen is kept, so generation always terminates.
    let tap = 1.0 / (params.n_subcarriers as f64 * params.subcarrier_spacing_hz);
    let max_len = los_len + params.max_excess_delay_taps * tap * SPEED_OF_LIGHT;
    let aoa_sep = params.min_path_separation_deg.to_radians();
    let aod_sep = params.min_aod_separation_deg.to_radians();
    let el = (
        params.nlos_elevation_deg.0.to_radians(),
        params.nlos_elevation_deg.1.to_radians(),
    );
    let mut lens = vec![los_len; paths.len()];
    for _ in 0..n_nlos {
        let mut chosen: Option<(SphericalAngle, SphericalAngle, f64)> = None;
        let mut best_score = f64::MIN;
        for _attempt in 0..4000 {
            let aoa = SphericalAngle::new(
                rng.random_range(el.0..el.1),
                rng.random_range(-PI..PI),
            );
            let r = rng.random_range(params.nlos_bounce_distance.0..params.nlos_bounce_distance.1);
            let u = aoa.unit_vec();
            let scat = [
                ue_pos[0] + r * u.x(),
                ue_pos[1] + r * u.y(),
                ue_pos[2] + r * u.z(),
            ];
            let len = distance(bs_pos, scat) + r;
            let aod = direction_between(bs_pos, scat);
            if scat[2] < 0.0 || len > max_len {
                continue;
            }
            let min_aoa_sep = paths
                .iter()
                .map(|p| p.aoa.great_circle_distance(&aoa))
                .fold(f64::INFINITY, f64::min);
            let min_aod_sep = paths
                .iter()
                .map(|p| p.aod.great_circle_distance(&aod))
                .fold(f64::INFINITY, f64::min);
            if min_aoa_sep >= aoa_sep && min_aod_sep >= aod_sep {
                chosen = Some((aoa, aod, len));
                break;
            }
            // Best-effort fallback: most separated candidate inside the
            // delay window.
            let score = min_aoa_sep.min(aoa_sep) + min_aod_sep.min(aod_sep);
            if score > best_score {
                best_score = score;
                chosen = Some((aoa, aod, len));
            }
        }
        let (aoa, aod, len) = chosen.expect("bounce sampling always yields a candidate");
        let extra_db =
            rng.random_range(params.nlos_extra_loss_db.0..=params.nlos_extra_loss_db.1);
        let amp = lambda / (4.0 * PI * len) * 10f64.powf(-extra_db / 20.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let eta = rng.random_range(params.depol_attenuation.0..=params.depol_attenuation.1);
        let depol = random_unitary2(&mut rng).map(|z| z * eta);
        paths.push(Path {
            gain: C64::from_polar(amp, phase),
            delay: 0.0,
            aod,
            aoa,
            depol,
        });
        lens.push(len);
    }

    // Receiver time sync: delays relative to the first arrival.
    let min_len = lens.iter().cloned().fold(f64::INFINITY, f64::min);
    for (p, len) in paths.iter_mut().zip(lens.iter()) {
        p.delay = (len - min_len) / SPEED_OF_LIGHT;
    }
    paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));

    Ok(Scene {
        bs_panel: params.bs.build_panel()?,
        ue_panels: params.ue.build_panels()?,
        ue_location: loc,
        paths,
        noise_power_per_sc: params.noise_power_per_sc_watts(),
        tx_power_total: params.tx_power_watts(),
        n_subcarriers: params.n_subcarriers,
        subcarrier_spacing: params.subcarrier_spacing_hz,
        symbol_period: 1.0 / (params.n_subcarriers as f64 * params.subcarrier_spacing_hz),
        pulse: params.pulse,
    })
}

/// `β_{ℓ,k} = α_ℓ Σ_d g(dT - τ_ℓ) e^{-j 2π k d / K}`: path gain times the DFT
/// of the sampled pulse at the path delay.
pub fn beta(path: &Path, k: usize, scene: &Scene) -> C64 {
    debug_assert!(k < scene.n_subcarriers);
    let kk = scene.n_subcarriers as f64;
    let taps = scene.pulse.tap_count();
    let mut acc = C64::new(0.0, 0.0);
    for d in 0..taps {
        let g = scene.pulse.eval(d as f64 * scene.symbol_period - path.delay, scene.symbol_period);
        if g == 0.0 {
            continue;
        }
        let phase = -2.0 * PI * k as f64 * d as f64 / kk;
        acc += C64::new(phase.cos(), phase.sin()) * g;
    }
    path.gain * acc
}

/// All subcarriers at once.
pub fn beta_vector(path: &Path, scene: &Scene) -> Vec<C64> {
    (0..scene.n_subcarriers).map(|k| beta(path, k, scene)).collect()
}

/// Per-subcarrier channel matrices for one UE panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannel {
    /// `h[k]` is (UE panel size) x (BS size).
    pub per_sc: Vec<DMatrix<C64>>,
}

/// Frequency response for UE panel `p`: `H[k] = Σ_ℓ β_{ℓ,k} G_r X_ℓ G_tᵀ`.
pub fn freq_channel(scene: &Scene, p: usize) -> FreqChannel {
    let ue = &scene.ue_panels[p];
    let bs = &scene.bs_panel;
    let n_r = ue.size();
    let n_t = bs.size();
    let mut per_sc = vec![DMatrix::from_element(n_r, n_t, C64::new(0.0, 0.0)); scene.n_subcarriers];
    for path in &scene.paths {
        let g_r = combined_response(ue, &path.aoa);
        let g_t = combined_response(bs, &path.aod);
        // G_r X G_tᵀ, assembled once per path and scaled by β per subcarrier.
        let base = &g_r * path.depol * g_t.transpose();
        let betas = beta_vector(path, scene);
        for (k, b) in betas.iter().enumerate() {
            per_sc[k].zip_apply(&base, |h, v| *h += v * b);
        }
    }
    FreqChannel { per_sc }
}

/// Beamformed per-path scalars `z_ℓ = (w* a_r) (g_rᵀ X g_t) (a_tᵀ f)` for
/// panel `p`: the effective channel is `h_eff[k] = Σ_ℓ β_{ℓ,k} z_ℓ` without
/// materializing `H[k]`.
pub fn beamformed_path_scalars(
    scene: &Scene,
    p: usize,
    w: &DVector<C64>,
    f: &DVector<C64>,
) -> Vec<C64> {
    let ue = &scene.ue_panels[p];
    let bs = &scene.bs_panel;
    scene
        .paths
        .iter()
        .map(|path| {
            let a_r = steering_vector(ue, &gcs_to_lcs(&path.aoa, &ue.orientation));
            let a_t = steering_vector(bs, &gcs_to_lcs(&path.aod, &bs.orientation));
            let g_r = crate::antenna::global_gain_vector(ue, &path.aoa);
            let g_t = crate::antenna::global_gain_vector(bs, &path.aod);
            let c = g_r.x * (path.depol[(0, 0)] * g_t.x + path.depol[(0, 1)] * g_t.y)
                + g_r.y * (path.depol[(1, 0)] * g_t.x + path.depol[(1, 1)] * g_t.y);
            let wr = w.dotc(&a_r);
            let tf: C64 = a_t.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
            wr * c * tf
        })
        .collect()
}

/// Effective beamformed channel `h_eff[k] = w* H_p[k] f` for all subcarriers.
pub fn effective_channel(scene: &Scene, p: usize, w: &DVector<C64>, f: &DVector<C64>) -> Vec<C64> {
    let z = beamformed_path_scalars(scene, p, w, f);
    let mut h = vec![C64::new(0.0, 0.0); scene.n_subcarriers];
    for (path, zl) in scene.paths.iter().zip(z.iter()) {
        let betas = beta_vector(path, scene);
        for (hk, bk) in h.iter_mut().zip(betas.iter()) {
            *hk += bk * zl;
        }
    }
    h
}

/// Received symbol `y_p[k] = sqrt(P_t[k]) w* H_p[k] f s + w* n[k]` with
/// circularly-symmetric complex Gaussian noise drawn from `rng`.
pub fn received_symbol(
    scene: &Scene,
    p: usize,
    w: &DVector<C64>,
    f: &DVector<C64>,
    k: usize,
    s: C64,
    rng: &mut ChaCha8Rng,
) -> C64 {
    let h = effective_channel(scene, p, w, f)[k];
    let signal = C64::new(scene.tx_power_per_sc().sqrt(), 0.0) * h * s;
    signal + combined_noise(scene, w, rng)
}

fn combined_noise(scene: &Scene, w: &DVector<C64>, rng: &mut ChaCha8Rng) -> C64 {
    let sigma = (scene.noise_power_per_sc / 2.0).sqrt();
    let mut acc = C64::new(0.0, 0.0);
    for wi in w.iter() {
        let n = C64::new(sigma * gaussian(rng), sigma * gaussian(rng));
        acc += wi.conj() * n;
    }
    acc
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; avoids log(0).
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Constant-modulus Zadoff-Chu pilot of length `k_len` (root 1).
pub fn zadoff_chu(k_len: usize) -> Vec<C64> {
    (0..k_len)
        .map(|k| {
            let kf = k as f64;
            let arg = if k_len % 2 == 0 {
                -PI * kf * kf / k_len as f64
            } else {
                -PI * kf * (kf + 1.0) / k_len as f64
            };
            C64::new(arg.cos(), arg.sin())
        })
        .collect()
}

/// Noisy RSRP estimate for a beam pair via LS channel estimation on a
/// Zadoff-Chu pilot: transmits one pilot symbol per subcarrier, estimates
/// `ĥ_eff[k] = y[k] / (sqrt(P_t[k]) s[k])`, and averages
/// `P_t[k] |ĥ_eff[k]|²` over the band.
pub fn ls_estimate_rsrp(
    scene: &Scene,
    p: usize,
    w: &DVector<C64>,
    f: &DVector<C64>,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pilots = zadoff_chu(scene.n_subcarriers);
    let h = effective_channel(scene, p, w, f);
    let pt = scene.tx_power_per_sc();
    let sqrt_pt = pt.sqrt();
    let mut acc = 0.0;
    for k in 0..scene.n_subcarriers {
        let y = C64::new(sqrt_pt, 0.0) * h[k] * pilots[k] + combined_noise(scene, w, &mut rng);
        let h_est = y / (C64::new(sqrt_pt, 0.0) * pilots[k]);
        acc += pt * h_est.norm_sqr();
    }
    acc / scene.n_subcarriers as f64
}

/// Noiseless effective SNR building block shared with the selection module:
/// LS-estimated effective channel for the chosen beams.
pub fn ls_estimate_effective(
    scene: &Scene,
    p: usize,
    w: &DVector<C64>,
    f: &DVector<C64>,
    seed: u64,
) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pilots = zadoff_chu(scene.n_subcarriers);
    let h = effective_channel(scene, p, w, f);
    let sqrt_pt = scene.tx_power_per_sc().sqrt();
    (0..scene.n_subcarriers)
        .map(|k| {
            let y = C64::new(sqrt_pt, 0.0) * h[k] * pilots[k] + combined_noise(scene, w, &mut rng);
            y / (C64::new(sqrt_pt, 0.0) * pilots[k])
        })
        .collect()
}
