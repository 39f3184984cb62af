//! Antenna element patterns, polarization, steering vectors, and the
//! combined array response.
//!
//! A panel is a uniform planar array in the yz-plane of its local frame, with
//! boresight along local +x. The combined response `G(θ,φ,ρ,Θ) = a(Q(θ,φ,Θ)) gᵀ`
//! folds every heterogeneity parameter into one `N x 2` matrix: array size
//! through the steering vector `a`, orientation through the angular transform
//! `Q` and the pattern transformation `T`, element pattern and polarization
//! angle through the gain vector `g`. Everything downstream (channel, RSRP,
//! tracing) is written against this object, which is what makes the rest of
//! the pipeline agnostic to the hardware.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geometry::{gcs_to_lcs, rotation_matrix, spherical_basis, Orientation, SphericalAngle};
use crate::linalg::C64;
use crate::{Error, Result};

/// Per-element gain pattern, in linear field gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ElementPattern {
    /// Unit co-pol gain in every direction, zero cross-pol.
    Isotropic,
    /// 3GPP-style directional element: parabolic attenuation in azimuth and
    /// elevation with a floor, plus a peak gain. Defaults follow the common
    /// 65-degree half-power beamwidth, 30 dB floor, 8 dBi peak.
    Directional {
        peak_gain_dbi: f64,
        beamwidth_deg: f64,
        max_attenuation_db: f64,
    },
}

impl ElementPattern {
    /// The standard directional element: 65° HPBW, 30 dB floor, 8 dBi peak.
    pub fn directional_default() -> Self {
        ElementPattern::Directional {
            peak_gain_dbi: 8.0,
            beamwidth_deg: 65.0,
            max_attenuation_db: 30.0,
        }
    }

    /// Co-polarized linear field gain at a local direction.
    pub fn co_pol_gain(&self, a_local: &SphericalAngle) -> f64 {
        match *self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::Directional {
                peak_gain_dbi,
                beamwidth_deg,
                max_attenuation_db,
            } => {
                let th = a_local.theta.to_degrees();
                let ph = a_local.phi.to_degrees();
                let a_el = -(12.0 * ((th - 90.0) / beamwidth_deg).powi(2)).min(max_attenuation_db);
                let a_az = -(12.0 * (ph / beamwidth_deg).powi(2)).min(max_attenuation_db);
                let att = -(-(a_az + a_el)).min(max_attenuation_db);
                let gain_db = peak_gain_dbi + att;
                10f64.powf(gain_db / 20.0)
            }
        }
    }

    /// Cross-polarized linear field gain (zero for both supported kinds).
    pub fn cross_pol_gain(&self, _a_local: &SphericalAngle) -> f64 {
        0.0
    }
}

/// A set of unit-norm beamforming weight vectors.
///
/// Serializes as a list of beams, each a list of `(re, im)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CodebookJson", into = "CodebookJson")]
pub struct Codebook {
    beams: Vec<DVector<C64>>,
}

#[derive(Serialize, Deserialize, Clone)]
struct CodebookJson(Vec<Vec<(f64, f64)>>);

impl From<CodebookJson> for Codebook {
    fn from(j: CodebookJson) -> Self {
        // Values come from a valid codebook; keep them bit-exact instead of
        // renormalizing, so persisted codebooks round-trip unchanged.
        Codebook {
            beams: j
                .0
                .into_iter()
                .map(|b| DVector::from_iterator(b.len(), b.into_iter().map(|(re, im)| C64::new(re, im))))
                .collect(),
        }
    }
}

impl From<Codebook> for CodebookJson {
    fn from(c: Codebook) -> Self {
        CodebookJson(
            c.beams
                .iter()
                .map(|b| b.iter().map(|z| (z.re, z.im)).collect())
                .collect(),
        )
    }
}

impl Codebook {
    /// Builds a codebook, normalizing every beam to unit norm.
    pub fn new(beams: Vec<DVector<C64>>) -> Self {
        let beams = beams
            .into_iter()
            .map(|b| {
                let n = b.norm();
                if n > 0.0 {
                    b / C64::new(n, 0.0)
                } else {
                    b
                }
            })
            .collect();
        Self { beams }
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn beam(&self, i: usize) -> &DVector<C64> {
        &self.beams[i]
    }

    pub fn beams(&self) -> &[DVector<C64>] {
        &self.beams
    }
}

/// One antenna panel's full heterogeneity description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    /// Element count along local y.
    pub n_y: usize,
    /// Element count along local z.
    pub n_z: usize,
    /// Element spacing in wavelengths (d / lambda).
    pub spacing_wavelengths: f64,
    pub orientation: Orientation,
    /// Polarization angle rho, radians.
    pub pol_angle: f64,
    pub pattern: ElementPattern,
    pub codebook: Codebook,
}

impl PanelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_y < 1 || self.n_z < 1 {
            return Err(Error::InvalidParameter("panel needs n_y >= 1 and n_z >= 1".into()));
        }
        if !(self.spacing_wavelengths > 0.0) {
            return Err(Error::InvalidParameter("element spacing must be positive".into()));
        }
        Ok(())
    }

    /// Total element count.
    pub fn size(&self) -> usize {
        self.n_y * self.n_z
    }
}

/// Givens rotation by the polarization angle: maps (co-pol, cross-pol) gains
/// onto the local (θ̂', φ̂') axes.
pub fn pol_rotation(rho: f64) -> Matrix2<f64> {
    let (s, c) = rho.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Element gain 2-vector along (θ̂', φ̂') at a local direction:
/// `g' = R_p(ρ) [G_C, G_X]ᵀ`.
pub fn local_gain_vector(p: &ElementPattern, rho: f64, a_local: &SphericalAngle) -> Vector2<C64> {
    let g = pol_rotation(rho) * nalgebra::Vector2::new(p.co_pol_gain(a_local), p.cross_pol_gain(a_local));
    Vector2::new(C64::new(g.x, 0.0), C64::new(g.y, 0.0))
}

/// Pattern transformation matrix from the local to the global spherical
/// basis: entries are dot products of the global basis with the rotated local
/// basis, evaluated at the transformed angles. Always a 2D rotation or
/// reflection (orthonormal).
pub fn pattern_transform(a_global: &SphericalAngle, o: &Orientation) -> Matrix2<f64> {
    let r = rotation_matrix(o);
    let (_, th, ph) = spherical_basis(a_global);
    let local = gcs_to_lcs(a_global, o);
    let (_, thp, php) = spherical_basis(&local);
    let rthp = r * thp.as_vector();
    let rphp = r * php.as_vector();
    Matrix2::new(
        th.as_vector().dot(&rthp),
        th.as_vector().dot(&rphp),
        ph.as_vector().dot(&rthp),
        ph.as_vector().dot(&rphp),
    )
}

/// Element gain 2-vector in the global basis:
/// `g(θ,φ,ρ,Θ) = T(θ,φ,Θ) g'(Q(θ,φ,Θ), ρ)`.
pub fn global_gain_vector(pc: &PanelConfig, a_global: &SphericalAngle) -> Vector2<C64> {
    let t = pattern_transform(a_global, &pc.orientation);
    let local = gcs_to_lcs(a_global, &pc.orientation);
    let gp = local_gain_vector(&pc.pattern, pc.pol_angle, &local);
    Vector2::new(
        C64::new(t[(0, 0)], 0.0) * gp.x + C64::new(t[(0, 1)], 0.0) * gp.y,
        C64::new(t[(1, 0)], 0.0) * gp.x + C64::new(t[(1, 1)], 0.0) * gp.y,
    )
}

/// Steering vector of the panel at a local direction.
///
/// Element (n_y, n_z) carries phase `-2π (d/λ) (n_y sinθ' sinφ' + n_z cosθ')`;
/// vectorization runs over the y axis first, so entry index is
/// `n_z * N_y + n_y`. All entries have unit modulus.
pub fn steering_vector(pc: &PanelConfig, a_local: &SphericalAngle) -> DVector<C64> {
    let (st, ct) = a_local.theta.sin_cos();
    let sp = a_local.phi.sin();
    let ky = -2.0 * PI * pc.spacing_wavelengths * st * sp;
    let kz = -2.0 * PI * pc.spacing_wavelengths * ct;
    let mut v = DVector::from_element(pc.size(), C64::new(0.0, 0.0));
    for nz in 0..pc.n_z {
        for ny in 0..pc.n_y {
            let phase = ky * ny as f64 + kz * nz as f64;
            v[nz * pc.n_y + ny] = C64::new(phase.cos(), phase.sin());
        }
    }
    v
}

/// Combined array response `G(θ,φ,ρ,Θ) = a(Q(θ,φ,Θ)) gᵀ(θ,φ,ρ,Θ)`, size
/// `(n_y n_z) x 2`, rank at most one.
pub fn combined_response(pc: &PanelConfig, a_global: &SphericalAngle) -> DMatrix<C64> {
    let local = gcs_to_lcs(a_global, &pc.orientation);
    let a = steering_vector(pc, &local);
    let g = global_gain_vector(pc, a_global);
    let mut m = DMatrix::from_element(pc.size(), 2, C64::new(0.0, 0.0));
    for i in 0..pc.size() {
        m[(i, 0)] = a[i] * g.x;
        m[(i, 1)] = a[i] * g.y;
    }
    m
}

/// Array gain of a beam toward a global direction: `|w* a(Q(θ,φ,Θ))|²`.
pub fn beam_gain(w: &DVector<C64>, pc: &PanelConfig, a_global: &SphericalAngle) -> Result<f64> {
    if w.len() != pc.size() {
        return Err(Error::DimensionMismatch(format!(
            "beam has {} weights, panel has {} elements",
            w.len(),
            pc.size()
        )));
    }
    let local = gcs_to_lcs(a_global, &pc.orientation);
    let a = steering_vector(pc, &local);
    Ok(w.dotc(&a).norm_sqr())
}

/// DFT codebook: Kronecker product of per-axis DFT vectors, one beam per
/// element, unit-normalized. Beam (m_y, m_z) sits at index `m_z * n_y + m_y`.
pub fn make_dft_codebook(n_y: usize, n_z: usize) -> Codebook {
    let n = n_y * n_z;
    let norm = 1.0 / (n as f64).sqrt();
    let mut beams = Vec::with_capacity(n);
    for mz in 0..n_z {
        for my in 0..n_y {
            let mut b = DVector::from_element(n, C64::new(0.0, 0.0));
            for nz in 0..n_z {
                for ny in 0..n_y {
                    let phase = -2.0
                        * PI
                        * (ny as f64 * my as f64 / n_y as f64 + nz as f64 * mz as f64 / n_z as f64);
                    b[nz * n_y + ny] = C64::new(phase.cos(), phase.sin()) * norm;
                }
            }
            beams.push(b);
        }
    }
    Codebook::new(beams)
}

/// Uniform samples over an inclusive range; a single sample sits at the
/// range center.
fn uniform_samples(n: usize, range: (f64, f64)) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (range.0 + range.1)];
    }
    let step = (range.1 - range.0) / (n as f64 - 1.0);
    (0..n).map(|i| range.0 + step * i as f64).collect()
}

/// Angle-limited codebook: unit-norm steering-vector beams at a uniform
/// azimuth/elevation sample grid in the local frame. `az_range` and
/// `el_range` are in radians; beam (azimuth j, elevation i) sits at index
/// `i * n_y + j`.
pub fn make_angle_limited_codebook(
    n_y: usize,
    n_z: usize,
    az_range: (f64, f64),
    el_range: (f64, f64),
) -> Result<Codebook> {
    if !(az_range.1 >= az_range.0) || !(el_range.1 >= el_range.0) {
        return Err(Error::InvalidParameter("degenerate codebook angle range".into()));
    }
    let probe = PanelConfig {
        n_y,
        n_z,
        spacing_wavelengths: 0.5,
        orientation: Orientation::identity(),
        pol_angle: 0.0,
        pattern: ElementPattern::Isotropic,
        codebook: Codebook::new(vec![]),
    };
    let azs = uniform_samples(n_y, az_range);
    let els = uniform_samples(n_z, el_range);
    let mut beams = Vec::with_capacity(n_y * n_z);
    for &el in &els {
        for &az in &azs {
            beams.push(steering_vector(&probe, &SphericalAngle::new(el, az)));
        }
    }
    Ok(Codebook::new(beams))
}

/// Sample angles used by [`make_angle_limited_codebook`], in beam order.
pub fn angle_limited_directions(
    n_y: usize,
    n_z: usize,
    az_range: (f64, f64),
    el_range: (f64, f64),
) -> Vec<SphericalAngle> {
    let azs = uniform_samples(n_y, az_range);
    let els = uniform_samples(n_z, el_range);
    let mut out = Vec::with_capacity(n_y * n_z);
    for &el in &els {
        for &az in &azs {
            out.push(SphericalAngle::new(el, az));
        }
    }
    out
}

/// The paper-style UE sector: azimuth within +/-60 degrees, elevation within
/// 30..150 degrees of the local frame.
pub const UE_SECTOR_AZ: (f64, f64) = (-PI / 3.0, PI / 3.0);
pub const UE_SECTOR_EL: (f64, f64) = (PI / 6.0, 5.0 * PI / 6.0);

/// Global direction of a beam's array-gain peak, found by a coarse scan of
/// the panel's front half-space (local azimuth within +/-90 degrees).
/// Codebook-agnostic; resolution is set by the grid counts.
pub fn beam_peak_direction(
    pc: &PanelConfig,
    w: &DVector<C64>,
    n_el: usize,
    n_az: usize,
) -> SphericalAngle {
    let mut best = (f64::MIN, SphericalAngle::new(PI / 2.0, 0.0));
    for i in 0..n_el {
        let theta = PI * (i as f64 + 0.5) / n_el as f64;
        for j in 0..n_az {
            let phi = -PI / 2.0 + PI * (j as f64 + 0.5) / n_az as f64;
            let local = SphericalAngle::new(theta, phi);
            let a = steering_vector(pc, &local);
            let g = w.dotc(&a).norm_sqr();
            if g > best.0 {
                best = (g, local);
            }
        }
    }
    crate::geometry::lcs_to_gcs(&best.1, &pc.orientation)
}
