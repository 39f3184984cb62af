//! Alternating path-tracing optimization: recovers path information (AoA/AoD
//! set and Hermitian PSD path matrices) from beamformed RSRP measurements.
//!
//! Each outer iteration alternates two steps on the max-normalized
//! mean-squared measurement error:
//!
//! 1. **Angle step** — Powell's derivative-free search over all `4 L_all`
//!    angle scalars, matrices held fixed. No angular box constraints: the
//!    global-to-local transform canonicalizes any real input, so periodicity
//!    is inherent.
//! 2. **Matrix step** — the objective is linear in each path matrix, so this
//!    is a PSD-constrained least squares over the stacked Hermitian blocks,
//!    solved exactly by projected accelerated gradient.
//!
//! Both steps are individually non-increasing, so the outer objective
//! history is monotone and every iterate is PSD-feasible. Random angle
//! initialization lands in poor basins often enough that a multi-start
//! wrapper (default 8 restarts, best objective wins) is part of the
//! interface.

mod powell;
mod psd_ls;

pub use powell::{minimize as powell_minimize, PowellConfig, PowellOutcome};
pub use psd_ls::{solve as psd_ls_solve, PsdLsConfig, PsdLsOutcome};

use nalgebra::{DMatrix, DVector, Matrix4, Vector2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::antenna::{global_gain_vector, steering_vector, PanelConfig};
use crate::geometry::{gcs_to_lcs, SphericalAngle};
use crate::linalg::{coords_to_herm, herm_to_coords, C64, HERM4_DIM};
use crate::rsrp::{b_outer, pol_kron, MeasurementSet, PathAngles, PathInfo};
use crate::seeding;
use crate::{Error, Result};

/// Budgets and tolerances for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerConfig {
    /// Outer iteration cap `j_max`.
    pub max_iters: usize,
    /// Loss threshold on the max-normalized MSE.
    pub loss_threshold: f64,
    pub powell: PowellConfig,
    pub psd: PsdLsConfig,
    pub init_seed: u64,
    /// Random restarts; the best final objective wins.
    pub restarts: usize,
    /// Abandon a restart when the relative objective improvement stays below
    /// `stall_rel` for `stall_window` consecutive outer iterations.
    pub stall_window: usize,
    pub stall_rel: f64,
    /// When a restart stalls above the loss threshold, re-aim the
    /// weakest-power path at the beam directions of the largest-residual
    /// record and continue, up to this many times per restart. Escapes the
    /// duplicate-capture local minima that plain alternation cannot leave.
    pub reseeds: usize,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            max_iters: 40,
            loss_threshold: 1e-9,
            powell: PowellConfig::default(),
            psd: PsdLsConfig::default(),
            init_seed: 0,
            restarts: 8,
            stall_window: 3,
            stall_rel: 0.02,
            reseeds: 8,
        }
    }
}

/// Output of a trace: recovered path information in physical units plus the
/// normalized objective trajectory of the winning restart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceResult {
    pub path_info: PathInfo,
    /// Objective after each outer iteration (max-normalized units),
    /// non-increasing.
    pub objective_history: Vec<f64>,
    pub final_objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restart_index: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AngleOptResult {
    pub path_info: PathInfo,
    /// Normalized objective at the returned angles.
    pub objective: f64,
    pub line_search_warning: bool,
}

#[derive(Debug, Clone)]
pub struct MatrixOptResult {
    pub path_info: PathInfo,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Precomputed measurement structure: beams deduplicated per panel and per
/// BS list so one objective evaluation costs a handful of steering dots per
/// path instead of per record.
struct EvalContext<'a> {
    bs_panel: &'a PanelConfig,
    ue_panels: &'a [PanelConfig],
    /// Normalized measurements.
    y: Vec<f64>,
    /// Unique BS beams referenced by the records.
    bs_beams: Vec<&'a DVector<C64>>,
    /// Unique (panel, ue_beam) weights per panel.
    ue_beams: Vec<Vec<&'a DVector<C64>>>,
    /// Per record: panel, local UE beam index, local BS beam index.
    rec: Vec<(usize, usize, usize)>,
    /// Per panel, the measurement grid `Y_p[i, j]` when the records form a
    /// complete (UE beam x BS beam) product per panel; empty otherwise.
    /// Grid completeness is what makes the normal equations of the matrix
    /// subproblem separable, and with them the variable-projection
    /// evaluation cheap.
    y_grids: Vec<DMatrix<f64>>,
    grid_complete: bool,
}

/// Per-candidate tables: everything the model needs about one angle set.
struct AngleTables {
    /// `gamma_t[l][j]` for unique BS beam j.
    gamma_t: Vec<Vec<f64>>,
    /// `gamma_r[l][p][i]` for panel p, local UE beam i.
    gamma_r: Vec<Vec<Vec<f64>>>,
    /// Isometric coordinates of `B_{l,p}`.
    b_coords: Vec<Vec<[f64; HERM4_DIM]>>,
}

impl<'a> EvalContext<'a> {
    fn new(ms: &'a MeasurementSet) -> Self {
        let mut bs_ids: Vec<usize> = Vec::new();
        let mut ue_ids: Vec<Vec<usize>> = vec![Vec::new(); ms.ue_panels.len()];
        let mut rec = Vec::with_capacity(ms.records.len());
        for r in &ms.records {
            let bj = match bs_ids.iter().position(|&b| b == r.bs_beam) {
                Some(j) => j,
                None => {
                    bs_ids.push(r.bs_beam);
                    bs_ids.len() - 1
                }
            };
            let ui = match ue_ids[r.panel].iter().position(|&b| b == r.ue_beam) {
                Some(i) => i,
                None => {
                    ue_ids[r.panel].push(r.ue_beam);
                    ue_ids[r.panel].len() - 1
                }
            };
            rec.push((r.panel, ui, bj));
        }
        let y: Vec<f64> = ms.normalized_rsrps();
        // Detect per-panel grid completeness and fill the measurement grids.
        let n_bs = bs_ids.len();
        let mut y_grids: Vec<DMatrix<f64>> =
            ue_ids.iter().map(|ids| DMatrix::zeros(ids.len(), n_bs)).collect();
        let mut counts: Vec<DMatrix<u32>> =
            ue_ids.iter().map(|ids| DMatrix::zeros(ids.len(), n_bs)).collect();
        for (m, &(p, ui, bj)) in rec.iter().enumerate() {
            y_grids[p][(ui, bj)] = y[m];
            counts[p][(ui, bj)] += 1;
        }
        let grid_complete = counts.iter().all(|c| c.iter().all(|&n| n == 1));
        EvalContext {
            bs_panel: &ms.bs_panel,
            ue_panels: &ms.ue_panels,
            y,
            bs_beams: bs_ids.iter().map(|&b| ms.bs_panel.codebook.beam(b)).collect(),
            ue_beams: ue_ids
                .iter()
                .enumerate()
                .map(|(p, ids)| ids.iter().map(|&b| ms.ue_panels[p].codebook.beam(b)).collect())
                .collect(),
            rec,
            y_grids,
            grid_complete,
        }
    }

    fn n_paths(&self, raw: &[f64]) -> usize {
        raw.len() / 4
    }

    /// Builds the gamma/B tables for a raw angle vector
    /// `[aod_th, aod_ph, aoa_th, aoa_ph] * L`.
    fn tables(&self, raw: &[f64]) -> AngleTables {
        let l_all = self.n_paths(raw);
        let mut gamma_t = Vec::with_capacity(l_all);
        let mut gamma_r = Vec::with_capacity(l_all);
        let mut b_coords = Vec::with_capacity(l_all);
        for l in 0..l_all {
            let aod = SphericalAngle::new(raw[4 * l], raw[4 * l + 1]);
            let aoa = SphericalAngle::new(raw[4 * l + 2], raw[4 * l + 3]);

            let a_t = steering_vector(self.bs_panel, &gcs_to_lcs(&aod, &self.bs_panel.orientation));
            let g_t = global_gain_vector(self.bs_panel, &aod);
            gamma_t.push(
                self.bs_beams
                    .iter()
                    .map(|f| {
                        let dot: C64 = a_t.iter().zip(f.iter()).map(|(ai, fi)| ai * fi).sum();
                        dot.norm_sqr()
                    })
                    .collect(),
            );

            let mut gr_per_panel = Vec::with_capacity(self.ue_panels.len());
            let mut b_per_panel = Vec::with_capacity(self.ue_panels.len());
            for (p, panel) in self.ue_panels.iter().enumerate() {
                let a_r = steering_vector(panel, &gcs_to_lcs(&aoa, &panel.orientation));
                let g_r = global_gain_vector(panel, &aoa);
                gr_per_panel.push(
                    self.ue_beams[p]
                        .iter()
                        .map(|w| w.dotc(&a_r).norm_sqr())
                        .collect::<Vec<f64>>(),
                );
                let b = pol_kron(&g_r, &Vector2::new(g_t.x, g_t.y));
                b_per_panel.push(herm_to_coords(&b_outer(&b)));
            }
            gamma_r.push(gr_per_panel);
            b_coords.push(b_per_panel);
        }
        AngleTables { gamma_t, gamma_r, b_coords }
    }

    /// Model RSRP per record (normalized units).
    fn models(&self, raw: &[f64], coords: &[f64]) -> Vec<f64> {
        let l_all = self.n_paths(raw);
        let t = self.tables(raw);
        // tr(R_l B_{l,p}) per (path, panel).
        let mut trace: Vec<Vec<f64>> = Vec::with_capacity(l_all);
        for l in 0..l_all {
            let r = &coords[l * HERM4_DIM..(l + 1) * HERM4_DIM];
            trace.push(
                t.b_coords[l]
                    .iter()
                    .map(|b| b.iter().zip(r.iter()).map(|(u, v)| u * v).sum())
                    .collect(),
            );
        }
        self.rec
            .iter()
            .map(|&(p, ui, bj)| {
                (0..l_all).map(|l| t.gamma_r[l][p][ui] * t.gamma_t[l][bj] * trace[l][p]).sum()
            })
            .collect()
    }

    /// Normalized MSE for angles `raw` and matrix coordinates `coords`
    /// (length `16 L`).
    fn eval(&self, raw: &[f64], coords: &[f64]) -> f64 {
        let l_all = self.n_paths(raw);
        let t = self.tables(raw);
        let mut trace: Vec<Vec<f64>> = Vec::with_capacity(l_all);
        for l in 0..l_all {
            let r = &coords[l * HERM4_DIM..(l + 1) * HERM4_DIM];
            trace.push(
                t.b_coords[l]
                    .iter()
                    .map(|b| b.iter().zip(r.iter()).map(|(u, v)| u * v).sum())
                    .collect(),
            );
        }
        let mut acc = 0.0;
        for (m, &(p, ui, bj)) in self.rec.iter().enumerate() {
            let mut model = 0.0;
            for l in 0..l_all {
                model += t.gamma_r[l][p][ui] * t.gamma_t[l][bj] * trace[l][p];
            }
            let d = self.y[m] - model;
            acc += d * d;
        }
        acc / self.y.len() as f64
    }

    /// Variable-projection objective: `min over matrices` of the MSE at the
    /// given angles, with the inner least squares solved in closed form
    /// (unconstrained, small ridge). The per-panel grid structure makes the
    /// normal equations separable:
    /// `AᵀA[(l,i),(l',i')] = Σ_p (γr_l·γr_l')(γt_l·γt_l') b_lp[i] b_l'p[i']`
    /// and `Aᵀy[(l,i)] = Σ_p (γr_lᵀ Y_p γt_l) b_lp[i]`, so one evaluation
    /// costs about as much as a plain objective evaluation plus one 48x48
    /// Cholesky. Falls back to the explicit design when the records do not
    /// form complete grids.
    fn varpro_eval(&self, raw: &[f64]) -> f64 {
        let l_all = self.n_paths(raw);
        let n = l_all * HERM4_DIM;
        let t = self.tables(raw);

        let (ata, aty) = if self.grid_complete {
            let mut ata = DMatrix::<f64>::zeros(n, n);
            let mut aty = DVector::<f64>::zeros(n);
            for l in 0..l_all {
                for lp in l..l_all {
                    // (Σ_j γt_l γt_l') is panel independent.
                    let st: f64 =
                        t.gamma_t[l].iter().zip(t.gamma_t[lp].iter()).map(|(a, b)| a * b).sum();
                    for p in 0..self.ue_panels.len() {
                        let sr: f64 = t.gamma_r[l][p]
                            .iter()
                            .zip(t.gamma_r[lp][p].iter())
                            .map(|(a, b)| a * b)
                            .sum();
                        let s = st * sr;
                        if s == 0.0 {
                            continue;
                        }
                        let bl = &t.b_coords[l][p];
                        let blp = &t.b_coords[lp][p];
                        for i in 0..HERM4_DIM {
                            for ip in 0..HERM4_DIM {
                                ata[(l * HERM4_DIM + i, lp * HERM4_DIM + ip)] +=
                                    s * bl[i] * blp[ip];
                            }
                        }
                    }
                }
                for p in 0..self.ue_panels.len() {
                    // γr_lᵀ Y_p γt_l
                    let gr = DVector::from_column_slice(&t.gamma_r[l][p]);
                    let gt = DVector::from_column_slice(&t.gamma_t[l]);
                    let w = (gr.transpose() * &self.y_grids[p] * gt)[(0, 0)];
                    let bl = &t.b_coords[l][p];
                    for i in 0..HERM4_DIM {
                        aty[l * HERM4_DIM + i] += w * bl[i];
                    }
                }
            }
            // Mirror the upper block triangle.
            for l in 0..l_all {
                for lp in (l + 1)..l_all {
                    for i in 0..HERM4_DIM {
                        for ip in 0..HERM4_DIM {
                            ata[(lp * HERM4_DIM + ip, l * HERM4_DIM + i)] =
                                ata[(l * HERM4_DIM + i, lp * HERM4_DIM + ip)];
                        }
                    }
                }
            }
            (ata, aty)
        } else {
            let a = self.design(raw);
            let y = DVector::from_column_slice(&self.y);
            (a.transpose() * &a, a.transpose() * y)
        };

        let mut reg = ata.clone();
        let ridge = 1e-10 * (ata.trace() / n as f64).max(1e-300);
        for i in 0..n {
            reg[(i, i)] += ridge;
        }
        let x = match nalgebra::Cholesky::new(reg) {
            Some(ch) => ch.solve(&aty),
            None => DVector::zeros(n),
        };
        // Exact residual at the solved matrices: avoids the catastrophic
        // cancellation of the ||y||^2 - 2x'A'y + x'A'A x route near the
        // noise floor.
        self.eval(raw, x.as_slice())
    }

    /// Design matrix of the matrix step: row m, block l holds
    /// `gamma_r gamma_t * coords(B_{l, p_m})`.
    fn design(&self, raw: &[f64]) -> DMatrix<f64> {
        let l_all = self.n_paths(raw);
        let t = self.tables(raw);
        let mut a = DMatrix::zeros(self.rec.len(), l_all * HERM4_DIM);
        for (m, &(p, ui, bj)) in self.rec.iter().enumerate() {
            for l in 0..l_all {
                let g = t.gamma_r[l][p][ui] * t.gamma_t[l][bj];
                let b = &t.b_coords[l][p];
                for i in 0..HERM4_DIM {
                    a[(m, l * HERM4_DIM + i)] = g * b[i];
                }
            }
        }
        a
    }
}

fn angles_to_raw(angles: &[PathAngles]) -> Vec<f64> {
    angles
        .iter()
        .flat_map(|a| [a.aod.theta, a.aod.phi, a.aoa.theta, a.aoa.phi])
        .collect()
}

fn raw_to_angles(raw: &[f64]) -> Vec<PathAngles> {
    raw.chunks(4)
        .map(|c| PathAngles {
            aod: SphericalAngle::new(c[0], c[1]),
            aoa: SphericalAngle::new(c[2], c[3]),
        })
        .collect()
}

fn matrices_to_coords(matrices: &[Matrix4<C64>], scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(matrices.len() * HERM4_DIM);
    for m in matrices {
        let scaled = m.map(|z| z / scale);
        out.extend_from_slice(&herm_to_coords(&scaled));
    }
    out
}

fn coords_to_matrices(coords: &[f64], scale: f64) -> Vec<Matrix4<C64>> {
    coords
        .chunks(HERM4_DIM)
        .map(|c| coords_to_herm(c).map(|z| z * scale))
        .collect()
}

/// Path-tracing objective `f(A, R)`: mean squared error between the
/// max-normalized measurements and the model RSRP, evaluated with each
/// record's own antenna configuration.
pub fn objective(ms: &MeasurementSet, pi: &PathInfo) -> f64 {
    let ctx = EvalContext::new(ms);
    ctx.eval(&angles_to_raw(&pi.angles), &matrices_to_coords(&pi.matrices, ms.norm_factor))
}

/// Angle step: Powell over all `4 L_all` angle scalars with the matrix set
/// fixed. The objective never increases.
pub fn optimize_angles(ms: &MeasurementSet, pi: &PathInfo, cfg: &TracerConfig) -> AngleOptResult {
    let ctx = EvalContext::new(ms);
    let coords = matrices_to_coords(&pi.matrices, ms.norm_factor);
    let raw0 = angles_to_raw(&pi.angles);
    let out = powell_minimize(|raw| ctx.eval(raw, &coords), &raw0, &cfg.powell);
    AngleOptResult {
        path_info: PathInfo { angles: raw_to_angles(&out.x), matrices: pi.matrices.clone() },
        objective: out.f,
        line_search_warning: out.line_search_failures > 0,
    }
}

/// Matrix step: exact PSD-constrained least squares over the stacked
/// Hermitian blocks with the angle set fixed, warm-started at the current
/// matrices. The objective never increases; every returned block is PSD.
pub fn optimize_matrices(ms: &MeasurementSet, pi: &PathInfo, cfg: &TracerConfig) -> MatrixOptResult {
    let ctx = EvalContext::new(ms);
    let raw = angles_to_raw(&pi.angles);
    let a = ctx.design(&raw);
    let y = DVector::from_vec(ctx.y.clone());
    let x0 = matrices_to_coords(&pi.matrices, ms.norm_factor);
    let out = psd_ls_solve(&a, &y, pi.matrices.len(), &x0, &cfg.psd);
    MatrixOptResult {
        path_info: PathInfo {
            angles: pi.angles.clone(),
            matrices: coords_to_matrices(&out.x, ms.norm_factor),
        },
        objective: out.objective,
        kkt_residual: out.kkt_residual,
        converged: out.converged,
    }
}

struct RestartRun {
    raw: Vec<f64>,
    coords: Vec<f64>,
    history: Vec<f64>,
    converged: bool,
    warnings: Vec<String>,
}

/// Index of the path whose removal (matrix zeroed) increases the objective
/// the least: a duplicate of another path, or a path that never locked onto
/// anything. That is the right block to re-aim during a reseed.
fn most_redundant_block(ctx: &EvalContext, raw: &[f64], coords: &[f64], l_all: usize) -> usize {
    (0..l_all)
        .map(|l| {
            let mut without = coords.to_vec();
            without[l * HERM4_DIM..(l + 1) * HERM4_DIM].fill(0.0);
            ctx.eval(raw, &without)
        })
        .enumerate()
        .min_by(|(_, a), (_, b)| a.total_cmp(b))
        .map(|(i, _)| i)
        .unwrap()
}

/// Unconstrained least-squares score of placing one block at candidate
/// angles against the residual the other blocks leave behind (lower is
/// better). Cheap enough to scan a handful of candidates per reseed.
fn single_block_fit_score(
    ctx: &EvalContext,
    raw: &[f64],
    coords: &[f64],
    block: usize,
    cand: &[f64; 4],
) -> f64 {
    let mut trial_raw = raw.to_vec();
    trial_raw[4 * block..4 * block + 4].copy_from_slice(cand);
    let mut others = coords.to_vec();
    others[block * HERM4_DIM..(block + 1) * HERM4_DIM].fill(0.0);
    let resid = DVector::from_vec(
        ctx.y
            .iter()
            .zip(ctx.models(&trial_raw, &others).iter())
            .map(|(y, m)| y - m)
            .collect::<Vec<f64>>(),
    );
    let full = ctx.design(&trial_raw);
    let a = full.columns(block * HERM4_DIM, HERM4_DIM).into_owned();
    let mut ata = a.transpose() * &a;
    let ridge = 1e-10 * ata.trace().max(1e-300);
    for i in 0..HERM4_DIM {
        ata[(i, i)] += ridge;
    }
    let atr = a.transpose() * &resid;
    match nalgebra::Cholesky::new(ata) {
        Some(ch) => {
            let x = ch.solve(&atr);
            (&resid - &a * x).norm_squared() / ctx.y.len() as f64
        }
        None => resid.norm_squared() / ctx.y.len() as f64,
    }
}

/// Detects two paths that have collapsed onto the same arrival/departure
/// pair. Straddled duplicates fit one physical path's residual structure
/// with two blocks and are the dominant local minimum of the alternation;
/// a reseed must break the pair, not some unrelated block.
fn duplicate_pair(raw: &[f64], l_all: usize) -> Option<(usize, usize)> {
    let tol = 12f64.to_radians();
    for i in 0..l_all {
        let ai = PathAngles {
            aod: SphericalAngle::new(raw[4 * i], raw[4 * i + 1]),
            aoa: SphericalAngle::new(raw[4 * i + 2], raw[4 * i + 3]),
        };
        for j in (i + 1)..l_all {
            let aj = PathAngles {
                aod: SphericalAngle::new(raw[4 * j], raw[4 * j + 1]),
                aoa: SphericalAngle::new(raw[4 * j + 2], raw[4 * j + 3]),
            };
            if ai.aoa.great_circle_distance(&aj.aoa) < tol
                && ai.aod.great_circle_distance(&aj.aod) < tol
            {
                return Some((i, j));
            }
        }
    }
    None
}

/// Mirrors any AoD that lands behind the BS panel into its front half-space.
///
/// A planar array cannot tell a direction from its mirror through the array
/// plane: the steering response is identical, and the free path matrix
/// absorbs the element-pattern difference, so the objective has exact twin
/// optima. The deployment convention that the BS faces its users picks the
/// front one. Returns whether anything changed (the matrices must then be
/// refit once).
fn mirror_aod_to_front(raw: &mut [f64], bs: &PanelConfig) -> bool {
    let mut changed = false;
    for l in 0..raw.len() / 4 {
        let aod = SphericalAngle::new(raw[4 * l], raw[4 * l + 1]);
        let local = gcs_to_lcs(&aod, &bs.orientation);
        // Local boresight is +x; x-component of the local direction.
        if local.theta.sin() * local.phi.cos() < 0.0 {
            let mirrored = SphericalAngle::new(local.theta, PI - local.phi);
            let back = crate::geometry::lcs_to_gcs(&mirrored, &bs.orientation);
            raw[4 * l] = back.theta;
            raw[4 * l + 1] = back.phi;
            changed = true;
        }
    }
    changed
}

fn run_restart(ctx: &EvalContext, l_all: usize, cfg: &TracerConfig, seed: u64) -> RestartRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A^(0): elevations uniform on (0, pi), azimuths uniform on (-pi, pi).
    let mut raw = Vec::with_capacity(4 * l_all);
    for _ in 0..l_all {
        for _ in 0..2 {
            raw.push(rng.random_range(0.0..PI));
            raw.push(rng.random_range(-PI..PI));
        }
    }
    // R^(0) = (1 / (M L_all)) I per block, matching the normalized scale.
    let rho = (ctx.y.len() * l_all) as f64;
    let init_block = herm_to_coords(&Matrix4::identity().map(|z: C64| z / rho));
    let mut coords = Vec::with_capacity(l_all * HERM4_DIM);
    for _ in 0..l_all {
        coords.extend_from_slice(&init_block);
    }

    let mut f_cur = ctx.eval(&raw, &coords);
    // History tracks the best state retained so far; reseed jumps are
    // internal and never surface as an objective increase.
    let mut history = vec![f_cur];
    let mut best = (raw.clone(), coords.clone(), f_cur);
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut stall = 0usize;
    let mut reseeds_left = cfg.reseeds;

    for _j in 1..=cfg.max_iters {
        let raw_before = raw.clone();
        let coords_before = coords.clone();
        let f_prev = f_cur;

        // Step 1: angle optimization (Powell) on the variable-projection
        // surrogate min_R f(A, R): the plain objective with matrices frozen
        // zigzag-stalls on the curved angle-matrix valley, while the
        // projected objective follows it directly. Step 2 then solves the
        // exact PSD-constrained problem at the chosen angles.
        let pw = powell_minimize(|r| ctx.varpro_eval(r), &raw, &cfg.powell);
        if pw.line_search_failures > 0 && warnings.is_empty() {
            warnings.push(format!(
                "line search failed to bracket {} time(s); kept best iterate",
                pw.line_search_failures
            ));
        }
        raw = pw.x;

        // Step 2: joint PSD-constrained least squares over all blocks.
        let y = DVector::from_vec(ctx.y.clone());
        let ls = psd_ls_solve(&ctx.design(&raw), &y, l_all, &coords, &cfg.psd);
        coords = ls.x;
        f_cur = ctx.eval(&raw, &coords);

        // The surrogate ignores the PSD constraint; when its step does not
        // improve the exact objective, redo the iteration with the matrices
        // frozen, which cannot increase it.
        if f_cur > f_prev {
            raw = raw_before;
            coords = coords_before;
            let pw = powell_minimize(|r| ctx.eval(r, &coords), &raw, &cfg.powell);
            raw = pw.x;
            let ls = psd_ls_solve(&ctx.design(&raw), &y, l_all, &coords, &cfg.psd);
            coords = ls.x;
            f_cur = ctx.eval(&raw, &coords);
        }
        if f_cur < best.2 {
            best = (raw.clone(), coords.clone(), f_cur);
        }
        history.push(best.2);
        if best.2 < cfg.loss_threshold {
            converged = true;
            break;
        }

        let stalled = f_prev - f_cur < cfg.stall_rel * f_prev.abs();
        stall = if stalled { stall + 1 } else { 0 };
        if stall >= cfg.stall_window && reseeds_left == 0 {
            break;
        }
        // Reseed on a schedule, on stall, or whenever two paths have
        // collapsed onto each other (scenes never contain coincident
        // paths): the alternation alone cannot move a path across the
        // objective's flat regions, so exploration is time-boxed rather
        // than stall-gated.
        let interval = (cfg.max_iters / (cfg.reseeds + 1)).max(3);
        let duplicated = duplicate_pair(&raw, l_all).is_some();
        if reseeds_left > 0 && (_j % interval == 0 || stall >= cfg.stall_window || duplicated) {
            reseeds_left -= 1;
            stall = 0;
            // Re-aim the most redundant path (the block whose removal costs
            // the least: a duplicate or a lost path) at the beam pair of the
            // most under-modeled record. Later reseeds walk down that
            // ranking so repeated attempts explore different records.
            (raw, coords) = (best.0.clone(), best.1.clone());
            // Break a duplicate pair when one exists (re-aim its more
            // redundant member); otherwise re-aim the most redundant block.
            let weak = match duplicate_pair(&raw, l_all) {
                Some((i, j)) => {
                    let cost = |l: usize| {
                        let mut without = coords.clone();
                        without[l * HERM4_DIM..(l + 1) * HERM4_DIM].fill(0.0);
                        ctx.eval(&raw, &without)
                    };
                    if cost(i) <= cost(j) {
                        i
                    } else {
                        j
                    }
                }
                None => most_redundant_block(ctx, &raw, &coords, l_all),
            };
            let models = ctx.models(&raw, &coords);
            // Relative under-modeling with a floor that tracks the current
            // residual scale: records the model leaves essentially
            // unexplained score near one regardless of magnitude, while
            // noise-level records and partially-misfit strong records rank
            // low at every stage of the fit.
            let max_residual = ctx
                .y
                .iter()
                .zip(models.iter())
                .map(|(y, m)| y - m)
                .fold(0.0f64, f64::max);
            let floor = 1e-2 * max_residual + 1e-12;
            let mut under: Vec<(usize, f64)> = ctx
                .y
                .iter()
                .zip(models.iter())
                .map(|(y, m)| (y - m) / (y + m + floor))
                .enumerate()
                .collect();
            under.sort_by(|(_, a), (_, b)| b.total_cmp(a));
            // Matched-filter scan: each of the most under-modeled records
            // proposes an (AoA, AoD) candidate from its beam pair; keep the
            // candidate whose single-block least-squares fit explains the
            // residual best.
            let mut scanned = 0usize;
            let mut best_cand: Option<([f64; 4], f64)> = None;
            for &(target, score) in under.iter() {
                if scanned >= 10 || score <= 0.0 {
                    break;
                }
                scanned += 1;
                let (p, ui, bj) = ctx.rec[target];
                let aoa = crate::antenna::beam_peak_direction(
                    &ctx.ue_panels[p],
                    ctx.ue_beams[p][ui],
                    48,
                    96,
                );
                let aod =
                    crate::antenna::beam_peak_direction(ctx.bs_panel, ctx.bs_beams[bj], 48, 96);
                let cand = [aod.theta, aod.phi, aoa.theta, aoa.phi];
                let fit = single_block_fit_score(ctx, &raw, &coords, weak, &cand);
                if best_cand.map_or(true, |(_, bf)| fit < bf) {
                    best_cand = Some((cand, fit));
                }
            }
            let Some((cand, cand_fit)) = best_cand else {
                continue;
            };
            if std::env::var("HETBEAM_TRACE_DEBUG").is_ok() {
                eprintln!(
                    "reseed: iter={_j} block={weak} aod=({:.1},{:.1})deg aoa=({:.1},{:.1})deg scan_fit={cand_fit:.3e} f_best={:.3e}",
                    cand[0].to_degrees(),
                    cand[1].to_degrees(),
                    cand[2].to_degrees(),
                    cand[3].to_degrees(),
                    best.2
                );
            }
            raw[4 * weak..4 * weak + 4].copy_from_slice(&cand);
            // Polish the re-aimed path's four coordinates on the projected
            // objective (matrices implicitly refit), then solve the exact
            // PSD problem at the result.
            let base = raw.clone();
            let sub = powell_minimize(
                |v| {
                    let mut full = base.clone();
                    full[4 * weak..4 * weak + 4].copy_from_slice(v);
                    ctx.varpro_eval(&full)
                },
                &raw[4 * weak..4 * weak + 4],
                &cfg.powell,
            );
            raw[4 * weak..4 * weak + 4].copy_from_slice(&sub.x);
            let y_vec = DVector::from_vec(ctx.y.clone());
            let ls = psd_ls_solve(&ctx.design(&raw), &y_vec, l_all, &coords, &cfg.psd);
            coords = ls.x;
            f_cur = ctx.eval(&raw, &coords);
            if f_cur < best.2 {
                best = (raw.clone(), coords.clone(), f_cur);
            }
        }
    }
    let (r, c, _) = best;
    raw = r;
    coords = c;

    // Resolve the front/back twin optimum on the transmit side, then refit
    // the matrices at the canonical angles. Accepted only if the objective
    // is preserved (it is, up to solver tolerance, by the mirror symmetry).
    let mut raw_c = raw.clone();
    if mirror_aod_to_front(&mut raw_c, ctx.bs_panel) {
        let a = ctx.design(&raw_c);
        let y = DVector::from_vec(ctx.y.clone());
        let ls = psd_ls_solve(&a, &y, l_all, &coords, &cfg.psd);
        let f_c = ctx.eval(&raw_c, &ls.x);
        let f_last = *history.last().unwrap();
        if f_c <= f_last + 1e-10 {
            raw = raw_c;
            coords = ls.x;
            history.push(f_c);
            converged = converged || f_c < cfg.loss_threshold;
        } else {
            warnings.push(format!(
                "front-mirror canonicalization refit degraded the objective \
                 ({f_last:e} -> {f_c:e}); kept the uncanonicalized angles"
            ));
        }
    }

    RestartRun { raw, coords, history, converged, warnings }
}

/// Full Algorithm: multi-start alternating optimization. Requires
/// `M > 36 L_all` measurements. Returns path information in physical units
/// (the max-normalization is undone on output).
pub fn trace_paths(ms: &MeasurementSet, l_all: usize, cfg: &TracerConfig) -> Result<TraceResult> {
    if l_all == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let bound = 36 * l_all;
    if ms.len() <= bound {
        return Err(Error::InsufficientMeasurements { got: ms.len(), bound, paths: l_all });
    }
    let ctx = EvalContext::new(ms);
    let runs: Vec<RestartRun> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| run_restart(&ctx, l_all, cfg, seeding::derive(cfg.init_seed, r as u64)))
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.history.last().unwrap().total_cmp(b.history.last().unwrap())
        })
        .map(|(i, _)| i)
        .unwrap();
    let run = &runs[best];

    let path_info = PathInfo::new(
        raw_to_angles(&run.raw),
        coords_to_matrices(&run.coords, ms.norm_factor),
    )?;
    Ok(TraceResult {
        path_info,
        final_objective: *run.history.last().unwrap(),
        objective_history: run.history.clone(),
        converged: run.converged,
        iterations: run.history.len() - 1,
        restart_index: best,
        warnings: run.warnings.clone(),
    })
}

/// Per-path angle errors (AoA, AoD great-circle radians) between a recovered
/// path set and the truth, under the best assignment (paths are recovered
/// only up to permutation). Brute-force over permutations; path counts are
/// tiny.
pub fn angle_assignment_errors(recovered: &PathInfo, truth: &PathInfo) -> Vec<(f64, f64)> {
    let n = recovered.len().min(truth.len());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                recovered.angles[i].aoa.great_circle_distance(&truth.angles[j].aoa)
                    + recovered.angles[i].aod.great_circle_distance(&truth.angles[j].aod)
            })
            .sum();
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, p.to_vec()));
        }
    });
    let (_, assignment) = best.unwrap();
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            (
                recovered.angles[i].aoa.great_circle_distance(&truth.angles[j].aoa),
                recovered.angles[i].aod.great_circle_distance(&truth.angles[j].aod),
            )
        })
        .collect()
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_scene, SceneParams};
    use crate::rsrp::{
        build_measurement_set, path_info_from_scene, rsrp_simplified, SamplingPlan,
    };

    fn quick_cfg() -> TracerConfig {
        TracerConfig {
            max_iters: 15,
            restarts: 4,
            loss_threshold: 1e-6,
            powell: PowellConfig { max_sweeps: 2, ..PowellConfig::default() },
            psd: PsdLsConfig { max_iters: 600, ..PsdLsConfig::default() },
            ..TracerConfig::default()
        }
    }

    fn one_path_measurements(seed: u64) -> (crate::channel::Scene, MeasurementSet) {
        let mut params = SceneParams::default();
        params.n_paths = 1;
        params.blockage_probability = 0.0;
        let scene = generate_scene(seed, &params).unwrap();
        // Full BS-beam coverage: without it the angle landscape has large
        // plateaus and random initialization rarely finds the basin.
        let plan = SamplingPlan::bs_subgrid(8, 8, 8, true);
        let ms = build_measurement_set(&scene, &plan, seed).unwrap();
        (scene, ms)
    }

    #[test]
    fn objective_zero_for_constructive_path_info_single_path() {
        let (scene, ms) = one_path_measurements(5);
        let pi = path_info_from_scene(&scene);
        let f = objective(&ms, &pi);
        assert!(f <= 1e-12, "objective {f:e}");
    }

    #[test]
    fn objective_small_for_constructive_path_info_multi_path() {
        // Cross terms make exact and simplified differ, so the constructive
        // path information fits noiseless measurements only approximately.
        let params = SceneParams { blockage_probability: 0.0, ..SceneParams::default() };
        let scene = generate_scene(9, &params).unwrap();
        let ms =
            build_measurement_set(&scene, &SamplingPlan::bs_subgrid(8, 8, 3, true), 0).unwrap();
        let pi = path_info_from_scene(&scene);
        let f = objective(&ms, &pi);
        assert!(f < 1e-4, "objective {f:e}");
    }

    #[test]
    fn objective_all_zero_matrices_is_mean_square() {
        let (scene, ms) = one_path_measurements(6);
        let mut pi = path_info_from_scene(&scene);
        for m in &mut pi.matrices {
            *m = Matrix4::from_element(C64::new(0.0, 0.0));
        }
        let f = objective(&ms, &pi);
        let expect: f64 =
            ms.normalized_rsrps().iter().map(|v| v * v).sum::<f64>() / ms.len() as f64;
        approx::assert_relative_eq!(f, expect, max_relative = 1e-12);
        assert!(f >= 0.0);
    }

    #[test]
    fn optimize_angles_fixed_point_and_monotone() {
        let (scene, ms) = one_path_measurements(7);
        let pi = path_info_from_scene(&scene);
        let cfg = quick_cfg();
        let f0 = objective(&ms, &pi);
        let out = optimize_angles(&ms, &pi, &cfg);
        assert!(out.objective <= f0 + 1e-12);

        // Random perturbed starts never increase the objective either.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let mut noisy = pi.clone();
            for a in &mut noisy.angles {
                let aoa = SphericalAngle::new(
                    a.aoa.theta + rng.random_range(-0.3..0.3),
                    a.aoa.phi + rng.random_range(-0.3..0.3),
                );
                a.aoa = aoa;
            }
            let f_before = objective(&ms, &noisy);
            let out = optimize_angles(&ms, &noisy, &cfg);
            assert!(out.objective <= f_before + 1e-12);
        }
    }

    #[test]
    fn optimize_angles_recovers_aoa_against_grid_oracle() {
        let (scene, ms) = one_path_measurements(8);
        let truth = path_info_from_scene(&scene);

        // 1D problem: perturb only the AoA azimuth.
        let mut start = truth.clone();
        let true_aoa = start.angles[0].aoa;
        start.angles[0].aoa = SphericalAngle::new(true_aoa.theta, true_aoa.phi + 0.35);

        // Dense grid-search oracle over the azimuth alone.
        let ctx = EvalContext::new(&ms);
        let coords = matrices_to_coords(&truth.matrices, ms.norm_factor);
        let mut raw = angles_to_raw(&truth.angles);
        let mut best = (f64::INFINITY, 0.0);
        let n_grid = 3600;
        for g in 0..n_grid {
            let phi = -PI + 2.0 * PI * g as f64 / n_grid as f64;
            raw[3] = phi;
            let f = ctx.eval(&raw, &coords);
            if f < best.0 {
                best = (f, phi);
            }
        }

        let cfg = TracerConfig {
            powell: PowellConfig { max_sweeps: 6, line_tol: 1e-6, ..PowellConfig::default() },
            ..quick_cfg()
        };
        let out = optimize_angles(&ms, &start, &cfg);
        let recovered = out.path_info.angles[0].aoa;
        let oracle = SphericalAngle::new(true_aoa.theta, best.1);
        let err = recovered.great_circle_distance(&oracle);
        assert!(err < 1f64.to_radians(), "AoA off oracle by {} deg", err.to_degrees());
    }

    #[test]
    fn optimize_matrices_reproduces_noiseless_measurements() {
        let (_scene, ms) = one_path_measurements(9);
        let truth = path_info_from_scene(&_scene);
        // True angles, matrices started from the algorithm default.
        let mut start = truth.clone();
        let rho = (ms.len() * start.len()) as f64;
        for m in &mut start.matrices {
            *m = Matrix4::identity().map(|z: C64| z * ms.norm_factor / rho);
        }
        let out = optimize_matrices(&ms, &start, &TracerConfig::default());
        assert!(out.converged, "kkt {:e}", out.kkt_residual);

        // Every measurement reproduced in normalized units.
        let ctx = EvalContext::new(&ms);
        let raw = angles_to_raw(&out.path_info.angles);
        let coords = matrices_to_coords(&out.path_info.matrices, ms.norm_factor);
        let t = ctx.tables(&raw);
        for (m, &(p, ui, bj)) in ctx.rec.iter().enumerate() {
            let mut model = 0.0;
            for l in 0..out.path_info.len() {
                let r = &coords[l * HERM4_DIM..(l + 1) * HERM4_DIM];
                let tr: f64 = t.b_coords[l][p].iter().zip(r.iter()).map(|(u, v)| u * v).sum();
                model += t.gamma_r[l][p][ui] * t.gamma_t[l][bj] * tr;
            }
            assert!(
                (model - ctx.y[m]).abs() <= 1e-6,
                "record {m}: model {model:e} vs {:e}",
                ctx.y[m]
            );
        }
    }

    #[test]
    fn optimize_matrices_joint_three_path_synthetic() {
        // Measurements synthesized from the simplified model itself: the
        // joint 48-unknown solve must reproduce them.
        let params = SceneParams { blockage_probability: 0.0, ..SceneParams::default() };
        let scene = generate_scene(10, &params).unwrap();
        let plan = SamplingPlan::bs_subgrid(8, 8, 3, true);
        let mut ms = build_measurement_set(&scene, &plan, 0).unwrap();
        for r in &mut ms.records {
            let w = scene.ue_panels[r.panel].codebook.beam(r.ue_beam);
            let f = scene.bs_panel.codebook.beam(r.bs_beam);
            r.rsrp = rsrp_simplified(&scene, r.panel, w, f);
        }
        ms.norm_factor = ms.records.iter().map(|r| r.rsrp).fold(0.0f64, f64::max);

        let truth = path_info_from_scene(&scene);
        let mut start = truth.clone();
        let rho = (ms.len() * start.len()) as f64;
        for m in &mut start.matrices {
            *m = Matrix4::identity().map(|z: C64| z * ms.norm_factor / rho);
        }
        let out = optimize_matrices(&ms, &start, &TracerConfig::default());
        assert!(out.objective < 1e-12, "objective {:e}", out.objective);
        out.path_info.validate().unwrap();
    }

    #[test]
    fn optimize_matrices_zero_measurements() {
        let (_scene, mut ms) = one_path_measurements(11);
        for r in &mut ms.records {
            r.rsrp = 0.0;
        }
        ms.norm_factor = 1e-300f64.max(0.0);
        let truth = path_info_from_scene(&_scene);
        let out = optimize_matrices(&ms, &truth, &TracerConfig::default());
        for m in &out.path_info.matrices {
            assert!(m.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn trace_paths_single_path_noiseless_converges() {
        let (scene, ms) = one_path_measurements(12);
        let cfg = TracerConfig { init_seed: 5, ..quick_cfg() };
        let res = trace_paths(&ms, 1, &cfg).unwrap();
        assert!(res.converged, "history {:?}", res.objective_history);
        assert!(res.final_objective < 1e-6);
        assert!(res.iterations <= 30);

        // Recovered angles match the truth (single path, no permutation).
        let truth = path_info_from_scene(&scene);
        let errs = angle_assignment_errors(&res.path_info, &truth);
        assert!(errs[0].0 < 3f64.to_radians(), "AoA err {}", errs[0].0.to_degrees());
        assert!(errs[0].1 < 3f64.to_radians(), "AoD err {}", errs[0].1.to_degrees());
    }

    #[test]
    fn trace_paths_objective_history_non_increasing_and_feasible() {
        let (_scene, ms) = one_path_measurements(13);
        let cfg = TracerConfig { init_seed: 2, restarts: 2, ..quick_cfg() };
        let res = trace_paths(&ms, 1, &cfg).unwrap();
        for w in res.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "history increased: {:?}", res.objective_history);
        }
        res.path_info.validate().unwrap();
    }

    #[test]
    fn trace_paths_infinite_threshold_single_iteration() {
        let (_scene, ms) = one_path_measurements(14);
        let cfg = TracerConfig {
            loss_threshold: f64::INFINITY,
            restarts: 1,
            ..quick_cfg()
        };
        let res = trace_paths(&ms, 1, &cfg).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        res.path_info.validate().unwrap();
    }

    #[test]
    fn trace_paths_enforces_measurement_bound() {
        let (_scene, ms) = one_path_measurements(15);
        // 1728 records, bound for L=48 is 1728: not strictly more.
        let err = trace_paths(&ms, 48, &TracerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientMeasurements { .. }));
    }

    #[test]
    fn assignment_errors_handle_permutation() {
        let a = |th: f64, ph: f64| SphericalAngle::new(th, ph);
        let truth = PathInfo {
            angles: vec![
                PathAngles { aod: a(1.0, 0.1), aoa: a(1.2, 2.0) },
                PathAngles { aod: a(2.0, -1.0), aoa: a(0.5, -2.4) },
            ],
            matrices: vec![Matrix4::identity(); 2],
        };
        let swapped = PathInfo {
            angles: vec![truth.angles[1], truth.angles[0]],
            matrices: truth.matrices.clone(),
        };
        let errs = angle_assignment_errors(&swapped, &truth);
        for (ea, ed) in errs {
            assert!(ea < 1e-12 && ed < 1e-12);
        }
    }
}
