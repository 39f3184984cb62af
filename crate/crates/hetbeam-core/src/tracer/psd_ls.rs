//! PSD-constrained least squares over stacked Hermitian 4x4 blocks.
//!
//! Minimizes `(1/M) ||A x - y||²` where `x` holds the isometric real
//! coordinates of `n_blocks` Hermitian matrices, subject to each block being
//! PSD. The coordinate map is an isometry, so the exact Euclidean projection
//! onto the constraint set is an eigen-clip of each 4x4 block.
//!
//! Two routes:
//!
//! 1. **Direct**: SVD min-norm least squares. If every block is already PSD,
//!    that is the exact constrained optimum (and the min-norm tie-break
//!    returns exactly zero for zero measurements).
//! 2. **ADMM** splitting with over-relaxation and adaptive penalty: the
//!    x-update is a cached 48x48 Cholesky solve, the z-update is the block
//!    eigen-clip, and the returned point is the z iterate, which is feasible
//!    by construction.
//!
//! The returned point is never worse than the warm start: the best feasible
//! candidate wins, with ties broken toward smaller norm.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::{coords_to_herm, eigvals4, herm_to_coords, psd_project4, HERM4_DIM};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PsdLsConfig {
    /// ADMM iteration budget.
    pub max_iters: usize,
    /// Projected-gradient fixed-point residual target (KKT check).
    pub kkt_tol: f64,
}

impl Default for PsdLsConfig {
    fn default() -> Self {
        Self { max_iters: 2000, kkt_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct PsdLsOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Projects every 16-coordinate block of `x` onto the PSD cone in place.
fn project_blocks(x: &mut [f64]) {
    for block in x.chunks_mut(HERM4_DIM) {
        let m = psd_project4(&coords_to_herm(block));
        block.copy_from_slice(&herm_to_coords(&m));
    }
}

fn blocks_psd(x: &[f64], tol: f64) -> bool {
    x.chunks(HERM4_DIM).all(|block| {
        let w = eigvals4(&coords_to_herm(block));
        w[0] >= -tol * w[3].abs().max(1e-300)
    })
}

fn objective_of(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let r = a * x - y;
    r.norm_squared() / y.len() as f64
}

/// Largest eigenvalue of `AᵀA` by power iteration (deterministic start).
fn spectral_norm_sq(ata: &DMatrix<f64>) -> f64 {
    let n = ata.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..80 {
        let w = ata * &v;
        let norm = w.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        lam = norm;
        v = w / norm;
    }
    lam
}

/// Min-norm least-squares solution via SVD with a relative rank cutoff.
fn min_norm_ls(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rcond = 1e-12 * smax;
    let mut x_mn = DVector::zeros(a.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rcond {
            let coeff = u.column(i).dot(y) / s;
            x_mn += v_t.row(i).transpose() * coeff;
        }
    }
    x_mn
}

/// Solves the block-PSD-constrained least squares, warm-started at `x0`.
pub fn solve(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    n_blocks: usize,
    x0: &[f64],
    cfg: &PsdLsConfig,
) -> PsdLsOutcome {
    let n = n_blocks * HERM4_DIM;
    assert_eq!(a.ncols(), n, "design matrix has {} cols, want {}", a.ncols(), n);
    assert_eq!(x0.len(), n);
    let m = y.len() as f64;

    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut track_best = |cand: DVector<f64>, best: &mut Option<(DVector<f64>, f64)>| {
        let f = objective_of(a, y, &cand);
        match best {
            None => *best = Some((cand, f)),
            Some((bx, bf)) => {
                if f < *bf - 1e-300 || (f <= *bf + 1e-30 && cand.norm() < bx.norm()) {
                    *best = Some((cand, f));
                }
            }
        }
    };

    // Feasible warm start and the always-feasible zero point.
    let mut x_warm = DVector::from_column_slice(x0);
    project_blocks(x_warm.as_mut_slice());
    track_best(x_warm.clone(), &mut best);
    track_best(DVector::zeros(n), &mut best);

    // Route 1: unconstrained optimum already PSD.
    let x_mn = min_norm_ls(a, y);
    if blocks_psd(x_mn.as_slice(), 1e-12) {
        let mut x = x_mn.clone();
        project_blocks(x.as_mut_slice()); // clip eigenvalue dust
        track_best(x, &mut best);
        let (bx, bf) = best.unwrap();
        return PsdLsOutcome {
            x: bx.as_slice().to_vec(),
            objective: bf,
            kkt_residual: 0.0,
            converged: true,
            iterations: 0,
        };
    }

    // Route 2: ADMM on  min (1/M)||Ax - y||^2 + I_PSD(z)  s.t. x = z.
    let ata = (a.transpose() * a) * (2.0 / m);
    let aty = (a.transpose() * y) * (2.0 / m);
    let lip = spectral_norm_sq(&ata) * 1.01;
    if lip < 1e-300 {
        let (bx, bf) = best.unwrap();
        return PsdLsOutcome {
            x: bx.as_slice().to_vec(),
            objective: bf,
            kkt_residual: 0.0,
            converged: true,
            iterations: 0,
        };
    }

    let mut rho = (ata.trace() / n as f64).max(1e-300);
    let factorize = |rho: f64| -> Cholesky<f64, nalgebra::Dyn> {
        let mut q = ata.clone();
        for i in 0..n {
            q[(i, i)] += rho;
        }
        Cholesky::new(q).expect("SPD by construction")
    };
    let mut chol = factorize(rho);

    let relax = 1.6;
    let mut z = {
        let mut z0 = x_mn.clone();
        project_blocks(z0.as_mut_slice());
        z0
    };
    let mut u = DVector::<f64>::zeros(n);
    let scale = 1.0 + y.norm();
    let mut converged = false;
    let mut iters = 0;

    for it in 0..cfg.max_iters {
        iters = it + 1;
        let x = chol.solve(&(&aty + (&z - &u) * rho));
        let x_relaxed = &x * relax + &z * (1.0 - relax);
        let z_prev = z.clone();
        z = &x_relaxed + &u;
        project_blocks(z.as_mut_slice());
        u += &x_relaxed - &z;

        let r_primal = (&x - &z).norm();
        let r_dual = rho * (&z - &z_prev).norm();
        if r_primal <= 1e-12 * scale && r_dual <= 1e-12 * scale {
            converged = true;
            track_best(z.clone(), &mut best);
            break;
        }
        if it % 50 == 49 {
            track_best(z.clone(), &mut best);
            // Standard residual balancing.
            if r_primal > 10.0 * r_dual {
                rho *= 2.0;
                u /= 2.0;
                chol = factorize(rho);
            } else if r_dual > 10.0 * r_primal {
                rho /= 2.0;
                u *= 2.0;
                chol = factorize(rho);
            }
        }
    }
    track_best(z.clone(), &mut best);

    let (bx, bf) = best.unwrap();
    // Projected-gradient fixed-point residual at the returned point.
    let step = 1.0 / lip;
    let grad = &ata * &bx - &aty;
    let mut fp = &bx - &grad * step;
    project_blocks(fp.as_mut_slice());
    let kkt = (&bx - &fp).norm();

    PsdLsOutcome {
        x: bx.as_slice().to_vec(),
        objective: bf,
        kkt_residual: kkt,
        converged: converged || kkt <= cfg.kkt_tol,
        iterations: iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use nalgebra::Matrix4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_design(rng: &mut StdRng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_psd_coords(rng: &mut StdRng) -> Vec<f64> {
        let g = Matrix4::from_fn(|_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        herm_to_coords(&(g * g.adjoint())).to_vec()
    }

    #[test]
    fn recovers_consistent_psd_solution() {
        let mut rng = StdRng::seed_from_u64(11);
        let n_blocks = 2;
        let n = n_blocks * HERM4_DIM;
        let a = random_design(&mut rng, 120, n);
        let mut x_true = random_psd_coords(&mut rng);
        x_true.extend(random_psd_coords(&mut rng));
        let y = &a * DVector::from_column_slice(&x_true);
        let out = solve(&a, &y, n_blocks, &vec![0.0; n], &PsdLsConfig::default());
        assert!(out.objective < 1e-18, "objective {:e}", out.objective);
        assert!(out.converged);
        for block in out.x.chunks(HERM4_DIM) {
            let w = eigvals4(&coords_to_herm(block));
            assert!(w[0] >= -1e-8);
        }
    }

    #[test]
    fn zero_measurements_give_zero_matrices() {
        let mut rng = StdRng::seed_from_u64(12);
        let n = HERM4_DIM;
        let a = random_design(&mut rng, 40, n);
        let y = DVector::zeros(40);
        let warm = random_psd_coords(&mut rng);
        let out = solve(&a, &y, 1, &warm, &PsdLsConfig::default());
        assert!(out.x.iter().all(|&v| v == 0.0));
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn rank_deficient_consistent_system_is_solved_exactly() {
        // Columns seen through only a few directions, like the measurement
        // design: rank-deficient but consistent.
        let mut rng = StdRng::seed_from_u64(15);
        let n = HERM4_DIM;
        let dirs: Vec<DVector<f64>> =
            (0..3).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect();
        let a = DMatrix::from_fn(60, n, |i, j| {
            let d = &dirs[i % 3];
            d[j] * (1.0 + 0.1 * (i as f64))
        });
        let x_true = DVector::from_column_slice(&random_psd_coords(&mut rng));
        let y = &a * &x_true;
        let out = solve(&a, &y, 1, &vec![0.0; n], &PsdLsConfig::default());
        assert!(out.objective < 1e-16, "objective {:e}", out.objective);
        let w = eigvals4(&coords_to_herm(&out.x));
        assert!(w[0] >= -1e-10);
    }

    #[test]
    fn indefinite_unconstrained_optimum_stays_psd_and_above_it() {
        let mut rng = StdRng::seed_from_u64(13);
        let n = HERM4_DIM;
        let a = random_design(&mut rng, 60, n);
        // Target an indefinite matrix: the unconstrained optimum then has a
        // negative eigenvalue, forcing the PSD constraint to bind.
        let mut g = Matrix4::from_fn(|_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        g = (g + g.adjoint()).map(|z| z * 0.5);
        let coords = herm_to_coords(&g);
        let w = eigvals4(&g);
        assert!(w[0] < -1e-3, "construction should be indefinite, eigs {w:?}");
        let y = &a * DVector::from_column_slice(&coords);

        // Unconstrained normal-equations oracle.
        let ata = a.transpose() * &a;
        let aty = a.transpose() * &y;
        let x_unc = ata.clone().lu().solve(&aty).unwrap();
        let f_unc = objective_of(&a, &y, &x_unc);
        assert!(f_unc < 1e-18);

        let out = solve(&a, &y, 1, &vec![0.0; n], &PsdLsConfig::default());
        let eigs = eigvals4(&coords_to_herm(&out.x));
        assert!(eigs[0] >= -1e-8, "solution not PSD: {eigs:?}");
        assert!(out.objective >= f_unc - 1e-15);
        assert!(out.objective > 1e-6, "constraint must bind: {:e}", out.objective);

        // KKT-style check: a projected gradient step cannot improve.
        let x = DVector::from_column_slice(&out.x);
        let grad = (&ata * &x - &aty) * (2.0 / 60.0);
        let mut probe = &x - &grad * 1e-4;
        project_blocks(probe.as_mut_slice());
        let f_probe = objective_of(&a, &y, &probe);
        assert!(f_probe >= out.objective - 1e-10);
    }

    #[test]
    fn warm_start_never_worse() {
        let mut rng = StdRng::seed_from_u64(14);
        let n = HERM4_DIM;
        for _ in 0..10 {
            let a = random_design(&mut rng, 50, n);
            let y = DVector::from_fn(50, |_, _| rng.random_range(0.0..1.0));
            let warm = random_psd_coords(&mut rng);
            let f_warm = objective_of(&a, &y, &DVector::from_column_slice(&warm));
            let out = solve(&a, &y, 1, &warm, &PsdLsConfig { max_iters: 50, ..Default::default() });
            assert!(out.objective <= f_warm + 1e-12);
        }
    }
}
