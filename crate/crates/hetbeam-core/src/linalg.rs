//! Small dense linear algebra for complex Hermitian matrices.
//!
//! The path matrices are 4x4 complex Hermitian, so everything here is sized
//! for tiny problems: a cyclic Jacobi eigensolver, projection onto the PSD
//! cone, a clamped Cholesky for PSD (possibly singular) matrices, and an
//! isometric real parameterization of the Hermitian space used by the
//! matrix-step least squares.

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Number of real coordinates of an n x n Hermitian matrix.
pub const HERM4_DIM: usize = 16;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Off-diagonal index pairs (i < j) in the order used by the coordinate map.
pub const HERM4_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Isometric coordinates of a Hermitian 4x4 matrix.
///
/// Layout: 4 diagonal entries, then `sqrt(2) * (Re, Im)` of the upper
/// triangle in [`HERM4_PAIRS`] order. The map satisfies
/// `||A||_F = ||coords||_2` and `tr(A B) = <coords(A), coords(B)>` for
/// Hermitian `A`, `B`, which is what makes the PSD-constrained least squares
/// exact in these coordinates.
pub fn herm_to_coords(m: &Matrix4<C64>) -> [f64; HERM4_DIM] {
    let mut x = [0.0; HERM4_DIM];
    for d in 0..4 {
        x[d] = m[(d, d)].re;
    }
    for (k, &(i, j)) in HERM4_PAIRS.iter().enumerate() {
        x[4 + 2 * k] = SQRT2 * m[(i, j)].re;
        x[4 + 2 * k + 1] = SQRT2 * m[(i, j)].im;
    }
    x
}

/// Inverse of [`herm_to_coords`].
pub fn coords_to_herm(x: &[f64]) -> Matrix4<C64> {
    assert_eq!(x.len(), HERM4_DIM);
    let mut m = Matrix4::from_element(C64::new(0.0, 0.0));
    for d in 0..4 {
        m[(d, d)] = C64::new(x[d], 0.0);
    }
    for (k, &(i, j)) in HERM4_PAIRS.iter().enumerate() {
        let v = C64::new(x[4 + 2 * k] / SQRT2, x[4 + 2 * k + 1] / SQRT2);
        m[(i, j)] = v;
        m[(j, i)] = v.conj();
    }
    m
}

/// `(A + A*) / 2`.
pub fn hermitian_part(m: &Matrix4<C64>) -> Matrix4<C64> {
    (m + m.adjoint()).map(|z| z * 0.5)
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &Matrix4<C64>) -> f64 {
    let d = m - m.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with matching unit eigenvectors in
/// the columns of the second output: `a = V diag(w) V*`. Input is symmetrized
/// first; the strictly upper triangle is taken as authoritative together with
/// its conjugate.
pub fn hermitian_eigen(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    let mut m = (a + a.adjoint()).map(|z| z * 0.5);
    let mut v = DMatrix::<C64>::identity(n, n);

    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-15 * scale;

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].norm());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let b = apq.norm();
                if b <= tol * 1e-2 {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                // Phase that makes the 2x2 block real, then a classic
                // symmetric Jacobi rotation on that block.
                let phase = apq / b;
                let tau = (aqq - app) / (2.0 * b);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Unitary acting on columns (p, q):
                //   col_p' = c*col_p - s*conj(phase)*col_q
                //   col_q' = s*phase*col_p + c*col_q
                let sp = phase.conj() * s;
                for k in 0..n {
                    let mk_p = m[(k, p)];
                    let mk_q = m[(k, q)];
                    m[(k, p)] = mk_p * c - mk_q * sp;
                    m[(k, q)] = mk_p * sp.conj() + mk_q * c;
                }
                for k in 0..n {
                    let mp_k = m[(p, k)];
                    let mq_k = m[(q, k)];
                    m[(p, k)] = mp_k * c - mq_k * sp.conj();
                    m[(q, k)] = mp_k * sp + mq_k * c;
                }
                for k in 0..n {
                    let vk_p = v[(k, p)];
                    let vk_q = v[(k, q)];
                    v[(k, p)] = vk_p * c - vk_q * sp;
                    v[(k, q)] = vk_p * sp.conj() + vk_q * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eigs: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| eigs[i].total_cmp(&eigs[j]));
    let w: Vec<f64> = order.iter().map(|&i| eigs[i]).collect();
    let mut vs = DMatrix::<C64>::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vs.set_column(new, &v.column(old));
    }
    (w, vs)
}

/// Eigenvalues of a Hermitian 4x4 matrix, ascending.
pub fn eigvals4(m: &Matrix4<C64>) -> [f64; 4] {
    let dm = DMatrix::from_fn(4, 4, |i, j| m[(i, j)]);
    let (w, _) = hermitian_eigen(&dm);
    [w[0], w[1], w[2], w[3]]
}

/// Projects a Hermitian 4x4 matrix onto the PSD cone (Frobenius-nearest):
/// negative eigenvalues are clipped to zero.
pub fn psd_project4(m: &Matrix4<C64>) -> Matrix4<C64> {
    let dm = DMatrix::from_fn(4, 4, |i, j| m[(i, j)]);
    let (w, v) = hermitian_eigen(&dm);
    let mut out = Matrix4::from_element(C64::new(0.0, 0.0));
    for (k, &wk) in w.iter().enumerate() {
        if wk <= 0.0 {
            continue;
        }
        let col = v.column(k);
        for i in 0..4 {
            for j in 0..4 {
                out[(i, j)] += col[i] * col[j].conj() * wk;
            }
        }
    }
    out
}

/// Lower-triangular `L` with `L L* ≈ m` for a PSD (possibly singular) matrix.
///
/// Pivots that fall at or below zero are clamped: the diagonal entry becomes
/// zero and the remainder of that column is zeroed, which reproduces exactly
/// singular inputs and degrades gracefully on slightly indefinite ones.
pub fn psd_cholesky4(m: &Matrix4<C64>) -> Matrix4<C64> {
    let a = hermitian_part(m);
    let mut l = Matrix4::from_element(C64::new(0.0, 0.0));
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = 1e-14 * scale.max(1e-300);
    for j in 0..4 {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= tol {
            // Singular direction: zero pivot, column contributes nothing.
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..4 {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(rng: &mut StdRng) -> Matrix4<C64> {
        let g = Matrix4::from_fn(|_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        hermitian_part(&g)
    }

    fn random_psd(rng: &mut StdRng) -> Matrix4<C64> {
        let g = Matrix4::from_fn(|_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        g * g.adjoint()
    }

    fn max_abs(m: &Matrix4<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn coords_round_trip_is_isometric() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_hermitian(&mut rng);
            let x = herm_to_coords(&a);
            let back = coords_to_herm(&x);
            assert!(max_abs(&(a - back)) < 1e-14);
            let fro = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((fro - xn).abs() < 1e-12);
        }
    }

    #[test]
    fn coords_inner_product_matches_trace() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_hermitian(&mut rng);
            let b = random_hermitian(&mut rng);
            let tr = (a * b).trace();
            assert!(tr.im.abs() < 1e-12);
            let dot: f64 = herm_to_coords(&a)
                .iter()
                .zip(herm_to_coords(&b).iter())
                .map(|(u, v)| u * v)
                .sum();
            assert!((tr.re - dot).abs() < 1e-12, "tr {} vs dot {}", tr.re, dot);
        }
    }

    #[test]
    fn eigen_reconstructs_hermitian_matrix() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..40 {
            let a = random_hermitian(&mut rng);
            let dm = DMatrix::from_fn(4, 4, |i, j| a[(i, j)]);
            let (w, v) = hermitian_eigen(&dm);
            // V unitary
            let vv = v.adjoint() * &v;
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((vv[(i, j)] - C64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
            // A = V diag(w) V*
            let mut rec = DMatrix::<C64>::zeros(4, 4);
            for k in 0..4 {
                let col = v.column(k);
                for i in 0..4 {
                    for j in 0..4 {
                        rec[(i, j)] += col[i] * col[j].conj() * w[k];
                    }
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    assert!((rec[(i, j)] - a[(i, j)]).norm() < 1e-12);
                }
            }
            assert!(w.windows(2).all(|p| p[0] <= p[1]), "sorted ascending");
        }
    }

    #[test]
    fn eigen_of_diagonal_is_exact() {
        let mut m = Matrix4::from_element(C64::new(0.0, 0.0));
        for (i, val) in [3.0, -1.0, 0.5, 7.0].iter().enumerate() {
            m[(i, i)] = C64::new(*val, 0.0);
        }
        let w = eigvals4(&m);
        assert_eq!(w, [-1.0, 0.5, 3.0, 7.0]);
    }

    #[test]
    fn psd_projection_fixes_psd_and_clips_negative() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..30 {
            let p = random_psd(&mut rng);
            let proj = psd_project4(&p);
            assert!(max_abs(&(p - proj)) < 1e-10, "projection of PSD is identity");

            let h = random_hermitian(&mut rng);
            let ph = psd_project4(&h);
            let w = eigvals4(&ph);
            assert!(w[0] >= -1e-12, "projected min eig {}", w[0]);
            // Projection keeps the positive part: distance equals norm of the
            // clipped negative part.
            let wh = eigvals4(&h);
            let neg: f64 = wh.iter().filter(|&&x| x < 0.0).map(|x| x * x).sum::<f64>().sqrt();
            let diff = h - ph;
            let dn = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((dn - neg).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_reconstructs_psd_including_singular() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..30 {
            let p = random_psd(&mut rng);
            let l = psd_cholesky4(&p);
            assert!(max_abs(&(l * l.adjoint() - p)) < 1e-10);
        }
        // Rank-1 (singular) case.
        let v = nalgebra::Vector4::new(
            C64::new(1.0, 0.5),
            C64::new(-0.3, 0.2),
            C64::new(0.0, 0.0),
            C64::new(0.7, -1.1),
        );
        let p = v * v.adjoint();
        let l = psd_cholesky4(&p);
        assert!(max_abs(&(l * l.adjoint() - p)) < 1e-12);
        // Strictly lower triangular layout.
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(l[(i, j)], C64::new(0.0, 0.0));
            }
        }
    }
}
