//! Powell's conjugate-direction minimization with a bracketed Brent line
//! search. Derivative-free; used for the angle step of the alternating
//! path-tracing optimization, where the objective couples angles through
//! steering-vector trigonometry.

/// Line-search and sweep budget for one Powell call.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PowellConfig {
    /// Relative tolerance of each Brent line search.
    pub line_tol: f64,
    /// Iteration cap per line search.
    pub max_line_iters: usize,
    /// Full direction-set sweeps per call.
    pub max_sweeps: usize,
    /// Convergence: relative objective decrease over a full sweep.
    pub ftol: f64,
    /// Initial bracketing step along each direction.
    pub initial_step: f64,
    /// Probe a geometric step ladder before bracketing. Good for escaping
    /// the flat regions of a multimodal objective; turn off for local
    /// refinement, where long jumps destroy structure the caller wants kept.
    pub ladder: bool,
}

impl Default for PowellConfig {
    fn default() -> Self {
        Self {
            line_tol: 1e-4,
            max_line_iters: 40,
            max_sweeps: 3,
            ftol: 1e-10,
            initial_step: 0.25,
            ladder: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowellOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Line searches that failed to bracket a minimum within budget.
    pub line_search_failures: usize,
}

const GOLD: f64 = 1.618_034;
const CGOLD: f64 = 0.381_966_0;
const GLIMIT: f64 = 100.0;
const TINY: f64 = 1e-20;
const ZEPS: f64 = 1e-18;

/// Brackets a minimum of `f` starting from `(a, b)`: returns
/// `(a, b, c, fa, fb, fc)` with `fb <= fa`, `fb <= fc`, or `None` if the
/// expansion budget runs out (function decreasing without bound along the
/// ray, or non-finite values).
fn bracket(
    f: &mut impl FnMut(f64) -> f64,
    mut ax: f64,
    mut bx: f64,
) -> Option<(f64, f64, f64, f64, f64, f64)> {
    let mut fa = f(ax);
    let mut fb = f(bx);
    if fb > fa {
        std::mem::swap(&mut ax, &mut bx);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut cx = bx + GOLD * (bx - ax);
    let mut fc = f(cx);
    let mut evals = 0;
    while fb > fc {
        evals += 1;
        if evals > 50 || !fc.is_finite() {
            return None;
        }
        let r = (bx - ax) * (fb - fc);
        let q = (bx - cx) * (fb - fa);
        let denom = 2.0 * (q - r).abs().max(TINY) * (q - r).signum();
        let mut u = bx - ((bx - cx) * q - (bx - ax) * r) / denom;
        let ulim = bx + GLIMIT * (cx - bx);
        let mut fu;
        if (bx - u) * (u - cx) > 0.0 {
            // Parabolic u between b and c.
            fu = f(u);
            if fu < fc {
                return Some((bx, u, cx, fb, fu, fc));
            } else if fu > fb {
                return Some((ax, bx, u, fa, fb, fu));
            }
            u = cx + GOLD * (cx - bx);
            fu = f(u);
        } else if (cx - u) * (u - ulim) > 0.0 {
            fu = f(u);
            if fu < fc {
                bx = cx;
                cx = u;
                u = cx + GOLD * (cx - bx);
                fb = fc;
                fc = fu;
                fu = f(u);
            }
        } else if (u - ulim) * (ulim - cx) >= 0.0 {
            u = ulim;
            fu = f(u);
        } else {
            u = cx + GOLD * (cx - bx);
            fu = f(u);
        }
        ax = bx;
        bx = cx;
        cx = u;
        fa = fb;
        fb = fc;
        fc = fu;
    }
    Some((ax, bx, cx, fa, fb, fc))
}

/// Brent's method on a bracketed minimum. Returns `(x_min, f_min)`.
fn brent(
    f: &mut impl FnMut(f64) -> f64,
    ax: f64,
    bx: f64,
    cx: f64,
    fbx: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let mut a = ax.min(cx);
    let mut b = ax.max(cx);
    let (mut x, mut w, mut v) = (bx, bx, bx);
    let (mut fx, mut fw, mut fv) = (fbx, fbx, fbx);
    let mut d = 0.0f64;
    let mut e = 0.0f64;

    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + ZEPS;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                // Parabolic step accepted.
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            w = x;
            x = u;
            fv = fw;
            fw = fx;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                w = u;
                fv = fw;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Minimizes `f` along `x + t * dir`; updates `x` and returns
/// `(f_min, bracketing_failed)`.
fn line_minimize(
    f: &mut impl FnMut(&[f64]) -> f64,
    x: &mut [f64],
    dir: &[f64],
    f0: f64,
    cfg: &PowellConfig,
    scratch: &mut Vec<f64>,
) -> (f64, bool) {
    let outcome = {
        let x_ref: &[f64] = x;
        let mut g = |t: f64| {
            scratch.clear();
            scratch.extend(x_ref.iter().zip(dir.iter()).map(|(xi, di)| xi + t * di));
            f(scratch)
        };

        // Coarse probe ladder first: the objective is multimodal along angle
        // directions (beam lobes), so seed the bracket from the best of a
        // geometric step ladder instead of trusting local expansion alone.
        let ladder_rungs = if cfg.ladder { 4 } else { 1 };
        let mut probes = vec![0.0f64];
        let mut s = cfg.initial_step;
        for _ in 0..ladder_rungs {
            probes.push(s);
            probes.push(-s);
            s *= 2.5;
        }
        probes.sort_by(|a, b| a.total_cmp(b));
        let values: Vec<f64> = probes.iter().map(|&t| if t == 0.0 { f0 } else { g(t) }).collect();
        let best = values
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(i, _)| i)
            .unwrap();

        let bracketed = if best > 0 && best + 1 < probes.len() {
            // Interior ladder minimum: a valid bracket already.
            Some((probes[best - 1], probes[best], probes[best + 1], values[best]))
        } else {
            // Edge of the ladder: expand outward from there.
            let start = probes[best];
            let step = if best == 0 { -cfg.initial_step } else { cfg.initial_step };
            bracket(&mut g, start, start + step).map(|(a, b, c, _fa, fb, _fc)| (a, b, c, fb))
        };
        bracketed.map(|(a, b, c, fb)| brent(&mut g, a, b, c, fb, cfg.line_tol, cfg.max_line_iters))
    };
    match outcome {
        Some((tmin, fmin)) if fmin <= f0 => {
            for (xi, di) in x.iter_mut().zip(dir.iter()) {
                *xi += tmin * di;
            }
            (fmin, false)
        }
        Some(_) => (f0, false),
        None => (f0, true),
    }
}

/// Classic Powell: coordinate-direction initialization, per-sweep direction
/// replacement by the sweep displacement when the standard acceptance test
/// holds, convergence on relative objective decrease over a full sweep.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    cfg: &PowellConfig,
) -> PowellOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 {
        return PowellOutcome { x, f: fx, sweeps: 0, converged: true, line_search_failures: 0 };
    }
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect();
    let mut failures = 0;
    let mut scratch = Vec::with_capacity(n);
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let f_start = fx;
        let x_start = x.clone();
        let mut biggest_drop = 0.0;
        let mut biggest_idx = 0;

        for (i, dir) in dirs.iter().enumerate() {
            let f_before = fx;
            let (f_after, failed) = line_minimize(&mut f, &mut x, dir, fx, cfg, &mut scratch);
            if failed {
                failures += 1;
            }
            fx = f_after;
            if f_before - f_after > biggest_drop {
                biggest_drop = f_before - f_after;
                biggest_idx = i;
            }
        }

        if 2.0 * (f_start - fx) <= cfg.ftol * (f_start.abs() + fx.abs()) + ZEPS {
            converged = true;
            break;
        }

        // Extrapolated point 2 x_N - x_0 and the direction-replacement test.
        let extrapolated: Vec<f64> =
            x.iter().zip(x_start.iter()).map(|(xn, x0)| 2.0 * xn - x0).collect();
        let f_e = f(&extrapolated);
        if f_e < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + f_e) * (f_start - fx - biggest_drop).powi(2)
                - biggest_drop * (f_start - f_e).powi(2);
            if t < 0.0 {
                let new_dir: Vec<f64> =
                    x.iter().zip(x_start.iter()).map(|(xn, x0)| xn - x0).collect();
                let (f_after, failed) = line_minimize(&mut f, &mut x, &new_dir, fx, cfg, &mut scratch);
                if failed {
                    failures += 1;
                }
                fx = f_after;
                dirs.remove(biggest_idx);
                dirs.push(new_dir);
            }
        }
    }

    PowellOutcome { x, f: fx, sweeps, converged, line_search_failures: failures }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + 3.0;
        let out = minimize(f, &[0.0, 0.0], &PowellConfig::default());
        assert!((out.x[0] - 1.5).abs() < 1e-5, "x0 = {}", out.x[0]);
        assert!((out.x[1] + 0.5).abs() < 1e-5, "x1 = {}", out.x[1]);
        assert!((out.f - 3.0).abs() < 1e-9);
    }

    #[test]
    fn minimizes_rosenbrock_with_enough_sweeps() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = PowellConfig { max_sweeps: 200, line_tol: 1e-8, ..PowellConfig::default() };
        let out = minimize(f, &[-1.2, 1.0], &cfg);
        assert!(out.f < 1e-8, "f = {:e} at {:?}", out.f, out.x);
    }

    #[test]
    fn fixed_point_stays_put() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let out = minimize(f, &[0.0, 0.0, 0.0], &PowellConfig::default());
        assert!(out.f <= 1e-12);
        assert!(out.converged);
    }

    #[test]
    fn never_increases_objective() {
        // A bumpy but bounded function from several random starts.
        let f = |x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2 + (3.0 * x[0]).sin() * (2.0 * x[1]).cos()
        };
        for seed in 0..20 {
            let s = seed as f64;
            let x0 = [s.sin() * 3.0, s.cos() * 3.0];
            let f0 = f(&x0);
            let out = minimize(f, &x0, &PowellConfig::default());
            assert!(out.f <= f0 + 1e-12, "seed {seed}: {} > {}", out.f, f0);
        }
    }
}
