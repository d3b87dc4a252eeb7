//! Independent reference implementations used as test oracles. Nothing here
//! calls into the solver under test except where a test says so.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_6, PI};

/// Table I values, written out again.
pub const L1: f64 = 4.33;
pub const L2: f64 = 5.77;
pub const L3: f64 = 5.0;
pub const LR: f64 = 2.887;
pub const AX: f64 = -5.0;
pub const AY: f64 = 2.72;
pub const CX0: f64 = 0.0;
/// Rest apex measured from the anchor.
pub const E0: (f64, f64) = (2.5, 8.66);
pub const D_SC: f64 = 3.5;

pub const GRID_STEP: f64 = 0.001;

pub fn e_point(t1: f64, t2: f64) -> (f64, f64) {
    let s = t1 + t2;
    (AX + L1 * t1.cos() + L3 * (s + FRAC_PI_6).cos(), AY + L1 * t1.sin() + L3 * (s + FRAC_PI_6).sin())
}

pub fn c_x(t1: f64, t2: f64) -> f64 {
    AX + L1 * t1.cos() + L2 * (t1 + t2).cos()
}

/// y of the inner strip corner D.
pub fn d_y(t1: f64, t2: f64) -> f64 {
    AY + L1 * t1.sin() + L3 * (t1 + t2 - FRAC_PI_6).sin()
}

pub fn cos_gamma(t1: f64, t2: f64) -> f64 {
    (PI / 3.0 + t1 + t2).cos()
}

/// Image width in pixels at focal length `f`.
pub fn w_img(t1: f64, t2: f64, f: f64) -> f64 {
    f * LR * cos_gamma(t1, t2) / d_y(t1, t2)
}

/// Trig tables over the angle box on a 0.001 rad lattice. The sum angle of
/// two lattice points is again a lattice point, so every term is a lookup.
pub struct Grid {
    n1: usize,
    sin1: Vec<f64>,
    cos1: Vec<f64>,
    // indexed by k where s = -pi + k * step
    sin_s6: Vec<f64>,
    cos_s6: Vec<f64>,
    cos_s: Vec<f64>,
    sin_sm6: Vec<f64>,
}

impl Grid {
    pub fn new() -> Self {
        let n1 = (PI / GRID_STEP).floor() as usize + 1;
        let t = |i: usize| i as f64 * GRID_STEP;
        let ns = 2 * n1;
        let s = |k: usize| -PI + k as f64 * GRID_STEP;
        Self {
            n1,
            sin1: (0..n1).map(|i| t(i).sin()).collect(),
            cos1: (0..n1).map(|i| t(i).cos()).collect(),
            sin_s6: (0..ns).map(|k| (s(k) + FRAC_PI_6).sin()).collect(),
            cos_s6: (0..ns).map(|k| (s(k) + FRAC_PI_6).cos()).collect(),
            cos_s: (0..ns).map(|k| s(k).cos()).collect(),
            sin_sm6: (0..ns).map(|k| (s(k) - FRAC_PI_6).sin()).collect(),
        }
    }

    fn theta(&self, i: usize, k: usize) -> (f64, f64) {
        let t1 = i as f64 * GRID_STEP;
        let s = -PI + k as f64 * GRID_STEP;
        (t1, s - t1)
    }

    /// Every lattice point with `theta1 in [0, pi]`, `theta2 in [-pi, 0]`,
    /// visiting `(i, k)` with `s = theta1 + theta2`.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        // theta2 = s - theta1 in [-pi, 0]  <=>  k in [i + off, i + off + n]
        let off = 0usize;
        for i in 0..self.n1 {
            let k_lo = i + off;
            let k_hi = (i + self.n1 - 1).min(self.cos_s.len() - 1);
            for k in k_lo..=k_hi {
                f(i, k);
            }
        }
    }

    /// Least-squares rest pose: smallest apex misfit among lattice points
    /// within `tol` of the pinned-joint constraint and with `cos(gamma) >= 0`,
    /// refined by pattern search on a penalised objective.
    pub fn rest_pose(&self) -> (f64, f64) {
        let target = (AX + E0.0, AY + E0.1);
        let mut best = (f64::INFINITY, 0, 0);
        self.for_each(|i, k| {
            let cx = AX + L1 * self.cos1[i] + L2 * self.cos_s[k];
            if cx.abs() > 0.01 {
                return;
            }
            let s = -PI + k as f64 * GRID_STEP;
            if s > FRAC_PI_6 + 1e-12 {
                return;
            }
            let ex = AX + L1 * self.cos1[i] + L3 * self.cos_s6[k];
            let ey = AY + L1 * self.sin1[i] + L3 * self.sin_s6[k];
            let m = (ex - target.0).powi(2) + (ey - target.1).powi(2);
            if m < best.0 {
                best = (m, i, k);
            }
        });
        let (t1, t2) = self.theta(best.1, best.2);
        // refine along the pinned-joint curve: for each theta1 the sum angle
        // comes from Newton on C_x, then a nested 1-D scan on the misfit
        let misfit = |t1: f64, s_guess: f64| -> Option<(f64, f64)> {
            let mut s = s_guess;
            for _ in 0..50 {
                let r = AX + L1 * t1.cos() + L2 * s.cos() - CX0;
                let dr = -L2 * s.sin();
                if dr.abs() < 1e-15 {
                    return None;
                }
                s -= r / dr;
            }
            if (AX + L1 * t1.cos() + L2 * s.cos() - CX0).abs() > 1e-12 || s > FRAC_PI_6 + 1e-12 {
                return None;
            }
            let e = e_point(t1, s - t1);
            Some(((e.0 - target.0).powi(2) + (e.1 - target.1).powi(2), s))
        };
        let mut centre = (t1, t1 + t2);
        let mut half = 4.0 * GRID_STEP;
        while half > 1e-12 {
            let n = 200;
            let mut best_here = (f64::INFINITY, centre);
            for i in 0..=n {
                let x = centre.0 - half + 2.0 * half * i as f64 / n as f64;
                if let Some((m, s)) = misfit(x, centre.1) {
                    if m < best_here.0 {
                        best_here = (m, (x, s));
                    }
                }
            }
            centre = best_here.1;
            half *= 0.05;
        }
        (centre.0, centre.1 - centre.0)
    }

    /// All solution clusters of the deformation and pinned-joint constraints
    /// at `d`, each refined by Gauss-Newton.
    pub fn solve_all(&self, rest_ey: f64, d: f64) -> Vec<(f64, f64)> {
        let tol = 0.02;
        let mut hits = Vec::new();
        self.for_each(|i, k| {
            let cx = AX + L1 * self.cos1[i] + L2 * self.cos_s[k] - CX0;
            if cx.abs() > tol {
                return;
            }
            let ey = AY + L1 * self.sin1[i] + L3 * self.sin_s6[k];
            if (rest_ey - ey - d).abs() > tol {
                return;
            }
            hits.push(self.theta(i, k));
        });
        let mut roots: Vec<(f64, f64)> = Vec::new();
        for (t1, t2) in hits {
            if let Some(r) = gauss_newton(rest_ey, d, t1, t2) {
                if !roots.iter().any(|q| (q.0 - r.0).abs() < 1e-6 && (q.1 - r.1).abs() < 1e-6) {
                    roots.push(r);
                }
            }
        }
        roots
    }

    /// Keeps `sin_sm6` alive for callers that want the D corner on the grid.
    pub fn d_y_at(&self, i: usize, k: usize) -> f64 {
        AY + L1 * self.sin1[i] + L3 * self.sin_sm6[k]
    }
}

/// Gauss-Newton with the analytic Jacobian of the two constraints.
pub fn gauss_newton(rest_ey: f64, d: f64, mut t1: f64, mut t2: f64) -> Option<(f64, f64)> {
    for _ in 0..100 {
        let s = t1 + t2;
        let r1 = rest_ey - (AY + L1 * t1.sin() + L3 * (s + FRAC_PI_6).sin()) - d;
        let r2 = AX + L1 * t1.cos() + L2 * s.cos() - CX0;
        if r1.abs() < 1e-13 && r2.abs() < 1e-13 {
            break;
        }
        // d r1 / d t1, d r1 / d t2, d r2 / d t1, d r2 / d t2
        let a = -L1 * t1.cos() - L3 * (s + FRAC_PI_6).cos();
        let b = -L3 * (s + FRAC_PI_6).cos();
        let c = -L1 * t1.sin() - L2 * s.sin();
        let e = -L2 * s.sin();
        let det = a * e - b * c;
        if det.abs() < 1e-14 {
            return None;
        }
        t1 -= (e * r1 - b * r2) / det;
        t2 -= (-c * r1 + a * r2) / det;
    }
    let s = t1 + t2;
    let r1 = rest_ey - (AY + L1 * t1.sin() + L3 * (s + FRAC_PI_6).sin()) - d;
    let r2 = AX + L1 * t1.cos() + L2 * s.cos() - CX0;
    let in_box = (0.0..=PI).contains(&t1) && (-PI..=0.0).contains(&t2);
    (r1.abs() < 1e-10 && r2.abs() < 1e-10 && in_box).then_some((t1, t2))
}

pub fn rest_ey(rest: (f64, f64)) -> f64 {
    e_point(rest.0, rest.1).1
}

/// Branch-followed oracle solutions at increasing `ds` (must start at 0).
pub fn follow(grid: &Grid, ds: &[f64]) -> Vec<(f64, f64)> {
    let rest = grid.rest_pose();
    let ey = rest_ey(rest);
    let mut prev = rest;
    let mut out = Vec::with_capacity(ds.len());
    for &d in ds {
        let roots = grid.solve_all(ey, d);
        let next = roots
            .into_iter()
            .min_by(|a, b| {
                let da = (a.0 - prev.0).hypot(a.1 - prev.1);
                let db = (b.0 - prev.0).hypot(b.1 - prev.1);
                da.total_cmp(&db)
            })
            .expect("oracle found no root");
        out.push(next);
        prev = next;
    }
    out
}

/// Press curve in closed form for the default anchors.
pub fn press_force(d: f64) -> f64 {
    if d <= 0.0 {
        0.0
    } else if d <= 1.9 {
        let t = d / 1.9;
        1.43 * (1.5 * t - 0.5 * t * t * t)
    } else if d <= 3.3 {
        let t = (d - 1.9) / 1.4;
        1.43 - 0.46 * (3.0 * t * t - 2.0 * t * t * t)
    } else if d <= 3.5 {
        let t = (d - 3.3) / 0.2;
        0.97 + 1.03 * t * t
    } else {
        2.0 + 10.3 * (d - 3.5)
    }
}

/// Every equilibrium `(d_left, d_right)` of the chain at `overlap`, by a scan
/// of `d_left` at 1e-4 mm: `d_right` follows from closure and a sign change
/// of `F(d_right) - F(d_left)` marks a root.
pub fn scan_equilibria(overlap: f64, k: f64) -> Vec<(f64, f64)> {
    let h = 1e-4;
    let g = |dl: f64| -> Option<(f64, f64)> {
        let dr = overlap - dl - press_force(dl) / k;
        (dr >= 0.0).then(|| (press_force(dr) - press_force(dl), dr))
    };
    let n = (overlap / h).ceil() as usize;
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=n {
        let dl = (i as f64 * h).min(overlap);
        let cur = g(dl);
        if let (Some((ga, _)), Some((gb, _))) = (prev.map(|p| (p.0, p.1)), cur) {
            let a = dl - h;
            if ga == 0.0 {
                out.push((a, g(a).unwrap().1));
            } else if (ga < 0.0) != (gb < 0.0) && gb != 0.0 {
                let x = a + h * ga / (ga - gb);
                out.push((x, g(x).map_or(0.0, |v| v.1)));
            }
        }
        prev = cur.map(|c| (c.0, dl));
    }
    out
}

/// Symmetric deformation `d` with `2 d + F(d) / k = overlap`, by bisection;
/// valid when the left side is increasing in `d`.
pub fn symmetric_deformation(overlap: f64, k: f64) -> f64 {
    if overlap <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, overlap);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if 2.0 * m + press_force(m) / k < overlap {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}
