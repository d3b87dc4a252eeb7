//! Planar linkage of one CAVS half.
//!
//! The pillar link `l1` hangs off the fixed anchor A at angle `theta1` from
//! the +x axis. The variable-surface link `l2` leaves the side joint B at
//! `theta1 + theta2` and ends in the central joint C, whose x coordinate is
//! pinned. The red-strip corners E (outer) and D (inner) sit on links of
//! length `l3` at `+pi/6` and `-pi/6` from the surface direction. Pushing the
//! apex E down by `d` folds the linkage; the configuration `(theta1, theta2)`
//! for a given `d` is found by branch-following Newton continuation.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_6, PI};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = Vector2<f64>;

/// Residual tolerance of the joint solver (mm).
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Newton iteration cap per continuation step.
pub const MAX_NEWTON_ITERATIONS: usize = 200;
/// Central-difference step for the numerical Jacobian (rad).
pub const JACOBIAN_STEP: f64 = 1e-7;
/// Largest deformation increment taken by one continuation step (mm).
const CONTINUATION_STEP: f64 = 0.05;
/// Endpoint residual accepted when fitting the rest configuration (mm).
pub const REST_FIT_TOLERANCE: f64 = 0.1;

/// `cos(gamma)` this far below zero still counts as edge-on; `pi/3 + pi/6`
/// does not round to exactly `pi/2`.
const EDGE_ON_TOLERANCE: f64 = 1e-12;

/// Admissible joint-angle box: `theta1` in `[0, pi]`, `theta2` in `[-pi, 0]`.
pub const THETA1_RANGE: (f64, f64) = (0.0, PI);
pub const THETA2_RANGE: (f64, f64) = (-PI, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry infeasible: {0}")]
    GeometryInfeasible(String),
    #[error("deformation {d} mm outside admissible range [0, {d_max}] mm")]
    OutOfRange { d: f64, d_max: f64 },
    #[error("joint solver failed at d = {d} mm: {reason}")]
    SolverFailure { d: f64, reason: String },
}

/// How the y coordinate of the inner strip corner D is evaluated.
///
/// `Geometric` is the y coordinate of D in the same frame as E and C. `Cosine`
/// evaluates the printed closed form `l1 cos(theta1) + l3 cos(theta1 + theta2 - pi/6) + p_Ay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthForm {
    #[default]
    Geometric,
    Cosine,
}

/// Link lengths and reference points of the sensible CAVS (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavsGeometry {
    /// Pillar link A-B.
    pub l1: f64,
    /// Variable-surface link B-C.
    pub l2: f64,
    /// Red-strip links B-D and B-E.
    pub l3: f64,
    /// Extent of the red-coloured strip seen by the camera.
    pub l_r: f64,
    /// Fixed pillar anchor A.
    pub p_a: [f64; 2],
    /// Pinned x coordinate of the central joint C.
    pub p_cx0: f64,
    /// Apex E in the rest configuration.
    pub p_e0: [f64; 2],
    /// Deformation at which the surface-contact state is reached.
    pub d_sc: f64,
    pub depth_form: DepthForm,
}

impl Default for CavsGeometry {
    fn default() -> Self {
        Self {
            l1: 4.33,
            l2: 5.77,
            l3: 5.0,
            l_r: 2.887,
            p_a: [-5.0, 2.72],
            p_cx0: 0.0,
            p_e0: [2.5, 8.66],
            d_sc: 3.5,
            depth_form: DepthForm::Geometric,
        }
    }
}

impl CavsGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let finite = [
            self.l1,
            self.l2,
            self.l3,
            self.l_r,
            self.p_a[0],
            self.p_a[1],
            self.p_cx0,
            self.p_e0[0],
            self.p_e0[1],
            self.d_sc,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(KinematicsError::InvalidGeometry("non-finite value".into()));
        }
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("l3", self.l3), ("l_r", self.l_r)] {
            if v <= 0.0 {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "{name} must be positive (degenerate link), got {v}"
                )));
            }
        }
        if self.d_sc <= 0.0 {
            return Err(KinematicsError::InvalidGeometry(format!("d_sc must be positive, got {}", self.d_sc)));
        }
        Ok(())
    }

    fn anchor(&self) -> Point2 {
        Point2::new(self.p_a[0], self.p_a[1])
    }
}

/// Reading of the tabulated rest apex `p_e0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointFrame {
    /// `p_e0` is an absolute position.
    Absolute,
    /// `p_e0` is measured from the anchor A.
    AnchorRelative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convention {
    pub frame: EndpointFrame,
    /// The x component of `p_e0` is negated.
    pub mirrored: bool,
}

impl Convention {
    /// Candidates in the order they are tried during calibration.
    pub const CANDIDATES: [Convention; 4] = [
        Convention { frame: EndpointFrame::Absolute, mirrored: false },
        Convention { frame: EndpointFrame::Absolute, mirrored: true },
        Convention { frame: EndpointFrame::AnchorRelative, mirrored: false },
        Convention { frame: EndpointFrame::AnchorRelative, mirrored: true },
    ];

    fn target(&self, geom: &CavsGeometry) -> Point2 {
        let sign = if self.mirrored { -1.0 } else { 1.0 };
        let e0 = Point2::new(sign * geom.p_e0[0], geom.p_e0[1]);
        match self.frame {
            EndpointFrame::Absolute => e0,
            EndpointFrame::AnchorRelative => e0 + geom.anchor(),
        }
    }
}

/// One solved configuration of the linkage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub theta1: f64,
    pub theta2: f64,
    /// Deformation, the downward displacement of E from rest.
    pub d: f64,
    pub p_b: Point2,
    pub p_c: Point2,
    pub p_d: Point2,
    pub p_e: Point2,
    /// Inclination of the red strip, `pi/3 + theta1 + theta2`.
    pub gamma: f64,
}

impl JointState {
    /// y coordinate of D: distance of the strip from the camera plane.
    pub fn depth(&self) -> f64 {
        self.p_d.y
    }
}

/// Width of the red strip projected on the x axis, `l_r cos(gamma)`.
pub fn projected_width_wx(state: &JointState, geom: &CavsGeometry) -> f64 {
    geom.l_r * visible_cos(state.gamma)
}

/// `cos(gamma)` with edge-on rounding noise clamped to zero.
pub fn visible_cos(gamma: f64) -> f64 {
    let c = gamma.cos();
    if (-EDGE_ON_TOLERANCE..0.0).contains(&c) {
        0.0
    } else {
        c
    }
}

fn in_box(theta1: f64, theta2: f64) -> bool {
    let eps = 1e-12;
    theta1 >= THETA1_RANGE.0 - eps
        && theta1 <= THETA1_RANGE.1 + eps
        && theta2 >= THETA2_RANGE.0 - eps
        && theta2 <= THETA2_RANGE.1 + eps
}

/// A geometry together with its calibrated angle convention and rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Linkage {
    geom: CavsGeometry,
    convention: Convention,
    rest_theta: (f64, f64),
    rest_ey: f64,
    rest_fit_residual: f64,
    d_max: f64,
}

impl Linkage {
    /// Validates the geometry and calibrates the angle convention: each
    /// candidate reading of `p_e0` is fitted, and the first whose fit is within
    /// [`REST_FIT_TOLERANCE`] and whose `cos(gamma) / p_Dy` grows strictly on
    /// `[0, d_sc]` is kept.
    pub fn new(geom: CavsGeometry) -> Result<Self, KinematicsError> {
        geom.validate()?;
        let mut reasons = Vec::new();
        for conv in Convention::CANDIDATES {
            match Self::with_convention(geom.clone(), conv) {
                Ok(linkage) => match linkage.check_sensing_shape() {
                    Ok(()) => return Ok(linkage),
                    Err(e) => reasons.push(format!("{conv:?}: {e}")),
                },
                Err(e) => reasons.push(format!("{conv:?}: {e}")),
            }
        }
        Err(KinematicsError::GeometryInfeasible(format!("no admissible angle convention ({})", reasons.join("; "))))
    }

    /// Builds the linkage under a fixed convention without the shape check.
    pub fn with_convention(geom: CavsGeometry, convention: Convention) -> Result<Self, KinematicsError> {
        geom.validate()?;
        let target = convention.target(&geom);
        let (s, residual) = fit_rest_sum_angle(&geom, target).ok_or_else(|| {
            KinematicsError::GeometryInfeasible("pinned central joint unreachable with cos(gamma) >= 0".into())
        })?;
        if residual > REST_FIT_TOLERANCE {
            return Err(KinematicsError::GeometryInfeasible(format!(
                "rest apex misfit {residual:.4} mm exceeds {REST_FIT_TOLERANCE} mm"
            )));
        }
        let theta1 = theta1_on_branch(&geom, s).expect("fitted sum angle is feasible");
        let mut linkage = Self {
            geom,
            convention,
            rest_theta: (theta1, s - theta1),
            rest_ey: 0.0,
            rest_fit_residual: residual,
            d_max: 0.0,
        };
        linkage.rest_ey = linkage.apex(theta1, s - theta1).y;
        linkage.d_max = linkage.compute_d_max()?;
        if linkage.d_max < linkage.geom.d_sc {
            return Err(KinematicsError::GeometryInfeasible(format!(
                "largest deformation {:.4} mm is below d_sc = {} mm",
                linkage.d_max, linkage.geom.d_sc
            )));
        }
        Ok(linkage)
    }

    pub fn geometry(&self) -> &CavsGeometry {
        &self.geom
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    /// Euclidean misfit of the rest apex against `p_e0` (mm).
    pub fn rest_fit_residual(&self) -> f64 {
        self.rest_fit_residual
    }

    pub fn rest_state(&self) -> JointState {
        self.forward_points(self.rest_theta.0, self.rest_theta.1)
    }

    /// `(0, d_max)`: the deformation range over which the followed branch
    /// stays inside the angle box with `cos(gamma) >= 0`.
    pub fn deformation_limits(&self) -> (f64, f64) {
        (0.0, self.d_max)
    }

    fn apex(&self, theta1: f64, theta2: f64) -> Point2 {
        let g = &self.geom;
        let s = theta1 + theta2;
        let p_b = g.anchor() + Point2::new(g.l1 * theta1.cos(), g.l1 * theta1.sin());
        p_b + Point2::new(g.l3 * (s + FRAC_PI_6).cos(), g.l3 * (s + FRAC_PI_6).sin())
    }

    pub fn forward_points(&self, theta1: f64, theta2: f64) -> JointState {
        let g = &self.geom;
        let s = theta1 + theta2;
        let p_b = g.anchor() + Point2::new(g.l1 * theta1.cos(), g.l1 * theta1.sin());
        let p_c = p_b + Point2::new(g.l2 * s.cos(), g.l2 * s.sin());
        let p_e = p_b + Point2::new(g.l3 * (s + FRAC_PI_6).cos(), g.l3 * (s + FRAC_PI_6).sin());
        let d_x = p_b.x + g.l3 * (s - FRAC_PI_6).cos();
        let d_y = match g.depth_form {
            DepthForm::Geometric => p_b.y + g.l3 * (s - FRAC_PI_6).sin(),
            DepthForm::Cosine => g.l1 * theta1.cos() + g.l3 * (s - FRAC_PI_6).cos() + g.p_a[1],
        };
        JointState {
            theta1,
            theta2,
            d: self.rest_ey - p_e.y,
            p_b,
            p_c,
            p_d: Point2::new(d_x, d_y),
            p_e,
            gamma: FRAC_PI_3 + s,
        }
    }

    /// Residuals of the deformation and pinned-joint constraints at `theta`.
    pub fn residuals(&self, theta1: f64, theta2: f64, d: f64) -> [f64; 2] {
        let g = &self.geom;
        let s = theta1 + theta2;
        let ey = self.apex(theta1, theta2).y;
        let cx = g.p_a[0] + g.l1 * theta1.cos() + g.l2 * s.cos();
        [self.rest_ey - ey - d, cx - g.p_cx0]
    }

    /// Configuration for deformation `d`, followed continuously from rest.
    pub fn solve_joint_angles(&self, d: f64) -> Result<JointState, KinematicsError> {
        self.solve_from(&self.rest_state(), d)
    }

    /// Configuration for deformation `d`, followed continuously from `start`.
    pub fn solve_from(&self, start: &JointState, d: f64) -> Result<JointState, KinematicsError> {
        if !d.is_finite() || d < 0.0 || d > self.d_max {
            return Err(KinematicsError::OutOfRange { d, d_max: self.d_max });
        }
        let mut theta = Vector2::new(start.theta1, start.theta2);
        let mut at = start.d;
        let mut step = CONTINUATION_STEP;
        while (d - at).abs() > 0.0 {
            let remaining = d - at;
            let next = if remaining.abs() <= step { d } else { at + step * remaining.signum() };
            match self.newton(theta, next) {
                Ok(t) => {
                    theta = t;
                    at = next;
                    step = (step * 2.0).min(CONTINUATION_STEP);
                }
                Err(reason) => {
                    step *= 0.5;
                    if step < 1e-9 {
                        return Err(KinematicsError::SolverFailure { d: next, reason });
                    }
                }
            }
        }
        Ok(self.forward_points(theta[0], theta[1]))
    }

    /// Damped Newton on the 2x2 constraint system with a central-difference
    /// Jacobian. Fails if the iterate leaves the angle box.
    fn newton(&self, mut theta: Vector2<f64>, d: f64) -> Result<Vector2<f64>, String> {
        let res = |t: &Vector2<f64>| Vector2::from(self.residuals(t[0], t[1], d));
        let mut r = res(&theta);
        for _ in 0..MAX_NEWTON_ITERATIONS {
            let norm = r.amax();
            if norm < 1e-12 {
                return Ok(theta);
            }
            let mut jac = Matrix2::zeros();
            for k in 0..2 {
                let mut hi = theta;
                let mut lo = theta;
                hi[k] += JACOBIAN_STEP;
                lo[k] -= JACOBIAN_STEP;
                let col = (res(&hi) - res(&lo)) / (2.0 * JACOBIAN_STEP);
                jac.set_column(k, &col);
            }
            let delta = jac.lu().solve(&(-r)).ok_or("singular constraint Jacobian")?;
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = theta + delta * lambda;
                let rc = res(&cand);
                if rc.amax() < norm {
                    theta = cand;
                    r = rc;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !in_box(theta[0], theta[1]) {
                return Err(format!("left the angle box at ({:.6}, {:.6})", theta[0], theta[1]));
            }
            if !improved {
                if norm < SOLVER_TOLERANCE {
                    return Ok(theta);
                }
                return Err(format!("stalled with residual {norm:e}"));
            }
        }
        if r.amax() < SOLVER_TOLERANCE {
            Ok(theta)
        } else {
            Err(format!("no convergence in {MAX_NEWTON_ITERATIONS} iterations"))
        }
    }

    /// Deformation along the branch parameterised by the sum angle `s`.
    fn d_at_sum_angle(&self, s: f64) -> Option<f64> {
        let t1 = theta1_on_branch(&self.geom, s)?;
        Some(self.rest_ey - self.apex(t1, s - t1).y)
    }

    fn admissible_sum_angle(&self, s: f64) -> bool {
        match theta1_on_branch(&self.geom, s) {
            Some(t1) => in_box(t1, s - t1) && (FRAC_PI_3 + s).cos() >= -EDGE_ON_TOLERANCE,
            None => false,
        }
    }

    /// Walks the branch in the direction of growing `d` until an admissibility
    /// boundary or a fold, then bisects the boundary.
    fn compute_d_max(&self) -> Result<f64, KinematicsError> {
        let s0 = self.rest_theta.0 + self.rest_theta.1;
        let h = 1e-3;
        let dir = match (self.d_at_sum_angle(s0 - h), self.d_at_sum_angle(s0 + h)) {
            (Some(a), _) if a > 0.0 && self.admissible_sum_angle(s0 - h) => -1.0,
            (_, Some(b)) if b > 0.0 && self.admissible_sum_angle(s0 + h) => 1.0,
            _ => return Err(KinematicsError::GeometryInfeasible("rest pose admits no increasing deformation".into())),
        };
        let mut s = s0;
        let mut d_prev = 0.0;
        loop {
            let next = s + dir * h;
            let ok = self.admissible_sum_angle(next);
            let d_next = if ok { self.d_at_sum_angle(next) } else { None };
            match d_next {
                Some(dn) if dn > d_prev => {
                    s = next;
                    d_prev = dn;
                }
                Some(_) => {
                    // fold: maximise d on [s - h, s + h] by golden section
                    let (mut a, mut b) = (s - h, s + h);
                    let g = 0.5 * (5f64.sqrt() - 1.0);
                    for _ in 0..80 {
                        let x1 = b - g * (b - a);
                        let x2 = a + g * (b - a);
                        let f1 = self.d_at_sum_angle(x1).unwrap_or(f64::NEG_INFINITY);
                        let f2 = self.d_at_sum_angle(x2).unwrap_or(f64::NEG_INFINITY);
                        if f1 > f2 {
                            b = x2;
                        } else {
                            a = x1;
                        }
                    }
                    return Ok(self.d_at_sum_angle(0.5 * (a + b)).unwrap_or(d_prev).max(d_prev));
                }
                None => {
                    let (mut good, mut bad) = (s, next);
                    for _ in 0..200 {
                        let mid = 0.5 * (good + bad);
                        if self.admissible_sum_angle(mid) {
                            good = mid;
                        } else {
                            bad = mid;
                        }
                        if (bad - good).abs() < 1e-15 {
                            break;
                        }
                    }
                    return Ok(self.d_at_sum_angle(good).unwrap_or(d_prev).max(d_prev));
                }
            }
        }
    }

    fn check_sensing_shape(&self) -> Result<(), KinematicsError> {
        let n = (self.geom.d_sc / 0.01).round() as usize;
        let mut state = self.rest_state();
        let mut prev: Option<f64> = None;
        for i in 0..=n {
            let d = (i as f64 * 0.01).min(self.geom.d_sc);
            state = self.solve_from(&state, d)?;
            if state.depth() <= 0.0 {
                return Err(KinematicsError::GeometryInfeasible(format!(
                    "red strip behind the camera at d = {d:.2} mm"
                )));
            }
            let q = state.gamma.cos() / state.depth();
            if let Some(p) = prev {
                if q <= p {
                    return Err(KinematicsError::GeometryInfeasible(format!(
                        "visible red width not increasing at d = {d:.2} mm"
                    )));
                }
            }
            prev = Some(q);
        }
        let sc = self.solve_joint_angles(self.geom.d_sc)?;
        if sc.gamma.cos() <= 0.0 {
            return Err(KinematicsError::GeometryInfeasible("no visible red strip at d_sc".into()));
        }
        Ok(())
    }
}

/// `theta1` solving the pinned-joint constraint for sum angle `s`, on the
/// `theta1 in [0, pi]` branch.
fn theta1_on_branch(geom: &CavsGeometry, s: f64) -> Option<f64> {
    let c = (geom.p_cx0 - geom.p_a[0] - geom.l2 * s.cos()) / geom.l1;
    if c.abs() > 1.0 {
        None
    } else {
        Some(c.acos())
    }
}

/// Least-squares rest pose: minimises the apex misfit over sum angles that
/// satisfy the pinned-joint constraint exactly, lie in the angle box and keep
/// `cos(gamma) >= 0`. Returns the sum angle and the misfit.
fn fit_rest_sum_angle(geom: &CavsGeometry, target: Point2) -> Option<(f64, f64)> {
    let lo = -5.0 * FRAC_PI_6;
    let hi = FRAC_PI_6;
    let misfit = |s: f64| -> Option<f64> {
        let t1 = theta1_on_branch(geom, s)?;
        if !in_box(t1, s - t1) || (FRAC_PI_3 + s).cos() < -EDGE_ON_TOLERANCE {
            return None;
        }
        let e = geom.anchor()
            + Point2::new(
                geom.l1 * t1.cos() + geom.l3 * (s + FRAC_PI_6).cos(),
                geom.l1 * t1.sin() + geom.l3 * (s + FRAC_PI_6).sin(),
            );
        Some((e - target).norm())
    };
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=n {
        let s = if i == n { hi } else { lo + i as f64 * h };
        if let Some(m) = misfit(s) {
            if best.is_none_or(|(_, bm)| m < bm) {
                best = Some((s, m));
            }
        }
    }
    let (s_best, _) = best?;
    let (mut a, mut b) = ((s_best - h).max(lo), (s_best + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let score = |s: f64| misfit(s).unwrap_or(f64::INFINITY);
    for _ in 0..100 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if score(x1) < score(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let mut cands = [(a + b) * 0.5, s_best, lo, hi];
    cands.sort_by(|x, y| score(*x).total_cmp(&score(*y)));
    let s = cands[0];
    misfit(s).map(|m| (s, m))
}
