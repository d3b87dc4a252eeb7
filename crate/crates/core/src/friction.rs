//! Contact states, the buckling press curve and the load-dependent friction
//! of the CAVS.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrictionError {
    #[error("invalid friction parameters: {0}")]
    InvalidParams(String),
    #[error("ECMSF undefined for normal force {0} N")]
    DivisionDomain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContactState {
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "Transition")]
    Transition,
    #[serde(rename = "SC")]
    Sc,
}

impl ContactState {
    pub fn label(self) -> &'static str {
        match self {
            ContactState::Lc => "LC",
            ContactState::Transition => "Transition",
            ContactState::Sc => "SC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Lateral,
    Longitudinal,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Lateral, Direction::Longitudinal];

    pub fn label(self) -> &'static str {
        match self {
            Direction::Lateral => "lateral",
            Direction::Longitudinal => "longitudinal",
        }
    }
}

/// One value per (contact state, direction) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDirectionTable {
    pub lc_lateral: f64,
    pub sc_lateral: f64,
    pub lc_longitudinal: f64,
    pub sc_longitudinal: f64,
}

impl StateDirectionTable {
    pub fn uniform(v: f64) -> Self {
        Self { lc_lateral: v, sc_lateral: v, lc_longitudinal: v, sc_longitudinal: v }
    }

    /// `(LC, SC)` entries for a direction.
    pub fn pair(&self, dir: Direction) -> (f64, f64) {
        match dir {
            Direction::Lateral => (self.lc_lateral, self.sc_lateral),
            Direction::Longitudinal => (self.lc_longitudinal, self.sc_longitudinal),
        }
    }

    fn values(&self) -> [f64; 4] {
        [self.lc_lateral, self.sc_lateral, self.lc_longitudinal, self.sc_longitudinal]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrictionParams {
    /// End of line contact, at the local maximum of the press curve (mm).
    pub d_lc_end: f64,
    /// Start of surface contact, at the local minimum (mm).
    pub d_sc_start: f64,
    pub f_local_max: f64,
    pub f_local_min: f64,
    /// Point on the rising surface-contact branch that fixes its slope.
    pub d_sc_anchor: f64,
    pub f_sc_anchor: f64,
    /// ECMSF slope of the linear resistible-force model.
    pub mu: StateDirectionTable,
    /// Intercept of the linear resistible-force model (N).
    pub adhesion: StateDirectionTable,
    /// Kinetic friction as a fraction of the maximum resistible force.
    pub kinetic_fraction: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        Self {
            d_lc_end: 1.9,
            d_sc_start: 3.3,
            f_local_max: 1.43,
            f_local_min: 0.97,
            d_sc_anchor: 3.5,
            f_sc_anchor: 2.0,
            mu: StateDirectionTable { lc_lateral: 0.5, sc_lateral: 1.1, lc_longitudinal: 1.0, sc_longitudinal: 2.2 },
            adhesion: StateDirectionTable::uniform(0.15),
            kinetic_fraction: 0.8,
        }
    }
}

impl FrictionParams {
    pub fn validate(&self) -> Result<(), FrictionError> {
        let bad = |m: String| Err(FrictionError::InvalidParams(m));
        let scalars = [
            self.d_lc_end,
            self.d_sc_start,
            self.f_local_max,
            self.f_local_min,
            self.d_sc_anchor,
            self.f_sc_anchor,
            self.kinetic_fraction,
        ];
        if scalars.iter().chain(self.mu.values().iter()).chain(self.adhesion.values().iter()).any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        if !(0.0 < self.d_lc_end && self.d_lc_end < self.d_sc_start && self.d_sc_start < self.d_sc_anchor) {
            return bad("need 0 < d_lc_end < d_sc_start < d_sc_anchor".into());
        }
        if !(self.f_local_max > self.f_local_min && self.f_local_min > 0.0) {
            return bad("need f_local_max > f_local_min > 0".into());
        }
        if self.f_sc_anchor <= self.f_local_min {
            return bad("f_sc_anchor must exceed f_local_min".into());
        }
        if self.mu.values().iter().any(|&m| m <= 0.0) {
            return bad("ECMSF slopes must be positive".into());
        }
        if self.adhesion.values().iter().any(|&a| a < 0.0) {
            return bad("adhesion must be >= 0".into());
        }
        for dir in Direction::ALL {
            let (lc, sc) = self.mu.pair(dir);
            if sc <= 2.0 * lc {
                return bad(format!("{} SC slope {sc} must exceed twice the LC slope {lc}", dir.label()));
            }
        }
        for (state, lat, long) in
            [("LC", self.mu.lc_lateral, self.mu.lc_longitudinal), ("SC", self.mu.sc_lateral, self.mu.sc_longitudinal)]
        {
            let ratio = long / lat;
            if !(1.6..=2.4).contains(&ratio) {
                return bad(format!("{state} longitudinal/lateral slope ratio {ratio:.3} outside [1.6, 2.4]"));
            }
        }
        if !(0.0..=1.0).contains(&self.kinetic_fraction) {
            return bad("kinetic_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn classify_contact_state(&self, d: f64) -> ContactState {
        if d <= self.d_lc_end {
            ContactState::Lc
        } else if d < self.d_sc_start {
            ContactState::Transition
        } else {
            ContactState::Sc
        }
    }

    /// Fraction of the way through the transition band, clamped to `[0, 1]`.
    fn transition_fraction(&self, d: f64) -> f64 {
        ((d - self.d_lc_end) / (self.d_sc_start - self.d_lc_end)).clamp(0.0, 1.0)
    }

    /// `(mu, adhesion)` at deformation `d`; the transition band interpolates
    /// linearly between the LC and SC rows.
    pub fn coefficients_at(&self, d: f64, dir: Direction) -> (f64, f64) {
        let t = self.transition_fraction(d);
        let (mu_lc, mu_sc) = self.mu.pair(dir);
        let (ad_lc, ad_sc) = self.adhesion.pair(dir);
        (mu_lc + t * (mu_sc - mu_lc), ad_lc + t * (ad_sc - ad_lc))
    }

    /// Coefficients of a contact state; `Transition` takes the middle of the band.
    pub fn coefficients(&self, state: ContactState, dir: Direction) -> (f64, f64) {
        let d = match state {
            ContactState::Lc => self.d_lc_end,
            ContactState::Transition => 0.5 * (self.d_lc_end + self.d_sc_start),
            ContactState::Sc => self.d_sc_start,
        };
        self.coefficients_at(d, dir)
    }

    /// `f_MAX = mu f_Nslip + adhesion`.
    pub fn max_resistible_force(&self, state: ContactState, dir: Direction, f_nslip: f64) -> f64 {
        let (mu, ad) = self.coefficients(state, dir);
        mu * f_nslip + ad
    }

    pub fn max_resistible_force_at(&self, d: f64, dir: Direction, f_nslip: f64) -> f64 {
        let (mu, ad) = self.coefficients_at(d, dir);
        mu * f_nslip + ad
    }

    pub fn press_curve(&self) -> PressCurve {
        PressCurve::new(self)
    }

    pub fn pressing_force(&self, d: f64) -> f64 {
        self.press_curve().force(d)
    }
}

/// Equivalent coefficient of maximum static friction, `f_MAX / f_Nslip`.
pub fn ecmsf(f_max: f64, f_nslip: f64) -> Result<f64, FrictionError> {
    if f_nslip.is_nan() || f_nslip <= 0.0 {
        return Err(FrictionError::DivisionDomain(f_nslip));
    }
    Ok(f_max / f_nslip)
}

/// Cubic Hermite piece on `[x0, x1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hermite {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    m0: f64,
    m1: f64,
}

impl Hermite {
    fn eval(&self, x: f64) -> (f64, f64) {
        let h = self.x1 - self.x0;
        let t = (x - self.x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * self.y0
            + (t3 - 2.0 * t2 + t) * h * self.m0
            + (-2.0 * t3 + 3.0 * t2) * self.y1
            + (t3 - t2) * h * self.m1;
        let dv = ((6.0 * t2 - 6.0 * t) * self.y0
            + (3.0 * t2 - 4.0 * t + 1.0) * h * self.m0
            + (-6.0 * t2 + 6.0 * t) * self.y1
            + (3.0 * t2 - 2.0 * t) * h * self.m1)
            / h;
        (v, dv)
    }
}

/// Monotone branch of the press curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// Line contact, rising to the local maximum.
    Loading,
    /// Buckling, falling to the local minimum.
    Buckling,
    /// Surface contact, rising without bound.
    Surface,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Loading, Branch::Buckling, Branch::Surface];
}

/// Piecewise monotone cubic through `(0, 0)`, the local maximum and the local
/// minimum (both with zero slope) and the surface-contact anchor, continued
/// linearly past the anchor. Interior slopes follow Fritsch-Carlson limits:
/// the first piece starts at 1.5x its secant, the last piece ends at 2x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressCurve {
    pieces: [Hermite; 3],
    tail_slope: f64,
}

impl PressCurve {
    pub fn new(p: &FrictionParams) -> Self {
        let rise = p.f_local_max / p.d_lc_end;
        let last = (p.f_sc_anchor - p.f_local_min) / (p.d_sc_anchor - p.d_sc_start);
        let pieces = [
            Hermite { x0: 0.0, x1: p.d_lc_end, y0: 0.0, y1: p.f_local_max, m0: 1.5 * rise, m1: 0.0 },
            Hermite { x0: p.d_lc_end, x1: p.d_sc_start, y0: p.f_local_max, y1: p.f_local_min, m0: 0.0, m1: 0.0 },
            Hermite {
                x0: p.d_sc_start,
                x1: p.d_sc_anchor,
                y0: p.f_local_min,
                y1: p.f_sc_anchor,
                m0: 0.0,
                m1: 2.0 * last,
            },
        ];
        Self { pieces, tail_slope: 2.0 * last }
    }

    /// `(force, slope)` at deformation `d`; zero for `d <= 0`.
    pub fn eval(&self, d: f64) -> (f64, f64) {
        if d <= 0.0 {
            return (0.0, 0.0);
        }
        for p in &self.pieces {
            if d <= p.x1 {
                return p.eval(d);
            }
        }
        let end = &self.pieces[2];
        (end.y1 + self.tail_slope * (d - end.x1), self.tail_slope)
    }

    pub fn force(&self, d: f64) -> f64 {
        self.eval(d).0
    }

    pub fn slope(&self, d: f64) -> f64 {
        self.eval(d).1
    }

    pub fn local_max(&self) -> (f64, f64) {
        (self.pieces[0].x1, self.pieces[0].y1)
    }

    pub fn local_min(&self) -> (f64, f64) {
        (self.pieces[1].x1, self.pieces[1].y1)
    }

    /// Deformation interval of a branch (the surface branch is unbounded).
    pub fn branch_domain(&self, b: Branch) -> (f64, f64) {
        match b {
            Branch::Loading => (0.0, self.pieces[0].x1),
            Branch::Buckling => (self.pieces[1].x0, self.pieces[1].x1),
            Branch::Surface => (self.pieces[2].x0, f64::INFINITY),
        }
    }

    /// Force interval spanned by a branch.
    pub fn branch_range(&self, b: Branch) -> (f64, f64) {
        let (fmax, fmin) = (self.pieces[0].y1, self.pieces[1].y1);
        match b {
            Branch::Loading => (0.0, fmax),
            Branch::Buckling => (fmin, fmax),
            Branch::Surface => (fmin, f64::INFINITY),
        }
    }

    pub fn branch_of(&self, d: f64) -> Branch {
        if d <= self.pieces[0].x1 {
            Branch::Loading
        } else if d <= self.pieces[1].x1 {
            Branch::Buckling
        } else {
            Branch::Surface
        }
    }

    /// Deformation on branch `b` producing force `f`, or `None` outside the
    /// branch range. Safeguarded Newton on the bracketing interval.
    pub fn inverse(&self, b: Branch, f: f64) -> Option<f64> {
        let (flo, fhi) = self.branch_range(b);
        if !(f >= flo && f <= fhi) {
            return None;
        }
        let (dlo, dhi) = self.branch_domain(b);
        if b == Branch::Surface && f >= self.pieces[2].y1 {
            return Some(self.pieces[2].x1 + (f - self.pieces[2].y1) / self.tail_slope);
        }
        let dhi = if b == Branch::Surface { self.pieces[2].x1 } else { dhi };
        let rising = b != Branch::Buckling;
        // g(d) = force - f, increasing in d after the sign flip on the buckling branch
        let g = |d: f64| {
            let (v, s) = self.eval(d);
            if rising {
                (v - f, s)
            } else {
                (f - v, -s)
            }
        };
        let (mut a, mut z) = (dlo, dhi);
        let (ga, _) = g(a);
        let (gz, _) = g(z);
        if ga >= 0.0 {
            return Some(a);
        }
        if gz <= 0.0 {
            return Some(z);
        }
        let mut x = 0.5 * (a + z);
        for _ in 0..200 {
            let (gx, sx) = g(x);
            if gx.abs() <= 1e-14 * (1.0 + f.abs()) {
                return Some(x);
            }
            if gx < 0.0 {
                a = x;
            } else {
                z = x;
            }
            if z - a < 1e-15 * (1.0 + z.abs()) {
                break;
            }
            let newton = x - gx / sx;
            x = if sx > 0.0 && newton > a && newton < z { newton } else { 0.5 * (a + z) };
        }
        Some(x)
    }

    /// All deformations producing force `f`, in increasing order.
    pub fn preimages(&self, f: f64) -> Vec<(Branch, f64)> {
        let mut out: Vec<(Branch, f64)> = Vec::with_capacity(3);
        for b in Branch::ALL {
            if let Some(d) = self.inverse(b, f) {
                if !out.iter().any(|(_, e)| (e - d).abs() < 1e-12) {
                    out.push((b, d));
                }
            }
        }
        out
    }
}
