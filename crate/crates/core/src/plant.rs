//! Two-finger parallel gripper squeezing a compliant object through one CAVS
//! per finger, and the tick-by-tick scenario runner.
//!
//! Each finger face sits `finger_pos` mm from the object centre (opening
//! positive), so the gap is `pos_left + pos_right` and the overlap with the
//! object is `w - gap`. The overlap is shared by both CAVS deformations and
//! the object compression `c`; the same force runs through the chain:
//!
//! ```text
//! d_left + d_right + c = w - gap
//! F(d_left) - P_left = F(d_right) - P_right = k c
//! ```
//!
//! where `P` is an optional extra normal load on one CAVS. Because `F` folds,
//! a gap can have several equilibria; they are enumerated per pair of
//! monotone press-curve branches and the one continuing the previous state
//! is kept.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{control_step, widened_band, ControlError, ControllerConfig, FingerCommand, TargetMode};
use crate::friction::{Branch, ContactState, Direction, FrictionError, FrictionParams, PressCurve};
use crate::kinematics::{CavsGeometry, JointState, KinematicsError, Linkage};
use crate::sensing::{calibrate_sc_reference, ratio_of_state, CameraModel, RatioNoise, SensingError};

/// Samples of the object force per branch pair when bracketing roots.
const ROOT_SAMPLES: usize = 32;
/// Largest overlap change per tracking sub-step (mm).
const TRACK_STEP: f64 = 0.01;
/// Largest deformation change accepted as continuous within one (bisected)
/// sub-step; anything larger is snap-through (mm).
const SNAP_JUMP: f64 = 0.05;
/// Halvings of a tracking sub-step before a missing nearby root counts as a jump.
const MAX_BISECTIONS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("negative finger gap {0} mm")]
    NegativeGap(f64),
    #[error("no contact: gap {gap} mm >= object width {width} mm")]
    NoContact { gap: f64, width: f64 },
    #[error("equilibrium solver failed: {0}")]
    SolverFailure(String),
    #[error("tick {tick}: {source}")]
    Tick {
        tick: u64,
        #[source]
        source: Box<PlantError>,
    },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Friction(#[from] FrictionError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

impl PlantError {
    /// True for numerical failures (as opposed to invalid input).
    pub fn is_solver_failure(&self) -> bool {
        match self {
            PlantError::SolverFailure(_) | PlantError::Kinematics(KinematicsError::SolverFailure { .. }) => true,
            PlantError::Kinematics(KinematicsError::OutOfRange { .. }) => true,
            PlantError::Sensing(SensingError::Kinematics(_)) => true,
            PlantError::Tick { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Left,
    Right,
}

impl Finger {
    pub const BOTH: [Finger; 2] = [Finger::Left, Finger::Right];

    pub fn index(self) -> usize {
        match self {
            Finger::Left => 0,
            Finger::Right => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Finger::Left => "left",
            Finger::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectModel {
    /// Diameter of the grasped tube (mm).
    pub nominal_width: f64,
    /// Compression stiffness of the object (N/mm).
    pub stiffness: f64,
    /// Tangential load the grasp must carry (N).
    pub required_hold_force: f64,
    /// Tangential force applied to each finger (N). Unset means the midpoint
    /// of the line- and surface-contact resistible forces.
    pub slide_demand: Option<f64>,
}

impl Default for ObjectModel {
    fn default() -> Self {
        Self { nominal_width: 8.0, stiffness: 2.0, required_hold_force: 0.3, slide_demand: None }
    }
}

impl ObjectModel {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::InvalidObject(m.to_string()));
        if !(self.nominal_width.is_finite() && self.nominal_width > 0.0) {
            return bad("nominal_width must be positive");
        }
        if !(self.stiffness.is_finite() && self.stiffness > 0.0) {
            return bad("stiffness must be positive");
        }
        if !(self.required_hold_force.is_finite() && self.required_hold_force >= 0.0) {
            return bad("required_hold_force must be >= 0");
        }
        if let Some(s) = self.slide_demand {
            if !(s.is_finite() && s >= 0.0) {
                return bad("slide_demand must be >= 0");
            }
        }
        Ok(())
    }
}

/// Deformation at which the calibrated ratio reaches `r` on `[0, d_sc]`.
pub fn deformation_for_ratio(cam: &CameraModel, linkage: &Linkage, r: f64) -> Result<f64, PlantError> {
    let (mut lo, mut hi) = (0.0, linkage.geometry().d_sc);
    let ratio = |d: f64| -> Result<f64, PlantError> { Ok(ratio_of_state(cam, &linkage.solve_joint_angles(d)?)?) };
    if r <= ratio(lo)? {
        return Ok(lo);
    }
    if r >= ratio(hi)? {
        return Ok(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid)? < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Midpoint between the longitudinal resistible force in line contact (at
/// the press force where the ratio sits on the LC target) and in surface
/// contact (at the surface-contact onset force).
pub fn default_slide_demand(
    friction: &FrictionParams,
    controller: &ControllerConfig,
    cam: &CameraModel,
    linkage: &Linkage,
) -> Result<f64, PlantError> {
    let d_lc = deformation_for_ratio(cam, linkage, controller.r_target_lc)?;
    let f_lc = friction.pressing_force(d_lc);
    let lc = friction.max_resistible_force(ContactState::Lc, Direction::Longitudinal, f_lc);
    let sc = friction.max_resistible_force(ContactState::Sc, Direction::Longitudinal, friction.f_local_min);
    Ok(0.5 * (lc + sc))
}

/// One equilibrium of the finger-CAVS-object chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub d: [f64; 2],
    /// Force carried by the object, `k c` (N).
    pub object_force: f64,
    pub branches: [Branch; 2],
    /// Local minimum of the stored energy under fixed gap. Informational: the
    /// branch follower does not filter on it.
    pub stable: bool,
}

/// All equilibria at a given overlap and extra loads, sorted by `d_left`.
pub fn equilibria(curve: &PressCurve, obj: &ObjectModel, overlap: f64, loads: [f64; 2]) -> Vec<Equilibrium> {
    let mut out = Vec::new();
    for bl in Branch::ALL {
        for br in Branch::ALL {
            out.extend(pair_equilibria(curve, obj, overlap, loads, [bl, br]));
        }
    }
    out.sort_by(|a, b| a.d[0].total_cmp(&b.d[0]).then(a.d[1].total_cmp(&b.d[1])));
    out.dedup_by(|a, b| (a.d[0] - b.d[0]).abs() < 1e-9 && (a.d[1] - b.d[1]).abs() < 1e-9);
    out
}

/// Equilibria with each CAVS on the given monotone branch. Parameterised by
/// the object force `F_o`, closure reads
/// `inv_l(F_o + P_l) + inv_r(F_o + P_r) + F_o / k - overlap = 0`; roots are
/// bracketed on a uniform sample and bisected.
pub fn pair_equilibria(
    curve: &PressCurve,
    obj: &ObjectModel,
    overlap: f64,
    loads: [f64; 2],
    pair: [Branch; 2],
) -> Vec<Equilibrium> {
    let k = obj.stiffness;
    let mut out: Vec<Equilibrium> = Vec::new();
    if overlap <= 0.0 {
        return out;
    }
    let [bl, br] = pair;
    let (l_lo, l_hi) = curve.branch_range(bl);
    let (r_lo, r_hi) = curve.branch_range(br);
    let lo = 0.0_f64.max(l_lo - loads[0]).max(r_lo - loads[1]);
    let hi = (k * overlap).min(l_hi - loads[0]).min(r_hi - loads[1]);
    if lo > hi {
        return out;
    }
    let h = |f: f64| -> Option<(f64, f64, f64)> {
        let dl = curve.inverse(bl, f + loads[0])?;
        let dr = curve.inverse(br, f + loads[1])?;
        Some((dl + dr + f / k - overlap, dl, dr))
    };
    let mut push = |f: f64| {
        if let Some((_, dl, dr)) = h(f) {
            let (a, b) = (curve.slope(dl), curve.slope(dr));
            // positive-definite energy Hessian on the constraint plane
            let stable = a + k > -1e-12 && a * b + k * (a + b) > -1e-12;
            out.push(Equilibrium { d: [dl, dr], object_force: f, branches: pair, stable });
        }
    };
    let n = if hi > lo { ROOT_SAMPLES } else { 0 };
    let xs: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect();
    let vals: Vec<Option<f64>> = xs.iter().map(|&x| h(x).map(|v| v.0)).collect();
    for i in 0..xs.len() {
        let Some(va) = vals[i] else { continue };
        if va == 0.0 {
            push(xs[i]);
            continue;
        }
        let Some(Some(vb)) = vals.get(i + 1) else { continue };
        if *vb != 0.0 && (va < 0.0) != (*vb < 0.0) {
            // Illinois false position
            let (mut a, mut b, mut fa, mut fb) = (xs[i], xs[i + 1], va, *vb);
            let mut side = 0i8;
            let mut best = if va.abs() < vb.abs() { a } else { b };
            for _ in 0..100 {
                let m = (a * fb - b * fa) / (fb - fa);
                let m = if m > a && m < b { m } else { 0.5 * (a + b) };
                let Some(fm) = h(m).map(|v| v.0) else { break };
                best = m;
                if fm.abs() < 1e-13 || b - a < 1e-15 * (1.0 + b.abs()) {
                    break;
                }
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                    if side == -1 {
                        fb *= 0.5;
                    }
                    side = -1;
                } else {
                    b = m;
                    fb = fm;
                    if side == 1 {
                        fa *= 0.5;
                    }
                    side = 1;
                }
            }
            push(best);
        }
    }
    out
}

/// Memory of the last equilibrium, used to follow the branch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchMemory {
    pub d: [f64; 2],
    pub branches: Option<[Branch; 2]>,
}

fn nearest(pool: impl IntoIterator<Item = Equilibrium>, memory: &BranchMemory) -> Option<Equilibrium> {
    let dist = |e: &Equilibrium| (e.d[0] - memory.d[0]).hypot(e.d[1] - memory.d[1]);
    pool.into_iter().min_by(|a, b| {
        dist(a)
            .total_cmp(&dist(b))
            .then((a.d[0] + a.d[1]).total_cmp(&(b.d[0] + b.d[1])))
            .then(a.d[0].total_cmp(&b.d[0]))
    })
}

/// Picks the equilibrium continuing `memory`: the nearest one on the same
/// branch pair if that pair still has a root, else the nearest overall; ties
/// go to the smaller total deformation, then the smaller `d_left`.
pub fn select_equilibrium(candidates: &[Equilibrium], memory: &BranchMemory) -> Option<Equilibrium> {
    let same =
        memory.branches.and_then(|pair| nearest(candidates.iter().copied().filter(|e| e.branches == pair), memory));
    same.or_else(|| nearest(candidates.iter().copied(), memory))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Face position of each finger from the object centre (mm, opening positive).
    pub finger_pos: [f64; 2],
    pub d: [f64; 2],
    /// Normal force on each CAVS (N).
    pub f_n: [f64; 2],
    pub object_force: f64,
    /// Extra normal load on each CAVS in effect (N).
    pub loads: [f64; 2],
    pub memory: BranchMemory,
}

impl PlantState {
    pub fn gap(&self) -> f64 {
        self.finger_pos[0] + self.finger_pos[1]
    }

    pub fn in_contact(&self) -> bool {
        self.memory.branches.is_some()
    }

    fn released(finger_pos: [f64; 2], loads: [f64; 2]) -> Self {
        Self { finger_pos, d: [0.0; 2], f_n: [0.0; 2], object_force: 0.0, loads, memory: BranchMemory::default() }
    }

    fn from_equilibrium(finger_pos: [f64; 2], loads: [f64; 2], e: &Equilibrium, curve: &PressCurve) -> Self {
        Self {
            finger_pos,
            d: e.d,
            f_n: [curve.force(e.d[0]), curve.force(e.d[1])],
            object_force: e.object_force,
            loads,
            memory: BranchMemory { d: e.d, branches: Some(e.branches) },
        }
    }

    /// `|F(d_l) - P_l - F(d_r) + P_r|` (N).
    pub fn force_residual(&self) -> f64 {
        ((self.f_n[0] - self.loads[0]) - (self.f_n[1] - self.loads[1])).abs()
    }

    /// `|d_l + d_r + c - overlap|` (mm), with `c` from the object force.
    pub fn closure_residual(&self, obj: &ObjectModel) -> f64 {
        if !self.in_contact() {
            return 0.0;
        }
        let overlap = obj.nominal_width - self.gap();
        (self.d[0] + self.d[1] + self.object_force / obj.stiffness - overlap).abs()
    }
}

/// Solves the chain at fixed finger positions, keeping the equilibrium that
/// continues `memory`.
pub fn equilibrium_solve(
    curve: &PressCurve,
    obj: &ObjectModel,
    finger_pos: [f64; 2],
    memory: &BranchMemory,
    loads: [f64; 2],
) -> Result<PlantState, PlantError> {
    let gap = finger_pos[0] + finger_pos[1];
    if !gap.is_finite() || gap < 0.0 {
        return Err(PlantError::NegativeGap(gap));
    }
    if gap >= obj.nominal_width {
        return Err(PlantError::NoContact { gap, width: obj.nominal_width });
    }
    let roots = equilibria(curve, obj, obj.nominal_width - gap, loads);
    let e = select_equilibrium(&roots, memory)
        .ok_or_else(|| PlantError::SolverFailure(format!("no equilibrium at gap {gap} mm with loads {loads:?}")))?;
    Ok(PlantState::from_equilibrium(finger_pos, loads, &e, curve))
}

/// A discontinuous jump between equilibrium branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapEvent {
    pub overlap: f64,
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub from_branches: [Branch; 2],
    pub to_branches: [Branch; 2],
}

fn no_root(ov: f64, ld: [f64; 2]) -> PlantError {
    PlantError::SolverFailure(format!("no equilibrium at overlap {ov} mm with loads {ld:?}"))
}

/// Root within [`SNAP_JUMP`] of `memory`, preferring the remembered pair.
fn nearby_root(
    curve: &PressCurve,
    obj: &ObjectModel,
    memory: &BranchMemory,
    ov: f64,
    ld: [f64; 2],
) -> Option<Equilibrium> {
    let close = |e: &Equilibrium| (e.d[0] - memory.d[0]).hypot(e.d[1] - memory.d[1]) <= SNAP_JUMP;
    memory
        .branches
        .and_then(|pair| nearest(pair_equilibria(curve, obj, ov, ld, pair), memory))
        .filter(close)
        .or_else(|| nearest(equilibria(curve, obj, ov, ld), memory).filter(close))
}

/// Follows the path from `a` to `b`. When no root lies near the last one,
/// the interval is halved to tell a steep but continuous stretch near a fold
/// from a genuine jump; a jump is taken to the nearest root and logged.
fn walk(
    curve: &PressCurve,
    obj: &ObjectModel,
    memory: BranchMemory,
    a: (f64, [f64; 2]),
    b: (f64, [f64; 2]),
    depth: u32,
    snaps: &mut Vec<SnapEvent>,
) -> Result<Equilibrium, PlantError> {
    if let Some(e) = nearby_root(curve, obj, &memory, b.0, b.1) {
        return Ok(e);
    }
    if depth < MAX_BISECTIONS {
        let mid = (0.5 * (a.0 + b.0), [0.5 * (a.1[0] + b.1[0]), 0.5 * (a.1[1] + b.1[1])]);
        let e = walk(curve, obj, memory, a, mid, depth + 1, snaps)?;
        let memory = BranchMemory { d: e.d, branches: Some(e.branches) };
        return walk(curve, obj, memory, mid, b, depth + 1, snaps);
    }
    let e = nearest(equilibria(curve, obj, b.0, b.1), &memory).ok_or_else(|| no_root(b.0, b.1))?;
    if let Some(pair) = memory.branches {
        snaps.push(SnapEvent { overlap: b.0, from: memory.d, to: e.d, from_branches: pair, to_branches: e.branches });
    }
    Ok(e)
}

/// Follows the path over a whole move, coarse to fine: a unique root on the
/// remembered pair within continuous reach is accepted at once; otherwise the
/// move is halved down to one tracking sub-step.
fn follow(
    curve: &PressCurve,
    obj: &ObjectModel,
    memory: BranchMemory,
    a: (f64, [f64; 2]),
    b: (f64, [f64; 2]),
    snaps: &mut Vec<SnapEvent>,
) -> Result<Equilibrium, PlantError> {
    let load_change = (b.1[0] - a.1[0]).abs().max((b.1[1] - a.1[1]).abs());
    let span = (b.0 - a.0).abs().max(load_change);
    if let Some(pair) = memory.branches {
        if let [e] = pair_equilibria(curve, obj, b.0, b.1, pair)[..] {
            let reach = 2.0 * ((b.0 - a.0).abs() + load_change) + SNAP_JUMP;
            if (e.d[0] - memory.d[0]).hypot(e.d[1] - memory.d[1]) <= reach {
                return Ok(e);
            }
        }
    }
    if span <= TRACK_STEP {
        return walk(curve, obj, memory, a, b, 0, snaps);
    }
    let mid = (0.5 * (a.0 + b.0), [0.5 * (a.1[0] + b.1[0]), 0.5 * (a.1[1] + b.1[1])]);
    let e = follow(curve, obj, memory, a, mid, snaps)?;
    follow(curve, obj, BranchMemory { d: e.d, branches: Some(e.branches) }, mid, b, snaps)
}

/// Moves from `prev` to new finger positions and loads in small overlap
/// increments, following the equilibrium path and reporting snap-through.
pub fn track_equilibrium(
    curve: &PressCurve,
    obj: &ObjectModel,
    prev: &PlantState,
    finger_pos: [f64; 2],
    loads: [f64; 2],
) -> Result<(PlantState, Vec<SnapEvent>), PlantError> {
    let gap = finger_pos[0] + finger_pos[1];
    if !gap.is_finite() || gap < 0.0 {
        return Err(PlantError::NegativeGap(gap));
    }
    let w = obj.nominal_width;
    let (ov0, ov1) = (w - prev.gap(), w - gap);
    let load_change = (loads[0] - prev.loads[0]).abs().max((loads[1] - prev.loads[1]).abs());
    if prev.memory.branches.is_some() && ov0 > 0.0 && ov1 > 0.0 {
        let mut snaps = Vec::new();
        let e = follow(curve, obj, prev.memory, (ov0, prev.loads), (ov1, loads), &mut snaps)?;
        return Ok((PlantState::from_equilibrium(finger_pos, loads, &e, curve), snaps));
    }
    // making or breaking contact: uniform sub-steps from the open side
    let n = ((ov1 - ov0).abs().max(load_change) / TRACK_STEP).ceil().max(1.0) as usize;
    let mut memory = prev.memory;
    let mut snaps = Vec::new();
    let mut last = None;
    let (mut prev_ov, mut prev_ld) = (ov0, prev.loads);
    for i in 1..=n {
        let t = i as f64 / n as f64;
        let ov = if i == n { ov1 } else { ov0 + (ov1 - ov0) * t };
        let ld = if i == n {
            loads
        } else {
            [prev.loads[0] + (loads[0] - prev.loads[0]) * t, prev.loads[1] + (loads[1] - prev.loads[1]) * t]
        };
        if ov <= 0.0 {
            memory = BranchMemory::default();
            last = None;
            (prev_ov, prev_ld) = (ov, ld);
            continue;
        }
        let e = match memory.branches {
            Some(_) => walk(curve, obj, memory, (prev_ov, prev_ld), (ov, ld), 0, &mut snaps)?,
            None => nearest(equilibria(curve, obj, ov, ld), &memory).ok_or_else(|| no_root(ov, ld))?,
        };
        memory = BranchMemory { d: e.d, branches: Some(e.branches) };
        last = Some(e);
        (prev_ov, prev_ld) = (ov, ld);
    }
    let state = match last {
        Some(e) if ov1 > 0.0 => PlantState::from_equilibrium(finger_pos, loads, &e, curve),
        _ => PlantState::released(finger_pos, loads),
    };
    Ok((state, snaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideOutcome {
    Holds,
    Slides,
}

/// Per-finger hold/slide under a tangential force applied to each finger.
pub fn slide_check(
    params: &FrictionParams,
    state: &PlantState,
    dir: Direction,
    applied_tangential: f64,
) -> [SlideOutcome; 2] {
    let f_max = resistible_forces(params, state, dir);
    f_max.map(|m| if applied_tangential <= m { SlideOutcome::Holds } else { SlideOutcome::Slides })
}

pub fn resistible_forces(params: &FrictionParams, state: &PlantState, dir: Direction) -> [f64; 2] {
    [0, 1].map(|i| params.max_resistible_force_at(state.d[i], dir, state.f_n[i]))
}

/// True if both fingers touch the object and together resist `required_hold_force`.
pub fn grasp_maintained(params: &FrictionParams, obj: &ObjectModel, state: &PlantState, dir: Direction) -> bool {
    let f = resistible_forces(params, state, dir);
    state.in_contact() && state.f_n.iter().all(|&n| n > 0.0) && f[0] + f[1] >= obj.required_hold_force
}

/// Extra input acting on one finger for part of a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    /// Additive offset on the reported ratio (percentage points).
    Ratio { finger: Finger, start_s: f64, duration_s: f64, offset_pct: f64 },
    /// Additive normal load on the finger's CAVS (N).
    NormalForce { finger: Finger, start_s: f64, duration_s: f64, force_n: f64 },
}

impl Disturbance {
    pub fn finger(&self) -> Finger {
        match self {
            Disturbance::Ratio { finger, .. } | Disturbance::NormalForce { finger, .. } => *finger,
        }
    }

    pub fn window(&self) -> (f64, f64) {
        match self {
            Disturbance::Ratio { start_s, duration_s, .. } | Disturbance::NormalForce { start_s, duration_s, .. } => {
                (*start_s, *duration_s)
            }
        }
    }

    /// Tick range `[first, last)` within the step.
    pub fn tick_range(&self, tick_s: f64) -> (u64, u64) {
        let (start, duration) = self.window();
        let first = (start / tick_s).round() as u64;
        let len = ((duration / tick_s).round() as u64).max(1);
        (first, first + len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioStep {
    pub name: String,
    pub target_mode: TargetMode,
    pub duration_s: f64,
    #[serde(default)]
    pub disturbance: Option<Disturbance>,
}

impl ScenarioStep {
    pub fn ticks(&self, tick_s: f64) -> u64 {
        ((self.duration_s / tick_s).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub steps: Vec<ScenarioStep>,
}

const TUBE_SCENARIO: &str = include_str!("../scenarios/tube.json");

impl Scenario {
    /// The bundled five-step tube manipulation.
    pub fn tube() -> Self {
        serde_json::from_str(TUBE_SCENARIO).expect("bundled scenario parses")
    }

    pub fn from_json(text: &str) -> Result<Self, PlantError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| PlantError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: String| Err(PlantError::InvalidScenario(m));
        if self.steps.is_empty() {
            return bad("scenario has no steps".into());
        }
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
                return bad(format!("step {} ({}) needs a positive duration", i + 1, s.name));
            }
            if let Some(d) = &s.disturbance {
                let (start, duration) = d.window();
                if !(start.is_finite() && start >= 0.0 && duration.is_finite() && duration > 0.0) {
                    return bad(format!(
                        "step {}: disturbance window must be non-negative with positive duration",
                        i + 1
                    ));
                }
                if start >= s.duration_s {
                    return bad(format!("step {}: disturbance starts after the step ends", i + 1));
                }
                let magnitude = match d {
                    Disturbance::Ratio { offset_pct, .. } => *offset_pct,
                    Disturbance::NormalForce { force_n, .. } => *force_n,
                };
                if !magnitude.is_finite() {
                    return bad(format!("step {}: non-finite disturbance", i + 1));
                }
            }
        }
        Ok(())
    }
}

/// One logged row per finger per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub time_s: f64,
    pub finger: Finger,
    pub desired_state: TargetMode,
    pub r_img: f64,
    pub r_target: f64,
    pub delta_df_mm: f64,
    pub finger_pos_mm: f64,
    pub deformation_mm: f64,
    pub contact_state: ContactState,
    pub f_n: f64,
    pub f_max_long: f64,
    pub slides: bool,
}

pub const CSV_HEADER: &str = "time_s,finger,desired_state,r_img_pct,r_target_pct,delta_df_mm,finger_pos_mm,deformation_mm,contact_state,f_n_N,f_max_long_N,slide_flag";

impl TimeSeriesRecord {
    pub fn csv_row(&self) -> String {
        use crate::format::sig6;
        format!(
            "{:.3},{},{},{},{},{},{},{},{},{},{},{}",
            self.time_s,
            self.finger.label(),
            self.desired_state.label(),
            sig6(100.0 * self.r_img),
            sig6(100.0 * self.r_target),
            sig6(self.delta_df_mm),
            sig6(self.finger_pos_mm),
            sig6(self.deformation_mm),
            self.contact_state.label(),
            sig6(self.f_n),
            sig6(self.f_max_long),
            u8::from(self.slides),
        )
    }
}

pub fn records_to_csv(records: &[TimeSeriesRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-tick inputs beyond the controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickInput {
    pub ratio_offset: [f64; 2],
    pub loads: [f64; 2],
}

impl TickInput {
    fn from_disturbance(d: &Disturbance) -> Self {
        let mut input = Self::default();
        let i = d.finger().index();
        match d {
            Disturbance::Ratio { offset_pct, .. } => input.ratio_offset[i] = offset_pct / 100.0,
            Disturbance::NormalForce { force_n, .. } => input.loads[i] = *force_n,
        }
        input
    }
}

/// Snap-through logged with the tick it happened on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedSnap {
    pub tick: u64,
    pub event: SnapEvent,
}

/// Full simulation state: sensors, controller, gripper and object.
#[derive(Debug, Clone)]
pub struct World {
    friction: FrictionParams,
    curve: PressCurve,
    object: ObjectModel,
    slide_demand: f64,
    controller: ControllerConfig,
    linkage: Linkage,
    camera: CameraModel,
    noise: [RatioNoise; 2],
    joints: [JointState; 2],
    ratios: [f64; 2],
    band: f64,
    state: PlantState,
    tick: u64,
    snaps: Vec<LoggedSnap>,
}

/// Clearance of each finger from the object at the start (mm).
pub const OPEN_CLEARANCE: f64 = 1.0;

impl World {
    /// Validates all parts, calibrates the camera and opens the fingers.
    pub fn new(
        geometry: CavsGeometry,
        camera: CameraModel,
        friction: FrictionParams,
        controller: ControllerConfig,
        object: ObjectModel,
        seed: u64,
    ) -> Result<Self, PlantError> {
        friction.validate()?;
        controller.validate()?;
        object.validate()?;
        camera.validate()?;
        let linkage = Linkage::new(geometry)?;
        let camera = calibrate_sc_reference(&camera, &linkage)?;
        let slide_demand = match object.slide_demand {
            Some(s) => s,
            None => default_slide_demand(&friction, &controller, &camera, &linkage)?,
        };
        let band = widened_band(&controller, &camera, &linkage)?;
        let noise = [
            RatioNoise::new(camera.noise_std_pct, seed.wrapping_mul(2)),
            RatioNoise::new(camera.noise_std_pct, seed.wrapping_mul(2).wrapping_add(1)),
        ];
        let rest = linkage.rest_state();
        let pos = 0.5 * object.nominal_width + OPEN_CLEARANCE;
        let mut world = Self {
            curve: friction.press_curve(),
            friction,
            object,
            slide_demand,
            controller,
            linkage,
            camera,
            noise,
            joints: [rest; 2],
            ratios: [0.0; 2],
            band,
            state: PlantState::released([pos; 2], [0.0; 2]),
            tick: 0,
            snaps: Vec::new(),
        };
        world.refresh_sensors()?;
        Ok(world)
    }

    /// Places both fingers so that each CAVS sits at deformation `d`.
    pub fn set_symmetric_deformation(&mut self, d: f64) -> Result<(), PlantError> {
        let f = self.curve.force(d);
        let overlap = 2.0 * d + f / self.object.stiffness;
        let gap = self.object.nominal_width - overlap;
        if gap < 0.0 {
            return Err(PlantError::NegativeGap(gap));
        }
        let pos = [0.5 * gap; 2];
        self.state = if d <= 0.0 {
            PlantState::released(pos, [0.0; 2])
        } else {
            let b = self.curve.branch_of(d);
            let e = Equilibrium { d: [d, d], object_force: f, branches: [b, b], stable: true };
            PlantState::from_equilibrium(pos, [0.0; 2], &e, &self.curve)
        };
        self.refresh_sensors()
    }

    fn refresh_sensors(&mut self) -> Result<(), PlantError> {
        for i in 0..2 {
            let joint = self.linkage.solve_from(&self.joints[i], self.state.d[i])?;
            self.ratios[i] = ratio_of_state(&self.camera, &joint)?;
            self.joints[i] = joint;
        }
        Ok(())
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn object(&self) -> &ObjectModel {
        &self.object
    }

    pub fn friction(&self) -> &FrictionParams {
        &self.friction
    }

    pub fn controller(&self) -> &ControllerConfig {
        &self.controller
    }

    pub fn linkage(&self) -> &Linkage {
        &self.linkage
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn press_curve(&self) -> &PressCurve {
        &self.curve
    }

    pub fn slide_demand(&self) -> f64 {
        self.slide_demand
    }

    /// Half-width of the band the bang-bang loop is expected to stay in.
    pub fn widened_band(&self) -> f64 {
        self.band
    }

    /// Noise-free ratio currently seen by each finger's camera.
    pub fn ratios(&self) -> [f64; 2] {
        self.ratios
    }

    pub fn ticks_elapsed(&self) -> u64 {
        self.tick
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.controller.tick_s
    }

    pub fn snaps(&self) -> &[LoggedSnap] {
        &self.snaps
    }

    /// One control period: sense, command, move, re-solve, log.
    pub fn tick(&mut self, mode: TargetMode, input: TickInput) -> Result<[TimeSeriesRecord; 2], PlantError> {
        let tick = self.tick;
        self.advance(mode, input).map_err(|e| PlantError::Tick { tick, source: Box::new(e) })
    }

    fn advance(&mut self, mode: TargetMode, input: TickInput) -> Result<[TimeSeriesRecord; 2], PlantError> {
        let mut measured = [0.0; 2];
        let mut commands = [FingerCommand::HOLD; 2];
        let mut pos = self.state.finger_pos;
        for i in 0..2 {
            measured[i] = (self.noise[i].apply(self.ratios[i]) + input.ratio_offset[i]).max(0.0);
            commands[i] = control_step(&self.controller, measured[i], mode);
            pos[i] += commands[i].delta_d_f();
        }
        // the fingers cannot pass through each other
        for i in 0..2 {
            if pos[0] + pos[1] < 0.0 && commands[i].delta_d_f() < 0.0 {
                pos[i] = self.state.finger_pos[i];
            }
        }
        let (state, snaps) = track_equilibrium(&self.curve, &self.object, &self.state, pos, input.loads)?;
        self.state = state;
        self.refresh_sensors()?;
        self.tick += 1;
        let tick = self.tick;
        self.snaps.extend(snaps.into_iter().map(|event| LoggedSnap { tick, event }));
        let time_s = self.time_s();
        let f_max = resistible_forces(&self.friction, &self.state, Direction::Longitudinal);
        Ok(Finger::BOTH.map(|finger| {
            let i = finger.index();
            TimeSeriesRecord {
                time_s,
                finger,
                desired_state: mode,
                r_img: measured[i],
                r_target: self.controller.target(mode),
                delta_df_mm: commands[i].delta_d_f(),
                finger_pos_mm: self.state.finger_pos[i],
                deformation_mm: self.state.d[i],
                contact_state: self.friction.classify_contact_state(self.state.d[i]),
                f_n: self.state.f_n[i],
                f_max_long: f_max[i],
                slides: self.slide_demand > f_max[i],
            }
        }))
    }
}

/// Outcome of one scenario step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub name: String,
    pub target_mode: TargetMode,
    pub ticks: u64,
    /// Tick (within the step) by which both fingers first reached the
    /// deadband or crossed the target.
    pub settle_tick: Option<u64>,
    /// Share of post-settling finger samples within the widened band.
    pub band_occupancy: f64,
    /// Surface-contact steps: every post-settling tick held the tangential
    /// demand on both fingers with enough combined capacity.
    pub grasp_maintained: Option<bool>,
    /// Line-contact steps: every post-settling tick slid on both fingers while
    /// keeping contact and enough kinetic capacity.
    pub slide_achieved: Option<bool>,
    /// Smallest and largest normal force after settling (N).
    pub f_n_range: Option<(f64, f64)>,
    pub snap_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRun {
    pub records: Vec<TimeSeriesRecord>,
    pub summary: StepSummary,
}

/// Runs one step to completion on `world`.
pub fn scenario_step(world: &mut World, step: &ScenarioStep) -> Result<StepRun, PlantError> {
    let dt = world.controller.tick_s;
    let n = step.ticks(dt);
    let window = step.disturbance.as_ref().map(|d| (d.tick_range(dt), TickInput::from_disturbance(d)));
    let target = world.controller.target(step.target_mode);
    let eps = world.controller.epsilon;
    let snaps_before = world.snaps.len();

    let mut records = Vec::with_capacity(2 * n as usize);
    let mut first_sign: [Option<bool>; 2] = [None; 2];
    let mut settled_at: [Option<u64>; 2] = [None; 2];
    let mut in_band = 0usize;
    let mut post = 0usize;
    let mut hold_ok = true;
    let mut slide_ok = true;
    let mut f_range: Option<(f64, f64)> = None;

    for k in 0..n {
        let input = match window {
            Some(((a, b), inp)) if k >= a && k < b => inp,
            _ => TickInput::default(),
        };
        let rows = world.tick(step.target_mode, input)?;
        for row in &rows {
            let i = row.finger.index();
            let err = row.r_img - target;
            if settled_at[i].is_none() {
                let sign = err > 0.0;
                let crossed = first_sign[i].is_some_and(|s| s != sign);
                if err.abs() <= eps || crossed {
                    settled_at[i] = Some(k);
                }
                first_sign[i].get_or_insert(sign);
            }
        }
        if settled_at.iter().all(Option::is_some) {
            let st = world.state;
            for row in &rows {
                post += 1;
                if (row.r_img - target).abs() <= world.band {
                    in_band += 1;
                }
                let (lo, hi) = f_range.unwrap_or((f64::INFINITY, f64::NEG_INFINITY));
                f_range = Some((lo.min(row.f_n), hi.max(row.f_n)));
            }
            let fmax = resistible_forces(&world.friction, &st, Direction::Longitudinal);
            let touching = st.in_contact() && st.f_n.iter().all(|&f| f > 0.0);
            let holds = rows.iter().all(|r| !r.slides);
            let slides = rows.iter().all(|r| r.slides);
            hold_ok &= holds && grasp_maintained(&world.friction, &world.object, &st, Direction::Longitudinal);
            slide_ok &= slides
                && touching
                && world.friction.kinetic_fraction * (fmax[0] + fmax[1]) >= world.object.required_hold_force;
        }
        records.extend(rows);
    }
    let settle_tick = match settled_at {
        [Some(a), Some(b)] => Some(a.max(b)),
        _ => None,
    };
    let settled = settle_tick.is_some() && post > 0;
    let summary = StepSummary {
        name: step.name.clone(),
        target_mode: step.target_mode,
        ticks: n,
        settle_tick,
        band_occupancy: if post > 0 { in_band as f64 / post as f64 } else { 0.0 },
        grasp_maintained: (step.target_mode == TargetMode::Sc).then_some(settled && hold_ok),
        slide_achieved: (step.target_mode == TargetMode::Lc).then_some(settled && slide_ok),
        f_n_range: f_range,
        snap_count: world.snaps.len() - snaps_before,
    };
    Ok(StepRun { records, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub records: Vec<TimeSeriesRecord>,
    pub steps: Vec<StepSummary>,
    pub snaps: Vec<LoggedSnap>,
}

impl ScenarioRun {
    pub fn csv(&self) -> String {
        records_to_csv(&self.records)
    }

    /// Every surface-contact step kept the grasp and every line-contact step slid.
    pub fn succeeded(&self) -> bool {
        self.steps.iter().all(|s| s.grasp_maintained.unwrap_or(true) && s.slide_achieved.unwrap_or(true))
    }

    /// Human-readable summary block.
    pub fn summary_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let outcome = match (s.grasp_maintained, s.slide_achieved) {
                (Some(g), _) => format!("grasp_maintained={g}"),
                (_, Some(sl)) => format!("slide_achieved={sl}"),
                _ => String::new(),
            };
            let settle = s.settle_tick.map_or("never".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "step {} {} target={} ticks={} settle_tick={} band_occupancy={:.4} {} snaps={}",
                i + 1,
                s.name,
                s.target_mode.label(),
                s.ticks,
                settle,
                s.band_occupancy,
                outcome,
                s.snap_count
            );
        }
        let _ = writeln!(out, "result={}", if self.succeeded() { "success" } else { "failure" });
        out
    }
}

pub fn run_scenario(world: &mut World, scenario: &Scenario) -> Result<ScenarioRun, PlantError> {
    scenario.validate()?;
    let snaps_before = world.snaps.len();
    let mut records = Vec::new();
    let mut steps = Vec::with_capacity(scenario.steps.len());
    for step in &scenario.steps {
        let run = scenario_step(world, step)?;
        records.extend(run.records);
        steps.push(run.summary);
    }
    Ok(ScenarioRun { records, steps, snaps: world.snaps[snaps_before..].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> PressCurve {
        FrictionParams::default().press_curve()
    }

    #[test]
    fn wide_gap_is_no_contact() {
        let obj = ObjectModel::default();
        let r = equilibrium_solve(&curve(), &obj, [4.5, 4.5], &BranchMemory::default(), [0.0; 2]);
        assert!(matches!(r, Err(PlantError::NoContact { .. })));
        let r = equilibrium_solve(&curve(), &obj, [-1.0, 0.5], &BranchMemory::default(), [0.0; 2]);
        assert!(matches!(r, Err(PlantError::NegativeGap(_))));
    }

    #[test]
    fn rigid_symmetric_split() {
        let obj = ObjectModel { stiffness: 1e9, ..Default::default() };
        let st = equilibrium_solve(&curve(), &obj, [3.6, 3.6], &BranchMemory::default(), [0.0; 2]).unwrap();
        assert!((st.d[0] - 0.4).abs() < 1e-6 && (st.d[1] - 0.4).abs() < 1e-6, "{:?}", st.d);
    }

    #[test]
    fn balance_and_closure() {
        let obj = ObjectModel::default();
        for gap in [7.5, 6.0, 4.0, 2.0, 0.5] {
            let st =
                equilibrium_solve(&curve(), &obj, [0.5 * gap, 0.5 * gap], &BranchMemory::default(), [0.0; 2]).unwrap();
            assert!(st.force_residual() < 1e-7);
            assert!(st.closure_residual(&obj) < 1e-7);
            assert!((st.f_n[0] - st.object_force).abs() < 1e-7);
        }
    }

    #[test]
    fn extra_load_shifts_balance() {
        let obj = ObjectModel::default();
        let st = equilibrium_solve(&curve(), &obj, [3.0, 3.0], &BranchMemory::default(), [0.3, 0.0]).unwrap();
        assert!((st.f_n[0] - st.f_n[1] - 0.3).abs() < 1e-7);
        assert!(st.closure_residual(&obj) < 1e-7);
    }

    #[test]
    fn slide_examples() {
        let p = FrictionParams::default();
        let released = PlantState::released([5.0, 5.0], [0.0; 2]);
        assert_eq!(slide_check(&p, &released, Direction::Longitudinal, 0.2), [SlideOutcome::Slides; 2]);
        let obj = ObjectModel::default();
        let st = equilibrium_solve(&curve(), &obj, [0.0, 0.0], &BranchMemory::default(), [0.0; 2]).unwrap();
        assert_eq!(p.classify_contact_state(st.d[0]), ContactState::Sc);
        assert_eq!(slide_check(&p, &st, Direction::Longitudinal, 0.0), [SlideOutcome::Holds; 2]);
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario { steps: vec![] }.validate().is_err());
        let zero = r#"{"steps":[{"name":"a","target_mode":"SC","duration_s":0}]}"#;
        assert!(Scenario::from_json(zero).is_err());
        let unknown = r#"{"steps":[{"name":"a","target_mode":"SC","duration_s":1,"extra":1}]}"#;
        assert!(Scenario::from_json(unknown).is_err());
        let ok = r#"{"steps":[{"name":"a","target_mode":"LC","duration_s":1,
            "disturbance":{"kind":"normal_force","finger":"left","start_s":0.5,"duration_s":0.2,"force_n":0.4}}]}"#;
        assert!(Scenario::from_json(ok).is_ok());
        Scenario::tube().validate().unwrap();
    }
}
