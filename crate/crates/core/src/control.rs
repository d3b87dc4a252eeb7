//! Three-level deadband law driving each finger's red-area ratio toward the
//! target of the desired contact mode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::Linkage;
use crate::sensing::{red_area_ratio, CameraModel, SensingError};

/// Upper bound on a configurable target; ratios above 1 appear under excessive load.
pub const MAX_TARGET_RATIO: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("negative red-area ratio {0}")]
    NegativeRatio(f64),
}

/// Contact mode a finger is asked to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetMode {
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "SC")]
    Sc,
}

impl TargetMode {
    pub fn label(self) -> &'static str {
        match self {
            TargetMode::Lc => "LC",
            TargetMode::Sc => "SC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub r_target_lc: f64,
    pub r_target_sc: f64,
    /// Deadband half-width as a ratio (0.005 = 0.5 percentage points).
    pub epsilon: f64,
    /// Finger displacement when the ratio is above the band (mm, opening).
    pub step_open: f64,
    /// Finger displacement when the ratio is below the band (mm, closing).
    pub step_close: f64,
    /// Control period (s); one law evaluation per tick.
    pub tick_s: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { r_target_lc: 0.40, r_target_sc: 1.00, epsilon: 0.005, step_open: 0.25, step_close: -0.5, tick_s: 0.1 }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidConfig(m.to_string()));
        let all = [self.r_target_lc, self.r_target_sc, self.epsilon, self.step_open, self.step_close, self.tick_s];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.step_open <= 0.0 {
            return bad("step_open must be positive");
        }
        if self.step_close >= 0.0 {
            return bad("step_close must be negative");
        }
        if self.step_close.abs() <= self.step_open {
            return bad("closing step must be larger in magnitude than the opening step");
        }
        if !(0.0 < self.r_target_lc && self.r_target_lc < self.r_target_sc && self.r_target_sc <= MAX_TARGET_RATIO) {
            return bad("need 0 < r_target_lc < r_target_sc <= 1.5");
        }
        if self.tick_s <= 0.0 {
            return bad("tick_s must be positive");
        }
        Ok(())
    }

    pub fn target(&self, mode: TargetMode) -> f64 {
        match mode {
            TargetMode::Lc => self.r_target_lc,
            TargetMode::Sc => self.r_target_sc,
        }
    }
}

/// Commanded displacement of one finger (mm, opening positive).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct FingerCommand(pub f64);

impl FingerCommand {
    pub const HOLD: FingerCommand = FingerCommand(0.0);

    pub fn delta_d_f(self) -> f64 {
        self.0
    }
}

/// Open when the ratio is above the band, close when below, otherwise hold.
pub fn control_step(cfg: &ControllerConfig, r_img: f64, mode: TargetMode) -> FingerCommand {
    let error = r_img - cfg.target(mode);
    if error > cfg.epsilon {
        FingerCommand(cfg.step_open)
    } else if error < -cfg.epsilon {
        FingerCommand(cfg.step_close)
    } else {
        FingerCommand::HOLD
    }
}

/// Like [`control_step`] but rejects negative ratios.
pub fn try_control_step(cfg: &ControllerConfig, r_img: f64, mode: TargetMode) -> Result<FingerCommand, ControlError> {
    if r_img < 0.0 || r_img.is_nan() {
        return Err(ControlError::NegativeRatio(r_img));
    }
    Ok(control_step(cfg, r_img, mode))
}

/// Each finger is commanded independently from its own ratio.
pub fn dual_finger_step(
    cfg: &ControllerConfig,
    r_left: f64,
    r_right: f64,
    mode: TargetMode,
) -> (FingerCommand, FingerCommand) {
    (control_step(cfg, r_left, mode), control_step(cfg, r_right, mode))
}

/// Largest ratio change one closing step can cause on the calibrated curve:
/// `max |r(d + |step_close|) - r(d)|` over `d` in `[0, d_sc]` at 0.01 mm.
pub fn ratio_step_bound(cfg: &ControllerConfig, cam: &CameraModel, linkage: &Linkage) -> Result<f64, SensingError> {
    let step = cfg.step_close.abs().max(cfg.step_open);
    let d_sc = linkage.geometry().d_sc;
    let d_max = linkage.deformation_limits().1;
    let n = (d_sc / 0.01).round() as usize;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let d = (i as f64 * 0.01).min(d_sc);
        let hi = (d + step).min(d_max);
        let change = (red_area_ratio(cam, linkage, hi)? - red_area_ratio(cam, linkage, d)?).abs();
        worst = worst.max(change);
    }
    Ok(worst)
}

/// Half-width of the band a bang-bang loop can be held to: `epsilon + ratio_step_bound`.
pub fn widened_band(cfg: &ControllerConfig, cam: &CameraModel, linkage: &Linkage) -> Result<f64, SensingError> {
    Ok(cfg.epsilon + ratio_step_bound(cfg, cam, linkage)?)
}
