//! Embedded-camera view of the red strip.
//!
//! The camera looks along +y; the strip projects to `w_x = l_r cos(gamma)`
//! and lands on the image with width `f w_x / p_Dy`. Normalising by the width
//! seen at `d_sc` removes both the focal length and the strip length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{projected_width_wx, visible_cos, CavsGeometry, JointState, KinematicsError, Linkage};

/// A pixel counts as red iff `R >= 200`, `G <= 50` and `B <= 50`.
pub const RED_MIN_R: u8 = 200;
pub const RED_MAX_GB: u8 = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensingError {
    #[error("red strip is behind the camera (p_Dy = {0} mm)")]
    BehindCamera(f64),
    #[error("camera has no surface-contact reference; calibrate first")]
    NotCalibrated,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("malformed PPM: {0}")]
    MalformedPpm(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Reference captured at `d = d_sc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScReference {
    pub w_sc_img: f64,
    pub depth: f64,
    pub cos_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub focal_px: f64,
    pub image_width_px: u32,
    pub image_height_px: u32,
    /// Standard deviation of additive ratio noise in percentage points.
    pub noise_std_pct: f64,
    #[serde(skip)]
    pub reference: Option<ScReference>,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { focal_px: 300.0, image_width_px: 320, image_height_px: 240, noise_std_pct: 0.0, reference: None }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SensingError> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(SensingError::InvalidCamera(format!("focal_px must be positive, got {}", self.focal_px)));
        }
        if self.image_width_px < 16 || self.image_height_px < 16 {
            return Err(SensingError::InvalidCamera("image dimensions must be at least 16 px".into()));
        }
        if !(self.noise_std_pct.is_finite() && self.noise_std_pct >= 0.0) {
            return Err(SensingError::InvalidCamera("noise_std_pct must be >= 0".into()));
        }
        Ok(())
    }

    /// `w_SCimg` once calibrated.
    pub fn w_sc_img(&self) -> Option<f64> {
        self.reference.map(|r| r.w_sc_img)
    }
}

/// Image-plane width of the red strip in pixels.
pub fn image_width_wimg(cam: &CameraModel, state: &JointState, geom: &CavsGeometry) -> Result<f64, SensingError> {
    let depth = state.depth();
    if depth <= 0.0 {
        return Err(SensingError::BehindCamera(depth));
    }
    Ok(cam.focal_px / depth * projected_width_wx(state, geom))
}

/// Records the surface-contact reference; calibrating again recomputes the
/// same value.
pub fn calibrate_sc_reference(cam: &CameraModel, linkage: &Linkage) -> Result<CameraModel, SensingError> {
    cam.validate()?;
    let geom = linkage.geometry();
    let sc = linkage.solve_joint_angles(geom.d_sc)?;
    let w = image_width_wimg(cam, &sc, geom)?;
    if w <= 0.0 {
        return Err(SensingError::InvalidCamera("no visible red strip at d_sc".into()));
    }
    Ok(CameraModel {
        reference: Some(ScReference { w_sc_img: w, depth: sc.depth(), cos_gamma: sc.gamma.cos() }),
        ..cam.clone()
    })
}

/// Ratio of the visible red width at `state` to the calibrated reference,
/// evaluated in the form where focal length and strip length cancel.
pub fn ratio_of_state(cam: &CameraModel, state: &JointState) -> Result<f64, SensingError> {
    let reference = cam.reference.ok_or(SensingError::NotCalibrated)?;
    let depth = state.depth();
    if depth <= 0.0 {
        return Err(SensingError::BehindCamera(depth));
    }
    Ok((reference.depth / depth) * (visible_cos(state.gamma) / reference.cos_gamma))
}

/// Normalised red-area ratio `r_img` at deformation `d` (1.0 = surface contact).
pub fn red_area_ratio(cam: &CameraModel, linkage: &Linkage, d: f64) -> Result<f64, SensingError> {
    if cam.reference.is_none() {
        return Err(SensingError::NotCalibrated);
    }
    let state = linkage.solve_joint_angles(d)?;
    ratio_of_state(cam, &state)
}

/// Seeded additive Gaussian noise on reported ratios.
#[derive(Debug, Clone)]
pub struct RatioNoise {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl RatioNoise {
    pub fn new(std_pct: f64, seed: u64) -> Self {
        let normal = (std_pct > 0.0).then(|| Normal::new(0.0, std_pct / 100.0).expect("finite std"));
        Self { rng: ChaCha8Rng::seed_from_u64(seed), normal }
    }

    pub fn apply(&mut self, ratio: f64) -> f64 {
        match &self.normal {
            Some(n) => (ratio + n.sample(&mut self.rng)).max(0.0),
            None => ratio,
        }
    }
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl SyntheticFrame {
    pub fn blank(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![255; width as usize * height as usize * 3] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, SensingError> {
        let bad = |m: &str| SensingError::MalformedPpm(m.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ASCII"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("magic is not P6"));
        }
        let parse = |s: &str| s.parse::<u32>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 supported"));
        }
        pos += 1;
        let n = width as usize * height as usize * 3;
        if bytes.len() < pos + n {
            return Err(bad("pixel data truncated"));
        }
        Ok(Self { width, height, pixels: bytes[pos..pos + n].to_vec() })
    }
}

/// Renders the camera view at deformation `d`: a pure-red band of
/// `round(w_img)` columns centred on a white background, spanning the middle
/// third of the rows. Widths below half a pixel render no red column; the
/// band is clipped to the image width.
pub fn render_synthetic_frame(cam: &CameraModel, linkage: &Linkage, d: f64) -> Result<SyntheticFrame, SensingError> {
    if cam.reference.is_none() {
        return Err(SensingError::NotCalibrated);
    }
    let state = linkage.solve_joint_angles(d)?;
    let w = image_width_wimg(cam, &state, linkage.geometry())?;
    Ok(render_band(cam, w))
}

pub fn band_columns(cam: &CameraModel, w_img: f64) -> u32 {
    (w_img.max(0.0).round() as u32).min(cam.image_width_px)
}

fn render_band(cam: &CameraModel, w_img: f64) -> SyntheticFrame {
    let mut frame = SyntheticFrame::blank(cam.image_width_px, cam.image_height_px);
    let cols = band_columns(cam, w_img);
    let x0 = (cam.image_width_px - cols) / 2;
    let (y0, y1) = (cam.image_height_px / 3, 2 * cam.image_height_px / 3);
    for y in y0..y1 {
        for x in x0..x0 + cols {
            frame.set(x, y, [255, 0, 0]);
        }
    }
    frame
}

fn is_red([r, g, b]: [u8; 3]) -> bool {
    r >= RED_MIN_R && g <= RED_MAX_GB && b <= RED_MAX_GB
}

/// Counts the columns holding at least one red pixel and divides by `w_SCimg`.
/// A frame without red gives 0.
pub fn detect_red_ratio(frame: &SyntheticFrame, cam: &CameraModel) -> Result<f64, SensingError> {
    let w_sc = cam.w_sc_img().ok_or(SensingError::NotCalibrated)?;
    let red_cols = (0..frame.width).filter(|&x| (0..frame.height).any(|y| is_red(frame.pixel(x, y)))).count();
    Ok(red_cols as f64 / w_sc)
}
