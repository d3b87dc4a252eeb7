//! Single JSON document configuring every part of the simulation. Every
//! section and field is optional; `{}` runs the default fingertip.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, ControllerConfig};
use crate::friction::{FrictionError, FrictionParams};
use crate::kinematics::{CavsGeometry, KinematicsError, Linkage};
use crate::plant::{ObjectModel, PlantError, World};
use crate::sensing::{calibrate_sc_reference, CameraModel, SensingError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("geometry: {0}")]
    Geometry(#[from] KinematicsError),
    #[error("camera: {0}")]
    Camera(#[from] SensingError),
    #[error("friction: {0}")]
    Friction(#[from] FrictionError),
    #[error("controller: {0}")]
    Controller(#[from] ControlError),
    #[error("object: {0}")]
    Object(#[from] PlantError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: CavsGeometry,
    pub camera: CameraModel,
    pub friction: FrictionParams,
    pub controller: ControllerConfig,
    pub object: ObjectModel,
    pub seed: u64,
}

/// A validated configuration with its calibrated sensing chain.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: Config,
    pub linkage: Linkage,
    pub camera: CameraModel,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks every section and calibrates the camera.
    pub fn validate(&self) -> Result<Validated, ConfigError> {
        self.friction.validate()?;
        self.controller.validate()?;
        self.object.validate()?;
        self.camera.validate()?;
        let linkage = Linkage::new(self.geometry.clone())?;
        let camera = calibrate_sc_reference(&self.camera, &linkage)?;
        Ok(Validated { config: self.clone(), linkage, camera })
    }

    pub fn world(&self) -> Result<World, PlantError> {
        World::new(
            self.geometry.clone(),
            self.camera.clone(),
            self.friction.clone(),
            self.controller.clone(),
            self.object.clone(),
            self.seed,
        )
    }
}
