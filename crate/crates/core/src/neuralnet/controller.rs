use super::{InferencePath, QMlpModel};
use crate::error::{Error, Result};
use crate::evaluation::{CarController, CartpoleController};
use crate::imitation::{car_features, cartpole_features, PlantKind};
use crate::nmpc::CartpoleTarget;
use crate::plants::{CarCommand, CartpoleState, CarState};
use crate::raceline::Raceline;

fn require(model: &QMlpModel, plant: PlantKind) -> Result<()> {
    match model.plant() {
        Some(p) if p == plant => Ok(()),
        other => Err(Error::Config(format!("model is for {other:?}, not {plant:?}"))),
    }
}

/// Neural cartpole controller.
#[derive(Debug, Clone)]
pub struct NcCartpole {
    pub model: QMlpModel,
    pub path: InferencePath,
}

impl NcCartpole {
    pub fn new(model: QMlpModel, path: InferencePath) -> Result<Self> {
        require(&model, PlantKind::Cartpole)?;
        Ok(Self { model, path })
    }
}

impl CartpoleController for NcCartpole {
    fn control(&mut self, observed: &CartpoleState, target: CartpoleTarget) -> Result<f64> {
        let u = self.model.predict(&cartpole_features(observed, target), self.path)?;
        Ok(u[0].clamp(-1.0, 1.0))
    }
}

/// Neural car controller; its output already accounts for the actuation delay.
#[derive(Debug, Clone)]
pub struct NcCar {
    pub model: QMlpModel,
    pub path: InferencePath,
}

impl NcCar {
    pub fn new(model: QMlpModel, path: InferencePath) -> Result<Self> {
        require(&model, PlantKind::Car)?;
        Ok(Self { model, path })
    }
}

impl CarController for NcCar {
    fn control(&mut self, car: &CarState, line: &Raceline, speed_factor: f64) -> Result<CarCommand> {
        let y = self.model.predict(&car_features(car, line, speed_factor)?, self.path)?;
        Ok(CarCommand::new(y[0], y[1]))
    }
}
