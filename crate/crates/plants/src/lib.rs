//! Simulated plants and their (deliberately mismatched) models: the scalar
//! and low-dimensional mathematical example families, the submodel-network
//! study instances, the Williams-Otto reactor and the recycled
//! Williams-Otto plant, plus disturbance scripting and seeded measurement
//! noise.

pub mod disturbance;
pub mod examples;
pub mod noise;
pub mod studies;
pub mod wo_plant;
pub mod wo_reactor;

pub use disturbance::{DisturbanceScript, Step};
pub use examples::{instantiate_example, ExampleBundle};
pub use noise::ChannelNoise;
pub use studies::{
    study1_bundle, study1_instance, study2_instance, study3_instance, study4_instance,
    StudyInstance,
};
pub use wo_plant::{wo_plant_steady_state, WoPlantModel, WoPlantSim};
pub use wo_reactor::{wo_reactor_steady_state, WoMode, WoReactorModel, WoReactorSim};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("unknown example '{0}'")]
    UnknownExample(String),

    #[error("steady-state solve failed: {0}")]
    SteadyState(String),

    #[error(transparent)]
    Core(#[from] rto_core::CoreError),
}
