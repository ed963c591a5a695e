mod adam;
mod checkpoint;
mod mlp;
mod params;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use checkpoint::{Checkpoint, Record, TensorData, MAGIC, VERSION};
pub use mlp::{rows_to_array, sigmoid, softplus, Activation, Head, Mlp, MlpOutput, MlpSpec, OutputActivation, Tape};
pub use params::{ParamStore, TensorInfo};
