pub mod analytic;
pub mod io;
pub mod synth;

pub use analytic::{preset, AnalyticAmbient, AnalyticMaterial, MaterialField, Sphere};
pub use io::{load_scene, save_scene, Dataset, Frame, Raster, SceneManifest, Split};
pub use synth::{analytic_render, dense_lobe_render, generate_synth, AnalyticObject, SynthConfig};
