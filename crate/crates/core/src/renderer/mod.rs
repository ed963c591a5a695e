mod camera;
mod image;
mod lobe;
mod sampling;
mod volume;

pub use camera::{generate_lobe_ray, look_at, Camera, IDENTITY4};
pub use image::{render_image, EnvView, Geometry, NoGeometry, ObjectMode, ObjectView, PlacedSphere, Placement};
pub use lobe::{
    background_lobe, backward_level, composite, environment_in_front, render_background_pixel, render_environment,
    render_level, render_object_pixel, render_specular, specular_lobe, trace, LevelRender, Lobe, RenderSettings,
    SurfaceSample, Traced,
};
pub use sampling::{sample_coarse, sample_fine, SegmentSet};
pub use volume::{volume_render, volume_render_backward, VolumeOutput};
