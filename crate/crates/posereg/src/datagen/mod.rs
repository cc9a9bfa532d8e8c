//! Ground-truth data supply: synthetic scene rendering, trajectory
//! sampling, preprocessing, and dataset file I/O.

pub mod image;
pub mod labels;
pub mod preprocess;
pub mod scene;
pub mod scenefile;

pub use image::{read_ppm, write_pgm, write_ppm, Image};
pub use labels::{read_label_file, write_label_file, LABEL_HEADER};
pub use preprocess::{
    compute_scene_mean, crop, dense_grid_shape, gaussian_blur, rescale_shortest_side,
    scale_brightness, subtract_mean, Crop, CropMode, CropSpec,
};
pub use scene::{
    generate_scene, interpolation_split, look_at_orientation, project_point, render_view,
    sample_trajectory, Intrinsics, Landmark, PoseSample, SceneSpec, DEFAULT_FOCAL_PX,
    DEFAULT_RENDER_HEIGHT, DEFAULT_RENDER_WIDTH,
};
pub use scenefile::{read_scene_spec, write_scene_spec};
