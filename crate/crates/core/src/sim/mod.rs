//! Two-vehicle intersection simulator with straight-line kinematics,
//! oriented-rectangle collision checks and a flat-shaded pinhole renderer.

mod camera;
mod image;
mod scenario;
mod vehicle;

pub use camera::{render_camera, Camera, CameraSpec, BOX_HEIGHT, GROUND, SKY, VEHICLE};
pub use image::{quantize, GrayImage};
pub use scenario::{
    dump_episode, find_delay_threshold, label_for_delay, run_scenario, simulate, Episode, EpisodeFrame, Label,
    Scenario, ScenarioSpec, SimGeometry, Trajectory,
};
pub use vehicle::{center_distance, detect_collision, heading_vec, step_world, Dynamics, VehicleState};
