use std::fmt;
use std::str::FromStr;

use super::vehicle::{heading_vec, VehicleState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Height of the rendered box around the other vehicle, metres.
pub const BOX_HEIGHT: f64 = 1.5;
pub const GROUND: f64 = 0.25;
pub const SKY: f64 = 0.0;
pub const VEHICLE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Camera {
    LeftMirror,
    Dashcam,
    RightMirror,
}

impl Camera {
    pub const ALL: [Camera; 3] = [Camera::LeftMirror, Camera::Dashcam, Camera::RightMirror];

    pub fn name(self) -> &'static str {
        match self {
            Camera::LeftMirror => "left_mirror",
            Camera::Dashcam => "dashcam",
            Camera::RightMirror => "right_mirror",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Camera> {
        Camera::ALL.get(i).copied()
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Camera {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "left_mirror" | "left" => Ok(Camera::LeftMirror),
            "dashcam" | "dash" => Ok(Camera::Dashcam),
            "right_mirror" | "right" => Ok(Camera::RightMirror),
            other => Err(Error::InvalidArgument(format!("unknown camera '{other}'"))),
        }
    }
}

/// Pinhole camera rigidly mounted on the sensor vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSpec {
    pub camera: Camera,
    /// Vehicle frame: x forward, y left, z up.
    pub mount: [f64; 3],
    /// Radians; positive turns the view to the right.
    pub yaw_offset: f64,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub rows: usize,
    pub cols: usize,
}

impl CameraSpec {
    pub fn default_for(camera: Camera, rows: usize, cols: usize) -> CameraSpec {
        let quarter = std::f64::consts::FRAC_PI_4;
        let (mount, yaw_offset) = match camera {
            Camera::LeftMirror => ([-0.9, 0.7, 1.0], -quarter),
            Camera::Dashcam => ([0.5, 0.0, 1.2], 0.0),
            Camera::RightMirror => ([-0.9, -0.7, 1.0], quarter),
        };
        CameraSpec {
            camera,
            mount,
            yaw_offset,
            fov: std::f64::consts::FRAC_PI_2,
            rows,
            cols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "{}: field of view {} outside (0, π)",
                self.camera, self.fov
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}: resolution must be positive",
                self.camera
            )));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        (self.cols as f64 / 2.0) / (self.fov / 2.0).tan()
    }
}

/// Ray parameter interval against the axis-aligned box `[lo, hi]`.
fn ray_hits_box(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> bool {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return false;
            }
            continue;
        }
        let (mut t1, mut t2) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        t_near = t_near.max(t1);
        t_far = t_far.min(t2);
    }
    t_near <= t_far && t_far > 0.0
}

/// Renders the other vehicle as a flat white box over a ground/sky
/// background by casting one ray through each pixel centre.
pub fn render_camera(world: (&VehicleState, &VehicleState), cam: &CameraSpec) -> Tensor {
    let (sensor, other) = world;
    let (hx, hy) = heading_vec(sensor.heading);
    let (c, s) = (cam.yaw_offset.cos(), cam.yaw_offset.sin());
    // Forward and right in the ground plane.
    let (fx, fy) = (hx * c + hy * s, hy * c - hx * s);
    let (rx, ry) = (fy, -fx);

    let [mx, my, mz] = cam.mount;
    // Camera origin relative to the other vehicle's centre, then expressed
    // in that vehicle's frame.
    let rel = (
        sensor.x - other.x + hx * mx - hy * my,
        sensor.y - other.y + hy * mx + hx * my,
    );
    let (ux, uy) = heading_vec(other.heading);
    let to_local = |x: f64, y: f64| (x * ux + y * uy, y * ux - x * uy);
    let (ox, oy) = to_local(rel.0, rel.1);
    let origin = [ox, oy, mz];
    let lo = [-other.length / 2.0, -other.width / 2.0, 0.0];
    let hi = [other.length / 2.0, other.width / 2.0, BOX_HEIGHT];

    let f = cam.focal_px();
    let (half_r, half_c) = (cam.rows as f64 / 2.0, cam.cols as f64 / 2.0);
    let mut data = Vec::with_capacity(cam.rows * cam.cols);
    for row in 0..cam.rows {
        let b = (half_r - (row as f64 + 0.5)) / f;
        for col in 0..cam.cols {
            let a = (col as f64 + 0.5 - half_c) / f;
            let (dx, dy) = to_local(fx + a * rx, fy + a * ry);
            let v = if ray_hits_box(origin, [dx, dy, b], lo, hi) {
                VEHICLE
            } else if b < 0.0 {
                GROUND
            } else {
                SKY
            };
            data.push(v);
        }
    }
    Tensor::new(vec![cam.rows, cam.cols, 1], data).expect("consistent shape")
}
