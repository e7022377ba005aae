use std::f64::consts::FRAC_PI_2;

/// Unit heading vector. Multiples of π/2 map to exact axis vectors so that
/// mirrored scenes stay bit-symmetric.
pub fn heading_vec(heading: f64) -> (f64, f64) {
    let quarters = heading / FRAC_PI_2;
    let k = quarters.round();
    if (quarters - k).abs() < 1e-12 {
        match (k as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (heading.cos(), heading.sin())
    }
}

/// Longitudinal limits shared by both vehicles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    /// m/s² at full torque.
    pub a_max: f64,
    /// m/s.
    pub top_speed: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            a_max: 5.0,
            top_speed: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    /// Centre position, metres, world frame.
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
    /// Normalized torque command in [0, 1].
    pub torque_cmd: f64,
    /// Go (true) or stop (false).
    pub accelerator: bool,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn parked(x: f64, y: f64, heading: f64, length: f64, width: f64) -> Self {
        VehicleState {
            x,
            y,
            heading,
            speed: 0.0,
            torque_cmd: 0.0,
            accelerator: false,
            length,
            width,
        }
    }

    /// Advances one step with exact integration of the capped
    /// constant-acceleration profile. Roads are straight, so the heading
    /// never changes.
    pub fn step(&self, dt: f64, dynamics: &Dynamics) -> VehicleState {
        let v0 = self.speed;
        let accel = if self.accelerator {
            dynamics.a_max * self.torque_cmd
        } else {
            0.0
        };
        let (v1, dist) = if accel > 0.0 && v0 < dynamics.top_speed {
            let t_cap = (dynamics.top_speed - v0) / accel;
            if t_cap >= dt {
                let v1 = (v0 + accel * dt).min(dynamics.top_speed);
                (v1, v0 * dt + 0.5 * accel * dt * dt)
            } else {
                let ramp = v0 * t_cap + 0.5 * accel * t_cap * t_cap;
                (dynamics.top_speed, ramp + dynamics.top_speed * (dt - t_cap))
            }
        } else {
            (v0, v0 * dt)
        };
        let (hx, hy) = heading_vec(self.heading);
        VehicleState {
            x: self.x + hx * dist,
            y: self.y + hy * dist,
            speed: v1,
            ..*self
        }
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (hx, hy) = heading_vec(self.heading);
        let (l, w) = (self.length / 2.0, self.width / 2.0);
        let (lx, ly) = (-hy, hx);
        [
            (self.x + hx * l + lx * w, self.y + hy * l + ly * w),
            (self.x + hx * l - lx * w, self.y + hy * l - ly * w),
            (self.x - hx * l - lx * w, self.y - hy * l - ly * w),
            (self.x - hx * l + lx * w, self.y - hy * l + ly * w),
        ]
    }
}

/// Advances both vehicles by `dt`.
pub fn step_world(world: (VehicleState, VehicleState), dt: f64, dynamics: &Dynamics) -> (VehicleState, VehicleState) {
    assert!(dt > 0.0, "time step must be positive");
    (world.0.step(dt, dynamics), world.1.step(dt, dynamics))
}

/// Separating-axis test on the two oriented footprints. Touching edges do
/// not count; the overlap must have positive area.
pub fn detect_collision(a: &VehicleState, b: &VehicleState) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = {
        let (ax, ay) = heading_vec(a.heading);
        let (bx, by) = heading_vec(b.heading);
        [(ax, ay), (-ay, ax), (bx, by), (-by, bx)]
    };
    axes.iter().all(|&(nx, ny)| {
        let project = |cs: &[(f64, f64); 4]| {
            cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                let d = x * nx + y * ny;
                (lo.min(d), hi.max(d))
            })
        };
        let (a_lo, a_hi) = project(&ca);
        let (b_lo, b_hi) = project(&cb);
        a_lo.max(b_lo) < a_hi.min(b_hi)
    })
}

pub fn center_distance(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}
