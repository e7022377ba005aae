use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use super::camera::{render_camera, Camera, CameraSpec};
use super::image::GrayImage;
use super::vehicle::{center_distance, detect_collision, step_world, Dynamics, VehicleState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    /// Crossing traffic approaching from the sensor vehicle's right.
    FromRight = 1,
    /// Crossing traffic from the left; the mirror image of `FromRight`.
    FromLeft = 2,
    /// Oncoming traffic in the other lane.
    HeadOnMiss = 3,
    /// Oncoming traffic in the sensor vehicle's lane.
    HeadOnCollision = 4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::FromRight,
        Scenario::FromLeft,
        Scenario::HeadOnMiss,
        Scenario::HeadOnCollision,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Scenario> {
        Scenario::ALL
            .get((id as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("scenario id must be 1..4, got {id}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Collision,
    NoCollision,
}

impl Label {
    /// Index of this class in the network's softmax output.
    pub fn class_index(self) -> usize {
        match self {
            Label::Collision => 0,
            Label::NoCollision => 1,
        }
    }

    /// Encoding used in dataset files: collision = 1.
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Collision => 1,
            Label::NoCollision => 0,
        }
    }

    pub fn from_byte(b: u8) -> Option<Label> {
        match b {
            1 => Some(Label::Collision),
            0 => Some(Label::NoCollision),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Collision => "collision",
            Label::NoCollision => "no_collision",
        }
    }
}

/// Intersection layout shared by all scenarios.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimGeometry {
    /// Distance from a road's centre line to the centre of each lane.
    pub lane_offset: f64,
    pub start_distance: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub dynamics: Dynamics,
}

impl Default for SimGeometry {
    fn default() -> Self {
        SimGeometry {
            lane_offset: 2.0,
            start_distance: 40.0,
            vehicle_length: 4.5,
            vehicle_width: 2.0,
            dynamics: Dynamics::default(),
        }
    }
}

impl SimGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("start_distance", self.start_distance),
            ("vehicle_length", self.vehicle_length),
            ("vehicle_width", self.vehicle_width),
            ("a_max", self.dynamics.a_max),
            ("top_speed", self.dynamics.top_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lane_offset >= 0.0) {
            return Err(Error::InvalidArgument("lane_offset must be non-negative".into()));
        }
        Ok(())
    }

    /// Starting poses `(sensor, other)`. The sensor drives north in the
    /// right-hand lane from `start_distance` south of the centre. Crossing
    /// traffic starts at the same path distance from the conflict point as
    /// the sensor, so the two crossing scenarios mirror each other about the
    /// sensor's lane.
    pub fn initial_world(&self, scenario: Scenario) -> (VehicleState, VehicleState) {
        let (l, w) = (self.vehicle_length, self.vehicle_width);
        let lane = self.lane_offset;
        let d = self.start_distance;
        let sensor = VehicleState::parked(lane, -d, FRAC_PI_2, l, w);
        let other = match scenario {
            Scenario::FromRight => VehicleState::parked(lane + (d + lane), lane, PI, l, w),
            Scenario::FromLeft => VehicleState::parked(lane - (d + lane), lane, 0.0, l, w),
            Scenario::HeadOnMiss => VehicleState::parked(-lane, d, -FRAC_PI_2, l, w),
            Scenario::HeadOnCollision => VehicleState::parked(lane, d, -FRAC_PI_2, l, w),
        };
        (sensor, other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Seconds before the sensor vehicle is commanded to go.
    pub delay: f64,
    pub dt: f64,
    pub max_duration: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, delay: f64) -> ScenarioSpec {
        ScenarioSpec {
            scenario,
            delay,
            dt: 0.05,
            max_duration: 12.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            return Err(Error::InvalidArgument(format!("delay must be ≥ 0, got {}", self.delay)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.max_duration >= 0.0 && self.max_duration.is_finite()) {
            return Err(Error::InvalidArgument("max duration must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Index of the last frame allowed by `max_duration`.
    pub fn last_index(&self) -> usize {
        (self.max_duration / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeFrame {
    pub index: usize,
    /// Exactly `index·dt`.
    pub time: f64,
    pub images: Vec<(Camera, GrayImage)>,
    pub sensor: VehicleState,
    pub other: VehicleState,
    /// The sensor's accelerator command at this frame.
    pub action: bool,
}

impl EpisodeFrame {
    pub fn image(&self, cam: Camera) -> Option<&GrayImage> {
        self.images.iter().find(|(c, _)| *c == cam).map(|(_, img)| img)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub spec: ScenarioSpec,
    pub frames: Vec<EpisodeFrame>,
    pub label: Label,
    /// Collision time, or time of closest approach.
    pub event_time: f64,
    pub event_index: usize,
}

/// Kinematic trace without rendering.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<(VehicleState, VehicleState)>,
    pub actions: Vec<bool>,
    pub collided: bool,
    pub event_index: usize,
}

pub fn simulate(spec: &ScenarioSpec, geometry: &SimGeometry) -> Result<Trajectory> {
    spec.validate()?;
    geometry.validate()?;
    let (mut sensor, mut other) = geometry.initial_world(spec.scenario);
    other.accelerator = true;
    other.torque_cmd = 1.0;

    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut collided = false;
    let mut best = (f64::INFINITY, 0);
    for k in 0..=spec.last_index() {
        let go = k as f64 * spec.dt >= spec.delay;
        sensor.accelerator = go;
        sensor.torque_cmd = if go { 1.0 } else { 0.0 };
        states.push((sensor, other));
        actions.push(go);
        if detect_collision(&sensor, &other) {
            collided = true;
            best = (0.0, k);
            break;
        }
        let dist = center_distance(&sensor, &other);
        if dist < best.0 {
            best = (dist, k);
        }
        (sensor, other) = step_world((sensor, other), spec.dt, &geometry.dynamics);
    }
    Ok(Trajectory {
        states,
        actions,
        collided,
        event_index: best.1,
    })
}

/// Simulates the scenario and renders every frame from each camera.
pub fn run_scenario(spec: &ScenarioSpec, geometry: &SimGeometry, cams: &[CameraSpec]) -> Result<Episode> {
    for c in cams {
        c.validate()?;
    }
    let traj = simulate(spec, geometry)?;
    let frames = traj
        .states
        .iter()
        .zip(&traj.actions)
        .enumerate()
        .map(|(k, (&(sensor, other), &action))| {
            let images = cams
                .iter()
                .map(|c| {
                    let t = render_camera((&sensor, &other), c);
                    Ok((c.camera, GrayImage::from_tensor(&t)?))
                })
                .collect::<Result<_>>()?;
            Ok(EpisodeFrame {
                index: k,
                time: k as f64 * spec.dt,
                images,
                sensor,
                other,
                action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        spec: *spec,
        label: if traj.collided {
            Label::Collision
        } else {
            Label::NoCollision
        },
        event_time: traj.event_index as f64 * spec.dt,
        event_index: traj.event_index,
        frames,
    })
}

pub fn label_for_delay(
    scenario: Scenario,
    delay: f64,
    geometry: &SimGeometry,
    dt: f64,
    max_duration: f64,
) -> Result<Label> {
    let spec = ScenarioSpec {
        scenario,
        delay,
        dt,
        max_duration,
    };
    Ok(if simulate(&spec, geometry)?.collided {
        Label::Collision
    } else {
        Label::NoCollision
    })
}

/// Bisects for the delay at which the label switches from collision to
/// no-collision. Requires a collision at `lo` and none at `hi`.
pub fn find_delay_threshold(
    scenario: Scenario,
    geometry: &SimGeometry,
    dt: f64,
    max_duration: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let label = |d| label_for_delay(scenario, d, geometry, dt, max_duration);
    if label(lo)? != Label::Collision || label(hi)? != Label::NoCollision {
        return Err(Error::InvalidArgument(format!(
            "no collision→miss transition for scenario {} in [{lo}, {hi}]",
            scenario.id()
        )));
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if label(mid)? == Label::Collision {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Writes one PGM per camera per frame and a `states.csv` into `dir`.
pub fn dump_episode(ep: &Episode, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(
        "frame,time,sensor_x,sensor_y,sensor_heading,sensor_speed,torque_cmd,accelerator,other_x,other_y,other_speed,action\n",
    );
    for f in &ep.frames {
        for (cam, img) in &f.images {
            let path = dir.join(format!("f{:05}_{}.pgm", f.index, cam));
            std::fs::write(&path, img.to_pgm()).map_err(|e| Error::io(&path, e))?;
        }
        let s = &f.sensor;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            f.index,
            f.time,
            s.x,
            s.y,
            s.heading,
            s.speed,
            s.torque_cmd,
            u8::from(s.accelerator),
            f.other.x,
            f.other.y,
            f.other.speed,
            u8::from(f.action)
        );
    }
    let path = dir.join("states.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cams() -> Vec<CameraSpec> {
        Camera::ALL
            .iter()
            .map(|&c| CameraSpec::default_for(c, 32, 32))
            .collect()
    }

    #[test]
    fn head_on_scenarios_have_fixed_labels() {
        let g = SimGeometry::default();
        for delay in [0.0, 0.5, 1.3, 4.0, 11.9] {
            assert_eq!(
                label_for_delay(Scenario::HeadOnMiss, delay, &g, 0.05, 12.0).unwrap(),
                Label::NoCollision
            );
            assert_eq!(
                label_for_delay(Scenario::HeadOnCollision, delay, &g, 0.05, 12.0).unwrap(),
                Label::Collision
            );
        }
    }

    #[test]
    fn crossing_threshold_is_monotone() {
        let g = SimGeometry::default();
        for sc in [Scenario::FromRight, Scenario::FromLeft] {
            let d = find_delay_threshold(sc, &g, 0.05, 12.0, 0.0, 5.0, 1e-4).unwrap();
            assert!(d > 0.5 && d < 1.0, "threshold {d}");
            for i in 0..20 {
                let below = (d - 0.5) * i as f64 / 20.0;
                let above = d + 0.5 + i as f64 * 0.2;
                assert_eq!(label_for_delay(sc, below, &g, 0.05, 12.0).unwrap(), Label::Collision);
                assert_eq!(label_for_delay(sc, above, &g, 0.05, 12.0).unwrap(), Label::NoCollision);
            }
        }
    }

    #[test]
    fn episode_frames_are_regular() {
        let ep = run_scenario(
            &ScenarioSpec::new(Scenario::FromRight, 3.0),
            &SimGeometry::default(),
            &cams(),
        )
        .unwrap();
        assert_eq!(ep.label, Label::NoCollision);
        assert_eq!(ep.frames.len(), 241);
        for (k, f) in ep.frames.iter().enumerate() {
            assert_eq!(f.time, k as f64 * 0.05);
            assert_eq!(f.images.len(), 3);
            assert_eq!(f.action, f.time >= 3.0);
        }
        assert!(ep.event_time > 0.0 && ep.event_time <= 12.0);
    }

    #[test]
    fn collision_stops_episode() {
        let ep = run_scenario(
            &ScenarioSpec::new(Scenario::HeadOnCollision, 0.0),
            &SimGeometry::default(),
            &cams(),
        )
        .unwrap();
        assert_eq!(ep.label, Label::Collision);
        let last = ep.frames.last().unwrap();
        assert!(detect_collision(&last.sensor, &last.other));
        assert!(ep.frames[..ep.frames.len() - 1]
            .iter()
            .all(|f| !detect_collision(&f.sensor, &f.other)));
        assert_eq!(ep.event_index, ep.frames.len() - 1);
    }

    #[test]
    fn crossing_scenarios_mirror() {
        let g = SimGeometry::default();
        for delay in [0.2, 1.0] {
            let a = run_scenario(&ScenarioSpec::new(Scenario::FromRight, delay), &g, &cams()).unwrap();
            let b = run_scenario(&ScenarioSpec::new(Scenario::FromLeft, delay), &g, &cams()).unwrap();
            assert_eq!(a.label, b.label);
            assert_eq!(a.frames.len(), b.frames.len());
            let mut seen = 0;
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                let right = fa.image(Camera::RightMirror).unwrap();
                let left = fb.image(Camera::LeftMirror).unwrap();
                assert_eq!(&right.flip_horizontal(), left, "frame {}", fa.index);
                let dash_a = fa.image(Camera::Dashcam).unwrap();
                assert_eq!(&dash_a.flip_horizontal(), fb.image(Camera::Dashcam).unwrap());
                seen += right.bytes().iter().filter(|&&v| v == 255).count();
            }
            assert!(seen > 0, "other vehicle never visible");
        }
    }

    #[test]
    fn scenario_ids() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::from_id(s.id()).unwrap(), s);
        }
        assert!(Scenario::from_id(0).is_err());
        assert!(Scenario::from_id(5).is_err());
    }

    #[test]
    fn dump_writes_pgms() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ScenarioSpec::new(Scenario::HeadOnMiss, 0.0);
        spec.max_duration = 0.1;
        let ep = run_scenario(&spec, &SimGeometry::default(), &cams()).unwrap();
        dump_episode(&ep, dir.path()).unwrap();
        assert!(dir.path().join("f00002_right_mirror.pgm").exists());
        let csv = std::fs::read_to_string(dir.path().join("states.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}
