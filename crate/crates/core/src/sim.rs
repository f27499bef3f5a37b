//! Unicycle racing simulator with a virtual marker camera.
//!
//! The robot drives at a constant forward speed and is steered by an angular
//! velocity command held for one 0.2 s control period. Positions live in track
//! units; the camera reports marker coordinates in meters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Pose};
use crate::track::{Marker, Track, HALF_WIDTH};

/// Slots in an observation.
pub const OBSERVED_MARKERS: usize = 6;
/// Length of the network input vector.
pub const OBSERVATION_DIM: usize = 2 * OBSERVED_MARKERS;
/// Largest angular velocity a policy may command, rad/s.
pub const MAX_ANGULAR_VELOCITY: f64 = 0.4;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("environment has not been reset")]
    NotRunning,
    #[error("episode already terminated ({0:?})")]
    Terminated(TerminationKind),
    #[error("start offset {0} is outside the track half-width")]
    InvalidOffset(f64),
    #[error("angular velocity {0} exceeds the {MAX_ANGULAR_VELOCITY} rad/s limit")]
    InvalidAction(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Advances a pose along the exact arc traced by a constant twist.
pub fn integrate_unicycle(pose: Pose, linear_v: f64, angular_w: f64, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    let distance = linear_v * dt;
    if angular_w.abs() < 1e-9 {
        let (c, s) = pose.forward();
        return Pose::new(pose.x + distance * c, pose.y + distance * s, pose.heading);
    }
    // Chord of the arc: length v*dt*sinc(w*dt/2), pointing along the mid-arc heading.
    let half = 0.5 * angular_w * dt;
    let sinc = if half.abs() < 1e-4 {
        1.0 - half * half / 6.0
    } else {
        half.sin() / half
    };
    let chord = distance * sinc;
    let mid = pose.heading + half;
    Pose::new(
        pose.x + chord * mid.cos(),
        pose.y + chord * mid.sin(),
        pose.heading + angular_w * dt,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub horizontal_fov_deg: f64,
    pub max_range: f64,
    pub min_range: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            horizontal_fov_deg: 69.0,
            max_range: 8.0,
            min_range: 0.05,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(SimError::InvalidConfig("camera needs 0 < min_range < max_range".into()));
        }
        if !(self.horizontal_fov_deg > 0.0 && self.horizontal_fov_deg <= 180.0) {
            return Err(SimError::InvalidConfig("camera fov must be in (0, 180]".into()));
        }
        Ok(())
    }
}

/// One marker seen by the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub id: u32,
    /// World position in track units.
    pub world: Point,
    /// Lateral offset in meters, positive to the robot's right.
    pub x: f64,
    /// Forward distance in meters.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// (lateral, forward) in meters, ascending forward distance, padded at the end.
    pub slots: [(f64, f64); OBSERVED_MARKERS],
    pub visible_count: usize,
    /// At least one odd and one even boundary marker is detected.
    pub pair_visible: bool,
    /// Every detected marker, ascending forward distance.
    pub detections: Vec<Detection>,
}

impl Observation {
    /// Flattened network input: x0, z0, x1, z1, ...
    pub fn features(&self) -> [f32; OBSERVATION_DIM] {
        let mut out = [0.0f32; OBSERVATION_DIM];
        for (i, (x, z)) in self.slots.iter().enumerate() {
            out[2 * i] = *x as f32;
            out[2 * i + 1] = *z as f32;
        }
        out
    }

    pub fn finish_detection(&self) -> Option<&Detection> {
        self.detections.iter().find(|d| d.id == crate::track::FINISH_ID)
    }
}

/// Projects every marker into the camera frame and keeps the six nearest in depth.
pub fn observe(pose: &Pose, track: &Track, cam: &CameraConfig) -> Observation {
    let scale = track.unit_to_meter();
    let (fx, fy) = pose.forward();
    let half_fov = 0.5 * cam.horizontal_fov_deg.to_radians();
    let mut detections: Vec<Detection> = track
        .all_markers()
        .filter_map(|m: &Marker| {
            let dx = m.x - pose.x;
            let dy = m.y - pose.y;
            let z = dx * fx + dy * fy;
            let x = dx * fy - dy * fx;
            let range = dx.hypot(dy);
            let visible = z > 0.0
                && range >= cam.min_range
                && range <= cam.max_range
                && x.atan2(z).abs() <= half_fov;
            visible.then(|| Detection {
                id: m.id,
                world: m.position(),
                x: x * scale,
                z: z * scale,
            })
        })
        .collect();
    detections.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.id.cmp(&b.id)));

    let pad = (0.0, cam.max_range * scale);
    let mut slots = [pad; OBSERVED_MARKERS];
    for (slot, d) in slots.iter_mut().zip(&detections) {
        *slot = (d.x, d.z);
    }
    let has_odd = detections.iter().any(|d| d.id % 2 == 1);
    let has_even = detections.iter().any(|d| d.id != 0 && d.id % 2 == 0);
    Observation {
        slots,
        visible_count: detections.len().min(OBSERVED_MARKERS),
        pair_visible: has_odd && has_even,
        detections,
    }
}

/// The visible odd marker with the smallest ID together with the visible even marker
/// with the smallest ID. The finish marker never takes part in a pair.
pub fn lowest_pair(detections: &[Detection]) -> Option<(Detection, Detection)> {
    let lowest = |odd: bool| {
        detections
            .iter()
            .filter(|d| d.id != 0 && (d.id % 2 == 1) == odd)
            .min_by_key(|d| d.id)
            .copied()
    };
    Some((lowest(true)?, lowest(false)?))
}

/// Absolute angle in degrees between the heading and the direction to `target`.
pub fn compute_theta(pose: &Pose, target: Point) -> f64 {
    let (fx, fy) = pose.forward();
    let dx = target.x - pose.x;
    let dy = target.y - pose.y;
    let cross = fx * dy - fy * dx;
    let dot = fx * dx + fy * dy;
    cross.atan2(dot).abs().to_degrees()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Peak per-step reward.
    pub scale: f64,
    /// Angle drop-off multiplier.
    pub drop_off: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            scale: 10.0,
            drop_off: 6.0,
        }
    }
}

/// `scale * cos(drop_off * theta)` clipped at zero, with theta in degrees.
/// The reward stays at zero once `drop_off * theta` reaches 90 degrees.
pub fn reward(theta_deg: f64, cfg: &RewardConfig) -> f64 {
    let angle = cfg.drop_off * theta_deg;
    if angle >= 90.0 {
        return 0.0;
    }
    (cfg.scale * angle.to_radians().cos()).max(0.0)
}

/// Commanded angular velocity in rad/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    angular_velocity: f64,
}

impl Action {
    pub fn new(angular_velocity: f64) -> Result<Self, SimError> {
        if !angular_velocity.is_finite() || angular_velocity.abs() > MAX_ANGULAR_VELOCITY + 1e-12 {
            return Err(SimError::InvalidAction(angular_velocity));
        }
        Ok(Self {
            angular_velocity: angular_velocity.clamp(-MAX_ANGULAR_VELOCITY, MAX_ANGULAR_VELOCITY),
        })
    }

    /// Saturates to the allowed range.
    pub fn clamped(angular_velocity: f64) -> Self {
        let w = if angular_velocity.is_nan() { 0.0 } else { angular_velocity };
        Self {
            angular_velocity: w.clamp(-MAX_ANGULAR_VELOCITY, MAX_ANGULAR_VELOCITY),
        }
    }

    pub fn angular_velocity(self) -> f64 {
        self.angular_velocity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationKind {
    Running,
    Finished,
    Collision,
    Blind,
    Timeout,
}

impl TerminationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationKind::Running => "running",
            TerminationKind::Finished => "finished",
            TerminationKind::Collision => "collision",
            TerminationKind::Blind => "blind",
            TerminationKind::Timeout => "timeout",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != TerminationKind::Running
    }

    /// Terminal and not a step-limit truncation.
    pub fn cuts_bootstrap(self) -> bool {
        matches!(
            self,
            TerminationKind::Finished | TerminationKind::Collision | TerminationKind::Blind
        )
    }
}

impl std::fmt::Display for TerminationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TerminationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "running" => TerminationKind::Running,
            "finished" => TerminationKind::Finished,
            "collision" => TerminationKind::Collision,
            "blind" => TerminationKind::Blind,
            "timeout" => TerminationKind::Timeout,
            other => return Err(format!("unknown termination '{other}'")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Termination {
    pub kind: TerminationKind,
    pub step_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub camera: CameraConfig,
    pub reward: RewardConfig,
    /// Constant forward speed, m/s.
    pub linear_velocity: f64,
    /// Control period, seconds.
    pub dt: f64,
    pub max_steps: usize,
    /// Any boundary marker this close (track units) ends the episode.
    pub collision_distance: f64,
    /// Consecutive steps without a visible pair before the episode ends.
    pub blind_limit: usize,
    /// Forward distance (meters) at which a visible finish marker ends the episode.
    pub finish_distance: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            camera: CameraConfig::default(),
            reward: RewardConfig::default(),
            linear_velocity: 0.5,
            dt: 0.2,
            max_steps: 2000,
            collision_distance: 0.5,
            blind_limit: 10,
            finish_distance: 0.85,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.camera.validate()?;
        if !(self.reward.scale > 0.0 && self.reward.drop_off > 0.0) {
            return Err(SimError::InvalidConfig("reward scale and drop-off must be positive".into()));
        }
        if !(self.dt > 0.0) || self.max_steps == 0 || self.blind_limit == 0 {
            return Err(SimError::InvalidConfig(
                "dt, max_steps and blind_limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// Angle to the lowest-pair midpoint, when a pair is visible.
    pub theta_deg: Option<f64>,
    /// Current centre-line progress fraction.
    pub progress: f64,
    pub termination: Termination,
}

/// Search half-width (track units) around the last known arc length.
const PROGRESS_WINDOW: f64 = 2.0;

/// Single-writer racing environment over a shared immutable track.
#[derive(Clone, Debug)]
pub struct RacingEnv {
    cfg: EnvConfig,
    track: Option<Arc<Track>>,
    pose: Pose,
    step_index: usize,
    blind_steps: usize,
    arc_length: f64,
    max_progress: f64,
    kind: TerminationKind,
    observation: Option<Observation>,
}

impl RacingEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            track: None,
            pose: Pose::new(0.0, 0.0, 0.0),
            step_index: 0,
            blind_steps: 0,
            arc_length: 0.0,
            max_progress: 0.0,
            kind: TerminationKind::Running,
            observation: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Places the robot at the track entry, shifted `start_lateral_offset` units to the right.
    pub fn reset(&mut self, track: Arc<Track>, start_lateral_offset: f64) -> Result<Observation, SimError> {
        if !start_lateral_offset.is_finite() || start_lateral_offset.abs() >= HALF_WIDTH {
            return Err(SimError::InvalidOffset(start_lateral_offset));
        }
        let entry = track.entry_pose;
        let start = entry.offset(0.0, -start_lateral_offset);
        self.pose = Pose::new(start.x, start.y, entry.heading);
        self.step_index = 0;
        self.blind_steps = 0;
        self.kind = TerminationKind::Running;
        let proj = track.project_window(self.pose.position(), 0.0, PROGRESS_WINDOW);
        self.arc_length = proj.arc_length;
        self.max_progress = proj.arc_length / track.total_length;
        let obs = observe(&self.pose, &track, &self.cfg.camera);
        self.observation = Some(obs.clone());
        self.track = Some(track);
        Ok(obs)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SimError> {
        let track = self.track.clone().ok_or(SimError::NotRunning)?;
        if self.kind.is_terminal() {
            return Err(SimError::Terminated(self.kind));
        }
        let v_units = self.cfg.linear_velocity / track.unit_to_meter();
        self.pose = integrate_unicycle(self.pose, v_units, action.angular_velocity(), self.cfg.dt);
        self.step_index += 1;

        let position = self.pose.position();
        let proj = track.project_window(
            position,
            self.arc_length - PROGRESS_WINDOW,
            self.arc_length + PROGRESS_WINDOW,
        );
        self.arc_length = proj.arc_length;
        let progress = (proj.arc_length / track.total_length).clamp(0.0, 1.0);
        self.max_progress = self.max_progress.max(progress);

        let obs = observe(&self.pose, &track, &self.cfg.camera);
        let theta_deg = lowest_pair(&obs.detections)
            .map(|(odd, even)| compute_theta(&self.pose, odd.world.midpoint(even.world)));
        let reward = theta_deg.map_or(0.0, |t| reward(t, &self.cfg.reward));

        if obs.pair_visible {
            self.blind_steps = 0;
        } else {
            self.blind_steps += 1;
        }

        let finished = obs
            .finish_detection()
            .is_some_and(|d| d.z <= self.cfg.finish_distance);
        let collided = track
            .markers
            .iter()
            .any(|m| m.position().distance(position) <= self.cfg.collision_distance);
        self.kind = if finished {
            self.max_progress = 1.0;
            TerminationKind::Finished
        } else if collided {
            TerminationKind::Collision
        } else if self.blind_steps >= self.cfg.blind_limit {
            TerminationKind::Blind
        } else if self.step_index >= self.cfg.max_steps {
            TerminationKind::Timeout
        } else {
            TerminationKind::Running
        };

        self.observation = Some(obs.clone());
        Ok(StepOutcome {
            observation: obs,
            reward,
            theta_deg,
            progress,
            termination: self.termination(),
        })
    }

    pub fn termination(&self) -> Termination {
        Termination {
            kind: self.kind,
            step_index: self.step_index,
        }
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn track(&self) -> Option<&Arc<Track>> {
        self.track.as_ref()
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.observation.as_ref()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Running maximum of centre-line progress this episode.
    pub fn max_progress(&self) -> f64 {
        self.max_progress
    }

    /// Arc length of the robot's current centre-line projection.
    pub fn arc_length(&self) -> f64 {
        self.arc_length
    }
}
