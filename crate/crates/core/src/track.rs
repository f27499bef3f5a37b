//! Procedural marker tracks: straight and constant-radius turn segments built
//! from 15 marker pairs, chained training tracks, and the closed oval.
//!
//! Geometry is expressed in track units. Odd marker IDs sit on the left
//! boundary and even IDs on the right; ID 0 is reserved for the finish marker.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_degrees, Point, Pose};

/// Marker pairs per segment.
pub const PAIRS_PER_SEGMENT: u32 = 15;
/// Distance between consecutive pairs on a straight.
pub const PAIR_SPACING: f64 = 1.0;
/// Lateral distance from the centre-line to each boundary.
pub const HALF_WIDTH: f64 = 1.0;
/// Radius of the inner boundary of every turn.
pub const INNER_TURN_RADIUS: f64 = 10.0;
/// Centre-line radius of every turn.
pub const CENTERLINE_TURN_RADIUS: f64 = INNER_TURN_RADIUS + HALF_WIDTH;
/// Inward rotation applied to every nominal marker.
pub const MARKER_TOE_IN_DEG: f64 = 20.0;
pub const UNIT_TO_METER: f64 = 0.85;
pub const FINISH_ID: u32 = 0;

/// Centre-line polyline samples per pair interval.
const CENTERLINE_SUBDIVISIONS: usize = 8;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid turn angle {0}: expected a multiple of 15 degrees in [-90, 90]")]
    InvalidTurnAngle(String),
    #[error("a track needs at least one segment")]
    EmptySpecs,
    #[error("first pair index must be at least 1")]
    InvalidPairIndex,
    #[error("unit_to_meter must be {UNIT_TO_METER}, got {0}")]
    InvalidUnitScale(f64),
    #[error("invalid track: {0}")]
    Invalid(String),
    #[error("track json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Turn angle of a segment; 0 is a straight, positive turns left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct SegmentSpec {
    turn_angle_deg: i32,
}

impl SegmentSpec {
    pub const STRAIGHT: SegmentSpec = SegmentSpec { turn_angle_deg: 0 };

    pub fn new(turn_angle_deg: i32) -> Result<Self, TrackError> {
        if turn_angle_deg % 15 != 0 || !(-90..=90).contains(&turn_angle_deg) {
            return Err(TrackError::InvalidTurnAngle(turn_angle_deg.to_string()));
        }
        Ok(Self { turn_angle_deg })
    }

    pub fn turn_angle_deg(self) -> i32 {
        self.turn_angle_deg
    }

    pub fn is_straight(self) -> bool {
        self.turn_angle_deg == 0
    }

    /// Centre-line length of this segment.
    pub fn nominal_length(self) -> f64 {
        if self.is_straight() {
            PAIR_SPACING * f64::from(PAIRS_PER_SEGMENT - 1)
        } else {
            CENTERLINE_TURN_RADIUS * f64::from(self.turn_angle_deg).abs().to_radians()
        }
    }
}

impl TryFrom<i32> for SegmentSpec {
    type Error = TrackError;

    fn try_from(value: i32) -> Result<Self, Self::Error> {
        SegmentSpec::new(value)
    }
}

impl From<SegmentSpec> for i32 {
    fn from(spec: SegmentSpec) -> i32 {
        spec.turn_angle_deg
    }
}

impl FromStr for SegmentSpec {
    type Err = TrackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let invalid = || TrackError::InvalidTurnAngle(trimmed.to_string());
        let value: f64 = trimmed.parse().map_err(|_| invalid())?;
        if value.fract() != 0.0 || value.abs() > 90.0 {
            return Err(invalid());
        }
        SegmentSpec::new(value as i32).map_err(|_| invalid())
    }
}

impl fmt::Display for SegmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.turn_angle_deg)
    }
}

/// All 13 segment variants in ascending turn angle.
pub fn segment_variants() -> Vec<SegmentSpec> {
    (-6..=6)
        .map(|k| SegmentSpec { turn_angle_deg: 15 * k })
        .collect()
}

/// Placement noise applied independently to every boundary marker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub pos_jitter: f64,
    pub yaw_jitter_deg: f64,
}

impl NoiseConfig {
    pub const fn off() -> Self {
        Self {
            enabled: false,
            pos_jitter: 0.05,
            yaw_jitter_deg: 15.0,
        }
    }

    pub const fn on() -> Self {
        Self {
            enabled: true,
            ..Self::off()
        }
    }

    pub fn with_enabled(enabled: bool) -> Self {
        if enabled {
            Self::on()
        } else {
            Self::off()
        }
    }

    fn validate(&self) -> Result<(), TrackError> {
        if !(self.pos_jitter >= 0.0 && self.yaw_jitter_deg >= 0.0) {
            return Err(TrackError::Invalid("noise jitter must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Marker {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub elevation_tier: u8,
    pub yaw_deg: f64,
}

impl Marker {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn is_finish(&self) -> bool {
        self.id == FINISH_ID
    }

    pub fn is_left(&self) -> bool {
        self.id % 2 == 1
    }

    pub fn is_right(&self) -> bool {
        self.id != FINISH_ID && self.id % 2 == 0
    }
}

/// Output of [`generate_segment`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Pairs in order, left marker first.
    pub markers: Vec<Marker>,
    pub centerline: Vec<Point>,
    pub exit_pose: Pose,
}

/// Builds one segment of 15 marker pairs starting at `entry`.
pub fn generate_segment<R: Rng + ?Sized>(
    spec: SegmentSpec,
    entry: Pose,
    first_pair_index: u32,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<Segment, TrackError> {
    if first_pair_index < 1 {
        return Err(TrackError::InvalidPairIndex);
    }
    noise.validate()?;

    let intervals = PAIRS_PER_SEGMENT - 1;
    let along = |t: f64| centerline_pose(spec, entry, t);

    let mut markers = Vec::with_capacity(2 * PAIRS_PER_SEGMENT as usize);
    for k in 0..PAIRS_PER_SEGMENT {
        let pose = along(f64::from(k) / f64::from(intervals));
        let pair_index = first_pair_index + k;
        let tier = u8::from(pair_index % 2 == 0);
        let heading_deg = pose.heading.to_degrees();
        let left = pose.offset(0.0, HALF_WIDTH);
        let right = pose.offset(0.0, -HALF_WIDTH);
        markers.push(Marker {
            id: 2 * pair_index - 1,
            x: left.x,
            y: left.y,
            elevation_tier: tier,
            yaw_deg: normalize_degrees(heading_deg + 180.0 + MARKER_TOE_IN_DEG),
        });
        markers.push(Marker {
            id: 2 * pair_index,
            x: right.x,
            y: right.y,
            elevation_tier: tier,
            yaw_deg: normalize_degrees(heading_deg + 180.0 - MARKER_TOE_IN_DEG),
        });
    }

    if noise.enabled {
        for marker in &mut markers {
            marker.x += symmetric(rng, noise.pos_jitter);
            marker.y += symmetric(rng, noise.pos_jitter);
            marker.yaw_deg = normalize_degrees(marker.yaw_deg + symmetric(rng, noise.yaw_jitter_deg));
        }
    }

    let samples = intervals as usize * CENTERLINE_SUBDIVISIONS;
    let centerline = (0..=samples)
        .map(|j| along(j as f64 / samples as f64).position())
        .collect();

    Ok(Segment {
        markers,
        centerline,
        exit_pose: along(1.0),
    })
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Noiseless centre-line pose at fraction `t` of a segment.
fn centerline_pose(spec: SegmentSpec, entry: Pose, t: f64) -> Pose {
    if spec.is_straight() {
        let p = entry.offset(t * spec.nominal_length(), 0.0);
        return Pose::new(p.x, p.y, entry.heading);
    }
    let turn = f64::from(spec.turn_angle_deg()).to_radians();
    let side = turn.signum();
    let centre = entry.offset(0.0, side * CENTERLINE_TURN_RADIUS);
    let phi = turn * t;
    let (s, c) = phi.sin_cos();
    let dx = entry.x - centre.x;
    let dy = entry.y - centre.y;
    Pose::new(
        centre.x + c * dx - s * dy,
        centre.y + s * dx + c * dy,
        entry.heading + phi,
    )
}

/// Lap direction for the oval benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "cw")]
    Clockwise,
    #[serde(rename = "acw")]
    Anticlockwise,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Clockwise => "cw",
            Direction::Anticlockwise => "acw",
        }
    }

    fn turn_sign(self) -> i32 {
        match self {
            Direction::Clockwise => -1,
            Direction::Anticlockwise => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = TrackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cw" | "clockwise" => Ok(Direction::Clockwise),
            "acw" | "ccw" | "anticlockwise" | "counterclockwise" => Ok(Direction::Anticlockwise),
            other => Err(TrackError::Invalid(format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackMeta {
    pub seed: u64,
    pub noise: NoiseConfig,
    pub specs: Vec<SegmentSpec>,
    pub unit_to_meter: f64,
}

/// A complete track: boundary markers, centre-line, and finish marker.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub markers: Vec<Marker>,
    pub centerline: Vec<Point>,
    pub finish: Marker,
    pub total_length: f64,
    pub entry_pose: Pose,
    pub meta: TrackMeta,
    /// Arc length at each centre-line vertex.
    cumulative: Vec<f64>,
}

/// Where every generated track starts.
pub fn default_entry_pose() -> Pose {
    Pose::new(0.0, 0.0, PI / 2.0)
}

/// Chains segments exit-to-entry with continuous pair numbering.
pub fn generate_track(specs: &[SegmentSpec], noise: NoiseConfig, seed: u64) -> Result<Track, TrackError> {
    if specs.is_empty() {
        return Err(TrackError::EmptySpecs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entry_pose = default_entry_pose();
    let mut pose = entry_pose;
    let mut markers = Vec::new();
    let mut centerline: Vec<Point> = Vec::new();
    let mut next_pair = 1;
    for &spec in specs {
        let segment = generate_segment(spec, pose, next_pair, &noise, &mut rng)?;
        markers.extend(segment.markers);
        let skip = usize::from(!centerline.is_empty());
        centerline.extend(segment.centerline.into_iter().skip(skip));
        pose = segment.exit_pose;
        next_pair += PAIRS_PER_SEGMENT;
    }
    let finish = finish_marker(Point::new(pose.x, pose.y), &centerline);
    let meta = TrackMeta {
        seed,
        noise,
        specs: specs.to_vec(),
        unit_to_meter: UNIT_TO_METER,
    };
    Track::assemble(markers, centerline, finish, entry_pose, meta)
}

/// Finish marker at `at`, facing back along the last centre-line piece.
fn finish_marker(at: Point, centerline: &[Point]) -> Marker {
    let yaw_deg = match centerline {
        [.., a, b] => normalize_degrees((b.y - a.y).atan2(b.x - a.x).to_degrees() + 180.0),
        _ => 0.0,
    };
    Marker {
        id: FINISH_ID,
        x: at.x,
        y: at.y,
        elevation_tier: 0,
        yaw_deg,
    }
}

/// The six-segment oval lap: straight, two 90 degree turns, straight, two 90 degree turns.
pub fn oval_specs(direction: Direction) -> Vec<SegmentSpec> {
    let turn = SegmentSpec {
        turn_angle_deg: 90 * direction.turn_sign(),
    };
    vec![SegmentSpec::STRAIGHT, turn, turn, SegmentSpec::STRAIGHT, turn, turn]
}

pub fn generate_oval(noise: NoiseConfig, seed: u64, direction: Direction) -> Result<Track, TrackError> {
    generate_track(&oval_specs(direction), noise, seed)
}

/// Closest centre-line location for a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length from the start of the centre-line.
    pub arc_length: f64,
    pub distance: f64,
    pub point: Point,
}

impl Track {
    fn assemble(
        markers: Vec<Marker>,
        centerline: Vec<Point>,
        finish: Marker,
        entry_pose: Pose,
        meta: TrackMeta,
    ) -> Result<Track, TrackError> {
        if meta.unit_to_meter != UNIT_TO_METER {
            return Err(TrackError::InvalidUnitScale(meta.unit_to_meter));
        }
        if centerline.len() < 2 {
            return Err(TrackError::Invalid("centre-line needs at least two points".into()));
        }
        if finish.id != FINISH_ID {
            return Err(TrackError::Invalid("finish marker must have id 0".into()));
        }
        if markers.iter().any(|m| m.id == FINISH_ID) {
            return Err(TrackError::Invalid("boundary markers must not use id 0".into()));
        }
        let mut cumulative = Vec::with_capacity(centerline.len());
        let mut acc = 0.0;
        cumulative.push(acc);
        for w in centerline.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(TrackError::Invalid("centre-line has zero length".into()));
        }
        Ok(Track {
            markers,
            centerline,
            finish,
            total_length: acc,
            entry_pose,
            meta,
            cumulative,
        })
    }

    /// Iterates boundary markers and the finish marker.
    pub fn all_markers(&self) -> impl Iterator<Item = &Marker> {
        self.markers.iter().chain(std::iter::once(&self.finish))
    }

    pub fn pair_count(&self) -> usize {
        self.markers.len() / 2
    }

    pub fn unit_to_meter(&self) -> f64 {
        self.meta.unit_to_meter
    }

    /// Arc length at each centre-line vertex.
    pub fn cumulative_lengths(&self) -> &[f64] {
        &self.cumulative
    }

    /// Closest point over the whole centre-line; ties resolve to the smaller arc length.
    pub fn project(&self, point: Point) -> Projection {
        self.project_window(point, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Closest point among the centre-line pieces overlapping `[lo, hi]` in arc length.
    pub fn project_window(&self, point: Point, lo: f64, hi: f64) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.centerline.len() - 1 {
            let (s0, s1) = (self.cumulative[i], self.cumulative[i + 1]);
            if s1 < lo || s0 > hi {
                continue;
            }
            let a = self.centerline[i];
            let b = self.centerline[i + 1];
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let len2 = ex * ex + ey * ey;
            let t = if len2 > 0.0 {
                (((point.x - a.x) * ex + (point.y - a.y) * ey) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = Point::new(a.x + t * ex, a.y + t * ey);
            let candidate = Projection {
                arc_length: s0 + t * (s1 - s0),
                distance: q.distance(point),
                point: q,
            };
            if best.is_none_or(|b| candidate.distance < b.distance) {
                best = Some(candidate);
            }
        }
        // The window always overlaps at least one piece when it intersects [0, total].
        best.unwrap_or_else(|| self.project(point))
    }

    /// Fraction of the centre-line covered at the closest point to `pose`.
    pub fn progress(&self, pose: &Pose) -> f64 {
        (self.project(pose.position()).arc_length / self.total_length).clamp(0.0, 1.0)
    }

    /// Point at a given arc length, clamped to the centre-line ends.
    pub fn point_at(&self, arc_length: f64) -> Point {
        let s = arc_length.clamp(0.0, self.total_length);
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.centerline[i],
            Err(i) => i.clamp(1, self.cumulative.len() - 1),
        };
        let (s0, s1) = (self.cumulative[i - 1], self.cumulative[i]);
        let t = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        let (a, b) = (self.centerline[i - 1], self.centerline[i]);
        Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }

    pub fn to_json(&self) -> Result<String, TrackError> {
        Ok(serde_json::to_string_pretty(&TrackFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Track, TrackError> {
        let file: TrackFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FinishFile {
    id: u32,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackFile {
    meta: TrackMeta,
    markers: Vec<Marker>,
    centerline: Vec<Point>,
    finish: FinishFile,
    total_length: f64,
    entry_pose: Pose,
}

impl From<&Track> for TrackFile {
    fn from(track: &Track) -> Self {
        TrackFile {
            meta: track.meta.clone(),
            markers: track.markers.clone(),
            centerline: track.centerline.clone(),
            finish: FinishFile {
                id: track.finish.id,
                x: track.finish.x,
                y: track.finish.y,
            },
            total_length: track.total_length,
            entry_pose: track.entry_pose,
        }
    }
}

impl TryFrom<TrackFile> for Track {
    type Error = TrackError;

    fn try_from(file: TrackFile) -> Result<Self, Self::Error> {
        let mut finish = finish_marker(Point::new(file.finish.x, file.finish.y), &file.centerline);
        finish.id = file.finish.id;
        let entry = Pose::new(file.entry_pose.x, file.entry_pose.y, file.entry_pose.heading);
        let track = Track::assemble(file.markers, file.centerline, finish, entry, file.meta)?;
        if (track.total_length - file.total_length).abs() > 1e-9 * track.total_length.max(1.0) {
            return Err(TrackError::Invalid(format!(
                "total_length {} does not match centre-line length {}",
                file.total_length, track.total_length
            )));
        }
        Ok(track)
    }
}
