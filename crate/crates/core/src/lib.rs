//! Marker-track racing: procedural Formula-Student-style tracks built from
//! numbered boundary markers, a unicycle robot with a virtual marker camera,
//! and DQN / TD3 learners trained and evaluated on those tracks.

pub mod agents;
pub mod checkpoint;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod sim;
pub mod track;

pub use geometry::{Point, Pose};
