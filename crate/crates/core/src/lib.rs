pub mod continuous;
pub mod discrete;
pub mod geometry;
pub mod harness;
pub mod sensors;
pub mod truth;
pub mod velocity;
pub mod wahba;
