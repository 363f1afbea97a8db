//! Camera pose relocalization from raw event streams.
//!
//! The pipeline reads event and pose text files, cuts the stream into
//! windows, samples each window into a normalized point cloud and regresses
//! a 6-DOF pose with a hierarchical point network trained by a small
//! reverse-mode autodiff engine.

pub mod autodiff;
pub mod cli;
pub mod event_io;
pub mod geometry;
pub mod gradsuite;
pub mod heap;
pub mod kv;
pub mod model;
pub mod point_ops;
pub mod synthgen;
pub mod train;
