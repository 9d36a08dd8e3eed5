//! Shared-control grasping in the plane.
//!
//! The pipeline: generate a cluttered [`scene`], learn a contact model from
//! one demonstrated grasp and sample candidate grasps on a new scene
//! ([`density`]), plan straight-line approaches ([`planner`]), and assist an
//! operator with per-trajectory time-varying LQR gains and greedy intent
//! arbitration ([`controller`]). [`sim`] runs the kinematic plant,
//! [`harness`] runs batch experiments with synthetic operators and
//! [`bridge`] serves live sessions to a keyboard console.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod controller;
pub mod density;
pub mod format;
pub mod harness;
pub mod planner;
pub mod scene;
pub mod se2;
pub mod sim;

pub use se2::{wrap_angle, Pose2};
