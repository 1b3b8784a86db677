//! Groundtruth trajectories and synthetic sensor streams.

mod streams;
mod trajectory;

pub use streams::{
    generate_streams, CameraFrame, GroundTruthSample, LandmarkField, MeasurementStream, SensorConfig, Simulation,
};
pub use trajectory::{sample_groundtruth, Hold, Kinematics, Sinusoid3d, TrajectoryModel, WaypointSpline};
