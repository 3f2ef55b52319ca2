pub mod ball_on_plate;
pub mod crane2d;
pub mod cstr;
pub mod double_integrator;
pub mod dual_arm;

pub use ball_on_plate::BallOnPlate;
pub use crane2d::Crane2d;
pub use cstr::Cstr;
pub use double_integrator::DoubleIntegrator;
pub use dual_arm::DualArm;
