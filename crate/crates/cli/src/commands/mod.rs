mod eval;
mod gradcheck;
mod predict;
mod train;

pub use eval::{eval, pr_curve, EvalArgs, PrCurveArgs};
pub use gradcheck::{gradcheck, GradcheckArgs};
pub use predict::{predict, PredictArgs};
pub use train::{train, TrainArgs};
