//! Step sizes, TD-family updates, and the exact fixed-point oracle.

pub mod fixed_point;
pub mod schedule;
pub mod update;

pub use fixed_point::{expected_increment, fixed_point, rmse, FixedPoint, FixedPointSystem};
pub use schedule::StepSchedule;
pub use update::{
    gtd_lambda_step, linear_td0_step, offtdc_step, ontdc_step, td0_tabular_step, TdState,
    DIVERGENCE_GUARD,
};
