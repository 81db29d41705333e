//! Closed-loop experiments and the metrics that compare controllers.

mod car;
mod cartpole;
mod histogram;

pub use car::{
    bisect_speed_factor, car_metrics, max_speed_factor_search, run_car, start_state, CarController,
    CarEpisode, CarLogRow, CarMetrics, CarRunConfig, SpeedFactorSearch, SEARCH_CEILING, SEARCH_COARSE_STEP, SEARCH_FLOOR,
    SEARCH_RESOLUTION,
};
pub use cartpole::{
    cartpole_metrics, run_cartpole, swing_up_time, CartpoleController, CartpoleLogRow,
    CartpoleMetrics, CartpoleRunConfig, TargetSchedule, BALANCE_ANGLE, BALANCE_HOLD,
};
pub use histogram::{histogram, Histogram};
