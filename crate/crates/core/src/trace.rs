//! Wall-clock accounting for the solver's four dominant kernels.

use std::ops::AddAssign;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Time spent in each kernel. `projection` excludes the sorting it triggers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub sort: Duration,
    pub projection: Duration,
    pub gradient: Duration,
    pub linear_solve: Duration,
}

impl Timings {
    pub(crate) fn add_projection(&mut self, total: Duration, sort_before: Duration) {
        let sorted = self.sort.saturating_sub(sort_before);
        self.projection += total.saturating_sub(sorted);
    }

    /// Percentages of `total` spent in each kernel.
    pub fn breakdown(&self, total: Duration) -> TimingBreakdown {
        let t = total.as_secs_f64();
        let pct = |d: Duration| if t > 0.0 { 100.0 * d.as_secs_f64() / t } else { 0.0 };
        TimingBreakdown {
            total_secs: t,
            sort_pct: pct(self.sort),
            projection_pct: pct(self.projection),
            gradient_pct: pct(self.gradient),
            linear_solve_pct: pct(self.linear_solve),
        }
    }
}

impl AddAssign for Timings {
    fn add_assign(&mut self, rhs: Self) {
        self.sort += rhs.sort;
        self.projection += rhs.projection;
        self.gradient += rhs.gradient;
        self.linear_solve += rhs.linear_solve;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub total_secs: f64,
    pub sort_pct: f64,
    pub projection_pct: f64,
    pub gradient_pct: f64,
    pub linear_solve_pct: f64,
}
