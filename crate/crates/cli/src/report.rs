//! Machine-readable results.

use serde::{Deserialize, Serialize};
use superq_core::{AlmSettings, OuterRecord, PathEntry, ProxPolicy, Residuals, TimingBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsEcho {
    pub tol: f64,
    pub max_outer: usize,
    pub sigma0: f64,
    pub sigma_growth: f64,
    pub sigma_max: f64,
    pub prox: String,
}

impl From<&AlmSettings> for SettingsEcho {
    fn from(s: &AlmSettings) -> Self {
        Self {
            tol: s.tol,
            max_outer: s.max_outer,
            sigma0: s.sigma0,
            sigma_growth: s.sigma_growth,
            sigma_max: s.sigma_max,
            prox: match s.prox {
                ProxPolicy::Auto => "auto".into(),
                ProxPolicy::Fixed(v) => format!("fixed({v})"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub objective: f64,
    pub x: Vec<f64>,
    /// Recomputed from the reported iterate, not copied from the solver.
    pub residuals: Residuals,
    /// Largest `T_k(A x + b)` over the blocks.
    pub max_violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub warm_started: bool,
    pub timings: TimingBreakdown,
    pub settings: SettingsEcho,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<OuterRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub m: usize,
    pub n: usize,
    pub features: Vec<String>,
    pub response: String,
    pub warm_start: bool,
    pub settings: SettingsEcho,
    pub total_secs: f64,
    pub entries: Vec<PathEntry>,
}
