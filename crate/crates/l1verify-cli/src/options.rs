use serde::{Deserialize, Serialize};

/// Every numeric knob of the pipeline. Serialized into the report, so a
/// changed tolerance changes the report hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Integrator rtol = atol.
    pub tol_int: f64,
    /// Strict inequalities must clear this margin.
    pub tol_strict: f64,
    /// Residual target of the implicit solves (θ, ν, switch times).
    pub tol_newton: f64,
    pub nodes_per_arc: usize,
    pub monitor_nodes: usize,
    pub overmax_samples: usize,
    /// Half-width of the cube around the reference sampled for the
    /// over-maximization checks.
    pub overmax_radius: f64,
    pub penalty_start: f64,
    pub penalty_cap: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol_int: 1e-10,
            tol_strict: 1e-8,
            tol_newton: 1e-12,
            nodes_per_arc: 256,
            monitor_nodes: 24,
            overmax_samples: 200,
            overmax_radius: 0.1,
            penalty_start: 1.0,
            penalty_cap: 1048576.0,
            seed: 7,
        }
    }
}
