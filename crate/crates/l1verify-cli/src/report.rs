//! The verification report and its canonical JSON form.

use l1verify::conditions::AssumptionVerdict;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::options::VerifyOptions;

pub const TOOL: &str = "l1verify";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Verified,
    Failed,
    Inconclusive,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Verified => 0,
            Status::Failed => 1,
            Status::Inconclusive => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    /// Stage or check that decided the verdict; empty when verified.
    pub stage: String,
    pub reason: String,
}

impl Verdict {
    pub fn verified() -> Verdict {
        Verdict { status: Status::Verified, stage: String::new(), reason: String::new() }
    }
    pub fn failed(stage: &str, reason: impl Into<String>) -> Verdict {
        Verdict { status: Status::Failed, stage: stage.into(), reason: reason.into() }
    }
    pub fn inconclusive(stage: &str, reason: impl Into<String>) -> Verdict {
        Verdict { status: Status::Inconclusive, stage: stage.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    pub problem_sha256: String,
    pub candidate_sha256: String,
}

impl InputHashes {
    pub fn of(problem: &str, candidate: &str) -> InputHashes {
        InputHashes { problem_sha256: sha256_hex(problem.as_bytes()), candidate_sha256: sha256_hex(candidate.as_bytes()) }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSummary {
    pub declared: [f64; 3],
    pub located_tau1: f64,
    pub located_tau3: f64,
    pub tau1_offset: f64,
    pub tau3_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSummary {
    /// max |ν(λ̂(t)) − ν̄| over the singular arc, ν̄ the arc mean.
    pub nu_spread: f64,
    pub nu_mean: f64,
    #[serde(with = "l1verify::serde_f64")]
    pub sglc_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivenessSummary {
    pub passed: bool,
    pub v_test_passed: bool,
    #[serde(with = "l1verify::serde_f64")]
    pub min_abs_det: f64,
    pub first_zero_time: Option<f64>,
    #[serde(with = "l1verify::serde_f64")]
    pub vperp_value: f64,
    #[serde(with = "l1verify::serde_f64")]
    pub vperp_bold: f64,
    pub penalty_s: f64,
    pub penalty_cap_reached: bool,
    pub symplectic_defect: f64,
    pub r_consistency: f64,
    pub c_eps: f64,
    pub first_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvermaxSummary {
    pub passed: bool,
    pub samples: usize,
    /// min of H0 − F0 over Σ⁻ samples.
    pub h0_minus_f0_min: f64,
    /// max |H0 − F0| over S⁻ samples.
    pub s_minus_equality: f64,
    /// min of K − max_u h over Σ⁻ samples.
    pub overmax_gap_min: f64,
    pub overmax_violation_at: Option<Vec<f64>>,
    pub validity_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertibilitySummary {
    pub passed: bool,
    #[serde(with = "l1verify::serde_f64")]
    pub min_abs_det: f64,
    pub min_abs_det_time: f64,
    pub sign_changes: usize,
    pub clarke_a0: f64,
    pub clarke_a1: f64,
    pub max_symplectic_defect: f64,
    pub lambda1_phi_minus: f64,
    pub lambda1_tangency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tool: String,
    pub version: String,
    pub inputs: InputHashes,
    pub tolerances: VerifyOptions,
    pub stages_completed: Vec<String>,
    pub assumptions: Vec<AssumptionVerdict>,
    pub switches: Option<SwitchSummary>,
    pub singular: Option<SingularSummary>,
    pub coerciveness: Option<CoercivenessSummary>,
    pub overmax: Option<OvermaxSummary>,
    pub invertibility: Option<InvertibilitySummary>,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn new(inputs: InputHashes, tolerances: VerifyOptions) -> VerificationReport {
        VerificationReport {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            tolerances,
            stages_completed: Vec::new(),
            assumptions: Vec::new(),
            switches: None,
            singular: None,
            coerciveness: None,
            overmax: None,
            invertibility: None,
            verdict: Verdict::inconclusive("pipeline", "not run"),
        }
    }

    /// The verdict implied by the recorded checks alone: VERIFIED only when
    /// every stage ran and every check passed.
    pub fn implied_verdict(&self) -> Verdict {
        if let Some(a) = self.assumptions.iter().find(|a| !a.passed) {
            return Verdict::failed(&a.id, a.detail.clone());
        }
        if self.assumptions.is_empty() {
            return Verdict::inconclusive("conditions", "no assumption checks recorded");
        }
        match &self.coerciveness {
            None => return Verdict::inconclusive("secvar", "coerciveness not evaluated"),
            Some(c) if c.penalty_cap_reached => {
                return Verdict::inconclusive("secvar", format!("penalty cap reached at s = {}", c.penalty_s))
            }
            Some(c) if !c.passed => {
                return Verdict::failed("secvar", format!("second variation not coercive (Vperp = {})", c.vperp_value))
            }
            _ => {}
        }
        match &self.overmax {
            None => return Verdict::inconclusive("hamflow", "over-maximization not evaluated"),
            Some(o) if !o.passed => {
                return Verdict::failed("hamflow", format!("over-maximization violated (gap {})", o.overmax_gap_min))
            }
            _ => {}
        }
        match &self.invertibility {
            None => Verdict::inconclusive("invertibility", "monitor not evaluated"),
            Some(i) if !i.passed => Verdict::failed(
                "invertibility",
                format!("min |det| = {}, Clarke values ({}, {})", i.min_abs_det, i.clarke_a0, i.clarke_a1),
            ),
            _ => Verdict::verified(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<VerificationReport, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} {}: {:?}", self.tool, self.version, self.verdict.status);
        if !self.verdict.stage.is_empty() {
            out.push_str(&format!(" at {} ({})", self.verdict.stage, self.verdict.reason));
        }
        out.push('\n');
        for a in &self.assumptions {
            out.push_str(&format!(
                "  {:<6} {}  value {:+.9e}  margin {:+.3e}\n",
                a.id,
                if a.passed { "pass" } else { "FAIL" },
                a.value,
                a.margin
            ));
        }
        if let Some(c) = &self.coerciveness {
            out.push_str(&format!(
                "  secvar  {}  Vperp {:+.9}  min|det| {:.3e}  s {}\n",
                if c.penalty_cap_reached {
                    "CAP "
                } else if c.passed {
                    "pass"
                } else {
                    "FAIL"
                },
                c.vperp_value,
                c.min_abs_det,
                c.penalty_s
            ));
        }
        if let Some(o) = &self.overmax {
            out.push_str(&format!(
                "  overmax {}  H0-F0 min {:+.3e}  K-h min {:+.3e}\n",
                if o.passed { "pass" } else { "FAIL" },
                o.h0_minus_f0_min,
                o.overmax_gap_min
            ));
        }
        if let Some(i) = &self.invertibility {
            out.push_str(&format!(
                "  invert  {}  min|det| {:.3e}  Clarke a=0 {:+.9}  a=1 {:+.9}\n",
                if i.passed { "pass" } else { "FAIL" },
                i.min_abs_det,
                i.clarke_a0,
                i.clarke_a1
            ));
        }
        out
    }
}
