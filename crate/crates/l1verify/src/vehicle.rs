//! The electric-vehicle family in closed form:
//!
//! ```text
//!   ẋ1 = x2,  ẋ2 = −ρ x2 + u,  cost ∫ |u x2| dt,  x(0) = 0.
//! ```
//!
//! Every quantity here is an analytic formula, so this module doubles as
//! the oracle suite for the numerical pipeline.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::extremal::ExtremalCandidate;
use crate::modeling::{ControlledSystem, ProblemFile};

/// 1 + √2
const S: f64 = 1.0 + SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub rho: f64,
    /// Initial costate component p1(0); constant along the extremal.
    pub p10: f64,
    pub tau2: f64,
}

impl VehicleParams {
    pub fn new(rho: f64, p10: f64, tau2: f64) -> Result<VehicleParams> {
        let v = VehicleParams { rho, p10, tau2 };
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Input(format!("rho must be positive, got {rho}")));
        }
        if !(p10 > 0.0 && p10 < 2.0) {
            return Err(Error::Input(format!("p10 must lie in (0, 2), got {p10}")));
        }
        if !(tau2 > v.tau1() && tau2.is_finite()) {
            return Err(Error::Input(format!("tau2 must exceed tau1 = {}, got {tau2}", v.tau1())));
        }
        Ok(v)
    }

    /// ρ = 1, p1⁰ = 1, τ̂2 = τ̂1 + 1.
    pub fn reference() -> VehicleParams {
        VehicleParams { rho: 1.0, p10: 1.0, tau2: 2f64.ln() + 1.0 }
    }

    /// Same ρ and p1⁰ with τ̂2 = τ̂1 + delta.
    pub fn with_singular_length(rho: f64, p10: f64, delta: f64) -> Result<VehicleParams> {
        let tau1 = (2.0 / (2.0 - p10)).ln() / rho;
        VehicleParams::new(rho, p10, tau1 + delta)
    }

    pub fn problem(&self) -> ProblemFile {
        ProblemFile {
            n: 2,
            params: BTreeMap::from([("rho".to_string(), self.rho)]),
            f0: vec!["x2".into(), "-rho*x2".into()],
            f1: vec!["0".into(), "1".into()],
            psi: "x2".into(),
        }
    }

    pub fn system(&self) -> ControlledSystem {
        ControlledSystem::from_problem(&self.problem()).expect("vehicle problem is well formed")
    }

    pub fn candidate(&self) -> ExtremalCandidate {
        ExtremalCandidate {
            q0: vec![0.0, 0.0],
            p0: vec![self.p10, self.p10 * self.p10 / (4.0 * self.rho)],
            tau: [self.tau1(), self.tau2, self.tau3()],
            t_final: self.t_final(),
            u_singular: None,
        }
    }

    pub fn tau1(&self) -> f64 {
        (2.0 / (2.0 - self.p10)).ln() / self.rho
    }

    pub fn tau3(&self) -> f64 {
        self.tau2 + S.ln() / self.rho
    }

    pub fn t_final(&self) -> f64 {
        self.tau3() + ((self.p10 + 2.0 * S) / (2.0 * S)).ln() / self.rho
    }

    /// Δ = τ̂2 − τ̂1
    pub fn delta(&self) -> f64 {
        self.tau2 - self.tau1()
    }

    /// û_S = p1⁰/2
    pub fn u_singular(&self) -> f64 {
        self.p10 / 2.0
    }

    pub fn x2_singular(&self) -> f64 {
        self.p10 / (2.0 * self.rho)
    }

    /// Φ⁻ along the first bang arc.
    pub fn phi_minus_first_bang(&self, t: f64) -> f64 {
        let (r, a) = (self.rho, self.p10);
        (-r * t).exp() / (4.0 * r) * ((r * t).exp() * (2.0 - a) - 2.0).powi(2)
    }

    /// (Φ⁻, Φ⁺) = (p2 − x2, p2 + x2) along the inactivated arc.
    pub fn zero_arc_switching(&self, t: f64) -> (f64, f64) {
        let s = self.rho * (t - self.tau2);
        let c = self.p10 / (2.0 * self.rho);
        (c * (-s.exp() + 2.0 - (-s).exp()), c * (-s.exp() + 2.0 + (-s).exp()))
    }

    /// The reference (x1, x2, p1, p2) at time t.
    pub fn state(&self, t: f64) -> [f64; 4] {
        let (r, a) = (self.rho, self.p10);
        let (t1, t2, t3) = (self.tau1(), self.tau2, self.tau3());
        let xs = self.x2_singular();
        let x1_at_t1 = t1 / r - a / (2.0 * r * r);
        let x1_at_t2 = x1_at_t1 + xs * (t2 - t1);
        if t <= t1 {
            let e = (-r * t).exp();
            let x2 = (1.0 - e) / r;
            let p20 = a * a / (4.0 * r);
            let p2 = (p20 + (1.0 - a) / r) * (r * t).exp() - (1.0 - a) / r;
            [t / r - (1.0 - e) / (r * r), x2, a, p2]
        } else if t <= t2 {
            [x1_at_t1 + xs * (t - t1), xs, a, xs]
        } else if t <= t3 {
            let s = t - t2;
            let x2 = xs * (-r * s).exp();
            let p2 = xs * (2.0 - (r * s).exp());
            [x1_at_t2 + xs * (1.0 - (-r * s).exp()) / r, x2, a, p2]
        } else {
            let s = t - t3;
            let c = xs / S;
            let x1_at_t3 = x1_at_t2 + xs * (2.0 - SQRT_2) / r;
            let x2 = (c + 1.0 / r) * (-r * s).exp() - 1.0 / r;
            let x1 = x1_at_t3 + (c + 1.0 / r) * (1.0 - (-r * s).exp()) / r - s / r;
            let p2_t3 = xs * (2.0 - S);
            let p2 = (p2_t3 + (1.0 - a) / r) * (r * s).exp() - (1.0 - a) / r;
            [x1, x2, a, p2]
        }
    }

    /// Final position X = x1(T).
    pub fn x_final(&self) -> f64 {
        self.state(self.t_final())[0]
    }

    /// Regularity margin at τ̂1: ρ(2 − p1⁰).
    pub fn v1(&self) -> f64 {
        self.rho * (2.0 - self.p10)
    }

    /// Regularity margin at τ̂2: −ρ p1⁰.
    pub fn v2(&self) -> f64 {
        -self.rho * self.p10
    }

    /// The third regularity quantity as displayed for the example, −p1⁰.
    pub fn r3(&self) -> f64 {
        -self.p10
    }

    /// d/dt Φ⁺(λ̂(t)) at τ̂3, which is −√2 p1⁰.
    pub fn dphi_plus_tau3(&self) -> f64 {
        -SQRT_2 * self.p10
    }

    /// 𝕃 ≡ 2ρ.
    pub fn sglc(&self) -> f64 {
        2.0 * self.rho
    }

    /// [f0, f1] = (−1, ρ).
    pub fn f01(&self) -> [f64; 2] {
        [-1.0, self.rho]
    }

    /// g¹_t = f1 + ((e^{ρ(t−τ̂1)} − 1)/ρ) f01
    pub fn g1(&self, t: f64) -> [f64; 2] {
        let c = ((self.rho * (t - self.tau1())).exp() - 1.0) / self.rho;
        [-c, 1.0 + c * self.rho]
    }

    /// ġ¹_t = e^{ρ(t−τ̂1)} f01
    pub fn g1_dot(&self, t: f64) -> [f64; 2] {
        let e = (self.rho * (t - self.tau1())).exp();
        [-e, e * self.rho]
    }

    /// k = ((e^{ρ(τ̂3−τ̂1)} − 1)/ρ, −e^{ρ(τ̂3−τ̂1)})
    pub fn k(&self) -> [f64; 2] {
        let e = (self.rho * (self.tau3() - self.tau1())).exp();
        [(e - 1.0) / self.rho, -e]
    }

    /// The covector of the cross term, (0, −ρ e^{−ρ(t−τ̂1)}).
    pub fn cross_term(&self, t: f64) -> [f64; 2] {
        [0.0, -self.rho * (-self.rho * (t - self.tau1())).exp()]
    }

    /// C_ε at ε = 1: (2√2 + ρΔ)/(ρΔ).
    pub fn c_eps(&self) -> f64 {
        let rd = self.rho * self.delta();
        (2.0 * SQRT_2 + rd) / rd
    }

    /// Coefficient of ε² of the second variation on 𝓥⊥:
    /// 2 + √2 + 2/(ρΔ) + √2 û_S.
    pub fn vperp_coeff(&self) -> f64 {
        2.0 + SQRT_2 + 2.0 / (self.rho * self.delta()) + SQRT_2 * self.u_singular()
    }

    /// θ(x, p) = p1/(2ρ) − (x2 + p2)/2
    pub fn theta(&self, z: &[f64]) -> f64 {
        z[2] / (2.0 * self.rho) - (z[1] + z[3]) / 2.0
    }

    /// H0 = (p1 − ρ(p2 − x2))²/(4ρ)
    pub fn h0(&self, z: &[f64]) -> f64 {
        (z[2] - self.rho * (z[3] - z[1])).powi(2) / (4.0 * self.rho)
    }

    /// ν = p1/2
    pub fn nu(&self, z: &[f64]) -> f64 {
        z[2] / 2.0
    }

    /// K = H0 + (p1/2)(p2 − x2)
    pub fn k_hamiltonian(&self, z: &[f64]) -> f64 {
        self.h0(z) + z[2] / 2.0 * (z[3] - z[1])
    }

    /// Closed-form values by name. Scalars come back as one-element vectors.
    pub fn oracle(&self, which: &str) -> Result<Vec<f64>> {
        let v = match which {
            "tau1" => vec![self.tau1()],
            "tau2" => vec![self.tau2],
            "tau3" => vec![self.tau3()],
            "T" => vec![self.t_final()],
            "u_s" => vec![self.u_singular()],
            "x2_singular" | "p2_tau2" => vec![self.x2_singular()],
            "v1" => vec![self.v1()],
            "v2" => vec![self.v2()],
            "r3" => vec![self.r3()],
            "dphi_plus_tau3" => vec![self.dphi_plus_tau3()],
            "sglc" => vec![self.sglc()],
            "C_eps" => vec![self.c_eps()],
            "Vperp_coeff" => vec![self.vperp_coeff()],
            "X" => vec![self.x_final()],
            "T_lim" => vec![t_lim(self.rho, self.x_final())?],
            "f01" => self.f01().to_vec(),
            "k" => self.k().to_vec(),
            other => return Err(Error::Input(format!("unknown oracle key `{other}`"))),
        };
        Ok(v)
    }
}

/// The vehicle with small polynomial perturbations of f0, f1 and ψ,
/// c = (c0..c5). Zero coefficients give the reference problem with ρ = 1.
pub fn perturbed_problem(c: [f64; 6]) -> ProblemFile {
    ProblemFile {
        n: 2,
        params: Default::default(),
        f0: vec![format!("x2 + {}*x1^2", c[0]), format!("-x2 + {}*x1*x2", c[1])],
        f1: vec![format!("{}*x2", c[2]), format!("1 + {}*x1^2", c[3])],
        psi: format!("x2 + {}*x1^2 + {}*x2^2", c[4], c[5]),
    }
}

/// T_lim(ρ, X) = (1/ρ) ln(w + √(w² − 1)) with w = (1+√2)e^{ρ²X} − 1.
pub fn t_lim(rho: f64, x: f64) -> Result<f64> {
    if !(rho > 0.0 && x > 0.0) {
        return Err(Error::Input(format!("t_lim needs rho > 0 and X > 0, got {rho}, {x}")));
    }
    let w = S * (rho * rho * x).exp() - 1.0;
    let disc = w * w - 1.0;
    if disc < 0.0 {
        return Err(Error::Degenerate(format!("t_lim: negative discriminant {disc}")));
    }
    Ok((w + disc.sqrt()).ln() / rho)
}
