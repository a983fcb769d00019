//! Implicit switching-time maps of the perturbed flow.

use nalgebra::DVector;

use super::overmax::{line_flow, rate, H0Ham, H0PlusPhiMinusHam, OverMax};
use crate::error::{Error, Result};
use crate::modeling::cotangent::{flow, Hamiltonian};
use crate::modeling::CotFn;
use crate::ode::OdeOptions;

/// t1, t2 and τ3 for points near the reference, anchored at the reference
/// switching times `tau_hat = [0, τ̂1, τ̂2, τ̂3, T]`.
#[derive(Debug, Clone, Copy)]
pub struct SwitchTimes<'a> {
    pub om: &'a OverMax,
    pub tau_hat: [f64; 5],
}

impl<'a> SwitchTimes<'a> {
    pub fn new(om: &'a OverMax, tau_hat: [f64; 5]) -> SwitchTimes<'a> {
        SwitchTimes { om, tau_hat }
    }

    /// Newton for the zero of s ↦ target(exp(sH⃗)z).
    fn flow_newton(&self, h: &dyn Hamiltonian, target: &CotFn, z: &[f64], what: &str) -> Result<f64> {
        let opts = OdeOptions::with_tol(1e-12);
        let tol = self.om.opts.newton_tol * (1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let (mut s, mut w) = (0.0, z.to_vec());
        for _ in 0..self.om.opts.max_iter {
            let g = target.eval(&w);
            if g.abs() <= tol {
                return Ok(s);
            }
            let d = target.grad(&w).dot(&h.vector_field(&w)?);
            if !(d.abs() > 1e-12) {
                return Err(Error::NoConvergence(format!("{what}: transversality lost (rate {d:e})")));
            }
            let ds = -g / d;
            w = flow(h, &w, ds, &opts)?;
            s += ds;
            if ds.abs() <= 1e-16 * (1.0 + s.abs()) {
                return Ok(s);
            }
        }
        Err(Error::NoConvergence(format!("{what}: Newton did not converge in {} iterations", self.om.opts.max_iter)))
    }

    /// Zero of t ↦ G(exp((t − τ̂1)(H⃗0 + Φ⃗⁻))ℓ) for ℓ ∈ Σ⁻ given at τ̂1.
    pub fn t1(&self, l: &[f64]) -> Result<f64> {
        Ok(self.tau_hat[1] + self.flow_newton(&H0PlusPhiMinusHam(self.om), &self.om.lifts.g, l, "t1")?)
    }

    pub fn tau1(&self, l: &[f64]) -> Result<f64> {
        let t = self.t1(l)?;
        if t <= self.tau_hat[0] {
            return Err(Error::NoConvergence(format!("t1 = {t} left the time interval")));
        }
        Ok(t.min(self.tau_hat[1]))
    }

    /// Zero of t ↦ G(exp((t − τ̂2)H⃗0)ℓ2) for ℓ2 given at τ̂2.
    pub fn t2(&self, l2: &[f64]) -> Result<f64> {
        Ok(self.tau_hat[2] + self.flow_newton(&H0Ham(self.om), &self.om.lifts.g, l2, "t2")?)
    }

    pub fn tau2(&self, l2: &[f64]) -> Result<f64> {
        Ok(self.t2(l2)?.max(self.tau_hat[2]))
    }

    /// First zero of Φ⁺ along the F0-flow of ℓ given at time t0.
    pub fn tau3_from(&self, l: &[f64], t0: f64) -> Result<f64> {
        let lifts = &self.om.lifts;
        let guess = self.tau_hat[3] - t0;
        let (s, _) = self.om.line_newton_from(&lifts.f0, &lifts.phi_plus, l, guess, "tau3")?;
        let t = t0 + s;
        if t <= t0 || t >= self.tau_hat[4] {
            return Err(Error::NoConvergence(format!("branch-time ordering violated: τ3 = {t}")));
        }
        Ok(t)
    }

    /// τ3 for ℓ2 given at τ̂2.
    pub fn tau3(&self, l2: &[f64]) -> Result<f64> {
        self.tau3_from(l2, self.tau_hat[2])
    }

    /// dτ3(ℓ2) = −(D exp((τ3 − τ̂2)F⃗0))ᵀ dΦ⁺(ℓ3) / ⟨dΦ⁺, F⃗0⟩(ℓ3).
    pub fn dtau3(&self, l2: &[f64]) -> Result<DVector<f64>> {
        let lifts = &self.om.lifts;
        let s = self.tau3(l2)? - self.tau_hat[2];
        let (l3, m) = line_flow(&lifts.f0, l2, s, self.om.opts.line_step, true);
        let m = m.expect("linearization requested");
        let r = rate(&lifts.phi_plus, &lifts.f0, &l3);
        if !(r.abs() > 1e-12) {
            return Err(Error::Degenerate(format!("Φ⁺ is tangent to the F0 flow at τ3 (rate {r:e})")));
        }
        Ok(-(m.transpose() * lifts.phi_plus.grad(&l3)) / r)
    }
}
