//! Goh-transformed extended second variation on [τ̂1, τ̂2]:
//!
//! ```text
//!   J″[δe]² = ½ Q0[ζ(τ̂1)]² + ½ ∫ (R w² + 2 w ⟨A, ζ⟩) dt + ½ c_ε ε²,
//!   ζ̇ = w ġ¹_t,   ζ(τ̂1) = ε0 f1(q̂1),   ζ(τ̂2) = −ε k.
//! ```
//!
//! A(t) is the time derivative of dB_t(q̂1) with
//! B_t = ψ̂_t + L_{g¹_t}(γ̂_T + Ŝ⁰_T − Ŝ⁰_t) and γ_T(q) = −⟨ℓ̂_T, q − q̂_T⟩.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::alpha::AlphaTheta;
use super::pullback::{FrameAt, PullbackFrame};
use crate::error::{Error, Result};
use crate::extremal::{singular_feedback, ExtremalTrajectory};
use crate::linalg;
use crate::ode::{self, OdeOptions};

/// Coefficients of the LQ problem at one time of the singular arc.
#[derive(Debug, Clone)]
pub struct LqCoefficients {
    pub t: f64,
    /// 𝕃(λ̂(t)), times the configured scale
    pub r: f64,
    /// ⟨b, ġ¹⟩ − ⟨ḃ, g¹⟩ from the Goh integration by parts; equals 𝕃 when the
    /// pieces are consistent
    pub r_goh: f64,
    pub g1: DVector<f64>,
    pub g1_dot: DVector<f64>,
    /// dB_t(q̂1)
    pub b: DVector<f64>,
    /// the cross-term covector A(t) = d/dt dB_t(q̂1)
    pub a: DVector<f64>,
}

/// Boundary data at τ̂3 entering the ε-block.
#[derive(Debug, Clone, Serialize)]
pub struct SwitchTerms {
    /// L_{k4}ψ̂_{τ̂3}(q̂1)
    pub lk4_psi: f64,
    /// L_kψ̂_{τ̂3}(q̂1)
    pub lk_psi: f64,
    /// L²_k(γ̂_T + Ŝ⁰_T − Ŝ⁰_{τ̂2})(q̂1)
    pub l2k_gamma: f64,
    /// L_{[k4,k3]}(γ̂_T + Ŝ⁰_T − Ŝ⁰_{τ̂2})(q̂1)
    pub bracket_gamma: f64,
    pub r3: f64,
}

#[derive(Debug, Clone)]
pub struct GohLQ<'a> {
    pub frame: PullbackFrame<'a>,
    pub alpha: AlphaTheta<'a>,
    pub tau1: f64,
    pub tau2: f64,
    pub f1: DVector<f64>,
    pub k: DVector<f64>,
    /// d(γ̂_T + Ŝ⁰_T)(q̂1)
    pub dgamma1: DVector<f64>,
    /// D²(γ̂_T + Ŝ⁰_T)(q̂1)
    pub hess_gamma1: DMatrix<f64>,
    pub c_eps: f64,
    pub switch: SwitchTerms,
    /// Multiplies R; 1 except in sensitivity runs.
    pub r_scale: f64,
    /// Added to Q0 as a multiple of the identity; 0 except in fault injection.
    pub q0_shift: f64,
    tol: f64,
}

impl<'a> GohLQ<'a> {
    pub fn build(traj: &'a ExtremalTrajectory, tol: f64) -> Result<GohLQ<'a>> {
        let frame = PullbackFrame::build(traj, tol)?;
        let alpha = AlphaTheta::build(&traj.sys, &traj.point(1), tol)?;
        let n = traj.n();
        let sys = &traj.sys;
        let (tau1, tau2) = (traj.times[1], traj.times[2]);

        let lt = traj.point(4);
        let p_t = DVector::from_column_slice(&lt[n..]);
        let ft = frame.at_on(3, traj.times[4])?;
        let dgamma1 = -ft.phi.transpose() * &p_t + &ft.sigma;
        let mut hess_gamma1 = ft.big_sigma.clone();
        for (i, h) in ft.psi2.iter().enumerate() {
            hess_gamma1 -= h * p_t[i];
        }
        let hess_gamma1 = 0.5 * (&hess_gamma1 + hess_gamma1.transpose());

        let f2 = frame.at_on(1, tau2)?;
        let f3 = frame.at_on(2, traj.times[3])?;
        let x3 = f3.x.as_slice();
        let p = f3.pull(&sys.f1.value_vec(x3));
        if p.norm() <= 1e-12 {
            return Err(Error::Degenerate("k(q̂1) vanishes: f1 is zero at the last switching point".into()));
        }
        let k = -&p;
        let dk = -f3.pull_jacobian(&sys.f1.jacobian(x3), &p);
        let k4 = f3.pull(&(sys.f0.value_vec(x3) - sys.f1.value_vec(x3)));
        let kb = f3.pull(&sys.derived.f01.value_vec(x3));
        let dg = &dgamma1 - &f2.sigma;
        let d2g = &hess_gamma1 - &f2.big_sigma;
        let dpsi3 = f3.phi.transpose() * sys.psi.gradient(x3);
        let l3 = traj.point(3);
        let a3 = sys.psi_value(x3).signum();
        let switch = SwitchTerms {
            lk4_psi: dpsi3.dot(&k4),
            lk_psi: dpsi3.dot(&k),
            l2k_gamma: k.dot(&(&d2g * &k)) + dg.dot(&(&dk * &k)),
            bracket_gamma: dg.dot(&kb),
            r3: traj.lifts.f01.eval(&l3) + a3 * sys.derived.lf0_psi.eval(x3),
        };
        let c_eps = -switch.lk4_psi - switch.l2k_gamma + switch.bracket_gamma;

        let lq = GohLQ {
            f1: alpha.f1.clone(),
            frame,
            alpha,
            tau1,
            tau2,
            k,
            dgamma1,
            hess_gamma1,
            c_eps,
            switch,
            r_scale: 1.0,
            q0_shift: 0.0,
            tol,
        };
        for t in linalg::chebyshev_nodes(tau1, tau2, 64).into_iter().chain([tau1, tau2]) {
            let r = lq.r(t)?;
            if !(r > 0.0) {
                return Err(Error::Degenerate(format!("R = {r} is not positive at t = {t}")));
            }
        }
        Ok(lq)
    }

    pub fn traj(&self) -> &'a ExtremalTrajectory {
        self.frame.traj
    }

    pub fn n(&self) -> usize {
        self.frame.n()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Q0 = D²(α + θ + γ̂_T + Ŝ⁰_T)(q̂1) for penalty weight s.
    pub fn q0(&self, s: f64) -> DMatrix<f64> {
        let n = self.n();
        self.alpha.hessian(s) + &self.hess_gamma1 + DMatrix::identity(n, n) * self.q0_shift
    }

    /// R(t) = 𝕃(λ̂(t)), scaled.
    pub fn r(&self, t: f64) -> Result<f64> {
        let traj = self.traj();
        Ok(singular_feedback(&traj.lifts, &traj.state_on(1, t))?.1 * self.r_scale)
    }

    /// |dΓ1 + ℓ̂1|: the differential of γ̂_T + Ŝ⁰_T at q̂1 equals −ℓ̂1 along
    /// an extremal.
    pub fn costate_residual(&self) -> f64 {
        let n = self.n();
        let l1 = self.traj().point(1);
        (&self.dgamma1 + DVector::from_column_slice(&l1[n..])).amax()
    }

    /// The three terms that make up −c_ε, assembled the other way round:
    /// 𝔯3 + L_kψ̂ + L²_kΓ. Agrees with −c_ε on an extremal.
    pub fn minus_c_eps_alt(&self) -> f64 {
        self.switch.r3 + self.switch.lk_psi + self.switch.l2k_gamma
    }

    pub fn coefficients(&self, t: f64) -> Result<LqCoefficients> {
        let fa = self.frame.at_on(1, t)?;
        self.coefficients_at(&fa)
    }

    fn coefficients_at(&self, fa: &FrameAt) -> Result<LqCoefficients> {
        let sys = &self.traj().sys;
        let x = fa.x.as_slice();
        let g1 = fa.pull(&sys.f1.value_vec(x));
        let g1_dot = fa.pull(&sys.derived.f01.value_vec(x));
        let dg1 = fa.pull_jacobian(&sys.f1.jacobian(x), &g1);
        let dg1_dot = fa.pull_jacobian(&sys.derived.f01.jacobian(x), &g1_dot);
        let dgam = &self.dgamma1 - &fa.sigma;
        let d2gam = &self.hess_gamma1 - &fa.big_sigma;
        let grad_psi = sys.psi.gradient(x);
        let dpsi_hat = fa.phi.transpose() * &grad_psi;
        let d2psi_hat = fa.pulled_hessian(&grad_psi, &sys.psi.hessian(x));

        let b = &dpsi_hat + &d2gam * &g1 + dg1.transpose() * &dgam;
        let (gl0, gl1) = self.frame.lie_psi_gradients(x);
        let dchi = gl0 + gl1 * fa.u;
        let a = fa.phi.transpose() * dchi + &d2gam * &g1_dot + dg1_dot.transpose() * &dgam
            - (&d2psi_hat * &g1 + dg1.transpose() * &dpsi_hat) * fa.u.abs();
        let r_goh = b.dot(&g1_dot) - a.dot(&g1);
        Ok(LqCoefficients { t: fa.t, r: self.r(fa.t)?, r_goh, g1, g1_dot, b, a })
    }

    /// J″ on the constrained space, with the admissibility residual.
    pub fn evaluate(&self, var: &Variation, s: f64) -> Result<QuadraticValue> {
        let n = self.n();
        let zeta0 = &self.f1 * var.eps0;
        let boundary = 0.5 * zeta0.dot(&(self.q0(s) * &zeta0));
        let mut y0 = zeta0.as_slice().to_vec();
        y0.push(0.0);
        let mut opts = OdeOptions::with_tol(self.tol);
        if let WProfile::Samples { t, .. } = &var.w {
            opts.hmax = t.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min).max(1e-6);
        }
        let sol = ode::integrate(
            |t, y, dy| {
                let c = self.coefficients(t)?;
                let w = var.w.eval(t);
                let zeta = DVector::from_column_slice(&y[..n]);
                for i in 0..n {
                    dy[i] = w * c.g1_dot[i];
                }
                dy[n] = 0.5 * c.r * w * w + w * c.a.dot(&zeta);
                Ok(())
            },
            self.tau1,
            &y0,
            self.tau2,
            &opts,
        )?;
        let zeta_end = DVector::from_column_slice(&sol.y1[..n]);
        let residual = (&zeta_end + &self.k * var.eps).norm();
        let value = boundary + sol.y1[n] + 0.5 * self.c_eps * var.eps * var.eps;
        let scale = 1.0 + self.k.norm() * var.eps.abs() + self.f1.norm() * var.eps0.abs();
        Ok(QuadraticValue { value, residual, admissible: residual <= 1e-7 * scale })
    }

    /// Weighted Legendre moments ∫ P_i ġ¹ dt (columns), the linear part of
    /// ζ(τ̂2) for w in the Legendre basis.
    pub fn legendre_moments(&self, degree: usize, panels: usize) -> Result<DMatrix<f64>> {
        let (ts, ws) = linalg::composite_gauss(self.tau1, self.tau2, panels, 8);
        let rows = crate::par::try_map(&ts, |&t| self.coefficients(t).map(|c| c.g1_dot))?;
        let mut m = DMatrix::zeros(self.n(), degree + 1);
        for ((t, w), g) in ts.iter().zip(&ws).zip(&rows) {
            let p = legendre(self.tau1, self.tau2, degree, *t);
            for (i, pi) in p.iter().enumerate() {
                for r in 0..self.n() {
                    m[(r, i)] += w * pi * g[r];
                }
            }
        }
        Ok(m)
    }
}

/// Legendre polynomials P_0..P_degree on [a, b] at t.
pub fn legendre(a: f64, b: f64, degree: usize, t: f64) -> Vec<f64> {
    let x = (2.0 * t - a - b) / (b - a);
    let mut p = vec![1.0; degree + 1];
    if degree >= 1 {
        p[1] = x;
    }
    for k in 1..degree {
        p[k + 1] = ((2 * k + 1) as f64 * x * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
    }
    p
}

/// Control variation w on [τ̂1, τ̂2].
#[derive(Debug, Clone, PartialEq)]
pub enum WProfile {
    Zero,
    Legendre { a: f64, b: f64, coeffs: Vec<f64> },
    /// Piecewise-linear through the samples; constant beyond the ends.
    Samples { t: Vec<f64>, w: Vec<f64> },
}

impl WProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            WProfile::Zero => 0.0,
            WProfile::Legendre { a, b, coeffs } => {
                legendre(*a, *b, coeffs.len().saturating_sub(1), t).iter().zip(coeffs).map(|(p, c)| p * c).sum()
            }
            WProfile::Samples { t: ts, w } => {
                if ts.is_empty() {
                    return 0.0;
                }
                let i = ts.partition_point(|&s| s <= t);
                if i == 0 {
                    w[0]
                } else if i == ts.len() {
                    w[ts.len() - 1]
                } else {
                    let l = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
                    w[i - 1] + l * (w[i] - w[i - 1])
                }
            }
        }
    }

    /// ∫ w² over [a, b].
    pub fn norm_sq(&self, a: f64, b: f64) -> f64 {
        match self {
            WProfile::Zero => 0.0,
            WProfile::Legendre { a, b, coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * c * (b - a) / (2 * i + 1) as f64)
                .sum(),
            WProfile::Samples { .. } => {
                let (ts, ws) = linalg::composite_gauss(a, b, 256, 4);
                ts.iter().zip(&ws).map(|(t, q)| q * self.eval(*t).powi(2)).sum()
            }
        }
    }
}

/// δe = (ε0, ε, w).
#[derive(Debug, Clone, PartialEq)]
pub struct Variation {
    pub eps0: f64,
    pub eps: f64,
    pub w: WProfile,
}

impl Variation {
    pub fn zero() -> Variation {
        Variation { eps0: 0.0, eps: 0.0, w: WProfile::Zero }
    }

    pub fn norm_sq(&self, a: f64, b: f64) -> f64 {
        self.eps0 * self.eps0 + self.eps * self.eps + self.w.norm_sq(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticValue {
    pub value: f64,
    /// |ζ(τ̂2) + ε k(q̂1)|
    pub residual: f64,
    pub admissible: bool,
}

/// Perturbation of the reference used for the first-variation check: the
/// singular control gets `v(t)` added and τ̂1, τ̂3 move by `d_tau1`, `d_tau3`
/// per unit of the step.
pub struct FirstVariationDirection<'f> {
    pub v: &'f (dyn Fn(f64) -> f64 + Sync),
    pub d_tau1: f64,
    pub d_tau3: f64,
}

/// Bolza cost γ_T(ξ(T)) + ∫|uψ(ξ)| of the perturbed open-loop control.
pub fn bolza_cost(traj: &ExtremalTrajectory, dir: &FirstVariationDirection<'_>, h: f64, tol: f64) -> Result<f64> {
    let n = traj.n();
    let sys = &traj.sys;
    let tm = traj.times;
    let t1 = tm[1] + h * dir.d_tau1;
    let t3 = tm[3] + h * dir.d_tau3;
    let cuts = [tm[0], t1, tm[2], t3, tm[4]];
    let u = |arc: usize, t: f64| -> Result<f64> {
        Ok(match arc {
            0 => 1.0,
            1 => singular_feedback(&traj.lifts, &traj.state_on(1, t))?.0 + h * (dir.v)(t),
            2 => 0.0,
            _ => -1.0,
        })
    };
    let mut y: Vec<f64> = traj.candidate.q0.clone();
    y.push(0.0);
    let opts = OdeOptions::with_tol(tol);
    for arc in 0..4 {
        let sol = ode::integrate(
            |t, y, dy| {
                let c = u(arc, t)?;
                dy[..n].copy_from_slice(sys.drift(&y[..n], c).as_slice());
                dy[n] = (c * sys.psi_value(&y[..n])).abs();
                Ok(())
            },
            cuts[arc],
            &y,
            cuts[arc + 1],
            &opts,
        )?;
        y = sol.y1;
    }
    let lt = traj.point(4);
    let gamma: f64 = (0..n).map(|i| -lt[n + i] * (y[i] - lt[i])).sum();
    Ok(gamma + y[n])
}

/// Central difference of the Bolza cost at the reference, divided by the
/// size of the direction and the cost scale.
pub fn first_variation(traj: &ExtremalTrajectory, dir: &FirstVariationDirection<'_>, h: f64, tol: f64) -> Result<f64> {
    let jp = bolza_cost(traj, dir, h, tol)?;
    let jm = bolza_cost(traj, dir, -h, tol)?;
    let j0 = bolza_cost(traj, dir, 0.0, tol)?;
    let vmax = linalg::chebyshev_nodes(traj.times[1], traj.times[2], 64)
        .into_iter()
        .map(|t| (dir.v)(t).abs())
        .fold(0.0, f64::max);
    let size = vmax + dir.d_tau1.abs() + dir.d_tau3.abs();
    Ok((jp - jm) / (2.0 * h) / (size.max(1e-300) * j0.abs().max(1.0)))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::extremal::propagate;
    use crate::vehicle::VehicleParams;

    fn vehicle() -> (VehicleParams, ExtremalTrajectory) {
        let v = VehicleParams::reference();
        let traj = propagate(Arc::new(v.system()), &v.candidate(), 1e-12).unwrap();
        (v, traj)
    }

    #[test]
    fn vehicle_lq_coefficients() {
        let (v, traj) = vehicle();
        let lq = GohLQ::build(&traj, 1e-12).unwrap();
        for i in 0..64 {
            let t = lq.tau1 + (lq.tau2 - lq.tau1) * (i as f64 + 0.5) / 64.0;
            let c = lq.coefficients(t).unwrap();
            assert!((c.r - 2.0 * v.rho).abs() < 1e-10, "R = {}", c.r);
            assert!((c.r_goh - c.r).abs() < 1e-9, "Goh R = {}", c.r_goh);
            let ct = v.cross_term(t);
            assert!((c.a[0] - ct[0]).abs() < 1e-8 && (c.a[1] - ct[1]).abs() < 1e-8, "{}", c.a);
        }
        assert!(lq.hess_gamma1.amax() < 1e-12);
        assert!(lq.costate_residual() < 1e-9);
        assert!((lq.c_eps - (1.0 + std::f64::consts::SQRT_2)).abs() < 1e-9, "{}", lq.c_eps);
        assert!(lq.switch.l2k_gamma.abs() < 1e-12);
        assert!((lq.minus_c_eps_alt() + lq.c_eps).abs() < 1e-9);
        let k = v.k();
        assert!((lq.k[0] - k[0]).abs() < 1e-9 && (lq.k[1] - k[1]).abs() < 1e-9);
    }

    #[test]
    fn zero_variation_gives_zero() {
        let (_, traj) = vehicle();
        let lq = GohLQ::build(&traj, 1e-10).unwrap();
        let q = lq.evaluate(&Variation::zero(), 1.0).unwrap();
        assert_eq!(q.value, 0.0);
        assert!(q.admissible);
    }

    #[test]
    fn sampled_profiles_interpolate_linearly() {
        let w = WProfile::Samples { t: vec![0.0, 1.0, 3.0], w: vec![0.0, 2.0, -2.0] };
        assert_eq!(w.eval(-1.0), 0.0);
        assert_eq!(w.eval(0.5), 1.0);
        assert_eq!(w.eval(2.0), 0.0);
        assert_eq!(w.eval(9.0), -2.0);
        let l = WProfile::Legendre { a: 0.0, b: 2.0, coeffs: vec![1.0, 1.0] };
        assert!((l.norm_sq(0.0, 2.0) - (2.0 + 2.0 / 3.0)).abs() < 1e-14);
        assert!((l.eval(2.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn first_variation_vanishes_at_the_extremal() {
        let (v, traj) = vehicle();
        let (a, b) = (traj.times[1], traj.times[2]);
        let bump = move |t: f64| if t > a && t < b { ((t - a) * (b - t)).powi(2) * 8.0 } else { 0.0 };
        let dir = FirstVariationDirection { v: &bump, d_tau1: 0.3, d_tau3: -0.2 };
        let d = first_variation(&traj, &dir, 1e-6, 1e-12).unwrap();
        assert!(d.abs() < 1e-5, "{d}");
        // moving the last switch alone is also first-order free; ψ∘ξ̂ vanishes
        // at T, so the cost is only C¹ in τ3 and the step has to stay small
        let none = |_: f64| 0.0;
        let dir = FirstVariationDirection { v: &none, d_tau1: 0.0, d_tau3: 1.0 };
        let d3 = first_variation(&traj, &dir, 1e-6, 1e-12).unwrap();
        assert!(d3.abs() < 1e-5, "{d3}");
        let _ = v;
    }

    #[test]
    fn first_variation_detects_a_wrong_switch() {
        // shifting the declared τ̂3 away from the zero of Φ⁺ breaks stationarity
        let v = VehicleParams::reference();
        let mut c = v.candidate();
        c.tau[2] += 0.05;
        c.t_final += 0.05;
        let traj = propagate(Arc::new(v.system()), &c, 1e-12).unwrap();
        let none = |_: f64| 0.0;
        let dir = FirstVariationDirection { v: &none, d_tau1: 0.0, d_tau3: 1.0 };
        assert!(first_variation(&traj, &dir, 1e-6, 1e-12).unwrap().abs() > 1e-3);
    }
}
