//! The generating functions α and θ at q̂1.
//!
//! Chart: q(y) = exp(y1 f1)(q̂1 + Σ_{j≥2} y_j e_j) with e_j an orthonormal
//! basis of f1(q̂1)⊥. In these coordinates f1 = ∂/∂y1, α solves ∂α/∂y1 = ψ
//! with α(0, y') = Σ ⟨ℓ̂1, e_j⟩ y_j, and θ = (s/2) Σ_{j≥2} y_j².

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::modeling::ControlledSystem;
use crate::ode::{self, OdeOptions};

#[derive(Debug, Clone)]
pub struct AlphaTheta<'a> {
    sys: &'a ControlledSystem,
    pub q1: DVector<f64>,
    pub l1: DVector<f64>,
    pub f1: DVector<f64>,
    /// e_2..e_n as columns.
    pub transversal: DMatrix<f64>,
    /// Dy(q̂1) = [f1(q̂1), e_2, …, e_n]⁻¹
    pub chart_inv: DMatrix<f64>,
    hess_alpha: DMatrix<f64>,
    hess_theta_unit: DMatrix<f64>,
    tol: f64,
}

impl<'a> AlphaTheta<'a> {
    /// `l1` is (q̂1, p̂1) as one cotangent point.
    pub fn build(sys: &'a ControlledSystem, l1: &[f64], tol: f64) -> Result<AlphaTheta<'a>> {
        let n = sys.n;
        let q1 = DVector::from_column_slice(&l1[..n]);
        let p1 = DVector::from_column_slice(&l1[n..]);
        let f1 = sys.f1.value_vec(q1.as_slice());
        if f1.norm() <= 1e-12 * (1.0 + q1.norm()) {
            return Err(Error::Degenerate("f1 vanishes at the first switching point".into()));
        }
        let transversal = if n > 1 { linalg::complement_basis(&f1) } else { DMatrix::zeros(1, 0) };
        let mut basis = DMatrix::zeros(n, n);
        basis.set_column(0, &f1);
        for j in 1..n {
            basis.set_column(j, &transversal.column(j - 1));
        }
        let chart_inv = linalg::inverse(&basis)?;

        // Hessian of α in y at 0, minus the curvature of the chart seen by ℓ̂1.
        let dpsi = sys.psi.gradient(q1.as_slice());
        let df1 = sys.f1.jacobian(q1.as_slice());
        let mut hy = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mixed = match (a, b) {
                    (0, 0) => dpsi.dot(&f1),
                    (0, j) | (j, 0) => dpsi.dot(&basis.column(j)),
                    _ => 0.0,
                };
                let curvature = match (a, b) {
                    (0, _) => p1.dot(&(&df1 * basis.column(b))),
                    (_, 0) => p1.dot(&(&df1 * basis.column(a))),
                    _ => 0.0,
                };
                hy[(a, b)] = mixed - curvature;
            }
        }
        let hess_alpha = chart_inv.transpose() * hy * &chart_inv;
        let mut d = DMatrix::identity(n, n);
        d[(0, 0)] = 0.0;
        let hess_theta_unit = chart_inv.transpose() * d * &chart_inv;
        Ok(AlphaTheta {
            sys,
            q1,
            l1: p1,
            f1,
            transversal,
            chart_inv,
            hess_alpha: 0.5 * (&hess_alpha + hess_alpha.transpose()),
            hess_theta_unit: 0.5 * (&hess_theta_unit + hess_theta_unit.transpose()),
            tol,
        })
    }

    pub fn hess_alpha(&self) -> &DMatrix<f64> {
        &self.hess_alpha
    }

    /// D²θ at q̂1 for penalty weight s.
    pub fn hess_theta(&self, s: f64) -> DMatrix<f64> {
        &self.hess_theta_unit * s
    }

    /// D²(α + θ)(q̂1)
    pub fn hessian(&self, s: f64) -> DMatrix<f64> {
        &self.hess_alpha + self.hess_theta(s)
    }

    /// Chart coordinates of q together with ∫_0^{y1} ψ along the f1-line.
    /// The f1-line through q is followed until it meets the transversal
    /// hyperplane through q̂1.
    fn chart(&self, q: &[f64]) -> Result<(DVector<f64>, f64)> {
        let n = self.sys.n;
        let offset = |x: &[f64]| self.f1.dot(&(DVector::from_column_slice(&x[..n]) - &self.q1));
        let g0 = offset(q);
        if g0 == 0.0 {
            let y = self.coords_on_hyperplane(q, 0.0);
            return Ok((y, 0.0));
        }
        let dir = -g0.signum();
        let mut y0 = q.to_vec();
        y0.push(0.0);
        let opts = OdeOptions::with_tol(self.tol);
        let reach = 10.0 * g0.abs() / self.f1.norm_squared() + 1e-3;
        let (_, hit) = ode::integrate_until(
            |_, y, dy| {
                let f = self.sys.f1.value_vec(&y[..n]);
                for i in 0..n {
                    dy[i] = dir * f[i];
                }
                dy[n] = self.sys.psi_value(&y[..n]);
                Ok(())
            },
            0.0,
            &y0,
            reach,
            &opts,
            |_, y| offset(y),
        )?;
        let hit = hit.ok_or_else(|| Error::NoConvergence("f1-line does not reach the transversal chart".into()))?;
        // the base point sits at y1 = −dir·s, and the cost integral flips with it
        let y1 = -dir * hit.t;
        let y = self.coords_on_hyperplane(&hit.y[..n], y1);
        Ok((y, -dir * hit.y[n]))
    }

    fn coords_on_hyperplane(&self, base: &[f64], y1: f64) -> DVector<f64> {
        let n = self.sys.n;
        let d = DVector::from_column_slice(&base[..n]) - &self.q1;
        let mut y = DVector::zeros(n);
        y[0] = y1;
        for j in 1..n {
            y[j] = self.transversal.column(j - 1).dot(&d);
        }
        y
    }

    /// Chart coordinates y(q).
    pub fn coords(&self, q: &[f64]) -> Result<DVector<f64>> {
        Ok(self.chart(q)?.0)
    }

    pub fn alpha(&self, q: &[f64]) -> Result<f64> {
        let (y, integral) = self.chart(q)?;
        let lin: f64 = (1..self.sys.n).map(|j| self.l1.dot(&self.transversal.column(j - 1)) * y[j]).sum();
        Ok(integral + lin)
    }

    pub fn theta(&self, q: &[f64], s: f64) -> Result<f64> {
        let y = self.coords(q)?;
        Ok(0.5 * s * y.rows(1, self.sys.n - 1).norm_squared())
    }

    /// ∇(α + θ)(q) by central differences with step h.
    pub fn gradient_fd(&self, q: &[f64], s: f64, h: f64) -> Result<DVector<f64>> {
        let n = self.sys.n;
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            let fa = self.alpha(&a)? + self.theta(&a, s)?;
            let fb = self.alpha(&b)? + self.theta(&b, s)?;
            g[i] = (fa - fb) / (2.0 * h);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::extremal::propagate;
    use crate::modeling::ProblemFile;
    use crate::vehicle::VehicleParams;

    fn curved() -> ControlledSystem {
        ControlledSystem::from_problem(&ProblemFile {
            n: 2,
            params: Default::default(),
            f0: vec!["x2".into(), "-x2".into()],
            f1: vec!["0.3*x2".into(), "1 + 0.2*x1^2".into()],
            psi: "1 + 0.5*x1 + 0.3*x2^2".into(),
        })
        .unwrap()
    }

    fn point(sys: &ControlledSystem) -> Vec<f64> {
        // p chosen so that ⟨p, f1⟩ = ψ at q
        let q = [0.4, -0.2];
        let f = sys.f1.value(&q);
        let p1 = 0.7;
        let p2 = (sys.psi_value(&q) - p1 * f[0]) / f[1];
        vec![q[0], q[1], p1, p2]
    }

    #[test]
    fn differential_of_alpha_is_the_costate() {
        let sys = curved();
        let l1 = point(&sys);
        let at = AlphaTheta::build(&sys, &l1, 1e-12).unwrap();
        let g = at.gradient_fd(&l1[..2], 3.0, 1e-5).unwrap();
        assert!((g[0] - l1[2]).abs() < 1e-8 && (g[1] - l1[3]).abs() < 1e-8, "{g}");
    }

    #[test]
    fn alpha_solves_the_transport_equation() {
        let sys = curved();
        let l1 = point(&sys);
        let at = AlphaTheta::build(&sys, &l1, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-4;
        for _ in 0..50 {
            let q: Vec<f64> = (0..2).map(|i| l1[i] + rng.gen_range(-0.05..0.05)).collect();
            // derivative of α along the f1-line through q
            let line = |s: f64| {
                let sol = ode::integrate(
                    |_, y, dy| {
                        dy.copy_from_slice(sys.f1.value(y).as_slice());
                        Ok(())
                    },
                    0.0,
                    &q,
                    s,
                    &OdeOptions::with_tol(1e-13),
                )
                .unwrap();
                at.alpha(&sol.y1).unwrap()
            };
            let d = (line(h) - line(-h)) / (2.0 * h);
            assert!((d - sys.psi_value(&q)).abs() < 1e-8, "{d} vs {}", sys.psi_value(&q));
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let sys = curved();
        let l1 = point(&sys);
        let at = AlphaTheta::build(&sys, &l1, 1e-13).unwrap();
        let s = 2.5;
        let h = 1e-3;
        let hess = at.hessian(s);
        let f = |dq: [f64; 2]| {
            let q = [l1[0] + dq[0], l1[1] + dq[1]];
            at.alpha(&q).unwrap() + at.theta(&q, s).unwrap()
        };
        for i in 0..2 {
            for j in 0..2 {
                let mut e = [[0.0; 2]; 2];
                e[0][i] += h;
                e[1][j] += h;
                let pp = f([e[0][0] + e[1][0], e[0][1] + e[1][1]]);
                let pm = f([e[0][0] - e[1][0], e[0][1] - e[1][1]]);
                let mp = f([-e[0][0] + e[1][0], -e[0][1] + e[1][1]]);
                let mm = f([-e[0][0] - e[1][0], -e[0][1] - e[1][1]]);
                let fd = (pp - pm - mp + mm) / (4.0 * h * h);
                assert!((fd - hess[(i, j)]).abs() < 1e-5, "[{i},{j}] {fd} vs {}", hess[(i, j)]);
            }
        }
    }

    #[test]
    fn graph_of_the_generating_function_lies_on_the_singular_surface() {
        let sys = curved();
        let l1 = point(&sys);
        let at = AlphaTheta::build(&sys, &l1, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q: Vec<f64> = (0..2).map(|i| l1[i] + rng.gen_range(-0.03..0.03)).collect();
            let p = at.gradient_fd(&q, 4.0, 1e-5).unwrap();
            let phi_minus = p.dot(&sys.f1.value_vec(&q)) - sys.psi_value(&q);
            assert!(phi_minus.abs() < 1e-8, "{phi_minus}");
        }
    }

    #[test]
    fn vehicle_boundary_form_along_f1() {
        let v = VehicleParams::reference();
        let traj = propagate(Arc::new(v.system()), &v.candidate(), 1e-11).unwrap();
        let at = AlphaTheta::build(&traj.sys, &traj.point(1), 1e-12).unwrap();
        let f1 = DVector::from_vec(vec![0.0, 1.0]);
        // Q0[f1]² = 1 for the vehicle, independent of s
        for s in [1.0, 64.0] {
            let q = at.hessian(s);
            assert!(((f1.transpose() * &q * &f1)[0] - 1.0).abs() < 1e-12);
            assert!((&q * &f1 - at.hess_alpha() * &f1).norm() < 1e-12);
        }
    }

    #[test]
    fn vanishing_f1_is_rejected() {
        let sys = ControlledSystem::from_problem(&ProblemFile {
            n: 2,
            params: Default::default(),
            f0: vec!["x2".into(), "0".into()],
            f1: vec!["0".into(), "x1".into()],
            psi: "1".into(),
        })
        .unwrap();
        assert!(matches!(AlphaTheta::build(&sys, &[0.0, 0.0, 1.0, 1.0], 1e-10), Err(Error::Degenerate(_))));
    }
}
