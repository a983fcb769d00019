//! The reference flow Ŝ_t based at τ̂1 together with its first and second
//! differentials and the differentials of the running cost Ŝ⁰_t, all at q̂1.
//! Vector fields are pulled back to q̂1 through DŜ_t.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::extremal::{singular_feedback, ExtremalTrajectory};
use crate::linalg;
use crate::modeling::SmoothMap;
use crate::ode::{self, OdeOptions, Solution};

/// Offsets inside the augmented state (x, Φ, Ψ, σ, Σ).
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
}

impl Layout {
    fn phi(&self) -> usize {
        self.n
    }
    fn psi(&self) -> usize {
        self.n + self.n * self.n
    }
    fn sigma(&self) -> usize {
        self.psi() + self.n.pow(3)
    }
    fn big_sigma(&self) -> usize {
        self.sigma() + self.n
    }
    fn len(&self) -> usize {
        self.big_sigma() + self.n * self.n
    }
}

/// Everything the second variation needs from the reference at one time.
#[derive(Debug, Clone)]
pub struct FrameAt {
    pub t: f64,
    pub u: f64,
    pub x: DVector<f64>,
    /// Φ = DŜ_t(q̂1)
    pub phi: DMatrix<f64>,
    pub phi_inv: DMatrix<f64>,
    /// Ψ = D²Ŝ_t(q̂1): `psi2[i][(j, k)] = ∂²Ŝ_i/∂q_j∂q_k`
    pub psi2: Vec<DMatrix<f64>>,
    /// dŜ⁰_t(q̂1)
    pub sigma: DVector<f64>,
    /// D²Ŝ⁰_t(q̂1)
    pub big_sigma: DMatrix<f64>,
}

impl FrameAt {
    /// Ψ[a, b] as a vector.
    pub fn psi_apply(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.psi2.len(), self.psi2.iter().map(|h| a.dot(&(h * b))))
    }

    /// Ψ[a, ·] as a matrix.
    pub fn psi_partial(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let n = self.psi2.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, h) in self.psi2.iter().enumerate() {
            m.set_row(i, &(h.transpose() * a).transpose());
        }
        m
    }

    /// Pull-back Ŝ_{t*}⁻¹ g(Ŝ_t) at q̂1, given g at x(t).
    pub fn pull(&self, g_at_x: &DVector<f64>) -> DVector<f64> {
        &self.phi_inv * g_at_x
    }

    /// Differential at q̂1 of the pulled-back field, given its value `p`
    /// and the Jacobian of g at x(t): v ↦ Φ⁻¹(Dg Φ v − Ψ[p, v]).
    pub fn pull_jacobian(&self, dg_at_x: &DMatrix<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        &self.phi_inv * (dg_at_x * &self.phi - self.psi_partial(p))
    }

    /// Hessian at q̂1 of φ∘Ŝ_t, given ∇φ and D²φ at x(t).
    pub fn pulled_hessian(&self, grad: &DVector<f64>, hess: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = self.phi.transpose() * hess * &self.phi;
        for (i, p) in self.psi2.iter().enumerate() {
            h += p * grad[i];
        }
        h
    }
}

/// The second-order variational flow of the reference over [τ̂1, T], one
/// dense solution per arc (singular, zero, bang−).
#[derive(Debug, Clone)]
pub struct PullbackFrame<'a> {
    pub traj: &'a ExtremalTrajectory,
    layout: Layout,
    arcs: Vec<Solution>,
    /// ∇L_{f0}ψ and ∇L_{f1}ψ as one map.
    lie_psi: SmoothMap,
}

impl<'a> PullbackFrame<'a> {
    pub fn build(traj: &'a ExtremalTrajectory, tol: f64) -> Result<PullbackFrame<'a>> {
        let n = traj.n();
        let layout = Layout { n };
        let opts = OdeOptions::with_tol(tol);
        let mut y = vec![0.0; layout.len()];
        y[..n].copy_from_slice(&traj.point(1)[..n]);
        for i in 0..n {
            y[layout.phi() + i + n * i] = 1.0;
        }
        let mut arcs = Vec::with_capacity(3);
        for arc in 1..4 {
            let (t0, t1) = (traj.times[arc], traj.times[arc + 1]);
            let sol = ode::integrate(|t, y, dy| rhs(traj, layout, arc, t, y, dy), t0, &y, t1, &opts)?;
            y = sol.y1.clone();
            arcs.push(sol);
        }
        let d = &traj.sys.derived;
        let lie_psi = SmoothMap::new(vec![d.lf0_psi.clone(), d.lf1_psi.clone()], n);
        Ok(PullbackFrame { traj, layout, arcs, lie_psi })
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    /// Frame at t on a given trajectory arc (1 = singular, 2 = zero,
    /// 3 = bang−); t is clamped to that arc.
    pub fn at_on(&self, arc: usize, t: f64) -> Result<FrameAt> {
        let n = self.n();
        let l = self.layout;
        let y = self.arcs[arc - 1].eval(t);
        let phi = DMatrix::from_column_slice(n, n, &y[l.phi()..l.psi()]);
        let phi_inv = linalg::inverse(&phi)?;
        let psi2 = (0..n)
            .map(|i| DMatrix::from_fn(n, n, |j, k| y[l.psi() + i + n * j + n * n * k]))
            .collect();
        let t_c = t.clamp(self.traj.times[arc], self.traj.times[arc + 1]);
        Ok(FrameAt {
            t: t_c,
            u: control(self.traj, arc, t_c)?,
            x: DVector::from_column_slice(&y[..n]),
            phi,
            phi_inv,
            psi2,
            sigma: DVector::from_column_slice(&y[l.sigma()..l.big_sigma()]),
            big_sigma: DMatrix::from_column_slice(n, n, &y[l.big_sigma()..l.len()]),
        })
    }

    /// Frame at t ∈ [τ̂1, T]; switching times belong to the later arc.
    pub fn at(&self, t: f64) -> Result<FrameAt> {
        self.at_on(self.traj.arc_index(t).max(1), t)
    }

    /// ∇(L_{f0}ψ) and ∇(L_{f1}ψ) at x.
    pub fn lie_psi_gradients(&self, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let j = self.lie_psi.jacobian(x);
        (j.row(0).transpose(), j.row(1).transpose())
    }
}

/// Open-loop reference control on an arc: the feedback is evaluated along
/// λ̂(t), never along perturbed states.
fn control(traj: &ExtremalTrajectory, arc: usize, t: f64) -> Result<f64> {
    Ok(match arc {
        1 => singular_feedback(&traj.lifts, &traj.state_on(1, t))?.0,
        2 => 0.0,
        3 => -1.0,
        _ => 1.0,
    })
}

fn rhs(traj: &ExtremalTrajectory, l: Layout, arc: usize, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let n = l.n;
    let sys = &traj.sys;
    let u = control(traj, arc, t)?;
    let x = &y[..n];
    let f = sys.drift(x, u);
    let jac = sys.f0.jacobian(x) + sys.f1.jacobian(x) * u;
    let h0 = sys.f0.hessians(x);
    let h1 = sys.f1.hessians(x);
    let dpsi = sys.psi.gradient(x);
    let d2psi = sys.psi.hessian(x);
    if !f.iter().chain(jac.iter()).chain(dpsi.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonSmooth(format!("reference data not finite at t = {t}")));
    }
    let phi = DMatrix::from_column_slice(n, n, &y[l.phi()..l.psi()]);
    let psi = |i: usize, j: usize, k: usize| y[l.psi() + i + n * j + n * n * k];

    dy[..n].copy_from_slice(f.as_slice());
    dy[l.phi()..l.psi()].copy_from_slice((&jac * &phi).as_slice());
    // Ψ̇_ijk = Σ_l J_il Ψ_ljk + D²f̂_i[Φe_j, Φe_k]
    let hphi: Vec<DMatrix<f64>> =
        (0..n).map(|i| phi.transpose() * (&h0[i] + &h1[i] * u) * &phi).collect();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let mut s = hphi[i][(j, k)];
                for m in 0..n {
                    s += jac[(i, m)] * psi(m, j, k);
                }
                dy[l.psi() + i + n * j + n * n * k] = s;
            }
        }
    }
    let au = u.abs();
    let sig = phi.transpose() * &dpsi * au;
    dy[l.sigma()..l.big_sigma()].copy_from_slice(sig.as_slice());
    let mut big = phi.transpose() * &d2psi * &phi;
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                big[(j, k)] += dpsi[i] * psi(i, j, k);
            }
        }
    }
    dy[l.big_sigma()..l.len()].copy_from_slice((big * au).as_slice());
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::extremal::propagate;
    use crate::vehicle::VehicleParams;

    #[test]
    fn vehicle_pullbacks_match_closed_forms() {
        let v = VehicleParams::reference();
        let traj = propagate(Arc::new(v.system()), &v.candidate(), 1e-11).unwrap();
        let frame = PullbackFrame::build(&traj, 1e-11).unwrap();
        for i in 0..=16 {
            let t = v.tau1() + (v.tau2 - v.tau1()) * i as f64 / 16.0;
            let fa = frame.at(t).unwrap();
            let g1 = fa.pull(&traj.sys.f1.value_vec(fa.x.as_slice()));
            let g1d = fa.pull(&traj.sys.derived.f01.value_vec(fa.x.as_slice()));
            let (cg, cgd) = (v.g1(t), v.g1_dot(t));
            assert!((g1[0] - cg[0]).abs() < 1e-9 && (g1[1] - cg[1]).abs() < 1e-9, "{t}: {g1}");
            assert!((g1d[0] - cgd[0]).abs() < 1e-9 && (g1d[1] - cgd[1]).abs() < 1e-9);
            assert!(fa.psi2.iter().all(|m| m.norm() == 0.0));
        }
        let f3 = frame.at_on(2, v.tau3()).unwrap();
        let k = -f3.pull(&traj.sys.f1.value_vec(f3.x.as_slice()));
        let ck = v.k();
        assert!((k[0] - ck[0]).abs() < 1e-9 && (k[1] - ck[1]).abs() < 1e-9, "{k}");
    }

    #[test]
    fn second_differential_matches_finite_differences() {
        // nonlinear drift so that Ψ does not vanish
        use crate::modeling::{ControlledSystem, ProblemFile};
        let p = ProblemFile {
            n: 2,
            params: Default::default(),
            f0: vec!["x2 + 0.1*x1^2".into(), "-x2 + 0.2*x1*x2".into()],
            f1: vec!["0".into(), "1".into()],
            psi: "1 + 0.1*x1".into(),
        };
        let sys = ControlledSystem::from_problem(&p).unwrap();
        let v = VehicleParams::reference();
        let mut c = v.candidate();
        c.p0 = vec![1.0, 0.4];
        let Ok(traj) = propagate(Arc::new(sys), &c, 1e-12) else {
            panic!("propagation failed")
        };
        let frame = PullbackFrame::build(&traj, 1e-12).unwrap();
        let t = traj.times[3] + 0.5 * (traj.times[4] - traj.times[3]);
        let fa = frame.at(t).unwrap();
        // perturb q̂1 and re-integrate the open-loop state with the same control
        let flow = |q: &[f64]| -> Vec<f64> {
            let mut y = q.to_vec();
            for arc in 1..4 {
                let (a, b) = (traj.times[arc], traj.times[arc + 1].min(t));
                if a >= t {
                    break;
                }
                let sol = ode::integrate(
                    |s, x, dx| {
                        let u = control(&traj, arc, s)?;
                        dx.copy_from_slice(traj.sys.drift(x, u).as_slice());
                        Ok(())
                    },
                    a,
                    &y,
                    b,
                    &OdeOptions::with_tol(1e-13),
                )
                .unwrap();
                y = sol.y1;
            }
            y
        };
        let q1 = traj.point(1)[..2].to_vec();
        let h = 1e-3;
        for j in 0..2 {
            for k in 0..2 {
                let shift = |a: f64, b: f64| {
                    let mut q = q1.clone();
                    q[j] += a;
                    q[k] += b;
                    flow(&q)
                };
                let (pp, pm, mp, mm) = (shift(h, h), shift(h, -h), shift(-h, h), shift(-h, -h));
                for i in 0..2 {
                    let fd = (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h);
                    assert!((fd - fa.psi2[i][(j, k)]).abs() < 1e-5, "Ψ[{i}][{j},{k}] {fd} vs {}", fa.psi2[i][(j, k)]);
                }
            }
        }
    }
}
