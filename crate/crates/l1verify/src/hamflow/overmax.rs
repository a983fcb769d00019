//! θ, H0, ν and K near the singular surface.
//!
//! θ(ℓ) is the time along Φ⃗⁻ needed to reach {G = 0}, G = F01 − L_{f0}ψ;
//! H0 = F0∘exp(θΦ⃗⁻). ν is the singular feedback transported constant along
//! Φ⃗⁻ lines (to {G = 0}) and then along G⃗ lines (to {Φ⁻ = 0}), and
//! K = H0 + νΦ⁻.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modeling::cotangent::{canonical_j, Hamiltonian};
use crate::modeling::{CotFn, SystemLifts};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverMaxOptions {
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Largest RK4 step of the line transports.
    pub line_step: f64,
    /// Relative step of the central differences for ∇ν.
    pub fd_step: f64,
    /// Line-time window around the initial guess searched by the line
    /// Newton iterations; each step is clamped to a quarter of it.
    pub max_line: f64,
}

impl Default for OverMaxOptions {
    fn default() -> Self {
        OverMaxOptions { newton_tol: 1e-12, max_iter: 50, line_step: 0.005, fd_step: 1e-6, max_line: 2.0 }
    }
}

const MEMO_CAP: usize = 1 << 16;

type Memo<V> = RwLock<HashMap<Vec<u64>, V>>;

#[derive(Debug)]
pub struct OverMax {
    pub lifts: Arc<SystemLifts>,
    pub opts: OverMaxOptions,
    theta_memo: Memo<(f64, Vec<f64>)>,
    nu_memo: Memo<f64>,
}

fn key(z: &[f64]) -> Vec<u64> {
    z.iter().map(|v| v.to_bits()).collect()
}

fn memo_get<V: Clone>(m: &Memo<V>, k: &[u64]) -> Option<V> {
    m.read().ok().and_then(|g| g.get(k).cloned())
}

fn memo_put<V>(m: &Memo<V>, k: Vec<u64>, v: V) {
    if let Ok(mut g) = m.write() {
        if g.len() >= MEMO_CAP {
            g.clear();
        }
        g.insert(k, v);
    }
}

/// exp(sF⃗)(z) by fixed-step RK4, optionally with the linearization.
pub(crate) fn line_flow(f: &CotFn, z: &[f64], s: f64, max_step: f64, with_jac: bool) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let m = z.len();
    let steps = ((s.abs() / max_step).ceil() as usize).max(4);
    let h = s / steps as f64;
    let j = canonical_j(m / 2);
    let field = |z: &[f64]| {
        let g = f.grad(z);
        let mut v = vec![0.0; m];
        for i in 0..m / 2 {
            v[i] = g[m / 2 + i];
            v[m / 2 + i] = -g[i];
        }
        v
    };
    let axpy = |a: &[f64], b: &[f64], c: f64| a.iter().zip(b).map(|(x, y)| x + c * y).collect::<Vec<_>>();
    let mut z = z.to_vec();
    let mut mat = with_jac.then(|| DMatrix::identity(m, m));
    for _ in 0..steps {
        let k1 = field(&z);
        let z2 = axpy(&z, &k1, 0.5 * h);
        let k2 = field(&z2);
        let z3 = axpy(&z, &k2, 0.5 * h);
        let k3 = field(&z3);
        let z4 = axpy(&z, &k3, h);
        let k4 = field(&z4);
        if let Some(mm) = mat.as_mut() {
            let a = |p: &[f64]| &j * f.hess(p);
            let (a1, a2, a3, a4) = (a(&z), a(&z2), a(&z3), a(&z4));
            let m1 = &a1 * &*mm;
            let m2 = &a2 * (&*mm + &m1 * (0.5 * h));
            let m3 = &a3 * (&*mm + &m2 * (0.5 * h));
            let m4 = &a4 * (&*mm + &m3 * h);
            *mm += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
        }
        for i in 0..m {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (z, mat)
}

/// Derivative of F along the flow of H at z: ⟨∇F, H⃗⟩.
pub(crate) fn rate(f: &CotFn, h: &CotFn, z: &[f64]) -> f64 {
    let g = h.grad(z);
    let n = z.len() / 2;
    let gf = f.grad(z);
    (0..n).map(|i| gf[i] * g[n + i] - gf[n + i] * g[i]).sum()
}

impl OverMax {
    pub fn new(lifts: Arc<SystemLifts>, opts: OverMaxOptions) -> OverMax {
        OverMax { lifts, opts, theta_memo: RwLock::new(HashMap::new()), nu_memo: RwLock::new(HashMap::new()) }
    }

    pub fn n(&self) -> usize {
        self.lifts.n
    }

    fn line_newton(&self, line: &CotFn, target: &CotFn, z: &[f64], what: &str) -> Result<(f64, Vec<f64>)> {
        self.line_newton_from(line, target, z, 0.0, what)
    }

    /// Newton along the lines of `line` for a zero of `target`, starting at
    /// time `s0`. Returns the time and the point reached.
    pub(crate) fn line_newton_from(
        &self,
        line: &CotFn,
        target: &CotFn,
        z: &[f64],
        s0: f64,
        what: &str,
    ) -> Result<(f64, Vec<f64>)> {
        let mut s = s0;
        let mut w = if s0 == 0.0 { z.to_vec() } else { line_flow(line, z, s0, self.opts.line_step, false).0 };
        let scale = 1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for _ in 0..self.opts.max_iter {
            let g = target.eval(&w);
            if !g.is_finite() {
                break;
            }
            if g.abs() <= self.opts.newton_tol * scale {
                return Ok((s, w));
            }
            let d = rate(target, line, &w);
            if !(d.abs() > 1e-12) {
                return Err(Error::NoConvergence(format!("{what}: transversality lost (rate {d:e})")));
            }
            let reach = 0.25 * self.opts.max_line;
            let ds = (-g / d).clamp(-reach, reach);
            if (s + ds - s0).abs() > self.opts.max_line {
                return Err(Error::NoConvergence(format!("{what}: left the search window of length {}", self.opts.max_line)));
            }
            w = line_flow(line, &w, ds, self.opts.line_step, false).0;
            s += ds;
            if ds.abs() <= 1e-16 * (1.0 + s.abs()) {
                return Ok((s, w));
            }
        }
        Err(Error::NoConvergence(format!("{what}: Newton did not converge in {} iterations", self.opts.max_iter)))
    }

    /// θ(ℓ) and the landing point exp(θΦ⃗⁻)(ℓ) ∈ {G = 0}.
    pub fn theta_point(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let k = key(z);
        if let Some(v) = memo_get(&self.theta_memo, &k) {
            return Ok(v);
        }
        let v = self.line_newton(&self.lifts.phi_minus, &self.lifts.g, z, "theta")?;
        memo_put(&self.theta_memo, k, v.clone());
        Ok(v)
    }

    pub fn theta(&self, z: &[f64]) -> Result<f64> {
        Ok(self.theta_point(z)?.0)
    }

    /// ∇θ = −D exp(θΦ⃗⁻)ᵀ∇G / ⟨∇G, Φ⃗⁻⟩ at the landing point.
    pub fn theta_gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(self.theta_and_h0_gradients(z)?.0)
    }

    fn theta_and_h0_gradients(&self, z: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let th = self.theta(z)?;
        let l = &self.lifts;
        let (w, m) = line_flow(&l.phi_minus, z, th, self.opts.line_step, true);
        let m = m.expect("linearization requested");
        let gg = l.g.grad(&w);
        let d = rate(&l.g, &l.phi_minus, &w);
        let dtheta = -(m.transpose() * &gg) / d;
        let gf0 = l.f0.grad(&w);
        let dh0 = m.transpose() * &gf0 + &dtheta * rate(&l.f0, &l.phi_minus, &w);
        Ok((dtheta, dh0))
    }

    pub fn h0(&self, z: &[f64]) -> Result<f64> {
        Ok(self.lifts.f0.eval(&self.theta_point(z)?.1))
    }

    pub fn h0_gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(self.theta_and_h0_gradients(z)?.1)
    }

    /// The point of S⁻ that carries the value of ν for ℓ.
    pub fn singular_anchor(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (_, w) = self.theta_point(z)?;
        Ok(self.line_newton(&self.lifts.g, &self.lifts.phi_minus, &w, "nu")?.1)
    }

    pub fn nu(&self, z: &[f64]) -> Result<f64> {
        let k = key(z);
        if let Some(v) = memo_get(&self.nu_memo, &k) {
            return Ok(v);
        }
        let a = self.singular_anchor(z)?;
        let (nu, l) = self.lifts.singular_feedback(&a);
        if !(l.abs() > 1e-10) || !nu.is_finite() {
            return Err(Error::Degenerate(format!("SGLC coefficient {l:e} at the singular anchor")));
        }
        memo_put(&self.nu_memo, k, nu);
        Ok(nu)
    }

    pub fn nu_gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        let m = z.len();
        let mut g = DVector::zeros(m);
        let mut zp = z.to_vec();
        for i in 0..m {
            let h = self.opts.fd_step * (1.0 + z[i].abs());
            zp[i] = z[i] + h;
            let a = self.nu(&zp)?;
            zp[i] = z[i] - h;
            let b = self.nu(&zp)?;
            zp[i] = z[i];
            g[i] = (a - b) / (2.0 * h);
        }
        Ok(g)
    }

    pub fn k(&self, z: &[f64]) -> Result<f64> {
        Ok(self.h0(z)? + self.nu(z)? * self.lifts.phi_minus.eval(z))
    }

    pub fn k_gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        let phi = self.lifts.phi_minus.eval(z);
        let mut g = self.h0_gradient(z)? + self.lifts.phi_minus.grad(z) * self.nu(z)?;
        if phi != 0.0 {
            g += self.nu_gradient(z)? * phi;
        }
        Ok(g)
    }

    /// Moves ℓ along G⃗ onto Σ⁻ = {Φ⁻ = 0}.
    pub fn project_to_sigma_minus(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.line_newton(&self.lifts.g, &self.lifts.phi_minus, z, "projection onto the singular surface")?.1)
    }

    /// K(ℓ) − max_u h(ℓ, u) over u ∈ {−1, 0, 1} at points of Σ⁻; returns the
    /// most negative gap and where it occurs.
    pub fn overmax_check(&self, samples: &[Vec<f64>]) -> Result<OvermaxReport> {
        let pre: Vec<CotFn> = [-1.0, 0.0, 1.0].iter().map(|&u| self.lifts.pre_hamiltonian(u)).collect();
        let gaps = crate::par::try_map(samples, |z| -> Result<f64> {
            let hmax = pre.iter().map(|h| h.eval(z)).fold(f64::NEG_INFINITY, f64::max);
            Ok(self.k(z)? - hmax)
        })?;
        let (mut worst, mut at) = (f64::INFINITY, None);
        for (g, z) in gaps.iter().zip(samples) {
            if *g < worst {
                worst = *g;
                at = Some(z.clone());
            }
        }
        Ok(OvermaxReport { worst_gap: worst, location: at, samples: samples.len() })
    }

    /// Largest r among `radii` such that θ and ν solve at every point of the
    /// stencil z ± r e_i.
    pub fn validity_radius(&self, z: &[f64], radii: &[f64]) -> f64 {
        for &r in radii {
            let ok = (0..z.len()).all(|i| {
                [-r, r].iter().all(|d| {
                    let mut w = z.to_vec();
                    w[i] += d;
                    self.theta(&w).is_ok() && self.nu(&w).is_ok()
                })
            });
            if ok {
                return r;
            }
        }
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvermaxReport {
    pub worst_gap: f64,
    pub location: Option<Vec<f64>>,
    pub samples: usize,
}

/// H0 as a [`Hamiltonian`].
pub struct H0Ham<'a>(pub &'a OverMax);

/// H0 + Φ⁻ as a [`Hamiltonian`].
pub struct H0PlusPhiMinusHam<'a>(pub &'a OverMax);

/// K as a [`Hamiltonian`].
pub struct KHam<'a>(pub &'a OverMax);

impl Hamiltonian for H0Ham<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }
    fn value(&self, z: &[f64]) -> Result<f64> {
        self.0.h0(z)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.0.h0_gradient(z)
    }
}

impl Hamiltonian for H0PlusPhiMinusHam<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }
    fn value(&self, z: &[f64]) -> Result<f64> {
        Ok(self.0.h0(z)? + self.0.lifts.phi_minus.eval(z))
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(self.0.h0_gradient(z)? + self.0.lifts.phi_minus.grad(z))
    }
}

impl Hamiltonian for KHam<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }
    fn value(&self, z: &[f64]) -> Result<f64> {
        self.0.k(z)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.0.k_gradient(z)
    }
}
