//! Λ1, the invertibility monitor of π∘𝓗_t on Λ1 and the Clarke endpoint
//! values at τ̂3.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::composite::{CompositeFlow, LinearizedComposite};
use crate::error::{Error, Result};
use crate::linalg::{self, chebyshev_nodes};
use crate::modeling::cotangent::{flow_linearized, Hamiltonian};
use crate::secvar::AlphaTheta;

/// The Lagrangian graph of d(α + θ) over a neighbourhood of q̂1.
#[derive(Debug, Clone)]
pub struct Lambda1<'a> {
    pub gen: AlphaTheta<'a>,
    /// Penalty weight of θ.
    pub s: f64,
    pub l1: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lambda1Check {
    /// max |Φ⁻| over sampled graph points.
    pub max_phi_minus: f64,
    /// Distance of Φ⃗⁻(ℓ̂1) from the tangent plane.
    pub tangency_residual: f64,
    /// |d(α + θ)(q̂1) − p̂1|.
    pub base_point_residual: f64,
}

impl<'a> Lambda1<'a> {
    pub fn build(cf: &CompositeFlow<'a>, s: f64) -> Result<Lambda1<'a>> {
        let l1 = cf.traj.point(1);
        let gen = AlphaTheta::build(&cf.traj.sys, &l1, cf.traj.tol)?;
        Ok(Lambda1 { gen, s, l1 })
    }

    pub fn n(&self) -> usize {
        self.l1.len() / 2
    }

    /// [I; D²(α + θ)(q̂1)] spanning T_{ℓ̂1}Λ1.
    pub fn frame(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut f = DMatrix::zeros(2 * n, n);
        f.view_mut((0, 0), (n, n)).fill_with_identity();
        f.view_mut((n, 0), (n, n)).copy_from(&self.gen.hessian(self.s));
        f
    }

    /// (q, d(α + θ)(q)).
    pub fn graph(&self, q: &[f64]) -> Result<Vec<f64>> {
        let p = self.gen.gradient_fd(q, self.s, 1e-5)?;
        let mut z = q.to_vec();
        z.extend(p.iter());
        Ok(z)
    }

    pub fn check(&self, lifts: &crate::modeling::SystemLifts, samples: &[Vec<f64>]) -> Result<Lambda1Check> {
        let n = self.n();
        let phis = crate::par::try_map(samples, |q| -> Result<f64> { Ok(lifts.phi_minus.eval(&self.graph(q)?).abs()) })?;
        let v = Hamiltonian::vector_field(&lifts.phi_minus, &self.l1)?;
        let h = self.gen.hessian(self.s);
        let vx = v.rows(0, n).into_owned();
        let tangency = (v.rows(n, n) - h * vx).amax();
        let base = self.graph(&self.l1[..n])?;
        let base_res = (0..n).map(|i| (base[n + i] - self.l1[n + i]).abs()).fold(0.0, f64::max);
        Ok(Lambda1Check {
            max_phi_minus: phis.into_iter().fold(0.0, f64::max),
            tangency_residual: tangency,
            base_point_residual: base_res,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorSample {
    pub t: f64,
    pub det: f64,
    pub branch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClarkeValues {
    /// a = 0: 𝔯3.
    pub a0: f64,
    /// a = 1: 𝔯3 + σ(V3, Φ⃗⁺(ℓ̂3)).
    pub a1: f64,
}

impl ClarkeValues {
    pub fn passed(&self) -> bool {
        self.a0 < 0.0 && self.a1 < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvertibilityMonitor {
    pub samples: Vec<MonitorSample>,
    pub min_abs_det: f64,
    pub min_abs_det_time: f64,
    /// Sign changes of det between consecutive samples of one smooth piece.
    pub sign_changes: usize,
    pub clarke: ClarkeValues,
    pub symplectic_defects: Vec<(usize, f64)>,
    pub passed: bool,
}

impl InvertibilityMonitor {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,det,branch\n");
        for m in &self.samples {
            s.push_str(&format!("{:.12e},{:.12e},{}\n", m.t, m.det, m.branch));
        }
        s
    }
}

/// 𝔯3 and 𝔯3 + σ(V3, Φ⃗⁺) where V3 is the F0-image of the tangent vector of
/// Λ2 = 𝒦_{τ̂2}(Λ1) lying over k̃(q̂2) = −(D exp((τ̂3 − τ̂2)f0))⁻¹ f1(q̂3).
pub fn clarke_values(cf: &CompositeFlow<'_>, lin: &LinearizedComposite) -> Result<ClarkeValues> {
    let th = cf.traj.times;
    let lifts = &cf.om.lifts;
    let n = lin.m / 2;
    let (l2, f2) = lin.at(th[2]);
    let m = lin.m;
    let (l3, mf0) = flow_linearized(&lifts.f0, &l2, &DMatrix::identity(m, m), th[2], th[3], &cf.opts)?;
    let axx = mf0.view((0, 0), (n, n)).into_owned();
    let f1_3 = cf.traj.sys.f1.value_vec(&l3[..n]);
    let ktilde = -linalg::solve(&axx, &f1_3)?;
    let coef = linalg::solve(&f2.rows(0, n).into_owned(), &ktilde)
        .map_err(|_| Error::Degenerate("Λ2 is not a graph over the base at q̂2".into()))?;
    let v2 = &f2 * coef;
    let v3: DVector<f64> = &mf0 * v2;
    let r3 = lifts.r3.eval(&l3);
    Ok(ClarkeValues { a0: r3, a1: r3 + lifts.phi_plus.grad(&l3).dot(&v3) })
}

/// Pushes T_{ℓ̂1}Λ1 along the reference and records det π_* on per-arc
/// Chebyshev grids (seams excluded).
pub fn check_injectivity(
    cf: &CompositeFlow<'_>,
    lambda1: &Lambda1<'_>,
    nodes_per_arc: usize,
    eps: f64,
) -> Result<InvertibilityMonitor> {
    let th = cf.traj.times;
    let lin = cf.flow_linearized(&lambda1.frame())?;
    let n = lambda1.n();
    let grid: Vec<f64> = (0..4).flat_map(|a| chebyshev_nodes(th[a], th[a + 1], nodes_per_arc)).collect();
    let mut samples: Vec<MonitorSample> = crate::par::map(&grid, |&t| {
        let (_, f) = lin.at(t);
        MonitorSample { t, det: linalg::det_qr(&f.rows(0, n).into_owned()), branch: lin.branch_at(t) }
    });
    samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    let (mut min_abs, mut min_t) = (f64::INFINITY, f64::NAN);
    for s in &samples {
        if s.det.abs() < min_abs {
            min_abs = s.det.abs();
            min_t = s.t;
        }
    }
    let piece = |t: f64| if t < th[3] { 0 } else { 1 };
    let sign_changes = samples
        .windows(2)
        .filter(|w| piece(w[0].t) == piece(w[1].t) && w[0].det.signum() != w[1].det.signum())
        .count();
    let clarke = clarke_values(cf, &lin)?;
    let symplectic_defects = cf.symplectic_defects()?;
    let passed = min_abs > eps && sign_changes == 0 && clarke.passed();
    Ok(InvertibilityMonitor {
        samples,
        min_abs_det: min_abs,
        min_abs_det_time: min_t,
        sign_changes,
        clarke,
        symplectic_defects,
        passed,
    })
}
