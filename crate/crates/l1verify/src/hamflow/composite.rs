//! The piecewise Hamiltonian flow 𝓗(t, ℓ) emanating from Λ1 at τ̂1.
//!
//! Branches, in time order:
//!
//! | id | interval        | Hamiltonian |
//! |----|-----------------|-------------|
//! | 1  | [0, τ1(ℓ)]      | F0 + Φ⁻     |
//! | 2  | [τ1(ℓ), τ̂1]     | H0 + Φ⁻     |
//! | 3  | [τ̂1, τ̂2]        | K           |
//! | 4  | [τ̂2, τ2(ℓ2)]    | H0          |
//! | 5  | [τ2(ℓ2), τ3]    | F0          |
//! | 6  | [τ3, T]         | F0 − Φ⁺     |
//!
//! Branches 1 and 2 run backward from ℓ at τ̂1.

use nalgebra::DMatrix;
use serde::Serialize;

use super::overmax::{H0Ham, H0PlusPhiMinusHam, KHam, OverMax};
use super::switch::SwitchTimes;
use crate::error::{Error, Result};
use crate::extremal::ExtremalTrajectory;
use crate::modeling::cotangent::{
    canonical_j, flow_linearized_solution, flow_solution, split_linearized, Hamiltonian,
};
use crate::ode::{OdeOptions, Solution};

pub const BRANCH_NAMES: [&str; 6] = ["bang+", "H0 + Phi- (entry)", "K", "H0 (exit)", "F0", "bang-"];

#[derive(Debug, Clone)]
pub struct BranchSegment {
    pub id: usize,
    pub t0: f64,
    pub t1: f64,
    /// None for an empty branch.
    pub sol: Option<Solution>,
    pub z0: Vec<f64>,
}

impl BranchSegment {
    fn lo(&self) -> f64 {
        self.t0.min(self.t1)
    }
    fn hi(&self) -> f64 {
        self.t0.max(self.t1)
    }
    pub fn end(&self) -> Vec<f64> {
        self.sol.as_ref().map_or_else(|| self.z0.clone(), |s| s.y1.clone())
    }
}

/// One evaluated trajectory of 𝓗(·, ℓ).
#[derive(Debug, Clone)]
pub struct CompositeTrajectory {
    pub segments: Vec<BranchSegment>,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl CompositeTrajectory {
    /// Branch id active at t; the earlier branch wins at a seam.
    pub fn branch_at(&self, t: f64) -> usize {
        let mut segs: Vec<&BranchSegment> = self.segments.iter().filter(|s| s.sol.is_some()).collect();
        segs.sort_by_key(|s| s.id);
        segs.iter().find(|s| t <= s.hi()).or(segs.last()).map_or(0, |s| s.id)
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let id = self.branch_at(t);
        let seg = self.segments.iter().find(|s| s.id == id).expect("branch exists");
        let sol = seg.sol.as_ref().expect("non-empty branch");
        sol.eval(t.clamp(seg.lo(), seg.hi()))
    }
}

/// The linearization of 𝓗 along the reference, pushing an arbitrary 2n×k
/// frame given at τ̂1.
#[derive(Debug, Clone)]
pub struct LinearizedComposite {
    pub m: usize,
    pub k: usize,
    /// Branches 1, 3, 5 and 6; 2 and 4 are empty along the reference.
    pub segments: Vec<BranchSegment>,
    /// Frame at τ̂3 on either side of the transport jump.
    pub before_jump: DMatrix<f64>,
    pub after_jump: DMatrix<f64>,
    pub times: [f64; 5],
}

impl LinearizedComposite {
    pub fn branch_at(&self, t: f64) -> usize {
        match t {
            t if t < self.times[1] => 1,
            t if t <= self.times[2] => 3,
            t if t <= self.times[3] => 5,
            _ => 6,
        }
    }

    pub fn at(&self, t: f64) -> (Vec<f64>, DMatrix<f64>) {
        let id = self.branch_at(t);
        let seg = self.segments.iter().find(|s| s.id == id).expect("branch exists");
        let sol = seg.sol.as_ref().expect("non-empty branch");
        split_linearized(&sol.eval(t.clamp(seg.lo(), seg.hi())), self.m, self.k)
    }
}

pub struct CompositeFlow<'a> {
    pub traj: &'a ExtremalTrajectory,
    pub om: &'a OverMax,
    pub opts: OdeOptions,
}

impl<'a> CompositeFlow<'a> {
    pub fn new(traj: &'a ExtremalTrajectory, om: &'a OverMax, tol: f64) -> CompositeFlow<'a> {
        CompositeFlow { traj, om, opts: OdeOptions::with_tol(tol) }
    }

    pub fn switches(&self) -> SwitchTimes<'a> {
        SwitchTimes::new(self.om, self.traj.times)
    }

    pub fn branch_hamiltonian(&self, id: usize) -> Box<dyn Hamiltonian + '_> {
        let l = &self.om.lifts;
        match id {
            1 => Box::new(l.bang_plus.clone()),
            2 => Box::new(H0PlusPhiMinusHam(self.om)),
            4 => Box::new(H0Ham(self.om)),
            3 => Box::new(KHam(self.om)),
            5 => Box::new(l.f0.clone()),
            _ => Box::new(l.bang_minus.clone()),
        }
    }

    fn segment(&self, id: usize, z0: &[f64], t0: f64, t1: f64) -> Result<BranchSegment> {
        let sol = if t0 == t1 {
            None
        } else {
            Some(flow_solution(self.branch_hamiltonian(id).as_ref(), z0, t0, t1, &self.opts)?)
        };
        Ok(BranchSegment { id, t0, t1, sol, z0: z0.to_vec() })
    }

    /// 𝓗(·, ℓ) on [0, T] for ℓ ∈ Λ1 given at τ̂1.
    pub fn flow(&self, l: &[f64]) -> Result<CompositeTrajectory> {
        let th = self.traj.times;
        let sw = self.switches();
        let tau1 = sw.tau1(l)?;
        let s2 = self.segment(2, l, th[1], tau1)?;
        let s1 = self.segment(1, &s2.end(), tau1, th[0])?;
        let s3 = self.segment(3, l, th[1], th[2])?;
        let l2 = s3.end();
        let tau2 = sw.tau2(&l2)?;
        if tau2 >= th[3] {
            return Err(Error::NoConvergence(format!("branch-time ordering violated: τ2 = {tau2}")));
        }
        let s4 = self.segment(4, &l2, th[2], tau2)?;
        let tau3 = sw.tau3_from(&s4.end(), tau2)?;
        let s5 = self.segment(5, &s4.end(), tau2, tau3)?;
        let s6 = self.segment(6, &s5.end(), tau3, th[4])?;
        Ok(CompositeTrajectory { segments: vec![s1, s2, s3, s4, s5, s6], tau1, tau2, tau3 })
    }

    /// 𝓗(t, ℓ).
    pub fn flow_at(&self, t: f64, l: &[f64]) -> Result<Vec<f64>> {
        Ok(self.flow(l)?.at(t))
    }

    fn linearized_segment(&self, id: usize, z0: &[f64], frame: &DMatrix<f64>, t0: f64, t1: f64) -> Result<BranchSegment> {
        let h = self.branch_hamiltonian(id);
        let sol = flow_linearized_solution(h.as_ref(), z0, frame, t0, t1, &self.opts)?;
        let mut y0 = z0.to_vec();
        y0.extend_from_slice(frame.as_slice());
        Ok(BranchSegment { id, t0, t1, sol: Some(sol), z0: y0 })
    }

    /// Pushes a frame given at ℓ̂1 along the reference. Across τ̂3 each
    /// column picks up Φ⃗⁺(ℓ̂3)·dτ3.
    pub fn flow_linearized(&self, frame: &DMatrix<f64>) -> Result<LinearizedComposite> {
        let th = self.traj.times;
        let l1 = self.traj.point(1);
        let (m, k) = (l1.len(), frame.ncols());
        let s1 = self.linearized_segment(1, &l1, frame, th[1], th[0])?;
        let s3 = self.linearized_segment(3, &l1, frame, th[1], th[2])?;
        let (l2, f2) = split_linearized(&s3.sol.as_ref().unwrap().y1, m, k);
        let s5 = self.linearized_segment(5, &l2, &f2, th[2], th[3])?;
        let (l3, before) = split_linearized(&s5.sol.as_ref().unwrap().y1, m, k);
        let after = self.tau3_jump(&l3)? * &before;
        let s6 = self.linearized_segment(6, &l3, &after, th[3], th[4])?;
        Ok(LinearizedComposite {
            m,
            k,
            segments: vec![s1, s3, s5, s6],
            before_jump: before,
            after_jump: after,
            times: th,
        })
    }

    /// I + Φ⃗⁺ ⊗ (−dΦ⁺ / ⟨dΦ⁺, F⃗0⟩) at ℓ3.
    pub fn tau3_jump(&self, l3: &[f64]) -> Result<DMatrix<f64>> {
        let l = &self.om.lifts;
        let v = Hamiltonian::vector_field(&l.phi_plus, l3)?;
        let dphi = l.phi_plus.grad(l3);
        let r = dphi.dot(&Hamiltonian::vector_field(&l.f0, l3)?);
        if !(r.abs() > 1e-12) {
            return Err(Error::Degenerate(format!("Φ⁺ is tangent to the F0 flow at τ̂3 (rate {r:e})")));
        }
        let m = l3.len();
        Ok(DMatrix::identity(m, m) - v * dphi.transpose() / r)
    }

    /// ‖MᵀJM − J‖ for the full linearization of each non-empty reference
    /// branch.
    pub fn symplectic_defects(&self) -> Result<Vec<(usize, f64)>> {
        let th = self.traj.times;
        let m = self.traj.point(0).len();
        let j = canonical_j(m / 2);
        let spans = [(1, 1, 0), (3, 1, 2), (5, 2, 3), (6, 3, 4)];
        let id = DMatrix::identity(m, m);
        crate::par::try_map(&spans, |&(b, a, e)| {
            let seg = self.linearized_segment(b, &self.traj.point(a), &id, th[a], th[e])?;
            let (_, mm) = split_linearized(&seg.sol.unwrap().y1, m, m);
            Ok((b, crate::linalg::max_abs(&(mm.transpose() * &j * &mm - &j))))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeamTimes {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
}

impl From<&CompositeTrajectory> for SeamTimes {
    fn from(c: &CompositeTrajectory) -> Self {
        SeamTimes { tau1: c.tau1, tau2: c.tau2, tau3: c.tau3 }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::extremal::propagate;
    use crate::hamflow::OverMaxOptions;
    use crate::vehicle::VehicleParams;

    fn setup() -> (ExtremalTrajectory, OverMax) {
        let v = VehicleParams::reference();
        let traj = propagate(Arc::new(v.system()), &v.candidate(), 1e-11).unwrap();
        let om = OverMax::new(traj.lifts.clone(), OverMaxOptions::default());
        (traj, om)
    }

    #[test]
    fn reference_reproduces_itself() {
        let (traj, om) = setup();
        let cf = CompositeFlow::new(&traj, &om, 1e-10);
        let c = cf.flow(&traj.point(1)).unwrap();
        for i in 0..=40 {
            let t = traj.times[4] * i as f64 / 40.0;
            let (a, b) = (c.at(t), traj.state(t));
            let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-7, "t = {t}: {err:e}");
        }
        assert!((c.tau3 - traj.times[3]).abs() < 1e-8);
    }

    #[test]
    fn branch_hamiltonians_are_conserved() {
        let (traj, om) = setup();
        let cf = CompositeFlow::new(&traj, &om, 1e-10);
        let c = cf.flow(&traj.point(1)).unwrap();
        for seg in c.segments.iter().filter(|s| s.sol.is_some()) {
            let h = cf.branch_hamiltonian(seg.id);
            let drift = (h.value(&seg.z0).unwrap() - h.value(&seg.end()).unwrap()).abs();
            assert!(drift < 1e-8, "branch {}: {drift:e}", seg.id);
        }
    }

    #[test]
    fn linearized_flow_matches_finite_differences_of_the_flow() {
        let (traj, om) = setup();
        let cf = CompositeFlow::new(&traj, &om, 1e-11);
        let l1 = traj.point(1);
        // a direction tangent to Σ⁻ keeps the perturbed point admissible
        let dir = Hamiltonian::vector_field(&om.lifts.phi_minus, &l1).unwrap();
        let frame = DMatrix::from_column_slice(4, 1, dir.as_slice());
        let lin = cf.flow_linearized(&frame).unwrap();
        let h = 1e-5;
        let plus: Vec<f64> = l1.iter().zip(dir.iter()).map(|(a, d)| a + h * d).collect();
        let minus: Vec<f64> = l1.iter().zip(dir.iter()).map(|(a, d)| a - h * d).collect();
        let (cp, cm) = (cf.flow(&plus).unwrap(), cf.flow(&minus).unwrap());
        for t in [0.3 * traj.times[1], 0.5 * (traj.times[1] + traj.times[2]), traj.times[2] + 0.1, traj.times[4] - 0.1] {
            let (_, f) = lin.at(t);
            let (a, b) = (cp.at(t), cm.at(t));
            for i in 0..4 {
                let fd = (a[i] - b[i]) / (2.0 * h);
                assert!((fd - f[(i, 0)]).abs() < 1e-4 * (1.0 + fd.abs()), "t = {t}, i = {i}: {fd} vs {}", f[(i, 0)]);
            }
        }
    }

    #[test]
    fn branch_flows_are_symplectic() {
        let (traj, om) = setup();
        let cf = CompositeFlow::new(&traj, &om, 1e-10);
        for (b, d) in cf.symplectic_defects().unwrap() {
            assert!(d <= 1e-6, "branch {b}: {d:e}");
        }
    }

    #[test]
    fn k_flow_carries_phi_minus_to_itself() {
        let (traj, om) = setup();
        let opts = OdeOptions::with_tol(1e-11);
        let k = KHam(&om);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        for _ in 0..4 {
            let t: f64 = rand::Rng::gen_range(&mut rng, traj.times[1]..traj.times[2]);
            let z: Vec<f64> = traj.state(t).iter().map(|v| v + rand::Rng::gen_range(&mut rng, -0.05..0.05)).collect();
            let z = om.project_to_sigma_minus(&z).unwrap();
            let v = Hamiltonian::vector_field(&om.lifts.phi_minus, &z).unwrap();
            let frame = DMatrix::from_column_slice(4, 1, v.as_slice());
            let sol = flow_linearized_solution(&k, &z, &frame, 0.0, 0.4, &opts).unwrap();
            let (w, pushed) = split_linearized(&sol.y1, 4, 1);
            let target = Hamiltonian::vector_field(&om.lifts.phi_minus, &w).unwrap();
            let err = (pushed.column(0) - target).amax();
            assert!(err < 1e-6, "{err:e}");
        }
    }
}
