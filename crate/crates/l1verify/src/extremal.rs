//! Candidate extremals with the bang–singular–zero–bang structure: reading
//! them, integrating the state–costate system with the singular feedback,
//! and classifying arcs from the switching functions Φ± = F1 ± ψ.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::chebyshev_nodes;
use crate::modeling::cotangent::{flow_solution, poisson_from_gradients};
use crate::modeling::{ControlledSystem, Hamiltonian, SystemLifts};
use crate::ode::{self, OdeOptions, Solution};

/// |𝕃| at or below this aborts the singular feedback.
pub const EPS_SGLC: f64 = 1e-10;

/// Arcs whose interior is sampled exclude this fraction of their length at
/// each end, where the switching functions vanish by construction.
const END_GUARD: f64 = 0.05;

/// |Φ⁻| allowed on the singular arc before it stops counting as singular.
pub const SINGULAR_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcKind {
    BangPlus,
    Singular,
    Zero,
    BangMinus,
}

impl ArcKind {
    pub const SEQUENCE: [ArcKind; 4] = [ArcKind::BangPlus, ArcKind::Singular, ArcKind::Zero, ArcKind::BangMinus];

    pub fn name(self) -> &'static str {
        match self {
            ArcKind::BangPlus => "bang_plus",
            ArcKind::Singular => "singular",
            ArcKind::Zero => "zero",
            ArcKind::BangMinus => "bang_minus",
        }
    }

    /// The label the arc must receive for the structure to hold.
    pub fn expected_label(self) -> ArcLabel {
        match self {
            ArcKind::BangPlus | ArcKind::BangMinus => ArcLabel::RegularBang,
            ArcKind::Singular => ArcLabel::NondegenerateSingular,
            ArcKind::Zero => ArcLabel::Inactivated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSpec {
    pub kind: ArcKind,
    pub end_time: f64,
}

/// Candidate file contents: initial point, initial costate (p0 = 1
/// normalisation implied), switching times and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalCandidate {
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    pub tau: [f64; 3],
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Optional constant singular control, cross-checked against ν.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_singular: Option<f64>,
}

impl ExtremalCandidate {
    pub fn from_json(text: &str) -> Result<ExtremalCandidate> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("candidate file: {e}")))
    }

    /// [0, τ̂1, τ̂2, τ̂3, T]
    pub fn times(&self) -> [f64; 5] {
        [0.0, self.tau[0], self.tau[1], self.tau[2], self.t_final]
    }

    pub fn arcs(&self) -> [ArcSpec; 4] {
        let t = self.times();
        let mut out = [ArcSpec { kind: ArcKind::BangPlus, end_time: 0.0 }; 4];
        for (k, kind) in ArcKind::SEQUENCE.into_iter().enumerate() {
            out[k] = ArcSpec { kind, end_time: t[k + 1] };
        }
        out
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.q0.len() != n || self.p0.len() != n {
            return Err(Error::Input(format!(
                "candidate q0/p0 must have {n} components (got {} and {})",
                self.q0.len(),
                self.p0.len()
            )));
        }
        let t = self.times();
        if self.q0.iter().chain(&self.p0).chain(&t).any(|v| !v.is_finite()) {
            return Err(Error::Input("candidate contains non-finite values".into()));
        }
        if !t.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Input(format!(
                "switching times must satisfy 0 < τ1 < τ2 < τ3 < T, got {:?}",
                &t[1..]
            )));
        }
        Ok(())
    }
}

/// The u = +1, 0, −1 branch Hamiltonians. The singular arc has none: its
/// control is the feedback ν.
fn branch(lifts: &SystemLifts, kind: ArcKind) -> Option<&dyn Hamiltonian> {
    match kind {
        ArcKind::BangPlus => Some(&lifts.bang_plus),
        ArcKind::Zero => Some(&lifts.f0),
        ArcKind::BangMinus => Some(&lifts.bang_minus),
        ArcKind::Singular => None,
    }
}

/// ν(ℓ) = −(F001 − L²_{f0}ψ)/𝕃 and 𝕃(ℓ).
pub fn singular_feedback(lifts: &SystemLifts, z: &[f64]) -> Result<(f64, f64)> {
    let (nu, l) = lifts.singular_feedback(z);
    if !(l.abs() > EPS_SGLC) {
        return Err(Error::Degenerate(format!("SGLC degenerate: 𝕃 = {l:e} on the singular arc")));
    }
    if !nu.is_finite() {
        return Err(Error::NonSmooth("singular feedback is not finite".into()));
    }
    Ok((nu, l))
}

/// State–costate field on the singular arc: J(∇F0 + ν∇F1 − |ν|∇ψ) with ν
/// evaluated, not differentiated.
fn singular_field(lifts: &SystemLifts, z: &[f64]) -> Result<DVector<f64>> {
    let (nu, _) = singular_feedback(lifts, z)?;
    let g = lifts.f0.gradient(z)? + lifts.f1.gradient(z)? * nu - lifts.psi.gradient(z)? * nu.abs();
    Ok(crate::modeling::cotangent::symplectic_gradient(&g))
}

/// Integrates one arc of the given kind from z0 over [t0, t1].
pub fn arc_flow(lifts: &SystemLifts, kind: ArcKind, z0: &[f64], t0: f64, t1: f64, opts: &OdeOptions) -> Result<Solution> {
    match branch(lifts, kind) {
        Some(h) => flow_solution(h, z0, t0, t1, opts),
        None => ode::integrate(
            |_, z, dz| {
                dz.copy_from_slice(singular_field(lifts, z)?.as_slice());
                Ok(())
            },
            t0,
            z0,
            t1,
            opts,
        ),
    }
}

/// A switching time as declared by the candidate and as located on the
/// continued branch flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchLocation {
    pub declared: f64,
    /// NaN when no zero was found near the declared time.
    pub located: f64,
    /// The switching function at the located time (Φ⁻ for τ̂1, Φ⁺ for τ̂3).
    pub residual: f64,
}

impl SwitchLocation {
    pub fn offset(&self) -> f64 {
        (self.located - self.declared).abs()
    }
}

/// τ̂1 and τ̂3 refined numerically. τ̂2 is a free parameter of the family and
/// has nothing to locate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchRefinement {
    pub tau1: SwitchLocation,
    pub tau3: SwitchLocation,
}

/// The propagated reference λ̂(t) = (ξ̂(t), p̂(t)).
#[derive(Debug, Clone)]
pub struct ExtremalTrajectory {
    pub sys: Arc<ControlledSystem>,
    pub lifts: Arc<SystemLifts>,
    pub candidate: ExtremalCandidate,
    pub times: [f64; 5],
    pub tol: f64,
    pub switches: SwitchRefinement,
    arcs: Vec<Solution>,
}

pub fn propagate(sys: Arc<ControlledSystem>, candidate: &ExtremalCandidate, tol: f64) -> Result<ExtremalTrajectory> {
    candidate.validate(sys.n)?;
    let lifts = Arc::new(SystemLifts::new(&sys));
    let opts = OdeOptions::with_tol(tol);
    let times = candidate.times();
    let mut z: Vec<f64> = candidate.q0.iter().chain(&candidate.p0).copied().collect();
    let mut arcs = Vec::with_capacity(4);
    for (k, kind) in ArcKind::SEQUENCE.into_iter().enumerate() {
        let sol = arc_flow(&lifts, kind, &z, times[k], times[k + 1], &opts)?;
        z = sol.y1.clone();
        arcs.push(sol);
    }
    let switches = refine_switches(&lifts, &arcs, &times, &opts)?;
    let traj = ExtremalTrajectory {
        sys,
        lifts,
        candidate: candidate.clone(),
        times,
        tol,
        switches,
        arcs,
    };
    if let Some(us) = candidate.u_singular {
        for t in chebyshev_nodes(times[1], times[2], 32) {
            let (nu, _) = singular_feedback(&traj.lifts, &traj.state(t))?;
            if (nu - us).abs() > 1e-6 {
                return Err(Error::Input(format!(
                    "declared singular control {us} disagrees with the feedback ν = {nu} at t = {t}"
                )));
            }
        }
    }
    Ok(traj)
}

fn refine_switches(lifts: &SystemLifts, arcs: &[Solution], times: &[f64; 5], opts: &OdeOptions) -> Result<SwitchRefinement> {
    // τ̂1: Φ⁻ touches zero from above along the u = +1 flow, so look for the
    // sign change of d/dt Φ⁻ = {F0 + Φ⁻, Φ⁻} on the continued flow.
    let span = times[2] - times[1];
    let bang = flow_solution(&lifts.bang_plus, &arcs[0].y0, times[0], times[1] + 0.5 * span, opts)?;
    let dphi = |_: f64, z: &[f64]| match (lifts.bang_plus.gradient(z), lifts.phi_minus.gradient(z)) {
        (Ok(a), Ok(b)) => poisson_from_gradients(&a, &b),
        _ => f64::NAN,
    };
    let t1 = locate_sign_change(&bang, times[1], dphi);
    let tau1 = SwitchLocation {
        declared: times[1],
        located: t1,
        residual: if t1.is_nan() { f64::NAN } else { lifts.phi_minus.eval(&bang.eval(t1)) },
    };
    // τ̂3: Φ⁺ crosses zero transversally along the u = 0 flow.
    let zero_span = times[4] - times[2];
    let zero = flow_solution(&lifts.f0, &arcs[2].y0, times[2], times[4] + 0.5 * zero_span, opts)?;
    let t3 = locate_sign_change(&zero, times[3], |_, z| lifts.phi_plus.eval(z));
    let tau3 = SwitchLocation {
        declared: times[3],
        located: t3,
        residual: if t3.is_nan() { f64::NAN } else { lifts.phi_plus.eval(&zero.eval(t3)) },
    };
    Ok(SwitchRefinement { tau1, tau3 })
}

/// The sign change of g along `sol` closest to `guess`, refined by the
/// Illinois method on the dense output; NaN when there is none.
pub fn locate_sign_change<G>(sol: &Solution, guess: f64, mut g: G) -> f64
where
    G: FnMut(f64, &[f64]) -> f64,
{
    const SCAN: usize = 4096;
    let (a, b) = (sol.t0.min(sol.t1), sol.t0.max(sol.t1));
    let mut y = vec![0.0; sol.dim()];
    let mut val = |t: f64, y: &mut Vec<f64>| {
        sol.eval_into(t, y);
        g(t, y)
    };
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut prev_t = a;
    let mut prev_g = val(a, &mut y);
    for i in 1..=SCAN {
        let t = a + (b - a) * i as f64 / SCAN as f64;
        let gv = val(t, &mut y);
        if prev_g.is_finite() && gv.is_finite() && prev_g.signum() != gv.signum() && prev_g != 0.0 {
            let mid = 0.5 * (prev_t + t);
            if best.is_none_or(|(l, r, _, _)| (mid - guess).abs() < (0.5 * (l + r) - guess).abs()) {
                best = Some((prev_t, t, prev_g, gv));
            }
        }
        prev_t = t;
        prev_g = gv;
    }
    let Some((mut lo, mut hi, mut glo, mut ghi)) = best else {
        return f64::NAN;
    };
    if ghi == 0.0 {
        return hi;
    }
    let mut side = 0;
    for _ in 0..200 {
        let t = (lo * ghi - hi * glo) / (ghi - glo);
        let gt = val(t, &mut y);
        if gt == 0.0 || (hi - lo) < 1e-15 * (1.0 + t.abs()) {
            return t;
        }
        if gt.signum() == glo.signum() {
            lo = t;
            glo = gt;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            ghi = gt;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (lo + hi)
}

impl ExtremalTrajectory {
    pub fn n(&self) -> usize {
        self.sys.n
    }

    pub fn t_final(&self) -> f64 {
        self.times[4]
    }

    /// Arc containing t; switching times belong to the later arc.
    pub fn arc_index(&self, t: f64) -> usize {
        (1..4).rev().find(|&k| t >= self.times[k]).unwrap_or(0)
    }

    pub fn kind(&self, arc: usize) -> ArcKind {
        ArcKind::SEQUENCE[arc]
    }

    /// λ̂(t) as (x, p).
    pub fn state(&self, t: f64) -> Vec<f64> {
        self.state_on(self.arc_index(t), t)
    }

    /// λ̂(t) from the dense output of a given arc (clamped to that arc).
    pub fn state_on(&self, arc: usize, t: f64) -> Vec<f64> {
        self.arcs[arc].eval(t)
    }

    /// ℓ̂_i = λ̂(times[i]) for i = 0..=4.
    pub fn point(&self, i: usize) -> Vec<f64> {
        match i {
            0 => self.arcs[0].y0.clone(),
            _ => self.arcs[i - 1].y1.clone(),
        }
    }

    pub fn arc_solution(&self, arc: usize) -> &Solution {
        &self.arcs[arc]
    }

    /// Control value on `arc` at the costate point z.
    pub fn control_on(&self, arc: usize, z: &[f64]) -> Result<f64> {
        Ok(match self.kind(arc) {
            ArcKind::BangPlus => 1.0,
            ArcKind::Singular => singular_feedback(&self.lifts, z)?.0,
            ArcKind::Zero => 0.0,
            ArcKind::BangMinus => -1.0,
        })
    }

    pub fn control(&self, t: f64) -> Result<f64> {
        let k = self.arc_index(t);
        self.control_on(k, &self.state_on(k, t))
    }

    /// Pre-Hamiltonian F0 + uF1 − |u|ψ along the arc's own control.
    pub fn hamiltonian_on(&self, arc: usize, z: &[f64]) -> Result<f64> {
        let u = self.control_on(arc, z)?;
        Ok(self.lifts.f0.eval(z) + u * self.lifts.f1.eval(z) - u.abs() * self.lifts.psi.eval(z))
    }

    /// (Φ⁻, Φ⁺) at λ̂(t).
    pub fn switching_functions(&self, t: f64) -> (f64, f64) {
        let z = self.state(t);
        (self.lifts.phi_minus.eval(&z), self.lifts.phi_plus.eval(&z))
    }

    /// Nodes spread over every arc: Chebyshev points of the guarded interior.
    pub fn arc_nodes(&self, arc: usize, count: usize) -> Vec<f64> {
        let (a, b) = (self.times[arc], self.times[arc + 1]);
        let g = END_GUARD * (b - a);
        chebyshev_nodes(a + g, b - g, count)
    }

    /// CSV export: t, x1..xn, p1..pn, u, phi_minus, phi_plus.
    pub fn to_csv(&self, trace: &SwitchingTrace) -> Result<String> {
        let n = self.n();
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        for i in 1..=n {
            write!(out, ",p{i}").unwrap();
        }
        out.push_str(",u,phi_minus,phi_plus\n");
        for s in &trace.samples {
            let z = self.state_on(s.arc, s.t);
            let u = self.control_on(s.arc, &z)?;
            write!(out, "{}", s.t).unwrap();
            for v in &z {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{u},{},{}", s.phi_minus, s.phi_plus).unwrap();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSample {
    pub t: f64,
    pub arc: usize,
    pub phi_minus: f64,
    pub phi_plus: f64,
    /// Singular feedback value on the singular arc, NaN elsewhere.
    pub nu: f64,
}

/// Switching functions sampled arc by arc.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingTrace {
    pub times: [f64; 5],
    pub samples: Vec<TraceSample>,
}

impl SwitchingTrace {
    pub fn sample(traj: &ExtremalTrajectory, nodes_per_arc: usize) -> Result<SwitchingTrace> {
        let mut jobs = Vec::with_capacity(4 * nodes_per_arc);
        for arc in 0..4 {
            jobs.extend(traj.arc_nodes(arc, nodes_per_arc).into_iter().map(|t| (arc, t)));
        }
        let samples = crate::par::try_map(&jobs, |&(arc, t)| {
            let z = traj.state_on(arc, t);
            let nu = if traj.kind(arc) == ArcKind::Singular {
                singular_feedback(&traj.lifts, &z)?.0
            } else {
                f64::NAN
            };
            Ok::<_, Error>(TraceSample {
                t,
                arc,
                phi_minus: traj.lifts.phi_minus.eval(&z),
                phi_plus: traj.lifts.phi_plus.eval(&z),
                nu,
            })
        })?;
        Ok(SwitchingTrace { times: traj.times, samples })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArcLabel {
    RegularBang,
    NondegenerateSingular,
    Inactivated,
    DegenerateSingular,
    InadmissibleControl,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArcClassification {
    pub kind: ArcKind,
    pub label: ArcLabel,
    /// Smallest normalised distance from the failing sign pattern.
    pub margin: f64,
    /// Sample time where the margin is attained.
    pub witness: f64,
}

impl ArcClassification {
    pub fn passed(&self) -> bool {
        self.label == self.kind.expected_label()
    }
}

/// Labels each arc from the sign pattern of (Φ⁻, Φ⁺) on its samples.
///
/// Near a switching time the relevant switching function vanishes (to
/// second order for Φ⁻ at τ̂1 and τ̂2, to first order for Φ⁺ at τ̂3), so
/// values are divided by the matching power of the normalised distance to
/// that end before being compared with `tol_margin`.
pub fn classify_arcs(trace: &SwitchingTrace, tol_margin: f64) -> [ArcClassification; 4] {
    let t = trace.times;
    let mut out = [ArcClassification {
        kind: ArcKind::BangPlus,
        label: ArcLabel::Indeterminate,
        margin: f64::NAN,
        witness: f64::NAN,
    }; 4];
    for (arc, kind) in ArcKind::SEQUENCE.into_iter().enumerate() {
        let (a, b) = (t[arc], t[arc + 1]);
        let len = b - a;
        let from_start = |s: f64| (s - a) / len;
        let to_end = |s: f64| (b - s) / len;
        let mut margin = f64::INFINITY;
        let mut witness = f64::NAN;
        let mut both_vanish = false;
        let mut inadmissible = false;
        for s in trace.samples.iter().filter(|s| s.arc == arc) {
            let m = match kind {
                ArcKind::BangPlus => s.phi_minus / to_end(s.t).powi(2),
                ArcKind::Singular => {
                    if s.phi_plus.abs() <= tol_margin && s.phi_minus.abs() <= tol_margin {
                        both_vanish = true;
                    }
                    if !(-tol_margin..=1.0 + tol_margin).contains(&s.nu) {
                        inadmissible = true;
                    }
                    let off = SINGULAR_RESIDUAL - s.phi_minus.abs();
                    if off < 0.0 {
                        s.phi_plus.min(off)
                    } else {
                        s.phi_plus
                    }
                }
                ArcKind::Zero => (-s.phi_minus / from_start(s.t).powi(2)).min(s.phi_plus / to_end(s.t)),
                ArcKind::BangMinus => -s.phi_plus / from_start(s.t),
            };
            if !(m >= margin) {
                margin = m;
                witness = s.t;
            }
        }
        let label = if kind == ArcKind::Singular && both_vanish {
            ArcLabel::DegenerateSingular
        } else if kind == ArcKind::Singular && inadmissible {
            ArcLabel::InadmissibleControl
        } else if margin > tol_margin {
            kind.expected_label()
        } else {
            ArcLabel::Indeterminate
        };
        out[arc] = ArcClassification { kind, label, margin, witness };
    }
    out
}
