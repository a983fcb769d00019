//! Assumption checks along a propagated extremal. Each check returns a
//! verdict with a signed margin (distance from the failing boundary, in the
//! units of the checked quantity) and the time where it is attained.

use serde::{Deserialize, Serialize};

use crate::extremal::{classify_arcs, ArcClassification, ExtremalTrajectory, SwitchingTrace};
use crate::linalg::chebyshev_nodes;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionOptions {
    /// Strict inequalities must hold by this much, scaled by the magnitude
    /// of the quantity (never less than the bare value).
    pub eps_strict: f64,
    pub nodes_per_arc: usize,
    /// Allowed gap between a declared switching time and the located zero.
    pub switch_tol: f64,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        ConditionOptions { eps_strict: 1e-8, nodes_per_arc: 256, switch_tol: 1e-6 }
    }
}

impl ConditionOptions {
    pub fn threshold(&self, scale: f64) -> f64 {
        self.eps_strict * scale.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionVerdict {
    pub id: String,
    pub passed: bool,
    /// The checked quantity itself (signed).
    #[serde(with = "crate::serde_f64")]
    pub value: f64,
    /// Signed distance from the failing boundary; +inf when vacuous.
    #[serde(with = "crate::serde_f64")]
    pub margin: f64,
    #[serde(with = "crate::serde_f64")]
    pub threshold: f64,
    pub witness: Option<f64>,
    pub detail: String,
}

impl AssumptionVerdict {
    fn new(id: &str, value: f64, margin: f64, threshold: f64, witness: Option<f64>, detail: String) -> Self {
        AssumptionVerdict {
            id: id.to_string(),
            passed: margin > threshold,
            value,
            margin,
            threshold,
            witness,
            detail,
        }
    }

    fn fail(id: &str, value: f64, witness: Option<f64>, detail: String) -> Self {
        AssumptionVerdict {
            id: id.to_string(),
            passed: false,
            value,
            margin: f64::NEG_INFINITY,
            threshold: 0.0,
            witness,
            detail,
        }
    }
}

/// A1 + A7: ψ > 0 on the bang and singular arcs and at τ̂3.
pub fn check_psi_positivity(traj: &ExtremalTrajectory, opts: &ConditionOptions) -> AssumptionVerdict {
    let mut jobs: Vec<(usize, f64)> = Vec::new();
    for arc in [0, 1, 3] {
        jobs.extend(traj.arc_nodes(arc, opts.nodes_per_arc).into_iter().map(|t| (arc, t)));
    }
    jobs.push((3, traj.times[3]));
    let vals = crate::par::map(&jobs, |&(arc, t)| traj.sys.psi_value(&traj.state_on(arc, t)[..traj.n()]));
    let (mut min, mut at, mut scale) = (f64::INFINITY, None, 0.0f64);
    for (&(_, t), &v) in jobs.iter().zip(&vals) {
        scale = scale.max(v.abs());
        if !(v >= min) {
            min = v;
            at = Some(t);
        }
    }
    AssumptionVerdict::new(
        "A1+A7",
        min,
        min,
        opts.threshold(scale),
        at,
        "min of psi over bang, singular arcs and tau3".into(),
    )
}

/// A zero of ψ∘ξ̂ found by the scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiZero {
    pub t: f64,
    /// |d/dt ψ(ξ̂(t))| at the zero.
    pub rate: f64,
    pub tangential: bool,
}

/// Scans t ↦ ψ(t) over [a, b] for sign changes and for touching zeros
/// (local minima of |ψ| below `touch_tol`).
pub fn scan_zeros<P, D>(a: f64, b: f64, samples: usize, touch_tol: f64, psi: P, rate: D) -> Vec<PsiZero>
where
    P: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let ts: Vec<f64> = (0..=samples).map(|i| a + (b - a) * i as f64 / samples as f64).collect();
    let vs: Vec<f64> = ts.iter().map(|&t| psi(t)).collect();
    let mut out = Vec::new();
    for i in 0..=samples {
        let interior = i > 0 && i < samples;
        if vs[i] == 0.0 {
            let touching = interior && vs[i - 1].signum() == vs[i + 1].signum();
            out.push(PsiZero { t: ts[i], rate: rate(ts[i]).abs(), tangential: touching });
        } else if i < samples && vs[i + 1] != 0.0 && vs[i].signum() != vs[i + 1].signum() {
            let (mut lo, mut hi) = (ts[i], ts[i + 1]);
            for _ in 0..100 {
                if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if psi(mid).signum() == vs[i].signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            out.push(PsiZero { t, rate: rate(t).abs(), tangential: false });
        } else if interior && vs[i].abs() < touch_tol && vs[i].abs() <= vs[i - 1].abs() && vs[i].abs() <= vs[i + 1].abs() {
            // touching zero: refine the minimiser of |ψ| by golden section
            let (mut lo, mut hi) = (ts[i - 1], ts[i + 1]);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..100 {
                let m1 = hi - g * (hi - lo);
                let m2 = lo + g * (hi - lo);
                if psi(m1).abs() < psi(m2).abs() {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let t = 0.5 * (lo + hi);
            out.push(PsiZero { t, rate: rate(t).abs(), tangential: true });
        }
    }
    out
}

/// A2: every zero of ψ∘ξ̂ inside (0, T) is transversal. Zeros at the ends
/// of the horizon do not count; no interior zero gives margin +inf.
pub fn check_transversal_zeros(traj: &ExtremalTrajectory, opts: &ConditionOptions) -> (AssumptionVerdict, Vec<PsiZero>) {
    let n = traj.n();
    let end_tol = 1e-9 * (1.0 + traj.t_final());
    let mut zeros = Vec::new();
    for arc in 0..4 {
        let (a, b) = (traj.times[arc], traj.times[arc + 1]);
        let psi = |t: f64| traj.sys.psi_value(&traj.state_on(arc, t)[..n]);
        let rate = |t: f64| {
            let z = traj.state_on(arc, t);
            let u = traj.control_on(arc, &z).unwrap_or(f64::NAN);
            traj.sys.psi.gradient(&z[..n]).dot(&traj.sys.drift(&z[..n], u))
        };
        zeros.extend(scan_zeros(a, b, 4 * opts.nodes_per_arc, 1e-9, psi, rate));
    }
    zeros.retain(|z| z.t > end_tol && z.t < traj.t_final() - end_tol);
    zeros.dedup_by(|a, b| (a.t - b.t).abs() < 1e-10);
    for z in &zeros {
        if traj.times[1..4].iter().any(|&s| (s - z.t).abs() < 1e-8) {
            return (
                AssumptionVerdict::fail("A2", 0.0, Some(z.t), "psi vanishes at a switching time".into()),
                zeros,
            );
        }
    }
    let mut margin = f64::INFINITY;
    let mut at = None;
    for z in &zeros {
        let m = if z.tangential { 0.0 } else { z.rate };
        if m < margin {
            margin = m;
            at = Some(z.t);
        }
    }
    let detail = if zeros.is_empty() {
        "no interior zero of psi".to_string()
    } else {
        format!("{} interior zero(s) of psi", zeros.len())
    };
    (AssumptionVerdict::new("A2", margin, margin, opts.eps_strict, at, detail), zeros)
}

/// A4: v1 > 0 at ℓ̂1, v2 < 0 at ℓ̂2, 𝔯3 < 0 at ℓ̂3.
pub fn check_switch_regularity(traj: &ExtremalTrajectory, opts: &ConditionOptions) -> [AssumptionVerdict; 3] {
    let n = traj.n();
    let lifts = &traj.lifts;
    let d = &traj.sys.derived;
    let (l1, l2, l3) = (traj.point(1), traj.point(2), traj.point(3));
    let a: Vec<f64> = [&l1, &l2, &l3].iter().map(|z| traj.sys.psi_value(&z[..n]).signum()).collect();

    let v1 = lifts.v1.eval(&l1);
    let v2 = lifts.v2.eval(&l2);
    let r3 = lifts.f01.eval(&l3) + a[2] * d.lf0_psi.eval(&l3[..n]);
    let scale = |z: &[f64]| 1.0 + lifts.f001.eval(z).abs() + lifts.f101.eval(z).abs() + lifts.f01.eval(z).abs();

    let mut out = [
        AssumptionVerdict::new("A4.1", v1, v1, opts.threshold(scale(&l1)), Some(traj.times[1]), "v1 > 0".into()),
        AssumptionVerdict::new("A4.2", v2, -v2, opts.threshold(scale(&l2)), Some(traj.times[2]), "v2 < 0".into()),
        AssumptionVerdict::new("A4.3", r3, -r3, opts.threshold(scale(&l3)), Some(traj.times[3]), "r3 < 0".into()),
    ];
    for (i, ai) in a.iter().take(2).enumerate() {
        if *ai != 1.0 {
            out[i].passed = false;
            out[i].detail = format!("sign of psi at the switch is {ai}, must be +1");
        }
    }
    out
}

/// A5: 𝕃(λ̂(t)) > 0 on [τ̂1, τ̂2].
pub fn check_sglc(traj: &ExtremalTrajectory, nodes: usize, opts: &ConditionOptions) -> AssumptionVerdict {
    let (a, b) = (traj.times[1], traj.times[2]);
    let mut ts = vec![a];
    ts.extend(chebyshev_nodes(a, b, nodes));
    ts.push(b);
    let vals = crate::par::map(&ts, |&t| traj.lifts.sglc.eval(&traj.state_on(1, t)));
    let (mut min, mut at, mut scale) = (f64::INFINITY, None, 0.0f64);
    for (&t, &v) in ts.iter().zip(&vals) {
        scale = scale.max(v.abs());
        if !(v >= min) {
            min = v;
            at = Some(t);
        }
    }
    AssumptionVerdict::new("A5", min, min, opts.threshold(scale), at, "min of SGLC on the singular arc".into())
}

/// A3 + A6: arcs classify as bang+, nondegenerate singular, inactivated,
/// bang− and the declared switches sit on the located zeros.
pub fn check_structure(
    traj: &ExtremalTrajectory,
    opts: &ConditionOptions,
) -> (AssumptionVerdict, [ArcClassification; 4], SwitchingTrace) {
    let trace = match SwitchingTrace::sample(traj, opts.nodes_per_arc) {
        Ok(t) => t,
        Err(e) => {
            let empty = SwitchingTrace { times: traj.times, samples: Vec::new() };
            let cls = classify_arcs(&empty, opts.eps_strict);
            return (AssumptionVerdict::fail("A3+A6", f64::NAN, None, e.to_string()), cls, empty);
        }
    };
    let cls = classify_arcs(&trace, opts.eps_strict);
    let (mut margin, mut at) = (f64::INFINITY, None);
    let mut detail = Vec::new();
    for c in &cls {
        if !c.passed() {
            detail.push(format!("{} arc labelled {:?} at t = {}", c.kind.name(), c.label, c.witness));
        }
        if !(c.margin >= margin) {
            margin = c.margin;
            at = Some(c.witness);
        }
    }
    let sw = traj.switches;
    for (name, s) in [("tau1", sw.tau1), ("tau3", sw.tau3)] {
        if !(s.offset() <= opts.switch_tol) {
            detail.push(format!(
                "declared {name} = {} but the switching function vanishes at {}",
                s.declared, s.located
            ));
        }
    }
    let passed = detail.is_empty() && margin > opts.eps_strict;
    let verdict = AssumptionVerdict {
        id: "A3+A6".into(),
        passed,
        value: margin,
        margin,
        threshold: opts.eps_strict,
        witness: at,
        detail: if detail.is_empty() { "bang+ / singular / zero / bang-".into() } else { detail.join("; ") },
    };
    (verdict, cls, trace)
}

/// Numerical d^k/dt^k of Φ on one arc at t by central (or one-sided,
/// when `side` is ±1) differences on the dense output.
pub fn switching_derivative(traj: &ExtremalTrajectory, arc: usize, plus: bool, t: f64, order: u8, side: f64) -> f64 {
    let h = 1e-3 * (traj.times[arc + 1] - traj.times[arc]);
    let f = |s: f64| {
        let z = traj.state_on(arc, s);
        if plus {
            traj.lifts.phi_plus.eval(&z)
        } else {
            traj.lifts.phi_minus.eval(&z)
        }
    };
    match (order, side) {
        (1, s) if s == 0.0 => (f(t + h) - f(t - h)) / (2.0 * h),
        (1, s) => s * (-3.0 * f(t) + 4.0 * f(t + s * h) - f(t + 2.0 * s * h)) / (2.0 * h),
        (_, s) if s == 0.0 => (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h),
        (_, s) => (2.0 * f(t) - 5.0 * f(t + s * h) + 4.0 * f(t + 2.0 * s * h) - f(t + 3.0 * s * h)) / (h * h),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::extremal::propagate;
    use crate::modeling::expr::{cst, powi, var};
    use crate::modeling::ControlledSystem;
    use crate::vehicle::VehicleParams;

    fn vehicle_traj(tol: f64) -> (VehicleParams, ExtremalTrajectory) {
        let v = VehicleParams::reference();
        let traj = propagate(Arc::new(v.system()), &v.candidate(), tol).unwrap();
        (v, traj)
    }

    #[test]
    fn psi_positivity_on_vehicle() {
        let (_, traj) = vehicle_traj(1e-11);
        let v = check_psi_positivity(&traj, &ConditionOptions::default());
        assert!(v.passed && v.margin > 0.0, "{v:?}");
    }

    #[test]
    fn constant_cost_has_unit_margin() {
        let v = VehicleParams::reference();
        // f0 = (x2², 0) keeps 𝕃 = −2 p1 away from zero with ψ ≡ 1
        let f0 = vec![powi(var(1), 2), cst(0.0)];
        let sys = ControlledSystem::from_exprs(2, f0, vec![cst(0.0), cst(1.0)], cst(1.0)).unwrap();
        // any trajectory will do; the candidate's structure is irrelevant here
        let traj = propagate(Arc::new(sys), &v.candidate(), 1e-9).unwrap();
        let verdict = check_psi_positivity(&traj, &ConditionOptions::default());
        assert_eq!(verdict.margin, 1.0);
    }

    #[test]
    fn psi_crossing_in_first_bang_fails_with_witness() {
        let v = VehicleParams::reference();
        let mut c = v.candidate();
        c.q0 = vec![0.0, -0.3];
        let traj = propagate(Arc::new(v.system()), &c, 1e-10).unwrap();
        let verdict = check_psi_positivity(&traj, &ConditionOptions::default());
        assert!(!verdict.passed);
        assert!(verdict.witness.unwrap() < c.tau[0]);
    }

    #[test]
    fn vehicle_has_no_interior_psi_zero() {
        let (_, traj) = vehicle_traj(1e-11);
        let (v, zeros) = check_transversal_zeros(&traj, &ConditionOptions::default());
        assert!(v.passed && v.margin == f64::INFINITY, "{v:?} {zeros:?}");
    }

    #[test]
    fn tangential_zero_is_caught_by_the_scan() {
        // ψ(t) = (t − 1)² touches zero at t = 1
        let z = scan_zeros(0.0, 2.0, 1000, 1e-9, |t| (t - 1.0) * (t - 1.0), |t| 2.0 * (t - 1.0));
        assert_eq!(z.len(), 1);
        assert!(z[0].tangential && (z[0].t - 1.0).abs() < 1e-6);
        let s = scan_zeros(0.0, 2.0, 1000, 1e-9, |t| t - 0.5, |_| 1.0);
        assert!(!s[0].tangential && (s[0].t - 0.5).abs() < 1e-14 && s[0].rate == 1.0);
        assert!(scan_zeros(0.0, 1.0, 100, 1e-9, |_| 2.0, |_| 0.0).is_empty());
    }

    #[test]
    fn regularity_margins_match_closed_forms() {
        let (v, traj) = vehicle_traj(1e-11);
        let [a1, a2, a3] = check_switch_regularity(&traj, &ConditionOptions::default());
        assert!((a1.value - v.v1()).abs() < 1e-8, "{a1:?}");
        assert!((a2.value - v.v2()).abs() < 1e-8, "{a2:?}");
        assert!((a3.value - v.dphi_plus_tau3()).abs() < 1e-8, "{a3:?}");
        assert!(a1.passed && a2.passed && a3.passed);
    }

    #[test]
    fn regularity_values_are_switching_derivatives() {
        let (_, traj) = vehicle_traj(1e-12);
        let [a1, a2, a3] = check_switch_regularity(&traj, &ConditionOptions::default());
        let d1 = switching_derivative(&traj, 0, false, traj.times[1], 2, -1.0);
        let d2 = switching_derivative(&traj, 2, false, traj.times[2], 2, 1.0);
        let d3 = switching_derivative(&traj, 2, true, traj.times[3], 1, -1.0);
        assert!((d1 - a1.value).abs() < 1e-5, "{d1} {}", a1.value);
        assert!((d2 - a2.value).abs() < 1e-5, "{d2} {}", a2.value);
        assert!((d3 - a3.value).abs() < 1e-6, "{d3} {}", a3.value);
    }

    #[test]
    fn sglc_is_two_rho_and_grid_stable() {
        let (_, traj) = vehicle_traj(1e-11);
        let opts = ConditionOptions::default();
        let a = check_sglc(&traj, 64, &opts);
        let b = check_sglc(&traj, 128, &opts);
        assert!((a.margin - 2.0).abs() < 1e-10);
        assert!((a.margin - b.margin).abs() < 1e-6);
    }

    #[test]
    fn sglc_vanishes_without_brackets() {
        // f1 = (0, 1), f0 = (x2, 0): f101 = 0 and ψ ≡ 1
        let sys = ControlledSystem::from_exprs(2, vec![var(1), cst(0.0)], vec![cst(0.0), cst(1.0)], cst(1.0)).unwrap();
        let lifts = crate::modeling::SystemLifts::new(&sys);
        assert_eq!(lifts.sglc.eval(&[0.3, 0.2, 1.0, -1.0]), 0.0);
    }

    #[test]
    fn structure_passes_and_margins_are_tolerance_stable() {
        let opts = ConditionOptions::default();
        // the structure margin divides Φ± by the squared distance to the
        // switch, which magnifies integrator error; compare at tight tolerance
        let (_, a) = vehicle_traj(1e-12);
        let (_, b) = vehicle_traj(5e-13);
        let (sa, _, _) = check_structure(&a, &opts);
        let (sb, _, _) = check_structure(&b, &opts);
        assert!(sa.passed, "{sa:?}");
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
        assert!(rel(sa.margin, sb.margin) < 1e-9, "{} {}", sa.margin, sb.margin);
        let (_, a) = vehicle_traj(1e-10);
        let (_, b) = vehicle_traj(5e-11);
        let pa = check_psi_positivity(&a, &opts);
        let pb = check_psi_positivity(&b, &opts);
        assert!(rel(pa.margin, pb.margin) < 1e-9);
        for (x, y) in check_switch_regularity(&a, &opts).iter().zip(&check_switch_regularity(&b, &opts)) {
            assert!(rel(x.margin, y.margin) < 1e-9, "{x:?} {y:?}");
        }
        assert!(rel(check_sglc(&a, 64, &opts).margin, check_sglc(&b, 64, &opts).margin) < 1e-9);
    }

    #[test]
    fn p10_beyond_two_breaks_the_first_bang() {
        // p1⁰ = 2.2 violates the family's parameter range; build the
        // candidate by hand from the reference times.
        let v = VehicleParams::reference();
        let mut c = v.candidate();
        c.p0 = vec![2.2, 2.2 * 2.2 / 4.0];
        let traj = propagate(Arc::new(v.system()), &c, 1e-10).unwrap();
        let (s, _, _) = check_structure(&traj, &ConditionOptions::default());
        assert!(!s.passed && s.witness.is_some());
    }

    #[test]
    fn shifted_tau3_fails_structure() {
        let v = VehicleParams::reference();
        let mut c = v.candidate();
        c.tau[2] += 0.1;
        let traj = propagate(Arc::new(v.system()), &c, 1e-10).unwrap();
        let (s, cls, _) = check_structure(&traj, &ConditionOptions::default());
        assert!(!s.passed);
        assert!(!cls[2].passed() || !cls[3].passed());
    }

    #[test]
    fn verdict_serialises_infinite_margin_as_text() {
        let v = AssumptionVerdict::new("A2", f64::INFINITY, f64::INFINITY, 1e-8, None, String::new());
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"inf\""));
        let back: AssumptionVerdict = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
