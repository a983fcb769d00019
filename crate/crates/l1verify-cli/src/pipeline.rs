//! modeling → extremal → conditions → secvar → hamflow, stopping at the
//! first decisive failure.

use std::sync::Arc;

use l1verify::conditions::{self, AssumptionVerdict, ConditionOptions};
use l1verify::extremal::{propagate, singular_feedback, ExtremalCandidate, ExtremalTrajectory};
use l1verify::hamflow::{check_injectivity, CompositeFlow, Lambda1, OverMax, OverMaxOptions};
use l1verify::linalg::chebyshev_nodes;
use l1verify::modeling::ControlledSystem;
use l1verify::secvar::{coercive, first_variation, FirstVariationDirection, GohLQ, LqSweep, PenaltyStatus, SecvarOptions};
use l1verify::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::options::VerifyOptions;
use crate::report::{
    CoercivenessSummary, InputHashes, InvertibilitySummary, OvermaxSummary, SingularSummary, SwitchSummary, Verdict,
    VerificationReport,
};

/// Malformed input files; maps to exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("input error: {0}")]
pub struct InputError(pub String);

#[derive(Debug, Clone, Default)]
pub struct Traces {
    pub switching_csv: Option<String>,
    pub secvar_det_csv: Option<String>,
    pub monitor_csv: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: VerificationReport,
    pub traces: Traces,
}

/// Parses both inputs; any failure is an input error.
pub fn load(problem: &str, candidate: &str) -> Result<(ControlledSystem, ExtremalCandidate), InputError> {
    let sys = ControlledSystem::from_json(problem).map_err(|e| InputError(e.to_string()))?;
    let cand = ExtremalCandidate::from_json(candidate).map_err(|e| InputError(e.to_string()))?;
    cand.validate(sys.n).map_err(|e| InputError(e.to_string()))?;
    Ok((sys, cand))
}

/// Numerical-neighbourhood exhaustion is inconclusive; everything else that
/// goes wrong after parsing is a failure.
fn error_verdict(stage: &str, e: &Error) -> Verdict {
    match e {
        Error::NoConvergence(_) | Error::Integrator(_) => Verdict::inconclusive(stage, e.to_string()),
        _ => Verdict::failed(stage, e.to_string()),
    }
}

pub fn verify(problem: &str, candidate: &str, opts: &VerifyOptions) -> Result<Outcome, InputError> {
    let (sys, cand) = load(problem, candidate)?;
    let mut report = VerificationReport::new(InputHashes::of(problem, candidate), *opts);
    let mut traces = Traces::default();
    run(&mut report, &mut traces, sys, &cand, opts);
    Ok(Outcome { report, traces })
}

fn run(report: &mut VerificationReport, traces: &mut Traces, sys: ControlledSystem, cand: &ExtremalCandidate, opts: &VerifyOptions) {
    let traj = match propagate(Arc::new(sys), cand, opts.tol_int) {
        Ok(t) => t,
        Err(e) => {
            report.verdict = error_verdict("extremal", &e);
            return;
        }
    };
    report.stages_completed.push("extremal".into());
    let sw = traj.switches;
    report.switches = Some(SwitchSummary {
        declared: cand.tau,
        located_tau1: sw.tau1.located,
        located_tau3: sw.tau3.located,
        tau1_offset: sw.tau1.offset(),
        tau3_offset: sw.tau3.offset(),
    });

    if let Some(v) = run_conditions(report, traces, &traj, opts) {
        report.verdict = v;
        return;
    }
    report.stages_completed.push("conditions".into());

    let s = match run_secvar(report, traces, &traj, opts) {
        Ok(s) => s,
        Err(v) => {
            report.verdict = v;
            return;
        }
    };
    report.stages_completed.push("secvar".into());

    if let Err(v) = run_hamflow(report, traces, &traj, s, opts) {
        report.verdict = v;
        return;
    }
    report.stages_completed.push("hamflow".into());
    report.verdict = report.implied_verdict();
}

/// Records verdicts in order and returns the failure verdict of the first
/// failing check.
fn run_conditions(
    report: &mut VerificationReport,
    traces: &mut Traces,
    traj: &ExtremalTrajectory,
    opts: &VerifyOptions,
) -> Option<Verdict> {
    let copts = ConditionOptions { eps_strict: opts.tol_strict, nodes_per_arc: opts.nodes_per_arc, ..Default::default() };
    let (structure, _, trace) = conditions::check_structure(traj, &copts);
    traces.switching_csv = traj.to_csv(&trace).ok();

    let nodes = chebyshev_nodes(traj.times[1], traj.times[2], 64);
    let nus: Vec<f64> = nodes
        .iter()
        .filter_map(|&t| singular_feedback(&traj.lifts, &traj.state_on(1, t)).ok().map(|(nu, _)| nu))
        .collect();
    if !nus.is_empty() {
        let mean = nus.iter().sum::<f64>() / nus.len() as f64;
        let spread = nus.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        let sglc = nodes.iter().map(|&t| traj.lifts.sglc.eval(&traj.state_on(1, t))).fold(f64::INFINITY, f64::min);
        report.singular = Some(SingularSummary { nu_spread: spread, nu_mean: mean, sglc_min: sglc });
    }

    let checks: Vec<Box<dyn Fn() -> Vec<AssumptionVerdict> + '_>> = vec![
        Box::new(|| vec![conditions::check_psi_positivity(traj, &copts)]),
        Box::new(|| vec![conditions::check_transversal_zeros(traj, &copts).0]),
        Box::new(|| vec![structure.clone()]),
        Box::new(|| conditions::check_switch_regularity(traj, &copts).to_vec()),
        Box::new(|| vec![conditions::check_sglc(traj, opts.nodes_per_arc, &copts)]),
    ];
    for check in checks {
        let verdicts = check();
        let failed = verdicts.iter().find(|v| !v.passed).map(|v| Verdict::failed(&v.id, v.detail.clone()));
        report.assumptions.extend(verdicts);
        if failed.is_some() {
            return failed;
        }
    }
    None
}

/// Returns the accepted penalty weight.
fn run_secvar(
    report: &mut VerificationReport,
    traces: &mut Traces,
    traj: &ExtremalTrajectory,
    opts: &VerifyOptions,
) -> Result<f64, Verdict> {
    let lq = GohLQ::build(traj, opts.tol_int).map_err(|e| error_verdict("secvar", &e))?;
    let sopts = SecvarOptions {
        tol: opts.tol_int,
        eps_strict: opts.tol_strict,
        s_start: opts.penalty_start,
        s_cap: opts.penalty_cap,
        ..Default::default()
    };
    let sweep = LqSweep::integrate(&lq, &sopts).map_err(|e| error_verdict("secvar", &e))?;
    let res = coercive::decide(&lq, &sweep, &sopts).map_err(|e| error_verdict("secvar", &e))?;
    traces.secvar_det_csv = Some(res.trace.to_csv());
    let (a, b) = (traj.times[1], traj.times[2]);
    let bump = move |t: f64| if t > a && t < b { ((t - a) * (b - t)).powi(2) * 8.0 } else { 0.0 };
    let dir = FirstVariationDirection { v: &bump, d_tau1: 0.3, d_tau3: -0.2 };
    let fv = first_variation(traj, &dir, 1e-4, opts.tol_int * 1e-2).unwrap_or(f64::NAN);
    let cap = res.penalty_status == PenaltyStatus::CapReached;
    report.coerciveness = Some(CoercivenessSummary {
        passed: res.overall,
        v_test_passed: res.coercive_v,
        min_abs_det: res.min_abs_det,
        first_zero_time: res.first_zero_time,
        vperp_value: res.vperp_value,
        vperp_bold: res.vperp_bold,
        penalty_s: res.penalty_s,
        penalty_cap_reached: cap,
        symplectic_defect: res.symplectic_defect,
        r_consistency: res.r_consistency,
        c_eps: lq.c_eps,
        first_variation: fv,
    });
    if cap {
        return Err(Verdict::inconclusive("secvar", format!("penalty cap reached at s = {}", res.penalty_s)));
    }
    if !res.overall {
        return Err(Verdict::failed("secvar", format!("second variation not coercive (Vperp = {})", res.vperp_value)));
    }
    Ok(res.penalty_s)
}

/// Σ⁻ samples around the singular arc.
pub fn sigma_minus_samples(traj: &ExtremalTrajectory, om: &OverMax, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let t = rng.gen_range(traj.times[1]..traj.times[2]);
            traj.state(t).iter().map(|v| v + rng.gen_range(-radius..radius)).collect()
        })
        .collect();
    l1verify::par::map(&raw, |z| om.project_to_sigma_minus(z).ok()).into_iter().flatten().collect()
}

fn run_hamflow(
    report: &mut VerificationReport,
    traces: &mut Traces,
    traj: &ExtremalTrajectory,
    s: f64,
    opts: &VerifyOptions,
) -> Result<(), Verdict> {
    let om = OverMax::new(traj.lifts.clone(), OverMaxOptions { newton_tol: opts.tol_newton, ..Default::default() });
    let samples = sigma_minus_samples(traj, &om, opts.overmax_samples, opts.overmax_radius, opts.seed);
    if samples.len() < opts.overmax_samples / 2 {
        return Err(Verdict::inconclusive(
            "hamflow",
            format!("only {} of {} samples reached the singular surface", samples.len(), opts.overmax_samples),
        ));
    }
    let per_sample = l1verify::par::try_map(&samples, |z| -> l1verify::Result<(f64, f64)> {
        let gap = om.h0(z)? - om.lifts.f0.eval(z);
        let land = om.theta_point(z)?.1;
        Ok((gap, (om.h0(&land)? - om.lifts.f0.eval(&land)).abs()))
    })
    .map_err(|e| error_verdict("hamflow", &e))?;
    let h0_min = per_sample.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let eq_max = per_sample.iter().map(|p| p.1).fold(0.0, f64::max);
    let om_rep = om.overmax_check(&samples).map_err(|e| error_verdict("hamflow", &e))?;
    let radius = om.validity_radius(&traj.point(1), &[0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001]);
    let floor = -0.1 * opts.tol_strict;
    let passed = h0_min >= floor && eq_max <= opts.tol_strict && om_rep.worst_gap >= floor && radius > 0.0;
    report.overmax = Some(OvermaxSummary {
        passed,
        samples: samples.len(),
        h0_minus_f0_min: h0_min,
        s_minus_equality: eq_max,
        overmax_gap_min: om_rep.worst_gap,
        overmax_violation_at: if om_rep.worst_gap < floor { om_rep.location } else { None },
        validity_radius: radius,
    });
    if !passed {
        return Err(report.implied_verdict());
    }

    let cf = CompositeFlow::new(traj, &om, opts.tol_int);
    let lambda1 = Lambda1::build(&cf, s).map_err(|e| error_verdict("invertibility", &e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let n = lambda1.n();
    let qs: Vec<Vec<f64>> =
        (0..20).map(|_| lambda1.l1[..n].iter().map(|v| v + rng.gen_range(-0.01..0.01)).collect()).collect();
    let l1check = lambda1.check(&om.lifts, &qs).map_err(|e| error_verdict("invertibility", &e))?;
    let mon = check_injectivity(&cf, &lambda1, opts.monitor_nodes, opts.tol_strict)
        .map_err(|e| error_verdict("invertibility", &e))?;
    traces.monitor_csv = Some(mon.to_csv());
    let max_defect = mon.symplectic_defects.iter().map(|d| d.1).fold(0.0, f64::max);
    let l1_ok = l1check.max_phi_minus <= 1e-6 && l1check.tangency_residual <= 1e-6;
    report.invertibility = Some(InvertibilitySummary {
        passed: mon.passed && l1_ok,
        min_abs_det: mon.min_abs_det,
        min_abs_det_time: mon.min_abs_det_time,
        sign_changes: mon.sign_changes,
        clarke_a0: mon.clarke.a0,
        clarke_a1: mon.clarke.a1,
        max_symplectic_defect: max_defect,
        lambda1_phi_minus: l1check.max_phi_minus,
        lambda1_tangency: l1check.tangency_residual,
    });
    Ok(())
}
