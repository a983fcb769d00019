//! One line per acceptance criterion; exits non-zero if any criterion fails.

use std::f64::consts::{LN_2, SQRT_2};
use std::sync::Arc;
use std::time::Instant;

use l1verify::extremal::{propagate, singular_feedback, ExtremalTrajectory};
use l1verify::hamflow::{CompositeFlow, KHam, OverMax, OverMaxOptions};
use l1verify::linalg::max_abs;
use l1verify::modeling::cotangent::{canonical_j, flow, flow_linearized, flow_solution, lift_expr, poisson_bracket};
use l1verify::modeling::lie::{add_fields, bracket_exprs, lie_bracket};
use l1verify::modeling::{random_polynomial_problem, ControlledSystem, CotFn, Hamiltonian, SmoothMap, SystemLifts};
use l1verify::ode::OdeOptions;
use l1verify::secvar::{first_variation, FirstVariationDirection, GohLQ};
use l1verify::vehicle::VehicleParams;
use l1verify_cli::{verify, Status, VerificationReport, VerifyOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one clause of a criterion.
struct Clause {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn clause(name: &'static str, ok: bool, detail: impl Into<String>) -> Clause {
    Clause { name, ok, detail: detail.into() }
}

fn report(id: usize, clauses: &[Clause]) -> bool {
    let ok = clauses.iter().all(|c| c.ok);
    let failing: Vec<String> =
        clauses.iter().filter(|c| !c.ok).map(|c| format!("{} ({})", c.name, c.detail)).collect();
    let summary: Vec<String> = clauses.iter().map(|c| format!("{} {}", c.name, c.detail)).collect();
    if ok {
        println!("criterion {id}: PASS  {}", summary.join("; "));
    } else {
        println!("criterion {id}: FAIL  {}", failing.join("; "));
    }
    ok
}

fn vehicle_inputs(v: &VehicleParams) -> (String, String) {
    (serde_json::to_string_pretty(&v.problem()).unwrap(), serde_json::to_string_pretty(&v.candidate()).unwrap())
}

fn margin(r: &VerificationReport, id: &str) -> f64 {
    r.assumptions.iter().find(|a| a.id == id).map(|a| a.value).unwrap_or(f64::NAN)
}

fn criterion_1(v: &VehicleParams, r: &VerificationReport, secs: f64) -> Vec<Clause> {
    let sw = r.switches.as_ref().unwrap();
    let tau3 = v.tau1() + v.delta() + (1.0 + SQRT_2).ln();
    let (e1, e3) = ((sw.located_tau1 - LN_2).abs(), (sw.located_tau3 - tau3).abs());
    vec![
        clause("verdict", r.verdict.status == Status::Verified, format!("{:?}", r.verdict.status)),
        clause("time", secs < 30.0, format!("{secs:.2} s")),
        clause("tau1", e1 <= 1e-6, format!("|err| {e1:.1e}")),
        clause("tau3", e3 <= 1e-6, format!("|err| {e3:.1e}")),
    ]
}

fn criterion_2(r: &VerificationReport) -> Vec<Clause> {
    let check = |name, id: &str, want: f64| {
        let got = margin(r, id);
        clause(name, (got - want).abs() <= 1e-8, format!("{got:.10} vs {want}"))
    };
    vec![
        check("rho(2-p10)", "A4.1", 1.0),
        check("-rho p10", "A4.2", -1.0),
        check("r3 = -p10", "A4.3", -1.0),
        check("L = 2rho", "A5", 2.0),
    ]
}

fn criterion_3(v: &VehicleParams, traj: &ExtremalTrajectory) -> Vec<Clause> {
    let (mut nu_err, mut x2_err) = (0.0f64, 0.0f64);
    for i in 0..=200 {
        let t = traj.times[1] + (traj.times[2] - traj.times[1]) * i as f64 / 200.0;
        let z = traj.state_on(1, t);
        let nu = singular_feedback(&traj.lifts, &z).unwrap().0;
        nu_err = nu_err.max((nu - v.p10 / 2.0).abs());
        x2_err = x2_err.max((z[1] - v.p10 / (2.0 * v.rho)).abs());
    }
    vec![
        clause("nu", nu_err <= 1e-8, format!("max err {nu_err:.1e}")),
        clause("x2", x2_err <= 1e-8, format!("max err {x2_err:.1e}")),
    ]
}

fn criterion_4(v: &VehicleParams, traj: &ExtremalTrajectory, r: &VerificationReport, opts: &VerifyOptions) -> Vec<Clause> {
    let lq = GohLQ::build(traj, opts.tol_int).unwrap();
    let (mut r_err, mut a_err) = (0.0f64, 0.0f64);
    for i in 0..64 {
        let t = lq.tau1 + (lq.tau2 - lq.tau1) * (i as f64 + 0.5) / 64.0;
        let c = lq.coefficients(t).unwrap();
        r_err = r_err.max((c.r - 2.0 * v.rho).abs());
        let ct = v.cross_term(t);
        a_err = a_err.max((c.a[0] - ct[0]).abs().max((c.a[1] - ct[1]).abs()));
    }
    let c = r.coerciveness.as_ref().unwrap();
    // J″ on 𝓥⊥ is reported as −2 times the ε² coefficient
    let coeff = -c.vperp_value / 2.0;
    let rel = (coeff - v.vperp_coeff()).abs() / v.vperp_coeff();
    vec![
        clause("R", r_err <= 1e-10, format!("max err {r_err:.1e}")),
        clause("cross term", a_err <= 1e-8, format!("max err {a_err:.1e}")),
        clause("V sweep", c.v_test_passed && c.first_zero_time.is_none(), format!("min |det| {:.3}", c.min_abs_det)),
        clause("Vperp", rel <= 1e-6, format!("coefficient {coeff:.6} vs {:.6}, rel {rel:.1e}", v.vperp_coeff())),
    ]
}

fn criterion_5(v: &VehicleParams, traj: &ExtremalTrajectory, om: &OverMax) -> Vec<Clause> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let t = rng.gen_range(traj.times[1]..traj.times[2]);
        let z: Vec<f64> = traj.state(t).iter().map(|x| x + rng.gen_range(-0.2..0.2)).collect();
        let errs = [
            (om.theta(&z).unwrap() - v.theta(&z)).abs(),
            (om.nu(&z).unwrap() - v.nu(&z)).abs(),
            (om.h0(&z).unwrap() - v.h0(&z)).abs(),
            (om.k(&z).unwrap() - v.k_hamiltonian(&z)).abs(),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    vec![
        clause("theta", worst[0] <= 1e-8, format!("{:.1e}", worst[0])),
        clause("nu", worst[1] <= 1e-8, format!("{:.1e}", worst[1])),
        clause("H0", worst[2] <= 1e-7, format!("{:.1e}", worst[2])),
        clause("K", worst[3] <= 1e-7, format!("{:.1e}", worst[3])),
    ]
}

fn criterion_6(r: &VerificationReport) -> Vec<Clause> {
    let i = r.invertibility.as_ref().unwrap();
    vec![
        clause("min |det|", i.min_abs_det > 0.0 && i.sign_changes == 0, format!("{:.4} at t = {:.4}", i.min_abs_det, i.min_abs_det_time)),
        clause("Clarke a=0 <= -0.5", i.clarke_a0 <= -0.5, format!("{:.9}", i.clarke_a0)),
        clause("Clarke a=1 <= -0.5", i.clarke_a1 <= -0.5, format!("{:.9}", i.clarke_a1)),
        clause("Clarke a=0 = -1", (i.clarke_a0 + 1.0).abs() <= 1e-8, format!("{:.9}", i.clarke_a0)),
    ]
}

/// Worst bracket identity residual at random points.
fn bracket_residual(sys: &ControlledSystem, other: &ControlledSystem, rng: &mut ChaCha8Rng) -> f64 {
    let n = sys.n;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (f, g, h) = (sys.f0.exprs(), sys.f1.exprs(), other.f0.exprs());
        let at = |e: Vec<_>| SmoothMap::new(e, n).value_vec(&q);
        let fg = lie_bracket(&sys.f0, &sys.f1, &q).unwrap();
        let gf = lie_bracket(&sys.f1, &sys.f0, &q).unwrap();
        let lin = at(bracket_exprs(f, &add_fields(g, h), n)) - (&fg + lie_bracket(&sys.f0, &other.f0, &q).unwrap());
        let cyc = |a: &[_], b: &[_], c: &[_]| at(bracket_exprs(a, &bracket_exprs(b, c, n), n));
        let jacobi = cyc(f, g, h) + cyc(g, h, f) + cyc(h, f, g);
        let z: Vec<f64> = q.iter().chain(&p).copied().collect();
        let lf = CotFn::new(lift_expr(f, n), n);
        let lg = CotFn::new(lift_expr(g, n), n);
        let pb = poisson_bracket(&lf, &lg, &z).unwrap();
        let lifted = DVector::from_column_slice(&p).dot(&fg);
        let scale = 1.0 + fg.amax() + cyc(f, g, h).amax();
        let r = [lin.amax(), (&fg + &gf).amax(), jacobi.amax(), (pb - lifted).abs()];
        worst = worst.max(r.iter().fold(0.0f64, |a, b| a.max(*b)) / scale);
    }
    worst
}

/// Worst drift and symplectic defect of the bang and drift flows from random
/// starting points.
fn branch_flow_residuals(sys: &ControlledSystem, tol: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let lifts = SystemLifts::new(sys);
    let n = sys.n;
    let opts = OdeOptions::with_tol(tol);
    let j = canonical_j(n);
    let (mut drift, mut defect) = (0.0f64, 0.0f64);
    let mut runs = 0;
    while runs < 12 {
        let z: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for h in [&lifts.bang_plus, &lifts.f0, &lifts.bang_minus] {
            let Ok(sol) = flow_solution(h, &z, 0.0, 0.3, &opts) else { continue };
            if sol.y1.iter().any(|v| v.abs() > 10.0) {
                continue;
            }
            let (h0, h1) = (h.value(&z).unwrap(), h.value(&sol.y1).unwrap());
            drift = drift.max((h0 - h1).abs() / (1.0 + h0.abs()));
            let (_, m) = flow_linearized(h, &z, &DMatrix::identity(2 * n, 2 * n), 0.0, 0.3, &opts).unwrap();
            defect = defect.max(max_abs(&(m.transpose() * &j * &m - &j)));
            runs += 1;
        }
    }
    (drift, defect)
}

/// Worst |Φ⁻| after flowing K from points projected onto Σ⁻, and how many
/// samples the over-maximized Hamiltonian was defined on.
fn k_invariance(om: &OverMax, centers: &[Vec<f64>], radius: f64, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let k = KHam(om);
    let opts = OdeOptions::with_tol(1e-11);
    let mut worst = 0.0f64;
    let mut used = 0;
    for i in 0..40 {
        let c = &centers[i % centers.len()];
        let z: Vec<f64> = c.iter().map(|x| x + rng.gen_range(-radius..radius)).collect();
        let Ok(z) = om.project_to_sigma_minus(&z) else { continue };
        let Ok(w) = flow(&k, &z, 0.2, &opts) else { continue };
        worst = worst.max(om.lifts.phi_minus.eval(&w).abs());
        used += 1;
    }
    (worst, used)
}

fn criterion_7(traj: &ExtremalTrajectory, om: &OverMax, opts: &VerifyOptions) -> Vec<Clause> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let vehicle = (*traj.sys).clone();
    let randoms: Vec<ControlledSystem> =
        [11u64, 29].iter().map(|&s| ControlledSystem::from_problem(&random_polynomial_problem(2, 2, s)).unwrap()).collect();
    let systems: Vec<(&str, &ControlledSystem)> =
        vec![("vehicle", &vehicle), ("random#11", &randoms[0]), ("random#29", &randoms[1])];

    let mut brackets = 0.0f64;
    let (mut drift, mut defect) = (0.0f64, 0.0f64);
    for (i, (_, sys)) in systems.iter().enumerate() {
        brackets = brackets.max(bracket_residual(sys, systems[(i + 1) % 3].1, &mut rng));
        let (d, s) = branch_flow_residuals(sys, opts.tol_int, &mut rng);
        drift = drift.max(d);
        defect = defect.max(s);
    }

    // the six-branch composite flow of the vehicle
    let cf = CompositeFlow::new(traj, om, opts.tol_int);
    let c = cf.flow(&traj.point(1)).unwrap();
    for seg in c.segments.iter().filter(|s| s.sol.is_some()) {
        let h = cf.branch_hamiltonian(seg.id);
        let h0 = h.value(&seg.z0).unwrap();
        drift = drift.max((h0 - h.value(&seg.end()).unwrap()).abs() / (1.0 + h0.abs()));
    }
    for (_, d) in cf.symplectic_defects().unwrap() {
        defect = defect.max(d);
    }

    let (a, b) = (traj.times[1], traj.times[2]);
    let bump = move |t: f64| if t > a && t < b { ((t - a) * (b - t)).powi(2) * 8.0 } else { 0.0 };
    let dir = FirstVariationDirection { v: &bump, d_tau1: 0.3, d_tau3: -0.2 };
    let fv = first_variation(traj, &dir, 1e-4, opts.tol_int * 1e-2).unwrap().abs();

    let (mut phi, mut k_used) = (0.0f64, Vec::new());
    let centers: Vec<Vec<f64>> = (0..8).map(|i| traj.state(a + (b - a) * (i as f64 + 0.5) / 8.0)).collect();
    let (w, used) = k_invariance(om, &centers, 0.05, &mut rng);
    phi = phi.max(w);
    k_used.push(format!("vehicle {used}"));
    for (name, sys) in &systems[1..] {
        let om = OverMax::new(Arc::new(SystemLifts::new(sys)), OverMaxOptions::default());
        let centers: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (w, used) = k_invariance(&om, &centers, 0.2, &mut rng);
        phi = phi.max(w);
        k_used.push(format!("{name} {used}"));
    }
    let k_ok = phi <= 1e-6;

    vec![
        clause("brackets", brackets <= 1e-8, format!("{brackets:.1e}")),
        clause("conservation", drift <= 10.0 * opts.tol_int, format!("{drift:.1e} vs {:.0e}", 10.0 * opts.tol_int)),
        clause("symplecticity", defect <= 1e-6, format!("{defect:.1e}")),
        clause("first variation", fv <= 1e-5, format!("{fv:.1e}")),
        clause("K keeps Sigma-", k_ok, format!("{phi:.1e} over samples [{}]", k_used.join(", "))),
    ]
}

fn criterion_8(v: &VehicleParams, opts: &VerifyOptions) -> Vec<Clause> {
    let (p, _) = vehicle_inputs(v);
    let mut cand = v.candidate();
    cand.tau[2] += 0.1;
    let late = verify(&p, &serde_json::to_string(&cand).unwrap(), opts).unwrap().report;
    let (_, c) = vehicle_inputs(v);
    let capped = verify(&p, &c, &VerifyOptions { penalty_start: 2.0, penalty_cap: 1.0, ..*opts }).unwrap().report;
    vec![
        clause(
            "tau3 + 0.1",
            late.verdict.status == Status::Failed && late.verdict.stage == "A3+A6",
            format!("{:?} at {}", late.verdict.status, late.verdict.stage),
        ),
        clause(
            "penalty cap",
            capped.verdict.status == Status::Inconclusive,
            format!("{:?} at {}", capped.verdict.status, capped.verdict.stage),
        ),
    ]
}

fn main() {
    let opts = VerifyOptions::default();
    let v = VehicleParams::reference();
    let (p, c) = vehicle_inputs(&v);
    let start = Instant::now();
    let r = verify(&p, &c, &opts).expect("vehicle inputs parse").report;
    let secs = start.elapsed().as_secs_f64();
    let traj = propagate(Arc::new(v.system()), &v.candidate(), opts.tol_int).unwrap();
    let om = OverMax::new(traj.lifts.clone(), OverMaxOptions { newton_tol: opts.tol_newton, ..Default::default() });

    let results = [
        report(1, &criterion_1(&v, &r, secs)),
        report(2, &criterion_2(&r)),
        report(3, &criterion_3(&v, &traj)),
        report(4, &criterion_4(&v, &traj, &r, &opts)),
        report(5, &criterion_5(&v, &traj, &om)),
        report(6, &criterion_6(&r)),
        report(7, &criterion_7(&traj, &om, &opts)),
        report(8, &criterion_8(&v, &opts)),
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
