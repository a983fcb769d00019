//! `flow-probe` and `secvar-eval`.

use std::sync::Arc;

use l1verify::extremal::propagate;
use l1verify::hamflow::{CompositeFlow, Lambda1, OverMax, OverMaxOptions};
use l1verify::secvar::{GohLQ, Variation, WProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::options::VerifyOptions;
use crate::pipeline::{load, InputError};

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSample {
    /// Base point q ∈ U_{q̂1}.
    pub q: Vec<f64>,
    /// Graph point of Λ1 over q.
    pub l: Vec<f64>,
    /// 𝓗(t, ℓ), or the reason it could not be evaluated.
    pub flowed: Option<Vec<f64>>,
    pub branch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutput {
    pub t: f64,
    pub penalty_s: f64,
    pub reference: Vec<f64>,
    pub samples: Vec<ProbeSample>,
}

/// 𝓗(t, ·) on `count` graph points of Λ1 within `radius` of q̂1; the first
/// sample is q̂1 itself.
pub fn flow_probe(
    problem: &str,
    candidate: &str,
    t: f64,
    radius: f64,
    count: usize,
    s: f64,
    opts: &VerifyOptions,
) -> Result<ProbeOutput, String> {
    let (sys, cand) = load(problem, candidate).map_err(|e| e.to_string())?;
    let traj = propagate(Arc::new(sys), &cand, opts.tol_int).map_err(|e| e.to_string())?;
    if !(0.0..=traj.t_final()).contains(&t) {
        return Err(format!("t = {t} outside [0, {}]", traj.t_final()));
    }
    let om = OverMax::new(traj.lifts.clone(), OverMaxOptions { newton_tol: opts.tol_newton, ..Default::default() });
    let cf = CompositeFlow::new(&traj, &om, opts.tol_int);
    let lambda1 = Lambda1::build(&cf, s).map_err(|e| e.to_string())?;
    let n = lambda1.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let qs: Vec<Vec<f64>> = (0..count)
        .map(|i| {
            lambda1.l1[..n].iter().map(|v| if i == 0 { *v } else { v + rng.gen_range(-radius..radius) }).collect()
        })
        .collect();
    let samples = l1verify::par::map(&qs, |q| match lambda1.graph(q) {
        Err(e) => ProbeSample { q: q.clone(), l: Vec::new(), flowed: None, branch: None, error: Some(e.to_string()) },
        Ok(l) => match cf.flow(&l) {
            Ok(c) => ProbeSample { q: q.clone(), flowed: Some(c.at(t)), branch: Some(c.branch_at(t)), l, error: None },
            Err(e) => ProbeSample { q: q.clone(), l, flowed: None, branch: None, error: Some(e.to_string()) },
        },
    });
    Ok(ProbeOutput { t, penalty_s: s, reference: traj.state(t), samples })
}

/// Parses `t,w` rows (header optional, `#` comments allowed).
pub fn parse_w_samples(text: &str) -> Result<WProfile, InputError> {
    let (mut t, mut w) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (a, b) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                t.push(x);
                w.push(y);
            }
            _ if i == 0 => continue,
            _ => return Err(InputError(format!("w samples line {}: expected `t,w`", i + 1))),
        }
    }
    if t.len() < 2 || !t.windows(2).all(|p| p[0] < p[1]) {
        return Err(InputError("w samples need at least two rows with increasing t".into()));
    }
    Ok(WProfile::Samples { t, w })
}

#[derive(Debug, Clone, Serialize)]
pub struct SecvarEvalOutput {
    pub eps0: f64,
    pub eps: f64,
    pub penalty_s: f64,
    pub value: f64,
    pub endpoint_residual: f64,
    pub admissible: bool,
}

pub fn secvar_eval(
    problem: &str,
    candidate: &str,
    w: WProfile,
    eps0: f64,
    eps: f64,
    s: f64,
    opts: &VerifyOptions,
) -> Result<SecvarEvalOutput, String> {
    let (sys, cand) = load(problem, candidate).map_err(|e| e.to_string())?;
    let traj = propagate(Arc::new(sys), &cand, opts.tol_int).map_err(|e| e.to_string())?;
    let lq = GohLQ::build(&traj, opts.tol_int).map_err(|e| e.to_string())?;
    let q = lq.evaluate(&Variation { eps0, eps, w }, s).map_err(|e| e.to_string())?;
    Ok(SecvarEvalOutput {
        eps0,
        eps,
        penalty_s: s,
        value: q.value,
        endpoint_residual: q.residual,
        admissible: q.admissible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w_samples_accept_headers_and_comments() {
        let w = parse_w_samples("t,w\n# comment\n0.7,1\n1.0,2\n").unwrap();
        assert_eq!(w, WProfile::Samples { t: vec![0.7, 1.0], w: vec![1.0, 2.0] });
        assert!(parse_w_samples("0,1\nx,y\n").is_err());
        assert!(parse_w_samples("1,1\n0,1\n").is_err());
    }
}
