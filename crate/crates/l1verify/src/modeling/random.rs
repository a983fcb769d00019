//! Seeded random polynomial problems for property suites and benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::system::ProblemFile;

fn monomials(n: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &out {
            for i in 0..n {
                let mut e = m.clone();
                e[i] += 1;
                if !next.contains(&e) && !out.contains(&e) {
                    next.push(e);
                }
            }
        }
        out.extend(next);
    }
    out
}

fn polynomial(rng: &mut ChaCha8Rng, monos: &[Vec<usize>]) -> String {
    let terms: Vec<String> = monos
        .iter()
        .map(|e| {
            let c: f64 = rng.gen_range(-1.0..1.0);
            let mut t = format!("({c:.3})");
            for (i, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => t.push_str(&format!("*x{}", i + 1)),
                    _ => t.push_str(&format!("*x{}^{k}", i + 1)),
                }
            }
            t
        })
        .collect();
    terms.join(" + ")
}

/// f0, f1 and ψ with every monomial of total degree ≤ `degree` and
/// coefficients uniform in (−1, 1), rounded to three decimals.
pub fn random_polynomial_problem(n: usize, degree: usize, seed: u64) -> ProblemFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let monos = monomials(n, degree);
    let f0 = (0..n).map(|_| polynomial(&mut rng, &monos)).collect();
    let f1 = (0..n).map(|_| polynomial(&mut rng, &monos)).collect();
    let psi = polynomial(&mut rng, &monos);
    ProblemFile { n, params: Default::default(), f0, f1, psi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modeling::ControlledSystem;

    #[test]
    fn generated_problems_parse_and_are_reproducible() {
        for seed in 0..5 {
            let p = random_polynomial_problem(3, 2, seed);
            assert_eq!(p, random_polynomial_problem(3, 2, seed));
            assert_eq!(monomials(3, 2).len(), 10);
            ControlledSystem::from_problem(&p).unwrap();
        }
    }
}
