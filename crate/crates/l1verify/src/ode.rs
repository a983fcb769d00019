//! Dormand–Prince 5(4) with the classic fourth-order continuous extension
//! and event location on the dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Largest step magnitude; 0 means unbounded.
    pub hmax: f64,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> OdeOptions {
        OdeOptions { rtol: tol, atol: tol, ..OdeOptions::default() }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-10, max_steps: 500_000, hmax: 0.0 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

impl Segment {
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }
}

/// Dense solution of one integration run, forward or backward in time.
#[derive(Debug, Clone)]
pub struct Solution {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    segments: Vec<Segment>,
    pub nfev: usize,
}

impl Solution {
    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn steps(&self) -> usize {
        self.segments.len()
    }

    /// Step boundaries, in integration order.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        m.push(self.t1);
        m
    }

    /// Dense-output evaluation; `t` is clamped to the integrated interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.segments.is_empty() {
            out.copy_from_slice(&self.y0);
            return;
        }
        let forward = self.t1 >= self.t0;
        let (lo, hi) = if forward { (self.t0, self.t1) } else { (self.t1, self.t0) };
        let t = t.clamp(lo, hi);
        if t == self.t1 {
            out.copy_from_slice(&self.y1);
            return;
        }
        // First segment whose far end lies beyond t in the direction of travel.
        let idx = self.segments.partition_point(|s| {
            let end = s.t0 + s.h;
            if forward {
                end <= t
            } else {
                end >= t
            }
        });
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        seg.eval_into(t, out);
    }
}

/// Outcome of an integration with an event function.
#[derive(Debug, Clone)]
pub struct EventHit {
    pub t: f64,
    pub y: Vec<f64>,
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir: f64, opts: &OdeOptions) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let sc: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let dnf = (0..n).map(|i| (f0[i] / sc[i]).powi(2)).sum::<f64>() / n as f64;
    let dny = (0..n).map(|i| (y0[i] / sc[i]).powi(2)).sum::<f64>() / n as f64;
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    if opts.hmax > 0.0 {
        h = h.min(opts.hmax);
    }
    let y1: Vec<f64> = (0..n).map(|i| y0[i] + dir * h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + dir * h, &y1, &mut f1)?;
    let der2 = ((0..n).map(|i| ((f1[i] - f0[i]) / sc[i]).powi(2)).sum::<f64>() / n as f64).sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    let mut h = (100.0 * h).min(h1);
    if opts.hmax > 0.0 {
        h = h.min(opts.hmax);
    }
    Ok(h)
}

/// Integrates y' = f(t, y) from t0 to t1 (either direction).
pub fn integrate<F>(f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<Solution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let (sol, _) = integrate_impl(f, t0, y0, t1, opts, None::<fn(f64, &[f64]) -> f64>)?;
    Ok(sol)
}

/// Integrates until the first sign change of `g(t, y)` (located on the dense
/// output to ~1e-13 in time) or until t1. A zero of g at t0 is ignored.
pub fn integrate_until<F, G>(
    f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
    g: G,
) -> Result<(Solution, Option<EventHit>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    G: FnMut(f64, &[f64]) -> f64,
{
    integrate_impl(f, t0, y0, t1, opts, Some(g))
}

fn integrate_impl<F, G>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
    mut event: Option<G>,
) -> Result<(Solution, Option<EventHit>)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    G: FnMut(f64, &[f64]) -> f64,
{
    let n = y0.len();
    let mut sol = Solution {
        t0,
        t1,
        y0: y0.to_vec(),
        y1: y0.to_vec(),
        segments: Vec::new(),
        nfev: 0,
    };
    if t1 == t0 || n == 0 {
        return Ok((sol, None));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integrator("non-finite initial state".into()));
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    f(t, &y, &mut k1)?;
    sol.nfev += 1;
    let mut h = initial_step(&mut f, t, &y, &k1, dir, opts)?.min(span);
    sol.nfev += 1;
    let mut g_prev = event.as_mut().map(|g| g(t, &y));
    let mut reject = false;
    let mut steps = 0usize;
    let hmin = 1e-14 * (t0.abs().max(t1.abs()).max(1.0));

    loop {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integrator(format!("step budget exhausted at t = {t}")));
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let hs = dir * h;

        for i in 0..n {
            ys[i] = y[i] + hs * A21 * k1[i];
        }
        f(t + C2 * hs, &ys, &mut k2)?;
        for i in 0..n {
            ys[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hs, &ys, &mut k3)?;
        for i in 0..n {
            ys[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hs, &ys, &mut k4)?;
        for i in 0..n {
            ys[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hs, &ys, &mut k5)?;
        for i in 0..n {
            ys[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let tnew = if last { t1 } else { t + hs };
        f(tnew, &ys, &mut k6)?;
        for i in 0..n {
            y1[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(tnew, &y1, &mut k7)?;
        sol.nfev += 6;

        let mut err = 0.0;
        for i in 0..n {
            let sk = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err += (e / sk).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            reject = true;
            if h < hmin {
                return Err(Error::Integrator(format!("non-finite derivative near t = {t}")));
            }
            continue;
        }
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, if reject { 1.0 } else { 5.0 });
        if err > 1.0 {
            reject = true;
            h *= fac.min(0.9);
            if h < hmin {
                return Err(Error::Integrator(format!("step size underflow at t = {t}")));
            }
            continue;
        }
        reject = false;

        let mut rcont: [Vec<f64>; 5] = Default::default();
        rcont[0] = y.clone();
        rcont[1] = (0..n).map(|i| y1[i] - y[i]).collect();
        rcont[2] = (0..n).map(|i| hs * k1[i] - rcont[1][i]).collect();
        rcont[3] = (0..n).map(|i| rcont[1][i] - hs * k7[i] - rcont[2][i]).collect();
        rcont[4] = (0..n)
            .map(|i| hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
            .collect();
        let seg = Segment { t0: t, h: hs, rcont };

        if let (Some(g), Some(gp)) = (event.as_mut(), g_prev) {
            let gn = g(tnew, &y1);
            if gp != 0.0 && (gn == 0.0 || gn.signum() != gp.signum()) {
                let te = locate_root(&seg, t, tnew, gp, gn, g);
                let mut ye = vec![0.0; n];
                seg.eval_into(te, &mut ye);
                let mut trimmed = seg;
                trimmed.h = hs; // interpolation stays on the full step
                sol.segments.push(trimmed);
                sol.t1 = te;
                sol.y1 = ye.clone();
                return Ok((sol, Some(EventHit { t: te, y: ye })));
            }
            g_prev = Some(if gn == 0.0 { gp } else { gn });
        }

        sol.segments.push(seg);
        t = tnew;
        y.copy_from_slice(&y1);
        k1.copy_from_slice(&k7);
        if last {
            break;
        }
        h *= fac;
        if opts.hmax > 0.0 {
            h = h.min(opts.hmax);
        }
    }
    sol.y1 = y;
    Ok((sol, None))
}

fn locate_root<G>(seg: &Segment, ta: f64, tb: f64, ga: f64, gb: f64, g: &mut G) -> f64
where
    G: FnMut(f64, &[f64]) -> f64,
{
    if gb == 0.0 {
        return tb;
    }
    let n = seg.rcont[0].len();
    let mut buf = vec![0.0; n];
    let (mut a, mut b, mut fa, mut fb) = (ta, tb, ga, gb);
    let mut side = 0i32;
    for _ in 0..200 {
        // Illinois variant of regula falsi.
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && (c - a) * (c - b) < 0.0 { c } else { 0.5 * (a + b) };
        seg.eval_into(c, &mut buf);
        let fc = g(c, &buf);
        if fc == 0.0 || (b - a).abs() < 1e-14 * (1.0 + c.abs()) {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_forward_and_backward() {
        let opts = OdeOptions::with_tol(1e-12);
        let sol = integrate(|_, y, dy| {
            dy[0] = -y[0];
            Ok(())
        }, 0.0, &[1.0], 3.0, &opts)
        .unwrap();
        assert!((sol.y1[0] - (-3.0f64).exp()).abs() < 1e-11);
        assert!((sol.eval(1.3)[0] - (-1.3f64).exp()).abs() < 1e-10);
        let back = integrate(|_, y, dy| {
            dy[0] = -y[0];
            Ok(())
        }, 3.0, &sol.y1, 0.0, &opts)
        .unwrap();
        assert!((back.y1[0] - 1.0).abs() < 1e-10);
        assert!((back.eval(2.0)[0] - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let opts = OdeOptions::with_tol(1e-11);
        let sol = integrate(|_, y, dy| {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }, 0.0, &[0.0, 1.0], 10.0, &opts)
        .unwrap();
        for k in 0..=100 {
            let t = 0.1 * k as f64;
            let y = sol.eval(t);
            assert!((y[0] - t.sin()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn event_location_is_tight() {
        let opts = OdeOptions::with_tol(1e-10);
        let (sol, hit) = integrate_until(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            5.0,
            &opts,
            |_, y| y[0],
        )
        .unwrap();
        let hit = hit.unwrap();
        assert!((hit.t - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        assert_eq!(sol.t1, hit.t);
    }

    #[test]
    fn rhs_failure_propagates() {
        let r = integrate(|t, _, _| {
            if t > 0.5 {
                Err(Error::Degenerate("boom".into()))
            } else {
                Ok(())
            }
        }, 0.0, &[1.0], 1.0, &OdeOptions::default());
        assert!(r.is_err());
    }
}
