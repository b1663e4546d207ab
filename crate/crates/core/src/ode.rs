//! Fixed-step RK4 for the delay systems used throughout the crate.
//!
//! Every arc is computed on a node grid shared with the arc it depends on, so
//! the delayed argument at RK4 stage points is read off that arc: node values
//! at step ends and cubic Hermite interpolation at step midpoints.

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Solution values on a node grid with per-step end slopes for Hermite
/// interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArc {
    dim: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
    // Per step: slope at the left end followed by slope at the right end.
    slopes: Vec<f64>,
}

impl DenseArc {
    pub fn constant(nodes: Vec<f64>, value: &[f64]) -> Self {
        let dim = value.len();
        let steps = nodes.len() - 1;
        DenseArc {
            dim,
            values: value.repeat(nodes.len()),
            slopes: vec![0.0; steps * 2 * dim],
            nodes,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.value(0)
    }

    pub fn end(&self) -> &[f64] {
        self.value(self.nodes.len() - 1)
    }

    /// Slopes `(left, right)` used on step `k`.
    pub fn step_slopes(&self, k: usize) -> (&[f64], &[f64]) {
        let base = k * 2 * self.dim;
        (
            &self.slopes[base..base + self.dim],
            &self.slopes[base + self.dim..base + 2 * self.dim],
        )
    }

    /// Hermite value at fraction `theta` of step `k`.
    pub fn interp_into(&self, k: usize, theta: f64, out: &mut [f64]) {
        let h = self.nodes[k + 1] - self.nodes[k];
        let (d0, d1) = self.step_slopes(k);
        let y0 = self.value(k);
        let y1 = self.value(k + 1);
        let t = theta;
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        for j in 0..self.dim {
            out[j] = h00 * y0[j] + h10 * h * d0[j] + h01 * y1[j] + h11 * h * d1[j];
        }
    }

    pub fn midpoint_into(&self, k: usize, out: &mut [f64]) {
        self.interp_into(k, 0.5, out)
    }

    /// Step containing `x`, preferring the later step at shared nodes.
    fn locate(&self, x: f64) -> (usize, f64) {
        let steps = self.steps();
        let idx = self.nodes.partition_point(|&b| b <= x);
        let k = idx.saturating_sub(1).min(steps - 1);
        let h = self.nodes[k + 1] - self.nodes[k];
        let theta = ((x - self.nodes[k]) / h).clamp(0.0, 1.0);
        (k, theta)
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let (k, theta) = self.locate(x);
        if theta == 0.0 {
            out.copy_from_slice(self.value(k));
        } else if theta == 1.0 {
            out.copy_from_slice(self.value(k + 1));
        } else {
            self.interp_into(k, theta, out);
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Index of the node equal to `x` (within rounding), if any.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let tol = 1e-12 * x.abs().max(1.0);
        let k = self.nodes.partition_point(|&b| b < x - tol);
        (k < self.nodes.len() && (self.nodes[k] - x).abs() <= tol).then_some(k)
    }
}

/// The delayed argument of an arc.
#[derive(Debug, Clone, Copy)]
pub enum Delayed<'a> {
    Const(&'a [f64]),
    Arc(&'a DenseArc),
}

/// Splits each interval of `breaks` into equal steps no longer than `step`.
/// With `strict`, every interval must be an integer multiple of `step`.
pub fn subdivide(breaks: &[f64], step: f64, strict: bool) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Schema(format!("step must be positive, got {step}")));
    }
    let mut nodes = vec![breaks[0]];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let ratio = len / step;
        if strict && (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::StepMisaligned { step, interval: len });
        }
        let m = ((ratio - 1e-9).ceil() as usize).max(1);
        for j in 1..m {
            nodes.push(w[0] + len * j as f64 / m as f64);
        }
        nodes.push(w[1]);
    }
    Ok(nodes)
}

/// Integrates `y' = a_k f(y, p) + b_k g(y, p)` over `nodes`, where `(a_k, b_k)`
/// are constant on step `k` and `p` is the delayed argument.
pub fn integrate_arc(
    sc: &Scenario,
    nodes: &[f64],
    coeffs: &[(f64, f64)],
    y0: &[f64],
    delayed: Delayed<'_>,
    bound: f64,
    context: &str,
) -> Result<DenseArc> {
    let n = y0.len();
    let steps = nodes.len() - 1;
    debug_assert_eq!(coeffs.len(), steps);
    if let Delayed::Arc(a) = delayed {
        debug_assert_eq!(a.nodes.len(), nodes.len());
    }
    let mut values = Vec::with_capacity(nodes.len() * n);
    let mut slopes = Vec::with_capacity(steps * 2 * n);
    values.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut scratch = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut p_mid = vec![0.0; n];
    let mut d_end = vec![0.0; n];
    for k in 0..steps {
        let h = nodes[k + 1] - nodes[k];
        let (a, b) = coeffs[k];
        let (p0, p1): (&[f64], &[f64]) = match delayed {
            Delayed::Const(c) => {
                p_mid.copy_from_slice(c);
                (c, c)
            }
            Delayed::Arc(arc) => {
                arc.midpoint_into(k, &mut p_mid);
                (arc.value(k), arc.value(k + 1))
            }
        };
        sc.rhs_into(a, b, &y, p0, &mut scratch, &mut k1)?;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        sc.rhs_into(a, b, &tmp, &p_mid, &mut scratch, &mut k2)?;
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        sc.rhs_into(a, b, &tmp, &p_mid, &mut scratch, &mut k3)?;
        for j in 0..n {
            tmp[j] = y[j] + h * k3[j];
        }
        sc.rhs_into(a, b, &tmp, p1, &mut scratch, &mut k4)?;
        for j in 0..n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let magnitude = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(magnitude <= bound) {
            return Err(Error::BlowUp {
                context: format!("{context} at {}", nodes[k + 1]),
                magnitude,
                bound,
            });
        }
        sc.rhs_into(a, b, &y, p1, &mut scratch, &mut d_end)?;
        slopes.extend_from_slice(&k1);
        slopes.extend_from_slice(&d_end);
        values.extend_from_slice(&y);
    }
    Ok(DenseArc {
        dim: n,
        nodes: nodes.to_vec(),
        values,
        slopes,
    })
}

/// Builds an arc from externally computed node values and slopes.
pub fn arc_from_parts(dim: usize, nodes: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> DenseArc {
    debug_assert_eq!(values.len(), nodes.len() * dim);
    debug_assert_eq!(slopes.len(), (nodes.len() - 1) * 2 * dim);
    DenseArc {
        dim,
        nodes,
        values,
        slopes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Target;

    fn linear(f: &str, g: &str) -> Scenario {
        Scenario::new(1, 1, 1.0, vec![1.0], vec![1.0], &[f], &[g], "0", Target::Free, 1.0).unwrap()
    }

    #[test]
    fn subdivide_counts() {
        let nodes = subdivide(&[0.0, 0.5, 2.5, 3.0], 0.5, true).unwrap();
        assert_eq!(nodes, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        assert!(matches!(
            subdivide(&[0.0, 0.3], 0.2, true),
            Err(Error::StepMisaligned { .. })
        ));
        assert_eq!(subdivide(&[0.0, 0.3], 0.2, false).unwrap().len(), 3);
    }

    #[test]
    fn exponential_growth_is_fourth_order() {
        let sc = linear("x1[0]", "0");
        let err = |m: usize| {
            let nodes: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
            let arc = integrate_arc(
                &sc,
                &nodes,
                &vec![(1.0, 0.0); m],
                &[1.0],
                Delayed::Const(&[1.0]),
                1e12,
                "t",
            )
            .unwrap();
            (arc.end()[0] - std::f64::consts::E).abs()
        };
        let ratio = err(10) / err(20);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }

    #[test]
    fn delayed_argument_from_previous_arc() {
        // y1' = 1 so y1(s) = 1 + s; y2' = y1 gives y2(1) = y2(0) + 1.5.
        let sc = linear("x2[0]", "0");
        let nodes: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let first = integrate_arc(&sc, &nodes, &[(1.0, 0.0); 8], &[1.0], Delayed::Const(&[1.0]), 1e12, "t").unwrap();
        assert!((first.end()[0] - 2.0).abs() < 1e-14);
        let second = integrate_arc(&sc, &nodes, &[(1.0, 0.0); 8], &[2.0], Delayed::Arc(&first), 1e12, "t").unwrap();
        assert!((second.end()[0] - 3.5).abs() < 1e-13);
        assert!((first.eval(0.3)[0] - 1.3).abs() < 1e-14);
    }

    #[test]
    fn blow_up_is_reported() {
        let sc = linear("x1[0]*x1[0]", "0");
        let nodes: Vec<f64> = (0..=100).map(|k| k as f64 / 50.0).collect();
        let r = integrate_arc(
            &sc,
            &nodes,
            &[(1.0, 0.0); 100],
            &[1.0],
            Delayed::Const(&[1.0]),
            1e6,
            "t",
        );
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }
}
