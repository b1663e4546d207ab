//! Trajectories of impulsive delay systems.
//!
//! Two independent constructions are provided. The main route maps the
//! impulsive control to reparameterized controls, integrates the `N` chained
//! ODEs in the clock `s`, and reads `x(t) = y_i(sigma(r))` back through the
//! time change. [`assemble_by_segments`] instead works in original time,
//! segment after segment, integrating the jump arcs `zeta^r_i` at every atom.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{position_tol, segment_measures, AttachedControlFamily, Measure};
use crate::ode::{integrate_arc, subdivide, Delayed, DenseArc};
use crate::reparam::{to_reparam, ReparamControls};
use crate::scenario::Scenario;
use crate::step::{merge_breaks, MultiStep, StepFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Integration step in the reparameterized clock.
    pub step: f64,
    /// Largest state magnitude before the run is aborted.
    pub bound: f64,
    /// Require the step to divide every breakpoint interval exactly.
    pub strict_alignment: bool,
    /// Number of uniform output samples on `[0, T]`.
    pub output_points: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            step: 1e-3,
            bound: 1e12,
            strict_alignment: false,
            output_points: 201,
        }
    }
}

/// Solution of the reparameterized system: one arc per segment on a shared
/// node grid over `[0, S]`.
#[derive(Debug, Clone)]
pub struct ReparamProcess {
    pub controls: ReparamControls,
    pub arcs: Vec<DenseArc>,
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    /// Piece of the controls active on each integration step.
    pub step_piece: Vec<usize>,
}

impl ReparamProcess {
    pub fn nodes(&self) -> &[f64] {
        self.arcs[0].nodes()
    }

    pub fn horizon(&self) -> f64 {
        self.controls.horizon()
    }

    /// `y_N(S)`, the endpoint `x(T)`.
    pub fn endpoint(&self) -> &[f64] {
        self.arcs.last().unwrap().end()
    }

    /// `y_i(s)` with `i` in `0..=N`; `y_0 = xi0` except `y_0(S) = x0`.
    pub fn y(&self, i: usize, s: f64) -> Vec<f64> {
        if i == 0 {
            if s >= self.horizon() {
                self.x0.clone()
            } else {
                self.xi0.clone()
            }
        } else {
            self.arcs[i - 1].eval(s)
        }
    }

    /// `(1 - sum alpha, alpha_i)` on every step for segment `i` (1-based).
    pub fn coefficients(&self, i: usize) -> Vec<(f64, f64)> {
        step_coefficients(&self.controls, &self.step_piece, i)
    }

    /// Largest defect `|y(k+1) - y(k) - int rhs|` over all steps, with the
    /// integral by Simpson's rule on the Hermite interpolant.
    pub fn ode_residual(&self, sc: &Scenario) -> Result<f64> {
        let n = sc.n;
        let mut worst = 0.0f64;
        let mut scratch = vec![0.0; n];
        let (mut r0, mut rm, mut r1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut ym, mut pm) = (vec![0.0; n], vec![0.0; n]);
        for i in 1..=sc.segments {
            let arc = &self.arcs[i - 1];
            let coeffs = self.coefficients(i);
            for (k, &(a, b)) in coeffs.iter().enumerate() {
                let h = arc.nodes()[k + 1] - arc.nodes()[k];
                let (p0, p1): (&[f64], &[f64]) = if i == 1 {
                    pm.copy_from_slice(&self.xi0);
                    (&self.xi0, &self.xi0)
                } else {
                    let prev = &self.arcs[i - 2];
                    prev.midpoint_into(k, &mut pm);
                    (prev.value(k), prev.value(k + 1))
                };
                arc.midpoint_into(k, &mut ym);
                sc.rhs_into(a, b, arc.value(k), p0, &mut scratch, &mut r0)?;
                sc.rhs_into(a, b, &ym, &pm, &mut scratch, &mut rm)?;
                sc.rhs_into(a, b, arc.value(k + 1), p1, &mut scratch, &mut r1)?;
                for j in 0..n {
                    let integral = h / 6.0 * (r0[j] + 4.0 * rm[j] + r1[j]);
                    let d = arc.value(k + 1)[j] - arc.value(k)[j] - integral;
                    worst = worst.max(d.abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Maps each step of `nodes` to the piece of `breaks` that contains it.
pub fn step_pieces(nodes: &[f64], breaks: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(nodes.len() - 1);
    let mut p = 0;
    for w in nodes.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        while p + 2 < breaks.len() && mid >= breaks[p + 1] {
            p += 1;
        }
        out.push(p);
    }
    out
}

pub(crate) fn step_coefficients(rc: &ReparamControls, step_piece: &[usize], i: usize) -> Vec<(f64, f64)> {
    let speeds = rc.speeds();
    let vals = rc.alpha().values();
    step_piece.iter().map(|&p| (speeds[p], vals[p][i - 1])).collect()
}

/// Integrates the reparameterized system for `i = 1..N` in order.
pub fn integrate_reparam(sc: &Scenario, rc: &ReparamControls, opts: &SimOptions) -> Result<ReparamProcess> {
    if rc.segments() != sc.segments {
        return Err(Error::DimensionMismatch(format!(
            "controls have {} components but N = {}",
            rc.segments(),
            sc.segments
        )));
    }
    let nodes = subdivide(rc.breaks(), opts.step, opts.strict_alignment)?;
    integrate_reparam_on(sc, rc, nodes, opts.bound)
}

/// Integrates on a caller-supplied grid that refines the control breakpoints.
pub fn integrate_reparam_on(
    sc: &Scenario,
    rc: &ReparamControls,
    nodes: Vec<f64>,
    bound: f64,
) -> Result<ReparamProcess> {
    let step_piece = step_pieces(&nodes, rc.breaks());
    let mut arcs: Vec<DenseArc> = Vec::with_capacity(sc.segments);
    for i in 1..=sc.segments {
        let coeffs = step_coefficients(rc, &step_piece, i);
        let (y0, delayed) = match arcs.last() {
            None => (sc.x0.clone(), Delayed::Const(&sc.xi0)),
            Some(prev) => (prev.end().to_vec(), Delayed::Arc(prev)),
        };
        let arc = integrate_arc(sc, &nodes, &coeffs, &y0, delayed, bound, &format!("segment {i}"))?;
        arcs.push(arc);
    }
    Ok(ReparamProcess {
        controls: rc.clone(),
        arcs,
        x0: sc.x0.clone(),
        xi0: sc.xi0.clone(),
        step_piece,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    /// True for the left limit `x(t-)` emitted just before a jump.
    pub left_limit: bool,
}

/// One jump arc `zeta^r_i` sampled on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpArc {
    pub r: f64,
    pub segment: usize,
    pub u: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
}

/// A jump of `x` at time `t`, executed by the listed arcs in order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpRecord {
    pub t: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    /// Indices into [`ExtendedTrajectory::arcs`].
    pub parts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtendedTrajectory {
    pub n: usize,
    pub delay: f64,
    pub horizon: f64,
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpRecord>,
    pub arcs: Vec<JumpArc>,
    pub endpoint: Vec<f64>,
}

impl ExtendedTrajectory {
    /// Right-continuous value at a sampled time.
    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        let tol = position_tol(self.horizon);
        self.samples
            .iter()
            .rev()
            .find(|s| !s.left_limit && (s.t - t).abs() <= tol)
            .map(|s| s.x.as_slice())
    }

    /// Largest `|x(t) - x(t-) - sum (zeta(1) - zeta(0))|` over jump records.
    pub fn jump_consistency(&self) -> f64 {
        let mut worst = 0.0f64;
        for rec in &self.jumps {
            for j in 0..self.n {
                let inc: f64 = rec
                    .parts
                    .iter()
                    .map(|&p| {
                        let z = &self.arcs[p].zeta;
                        z.last().unwrap()[j] - z[0][j]
                    })
                    .sum();
                worst = worst.max((rec.right[j] - rec.left[j] - inc).abs());
            }
        }
        worst
    }

    /// Sup-norm distance over samples; both trajectories must share the
    /// sample layout.
    pub fn sup_distance(&self, other: &ExtendedTrajectory) -> Result<f64> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::DimensionMismatch(format!(
                "sample counts differ: {} vs {}",
                self.samples.len(),
                other.samples.len()
            )));
        }
        let mut worst = 0.0f64;
        for (a, b) in self.samples.iter().zip(&other.samples) {
            if a.left_limit != b.left_limit || (a.t - b.t).abs() > 1e-9 * self.horizon.max(1.0) {
                return Err(Error::DimensionMismatch(format!(
                    "sample layouts differ near t = {}",
                    a.t
                )));
            }
            for (x, y) in a.x.iter().zip(&b.x) {
                worst = worst.max((x - y).abs());
            }
        }
        for (x, y) in self.endpoint.iter().zip(&other.endpoint) {
            worst = worst.max((x - y).abs());
        }
        Ok(worst)
    }

    /// CSV with columns `t, x[0..n), is_jump_left_limit`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.n {
            out.push_str(&format!(",x[{k}]"));
        }
        out.push_str(",is_jump_left_limit\n");
        for s in &self.samples {
            out.push_str(&format!("{:.17e}", s.t));
            for v in &s.x {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push_str(if s.left_limit { ",1\n" } else { ",0\n" });
        }
        out
    }

    /// CSV of the jump arcs with columns `r, i, s, zeta[0..n)`.
    pub fn arcs_csv(&self) -> String {
        let mut out = String::from("r,i,s");
        for k in 0..self.n {
            out.push_str(&format!(",zeta[{k}]"));
        }
        out.push('\n');
        for a in &self.arcs {
            for (u, z) in a.u.iter().zip(&a.zeta) {
                out.push_str(&format!("{:.17e},{},{u:.17e}", a.r, a.segment));
                for v in z {
                    out.push_str(&format!(",{v:.17e}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Uniform output times on `[-h, T]` merged with the given jump times and the
/// segment boundaries.
pub fn sample_times(sc: &Scenario, jump_times: &[f64], output_points: usize) -> Vec<f64> {
    let horizon = sc.horizon();
    let m = output_points.max(2) - 1;
    let dt = horizon / m as f64;
    let mut times = vec![-sc.delay];
    let neg = (sc.delay / dt).floor() as i64;
    for j in (1..=neg).rev() {
        let t = -(j as f64) * dt;
        if t > -sc.delay {
            times.push(t);
        }
    }
    times.extend((0..m).map(|k| k as f64 * dt));
    times.push(horizon);
    let bounds: Vec<f64> = (1..sc.segments).map(|i| i as f64 * sc.delay).collect();
    let times = merge_breaks(&times, &bounds);
    merge_breaks(&times, jump_times)
}

/// Where a time falls: `(segment, r)` with `r` in `[0, h)`, except `t = T`
/// which maps to `(N, h)`.
fn locate_time(sc: &Scenario, t: f64) -> (usize, f64) {
    let h = sc.delay;
    let tol = position_tol(sc.horizon());
    if (t - sc.horizon()).abs() <= tol {
        return (sc.segments, h);
    }
    let k = (t / h).round();
    if (t - k * h).abs() <= tol {
        return (k as usize + 1, 0.0);
    }
    let i = ((t / h).floor() as usize).min(sc.segments - 1);
    (i + 1, t - i as f64 * h)
}

/// Builds the samples given a right-continuous evaluator and the jump records.
/// `start` is the value at `t = 0`; `pre`, when given, fills `[-h, 0)`.
fn build_samples(
    sc: &Scenario,
    jumps: &[JumpRecord],
    output_points: usize,
    start: &[f64],
    pre: Option<&[f64]>,
    mut value: impl FnMut(usize, f64) -> Vec<f64>,
) -> Vec<Sample> {
    let jump_times: Vec<f64> = jumps.iter().map(|j| j.t).collect();
    let tol = position_tol(sc.horizon());
    let mut samples = Vec::new();
    for t in sample_times(sc, &jump_times, output_points) {
        if t < -tol {
            if let Some(pre) = pre {
                samples.push(Sample {
                    t,
                    x: pre.to_vec(),
                    left_limit: false,
                });
            }
            continue;
        }
        let rec = jumps.iter().find(|j| (j.t - t).abs() <= tol);
        if let Some(rec) = rec {
            samples.push(Sample {
                t: rec.t,
                x: rec.left.clone(),
                left_limit: true,
            });
            samples.push(Sample {
                t: rec.t,
                x: rec.right.clone(),
                left_limit: false,
            });
        } else if t.abs() <= tol {
            samples.push(Sample {
                t: 0.0,
                x: start.to_vec(),
                left_limit: false,
            });
        } else {
            let (i, r) = locate_time(sc, t);
            samples.push(Sample {
                t,
                x: value(i, r),
                left_limit: false,
            });
        }
    }
    samples
}

/// Orders jump parts so that the `r = h` arc of segment `i` precedes the
/// `r = 0` arc of segment `i + 1` at the shared grid time.
fn part_time(sc: &Scenario, r: f64, segment: usize) -> f64 {
    (segment - 1) as f64 * sc.delay + r
}

/// Reads `x(t) = y_i(sigma(r))` and the jump arcs off a reparameterized solution.
pub fn assemble_extended(rp: &ReparamProcess, sc: &Scenario, output_points: usize) -> Result<ExtendedTrajectory> {
    assemble_arcs(&rp.arcs, &rp.controls, sc, &sc.x0, Some(&sc.xi0), output_points)
}

/// Maps arcs on `[0, S]` (one per segment, on a grid refining the control
/// breakpoints) to a path in original time through the time change of `rc`.
pub fn assemble_arcs(
    arcs_s: &[DenseArc],
    rc: &ReparamControls,
    sc: &Scenario,
    start: &[f64],
    pre: Option<&[f64]>,
    output_points: usize,
) -> Result<ExtendedTrajectory> {
    let h = sc.delay;
    let big_n = sc.segments;
    let psi_vals = rc.psi_values(h);
    let psi = rc.psi(h)?;
    let sigma = psi.right_inverse();
    let speeds = rc.speeds();
    let breaks = rc.breaks();
    let vals = rc.alpha().values();
    let nodes = arcs_s[0].nodes();
    let tol = position_tol(sc.horizon());

    // Jump runs of the clock: (r, s_a, s_b, masses).
    let mut runs: Vec<(f64, f64, f64, Vec<f64>)> = Vec::new();
    let mut k = 0;
    while k < speeds.len() {
        if speeds[k] == 0.0 {
            let start = k;
            let mut masses = vec![0.0; big_n];
            while k < speeds.len() && speeds[k] == 0.0 {
                for (m, a) in masses.iter_mut().zip(&vals[k]) {
                    *m += a * (breaks[k + 1] - breaks[k]);
                }
                k += 1;
            }
            let mut r = psi_vals[start];
            if r.abs() <= tol {
                r = 0.0;
            } else if (r - h).abs() <= tol {
                r = h;
            }
            runs.push((r, breaks[start], breaks[k], masses));
        } else {
            k += 1;
        }
    }

    let mut arcs = Vec::new();
    // (time, arc index, left, right)
    let mut parts: Vec<(f64, usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for (r, sa, sb, masses) in &runs {
        let ka = nodes.partition_point(|&x| x < sa - 1e-12 * sa.abs().max(1.0));
        let kb = nodes.partition_point(|&x| x <= sb + 1e-12 * sb.abs().max(1.0));
        let len = sb - sa;
        for i in 1..=big_n {
            let arc = &arcs_s[i - 1];
            let u: Vec<f64> = (ka..kb).map(|j| ((nodes[j] - sa) / len).clamp(0.0, 1.0)).collect();
            let zeta: Vec<Vec<f64>> = (ka..kb).map(|j| arc.value(j).to_vec()).collect();
            let left = zeta[0].clone();
            let right = zeta.last().unwrap().clone();
            arcs.push(JumpArc {
                r: *r,
                segment: i,
                u,
                zeta,
            });
            if masses[i - 1] > 0.0 {
                parts.push((part_time(sc, *r, i), arcs.len() - 1, left, right));
            }
        }
    }
    let jumps = group_parts(sc, parts, &arcs);

    let samples = build_samples(sc, &jumps, output_points, start, pre, |i, r| {
        let s = if r == 0.0 {
            sigma.right_limit(0.0)
        } else {
            sigma.eval(r)
        };
        arcs_s[i - 1].eval(s)
    });
    Ok(ExtendedTrajectory {
        n: sc.n,
        delay: h,
        horizon: sc.horizon(),
        samples,
        jumps,
        arcs,
        endpoint: arcs_s[big_n - 1].end().to_vec(),
    })
}

fn group_parts(sc: &Scenario, mut parts: Vec<(f64, usize, Vec<f64>, Vec<f64>)>, arcs: &[JumpArc]) -> Vec<JumpRecord> {
    let tol = position_tol(sc.horizon());
    // Stable order: by time, then r = h arcs (earlier segment) first.
    parts.sort_by(|a, b| a.0.total_cmp(&b.0).then(arcs[a.1].segment.cmp(&arcs[b.1].segment)));
    let mut jumps: Vec<JumpRecord> = Vec::new();
    for (t, idx, left, right) in parts {
        match jumps.last_mut() {
            Some(rec) if (rec.t - t).abs() <= tol => {
                rec.parts.push(idx);
                rec.right = right;
            }
            _ => jumps.push(JumpRecord {
                t,
                left,
                right,
                parts: vec![idx],
            }),
        }
    }
    for rec in jumps.iter_mut() {
        if rec.t.abs() <= tol {
            rec.t = 0.0;
        }
    }
    jumps
}

/// `to_reparam`, then `integrate_reparam`, then `assemble_extended`.
pub fn simulate_extended(
    sc: &Scenario,
    mu: &Measure,
    family: &AttachedControlFamily,
    opts: &SimOptions,
) -> Result<ExtendedTrajectory> {
    let rc = to_reparam(mu, family, sc)?;
    let rp = integrate_reparam(sc, &rc, opts)?;
    assemble_extended(&rp, sc, opts.output_points)
}

/// Solves the jump system `zeta_i' = w_i g(zeta_i, zeta_{i-1})` on `[0, 1]`
/// for `i = 1..N`. `init[0]` is the constant `zeta_0`, `init[i]` the initial
/// value of `zeta_i`.
pub fn integrate_jump(sc: &Scenario, init: &[Vec<f64>], w: &MultiStep, opts: &SimOptions) -> Result<Vec<DenseArc>> {
    if init.len() != sc.segments + 1 || w.dim() != sc.segments {
        return Err(Error::DimensionMismatch(format!(
            "jump system needs N + 1 = {} initial values and N controls",
            sc.segments + 1
        )));
    }
    let nodes = jump_nodes(w, opts.step);
    let steps = step_pieces(&nodes, w.breaks());
    let mut arcs: Vec<DenseArc> = Vec::with_capacity(sc.segments);
    for i in 1..=sc.segments {
        let coeffs: Vec<(f64, f64)> = steps.iter().map(|&p| (0.0, w.values()[p][i - 1])).collect();
        let delayed = match arcs.last() {
            None => Delayed::Const(&init[0]),
            Some(prev) => Delayed::Arc(prev),
        };
        let arc = integrate_arc(
            sc,
            &nodes,
            &coeffs,
            &init[i],
            delayed,
            opts.bound,
            &format!("jump arc {i}"),
        )?;
        arcs.push(arc);
    }
    Ok(arcs)
}

/// Grid on `[0, 1]` whose spacing matches `step` in the reparameterized clock,
/// where the unit interval is stretched by the total jump mass.
fn jump_nodes(w: &MultiStep, step: f64) -> Vec<f64> {
    let mass: f64 = w.integrals().iter().sum();
    let mut nodes = vec![0.0];
    for (a, b, _) in w.pieces() {
        let m = (((b - a) * mass / step - 1e-9).ceil() as usize).max(1);
        for j in 1..=m {
            nodes.push(if j == m { b } else { a + (b - a) * j as f64 / m as f64 });
        }
    }
    nodes
}

enum Block {
    Flow {
        r0: f64,
        r1: f64,
        nodes: Vec<f64>,
        rates: Vec<f64>,
    },
    Jump {
        r: f64,
        nodes: Vec<f64>,
        w: MultiStep,
    },
}

/// Builds the trajectory in original time, segment by segment: between atoms
/// `x' = f + g u_i`, and at each atom position `r` the jump arcs of `w^r`
/// started from the left limits.
pub fn assemble_by_segments(
    sc: &Scenario,
    mu: &Measure,
    family: &AttachedControlFamily,
    opts: &SimOptions,
) -> Result<ExtendedTrajectory> {
    let h = sc.delay;
    let big_n = sc.segments;
    let segs = segment_measures(mu, family, sc)?;
    let mut grid = vec![0.0, h];
    for m in &segs {
        grid = merge_breaks(&grid, m.density().breaks());
        let at: Vec<f64> = m.atoms().iter().map(|a| a.0).collect();
        grid = merge_breaks(&grid, &at);
    }
    let jump_block = |r: f64| -> Option<Block> {
        let total: f64 = segs.iter().map(|m| m.atom_at(r)).sum();
        if total <= 0.0 {
            return None;
        }
        let w = family.get(r)?.clone();
        Some(Block::Jump {
            r,
            nodes: jump_nodes(&w, opts.step),
            w,
        })
    };
    let mut blocks = Vec::new();
    blocks.extend(jump_block(0.0));
    for win in grid.windows(2) {
        let (r0, r1) = (win[0], win[1]);
        let mid = 0.5 * (r0 + r1);
        let rates: Vec<f64> = segs.iter().map(|m| m.density().eval(mid)).collect();
        let speed = 1.0 + rates.iter().sum::<f64>();
        let m = ((((r1 - r0) * speed) / opts.step - 1e-9).ceil() as usize).max(1);
        let nodes = (0..=m)
            .map(|j| {
                if j == m {
                    r1
                } else {
                    r0 + (r1 - r0) * j as f64 / m as f64
                }
            })
            .collect();
        blocks.push(Block::Flow { r0, r1, nodes, rates });
        blocks.extend(jump_block(r1));
    }

    // arcs_by_segment[i][b]
    let mut by_segment: Vec<Vec<DenseArc>> = Vec::with_capacity(big_n);
    for i in 1..=big_n {
        let mut state = match by_segment.last() {
            None => sc.x0.clone(),
            Some(prev) => prev.last().unwrap().end().to_vec(),
        };
        let mut arcs_i = Vec::with_capacity(blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            let delayed = match by_segment.last() {
                None => Delayed::Const(&sc.xi0),
                Some(prev) => Delayed::Arc(&prev[b]),
            };
            let (nodes, coeffs): (&[f64], Vec<(f64, f64)>) = match block {
                Block::Flow { nodes, rates, .. } => (nodes, vec![(1.0, rates[i - 1]); nodes.len() - 1]),
                Block::Jump { nodes, w, .. } => {
                    let steps = step_pieces(nodes, w.breaks());
                    (nodes, steps.iter().map(|&p| (0.0, w.values()[p][i - 1])).collect())
                }
            };
            let arc = integrate_arc(sc, nodes, &coeffs, &state, delayed, opts.bound, &format!("segment {i}"))?;
            state = arc.end().to_vec();
            arcs_i.push(arc);
        }
        by_segment.push(arcs_i);
    }

    let mut arcs = Vec::new();
    let mut parts = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        if let Block::Jump { r, nodes, .. } = block {
            for i in 1..=big_n {
                let arc = &by_segment[i - 1][b];
                let zeta: Vec<Vec<f64>> = (0..nodes.len()).map(|j| arc.value(j).to_vec()).collect();
                arcs.push(JumpArc {
                    r: *r,
                    segment: i,
                    u: nodes.clone(),
                    zeta,
                });
                if segs[i - 1].atom_at(*r) > 0.0 {
                    parts.push((
                        part_time(sc, *r, i),
                        arcs.len() - 1,
                        arc.start().to_vec(),
                        arc.end().to_vec(),
                    ));
                }
            }
        }
    }
    let jumps = group_parts(sc, parts, &arcs);

    let samples = build_samples(sc, &jumps, opts.output_points, &sc.x0, Some(&sc.xi0), |i, r| {
        let arcs_i = &by_segment[i - 1];
        if r >= h {
            return arcs_i.last().unwrap().end().to_vec();
        }
        for (b, block) in blocks.iter().enumerate() {
            if let Block::Flow { r0, r1, .. } = block {
                if r >= *r0 && r < *r1 {
                    return arcs_i[b].eval(r);
                }
            }
        }
        arcs_i.last().unwrap().end().to_vec()
    });
    Ok(ExtendedTrajectory {
        n: sc.n,
        delay: h,
        horizon: sc.horizon(),
        samples,
        jumps,
        arcs,
        endpoint: by_segment.last().unwrap().last().unwrap().end().to_vec(),
    })
}

/// Strict-sense solution of `x' = f + g u` by the method of steps.
pub fn simulate_strict(sc: &Scenario, u: &StepFunction, opts: &SimOptions) -> Result<ExtendedTrajectory> {
    let mu = Measure::new(sc.horizon(), u.clone(), Vec::new())?;
    assemble_by_segments(sc, &mu, &AttachedControlFamily::new(sc.segments), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Target;
    use std::f64::consts::E;

    fn example1() -> Scenario {
        Scenario::new(
            1,
            2,
            1.0,
            vec![1.0],
            vec![1.0],
            &["0"],
            &["x1[0]*x2[0]"],
            "-x1[0]",
            Target::Free,
            2.0,
        )
        .unwrap()
    }

    fn family(w1: [f64; 2], w2: [f64; 2]) -> (Measure, AttachedControlFamily) {
        let mu = Measure::from_parts(2.0, &[], &[(0.5, 1.0), (1.5, 1.0)]).unwrap();
        let mut fam = AttachedControlFamily::new(2);
        fam.insert(0.5, MultiStep::uniform(0.0, 1.0, &[w1.to_vec(), w2.to_vec()]).unwrap())
            .unwrap();
        (mu, fam)
    }

    #[test]
    fn example_first_family() {
        let sc = example1();
        let (mu, fam) = family([0.0, 2.0], [2.0, 0.0]);
        let traj = simulate_extended(&sc, &mu, &fam, &SimOptions::default()).unwrap();
        assert!((traj.endpoint[0] - E * E).abs() < 1e-6);
        assert!((traj.value_at(0.25).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((traj.value_at(1.0).unwrap()[0] - E).abs() < 1e-6);
        assert!((traj.value_at(1.75).unwrap()[0] - E * E).abs() < 1e-6);
        assert_eq!(traj.jumps.len(), 2);
        assert!(traj.jump_consistency() < 1e-12);
    }

    #[test]
    fn example_tilde_family() {
        let sc = example1();
        let (mu, fam) = family([2.0, 0.0], [0.0, 2.0]);
        let traj = simulate_extended(&sc, &mu, &fam, &SimOptions::default()).unwrap();
        assert!((traj.endpoint[0] - (1.0 + E).exp()).abs() < 1e-6);
        assert!((traj.value_at(1.0).unwrap()[0] - E).abs() < 1e-6);
    }

    #[test]
    fn both_constructions_agree() {
        let sc = example1();
        let (mu, fam) = family([0.5, 1.5], [1.5, 0.5]);
        let opts = SimOptions::default();
        let a = simulate_extended(&sc, &mu, &fam, &opts).unwrap();
        let b = assemble_by_segments(&sc, &mu, &fam, &opts).unwrap();
        assert!(a.sup_distance(&b).unwrap() < 1e-9);
        assert_eq!(a.arcs.len(), b.arcs.len());
    }

    #[test]
    fn jump_arcs_of_first_family() {
        let sc = example1();
        let w = MultiStep::uniform(0.0, 1.0, &[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let arcs = integrate_jump(&sc, &[vec![1.0], vec![1.0], vec![E]], &w, &SimOptions::default()).unwrap();
        assert!((arcs[0].end()[0] - E).abs() < 1e-9);
        assert!((arcs[1].end()[0] - E * E).abs() < 1e-9);
        let tilde = MultiStep::uniform(0.0, 1.0, &[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let arcs = integrate_jump(&sc, &[vec![1.0], vec![1.0], vec![E]], &tilde, &SimOptions::default()).unwrap();
        assert!((arcs[1].end()[0] - (1.0 + E).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_control_is_constant() {
        let sc = example1();
        let traj = simulate_extended(
            &sc,
            &Measure::zero(2.0),
            &AttachedControlFamily::new(2),
            &SimOptions::default(),
        )
        .unwrap();
        assert!(traj.samples.iter().all(|s| (s.x[0] - 1.0).abs() < 1e-14));
        assert!(traj.jumps.is_empty());
    }

    #[test]
    fn strict_alignment_is_enforced() {
        let sc = example1();
        let rc = ReparamControls::zero(1.0, 2);
        let opts = SimOptions {
            step: 0.3,
            strict_alignment: true,
            ..SimOptions::default()
        };
        assert!(matches!(
            integrate_reparam(&sc, &rc, &opts),
            Err(Error::StepMisaligned { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let sc = example1();
        let (mu, fam) = family([0.0, 2.0], [2.0, 0.0]);
        let opts = SimOptions {
            output_points: 5,
            ..SimOptions::default()
        };
        let traj = simulate_extended(&sc, &mu, &fam, &opts).unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("t,x[0],is_jump_left_limit\n"));
        assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 2);
        assert!(traj.arcs_csv().starts_with("r,i,s,zeta[0]\n"));
    }
}
