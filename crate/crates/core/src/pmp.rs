//! Necessary conditions in reparameterized form: the costate system, the
//! multiplier fit and the certificate of the maximum principle.
//!
//! The costate `q_1..q_N` solves, backwards on the grid of the process,
//!
//! ```text
//! -q_i' = (1 - sum a) [q_i f_x1(y_i, y_{i-1}) + q_{i+1} f_x2(y_{i+1}, y_i)]
//!         + a_i q_i g_x1(y_i, y_{i-1}) + a_{i+1} q_{i+1} g_x2(y_{i+1}, y_i)
//! ```
//!
//! with `q_N(S) = -lambda grad Psi(y_N(S)) - nu`, `q_{N+1} = 0` and
//! `q_i(S) = q_{i+1}(0)`. The costate `p` of the impulsive problem is read
//! off through the same time change as the state.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Slot;
use crate::ode::{arc_from_parts, DenseArc};
use crate::reparam::ReparamControls;
use crate::scenario::{Scenario, Target};
use crate::simulate::{assemble_arcs, ExtendedTrajectory, ReparamProcess};

/// Threshold above which a control component counts as active.
pub const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub nontriviality: f64,
    pub integral: f64,
    pub inequality: f64,
    pub support: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            nontriviality: 1e-8,
            integral: 1e-5,
            inequality: 1e-6,
            support: 1e-5,
        }
    }
}

/// Costate arcs `q_1..q_N` on the node grid of the process.
#[derive(Debug, Clone)]
pub struct Costate {
    pub arcs: Vec<DenseArc>,
    pub lambda: f64,
    pub nu: Vec<f64>,
}

impl Costate {
    /// `q_N(S)`, equal to `p(T)`.
    pub fn terminal(&self) -> &[f64] {
        self.arcs.last().unwrap().end()
    }

    /// `max |q|` over all nodes.
    pub fn sup_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for arc in &self.arcs {
            for k in 0..arc.nodes().len() {
                m = arc.value(k).iter().fold(m, |m, v| m.max(v.abs()));
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub c: f64,
    pub d: f64,
    pub nu: Vec<f64>,
    /// Multipliers that had no defining relation and were set to zero.
    pub underdetermined: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right-hand side `q_i'` of the costate system at one point.
#[allow(clippy::too_many_arguments)]
fn costate_rhs(
    sc: &Scenario,
    speed: f64,
    a_i: f64,
    a_next: f64,
    q: &[f64],
    q_next: Option<&[f64]>,
    y: &[f64],
    y_prev: &[f64],
    y_next: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0.0);
    sc.f.add_vjp(Slot::Current, q, y, y_prev, speed, out)?;
    sc.g.add_vjp(Slot::Current, q, y, y_prev, a_i, out)?;
    if let (Some(qn), Some(yn)) = (q_next, y_next) {
        sc.f.add_vjp(Slot::Delayed, qn, yn, y, speed, out)?;
        sc.g.add_vjp(Slot::Delayed, qn, yn, y, a_next, out)?;
    }
    out.iter_mut().for_each(|v| *v = -*v);
    Ok(())
}

/// Point values of the state arcs at a node or step midpoint.
struct StatePoint {
    // ys[0] is y_0, then y_1..y_N.
    ys: Vec<Vec<f64>>,
}

fn state_at(rp: &ReparamProcess, k: usize, where_: Where) -> StatePoint {
    let n = rp.x0.len();
    let mut ys = vec![rp.xi0.clone()];
    for arc in &rp.arcs {
        let v = match where_ {
            Where::Left => arc.value(k).to_vec(),
            Where::Right => arc.value(k + 1).to_vec(),
            Where::Mid => {
                let mut out = vec![0.0; n];
                arc.midpoint_into(k, &mut out);
                out
            }
        };
        ys.push(v);
    }
    StatePoint { ys }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Where {
    Left,
    Mid,
    Right,
}

/// Integrates the costate backwards from `q_N(S) = -lambda grad Psi - nu`.
pub fn integrate_costate(rp: &ReparamProcess, sc: &Scenario, lambda: f64, nu: &[f64], bound: f64) -> Result<Costate> {
    let n = sc.n;
    let big_n = sc.segments;
    if nu.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "nu has {} components but n = {n}",
            nu.len()
        )));
    }
    let nodes = rp.nodes().to_vec();
    let steps = nodes.len() - 1;
    let alpha = rp.controls.alpha().values();
    let speeds = rp.controls.speeds();
    // States at left, mid and right of every step, computed once.
    let points: Vec<[StatePoint; 3]> = (0..steps)
        .map(|k| {
            [
                state_at(rp, k, Where::Left),
                state_at(rp, k, Where::Mid),
                state_at(rp, k, Where::Right),
            ]
        })
        .collect();
    let grad = sc.psi.gradient(rp.endpoint())?;
    let mut terminal: Vec<f64> = grad.iter().zip(nu).map(|(g, v)| -lambda * g - v).collect();
    let mut arcs_rev: Vec<DenseArc> = Vec::with_capacity(big_n);
    let mut tmp = vec![0.0; n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut qn_mid = vec![0.0; n];
    for i in (1..=big_n).rev() {
        let next = arcs_rev.last();
        let mut values = vec![0.0; nodes.len() * n];
        let mut slopes = vec![0.0; steps * 2 * n];
        values[steps * n..].copy_from_slice(&terminal);
        let mut q = terminal.clone();
        for k in (0..steps).rev() {
            let h = nodes[k + 1] - nodes[k];
            let piece = rp.step_piece[k];
            let speed = speeds[piece];
            let a_i = alpha[piece][i - 1];
            let a_next = if i < big_n { alpha[piece][i] } else { 0.0 };
            let [pl, pm, pr] = &points[k];
            let y_next = |p: &'_ StatePoint| -> Option<Vec<f64>> { (i < big_n).then(|| p.ys[i + 1].clone()) };
            let (yn_l, yn_m, yn_r) = (y_next(pl), y_next(pm), y_next(pr));
            let (qn_l, qn_r) = match next {
                Some(a) => {
                    a.midpoint_into(k, &mut qn_mid);
                    (Some(a.value(k)), Some(a.value(k + 1)))
                }
                None => (None, None),
            };
            let qn_m = next.map(|_| qn_mid.as_slice());
            let eval = |qv: &[f64],
                        qn: Option<&[f64]>,
                        p: &StatePoint,
                        yn: &Option<Vec<f64>>,
                        out: &mut [f64]|
             -> Result<()> {
                costate_rhs(
                    sc,
                    speed,
                    a_i,
                    a_next,
                    qv,
                    qn,
                    &p.ys[i],
                    &p.ys[i - 1],
                    yn.as_deref(),
                    out,
                )
            };
            eval(&q, qn_r, pr, &yn_r, &mut k1)?;
            for j in 0..n {
                tmp[j] = q[j] - 0.5 * h * k1[j];
            }
            eval(&tmp, qn_m, pm, &yn_m, &mut k2)?;
            for j in 0..n {
                tmp[j] = q[j] - 0.5 * h * k2[j];
            }
            eval(&tmp, qn_m, pm, &yn_m, &mut k3)?;
            for j in 0..n {
                tmp[j] = q[j] - h * k3[j];
            }
            eval(&tmp, qn_l, pl, &yn_l, &mut k4)?;
            for j in 0..n {
                q[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            let magnitude = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(magnitude <= bound) {
                return Err(Error::BlowUp {
                    context: format!("costate {i} at {}", nodes[k]),
                    magnitude,
                    bound,
                });
            }
            eval(&q, qn_l, pl, &yn_l, &mut tmp)?;
            values[k * n..(k + 1) * n].copy_from_slice(&q);
            slopes[k * 2 * n..k * 2 * n + n].copy_from_slice(&tmp);
            slopes[k * 2 * n + n..(k + 1) * 2 * n].copy_from_slice(&k1);
        }
        terminal = q;
        arcs_rev.push(arc_from_parts(n, nodes.clone(), values, slopes));
    }
    arcs_rev.reverse();
    Ok(Costate {
        arcs: arcs_rev,
        lambda,
        nu: nu.to_vec(),
    })
}

/// `H = sum_j q_j . [(1 - sum a) f(y_j, y_{j-1}) + a_j g(y_j, y_{j-1})]`,
/// with `ys[0] = y_0` and `qs`, `a` indexed by segment.
pub fn hamiltonian(ys: &[Vec<f64>], qs: &[Vec<f64>], a: &[f64], sc: &Scenario) -> Result<f64> {
    let speed = 1.0 - a.iter().sum::<f64>();
    let mut h = 0.0;
    for j in 0..qs.len() {
        let f = sc.f.eval(&ys[j + 1], &ys[j])?;
        let g = sc.g.eval(&ys[j + 1], &ys[j])?;
        h += speed * dot(&qs[j], &f) + a[j] * dot(&qs[j], &g);
    }
    Ok(h)
}

/// Products `q_j . f_j` and `q_j . g_j` at one sample point.
#[derive(Debug, Clone)]
pub(crate) struct Products {
    pub s: f64,
    pub qf: Vec<f64>,
    pub qg: Vec<f64>,
}

/// Left, mid and right products for every step of the grid.
pub(crate) fn step_products(rp: &ReparamProcess, costate: &Costate, sc: &Scenario) -> Result<Vec<[Products; 3]>> {
    let n = sc.n;
    let nodes = rp.nodes();
    let steps = nodes.len() - 1;
    let mut out = Vec::with_capacity(steps);
    let mut qm = vec![0.0; n];
    for k in 0..steps {
        let mut triple = Vec::with_capacity(3);
        for (where_, s) in [
            (Where::Left, nodes[k]),
            (Where::Mid, 0.5 * (nodes[k] + nodes[k + 1])),
            (Where::Right, nodes[k + 1]),
        ] {
            let st = state_at(rp, k, where_);
            let mut qf = Vec::with_capacity(sc.segments);
            let mut qg = Vec::with_capacity(sc.segments);
            for (j, arc) in costate.arcs.iter().enumerate() {
                let q: &[f64] = match where_ {
                    Where::Left => arc.value(k),
                    Where::Right => arc.value(k + 1),
                    Where::Mid => {
                        arc.midpoint_into(k, &mut qm);
                        &qm
                    }
                };
                qf.push(dot(q, &sc.f.eval(&st.ys[j + 1], &st.ys[j])?));
                qg.push(dot(q, &sc.g.eval(&st.ys[j + 1], &st.ys[j])?));
            }
            triple.push(Products { s, qf, qg });
        }
        let [a, b, c]: [Products; 3] = triple.try_into().unwrap();
        out.push([a, b, c]);
    }
    Ok(out)
}

/// Per-step relations of the multiplier fit: weights of the `c` relation
/// (`sum q f = c` where `sum a < 1`) and of the `d` relations
/// (`q_i g_i = d` where `a_i > 0`).
fn active_sets(rc: &ReparamControls, piece: usize) -> (bool, Vec<bool>) {
    let v = &rc.alpha().values()[piece];
    let free = rc.speeds()[piece] > 0.0;
    (free, v.iter().map(|&a| a > ACTIVE_TOL).collect())
}

/// Least-squares `c` and `d` for a fixed costate. `d` is clipped at zero and
/// forced to zero when the budget is slack.
pub fn estimate_multipliers(rp: &ReparamProcess, costate: &Costate, sc: &Scenario) -> Result<Multipliers> {
    let prods = step_products(rp, costate, sc)?;
    let nodes = rp.nodes();
    let (mut c_num, mut c_den, mut d_num, mut d_den) = (0.0, 0.0, 0.0, 0.0);
    for (k, tr) in prods.iter().enumerate() {
        let w = nodes[k + 1] - nodes[k];
        let (free, act) = active_sets(&rp.controls, rp.step_piece[k]);
        for (p, wt) in tr.iter().zip([1.0, 4.0, 1.0]) {
            if free {
                c_num += wt * w * p.qf.iter().sum::<f64>();
                c_den += wt * w;
            }
            for (i, &on) in act.iter().enumerate() {
                if on {
                    d_num += wt * w * p.qg[i];
                    d_den += wt * w;
                }
            }
        }
    }
    let mut underdetermined = Vec::new();
    let c = if c_den > 0.0 {
        c_num / c_den
    } else {
        underdetermined.push("c".to_string());
        0.0
    };
    let slack = budget_slack(rp, sc);
    let d = if d_den > 0.0 {
        if slack > 1e-8 * sc.budget.max(1.0) {
            0.0
        } else {
            (d_num / d_den).max(0.0)
        }
    } else {
        underdetermined.push("d".to_string());
        0.0
    };
    Ok(Multipliers {
        lambda: costate.lambda,
        c,
        d,
        nu: costate.nu.clone(),
        underdetermined,
    })
}

/// `K - |mu|`, infinite for an unbounded budget.
fn budget_slack(rp: &ReparamProcess, sc: &Scenario) -> f64 {
    sc.budget - rp.controls.total_mass()
}

/// Directions spanning the normal cone of the target at `x`, each with a flag
/// telling whether its coefficient must be nonnegative.
fn cone_basis(target: &Target, x: &[f64], active_tol: f64) -> Vec<(Vec<f64>, bool)> {
    let n = x.len();
    let unit = |k: usize, s: f64| {
        let mut e = vec![0.0; n];
        e[k] = s;
        e
    };
    match target {
        Target::Free => vec![],
        Target::Point(_) => (0..n).map(|k| (unit(k, 1.0), false)).collect(),
        Target::Box { lo, hi } => {
            let mut out = Vec::new();
            for k in 0..n {
                let at_lo = x[k] <= lo[k] + active_tol;
                let at_hi = x[k] >= hi[k] - active_tol;
                match (at_lo, at_hi) {
                    (true, true) => out.push((unit(k, 1.0), false)),
                    (true, false) => out.push((unit(k, -1.0), true)),
                    (false, true) => out.push((unit(k, 1.0), true)),
                    (false, false) => {}
                }
            }
            out
        }
        Target::Ball { center, radius } => {
            let d: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
            let r = dot(&d, &d).sqrt();
            if *radius == 0.0 {
                (0..n).map(|k| (unit(k, 1.0), false)).collect()
            } else if r >= radius - active_tol && r > 0.0 {
                vec![(d.iter().map(|v| v / r).collect(), true)]
            } else {
                vec![]
            }
        }
    }
}

/// Fits `nu` in the normal cone of the target together with `c` and `d`,
/// using that the costate is affine in `nu`. Returns the costate for the
/// fitted `nu` and the multipliers.
pub fn fit_multipliers(rp: &ReparamProcess, sc: &Scenario, lambda: f64, bound: f64) -> Result<(Costate, Multipliers)> {
    let n = sc.n;
    let zero = vec![0.0; n];
    let base = integrate_costate(rp, sc, lambda, &zero, bound)?;
    let basis = cone_basis(&sc.target, rp.endpoint(), 1e-6);
    if basis.is_empty() {
        let m = estimate_multipliers(rp, &base, sc)?;
        return Ok((base, m));
    }
    // Costates for nu = e_b with lambda = 0 are the linear part.
    let mut parts = Vec::with_capacity(basis.len());
    for (e, _) in &basis {
        let c = integrate_costate(rp, sc, 0.0, e, bound)?;
        parts.push(step_products(rp, &c, sc)?);
    }
    let base_p = step_products(rp, &base, sc)?;
    let nodes = rp.nodes();
    let slack = budget_slack(rp, sc) > 1e-8 * sc.budget.max(1.0);
    let nb = basis.len();
    // Unknowns: nu coefficients, c, d.
    let cols = nb + 2;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (k, tr) in base_p.iter().enumerate() {
        let w = (nodes[k + 1] - nodes[k]).sqrt();
        let (free, act) = active_sets(&rp.controls, rp.step_piece[k]);
        for (pt, wt) in [(0usize, 1.0f64), (1, 2.0), (2, 1.0)] {
            let scale = w * wt;
            if free {
                let mut row = vec![0.0; cols];
                for b in 0..nb {
                    row[b] = -scale * parts[b][k][pt].qf.iter().sum::<f64>();
                }
                row[nb] = scale;
                rows.push(row);
                rhs.push(scale * tr[pt].qf.iter().sum::<f64>());
            }
            for (i, &on) in act.iter().enumerate() {
                if on {
                    let mut row = vec![0.0; cols];
                    for b in 0..nb {
                        row[b] = -scale * parts[b][k][pt].qg[i];
                    }
                    if !slack {
                        row[nb + 1] = scale;
                    }
                    rows.push(row);
                    rhs.push(scale * tr[pt].qg[i]);
                }
            }
        }
    }
    let mut coef = vec![0.0; nb];
    if !rows.is_empty() {
        let a = DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]);
        let b = DVector::from_vec(rhs);
        let svd = a.svd(true, true);
        let x = svd
            .solve(&b, 1e-12)
            .map_err(|e| Error::UnderDetermined(format!("multiplier fit: {e}")))?;
        for (bi, (_, signed)) in basis.iter().enumerate() {
            coef[bi] = if *signed { x[bi].max(0.0) } else { x[bi] };
        }
    }
    let mut nu = vec![0.0; n];
    for ((e, _), c) in basis.iter().zip(&coef) {
        for j in 0..n {
            nu[j] += c * e[j];
        }
    }
    let costate = integrate_costate(rp, sc, lambda, &nu, bound)?;
    let m = estimate_multipliers(rp, &costate, sc)?;
    Ok((costate, m))
}

/// The costate `p` in original time together with its jump arcs `eta`.
pub fn build_p_eta(
    rp: &ReparamProcess,
    costate: &Costate,
    sc: &Scenario,
    output_points: usize,
) -> Result<ExtendedTrajectory> {
    let start = costate.arcs[0].start().to_vec();
    assemble_arcs(&costate.arcs, &rp.controls, sc, &start, None, output_points)
}

/// Where a condition failed worst.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub segment: usize,
    pub s: f64,
    /// Original time `(segment - 1) h + psi(s)`.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateEntry {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub pass: bool,
    pub entries: Vec<CertificateEntry>,
    pub multipliers: Multipliers,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn entry(&self, name: &str) -> Option<&CertificateEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Running maximum with its location.
#[derive(Default)]
struct Worst {
    value: f64,
    at: Option<(usize, f64)>,
}

impl Worst {
    fn see(&mut self, v: f64, segment: usize, s: f64) {
        if v > self.value || self.at.is_none() && v >= self.value {
            self.value = v;
            self.at = Some((segment, s));
        }
    }
}

/// Checks conditions (A) to (D) for a candidate and its costate. Residuals
/// of (B) to (D) are relative to `lambda + sup|p|`, so outcomes do not change
/// when `(lambda, nu, c, d)` are scaled together.
pub fn check_conditions(
    rp: &ReparamProcess,
    costate: &Costate,
    mult: &Multipliers,
    sc: &Scenario,
    tol: &Tolerances,
) -> Result<Certificate> {
    let h = sc.delay;
    let psi = rp.controls.psi(h)?;
    let to_t = |segment: usize, s: f64| (segment - 1) as f64 * h + psi.eval(s);
    let witness = |w: &Worst| {
        w.at.map(|(segment, s)| Witness {
            segment,
            s,
            t: to_t(segment, s),
        })
    };
    let sup = costate.sup_norm();
    let scale = costate.lambda.abs() + sup;
    let rel = |v: f64| if scale > 0.0 { v / scale } else { v };
    let mut entries = Vec::new();
    let mut notes = mult
        .underdetermined
        .iter()
        .map(|m| format!("{m} underdetermined, set to 0"))
        .collect::<Vec<_>>();

    // Admissibility of the candidate.
    let mut adm = 0.0f64;
    if let Err(e) = rp.controls.validate(h) {
        notes.push(format!("controls: {e}"));
        adm = f64::INFINITY;
    }
    adm = adm.max((rp.controls.total_mass() - sc.budget).max(0.0));
    adm = adm.max(sc.target.distance(rp.endpoint()));
    entries.push(CertificateEntry {
        name: "admissible".into(),
        residual: adm,
        tolerance: tol.inequality,
        pass: adm <= tol.inequality,
        witness: None,
    });

    // (A) nontriviality.
    let a_val = costate.lambda + sup;
    entries.push(CertificateEntry {
        name: "A_nontrivial".into(),
        residual: a_val,
        tolerance: tol.nontriviality,
        pass: costate.lambda >= 0.0 && a_val >= tol.nontriviality,
        witness: None,
    });

    // (B) costate equation in integral form, chaining and terminal value.
    let mut b = Worst::default();
    let defect = costate_defect(rp, costate, sc)?;
    b.see(defect.0, defect.1, defect.2);
    for i in 1..sc.segments {
        let gap = max_abs_diff(costate.arcs[i - 1].end(), costate.arcs[i].start());
        b.see(gap, i, rp.horizon());
    }
    let grad = sc.psi.gradient(rp.endpoint())?;
    let expect: Vec<f64> = grad
        .iter()
        .zip(&costate.nu)
        .map(|(g, v)| -costate.lambda * g - v)
        .collect();
    b.see(max_abs_diff(costate.terminal(), &expect), sc.segments, rp.horizon());
    let b_res = rel(b.value);
    entries.push(CertificateEntry {
        name: "B_costate".into(),
        residual: b_res,
        tolerance: tol.integral,
        pass: b_res <= tol.integral,
        witness: witness(&b),
    });

    // (C) transversality: -p(T) - lambda grad Psi in the normal cone.
    let v: Vec<f64> = costate
        .terminal()
        .iter()
        .zip(&grad)
        .map(|(p, g)| -p - costate.lambda * g)
        .collect();
    let c_res = rel(sc.target.normal_cone_distance(rp.endpoint(), &v, 1e-6));
    entries.push(CertificateEntry {
        name: "C_transversality".into(),
        residual: c_res,
        tolerance: tol.integral,
        pass: c_res <= tol.integral,
        witness: None,
    });

    // (D) pointwise conditions on every node and step midpoint.
    let prods = step_products(rp, costate, sc)?;
    let (mut d1, mut d2, mut d3, mut d4a, mut d4b) = (
        Worst::default(),
        Worst::default(),
        Worst::default(),
        Worst::default(),
        Worst::default(),
    );
    let mut sign = 0.0f64;
    for (k, tr) in prods.iter().enumerate() {
        let piece = rp.step_piece[k];
        let (free, act) = active_sets(&rp.controls, piece);
        for p in tr {
            let sum_qf: f64 = p.qf.iter().sum();
            let (imax, max_qg) =
                p.qg.iter().copied().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
                );
            if free {
                d1.see((sum_qf - mult.c).abs(), imax + 1, p.s);
            } else {
                for (i, &on) in act.iter().enumerate() {
                    if on {
                        d4a.see((max_qg - p.qg[i]).max(0.0), i + 1, p.s);
                    }
                }
                let b1 = (max_qg - mult.d).abs();
                let b2 = (sum_qf - mult.c - (max_qg - mult.d)).max(0.0);
                d4b.see(b1.max(b2), imax + 1, p.s);
            }
            for (i, &v) in p.qg.iter().enumerate() {
                d2.see((v - mult.d).max(0.0), i + 1, p.s);
                if act[i] {
                    d3.see((v - mult.d).abs(), i + 1, p.s);
                }
            }
        }
    }
    sign = sign.max((-mult.d).max(0.0));
    let d_entries = [
        ("D_i_constancy", &d1, tol.support),
        ("D_ii_inequality", &d2, tol.inequality),
        ("D_iii_support", &d3, tol.support),
        ("D_iv_a_argmax", &d4a, tol.inequality),
        ("D_iv_b_jump", &d4b, tol.support),
    ];
    for (name, w, t) in d_entries {
        let r = rel(w.value);
        entries.push(CertificateEntry {
            name: name.into(),
            residual: r,
            tolerance: t,
            pass: r <= t,
            witness: witness(w),
        });
    }
    entries.push(CertificateEntry {
        name: "d_nonnegative".into(),
        residual: rel(sign),
        tolerance: tol.inequality,
        pass: rel(sign) <= tol.inequality,
        witness: None,
    });
    let slack = budget_slack(rp, sc);
    let comp = rel((mult.d * slack.min(1e300)).abs());
    entries.push(CertificateEntry {
        name: "d_complementarity".into(),
        residual: comp,
        tolerance: tol.inequality,
        pass: comp <= tol.inequality,
        witness: None,
    });

    // An atom at T is not reachable by the conditions above.
    let last = rp.controls.alpha().values().last().unwrap();
    if rp.controls.speeds().last() == Some(&0.0) && last.iter().any(|&a| a > ACTIVE_TOL) {
        notes.push("candidate has an atom at T; it does not affect x(T) through the conditions".into());
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(Certificate {
        pass,
        entries,
        multipliers: mult.clone(),
        notes,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest Simpson defect of the costate arcs, with its location.
fn costate_defect(rp: &ReparamProcess, costate: &Costate, sc: &Scenario) -> Result<(f64, usize, f64)> {
    let n = sc.n;
    let big_n = sc.segments;
    let nodes = rp.nodes();
    let alpha = rp.controls.alpha().values();
    let speeds = rp.controls.speeds();
    let mut worst = (0.0f64, 1usize, 0.0f64);
    let (mut r0, mut rm, mut r1) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut qm, mut qnm) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..nodes.len() - 1 {
        let h = nodes[k + 1] - nodes[k];
        let piece = rp.step_piece[k];
        let pts = [
            state_at(rp, k, Where::Left),
            state_at(rp, k, Where::Mid),
            state_at(rp, k, Where::Right),
        ];
        for i in 1..=big_n {
            let arc = &costate.arcs[i - 1];
            arc.midpoint_into(k, &mut qm);
            let next = (i < big_n).then(|| &costate.arcs[i]);
            if let Some(a) = next {
                a.midpoint_into(k, &mut qnm);
            }
            let a_i = alpha[piece][i - 1];
            let a_next = if i < big_n { alpha[piece][i] } else { 0.0 };
            let qs: [(&[f64], Option<&[f64]>, &mut Vec<f64>); 3] = [
                (arc.value(k), next.map(|a| a.value(k)), &mut r0),
                (&qm, next.map(|_| qnm.as_slice()), &mut rm),
                (arc.value(k + 1), next.map(|a| a.value(k + 1)), &mut r1),
            ];
            for (p, (q, qn, out)) in pts.iter().zip(qs) {
                let yn = (i < big_n).then(|| p.ys[i + 1].as_slice());
                costate_rhs(sc, speeds[piece], a_i, a_next, q, qn, &p.ys[i], &p.ys[i - 1], yn, out)?;
            }
            for j in 0..n {
                let integral = h / 6.0 * (r0[j] + 4.0 * rm[j] + r1[j]);
                let d = (arc.value(k + 1)[j] - arc.value(k)[j] - integral).abs();
                if d > worst.0 {
                    worst = (d, i, nodes[k]);
                }
            }
        }
    }
    Ok(worst)
}

/// Costate, multipliers and certificate for a candidate with `lambda = 1`.
pub fn certify(rp: &ReparamProcess, sc: &Scenario, tol: &Tolerances, bound: f64) -> Result<(Costate, Certificate)> {
    let (costate, mult) = fit_multipliers(rp, sc, 1.0, bound)?;
    let cert = check_conditions(rp, &costate, &mult, sc, tol)?;
    Ok((costate, cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::integrate_reparam_on;
    use crate::step::MultiStep;

    fn closed_form(k: f64) -> Scenario {
        Scenario::new(
            1,
            1,
            1.0,
            vec![1.0],
            vec![1.0],
            &["0"],
            &["x1[0]"],
            "-x1[0]",
            Target::Free,
            k,
        )
        .unwrap()
    }

    fn uniform(sc: &Scenario, mass: f64, m: usize, sub: usize) -> ReparamProcess {
        // Constant alpha with total mass `mass` on [0, S], S = h + mass.
        let h = sc.delay;
        let s_end = h + mass;
        let a = mass / s_end;
        let alpha = MultiStep::uniform(0.0, s_end, &[vec![a; m]]).unwrap();
        let rc = ReparamControls::new(alpha, h).unwrap();
        let nodes: Vec<f64> = (0..=m * sub).map(|k| s_end * k as f64 / (m * sub) as f64).collect();
        integrate_reparam_on(sc, &rc, nodes, 1e12).unwrap()
    }

    #[test]
    fn closed_form_costate_is_exponential() {
        let sc = closed_form(1.0);
        let rp = uniform(&sc, 1.0, 4, 16);
        let co = integrate_costate(&rp, &sc, 1.0, &[0.0], 1e12).unwrap();
        // q(S) = 1 and q' = -a q, so q(0) = e.
        assert!((co.terminal()[0] - 1.0).abs() < 1e-15);
        assert!((co.arcs[0].start()[0] - std::f64::consts::E).abs() < 1e-8);
        let m = estimate_multipliers(&rp, &co, &sc).unwrap();
        assert!(m.c.abs() < 1e-12);
        assert!((m.d - std::f64::consts::E).abs() < 1e-7);
    }

    #[test]
    fn closed_form_optimum_certifies() {
        let sc = closed_form(1.0);
        let rp = uniform(&sc, 1.0, 4, 16);
        let (_, cert) = certify(&rp, &sc, &Tolerances::default(), 1e12).unwrap();
        assert!(cert.pass, "{}", cert.to_json());
    }

    #[test]
    fn slack_budget_fails_inequality() {
        let sc = closed_form(1.0);
        let rp = uniform(&sc, 0.9, 4, 16);
        let (_, cert) = certify(&rp, &sc, &Tolerances::default(), 1e12).unwrap();
        assert!(!cert.pass);
        let e = cert.entry("D_ii_inequality").unwrap();
        assert!(!e.pass && e.residual >= 1e-3, "{e:?}");
    }

    #[test]
    fn hamiltonian_matches_definition() {
        let sc = closed_form(1.0);
        let h = hamiltonian(&[vec![1.0], vec![2.0]], &[vec![3.0]], &[0.25], &sc).unwrap();
        assert!((h - 0.25 * 3.0 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_is_constant_on_pieces() {
        // The reparameterized system is autonomous in s, so H is conserved
        // wherever alpha is constant, for any control.
        let sc = Scenario::new(
            2,
            2,
            0.5,
            vec![1.0, 0.0],
            vec![0.5, 0.2],
            &["x1[1]", "-sin(x1[0]) + 0.3*x2[1]"],
            &["0.2*x2[0]", "1 + x1[0]*x1[1]"],
            "x1[0]^2 + x1[1]",
            Target::Free,
            1.0,
        )
        .unwrap();
        let alpha = MultiStep::uniform(0.0, 0.9, &[vec![0.1, 0.5, 0.0], vec![0.3, 0.2, 0.0]]).unwrap();
        let rc = ReparamControls::new_unchecked(alpha);
        let nodes: Vec<f64> = (0..=300).map(|k| 0.9 * k as f64 / 300.0).collect();
        let rp = integrate_reparam_on(&sc, &rc, nodes, 1e12).unwrap();
        let co = integrate_costate(&rp, &sc, 1.0, &[0.3, -0.7], 1e12).unwrap();
        let vals = rc.alpha().values();
        let mut per_piece: Vec<Vec<f64>> = vec![Vec::new(); 3];
        for k in 0..rp.nodes().len() - 1 {
            let piece = rp.step_piece[k];
            let ys: Vec<Vec<f64>> = std::iter::once(rp.xi0.clone())
                .chain(rp.arcs.iter().map(|a| a.value(k).to_vec()))
                .collect();
            let qs: Vec<Vec<f64>> = co.arcs.iter().map(|a| a.value(k).to_vec()).collect();
            per_piece[piece].push(hamiltonian(&ys, &qs, &vals[piece], &sc).unwrap());
        }
        for hs in &per_piece {
            let spread =
                hs.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - hs.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            assert!(spread < 1e-8, "{spread}");
        }
    }

    #[test]
    fn multi_segment_costate_chains() {
        let sc = Scenario::new(
            1,
            2,
            0.5,
            vec![1.0],
            vec![0.5],
            &["-x1[0] + 0.3*x2[0]"],
            &["1"],
            "x1[0]*x1[0]",
            Target::Free,
            1.0,
        )
        .unwrap();
        let alpha = MultiStep::uniform(0.0, 0.7, &[vec![0.1, 0.3], vec![0.2, 0.0]]).unwrap();
        let rc = ReparamControls::new_unchecked(alpha);
        let nodes: Vec<f64> = (0..=56).map(|k| 0.7 * k as f64 / 56.0).collect();
        let rp = integrate_reparam_on(&sc, &rc, nodes, 1e12).unwrap();
        let co = integrate_costate(&rp, &sc, 1.0, &[0.0], 1e12).unwrap();
        assert!(max_abs_diff(co.arcs[0].end(), co.arcs[1].start()) < 1e-15);
        assert!(costate_defect(&rp, &co, &sc).unwrap().0 < 1e-9);
    }
}
