//! Direct transcription of the reparameterized problem and a projected
//! gradient solver with quadratic penalties.
//!
//! The decision vector holds `alpha` on `M` equal pieces of `[0, S]`, piece
//! major. The clock identity fixes `S = h / (1 - mean(sum alpha))`, so it is
//! eliminated rather than enforced. The budget is linear in the decision
//! vector and is kept exactly by the projection; its penalty
//! `rho (|mu| - K)_+^2` therefore stays zero along iterates. The target
//! enters through `rho dist(x(T), target)^2`.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::approx::par_map;
use crate::error::{Error, Result};
use crate::pmp::{integrate_costate, step_products, Multipliers};
use crate::reparam::ReparamControls;
use crate::scenario::Scenario;
use crate::simulate::{integrate_reparam_on, ReparamProcess};
use crate::step::{MultiStep, StepFunction};

/// Euclidean projection onto `{a >= 0, sum a <= 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    // Projection onto the face sum a = 1.
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// The finite-dimensional problem for a scenario and a piece count `M`.
#[derive(Debug, Clone)]
pub struct Nlp<'a> {
    pub sc: &'a Scenario,
    pub pieces: usize,
    /// RK4 steps per piece.
    pub substeps: usize,
    pub bound: f64,
}

/// Objective value and its parts at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// `Psi(x(T))`.
    pub cost: f64,
    /// Cost plus penalties.
    pub penalized: f64,
    pub mass: f64,
    pub target_distance: f64,
}

pub fn transcribe(sc: &Scenario, pieces: usize) -> Nlp<'_> {
    Nlp {
        sc,
        pieces: pieces.max(1),
        substeps: 8,
        bound: 1e12,
    }
}

impl Nlp<'_> {
    pub fn dim(&self) -> usize {
        self.pieces * self.sc.segments
    }

    /// `S` for the decision vector, or `None` when the clock cannot advance.
    pub fn horizon(&self, x: &[f64]) -> Option<f64> {
        let mean = x.iter().sum::<f64>() / self.pieces as f64;
        (mean < 1.0 - 1e-9).then(|| self.sc.delay / (1.0 - mean))
    }

    pub fn controls(&self, x: &[f64]) -> Result<ReparamControls> {
        let s_end = self
            .horizon(x)
            .ok_or_else(|| Error::Infeasible("controls saturate on all of [0, S]".into()))?;
        let big_n = self.sc.segments;
        let comps: Vec<Vec<f64>> = (0..big_n)
            .map(|i| (0..self.pieces).map(|k| x[k * big_n + i]).collect())
            .collect();
        Ok(ReparamControls::new_unchecked(MultiStep::uniform(0.0, s_end, &comps)?))
    }

    /// Piece averages of `rc` on this transcription's grid over `[0, S]`.
    /// Keeps `S`, so a feasible control maps to a feasible point.
    pub fn sample(&self, rc: &ReparamControls) -> Result<Vec<f64>> {
        let big_n = self.sc.segments;
        if rc.segments() != big_n {
            return Err(Error::DimensionMismatch(format!(
                "controls have {} components but N = {big_n}",
                rc.segments()
            )));
        }
        let s_end = rc.horizon();
        let width = s_end / self.pieces as f64;
        let comps: Vec<StepFunction> = (0..big_n).map(|i| rc.alpha().component(i)).collect();
        let mut x = vec![0.0; self.dim()];
        for k in 0..self.pieces {
            let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
            for (i, c) in comps.iter().enumerate() {
                x[k * big_n + i] = c.integral_over(a, b) / width;
            }
        }
        Ok(x)
    }

    pub fn process(&self, x: &[f64]) -> Result<ReparamProcess> {
        let rc = self.controls(x)?;
        let s_end = rc.horizon();
        let m = self.pieces * self.substeps;
        let nodes: Vec<f64> = (0..=m).map(|k| s_end * k as f64 / m as f64).collect();
        integrate_reparam_on(self.sc, &rc, nodes, self.bound)
    }

    fn mass(&self, x: &[f64]) -> f64 {
        self.horizon(x).map_or(f64::INFINITY, |s| s - self.sc.delay)
    }

    fn budget_excess(&self, x: &[f64]) -> f64 {
        (self.mass(x) - self.sc.budget).max(0.0)
    }

    pub fn evaluate(&self, x: &[f64], rho: f64) -> Result<Evaluation> {
        let rp = self.process(x)?;
        self.evaluate_process(x, &rp, rho)
    }

    fn evaluate_process(&self, x: &[f64], rp: &ReparamProcess, rho: f64) -> Result<Evaluation> {
        let y = rp.endpoint();
        let cost = self.sc.psi.eval(y)?;
        let dist = self.sc.target.distance(y);
        let excess = self.budget_excess(x);
        Ok(Evaluation {
            cost,
            penalized: cost + rho * (dist * dist + excess * excess),
            mass: self.mass(x),
            target_distance: dist,
        })
    }

    /// Penalized objective and its gradient by the adjoint method.
    pub fn gradient(&self, x: &[f64], rho: f64) -> Result<(Evaluation, Vec<f64>)> {
        let sc = self.sc;
        let big_n = sc.segments;
        let rp = self.process(x)?;
        let ev = self.evaluate_process(x, &rp, rho)?;
        let y = rp.endpoint();
        let proj = sc.target.project(y);
        let nu: Vec<f64> = y.iter().zip(&proj).map(|(a, b)| 2.0 * rho * (a - b)).collect();
        let costate = integrate_costate(&rp, sc, 1.0, &nu, self.bound)?;
        let prods = step_products(&rp, &costate, sc)?;
        let nodes = rp.nodes();
        let speeds = rp.controls.speeds();
        let alpha = rp.controls.alpha().values();
        let mut grad = vec![0.0; self.dim()];
        // int sum_j q_j . F_j over [0, S].
        let mut total = 0.0;
        for (k, tr) in prods.iter().enumerate() {
            let w = (nodes[k + 1] - nodes[k]) / 6.0;
            let piece = rp.step_piece[k];
            for (p, wt) in tr.iter().zip([1.0, 4.0, 1.0]) {
                let sum_qf: f64 = p.qf.iter().sum();
                for i in 0..big_n {
                    grad[piece * big_n + i] += w * wt * (sum_qf - p.qg[i]);
                    total += w * wt * alpha[piece][i] * p.qg[i];
                }
                total += w * wt * speeds[piece] * sum_qf;
            }
        }
        // Moving any alpha stretches [0, S] through dS/dalpha = S^2 / (h M).
        let s_end = rp.horizon();
        let ds = s_end * s_end / (sc.delay * self.pieces as f64);
        let d_stretch = -total / s_end;
        let d_budget = 2.0 * rho * self.budget_excess(x);
        for g in grad.iter_mut() {
            *g += (d_stretch + d_budget) * ds;
        }
        Ok((ev, grad))
    }

    /// Largest `sum x` allowed by the budget: `|mu| = h m / (1 - m)` for the
    /// mean `m` of `sum alpha`, so `|mu| <= K` is linear in `x`.
    fn mass_cap(&self) -> f64 {
        let (h, k) = (self.sc.delay, self.sc.budget);
        if k.is_finite() {
            self.pieces as f64 * k / (h + k)
        } else {
            f64::INFINITY
        }
    }

    /// Projects onto the product of simplices intersected with the budget.
    /// The budget multiplier `tau` is found by bisection on the shift
    /// `x - tau`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let big_n = self.sc.segments;
        let shifted = |tau: f64| -> Vec<f64> {
            x.chunks(big_n)
                .flat_map(|c| project_simplex(&c.iter().map(|v| v - tau).collect::<Vec<_>>()))
                .collect()
        };
        let cap = self.mass_cap();
        let y = shifted(0.0);
        if y.iter().sum::<f64>() <= cap {
            return y;
        }
        let (mut lo, mut hi) = (0.0, x.iter().fold(0.0f64, |m, v| m.max(*v)));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if shifted(mid).iter().sum::<f64>() > cap {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi.max(1.0) {
                break;
            }
        }
        let y = shifted(hi);
        let total: f64 = y.iter().sum();
        if total > cap {
            y.iter().map(|v| v * cap / total).collect()
        } else {
            y
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOptions {
    pub pieces: usize,
    pub substeps: usize,
    /// Iterations per penalty round.
    pub max_iters: usize,
    /// Stop a round when `|x - P(x - grad)|_inf` is below this.
    pub tol: f64,
    pub rho0: f64,
    pub rho_growth: f64,
    pub rounds: usize,
    /// Random restarts besides the warm or zero start.
    pub restarts: usize,
    pub seed: u64,
    pub warm_start: Option<Vec<f64>>,
    pub jobs: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            pieces: 16,
            substeps: 8,
            max_iters: 400,
            tol: 1e-9,
            rho0: 10.0,
            rho_growth: 10.0,
            rounds: 6,
            restarts: 0,
            seed: 0,
            warm_start: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub start: usize,
    pub round: usize,
    pub rho: f64,
    pub iterations: usize,
    pub cost: f64,
    pub penalized: f64,
    pub mass: f64,
    pub target_distance: f64,
    pub projected_gradient: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub process: ReparamProcess,
    pub cost: f64,
    pub mass: f64,
    pub target_distance: f64,
    pub multipliers: Multipliers,
    pub log: Vec<LogEntry>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Runs the penalty rounds from one starting point.
fn descend(nlp: &Nlp<'_>, x0: Vec<f64>, opts: &SolveOptions, start: usize) -> Result<(Vec<f64>, Vec<LogEntry>)> {
    let mut x = nlp.project(&x0);
    let mut log = Vec::new();
    let mut rho = opts.rho0;
    for round in 0..opts.rounds {
        let (mut ev, mut g) = nlp.gradient(&x, rho)?;
        let mut t = 1.0 / inf_norm(&g).max(1e-12);
        let mut iterations = 0;
        let mut pg_norm = projected_gradient_norm(nlp, &x, &g);
        while iterations < opts.max_iters && pg_norm > opts.tol {
            iterations += 1;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = nlp.project(&x.iter().zip(&g).map(|(a, b)| a - t * b).collect::<Vec<_>>());
                let decrease: f64 = g
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(gi, (a, b))| gi * (a - b))
                    .sum();
                match nlp.evaluate(&trial, rho) {
                    Ok(e) if e.penalized <= ev.penalized + 1e-4 * decrease => {
                        accepted = Some(trial);
                        break;
                    }
                    Ok(_) | Err(Error::Infeasible(_)) | Err(Error::BlowUp { .. }) => t *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let Some(trial) = accepted else {
                break;
            };
            let (ev_new, g_new) = nlp.gradient(&trial, rho)?;
            // Barzilai-Borwein guess for the next trial step.
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let sy: f64 = s
                .iter()
                .zip(g_new.iter().zip(&g))
                .map(|(si, (a, b))| si * (a - b))
                .sum();
            let ss: f64 = s.iter().map(|v| v * v).sum();
            t = if sy > 0.0 {
                (ss / sy).clamp(1e-12, 1e12)
            } else {
                2.0 * t
            };
            x = trial;
            (ev, g) = (ev_new, g_new);
            pg_norm = projected_gradient_norm(nlp, &x, &g);
        }
        log.push(LogEntry {
            start,
            round,
            rho,
            iterations,
            cost: ev.cost,
            penalized: ev.penalized,
            mass: ev.mass,
            target_distance: ev.target_distance,
            projected_gradient: pg_norm,
        });
        rho *= opts.rho_growth;
    }
    Ok((x, log))
}

/// `|x - P(x - g)|_inf`, zero exactly at stationary points.
fn projected_gradient_norm(nlp: &Nlp<'_>, x: &[f64], g: &[f64]) -> f64 {
    let p = nlp.project(&x.iter().zip(g).map(|(a, b)| a - b).collect::<Vec<_>>());
    inf_norm(&x.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>())
}

/// Scales `x` so that the total mass equals the budget when it exceeds it.
fn restore_budget(nlp: &Nlp<'_>, x: &[f64]) -> Vec<f64> {
    let h = nlp.sc.delay;
    let k = nlp.sc.budget;
    let mean = x.iter().sum::<f64>() / nlp.pieces as f64;
    if nlp.mass(x) <= k || mean <= 0.0 {
        return x.to_vec();
    }
    // mass = h m / (1 - m) for mean m, so mass = K at m = K / (h + K).
    let theta = k / ((h + k) * mean);
    x.iter().map(|v| v * theta).collect()
}

/// Minimizes the transcribed problem. Deterministic for fixed options.
pub fn solve(sc: &Scenario, opts: &SolveOptions) -> Result<Solution> {
    if !sc.budget.is_finite() {
        return Err(Error::Schema("optimization needs a finite budget K".into()));
    }
    let mut nlp = transcribe(sc, opts.pieces);
    nlp.substeps = opts.substeps.max(1);
    let dim = nlp.dim();
    if sc.budget == 0.0 {
        return finish(&nlp, vec![0.0; dim], Vec::new());
    }
    let mut starts = vec![match &opts.warm_start {
        Some(w) if w.len() == dim => w.clone(),
        Some(w) => {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} entries but the transcription has {dim}",
                w.len()
            )))
        }
        None => vec![0.0; dim],
    }];
    let mut rng = StdRng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        // Small random starts keep the mass near the budget scale.
        let scale = (sc.budget / (sc.delay + sc.budget)).min(0.5);
        starts.push((0..dim).map(|_| rng.gen::<f64>() * scale).collect());
    }
    let starts: Vec<(usize, Vec<f64>)> = starts.into_iter().enumerate().collect();
    let runs = par_map(&starts, opts.jobs, |(i, x0)| descend(&nlp, x0.clone(), opts, *i));
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut log = Vec::new();
    let mut last_err = None;
    for run in runs {
        match run {
            Ok((x, l)) => {
                log.extend(l);
                let x = restore_budget(&nlp, &x);
                let ev = match nlp.evaluate(&x, 0.0) {
                    Ok(e) => e,
                    Err(e) => {
                        last_err = Some(e);
                        continue;
                    }
                };
                // Rank by cost among feasible points, otherwise by violation.
                let violation = ev.target_distance.max((ev.mass - sc.budget).max(0.0));
                let key = if violation <= 1e-6 { ev.cost } else { f64::INFINITY };
                if best.as_ref().is_none_or(|b| (key, violation) < (b.1, b.2)) {
                    best = Some((x, key, violation));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((x, _, violation)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::NoProgress("no start produced a candidate".into())));
    };
    if violation > 1e-6 {
        return Err(Error::Infeasible(format!(
            "best candidate violates the constraints by {violation:e}"
        )));
    }
    finish(&nlp, x, log)
}

fn finish(nlp: &Nlp<'_>, x: Vec<f64>, log: Vec<LogEntry>) -> Result<Solution> {
    let process = nlp.process(&x)?;
    let ev = nlp.evaluate_process(&x, &process, 0.0)?;
    let (_, multipliers) = crate::pmp::fit_multipliers(&process, nlp.sc, 1.0, nlp.bound)?;
    Ok(Solution {
        x,
        process,
        cost: ev.cost,
        mass: ev.mass,
        target_distance: ev.target_distance,
        multipliers,
        log,
    })
}
