//! Strict-sense approximations of impulsive controls.
//!
//! Two constructions: replacing each atom by a narrow rectangle of density
//! (whose limit depends on which side of the atom the rectangle sits), and
//! mixing reparameterized controls with a small share of clock speed so that
//! no jump intervals remain.

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{atom_place, AtomPlace, AttachedControlFamily, Measure};
use crate::reparam::{from_reparam, to_reparam, ReparamControls};
use crate::scenario::Scenario;
use crate::simulate::{simulate_extended, simulate_strict, SimOptions};
use crate::step::{MultiStep, StepFunction};

/// Placement of a mollifying rectangle relative to its atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// `[t - eps, t]`
    Before,
    /// `[t, t + eps]`
    After,
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "before" | "b" => Ok(Side::Before),
            "after" | "a" => Ok(Side::After),
            other => Err(Error::Schema(format!("unknown side '{other}', expected before|after"))),
        }
    }
}

/// Side actually used for the atom at `t`: rectangles never leave `[0, T]`.
fn effective_side(t: f64, side: Side, sc: &Scenario) -> Side {
    match atom_place(t, sc) {
        AtomPlace::Boundary(0) => Side::After,
        AtomPlace::Boundary(i) if i == sc.segments => Side::Before,
        _ => side,
    }
}

/// Largest admissible rectangle width: half the smallest gap between atoms
/// and between interior atoms and the segment grid.
pub fn epsilon_limit(mu: &Measure, sc: &Scenario) -> f64 {
    let h = sc.delay;
    let mut gap = h;
    for w in mu.atoms().windows(2) {
        gap = gap.min(w[1].0 - w[0].0);
    }
    for &(t, _) in mu.atoms() {
        if let AtomPlace::Interior { r, .. } = atom_place(t, sc) {
            gap = gap.min(r).min(h - r);
        }
    }
    0.5 * gap
}

/// Replaces every atom `(t, m)` by a rectangle of height `m / eps` on one
/// side of `t`; the density part is kept.
pub fn mollify_atoms(mu: &Measure, eps: f64, sides: &[Side], sc: &Scenario) -> Result<StepFunction> {
    if sides.len() != mu.atoms().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sides given for {} atoms",
            sides.len(),
            mu.atoms().len()
        )));
    }
    let limit = epsilon_limit(mu, sc);
    if !(eps > 0.0) || eps >= limit {
        return Err(Error::EpsilonTooLarge { epsilon: eps, limit });
    }
    let mut rects: Vec<(f64, f64, f64)> = Vec::with_capacity(sides.len());
    for (&(t, m), &side) in mu.atoms().iter().zip(sides) {
        let (a, b) = match effective_side(t, side, sc) {
            Side::Before => (t - eps, t),
            Side::After => (t, t + eps),
        };
        rects.push((a, b, m / eps));
    }
    let bumps = StepFunction::from_rectangles(0.0, sc.horizon(), &rects)?;
    Ok(mu.density().combine(&bumps, |x, y| x + y))
}

/// The attached-control family reached in the limit `eps -> 0` of
/// [`mollify_atoms`]. At each position `r`, rectangles placed before their
/// atom act first, all at rates proportional to mass; then those placed after.
pub fn limit_family(mu: &Measure, sides: &[Side], sc: &Scenario) -> Result<AttachedControlFamily> {
    if sides.len() != mu.atoms().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sides given for {} atoms",
            sides.len(),
            mu.atoms().len()
        )));
    }
    let big_n = sc.segments;
    let h = sc.delay;
    // (r, segment index 0-based, mass, side)
    let mut entries: Vec<(f64, usize, f64, Side)> = Vec::new();
    for (&(t, m), &side) in mu.atoms().iter().zip(sides) {
        let side = effective_side(t, side, sc);
        match atom_place(t, sc) {
            AtomPlace::Interior { segment, r } => entries.push((r, segment - 1, m, side)),
            AtomPlace::Boundary(i) => match side {
                Side::Before => entries.push((h, i - 1, m, side)),
                Side::After => entries.push((0.0, i, m, side)),
            },
        }
    }
    let mut positions: Vec<f64> = entries.iter().map(|e| e.0).collect();
    positions.sort_by(f64::total_cmp);
    positions.dedup_by(|a, b| (*a - *b).abs() <= crate::measure::position_tol(h));

    let mut family = AttachedControlFamily::new(big_n);
    for r in positions {
        let here: Vec<&(f64, usize, f64, Side)> = entries
            .iter()
            .filter(|e| (e.0 - r).abs() <= crate::measure::position_tol(h))
            .collect();
        let total: f64 = here.iter().map(|e| e.2).sum();
        let mut breaks = vec![0.0];
        let mut values = Vec::new();
        for phase in [Side::Before, Side::After] {
            let mut v = vec![0.0; big_n];
            let mut phase_mass = 0.0;
            for e in here.iter().filter(|e| e.3 == phase) {
                v[e.1] += e.2;
                phase_mass += e.2;
            }
            if phase_mass == 0.0 {
                continue;
            }
            for x in v.iter_mut() {
                *x *= total / phase_mass;
            }
            breaks.push(breaks.last().unwrap() + phase_mass / total);
            values.push(v);
        }
        *breaks.last_mut().unwrap() = 1.0;
        family.insert(r, MultiStep::new(breaks, values, big_n)?)?;
    }
    Ok(family)
}

/// Atomless approximation of reparameterized controls: with
/// `alpha_0 = 1 - sum alpha` and `nu = sum int alpha_i`,
/// `alpha_0^j = h / (h + nu / j) (alpha_0 + sum alpha / j)` and the remaining
/// speed `1 - alpha_0^j` is shared in proportion to `alpha_i` (equally when
/// all vanish).
pub fn density_controls(rc: &ReparamControls, j: usize, h: f64) -> Result<ReparamControls> {
    if j == 0 {
        return Err(Error::Schema("j must be a positive integer".into()));
    }
    let jf = j as f64;
    let nu = rc.total_mass();
    let big_n = rc.segments();
    let scale = h / (h + nu / jf);
    let values = rc
        .alpha()
        .values()
        .iter()
        .map(|v| {
            let a: f64 = v.iter().sum();
            let a0 = scale * ((1.0 - a) + a / jf);
            let rest = 1.0 - a0;
            if a > 0.0 {
                v.iter().map(|x| rest * x / a).collect()
            } else {
                vec![rest / big_n as f64; big_n]
            }
        })
        .collect();
    let alpha = MultiStep::new(rc.breaks().to_vec(), values, big_n)?;
    Ok(ReparamControls::new_unchecked(alpha))
}

/// Approximating sequence to study.
#[derive(Debug, Clone, PartialEq)]
pub enum Study {
    /// Mollified atoms with the given sides, for each width.
    Mollify { sides: Vec<Side>, widths: Vec<f64> },
    /// Density controls for each `j`.
    Density { js: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub parameter: f64,
    pub endpoint: Vec<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    /// `x(T)` of the extended process being approximated.
    pub reference: Vec<f64>,
    pub rows: Vec<StudyRow>,
    /// `max error / parameter` for widths, `max error * j` for densities.
    pub rate_constant: f64,
    /// Errors decrease along the sequence.
    pub monotone: bool,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter");
        for k in 0..self.reference.len() {
            out.push_str(&format!(",x[{k}]"));
        }
        out.push_str(",error\n");
        for row in &self.rows {
            out.push_str(&format!("{:.17e}", row.parameter));
            for v in &row.endpoint {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push_str(&format!(",{:.17e}\n", row.error));
        }
        out
    }
}

/// Runs `f` over `items` on up to `jobs` threads, keeping the input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Endpoint errors of an approximating sequence against the extended
/// process of `(mu, family)`.
pub fn convergence_study(
    sc: &Scenario,
    mu: &Measure,
    family: &AttachedControlFamily,
    study: &Study,
    opts: &SimOptions,
    jobs: usize,
) -> Result<StudyReport> {
    let reference = simulate_extended(sc, mu, family, opts)?.endpoint;
    let (params, results): (Vec<f64>, Vec<Result<Vec<f64>>>) = match study {
        Study::Mollify { sides, widths } => {
            let res = par_map(widths, jobs, |&eps| {
                let u = mollify_atoms(mu, eps, sides, sc)?;
                Ok(simulate_strict(sc, &u, opts)?.endpoint)
            });
            (widths.clone(), res)
        }
        Study::Density { js } => {
            let rc = to_reparam(mu, family, sc)?;
            let res = par_map(js, jobs, |&j| {
                let rcj = density_controls(&rc, j, sc.delay)?;
                let (mu_j, _) = from_reparam(&rcj, sc)?;
                Ok(simulate_strict(sc, mu_j.density(), opts)?.endpoint)
            });
            (js.iter().map(|&j| j as f64).collect(), res)
        }
    };
    let mut rows = Vec::with_capacity(params.len());
    for (p, r) in params.into_iter().zip(results) {
        let endpoint = r?;
        let error = dist(&endpoint, &reference);
        rows.push(StudyRow {
            parameter: p,
            endpoint,
            error,
        });
    }
    let rate_constant = rows
        .iter()
        .map(|r| match study {
            Study::Mollify { .. } => r.error / r.parameter,
            Study::Density { .. } => r.error * r.parameter,
        })
        .fold(0.0, f64::max);
    let mut ordered: Vec<&StudyRow> = rows.iter().collect();
    match study {
        Study::Mollify { .. } => ordered.sort_by(|a, b| b.parameter.total_cmp(&a.parameter)),
        Study::Density { .. } => ordered.sort_by(|a, b| a.parameter.total_cmp(&b.parameter)),
    }
    let monotone = ordered.windows(2).all(|w| w[1].error <= w[0].error + 1e-9);
    Ok(StudyReport {
        reference,
        rows,
        rate_constant,
        monotone,
    })
}
