//! Seeded random impulsive controls on small scenarios.

#![allow(dead_code)]

use impdelay::{with_defaults, AttachedControlFamily, Measure, MultiStep, Scenario, Target};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub struct Case {
    pub seed: u64,
    pub sc: Scenario,
    pub mu: Measure,
    pub family: AttachedControlFamily,
}

const F1: [&str; 3] = ["-0.5*x1[0] + 0.3*x2[0]", "0.2*sin(x2[0])", "0"];
const G1: [&str; 3] = ["1", "x1[0]*x2[0]", "cos(x1[0]) + 0.5*x2[0]"];

fn scenario(rng: &mut StdRng) -> Scenario {
    let n = rng.gen_range(1..=2);
    let big_n = rng.gen_range(1..=3);
    let h = *[0.5, 1.0].choose(rng).unwrap();
    let (f, g): (Vec<String>, Vec<String>) = if n == 1 {
        (
            vec![F1.choose(rng).unwrap().to_string()],
            vec![G1.choose(rng).unwrap().to_string()],
        )
    } else {
        (
            vec!["x1[1]".into(), "-x1[0] - 0.1*x1[1] + 0.2*x2[0]".into()],
            vec!["0.3*x2[1]".into(), "1 + 0.2*x1[0]".into()],
        )
    };
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xi0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Scenario::new(n, big_n, h, x0, xi0, &f, &g, "x1[0]", Target::Free, f64::INFINITY).unwrap()
}

/// Attached control for masses `m` on `[0, 1]`: a mix of two orderings of
/// constant-rate ramps, so the sum stays constant.
fn ramps(rng: &mut StdRng, m: &[f64]) -> MultiStep {
    let big_n = m.len();
    let total: f64 = m.iter().sum();
    let mut orders: Vec<Vec<usize>> = Vec::new();
    for _ in 0..2 {
        let mut o: Vec<usize> = (0..big_n).collect();
        o.shuffle(rng);
        orders.push(o);
    }
    // Breakpoints of both orderings.
    let mut breaks = vec![0.0, 1.0];
    for o in &orders {
        let mut acc = 0.0;
        for &i in o {
            acc += m[i] / total;
            breaks.push(acc.min(1.0));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let owner = |o: &[usize], s: f64| {
        let mut acc = 0.0;
        for &i in o {
            acc += m[i] / total;
            if s < acc {
                return i;
            }
        }
        *o.last().unwrap()
    };
    let values: Vec<Vec<f64>> = breaks
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let mut v = vec![0.0; big_n];
            for o in &orders {
                v[owner(o, mid)] += 0.5 * total;
            }
            v
        })
        .collect();
    MultiStep::new(breaks, values, big_n).unwrap()
}

pub fn case(seed: u64) -> Case {
    let mut rng = StdRng::seed_from_u64(seed);
    let sc = scenario(&mut rng);
    let h = sc.delay;
    let big_n = sc.segments;
    let horizon = sc.horizon();
    // Up to 3 atoms on an eighth grid of h, boundaries included.
    let count = rng.gen_range(0..=3);
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    while atoms.len() < count {
        let k = rng.gen_range(0..=8 * big_n);
        let t = k as f64 * h / 8.0;
        if atoms.iter().all(|a| (a.0 - t).abs() > 1e-12) {
            atoms.push((t, rng.gen_range(0.1..1.0)));
        }
    }
    let mut rects = Vec::new();
    if rng.gen_bool(0.7) {
        let a = rng.gen_range(0..4 * big_n) as f64 * h / 4.0;
        let b = (a + h / 4.0 * rng.gen_range(1..=3) as f64).min(horizon);
        rects.push((a, b, rng.gen_range(0.1..1.5)));
    }
    let mu = Measure::from_parts(horizon, &rects, &atoms).unwrap();
    let mut family = AttachedControlFamily::new(big_n);
    // Interior positions get random ramps; boundary atoms keep the default.
    let mut positions: Vec<f64> = mu
        .atoms()
        .iter()
        .map(|&(t, _)| t - (t / h).floor() * h)
        .filter(|&r| r > 1e-12 && r < h - 1e-12)
        .collect();
    positions.sort_by(f64::total_cmp);
    positions.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    for r in positions {
        let m: Vec<f64> = (0..big_n).map(|i| mu.atom_at(r + i as f64 * h)).collect();
        if rng.gen_bool(0.8) {
            family.insert(r, ramps(&mut rng, &m)).unwrap();
        }
    }
    let family = with_defaults(&mu, &family, &sc).unwrap();
    Case { seed, sc, mu, family }
}

pub fn corpus(count: u64) -> Vec<Case> {
    (0..count).map(|s| case(1000 + s)).collect()
}
