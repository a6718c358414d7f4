//! Derivative-free minimization: Nelder–Mead on a box, with random restarts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed box `lo[i] <= x[i] <= hi[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("bounds need matching, non-empty lo/hi".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidInput("every bound needs finite lo < hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter (relative to the box) below this.
    pub x_tol: f64,
    /// Initial edge length as a fraction of each box side.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

/// Nelder–Mead with standard coefficients (1, 2, ½, ½). Trial points are
/// projected onto the box, so every evaluation is feasible.
pub fn nelder_mead<F>(f: &mut F, x0: &[f64], bounds: &Bounds, opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = bounds.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    let width: Vec<f64> = bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| h - l).collect();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        let step = opts.initial_step * width[i];
        // step away from the nearer wall
        x[i] = if x[i] + step <= bounds.hi[i] { x[i] + step } else { x[i] - step };
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let project = |mut x: Vec<f64>| {
        bounds.clamp(&mut x);
        x
    };
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .zip(&width)
                    .map(|((a, b), w)| ((a - b) / w).abs())
            })
            .fold(0.0, f64::max);
        if f_spread.abs() <= opts.f_tol && diameter <= opts.x_tol {
            break;
        }
        if diameter <= opts.x_tol * 1e-3 {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            project(
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect(),
            )
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for (x, fx) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *fx = eval(x, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Ok(Minimum { x, f, evals })
}

/// Runs Nelder–Mead from `x0` and then from `restarts` further points
/// drawn uniformly in the box; each run is polished by one extra restart
/// from its own optimum. Returns the best result and every run's minimum.
pub fn multistart<F, R>(
    f: &mut F,
    x0: &[f64],
    bounds: &Bounds,
    restarts: usize,
    opts: &NelderMeadOptions,
    rng: &mut R,
) -> Result<(Minimum, Vec<Minimum>)>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut starts = vec![x0.to_vec()];
    starts.extend((0..restarts).map(|_| bounds.sample(rng)));
    let mut runs = Vec::with_capacity(starts.len());
    for s in &starts {
        let first = nelder_mead(f, s, bounds, opts)?;
        let polished = nelder_mead(f, &first.x, bounds, opts)?;
        let evals = first.evals + polished.evals;
        let best = if polished.f <= first.f { polished } else { first };
        runs.push(Minimum { evals, ..best });
    }
    let best = runs
        .iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .cloned()
        .ok_or_else(|| Error::Solver("no optimizer runs".into()))?;
    Ok((best, runs))
}
