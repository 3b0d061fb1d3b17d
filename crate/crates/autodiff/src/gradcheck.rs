//! Finite-difference verification of tape gradients.

use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub eps: f64,
    /// Number of coordinates to probe; every coordinate is probed when the
    /// parameters have fewer than this many.
    pub samples: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so coordinates with a
    /// vanishing gradient are judged on absolute error instead.
    pub denominator_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: 200,
            seed: 0,
            denominator_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences `(f(x+eps) − f(x−eps)) / (2·eps)` on a random subsample of
/// coordinates.
///
/// `f` receives one leaf per entry of `params`, in order.
pub fn grad_check<F>(f: F, params: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(Arc::new(p.clone()))).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::len).sum();
    let coords: Vec<usize> = if total <= cfg.samples {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = index::sample(&mut rng, total, cfg.samples).into_vec();
        picked.sort_unstable();
        picked
    };

    let eval = |which: usize, flat: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == which {
                    let mut q = p.clone();
                    q.data_mut()[flat] += delta;
                    tape.leaf(q, false)
                } else {
                    tape.leaf(p.clone(), false)
                }
            })
            .collect();
        let out = f(&tape, &vars)?;
        tape.item(out)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for c in coords {
        let which = offsets.partition_point(|&o| o <= c) - 1;
        let flat = c - offsets[which];
        let numeric = (eval(which, flat, cfg.eps)? - eval(which, flat, -cfg.eps)?) / (2.0 * cfg.eps);
        let a = analytic[which].data()[flat];
        let denom = a.abs().max(numeric.abs()).max(cfg.denominator_floor);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((which, flat, a, numeric));
            }
        }
    }
    Ok(report)
}
