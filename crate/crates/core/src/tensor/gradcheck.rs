//! Central finite-difference gradient checking.
//!
//! The checker only ever runs forward passes to build its numeric estimate, so
//! it stays independent of the backward kernels it is validating.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1)` seen.
    pub max_rel_error: f64,
    pub checked: usize,
    /// (input index, element index, analytic, numeric) at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compare the tape's gradients of `sum(r * f(inputs))` against central
/// differences, with `r` a fixed random projection seeded by `seed`.
///
/// `build` records the operation under test on a fresh tape; it is invoked
/// once for the analytic pass and twice per checked element.
pub fn check_gradients<F>(inputs: &[Tensor], step: f32, seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f32> = (0..tape.value(out).numel())
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    tape.backward_with(out, proj.clone())?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let objective = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(&proj)
            .map(|(&y, &r)| y as f64 * r as f64)
            .sum())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for (j, &x) in input.data().iter().enumerate() {
            let (xp, xm) = (x + step, x - step);
            work[ti].data_mut()[j] = xp;
            let lp = objective(&work)?;
            work[ti].data_mut()[j] = xm;
            let lm = objective(&work)?;
            work[ti].data_mut()[j] = x;
            let numeric = (lp - lm) / (xp as f64 - xm as f64);
            let a = analytic[ti][j] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((ti, j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}

/// Uniform random tensor in `[lo, hi)`; optionally pushes values away from zero
/// by at least `min_abs` (for checks through kinks such as relu).
pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32, min_abs: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if v.abs() >= min_abs {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
