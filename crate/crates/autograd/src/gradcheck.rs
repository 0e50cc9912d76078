//! Central finite-difference gradient checking.

use crate::{Tape, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)` over the checked entries.
    pub rel_error: f64,
    pub checked: usize,
    pub analytic_norm: f64,
}

/// Compares tape gradients of `build` with central differences.
///
/// `build` receives a fresh tape and one [`Var`] per input and returns a
/// scalar. `select` chooses which `(input, element)` pairs are perturbed.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    build: F,
    step: f64,
    select: impl Fn(usize, usize) -> bool,
) -> GradCheck
where
    F: Fn(&Tape<f64>, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(loss);

    let eval = |k: usize, e: usize, delta: f64| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut x = x.clone();
                if i == k {
                    x.data_mut()[e] += delta;
                }
                t.constant(x)
            })
            .collect();
        let out = build(&t, &vs);
        t.value(out).data()[0]
    };

    let (mut diff2, mut an2, mut nu2, mut checked) = (0.0, 0.0, 0.0, 0);
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.get(vars[k]);
        for e in 0..x.numel() {
            if !select(k, e) {
                continue;
            }
            let analytic = g.map_or(0.0, |g| g.data()[e]);
            let numeric = (eval(k, e, step) - eval(k, e, -step)) / (2.0 * step);
            diff2 += (analytic - numeric).powi(2);
            an2 += analytic * analytic;
            nu2 += numeric * numeric;
            checked += 1;
        }
    }
    let denom = an2.sqrt().max(nu2.sqrt());
    GradCheck {
        rel_error: if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 },
        checked,
        analytic_norm: an2.sqrt(),
    }
}
