//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates the forward graph, so it stays
//! independent of every backward rule it checks.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::layers::{Forward, Mode, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst norm-wise relative error over all inputs.
    pub max_rel_err: f64,
    /// Per-input `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub per_input: Vec<f64>,
    /// Relative error of all inputs' gradients taken as one vector.
    pub overall_rel_err: f64,
}

impl GradCheckReport {
    fn new(per_input: Vec<f64>, analytic: &[f64], numeric: &[f64]) -> Self {
        GradCheckReport {
            max_rel_err: per_input.iter().cloned().fold(0.0, f64::max),
            per_input,
            overall_rel_err: relative_error(analytic, numeric),
        }
    }
}

/// Compares tape gradients of `build` against central differences with step `h`.
///
/// `build` receives a fresh tape plus one leaf per entry of `inputs` and must
/// return a scalar loss.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &leaves)?;
    let grads = tape.backward(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &leaves)?;
        tape.value(loss).item()
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(leaves[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        per_input.push(relative_error(&analytic, &numeric));
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    Ok(GradCheckReport::new(per_input, &all_a, &all_n))
}

/// Like [`check_gradients`], but over every parameter of `store` as read by
/// `build` through a [`Forward`] in `mode`. `per_input` follows the store's
/// parameter order.
pub fn check_store_gradients<F>(store: &ParamStore, mode: Mode, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Forward) -> Result<Var>,
{
    let analytic = {
        let mut f = Forward::new(store, mode, true);
        let loss = build(&mut f)?;
        f.gradients(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut f = Forward::new(s, mode, false);
        let loss = build(&mut f)?;
        f.tape.value(loss).item()
    };
    let mut work = store.clone();
    let mut per_input = Vec::with_capacity(store.params.len());
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for (name, value) in &store.params {
        let a = analytic
            .get(name)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; value.numel()]);
        let mut numeric = vec![0.0; value.numel()];
        for i in 0..value.numel() {
            let orig = value.data()[i];
            work.params.get_mut(name).expect("cloned store").data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.params.get_mut(name).expect("cloned store").data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.params.get_mut(name).expect("cloned store").data_mut()[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        per_input.push(relative_error(&a, &numeric));
        all_a.extend(a);
        all_n.extend(numeric);
    }
    Ok(GradCheckReport::new(per_input, &all_a, &all_n))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
