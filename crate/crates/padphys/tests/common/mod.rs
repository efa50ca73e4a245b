//! Shared test oracles. Everything here is deliberately independent of the
//! library's differentiation path: gradients come from central differences
//! on repeated forward evaluations, never from the tape.

#![allow(dead_code)] // each test target uses its own subset

use padphys::tensor::{Tape, Tensor, Var};
use padphys::util::derive_rng;
use rand::RngExt;

/// Central-difference gradients of `f` with respect to every element of
/// every input, where `f` evaluates the function from plain data buffers.
pub fn fd_gradients<F>(inputs: &[Vec<f64>], h: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i][j] += h;
            let mut minus = inputs.to_vec();
            minus[i][j] -= h;
            g[j] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// |a - n| <= abs_tol + rel_tol * max(|a|, |n|), elementwise.
pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], abs_tol: f64, rel_tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (j, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let bound = abs_tol + rel_tol * a.abs().max(n.abs());
        assert!(
            (a - n).abs() <= bound,
            "{what}[{j}]: analytic {a} vs numeric {n}, |diff| {} > {bound}",
            (a - n).abs()
        );
    }
}

/// Checks the tape's gradients for a scalar-valued graph against central
/// differences. `build` gets leaves in `shapes` order (all tracked) and must
/// return the scalar loss Var; it must be deterministic given its inputs.
pub fn check_tape_gradients<F>(name: &str, shapes: &[Vec<usize>], inputs: &[Vec<f64>], build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert_eq!(shapes.len(), inputs.len());
    let eval = |data: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(data)
            .map(|(s, d)| tape.leaf(&Tensor::new(s.clone(), d.clone()).unwrap(), false))
            .collect();
        let out = build(&mut tape, &vars);
        let v = tape.value(out);
        assert_eq!(v.shape(), &[1], "{name}: loss must be scalar");
        v.data()[0]
    };
    let numeric = fd_gradients(inputs, 1e-5, eval);

    let mut tape = Tape::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(inputs)
        .map(|(s, d)| tape.leaf(&Tensor::new(s.clone(), d.clone()).unwrap(), true))
        .collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap_or_else(|| panic!("{name}: input {i} has no gradient"));
        assert_grads_close(analytic, &numeric[i], 1e-7, 1e-4, &format!("{name}/input{i}"));
    }
}

/// Uniform values in [lo, hi) from a named deterministic stream.
pub fn uniform_vec(seed: u64, context: &str, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = derive_rng(seed, context);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
