//! Central finite-difference gradient checking in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all entries.
    pub max_rel_error: f64,
    /// `(input, element)` where the largest error occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks `d f / d inputs` for a scalar-valued `f`.
///
/// `f` is re-evaluated on a fresh tape for every perturbed entry, so it must
/// be deterministic.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    };

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let v = loss.value().data()[0];
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[i].data()[e] - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (i, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduces an arbitrary output to a scalar through fixed random weights, so
/// every output element contributes a distinct upstream gradient.
pub fn project<'t>(out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let shape = out.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    let w = out.tape().constant(w);
    Ok(out.mul(w)?.sum())
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[4, 2], -1.0, 1.0, &mut rng);
        let r = check(&[a, b], 1e-5, |_, v| {
            let p = v[0].matmul(v[1])?;
            let q = p.mul(p)?.scale(0.3);
            project(q.add(p)?, 9)
        })
        .unwrap();
        assert!(r.passes(1e-4), "{r:?}");
        assert_eq!(r.checked, 20);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[6], -1.0, 1.0, &mut rng);
        let grad_of = |f: &dyn for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>| {
            let tape = Tape::new();
            let v = tape.param(x.clone());
            let g = tape.backward(f(v)).unwrap();
            g.get(v).unwrap().clone()
        };
        let gf = grad_of(&|v| v.square().sum());
        let gg = grad_of(&|v| v.mean().unwrap());
        let gc = grad_of(&|v| {
            v.square()
                .sum()
                .scale(2.5)
                .add(v.mean().unwrap().scale(-1.5))
                .unwrap()
        });
        for i in 0..6 {
            let want = 2.5 * gf.data()[i] - 1.5 * gg.data()[i];
            assert!((gc.data()[i] - want).abs() < 1e-12);
        }
    }
}
