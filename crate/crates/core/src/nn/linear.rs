use crate::error::Result;
use crate::tensor::{Real, Var};

/// Fully connected layer: `x [N, in] * w [in, out] + b [out]`.
pub fn linear<'t, T: Real>(x: Var<'t, T>, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    x.matmul(w)?.add_row_bias(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, project, random_tensor};
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_bias_reduces_to_matmul() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2], vec![1.0f64, 2.0]).unwrap());
        let w = tape.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        assert_eq!(linear(x, w, b).unwrap().value().data(), &[11.0]);
        let b = tape.constant(Tensor::full(&[1], 0.5));
        assert_eq!(linear(x, w, b).unwrap().value().data(), &[11.5]);
        let bad = tape.constant(Tensor::zeros(&[3, 1]));
        assert!(linear(x, bad, b).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let w = random_tensor(&[4, 5], -1.0, 1.0, &mut rng);
        let b = random_tensor(&[5], -1.0, 1.0, &mut rng);
        let r = check(&[x, w, b], 1e-5, |_, v| project(linear(v[0], v[1], v[2])?, 3)).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }
}
