use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Randomized leaky rectifier: negative inputs are scaled by a slope drawn
/// from `U(lower, upper)` per element while training, and by the midpoint
/// `(lower + upper) / 2` at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RReluConfig {
    pub lower: f64,
    pub upper: f64,
    pub training: bool,
}

impl Default for RReluConfig {
    fn default() -> Self {
        Self {
            lower: 1.0 / 8.0,
            upper: 1.0 / 3.0,
            training: false,
        }
    }
}

impl RReluConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lower && self.lower <= self.upper && self.upper < 1.0) {
            return Err(Error::Config(format!(
                "rrelu bounds must satisfy 0 < lower <= upper < 1, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn with_training(mut self, training: bool) -> Self {
        self.training = training;
        self
    }
}

pub fn rrelu<'t, T: Real>(x: Var<'t, T>, cfg: RReluConfig, rng: &mut impl Rng) -> Result<Var<'t, T>> {
    cfg.validate()?;
    let xv = x.value();
    let slopes: Vec<T> = if cfg.training {
        xv.data()
            .iter()
            .map(|&v| {
                if v < T::zero() {
                    T::lit(rng.gen_range(cfg.lower..=cfg.upper))
                } else {
                    T::one()
                }
            })
            .collect()
    } else {
        let mid = T::lit((cfg.lower + cfg.upper) / 2.0);
        xv.data()
            .iter()
            .map(|&v| if v < T::zero() { mid } else { T::one() })
            .collect()
    };
    let out = Tensor::from_fn(xv.shape(), |i| xv.data()[i] * slopes[i]);
    Ok(x.tape().record(&[x], out, move |g, _, _, _| {
        vec![Some(Tensor::from_fn(g.shape(), |i| g.data()[i] * slopes[i]))]
    }))
}

/// Parametric rectifier with one learnable slope shared by all elements.
pub fn prelu<'t, T: Real>(x: Var<'t, T>, slope: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, sv) = (x.value(), slope.value());
    if sv.len() != 1 {
        return Err(Error::Shape(format!("prelu slope must be a scalar, got {:?}", sv.shape())));
    }
    let a = sv.data()[0];
    let out = xv.map(|v| if v < T::zero() { a * v } else { v });
    let sshape = sv.shape().to_vec();
    Ok(x.tape()
        .record(&[x, slope], out, move |g, inputs, _, needs| {
            let x = inputs[0];
            let a = inputs[1].data()[0];
            let dx = needs[0].then(|| {
                Tensor::from_fn(g.shape(), |i| {
                    if x.data()[i] < T::zero() {
                        a * g.data()[i]
                    } else {
                        g.data()[i]
                    }
                })
            });
            let ds: T = x
                .data()
                .iter()
                .zip(g.data())
                .filter(|(&v, _)| v < T::zero())
                .map(|(&v, &gv)| v * gv)
                .sum();
            vec![dx, Some(Tensor::full(&sshape, ds))]
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, project, random_tensor};
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(tape: &Tape<f64>, v: f64) -> Var<'_, f64> {
        tape.param(Tensor::scalar(v))
    }

    #[test]
    fn rrelu_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::new();
        let cfg = RReluConfig::default();
        for training in [false, true] {
            let y = rrelu(scalar(&tape, 1.0), cfg.with_training(training), &mut rng).unwrap();
            assert_eq!(y.value().data(), &[1.0]);
        }
        let y = rrelu(scalar(&tape, -1.0), cfg, &mut rng).unwrap();
        assert!((y.value().data()[0] + 11.0 / 48.0).abs() < 1e-15);
        for _ in 0..200 {
            let y = rrelu(scalar(&tape, -1.0), cfg.with_training(true), &mut rng).unwrap();
            let v = y.value().data()[0];
            assert!((-1.0 / 3.0..=-1.0 / 8.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn rrelu_rejects_bad_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::new();
        let cfg = RReluConfig { lower: 0.5, upper: 0.2, training: false };
        assert!(rrelu(scalar(&tape, 1.0), cfg, &mut rng).is_err());
    }

    #[test]
    fn rrelu_training_reuses_sampled_slope_in_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[3], vec![-1.0, -2.0, 0.5]).unwrap());
        let y = rrelu(x, RReluConfig::default().with_training(true), &mut rng).unwrap();
        let yv = y.value();
        let g = tape.backward(y.sum()).unwrap();
        let gx = g.get(x).unwrap();
        assert!((gx.data()[0] + yv.data()[0]).abs() < 1e-15);
        assert!((2.0 * gx.data()[1] + yv.data()[1]).abs() < 1e-15);
        assert_eq!(gx.data()[2], 1.0);
    }

    #[test]
    fn prelu_examples() {
        let tape = Tape::new();
        let y = prelu(scalar(&tape, -4.0), scalar(&tape, 0.25)).unwrap();
        assert_eq!(y.value().data(), &[-1.0]);

        let x = tape.constant(Tensor::new(&[1], vec![-2.0]).unwrap());
        let s = scalar(&tape, 0.25);
        let y = prelu(x, s).unwrap();
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(s).unwrap().data(), &[-2.0]);

        let x = tape.constant(Tensor::new(&[3], vec![-3.0, 0.0, 2.0]).unwrap());
        let y = prelu(x, scalar(&tape, 0.0)).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // keep inputs away from the kink at zero
        let x = Tensor::from_fn(&[2, 3, 3], |i| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if i % 2 == 0 { v } else { -v }
        });
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        let r = check(&[x.clone()], 1e-5, |_, v| {
            project(rrelu(v[0], RReluConfig::default(), &mut r2.clone())?, 1)
        })
        .unwrap();
        assert!(r.passes(1e-4), "{r:?}");
        let s = random_tensor(&[1], 0.1, 0.4, &mut r2);
        let r = check(&[x, s], 1e-5, |_, v| project(prelu(v[0], v[1])?, 2)).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }
}
