use std::ops::Range;

use super::{check_same_shape, gemm, Real, Tensor, Var};
use crate::error::{Error, Result};

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i]))
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("add", a.shape(), b.shape())?;
        let out = zip_map(&a, &b, |x, y| x + y);
        Ok(self.tape().record(&[self, other], out, |g, _, _, _| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("sub", a.shape(), b.shape())?;
        let out = zip_map(&a, &b, |x, y| x - y);
        Ok(self.tape().record(&[self, other], out, |g, _, _, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same_shape("mul", a.shape(), b.shape())?;
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self
            .tape()
            .record(&[self, other], out, |g, inputs, _, needs| {
                let (a, b) = (inputs[0], inputs[1]);
                vec![
                    needs[0].then(|| zip_map(g, b, |g, b| g * b)),
                    needs[1].then(|| zip_map(g, a, |g, a| g * a)),
                ]
            }))
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * s);
        self.tape()
            .record(&[self], out, move |g, _, _, _| vec![Some(g.map(|v| v * s))])
    }

    pub fn add_scalar(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + s);
        self.tape()
            .record(&[self], out, |g, _, _, _| vec![Some(g.clone())])
    }

    pub fn square(self) -> Var<'t, T> {
        let out = self.value().map(|v| v * v);
        self.tape().record(&[self], out, |g, inputs, _, _| {
            let two = T::lit(2.0);
            vec![Some(zip_map(g, inputs[0], |g, x| two * g * x))]
        })
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul: cannot multiply {:?} by {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, false, m, n, k, T::one(), a.data(), b.data(), T::zero(), out.data_mut());
        Ok(self
            .tape()
            .record(&[self, other], out, move |g, inputs, _, needs| {
                let (a, b) = (inputs[0], inputs[1]);
                let da = needs[0].then(|| {
                    let mut d = Tensor::zeros(&[m, k]);
                    gemm(false, true, m, k, n, T::one(), g.data(), b.data(), T::zero(), d.data_mut());
                    d
                });
                let db = needs[1].then(|| {
                    let mut d = Tensor::zeros(&[k, n]);
                    gemm(true, false, k, n, m, T::one(), a.data(), g.data(), T::zero(), d.data_mut());
                    d
                });
                vec![da, db]
            }))
    }

    /// Adds a length-`f` bias to every row of an `[n, f]` matrix.
    pub fn add_row_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, b) = (self.value(), bias.value());
        if x.rank() != 2 || b.len() != x.shape()[1] {
            return Err(Error::Shape(format!(
                "add_row_bias: bias {:?} does not fit rows of {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let f = x.shape()[1];
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] + b.data()[i % f]);
        let bshape = b.shape().to_vec();
        Ok(self
            .tape()
            .record(&[self, bias], out, move |g, _, _, needs| {
                let db = needs[1].then(|| {
                    let mut d = vec![T::zero(); f];
                    for row in g.data().chunks_exact(f) {
                        for (acc, &v) in d.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::new(&bshape, d).expect("bias shape")
                });
                vec![Some(g.clone()), db]
            }))
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let s: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        self.tape()
            .record(&[self], Tensor::scalar(s), move |g, _, _, _| {
                vec![Some(Tensor::full(&shape, g.data()[0]))]
            })
    }

    /// Arithmetic mean of all elements as a single-element tensor.
    pub fn mean(self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let n = T::from_usize(x.len()).expect("length fits");
        let s: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        Ok(self
            .tape()
            .record(&[self], Tensor::scalar(s / n), move |g, _, _, _| {
                vec![Some(Tensor::full(&shape, g.data()[0] / n))]
            }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = x.as_ref().clone().reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.tape().record(&[self], out, move |g, _, _, _| {
            vec![Some(g.clone().reshape(&orig).expect("same element count"))]
        }))
    }

    /// Columns `range` of an `[n, f]` matrix.
    pub fn slice_cols(self, range: Range<usize>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 || range.end > x.shape()[1] || range.start >= range.end {
            return Err(Error::Shape(format!(
                "slice_cols: columns {range:?} out of {:?}",
                x.shape()
            )));
        }
        let (n, f) = (x.shape()[0], x.shape()[1]);
        let w = range.len();
        let mut out = Vec::with_capacity(n * w);
        for row in x.data().chunks_exact(f) {
            out.extend_from_slice(&row[range.clone()]);
        }
        let out = Tensor::new(&[n, w], out)?;
        Ok(self.tape().record(&[self], out, move |g, _, _, _| {
            let mut d = Tensor::zeros(&[n, f]);
            for (drow, grow) in d.data_mut().chunks_exact_mut(f).zip(g.data().chunks_exact(w)) {
                drow[range.clone()].copy_from_slice(grow);
            }
            vec![Some(d)]
        }))
    }

    /// Joins `[n, a]` and `[n, b]` into `[n, a + b]`.
    pub fn concat_cols(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, y) = (self.value(), other.value());
        if x.rank() != 2 || y.rank() != 2 || x.shape()[0] != y.shape()[0] {
            return Err(Error::Shape(format!(
                "concat_cols: cannot join {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let (n, a, b) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = Vec::with_capacity(n * (a + b));
        for (rx, ry) in x.data().chunks_exact(a).zip(y.data().chunks_exact(b)) {
            out.extend_from_slice(rx);
            out.extend_from_slice(ry);
        }
        let out = Tensor::new(&[n, a + b], out)?;
        Ok(self
            .tape()
            .record(&[self, other], out, move |g, _, _, _| {
                let mut dx = Vec::with_capacity(n * a);
                let mut dy = Vec::with_capacity(n * b);
                for row in g.data().chunks_exact(a + b) {
                    dx.extend_from_slice(&row[..a]);
                    dy.extend_from_slice(&row[a..]);
                }
                vec![
                    Some(Tensor::new(&[n, a], dx).expect("shape")),
                    Some(Tensor::new(&[n, b], dy).expect("shape")),
                ]
            }))
    }

    /// Identity in the forward pass; zeroes the gradient flowing back into
    /// columns `range` of an `[n, f]` matrix.
    pub fn suppress_grad_cols(self, range: Range<usize>) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 || range.end > x.shape()[1] {
            return Err(Error::Shape(format!(
                "suppress_grad_cols: columns {range:?} out of {:?}",
                x.shape()
            )));
        }
        let f = x.shape()[1];
        let out = x.as_ref().clone();
        Ok(self.tape().record(&[self], out, move |g, _, _, _| {
            let mut d = g.clone();
            for row in d.data_mut().chunks_exact_mut(f) {
                row[range.clone()].iter_mut().for_each(|v| *v = T::zero());
            }
            vec![Some(d)]
        }))
    }
}
