use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Running statistics and hyper-parameters of one batch-normalization layer.
///
/// The affine `gamma`/`beta` are trainable parameters held by the owner.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }

    /// Folds batch statistics into the running estimates.
    ///
    /// `batch_var` is the biased batch variance; the running variance tracks
    /// the unbiased estimate.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], count: usize) {
        let m = self.momentum;
        let bessel = if count > 1 {
            T::from_usize(count).expect("fits") / T::from_usize(count - 1).expect("fits")
        } else {
            T::one()
        };
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (T::one() - m) * self.running_mean[c] + m * batch_mean[c];
            self.running_var[c] = (T::one() - m) * self.running_var[c] + m * batch_var[c] * bessel;
        }
    }
}

/// Per-channel statistics of a batch-norm forward pass in training mode.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel the statistics were computed over.
    pub count: usize,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("batchnorm expects [N, C, ...], got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let sp = shape[2..].iter().product::<usize>();
    Ok((n, c, sp))
}

fn check_affine<T: Real>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm: gamma {:?} / beta {:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Training-mode batch normalization over axis 1 using batch statistics.
pub fn batchnorm_train<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let (n, c, sp) = layout(xv.shape())?;
    check_affine(c, &gv, &bv)?;
    if n < 2 {
        return Err(Error::Shape(
            "batchnorm in training mode needs a batch of at least 2".into(),
        ));
    }
    let m = n * sp;
    let mf = T::from_usize(m).expect("fits");
    let d = xv.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let s = &d[(i * c + ch) * sp..(i * c + ch + 1) * sp];
            mean[ch] += s.iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / mf);
    for i in 0..n {
        for ch in 0..c {
            let s = &d[(i * c + ch) * sp..(i * c + ch + 1) * sp];
            let mu = mean[ch];
            var[ch] += s.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / mf);
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); d.len()];
    let mut out = vec![T::zero(); d.len()];
    for i in 0..n {
        for ch in 0..c {
            let r = (i * c + ch) * sp..(i * c + ch + 1) * sp;
            let (g, b) = (gv.data()[ch], bv.data()[ch]);
            for j in r {
                let h = (d[j] - mean[ch]) * inv[ch];
                xhat[j] = h;
                out[j] = h * g + b;
            }
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    let stats = BatchStats {
        mean: mean.clone(),
        var,
        count: m,
    };
    let shape = xv.shape().to_vec();
    let var = x
        .tape()
        .record(&[x, gamma, beta], out, move |g, inputs, _, needs| {
            let gamma = inputs[1].data();
            let gd = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for i in 0..n {
                for ch in 0..c {
                    for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                        dgamma[ch] += gd[j] * xhat[j];
                        dbeta[ch] += gd[j];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); gd.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let k = gamma[ch] * inv[ch] / mf;
                        for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                            dx[j] = k * (mf * gd[j] - dbeta[ch] - xhat[j] * dgamma[ch]);
                        }
                    }
                }
                Tensor::new(&shape, dx).expect("shape")
            });
            vec![
                dx,
                Some(Tensor::new(&[c], dgamma).expect("shape")),
                Some(Tensor::new(&[c], dbeta).expect("shape")),
            ]
        });
    Ok((var, stats))
}

/// Inference-mode batch normalization: a fixed per-channel affine map.
pub fn batchnorm_infer<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    state: &BatchNormState<T>,
) -> Result<Var<'t, T>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let (n, c, sp) = layout(xv.shape())?;
    check_affine(c, &gv, &bv)?;
    if state.running_mean.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm: running statistics have {} channels, input has {c}",
            state.running_mean.len()
        )));
    }
    let inv: Vec<T> = state
        .running_var
        .iter()
        .map(|&v| T::one() / (v + state.eps).sqrt())
        .collect();
    let mean = state.running_mean.clone();
    let d = xv.data();
    let mut out = vec![T::zero(); d.len()];
    for i in 0..n {
        for ch in 0..c {
            let (g, b) = (gv.data()[ch], bv.data()[ch]);
            for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                out[j] = (d[j] - mean[ch]) * inv[ch] * g + b;
            }
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    let shape = xv.shape().to_vec();
    Ok(x.tape()
        .record(&[x, gamma, beta], out, move |g, inputs, _, _| {
            let (x, gamma) = (inputs[0].data(), inputs[1].data());
            let gd = g.data();
            let mut dx = vec![T::zero(); gd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for i in 0..n {
                for ch in 0..c {
                    for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                        dx[j] = gd[j] * gamma[ch] * inv[ch];
                        dgamma[ch] += gd[j] * (x[j] - mean[ch]) * inv[ch];
                        dbeta[ch] += gd[j];
                    }
                }
            }
            vec![
                Some(Tensor::new(&shape, dx).expect("shape")),
                Some(Tensor::new(&[c], dgamma).expect("shape")),
                Some(Tensor::new(&[c], dbeta).expect("shape")),
            ]
        }))
}
