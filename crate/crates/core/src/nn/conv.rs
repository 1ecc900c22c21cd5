//! 2D and 3D cross-correlation through im2col and GEMM.
//!
//! Both ranks share one kernel: a 2D convolution is a 3D one with unit depth.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor, Var};

/// Spatial geometry of one convolution, always expressed in three dims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    pad: [usize; 3],
    stride: usize,
    output: [usize; 3],
}

impl Geometry {
    fn new(
        channels: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        pad: [usize; 3],
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("convolution stride must be positive".into()));
        }
        let mut output = [0; 3];
        for d in 0..3 {
            let padded = input[d] + 2 * pad[d];
            if padded < kernel[d] {
                return Err(Error::Shape(format!(
                    "kernel {:?} does not fit padded input {:?} (padding {:?})",
                    kernel, input, pad
                )));
            }
            if (padded - kernel[d]) % stride != 0 {
                return Err(Error::Shape(format!(
                    "non-integral output size: input {:?}, kernel {:?}, padding {:?}, stride {stride}",
                    input, kernel, pad
                )));
            }
            output[d] = (padded - kernel[d]) / stride + 1;
        }
        Ok(Self {
            channels,
            input,
            kernel,
            pad,
            stride,
            output,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.pad == [0, 0, 0] && self.stride == 1
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
fn valid_range(k: usize, pad: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    // input index = o * stride + k - pad must lie in [0, input)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if input + pad <= k {
        0
    } else {
        ((input + pad - k - 1) / stride + 1).min(output)
    };
    (lo.min(hi), hi)
}

/// Target number of elements in one im2col slab; keeps the slab cache-resident.
const SLAB_ELEMS: usize = 1 << 16;

/// Output lines (one line = all `ox` for a fixed `(oz, oy)`) per slab.
fn lines_per_slab(g: &Geometry) -> usize {
    let per_line = g.col_rows() * g.output[2];
    (SLAB_ELEMS / per_line.max(1)).max(1)
}

/// Columns of output lines `[l0, l1)`; `col` is `rows x ((l1 - l0) * ow)`.
fn im2col<T: Real>(x: &[T], g: &Geometry, l0: usize, l1: usize, col: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let p = (l1 - l0) * ow;
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let (x0, x1) = valid_range(kx, g.pad[2], s, iw, ow);
                    let dst = &mut col[row * p..(row + 1) * p];
                    for (li, line) in (l0..l1).enumerate() {
                        let (oz, oy) = (line / oh, line % oh);
                        let d = &mut dst[li * ow..(li + 1) * ow];
                        let iz = (oz * s + kz) as isize - g.pad[0] as isize;
                        let iy = (oy * s + ky) as isize - g.pad[1] as isize;
                        if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize || x0 >= x1 {
                            d.fill(T::zero());
                            continue;
                        }
                        d[..x0].fill(T::zero());
                        d[x1..].fill(T::zero());
                        let src = &xc[(iz as usize * ih + iy as usize) * iw..];
                        if s == 1 {
                            let ix0 = x0 + kx - g.pad[2];
                            d[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                        } else {
                            for ox in x0..x1 {
                                d[ox] = src[ox * s + kx - g.pad[2]];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds a column slab of lines `[l0, l1)` back into `dx`.
fn col2im<T: Real>(col: &[T], g: &Geometry, l0: usize, l1: usize, dx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let p = (l1 - l0) * ow;
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let (x0, x1) = valid_range(kx, g.pad[2], s, iw, ow);
                    let src = &col[row * p..(row + 1) * p];
                    for (li, line) in (l0..l1).enumerate() {
                        let (oz, oy) = (line / oh, line % oh);
                        let iz = (oz * s + kz) as isize - g.pad[0] as isize;
                        let iy = (oy * s + ky) as isize - g.pad[1] as isize;
                        if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize || x0 >= x1 {
                            continue;
                        }
                        let base = (iz as usize * ih + iy as usize) * iw;
                        let srow = &src[li * ow..(li + 1) * ow];
                        if s == 1 {
                            let ix0 = base + x0 + kx - g.pad[2];
                            for (d, &v) in xc[ix0..ix0 + (x1 - x0)].iter_mut().zip(&srow[x0..x1]) {
                                *d += v;
                            }
                        } else {
                            for ox in x0..x1 {
                                xc[base + ox * s + kx - g.pad[2]] += srow[ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Strided row-major GEMM on sub-matrices: `C[m x n] (ldc) = alpha A (lda) B (ldb) + beta C`.
#[allow(clippy::too_many_arguments)]
fn gemm_sub<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    a_strides: (isize, isize),
    b: &[T],
    b_strides: (isize, isize),
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |(r, c): (isize, isize), rows: usize, cols: usize| (rows - 1) as isize * r + (cols - 1) as isize * c;
    assert!(last(a_strides, m, k) < a.len() as isize, "gemm_sub: A out of bounds");
    assert!(last(b_strides, k, n) < b.len() as isize, "gemm_sub: B out of bounds");
    assert!((m - 1) * ldc + n <= c.len(), "gemm_sub: C out of bounds");
    // SAFETY: the asserts above bound every addressed element of A, B and C,
    // and `c` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn slabs(g: &Geometry) -> impl Iterator<Item = (usize, usize)> {
    let lines = g.output[0] * g.output[1];
    let step = lines_per_slab(g);
    (0..lines).step_by(step).map(move |l0| (l0, (l0 + step).min(lines)))
}

fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: &Geometry, out_ch: usize) -> Tensor<T> {
    let n = x.shape()[0];
    let (rows, p, il) = (g.col_rows(), g.out_len(), g.in_len());
    let ow = g.output[2];
    let items: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x.data()[i * il..(i + 1) * il];
            let mut out = vec![T::zero(); out_ch * p];
            for (o, chunk) in out.chunks_exact_mut(p).enumerate() {
                chunk.fill(b.data()[o]);
            }
            if g.is_pointwise() {
                gemm(false, false, out_ch, p, rows, T::one(), w.data(), xi, T::one(), &mut out);
            } else {
                let mut col = vec![T::zero(); rows * lines_per_slab(g) * ow];
                for (l0, l1) in slabs(g) {
                    let sp = (l1 - l0) * ow;
                    im2col(xi, g, l0, l1, &mut col);
                    gemm_sub(
                        out_ch,
                        sp,
                        rows,
                        w.data(),
                        (rows as isize, 1),
                        &col,
                        (sp as isize, 1),
                        T::one(),
                        &mut out[l0 * ow..],
                        p,
                    );
                }
            }
            out
        })
        .collect();
    let mut shape = vec![n, out_ch];
    shape.extend_from_slice(&g.output);
    Tensor::new(&shape, items.concat()).expect("conv output shape")
}

type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

fn conv_backward<T: Real>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Geometry,
    out_ch: usize,
    needs: &[bool],
) -> ConvGrads<T> {
    let n = x.shape()[0];
    let (rows, p, il) = (g.col_rows(), g.out_len(), g.in_len());
    let ow = g.output[2];
    let per_item: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x.data()[i * il..(i + 1) * il];
            let gi = &grad.data()[i * out_ch * p..(i + 1) * out_ch * p];
            if g.is_pointwise() {
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); out_ch * rows];
                    gemm(false, true, out_ch, rows, p, T::one(), gi, xi, T::zero(), &mut dw);
                    dw
                });
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); il];
                    gemm(true, false, rows, p, out_ch, T::one(), w.data(), gi, T::zero(), &mut dx);
                    dx
                });
                return (dx, dw);
            }
            let mut dw = needs[1].then(|| vec![T::zero(); out_ch * rows]);
            let mut dx = needs[0].then(|| vec![T::zero(); il]);
            let cap = rows * lines_per_slab(g) * ow;
            let mut col = vec![T::zero(); if needs[1] { cap } else { 0 }];
            let mut dcol = vec![T::zero(); if needs[0] { cap } else { 0 }];
            for (l0, l1) in slabs(g) {
                let sp = (l1 - l0) * ow;
                let gs = &gi[l0 * ow..];
                if let Some(dw) = dw.as_mut() {
                    im2col(xi, g, l0, l1, &mut col);
                    // dW += G_slab * col_slab^T
                    gemm_sub(out_ch, rows, sp, gs, (p as isize, 1), &col, (1, sp as isize), T::one(), dw, rows);
                }
                if let Some(dx) = dx.as_mut() {
                    // dcol = W^T * G_slab
                    gemm_sub(rows, sp, out_ch, w.data(), (1, rows as isize), gs, (p as isize, 1), T::zero(), &mut dcol, sp);
                    col2im(&dcol, g, l0, l1, dx);
                }
            }
            (dx, dw)
        })
        .collect();

    let dx = needs[0].then(|| {
        let mut data = Vec::with_capacity(n * il);
        for (dx, _) in &per_item {
            data.extend_from_slice(dx.as_ref().expect("dx computed"));
        }
        Tensor::new(x.shape(), data).expect("dx shape")
    });
    let dw = needs[1].then(|| {
        let mut acc = Tensor::zeros(w.shape());
        for (_, dw) in &per_item {
            for (a, &v) in acc.data_mut().iter_mut().zip(dw.as_ref().expect("dw computed")) {
                *a += v;
            }
        }
        acc
    });
    let db = needs[2].then(|| {
        let mut db = vec![T::zero(); out_ch];
        for item in grad.data().chunks_exact(out_ch * p) {
            for (o, chunk) in item.chunks_exact(p).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        Tensor::new(&[out_ch], db).expect("db shape")
    });
    (dx, dw, db)
}

fn conv_nd<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    stride: usize,
    padding: [usize; 3],
    rank: usize,
) -> Result<Var<'t, T>> {
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    let name = if rank == 2 { "conv2d" } else { "conv3d" };
    if xv.rank() != rank + 2 || wv.rank() != rank + 2 {
        return Err(Error::Shape(format!(
            "{name}: expected rank-{} input and weights, got {:?} and {:?}",
            rank + 2,
            xv.shape(),
            wv.shape()
        )));
    }
    let (c, out_ch) = (xv.shape()[1], wv.shape()[0]);
    if wv.shape()[1] != c {
        return Err(Error::Shape(format!(
            "{name}: input has {c} channels but weights {:?} expect {}",
            wv.shape(),
            wv.shape()[1]
        )));
    }
    if bv.len() != out_ch {
        return Err(Error::Shape(format!(
            "{name}: bias {:?} does not match {out_ch} output channels",
            bv.shape()
        )));
    }
    let lift = |s: &[usize]| -> [usize; 3] {
        if rank == 2 {
            [1, s[0], s[1]]
        } else {
            [s[0], s[1], s[2]]
        }
    };
    let geom = Geometry::new(
        c,
        lift(&xv.shape()[2..]),
        lift(&wv.shape()[2..]),
        padding,
        stride,
    )?;
    let mut out = conv_forward(&xv, &wv, &bv, &geom, out_ch);
    if rank == 2 {
        let s = out.shape().to_vec();
        out = out.reshape(&[s[0], s[1], s[3], s[4]])?;
    }
    Ok(x.tape()
        .record(&[x, weight, bias], out, move |g, inputs, _, needs| {
            let (dx, dw, db) = conv_backward(g, inputs[0], inputs[1], &geom, out_ch, needs);
            vec![dx, dw, db]
        }))
}

/// Cross-correlation of `[N, C, H, W]` with weights `[O, C, kh, kw]` plus bias `[O]`.
pub fn conv2d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    conv_nd(x, weight, bias, stride, [0, padding, padding], 2)
}

/// Cross-correlation of `[N, C, D, H, W]` with weights `[O, C, kd, kh, kw]` plus bias `[O]`.
pub fn conv3d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    conv_nd(x, weight, bias, stride, [padding; 3], 3)
}
