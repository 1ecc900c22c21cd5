//! Spatial transformer: a localisation network regresses an affine map, the
//! grid generator maps target coordinates through it, and a bilinear sampler
//! reads the source feature map at the resulting points.
//!
//! Coordinates are normalized to `[-1, 1]` with the extremes on the centers
//! of the corner pixels, so the identity transform samples every pixel
//! exactly. Samples outside the source read zeros.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::layers::{BatchNorm, Conv, ConvBlock, Forward, ParamStore};
use crate::nn::{self, BatchNormState};
use crate::tensor::{Real, Tensor, Var};

/// Row-major `[t11, t12, t13, t21, t22, t23]`.
pub const IDENTITY_THETA: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Evenly spaced target coordinates spanning `[-1, 1]` inclusive.
pub fn target_coords(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect()
}

/// Source sample points `theta * (x_t, y_t, 1)` for every target grid point.
///
/// `theta` is `[N, 6]`; the result is `[N, out_h, out_w, 2]` holding `(x_s, y_s)`.
pub fn affine_grid<'t, T: Real>(theta: Var<'t, T>, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
    let th = theta.value();
    if th.rank() != 2 || th.shape()[1] != 6 {
        return Err(Error::Shape(format!("affine_grid expects theta [N, 6], got {:?}", th.shape())));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("affine_grid output size must be positive".into()));
    }
    let n = th.shape()[0];
    let xs: Vec<T> = target_coords(out_w).into_iter().map(T::lit).collect();
    let ys: Vec<T> = target_coords(out_h).into_iter().map(T::lit).collect();
    let mut out = Vec::with_capacity(n * out_h * out_w * 2);
    for t in th.data().chunks_exact(6) {
        for &y in &ys {
            for &x in &xs {
                out.push(t[0] * x + t[1] * y + t[2]);
                out.push(t[3] * x + t[4] * y + t[5]);
            }
        }
    }
    let out = Tensor::new(&[n, out_h, out_w, 2], out)?;
    Ok(theta.tape().record(&[theta], out, move |g, _, _, _| {
        let mut d = vec![T::zero(); n * 6];
        for (b, gb) in g.data().chunks_exact(out_h * out_w * 2).enumerate() {
            let db = &mut d[b * 6..b * 6 + 6];
            let mut k = 0;
            for &y in &ys {
                for &x in &xs {
                    let (gx, gy) = (gb[k], gb[k + 1]);
                    db[0] += gx * x;
                    db[1] += gx * y;
                    db[2] += gx;
                    db[3] += gy * x;
                    db[4] += gy * y;
                    db[5] += gy;
                    k += 2;
                }
            }
        }
        vec![Some(Tensor::new(&[n, 6], d).expect("theta shape"))]
    }))
}

struct Tap<T> {
    x0: isize,
    y0: isize,
    wx: T,
    wy: T,
}

fn tap<T: Real>(xs: T, ys: T, h: usize, w: usize) -> Tap<T> {
    let half = T::lit(0.5);
    let px = (xs + T::one()) * half * T::from_usize(w - 1).expect("fits");
    let py = (ys + T::one()) * half * T::from_usize(h - 1).expect("fits");
    let fx = px.floor();
    let fy = py.floor();
    Tap {
        x0: fx.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy.to_isize().unwrap_or(isize::MIN / 2),
        wx: px - fx,
        wy: py - fy,
    }
}

#[inline]
fn at<T: Real>(plane: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

/// Bilinear interpolation of `[N, C, H, W]` at grid `[N, H', W', 2]`.
pub fn bilinear_sample<'t, T: Real>(x: Var<'t, T>, grid: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xv, gv) = (x.value(), grid.value());
    if xv.rank() != 4 || gv.rank() != 4 || gv.shape()[3] != 2 {
        return Err(Error::Shape(format!(
            "bilinear_sample expects [N, C, H, W] and [N, H', W', 2], got {:?} and {:?}",
            xv.shape(),
            gv.shape()
        )));
    }
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    if gv.shape()[0] != n {
        return Err(Error::Shape(format!(
            "bilinear_sample: grid batch {} does not match input batch {n}",
            gv.shape()[0]
        )));
    }
    let (oh, ow) = (gv.shape()[1], gv.shape()[2]);
    let p = oh * ow;
    let mut out = vec![T::zero(); n * c * p];
    for b in 0..n {
        let gb = &gv.data()[b * p * 2..(b + 1) * p * 2];
        for ch in 0..c {
            let plane = &xv.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let dst = &mut out[(b * c + ch) * p..(b * c + ch + 1) * p];
            for (k, d) in dst.iter_mut().enumerate() {
                let t = tap(gb[2 * k], gb[2 * k + 1], h, w);
                let (ax, ay) = (T::one() - t.wx, T::one() - t.wy);
                *d = at(plane, h, w, t.y0, t.x0) * ax * ay
                    + at(plane, h, w, t.y0, t.x0 + 1) * t.wx * ay
                    + at(plane, h, w, t.y0 + 1, t.x0) * ax * t.wy
                    + at(plane, h, w, t.y0 + 1, t.x0 + 1) * t.wx * t.wy;
            }
        }
    }
    let out = Tensor::new(&[n, c, oh, ow], out)?;
    Ok(x.tape()
        .record(&[x, grid], out, move |g, inputs, _, needs| {
            let (xv, gv) = (inputs[0], inputs[1]);
            let mut dx = needs[0].then(|| vec![T::zero(); xv.len()]);
            let mut dgrid = needs[1].then(|| vec![T::zero(); gv.len()]);
            let sx = T::lit(0.5) * T::from_usize(w - 1).expect("fits");
            let sy = T::lit(0.5) * T::from_usize(h - 1).expect("fits");
            let inside = |y: isize, x: isize| y >= 0 && x >= 0 && y < h as isize && x < w as isize;
            for b in 0..n {
                let gb = &gv.data()[b * p * 2..(b + 1) * p * 2];
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    let plane = &xv.data()[base..base + h * w];
                    let go = &g.data()[(b * c + ch) * p..(b * c + ch + 1) * p];
                    for k in 0..p {
                        let t = tap(gb[2 * k], gb[2 * k + 1], h, w);
                        let (ax, ay) = (T::one() - t.wx, T::one() - t.wy);
                        let gk = go[k];
                        if let Some(dx) = dx.as_mut() {
                            for (yy, xx, wgt) in [
                                (t.y0, t.x0, ax * ay),
                                (t.y0, t.x0 + 1, t.wx * ay),
                                (t.y0 + 1, t.x0, ax * t.wy),
                                (t.y0 + 1, t.x0 + 1, t.wx * t.wy),
                            ] {
                                if inside(yy, xx) {
                                    dx[base + yy as usize * w + xx as usize] += gk * wgt;
                                }
                            }
                        }
                        if let Some(dg) = dgrid.as_mut() {
                            let v00 = at(plane, h, w, t.y0, t.x0);
                            let v01 = at(plane, h, w, t.y0, t.x0 + 1);
                            let v10 = at(plane, h, w, t.y0 + 1, t.x0);
                            let v11 = at(plane, h, w, t.y0 + 1, t.x0 + 1);
                            let dpx = ay * (v01 - v00) + t.wy * (v11 - v10);
                            let dpy = ax * (v10 - v00) + t.wx * (v11 - v01);
                            dg[b * p * 2 + 2 * k] += gk * dpx * sx;
                            dg[b * p * 2 + 2 * k + 1] += gk * dpy * sy;
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::new(xv.shape(), d).expect("shape")),
                dgrid.map(|d| Tensor::new(gv.shape(), d).expect("shape")),
            ]
        }))
}

/// Which of the two localisation network layouts to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalisationKind {
    /// Four 5x5 convolutions, the first three followed by 2x2 max pooling.
    First,
    /// 5x5, 5x5 and 6x6 convolutions, the last two followed by 2x2 max pooling.
    Second,
}

#[derive(Debug, Clone, PartialEq)]
struct LocStage {
    block: ConvBlock,
    pool: bool,
}

/// Regresses one affine transform per batch item from a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalisationNet {
    kind: LocalisationKind,
    in_channels: usize,
    in_size: usize,
    stages: Vec<LocStage>,
    head: crate::model::layers::Linear,
}

impl LocalisationNet {
    /// Builds the network for a square `in_size` input with `in_channels`
    /// channels; every convolution emits `width` channels.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: LocalisationKind,
        store: &mut ParamStore,
        bn_states: &mut Vec<BatchNormState<f32>>,
        name: &str,
        in_channels: usize,
        in_size: usize,
        width: usize,
        use_batchnorm: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // (kernel, padding, pool)
        let plan: &[(usize, usize, bool)] = match kind {
            LocalisationKind::First => &[(5, 2, true), (5, 2, true), (5, 2, true), (5, 2, false)],
            LocalisationKind::Second => &[(5, 2, false), (5, 1, true), (6, 0, true)],
        };
        let mut size = in_size;
        let mut ch = in_channels;
        let mut stages = Vec::new();
        for (i, &(k, pad, pool)) in plan.iter().enumerate() {
            if size + 2 * pad < k {
                return Err(Error::Config(format!(
                    "{name}: input {in_size} too small for localisation stage {i}"
                )));
            }
            size = size + 2 * pad - k + 1;
            if pool {
                if size % 2 != 0 {
                    return Err(Error::Config(format!(
                        "{name}: stage {i} output {size} cannot be max-pooled (input size {in_size})"
                    )));
                }
                size /= 2;
            }
            let lname = format!("{name}.conv{}", i + 1);
            let conv = Conv::new(store, &lname, 2, ch, width, k, pad, rng);
            let bn = use_batchnorm.then(|| BatchNorm::new(store, bn_states, &format!("{lname}.bn"), width));
            stages.push(LocStage {
                block: ConvBlock { conv, bn, rrelu: false },
                pool,
            });
            ch = width;
        }
        if size == 0 {
            return Err(Error::Config(format!("{name}: input {in_size} collapses to nothing")));
        }
        let weight = store.add(format!("{name}.head.weight"), Tensor::zeros(&[width, 6]));
        let bias = store.add(
            format!("{name}.head.bias"),
            Tensor::new(&[6], IDENTITY_THETA.iter().map(|&v| v as f32).collect())?,
        );
        Ok(Self {
            kind,
            in_channels,
            in_size,
            stages,
            head: crate::model::layers::Linear { weight, bias },
        })
    }

    pub fn kind(&self) -> LocalisationKind {
        self.kind
    }

    /// Affine parameters `[N, 6]` for a `[N, C, S, S]` input.
    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels || s[2] != self.in_size || s[3] != self.in_size {
            return Err(Error::Shape(format!(
                "localisation net expects [N, {}, {}, {}], got {s:?}",
                self.in_channels, self.in_size, self.in_size
            )));
        }
        let mut y = x;
        for st in &self.stages {
            y = st.block.forward(f, y)?;
            if st.pool {
                y = nn::maxpool2d(y)?;
            }
        }
        let pooled = nn::global_avg_pool(y)?;
        self.head.forward(f, pooled)
    }
}

/// Localisation net plus grid generator and sampler emitting a map of half
/// the input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTransformer {
    pub loc: LocalisationNet,
    pub out_size: usize,
}

impl SpatialTransformer {
    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let theta = self.loc.forward(f, x)?;
        let grid = affine_grid(theta, self.out_size, self.out_size)?;
        bilinear_sample(x, grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, project, random_tensor};
    use crate::nn::RReluConfig;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn theta(tape: &Tape<f64>, t: [f64; 6]) -> Var<'_, f64> {
        tape.param(Tensor::new(&[1, 6], t.to_vec()).unwrap())
    }

    fn grid_xy(g: &Tensor<f64>, w: usize, y: usize, x: usize) -> (f64, f64) {
        let k = (y * w + x) * 2;
        (g.data()[k], g.data()[k + 1])
    }

    #[test]
    fn identity_grid_is_the_target_grid() {
        let tape = Tape::new();
        let g = affine_grid(theta(&tape, IDENTITY_THETA), 3, 3).unwrap().value();
        for (j, want) in [-1.0, 0.0, 1.0].iter().enumerate() {
            assert_eq!(grid_xy(&g, 3, 0, j).0, *want);
            assert_eq!(grid_xy(&g, 3, j, 0).1, *want);
        }
    }

    #[test]
    fn translation_and_scale_examples() {
        let tape = Tape::new();
        let g0 = affine_grid(theta(&tape, IDENTITY_THETA), 4, 5).unwrap().value();
        let gt = affine_grid(theta(&tape, [1.0, 0.0, 0.5, 0.0, 1.0, 0.0]), 4, 5).unwrap().value();
        let gs = affine_grid(theta(&tape, [0.5, 0.0, 0.0, 0.0, 0.5, 0.0]), 4, 5).unwrap().value();
        for y in 0..4 {
            for x in 0..5 {
                let (x0, y0) = grid_xy(&g0, 5, y, x);
                let (xt, yt) = grid_xy(&gt, 5, y, x);
                assert_eq!((xt, yt), (x0 + 0.5, y0));
                let (xs, ys) = grid_xy(&gs, 5, y, x);
                assert_eq!((xs, ys), (0.5 * x0, 0.5 * y0));
            }
        }
        assert_eq!(grid_xy(&gs, 5, 0, 0), (-0.5, -0.5));
        assert_eq!(grid_xy(&gs, 5, 3, 4), (0.5, 0.5));
    }

    #[test]
    fn grid_is_linear_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
        let tape = Tape::new();
        let grid = |t: &[f64]| {
            affine_grid(tape.constant(Tensor::new(&[1, 6], t.to_vec()).unwrap()), 3, 4)
                .unwrap()
                .value()
        };
        let (g1, g2, gm) = (grid(&t1), grid(&t2), grid(&mix));
        for i in 0..gm.len() {
            assert!((gm.data()[i] - (a * g1.data()[i] + b * g2.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_sampling_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_tensor(&[2, 3, 5, 6], -1.0, 1.0, &mut rng);
        let tape = Tape::new();
        let th = tape.constant(Tensor::new(&[2, 6], [IDENTITY_THETA, IDENTITY_THETA].concat()).unwrap());
        let g = affine_grid(th, 5, 6).unwrap();
        let out = bilinear_sample(tape.constant(img.clone()), g).unwrap().value();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn midpoint_sample_averages_neighbours() {
        let tape = Tape::new();
        let img = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap());
        let grid = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 0.0]).unwrap());
        // a 1-pixel-high map keeps y at its only row
        let out = bilinear_sample(img, grid).unwrap().value();
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn out_of_range_samples_read_zero() {
        let tape = Tape::new();
        let img = tape.constant(Tensor::<f64>::full(&[1, 1, 3, 3], 1.0));
        let grid = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![5.0, 5.0]).unwrap());
        assert_eq!(bilinear_sample(img, grid).unwrap().value().data(), &[0.0]);
    }

    #[test]
    fn batch_mismatch_is_rejected() {
        let tape = Tape::new();
        let img = tape.constant(Tensor::<f64>::zeros(&[2, 1, 3, 3]));
        let grid = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(bilinear_sample(img, grid).is_err());
    }

    #[test]
    fn double_translation_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (9, 9);
        let img = random_tensor(&[1, 1, h, w], -1.0, 1.0, &mut rng);
        let t = 0.25; // one pixel in normalized units for w = 9
        let tape = Tape::new();
        fn shift<'t>(x: Var<'t, f64>, d: f64, h: usize, w: usize) -> Var<'t, f64> {
            let th = x.tape().constant(Tensor::new(&[1, 6], vec![1.0, 0.0, d, 0.0, 1.0, 0.0]).unwrap());
            bilinear_sample(x, affine_grid(th, h, w).unwrap()).unwrap()
        }
        let x = tape.constant(img);
        let twice = shift(shift(x, t, h, w), t, h, w).value();
        let once = shift(x, 2.0 * t, h, w).value();
        for y in 0..h {
            for xx in 0..w - 2 {
                let k = y * w + xx;
                assert!((twice.data()[k] - once.data()[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn sampler_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..3 {
            let img = random_tensor(&[2, 2, 5, 4], -1.0, 1.0, &mut rng);
            let th = Tensor::from_fn(&[2, 6], |i| IDENTITY_THETA[i % 6] + rng.gen_range(-0.3..0.3));
            let r = check(&[img, th], 1e-6, |_, v| {
                let g = affine_grid(v[1], 3, 4)?;
                project(bilinear_sample(v[0], g)?, trial)
            })
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    fn loc_fixture(kind: LocalisationKind, ch: usize, size: usize) -> (ParamStore, Vec<BatchNormState<f32>>, LocalisationNet) {
        let mut store = ParamStore::default();
        let mut bn = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = LocalisationNet::new(kind, &mut store, &mut bn, "loc", ch, size, 4, true, &mut rng).unwrap();
        (store, bn, net)
    }

    #[test]
    fn fresh_localisation_net_emits_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (kind, size) in [(LocalisationKind::First, 32), (LocalisationKind::Second, 16), (LocalisationKind::Second, 40)] {
            let (store, bn, net) = loc_fixture(kind, 3, size);
            let tape = Tape::new();
            let f = Forward::new(&tape, &store, &bn, RReluConfig::default(), true, 0);
            let x = tape.constant(random_tensor(&[3, 3, size, size], -1.0, 1.0, &mut rng).cast());
            let th = net.forward(&f, x).unwrap().value();
            assert_eq!(th.shape(), &[3, 6]);
            for row in th.data().chunks(6) {
                for (a, b) in row.iter().zip(IDENTITY_THETA) {
                    assert_eq!(*a as f64, b);
                }
            }
        }
    }

    #[test]
    fn localisation_rejects_wrong_input_size() {
        let (store, bn, net) = loc_fixture(LocalisationKind::First, 3, 32);
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, &bn, RReluConfig::default(), false, 0);
        let x = tape.constant(Tensor::zeros(&[1, 3, 16, 16]));
        assert!(net.forward(&f, x).is_err());
    }

    #[test]
    fn gradient_reaches_localisation_convs_through_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut store, bn, net) = loc_fixture(LocalisationKind::First, 2, 16);
        let stn = SpatialTransformer { loc: net, out_size: 8 };
        let xv: Tensor<f32> = random_tensor(&[2, 2, 16, 16], -1.0, 1.0, &mut rng).cast();
        let grads = |store: &ParamStore| {
            let tape = Tape::new();
            let f = Forward::new(&tape, store, &bn, RReluConfig::default(), true, 0);
            let y = stn.forward(&f, tape.constant(xv.clone())).unwrap();
            let w = tape.constant(Tensor::from_fn(&y.shape(), |i| ((i * 7919) % 13) as f32 - 6.0));
            let loss = y.mul(w).unwrap().sum();
            let g = tape.backward(loss).unwrap();
            f.used_params()
                .into_iter()
                .map(|(id, v)| (store.get(id).name.clone(), g.get(v).cloned()))
                .collect::<Vec<_>>()
        };
        let first = grads(&store);
        let head = first.iter().find(|(n, _)| n == "loc.head.weight").unwrap();
        assert!(head.1.as_ref().unwrap().data().iter().any(|&v| v != 0.0));
        // take a plain gradient step on the head so the conv path opens up
        for (name, g) in &first {
            if name == "loc.head.weight" {
                let id = store.iter().find(|(_, p)| &p.name == name).unwrap().0;
                let p = store.get_mut(id);
                for (v, gv) in p.value.data_mut().iter_mut().zip(g.as_ref().unwrap().data()) {
                    *v -= 1e-2 * gv;
                }
            }
        }
        let second = grads(&store);
        let conv = second.iter().find(|(n, _)| n == "loc.conv1.weight").unwrap();
        assert!(conv.1.as_ref().unwrap().data().iter().any(|&v| v != 0.0));
    }
}
