use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// 2x2 max pooling with stride 2 over `[N, C, H, W]`.
///
/// Ties resolve to the lowest linear index inside the window; the gradient
/// flows only to that position.
pub fn maxpool2d<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    if xv.rank() != 4 {
        return Err(Error::Shape(format!("maxpool2d expects [N, C, H, W], got {:?}", xv.shape())));
    }
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2d: spatial size {h}x{w} is not divisible by 2"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = xv.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::new(&[n, c, oh, ow], out)?;
    let in_shape = xv.shape().to_vec();
    Ok(x.tape().record(&[x], out, move |g, _, _, _| {
        let mut d = Tensor::zeros(&in_shape);
        for (&src, &gv) in argmax.iter().zip(g.data()) {
            d.data_mut()[src] += gv;
        }
        vec![Some(d)]
    }))
}

/// Nearest-neighbour upsampling of the trailing `rank` spatial axes.
pub fn upsample_nearest<'t, T: Real>(x: Var<'t, T>, factor: usize, rank: usize) -> Result<Var<'t, T>> {
    let xv = x.value();
    if factor == 0 {
        return Err(Error::Shape("upsample factor must be at least 1".into()));
    }
    if !(rank == 2 || rank == 3) || xv.rank() != rank + 2 {
        return Err(Error::Shape(format!(
            "upsample_nearest: rank {rank} does not fit input {:?}",
            xv.shape()
        )));
    }
    let s = xv.shape();
    let (d, h, w) = if rank == 2 { (1, s[2], s[3]) } else { (s[2], s[3], s[4]) };
    let fd = if rank == 2 { 1 } else { factor };
    let (od, oh, ow) = (d * fd, h * factor, w * factor);
    let planes = s[0] * s[1];
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    for p in 0..planes {
        let src = &xv.data()[p * d * h * w..(p + 1) * d * h * w];
        for z in 0..od {
            for y in 0..oh {
                let row = &src[((z / fd) * h + y / factor) * w..];
                out.extend((0..ow).map(|xx| row[xx / factor]));
            }
        }
    }
    let mut shape = vec![s[0], s[1]];
    if rank == 3 {
        shape.push(od);
    }
    shape.extend([oh, ow]);
    let out = Tensor::new(&shape, out)?;
    let in_shape = s.to_vec();
    Ok(x.tape().record(&[x], out, move |g, _, _, _| {
        let mut dx = Tensor::zeros(&in_shape);
        let gd = g.data();
        let dd = dx.data_mut();
        for p in 0..planes {
            let dst = &mut dd[p * d * h * w..(p + 1) * d * h * w];
            let src = &gd[p * od * oh * ow..(p + 1) * od * oh * ow];
            for z in 0..od {
                for y in 0..oh {
                    let drow = ((z / fd) * h + y / factor) * w;
                    let srow = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                    for (xx, &v) in srow.iter().enumerate() {
                        dst[drow + xx / factor] += v;
                    }
                }
            }
        }
        vec![Some(dx)]
    }))
}

/// Mean over all spatial positions: `[N, C, ...] -> [N, C]`.
pub fn global_avg_pool<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    if xv.rank() < 3 {
        return Err(Error::Shape(format!("global_avg_pool needs spatial axes, got {:?}", xv.shape())));
    }
    let (n, c) = (xv.shape()[0], xv.shape()[1]);
    let sp = xv.len() / (n * c);
    let inv = T::one() / T::from_usize(sp).expect("size fits");
    let out: Vec<T> = xv
        .data()
        .chunks_exact(sp)
        .map(|ch| ch.iter().copied().sum::<T>() * inv)
        .collect();
    let out = Tensor::new(&[n, c], out)?;
    let in_shape = xv.shape().to_vec();
    Ok(x.tape().record(&[x], out, move |g, _, _, _| {
        let mut d = Vec::with_capacity(n * c * sp);
        for &gv in g.data() {
            d.extend(std::iter::repeat(gv * inv).take(sp));
        }
        vec![Some(Tensor::new(&in_shape, d).expect("shape"))]
    }))
}
