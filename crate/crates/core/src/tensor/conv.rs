//! Spatial operations on `[N, C, H, W]` tensors.

use super::gemm::gemm;
use super::{dims4, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Unfold one `[C, H, W]` image into a `[C*kh*kw, out_h*out_w]` matrix.
fn im2col(img: &[f64], g: &Geometry, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
fn col2im(cols: &[f64], g: &Geometry, img: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &Geometry) -> bool {
    g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::shape(op, b.shape(), &[channels]));
        }
    }
    Ok(())
}

fn bias_grad(grad: &[f64], n: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; channels];
    for i in 0..n {
        for (c, acc) in gb.iter_mut().enumerate() {
            let off = (i * channels + c) * plane;
            *acc += grad[off..off + plane].iter().sum::<f64>();
        }
    }
    gb
}

impl Tensor {
    /// 2-D cross-correlation. `weight` is `[C_out, C_in, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        let [n, ci, h, w] = dims4("conv2d", self)?;
        let [co, wci, kh, kw] = dims4("conv2d", weight)?;
        if wci != ci {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        if stride == 0 {
            return Err(Error::domain("conv2d", "stride must be positive"));
        }
        check_bias("conv2d", bias, co)?;
        let (Some(oh), Some(ow)) = (out_extent(h, kh, stride, padding), out_extent(w, kw, stride, padding)) else {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        };
        let g = Geometry {
            channels: ci,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad: padding,
            out_h: oh,
            out_w: ow,
        };
        let (k, p) = (g.rows(), g.cols());
        let in_plane = ci * h * w;
        let out_plane = co * p;
        let mut out = vec![0.0; n * out_plane];
        {
            let x = self.data();
            let wt = weight.data();
            let mut cols = vec![0.0; if is_pointwise(&g) { 0 } else { k * p }];
            for i in 0..n {
                let img = &x[i * in_plane..(i + 1) * in_plane];
                let dst = &mut out[i * out_plane..(i + 1) * out_plane];
                if let Some(b) = bias {
                    for (c, &bv) in b.data().iter().enumerate() {
                        dst[c * p..(c + 1) * p].fill(bv);
                    }
                }
                let beta = if bias.is_some() { 1.0 } else { 0.0 };
                if is_pointwise(&g) {
                    gemm(co, k, p, &wt, false, img, false, beta, dst);
                } else {
                    im2col(img, &g, &mut cols);
                    gemm(co, k, p, &wt, false, &cols, false, beta, dst);
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(vec![n, co, oh, ow], out, "conv2d", parents, move |ctx| {
            let x = ctx.parents[0].data();
            let wt = ctx.parents[1].data();
            let mut gx = ctx.needs[0].then(|| vec![0.0; n * in_plane]);
            let mut gw = ctx.needs[1].then(|| vec![0.0; co * k]);
            let mut cols = vec![0.0; k * p];
            let mut dcols = vec![0.0; if gx.is_some() && !is_pointwise(&g) { k * p } else { 0 }];
            for i in 0..n {
                let gout = &ctx.grad[i * out_plane..(i + 1) * out_plane];
                let img = &x[i * in_plane..(i + 1) * in_plane];
                if let Some(gw) = gw.as_mut() {
                    if is_pointwise(&g) {
                        gemm(co, p, k, gout, false, img, true, 1.0, gw);
                    } else {
                        im2col(img, &g, &mut cols);
                        gemm(co, p, k, gout, false, &cols, true, 1.0, gw);
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[i * in_plane..(i + 1) * in_plane];
                    if is_pointwise(&g) {
                        gemm(k, co, p, &wt, true, gout, false, 1.0, dst);
                    } else {
                        gemm(k, co, p, &wt, true, gout, false, 0.0, &mut dcols);
                        col2im(&dcols, &g, dst);
                    }
                }
            }
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.needs[2].then(|| bias_grad(ctx.grad, n, co, p)));
            }
            grads
        }))
    }

    /// Transposed convolution (the adjoint of [`Tensor::conv2d`] with the
    /// same stride and padding). `weight` is `[C_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let [n, ci, h, w] = dims4("conv_transpose2d", self)?;
        let [wci, co, kh, kw] = dims4("conv_transpose2d", weight)?;
        if wci != ci {
            return Err(Error::shape("conv_transpose2d", self.shape(), weight.shape()));
        }
        if stride == 0 {
            return Err(Error::domain("conv_transpose2d", "stride must be positive"));
        }
        check_bias("conv_transpose2d", bias, co)?;
        let oh = ((h - 1) * stride + kh).checked_sub(2 * padding);
        let ow = ((w - 1) * stride + kw).checked_sub(2 * padding);
        let (Some(oh), Some(ow)) = (oh.filter(|&v| v > 0), ow.filter(|&v| v > 0)) else {
            return Err(Error::shape("conv_transpose2d", self.shape(), weight.shape()));
        };
        // Geometry of the equivalent forward convolution, from output to input.
        let g = Geometry {
            channels: co,
            height: oh,
            width: ow,
            kh,
            kw,
            stride,
            pad: padding,
            out_h: h,
            out_w: w,
        };
        if out_extent(oh, kh, stride, padding) != Some(h) || out_extent(ow, kw, stride, padding) != Some(w) {
            return Err(Error::shape("conv_transpose2d", self.shape(), weight.shape()));
        }
        let (k, p) = (g.rows(), g.cols());
        let in_plane = ci * p;
        let out_plane = co * oh * ow;
        let mut out = vec![0.0; n * out_plane];
        {
            let x = self.data();
            let wt = weight.data();
            let mut cols = vec![0.0; k * p];
            for i in 0..n {
                let img = &x[i * in_plane..(i + 1) * in_plane];
                gemm(k, ci, p, &wt, true, img, false, 0.0, &mut cols);
                let dst = &mut out[i * out_plane..(i + 1) * out_plane];
                col2im(&cols, &g, dst);
                if let Some(b) = bias {
                    for (c, &bv) in b.data().iter().enumerate() {
                        dst[c * oh * ow..(c + 1) * oh * ow].iter_mut().for_each(|v| *v += bv);
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(vec![n, co, oh, ow], out, "conv_transpose2d", parents, move |ctx| {
            let x = ctx.parents[0].data();
            let wt = ctx.parents[1].data();
            let mut gx = ctx.needs[0].then(|| vec![0.0; n * in_plane]);
            let mut gw = ctx.needs[1].then(|| vec![0.0; ci * k]);
            let mut gcols = vec![0.0; k * p];
            for i in 0..n {
                im2col(&ctx.grad[i * out_plane..(i + 1) * out_plane], &g, &mut gcols);
                if let Some(gx) = gx.as_mut() {
                    gemm(ci, k, p, &wt, false, &gcols, false, 0.0, &mut gx[i * in_plane..(i + 1) * in_plane]);
                }
                if let Some(gw) = gw.as_mut() {
                    gemm(ci, p, k, &x[i * in_plane..(i + 1) * in_plane], false, &gcols, true, 1.0, gw);
                }
            }
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.needs[2].then(|| bias_grad(ctx.grad, n, co, oh * ow)));
            }
            grads
        }))
    }

    /// Non-overlapping max pooling with a `k x k` window.
    pub fn max_pool2d(&self, k: usize) -> Result<Tensor> {
        let [n, c, h, w] = dims4("max_pool2d", self)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::domain(
                "max_pool2d",
                format!("spatial size {h}x{w} not divisible by window {k}"),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        {
            let x = self.data();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + oy * k * w + ox * k;
                        for dy in 0..k {
                            for dx in 0..k {
                                let idx = base + (oy * k + dy) * w + ox * k + dx;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let numel = self.numel();
        Ok(Tensor::from_op(vec![n, c, oh, ow], out, "max_pool2d", vec![self.clone()], move |ctx| {
            let mut gx = vec![0.0; numel];
            for (&g, &i) in ctx.grad.iter().zip(&argmax) {
                gx[i] += g;
            }
            vec![Some(gx)]
        }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest2d(&self, factor: usize) -> Result<Tensor> {
        let [n, c, h, w] = dims4("upsample_nearest2d", self)?;
        if factor == 0 {
            return Err(Error::domain("upsample_nearest2d", "factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        {
            let x = self.data();
            for plane in 0..n * c {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                for oy in 0..oh {
                    let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
                    out.extend((0..ow).map(|ox| row[ox / factor]));
                }
            }
        }
        let numel = self.numel();
        Ok(Tensor::from_op(vec![n, c, oh, ow], out, "upsample_nearest2d", vec![self.clone()], move |ctx| {
            let mut gx = vec![0.0; numel];
            for plane in 0..n * c {
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                let src = &ctx.grad[plane * oh * ow..(plane + 1) * oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        dst[(oy / factor) * w + ox / factor] += src[oy * ow + ox];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Per-sample, per-channel normalization over the spatial plane, with
    /// no learned affine transform.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor> {
        let [n, c, h, w] = dims4("instance_norm", self)?;
        let plane = h * w;
        let mut out = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; n * c];
        {
            let x = self.data();
            for (pi, inv) in inv_std.iter_mut().enumerate() {
                let src = &x[pi * plane..(pi + 1) * plane];
                let mean = src.iter().sum::<f64>() / plane as f64;
                let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
                *inv = 1.0 / (var + eps).sqrt();
                for (o, v) in out[pi * plane..(pi + 1) * plane].iter_mut().zip(src) {
                    *o = (v - mean) * *inv;
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, h, w], out, "instance_norm", vec![self.clone()], move |ctx| {
            let mut gx = vec![0.0; ctx.grad.len()];
            for (pi, &inv) in inv_std.iter().enumerate() {
                let r = pi * plane..(pi + 1) * plane;
                let (g, y) = (&ctx.grad[r.clone()], &ctx.out[r.clone()]);
                let mean_g = g.iter().sum::<f64>() / plane as f64;
                let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
                for ((d, &gv), &yv) in gx[r].iter_mut().zip(g).zip(y) {
                    *d = inv * (gv - mean_g - yv * mean_gy);
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::domain("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    for t in &tensors[1..] {
        let ok = t.shape().len() == rank
            && t.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.shape(), t.shape()));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let chunks: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
    let row: usize = chunks.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();

    let mut out = Vec::with_capacity(outer * row);
    {
        let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (d, &len) in datas.iter().zip(&chunks) {
                out.extend_from_slice(&d[o * len..(o + 1) * len]);
            }
        }
    }
    let parents = tensors.iter().map(|&t| t.clone()).collect();
    Ok(Tensor::from_op(shape, out, "concat", parents, move |ctx| {
        let mut grads: Vec<Option<Vec<f64>>> = chunks
            .iter()
            .zip(ctx.needs)
            .map(|(&len, &need)| need.then(|| Vec::with_capacity(outer * len)))
            .collect();
        for o in 0..outer {
            let mut off = o * row;
            for (g, &len) in grads.iter_mut().zip(&chunks) {
                if let Some(g) = g {
                    g.extend_from_slice(&ctx.grad[off..off + len]);
                }
                off += len;
            }
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize) -> Tensor {
        let data = (0..h * w).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        Tensor::new(data, &[1, 1, h, w]).unwrap()
    }

    #[test]
    fn identity_kernel_preserves_image() {
        let x = image(5, 7);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let k = Tensor::new(k, &[1, 1, 3, 3]).unwrap();
        let y = x.conv2d(&k, None, 1, 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn strided_output_shape() {
        let x = Tensor::zeros(&[2, 3, 32, 32]);
        let k = Tensor::zeros(&[8, 3, 4, 4]);
        let y = x.conv2d(&k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 8, 16, 16]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = image(6, 6);
        let x = Tensor::new(x.to_vec().repeat(2), &[1, 2, 6, 6]).unwrap();
        let wv: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 0.3).sin()).collect();
        let w = Tensor::new(wv.clone(), &[3, 2, 3, 3]).unwrap();
        let b = Tensor::new(vec![0.1, -0.2, 0.3], &[3]).unwrap();
        let y = x.conv2d(&w, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        let xv = x.to_vec();
        let yv = y.to_vec();
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut s = b.data()[co];
                    for ci in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let iy = (oy * 2 + ki) as isize - 1;
                                let ix = (ox * 2 + kj) as isize - 1;
                                if (0..6).contains(&iy) && (0..6).contains(&ix) {
                                    s += wv[((co * 2 + ci) * 3 + ki) * 3 + kj]
                                        * xv[ci * 36 + iy as usize * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((yv[co * 9 + oy * 3 + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)>
        let x = Tensor::new((0..2 * 8 * 8).map(|i| (i as f64 * 0.71).cos()).collect(), &[1, 2, 8, 8]).unwrap();
        let w = Tensor::new((0..3 * 2 * 16).map(|i| (i as f64 * 0.13).sin()).collect(), &[3, 2, 4, 4]).unwrap();
        let cx = x.conv2d(&w, None, 2, 1).unwrap();
        let y = Tensor::new((0..cx.numel()).map(|i| (i as f64 * 0.29).sin()).collect(), cx.shape()).unwrap();
        let ty = y.conv_transpose2d(&w, None, 2, 1).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.to_vec().iter().zip(y.to_vec()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.to_vec().iter().zip(ty.to_vec()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample() {
        let x = Tensor::new(vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0], &[1, 1, 2, 4]).unwrap();
        let p = x.max_pool2d(2).unwrap();
        assert_eq!(p.to_vec(), vec![5.0, 9.0]);
        let u = p.upsample_nearest2d(2).unwrap();
        assert_eq!(u.to_vec(), vec![5.0, 5.0, 9.0, 9.0, 5.0, 5.0, 9.0, 9.0]);
        assert!(Tensor::zeros(&[1, 1, 3, 4]).max_pool2d(2).is_err());
    }

    #[test]
    fn concat_channels() {
        let a = Tensor::full(&[2, 1, 2, 2], 1.0);
        let b = Tensor::full(&[2, 2, 2, 2], 2.0);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 2]);
        let v = c.to_vec();
        assert_eq!(&v[..4], &[1.0; 4]);
        assert_eq!(&v[4..12], &[2.0; 8]);
        assert_eq!(&v[12..16], &[1.0; 4]);
        assert!(concat(&[&a, &Tensor::zeros(&[1, 1, 2, 2])], 1).is_err());
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = image(4, 4);
        let y = x.instance_norm(1e-12).unwrap().to_vec();
        let mean: f64 = y.iter().sum::<f64>() / 16.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
