//! Layer kernels with hand-written forward and backward passes.
//!
//! Every layer caches what its backward pass needs during [`Layer::forward`];
//! [`Layer::infer`] is the cache-free, side-effect-free evaluation path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Scalar, Strided, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter buffer with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3x3,
    Conv3x3Stride2,
    BatchNorm,
    MaxPool3x3,
    Upsample,
    Relu,
    Sigmoid,
    Concat,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Conv3x3,
        LayerKind::Conv3x3Stride2,
        LayerKind::BatchNorm,
        LayerKind::MaxPool3x3,
        LayerKind::Upsample,
        LayerKind::Relu,
        LayerKind::Sigmoid,
        LayerKind::Concat,
    ];
}

/// 3x3 convolution, zero padding 1, stride 1 or 2.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform initialization (fan-in), zero bias.
    pub fn new(cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (cin * 9) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let w = (0..cout * cin * 9)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        Self::from_params(cin, cout, stride, w, vec![T::zero(); cout])
    }

    pub fn from_params(cin: usize, cout: usize, stride: usize, weight: Vec<T>, bias: Vec<T>) -> Self {
        Self {
            cin,
            cout,
            stride,
            weight: Param::new("weight", vec![cout, cin, 3, 3], weight),
            bias: Param::new("bias", vec![cout], bias),
            input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 2 && (!h.is_multiple_of(2) || !w.is_multiple_of(2)) {
            return Err(Error::Shape(format!("stride-2 conv needs even H and W, got {h}x{w}")));
        }
        Ok((h / self.stride, w / self.stride))
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.c() != self.cin {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.cin,
                x.c()
            )));
        }
        self.output_hw(x.h(), x.w())
    }

    /// Output rows per im2col block, sized so a block stays cache-resident.
    fn block_rows(&self, wo: usize) -> usize {
        (COL_BLOCK / (self.cin * 9 * wo).max(1)).max(1)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (ho, wo) = self.check(x)?;
        let hw = ho * wo;
        let k = self.cin * 9;
        let mut y = Tensor::zeros([x.n(), self.cout, ho, wo]);
        let step = self.block_rows(wo);
        let mut cols = vec![T::zero(); k * step * wo];
        for i in 0..x.n() {
            let out = y.sample_mut(i);
            for (co, row) in out.chunks_exact_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            for oy0 in (0..ho).step_by(step) {
                let oy1 = (oy0 + step).min(ho);
                let np = (oy1 - oy0) * wo;
                let geo = Geometry::new(x, self.stride, wo, oy0, oy1);
                im2col(x.sample(i), self.cin, &geo, &mut cols[..k * np]);
                gemm(
                    self.cout,
                    k,
                    np,
                    Strided::rows(&self.weight.value, k),
                    Strided::rows(&cols[..k * np], np),
                    T::one(),
                    &mut out[oy0 * wo..],
                    hw,
                );
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("conv".into()))?;
        let (ho, wo) = self.output_hw(x.h(), x.w())?;
        if dy.shape() != [x.n(), self.cout, ho, wo] {
            return Err(Error::Shape(format!("conv upstream gradient {:?}", dy.shape())));
        }
        let hw = ho * wo;
        let k = self.cin * 9;
        let step = self.block_rows(wo);
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![T::zero(); k * step * wo];
        let mut dcols = vec![T::zero(); k * step * wo];
        for i in 0..x.n() {
            let g = dy.sample(i);
            for (co, row) in g.chunks_exact(hw).enumerate() {
                let s = row.iter().fold(T::zero(), |a, &b| a + b);
                self.bias.grad[co] = self.bias.grad[co] + s;
            }
            for oy0 in (0..ho).step_by(step) {
                let oy1 = (oy0 + step).min(ho);
                let np = (oy1 - oy0) * wo;
                let geo = Geometry::new(&x, self.stride, wo, oy0, oy1);
                let gblock = &g[oy0 * wo..];
                im2col(x.sample(i), self.cin, &geo, &mut cols[..k * np]);
                // dW += dY * cols^T
                gemm(
                    self.cout,
                    np,
                    k,
                    Strided::rows(gblock, hw),
                    Strided::transposed(&cols[..k * np], np),
                    T::one(),
                    &mut self.weight.grad,
                    k,
                );
                // dcols = W^T * dY
                gemm(
                    k,
                    self.cout,
                    np,
                    Strided::transposed(&self.weight.value, k),
                    Strided::rows(gblock, hw),
                    T::zero(),
                    &mut dcols[..k * np],
                    np,
                );
                col2im(&dcols[..k * np], self.cin, &geo, dx.sample_mut(i));
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

/// Elements per im2col block.
const COL_BLOCK: usize = 1 << 16;

/// Input/output geometry of one block of output rows `oy0..oy1`.
struct Geometry {
    h: usize,
    w: usize,
    stride: usize,
    wo: usize,
    oy0: usize,
    oy1: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, stride: usize, wo: usize, oy0: usize, oy1: usize) -> Self {
        Self {
            h: x.h(),
            w: x.w(),
            stride,
            wo,
            oy0,
            oy1,
        }
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the image.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx == 0 { 1 } else { 0 };
        let hi = ((self.w + 1 - kx).div_ceil(self.stride)).min(self.wo);
        (lo, hi)
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - 1;
        (iy >= 0 && iy < self.h as isize).then_some(iy as usize)
    }
}

/// Unfold 3x3 neighborhoods (padding 1) of a block of output rows into a
/// `[cin*9, rows*wo]` matrix.
fn im2col<T: Scalar>(x: &[T], cin: usize, geo: &Geometry, cols: &mut [T]) {
    let (h, w, wo) = (geo.h, geo.w, geo.wo);
    let np = (geo.oy1 - geo.oy0) * wo;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = ci * 9 + ky * 3 + kx;
                let row = &mut cols[r * np..(r + 1) * np];
                let (ox_lo, ox_hi) = geo.ox_range(kx);
                for oy in geo.oy0..geo.oy1 {
                    let dst = &mut row[(oy - geo.oy0) * wo..(oy - geo.oy0 + 1) * wo];
                    let Some(iy) = geo.iy(oy, ky) else {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    };
                    let src = &plane[iy * w..(iy + 1) * w];
                    dst[..ox_lo].iter_mut().for_each(|v| *v = T::zero());
                    if ox_hi < wo {
                        dst[ox_hi..].iter_mut().for_each(|v| *v = T::zero());
                    }
                    if geo.stride == 1 {
                        let s0 = ox_lo + kx - 1;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[s0..s0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * geo.stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column block back onto the image.
fn col2im<T: Scalar>(cols: &[T], cin: usize, geo: &Geometry, dx: &mut [T]) {
    let (h, w, wo) = (geo.h, geo.w, geo.wo);
    let np = (geo.oy1 - geo.oy0) * wo;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = ci * 9 + ky * 3 + kx;
                let row = &cols[r * np..(r + 1) * np];
                let (ox_lo, ox_hi) = geo.ox_range(kx);
                for oy in geo.oy0..geo.oy1 {
                    let Some(iy) = geo.iy(oy, ky) else { continue };
                    let src = &row[(oy - geo.oy0) * wo..(oy - geo.oy0 + 1) * wo];
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    if geo.stride == 1 {
                        let s0 = ox_lo + kx - 1;
                        for (d, &s) in dst[s0..s0 + (ox_hi - ox_lo)].iter_mut().zip(&src[ox_lo..ox_hi]) {
                            *d = *d + s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * geo.stride + kx - 1;
                            dst[ix] = dst[ix] + src[ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    /// Running moments; saved with the model but not trained.
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const MOMENTUM: f64 = 0.9;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
            gamma: Param::new("gamma", vec![channels], vec![T::one(); channels]),
            beta: Param::new("beta", vec![channels], vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels,
                x.c()
            )));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance over N, H, W.
    fn batch_moments(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                s += x.sample(i)[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            let m = s / count;
            let mut q = 0.0;
            for i in 0..n {
                q += x.sample(i)[ch * hw..(ch + 1) * hw]
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - m;
                        d * d
                    })
                    .sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = q / count;
        }
        (mean, var)
    }

    /// `xhat = (x - mean) * inv_std`, per channel.
    fn standardize(x: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> Tensor<T> {
        let hw = x.h() * x.w();
        let c = x.c();
        let mut xhat = x.clone();
        for (k, plane) in xhat.data_mut().chunks_exact_mut(hw).enumerate() {
            let (m, s) = (T::of(mean[k % c]), T::of(inv_std[k % c]));
            plane.iter_mut().for_each(|v| *v = (*v - m) * s);
        }
        xhat
    }

    /// `y = x * scale + shift`, per channel.
    fn affine(x: &Tensor<T>, scale: &[T], shift: &[T]) -> Tensor<T> {
        let hw = x.h() * x.w();
        let c = x.c();
        let mut y = x.clone();
        for (k, plane) in y.data_mut().chunks_exact_mut(hw).enumerate() {
            let (a, b) = (scale[k % c], shift[k % c]);
            plane.iter_mut().for_each(|v| *v = *v * a + b);
        }
        y
    }

    /// Fold running moments, gamma and beta into one affine map.
    fn eval_affine(&self) -> (Vec<T>, Vec<T>) {
        let (mean, inv) = self.eval_stats();
        (0..self.channels)
            .map(|ch| {
                let scale = self.gamma.value[ch].as_f64() * inv[ch];
                (T::of(scale), T::of(self.beta.value[ch].as_f64() - mean[ch] * scale))
            })
            .unzip()
    }

    fn eval_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = self.running_mean.iter().map(|v| v.as_f64()).collect();
        let inv = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v.as_f64() + self.eps).sqrt())
            .collect();
        (mean, inv)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let (scale, shift) = self.eval_affine();
        Ok(Self::affine(x, &scale, &shift))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        let (mean, inv) = match mode {
            Mode::Eval => self.eval_stats(),
            Mode::Train => {
                let (mean, var) = Self::batch_moments(x);
                let m = self.momentum;
                for ch in 0..self.channels {
                    self.running_mean[ch] = T::of(m * self.running_mean[ch].as_f64() + (1.0 - m) * mean[ch]);
                    self.running_var[ch] = T::of(m * self.running_var[ch].as_f64() + (1.0 - m) * var[ch]);
                }
                let inv = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                (mean, inv)
            }
        };
        let xhat = Self::standardize(x, &mean, &inv);
        let y = match mode {
            Mode::Eval => {
                let (scale, shift) = self.eval_affine();
                Self::affine(x, &scale, &shift)
            }
            Mode::Train => Self::affine(&xhat, &self.gamma.value, &self.beta.value),
        };
        self.cache = Some(BnCache {
            xhat,
            inv_std: inv,
            mode,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("batchnorm".into()))?;
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::Shape(format!("batchnorm upstream gradient {:?}", dy.shape())));
        }
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut dbeta = 0.0;
            let mut dgamma = 0.0;
            for i in 0..n {
                let g = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                for (gv, xv) in g.iter().zip(xh) {
                    dbeta += gv.as_f64();
                    dgamma += gv.as_f64() * xv.as_f64();
                }
            }
            self.beta.grad[ch] = self.beta.grad[ch] + T::of(dbeta);
            self.gamma.grad[ch] = self.gamma.grad[ch] + T::of(dgamma);
            let scale = self.gamma.value[ch].as_f64() * cache.inv_std[ch];
            for i in 0..n {
                let g = &dy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                let d = &mut dx.sample_mut(i)[ch * hw..(ch + 1) * hw];
                match cache.mode {
                    Mode::Train => {
                        for ((dv, gv), xv) in d.iter_mut().zip(g).zip(xh) {
                            *dv = T::of(
                                scale / count * (count * gv.as_f64() - dbeta - xv.as_f64() * dgamma),
                            );
                        }
                    }
                    Mode::Eval => {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv = T::of(scale * gv.as_f64());
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }
}

/// 3x3 max pooling with stride 3.
#[derive(Clone, Debug, Default)]
pub struct MaxPool3<T> {
    argmax: Option<(Vec<u32>, [usize; 4])>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool3<T> {
    pub fn new() -> Self {
        Self {
            argmax: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn output_hw(h: usize, w: usize) -> Result<(usize, usize)> {
        if !h.is_multiple_of(3) || !w.is_multiple_of(3) {
            return Err(Error::Shape(format!("3x3 max pooling needs H, W divisible by 3, got {h}x{w}")));
        }
        Ok((h / 3, w / 3))
    }

    fn run(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = Self::output_hw(h, w)?;
        let mut y = Tensor::zeros([n, c, ho, wo]);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        let yd = y.data_mut();
        let mut o = 0;
        for plane in x.data().chunks_exact(h * w) {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = oy * 3 * w + ox * 3;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let idx = (oy * 3 + dy) * w + ox * 3 + dx;
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                    }
                    yd[o] = plane[best];
                    arg.push(best as u32);
                    o += 1;
                }
            }
        }
        Ok((y, arg))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Self::run(x)?.0)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, arg) = Self::run(x)?;
        self.argmax = Some((arg, x.shape()));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self
            .argmax
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("maxpool".into()))?;
        if dy.len() != arg.len() {
            return Err(Error::Shape(format!("maxpool upstream gradient {:?}", dy.shape())));
        }
        let mut dx = Tensor::zeros(shape);
        let plane = shape[2] * shape[3];
        let out_plane = dy.h() * dy.w();
        for (o, (&a, &g)) in arg.iter().zip(dy.data()).enumerate() {
            let p = o / out_plane;
            let idx = p * plane + a as usize;
            dx.data_mut()[idx] = dx.data()[idx] + g;
        }
        Ok(dx)
    }
}

/// Nearest-neighbor upsampling by an integer factor.
#[derive(Clone, Debug)]
pub struct Upsample<T> {
    pub factor: usize,
    input_shape: Option<[usize; 4]>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Upsample<T> {
    pub fn new(factor: usize) -> Self {
        Self {
            factor,
            input_shape: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.factor;
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (h * f, w * f);
        let mut y = Tensor::zeros([n, c, ho, wo]);
        for (src, dst) in x.data().chunks_exact(h * w).zip(y.data_mut().chunks_exact_mut(ho * wo)) {
            for (srow, block) in src.chunks_exact(w).zip(dst.chunks_exact_mut(f * wo)) {
                let (first, rest) = block.split_at_mut(wo);
                for (d, &v) in first.chunks_exact_mut(f).zip(srow) {
                    d.iter_mut().for_each(|o| *o = v);
                }
                for r in rest.chunks_exact_mut(wo) {
                    r.copy_from_slice(first);
                }
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.input_shape = Some(x.shape());
        self.infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("upsample".into()))?;
        let f = self.factor;
        let [_, _, h, w] = shape;
        if dy.h() != h * f || dy.w() != w * f {
            return Err(Error::Shape(format!("upsample upstream gradient {:?}", dy.shape())));
        }
        let (ho, wo) = (h * f, w * f);
        let mut dx = Tensor::zeros(shape);
        for (src, dst) in dy.data().chunks_exact(ho * wo).zip(dx.data_mut().chunks_exact_mut(h * w)) {
            for (block, drow) in src.chunks_exact(f * wo).zip(dst.chunks_exact_mut(w)) {
                for srow in block.chunks_exact(wo) {
                    for (d, g) in drow.iter_mut().zip(srow.chunks_exact(f)) {
                        *d = g.iter().fold(*d, |a, &b| a + b);
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// ReLU with derivative 0 at exactly 0.
#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| {
            if !(*v > T::zero()) {
                *v = T::zero()
            }
        });
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .output
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("relu".into()))?;
        if y.shape() != dy.shape() {
            return Err(Error::Shape(format!("relu upstream gradient {:?}", dy.shape())));
        }
        let mut dx = dy.clone();
        for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
            if !(o > T::zero()) {
                *d = T::zero();
            }
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .output
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("sigmoid".into()))?;
        if y.shape() != dy.shape() {
            return Err(Error::Shape(format!("sigmoid upstream gradient {:?}", dy.shape())));
        }
        let mut dx = dy.clone();
        for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
            *d = *d * o * (T::one() - o);
        }
        Ok(dx)
    }
}

/// Channel-axis concatenation.
#[derive(Clone, Debug, Default)]
pub struct Concat {
    channels: Option<Vec<usize>>,
}

impl Concat {
    pub fn new() -> Self {
        Self { channels: None }
    }

    pub fn infer<T: Scalar>(&self, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.shape();
        for x in xs {
            if x.n() != n || x.h() != h || x.w() != w {
                return Err(Error::Shape(format!(
                    "concat operands disagree: {:?} vs {:?}",
                    first.shape(),
                    x.shape()
                )));
            }
        }
        let c: usize = xs.iter().map(|x| x.c()).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for x in xs {
                data.extend_from_slice(x.sample(i));
            }
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    pub fn forward<T: Scalar>(&mut self, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let y = self.infer(xs)?;
        self.channels = Some(xs.iter().map(|x| x.c()).collect());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let channels = self
            .channels
            .take()
            .ok_or_else(|| Error::BackwardBeforeForward("concat".into()))?;
        let [n, c, h, w] = dy.shape();
        if c != channels.iter().sum::<usize>() {
            return Err(Error::Shape(format!("concat upstream gradient {:?}", dy.shape())));
        }
        let mut outs: Vec<Tensor<T>> = channels.iter().map(|&ci| Tensor::zeros([n, ci, h, w])).collect();
        for i in 0..n {
            let mut offset = 0;
            let s = dy.sample(i);
            for (o, &ci) in outs.iter_mut().zip(&channels) {
                let len = ci * h * w;
                o.sample_mut(i).copy_from_slice(&s[offset..offset + len]);
                offset += len;
            }
        }
        Ok(outs)
    }
}

/// Closed set of layer kinds used by the architectures.
#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    MaxPool(MaxPool3<T>),
    Upsample(Upsample<T>),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    Concat(Concat),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(c) if c.stride == 2 => LayerKind::Conv3x3Stride2,
            Layer::Conv(_) => LayerKind::Conv3x3,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::MaxPool(_) => LayerKind::MaxPool3x3,
            Layer::Upsample(_) => LayerKind::Upsample,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Sigmoid(_) => LayerKind::Sigmoid,
            Layer::Concat(_) => LayerKind::Concat,
        }
    }

    fn single<'a>(&self, xs: &[&'a Tensor<T>]) -> Result<&'a Tensor<T>> {
        match xs {
            [x] => Ok(x),
            _ => Err(Error::Shape(format!("{:?} takes one input, got {}", self.kind(), xs.len()))),
        }
    }

    /// Pure evaluation: no caches, no running-moment updates.
    pub fn infer(&self, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        match self {
            Layer::Concat(c) => c.infer(xs),
            Layer::Conv(l) => l.infer(self.single(xs)?),
            Layer::BatchNorm(l) => l.infer(self.single(xs)?),
            Layer::MaxPool(l) => l.infer(self.single(xs)?),
            Layer::Upsample(l) => l.infer(self.single(xs)?),
            Layer::Relu(l) => Ok(l.infer(self.single(xs)?)),
            Layer::Sigmoid(l) => Ok(l.infer(self.single(xs)?)),
        }
    }

    /// Forward pass that caches activations for [`Layer::backward`]. In train
    /// mode batchnorm uses batch statistics and updates its running moments.
    pub fn forward(&mut self, xs: &[&Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        if let Layer::Concat(c) = self {
            return c.forward(xs);
        }
        let x = self.single(xs)?;
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Upsample(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Sigmoid(l) => Ok(l.forward(x)),
            Layer::Concat(_) => unreachable!(),
        }
    }

    /// Gradients with respect to each input; parameter gradients accumulate
    /// into the layer's [`Param::grad`] buffers.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(match self {
            Layer::Concat(c) => return c.backward(dy),
            Layer::Conv(l) => vec![l.backward(dy)?],
            Layer::BatchNorm(l) => vec![l.backward(dy)?],
            Layer::MaxPool(l) => vec![l.backward(dy)?],
            Layer::Upsample(l) => vec![l.backward(dy)?],
            Layer::Relu(l) => vec![l.backward(dy)?],
            Layer::Sigmoid(l) => vec![l.backward(dy)?],
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => l.params().into(),
            Layer::BatchNorm(l) => l.params().into(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => l.params_mut().into(),
            Layer::BatchNorm(l) => l.params_mut().into(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_is_identity() {
        let mut w = vec![0.0f32; 9];
        w[4] = 1.0;
        let conv = Conv2d::from_params(1, 1, 1, w, vec![0.0]);
        let x = Tensor::from_vec([1, 1, 4, 5], (0..20).map(|v| v as f32).collect()).unwrap();
        assert_eq!(conv.infer(&x).unwrap(), x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stride in [1, 2] {
            let conv = Conv2d::<f64>::new(3, 2, stride, &mut rng);
            let x = Tensor::from_vec(
                [2, 3, 6, 8],
                (0..2 * 3 * 48).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y = conv.infer(&x).unwrap();
            for n in 0..2 {
                for co in 0..2 {
                    for oy in 0..6 / stride {
                        for ox in 0..8 / stride {
                            let mut s = conv.bias.value[co];
                            for ci in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky) as isize - 1;
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if iy < 0 || ix < 0 || iy >= 6 || ix >= 8 {
                                            continue;
                                        }
                                        s += conv.weight.value[((co * 3 + ci) * 3 + ky) * 3 + kx]
                                            * x.sample(n)[(ci * 6 + iy as usize) * 8 + ix as usize];
                                    }
                                }
                            }
                            let got = y.sample(n)[(co * (6 / stride) + oy) * (8 / stride) + ox];
                            assert!((got - s).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_picks_block_max() {
        let x = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let y = MaxPool3::new().infer(&x).unwrap();
        assert_eq!(y.data(), &[9.0]);
        assert!(MaxPool3::<f32>::new().infer(&Tensor::zeros([1, 1, 4, 3])).is_err());
    }

    #[test]
    fn stride2_rejects_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::<f32>::new(1, 1, 2, &mut rng);
        assert!(conv.infer(&Tensor::zeros([1, 1, 5, 4])).is_err());
    }

    #[test]
    fn batchnorm_train_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_vec(
            [4, 3, 5, 5],
            (0..300).map(|i| rng.random_range(-3.0..5.0) + (i % 3) as f64).collect(),
        )
        .unwrap();
        let mut bn = BatchNorm2d::<f64>::new(3);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let (mean, var) = BatchNorm2d::batch_moments(&y);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5);
            assert!((var[c] - 1.0).abs() < 1e-4);
        }
        // Running moments moved 10% of the way towards the batch moments.
        let (bm, _) = BatchNorm2d::batch_moments(&x);
        assert!((bn.running_mean[0] - 0.1 * bm[0]).abs() < 1e-12);
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut bn = BatchNorm2d::<f32>::new(2);
        bn.running_mean = vec![0.5, -0.5];
        let x = Tensor::filled([1, 2, 2, 2], 1.0f32);
        let before = bn.running_mean.clone();
        let a = bn.infer(&x).unwrap();
        let b = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(bn.running_mean, before);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let mut r = Relu::<f64>::new();
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        r.forward(&x);
        let g = r.backward(&Tensor::filled([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut s = Sigmoid::<f64>::new();
        s.forward(&Tensor::zeros([1, 1, 1, 1]));
        let g = s.backward(&Tensor::filled([1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut r = Relu::<f32>::new();
        assert!(matches!(
            r.backward(&Tensor::zeros([1, 1, 1, 1])),
            Err(Error::BackwardBeforeForward(_))
        ));
        let mut c = Concat::new();
        assert!(c.backward(&Tensor::<f32>::zeros([1, 2, 1, 1])).is_err());
    }

    #[test]
    fn concat_backward_splits_exactly() {
        let a = Tensor::from_vec([2, 1, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let mut c = Concat::new();
        let y = c.forward(&[&a, &b]).unwrap();
        let parts = c.backward(&y).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert_eq!(Concat::new().infer(&[&parts[0], &parts[1]]).unwrap(), y);
    }
}
