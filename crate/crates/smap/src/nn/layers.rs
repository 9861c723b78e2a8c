use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::scalar::{s, Scalar};

use super::{NnError, Tensor};

/// One network layer with its parameters, gradients and forward cache.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv3(Conv3<T>),
    Deconv3(Deconv3<T>),
    MaxPool3(MaxPool3<T>),
    Dense(Dense<T>),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout<T>),
    ConcatScale(ConcatScale),
    Reshape(Reshape),
}

/// Mutable view of one parameter tensor and its gradient accumulator.
pub struct ParamMut<'a, T> {
    pub value: &'a mut Vec<T>,
    pub grad: &'a mut Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv3(_) => "conv3d",
            Layer::Deconv3(_) => "deconv3d",
            Layer::MaxPool3(_) => "maxpool3d",
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::Sigmoid(_) => "sigmoid",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dropout(_) => "dropout",
            Layer::ConcatScale(_) => "concat-scale",
            Layer::Reshape(_) => "reshape",
        }
    }

    pub fn forward_eval(&self, x: Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv3(l) => l.forward(&x),
            Layer::Deconv3(l) => l.forward(&x),
            Layer::MaxPool3(l) => Ok(l.forward(&x).0),
            Layer::Dense(l) => l.forward(&x),
            Layer::Relu(_) => Ok(Relu::apply(x)),
            Layer::Sigmoid(_) => Ok(Sigmoid::apply(x)),
            Layer::BatchNorm(l) => l.forward_eval(&x),
            Layer::Dropout(_) => Ok(x),
            Layer::ConcatScale(l) => l.forward(&x, aux),
            Layer::Reshape(l) => l.forward(x),
        }
    }

    pub fn forward_train(
        &mut self,
        x: Tensor<T>,
        aux: Option<&Tensor<T>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv3(l) => {
                let y = l.forward(&x)?;
                l.cache = Some(x);
                Ok(y)
            }
            Layer::Deconv3(l) => {
                let y = l.forward(&x)?;
                l.cache = Some(x);
                Ok(y)
            }
            Layer::MaxPool3(l) => {
                let (y, arg) = l.forward(&x);
                l.cache = Some((x.shape().to_vec(), arg));
                Ok(y)
            }
            Layer::Dense(l) => {
                let y = l.forward(&x)?;
                l.cache = Some(x);
                Ok(y)
            }
            Layer::Relu(l) => {
                let y = Relu::apply(x);
                l.cache = Some(y.data().iter().map(|v| *v > T::zero()).collect());
                Ok(y)
            }
            Layer::Sigmoid(l) => {
                let y = Sigmoid::apply(x);
                l.cache = Some(y.clone());
                Ok(y)
            }
            Layer::BatchNorm(l) => l.forward_train(&x),
            Layer::Dropout(l) => Ok(l.forward_train(x, rng)),
            Layer::ConcatScale(l) => l.forward(&x, aux),
            Layer::Reshape(l) => l.forward(x),
        }
    }

    /// Propagates the output gradient, accumulating parameter gradients.
    pub fn backward(&mut self, g: Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv3(l) => l.backward(&g),
            Layer::Deconv3(l) => l.backward(&g),
            Layer::MaxPool3(l) => l.backward(&g),
            Layer::Dense(l) => l.backward(&g),
            Layer::Relu(l) => {
                let mask = l.cache.as_ref().ok_or(NnError::BackwardWithoutForward("relu"))?;
                let mut g = g;
                for (v, keep) in g.data_mut().iter_mut().zip(mask.iter()) {
                    if !keep {
                        *v = T::zero();
                    }
                }
                Ok(g)
            }
            Layer::Sigmoid(l) => {
                let y = l.cache.as_ref().ok_or(NnError::BackwardWithoutForward("sigmoid"))?;
                let mut g = g;
                for (v, yv) in g.data_mut().iter_mut().zip(y.data().iter()) {
                    *v = *v * *yv * (T::one() - *yv);
                }
                Ok(g)
            }
            Layer::BatchNorm(l) => l.backward(&g),
            Layer::Dropout(l) => l.backward(g),
            Layer::ConcatScale(l) => l.backward(g),
            Layer::Reshape(l) => l.backward(g),
        }
    }

    pub fn params(&mut self) -> Vec<ParamMut<'_, T>> {
        match self {
            Layer::Conv3(l) => vec![
                ParamMut { value: &mut l.w, grad: &mut l.gw },
                ParamMut { value: &mut l.b, grad: &mut l.gb },
            ],
            Layer::Deconv3(l) => vec![
                ParamMut { value: &mut l.w, grad: &mut l.gw },
                ParamMut { value: &mut l.b, grad: &mut l.gb },
            ],
            Layer::Dense(l) => vec![
                ParamMut { value: &mut l.w, grad: &mut l.gw },
                ParamMut { value: &mut l.b, grad: &mut l.gb },
            ],
            Layer::BatchNorm(l) => vec![
                ParamMut { value: &mut l.gamma, grad: &mut l.ggamma },
                ParamMut { value: &mut l.beta, grad: &mut l.gbeta },
            ],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params() {
            for g in p.grad.iter_mut() {
                *g = T::zero();
            }
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv3(l) => l.cache = None,
            Layer::Deconv3(l) => l.cache = None,
            Layer::MaxPool3(l) => l.cache = None,
            Layer::Dense(l) => l.cache = None,
            Layer::Relu(l) => l.cache = None,
            Layer::Sigmoid(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::Dropout(l) => l.cache = None,
            _ => {}
        }
    }
}

fn shape_err(layer: &'static str, expected: String, got: &[usize]) -> NnError {
    NnError::Shape { layer, expected, got: format!("{got:?}") }
}

// ---------------------------------------------------------------------------
// 3D convolution, stride 1, symmetric zero padding.

#[derive(Debug, Clone)]
pub struct Conv3<T> {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad: usize,
    /// Weights laid out `[kz][ky][kx][cin][cout]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub gw: Vec<T>,
    pub gb: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv3<T> {
    pub fn new(k: usize, cin: usize, cout: usize, pad: usize) -> Self {
        let wlen = k * k * k * cin * cout;
        Self {
            k,
            cin,
            cout,
            pad,
            w: vec![T::zero(); wlen],
            b: vec![T::zero(); cout],
            gw: vec![T::zero(); wlen],
            gb: vec![T::zero(); cout],
            cache: None,
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize), NnError> {
        if shape.len() != 5 || shape[4] != self.cin {
            return Err(shape_err("conv3d", format!("(B,D,H,W,{})", self.cin), shape));
        }
        Ok((shape[0], shape[1], shape[2], shape[3]))
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (bsz, d, h, w_dim) = self.check(x.shape())?;
        let mut out = Tensor::zeros(&[bsz, d, h, w_dim, self.cout]);
        let in_stride = d * h * w_dim * self.cin;
        let out_stride = d * h * w_dim * self.cout;
        let xs = x.data();
        out.data_mut()
            .par_chunks_mut(out_stride)
            .zip(xs.par_chunks(in_stride))
            .for_each(|(ob, xb)| {
                self.forward_one(xb, ob, d, h, w_dim);
            });
        Ok(out)
    }

    fn forward_one(&self, x: &[T], out: &mut [T], d: usize, h: usize, w_dim: usize) {
        let (k, cin, cout, pad) = (self.k, self.cin, self.cout, self.pad);
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w_dim {
                    let acc = &mut out[((z * h + y) * w_dim + xx) * cout..][..cout];
                    acc.copy_from_slice(&self.b);
                    for kz in 0..k {
                        let iz = (z + kz).wrapping_sub(pad);
                        if iz >= d {
                            continue;
                        }
                        for ky in 0..k {
                            let iy = (y + ky).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (xx + kx).wrapping_sub(pad);
                                if ix >= w_dim {
                                    continue;
                                }
                                let in_row = &x[((iz * h + iy) * w_dim + ix) * cin..][..cin];
                                let w_base = (((kz * k + ky) * k + kx) * cin) * cout;
                                for (ci, &xv) in in_row.iter().enumerate() {
                                    if xv == T::zero() {
                                        continue;
                                    }
                                    let wrow = &self.w[w_base + ci * cout..][..cout];
                                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                                        *a += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.take().ok_or(NnError::BackwardWithoutForward("conv3d"))?;
        let (_bsz, d, h, w_dim) = self.check(x.shape())?;
        let mut gin = Tensor::zeros(x.shape());
        let in_stride = d * h * w_dim * self.cin;
        let out_stride = d * h * w_dim * self.cout;
        let wlen = self.w.len();
        let xs = x.data();
        let gs = g.data();

        // Per-sample weight gradients, reduced in batch order afterwards so
        // accumulation stays deterministic under rayon.
        let per_sample: Vec<(Vec<T>, Vec<T>)> = gin
            .data_mut()
            .par_chunks_mut(in_stride)
            .zip(xs.par_chunks(in_stride).zip(gs.par_chunks(out_stride)))
            .map(|(ginb, (xb, gb))| {
                let mut gw = vec![T::zero(); wlen];
                let mut gbias = vec![T::zero(); self.cout];
                self.backward_one(xb, gb, ginb, &mut gw, &mut gbias, d, h, w_dim);
                (gw, gbias)
            })
            .collect();
        for (gw, gb) in per_sample {
            for (a, v) in self.gw.iter_mut().zip(gw) {
                *a += v;
            }
            for (a, v) in self.gb.iter_mut().zip(gb) {
                *a += v;
            }
        }
        Ok(gin)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_one(
        &self,
        x: &[T],
        g: &[T],
        gin: &mut [T],
        gw: &mut [T],
        gb: &mut [T],
        d: usize,
        h: usize,
        w_dim: usize,
    ) {
        let (k, cin, cout, pad) = (self.k, self.cin, self.cout, self.pad);
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w_dim {
                    let grow = &g[((z * h + y) * w_dim + xx) * cout..][..cout];
                    for (a, &gv) in gb.iter_mut().zip(grow) {
                        *a += gv;
                    }
                    for kz in 0..k {
                        let iz = (z + kz).wrapping_sub(pad);
                        if iz >= d {
                            continue;
                        }
                        for ky in 0..k {
                            let iy = (y + ky).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (xx + kx).wrapping_sub(pad);
                                if ix >= w_dim {
                                    continue;
                                }
                                let in_base = ((iz * h + iy) * w_dim + ix) * cin;
                                let w_base = (((kz * k + ky) * k + kx) * cin) * cout;
                                for ci in 0..cin {
                                    let xv = x[in_base + ci];
                                    let wrow = &self.w[w_base + ci * cout..][..cout];
                                    let mut acc = T::zero();
                                    if xv != T::zero() {
                                        let gwrow = &mut gw[w_base + ci * cout..][..cout];
                                        for co in 0..cout {
                                            let gv = grow[co];
                                            gwrow[co] += xv * gv;
                                            acc += wrow[co] * gv;
                                        }
                                    } else {
                                        for co in 0..cout {
                                            acc += wrow[co] * grow[co];
                                        }
                                    }
                                    gin[in_base + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transposed 3D convolution, stride 2 (doubles each spatial dimension).

#[derive(Debug, Clone)]
pub struct Deconv3<T> {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    /// Weights laid out `[kz][ky][kx][cin][cout]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub gw: Vec<T>,
    pub gb: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Deconv3<T> {
    /// Kernel 3, stride 2, padding 1, output padding 1: out = 2 * in.
    pub fn new(k: usize, cin: usize, cout: usize) -> Self {
        let wlen = k * k * k * cin * cout;
        Self {
            k,
            cin,
            cout,
            stride: 2,
            pad: 1,
            w: vec![T::zero(); wlen],
            b: vec![T::zero(); cout],
            gw: vec![T::zero(); wlen],
            gb: vec![T::zero(); cout],
            cache: None,
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize), NnError> {
        if shape.len() != 5 || shape[4] != self.cin {
            return Err(shape_err("deconv3d", format!("(B,D,H,W,{})", self.cin), shape));
        }
        Ok((shape[0], shape[1], shape[2], shape[3]))
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (bsz, d, h, w_dim) = self.check(x.shape())?;
        let (od, oh, ow) = (d * self.stride, h * self.stride, w_dim * self.stride);
        let mut out = Tensor::zeros(&[bsz, od, oh, ow, self.cout]);
        let in_stride = d * h * w_dim * self.cin;
        let out_stride = od * oh * ow * self.cout;
        let xs = x.data();
        out.data_mut()
            .par_chunks_mut(out_stride)
            .zip(xs.par_chunks(in_stride))
            .for_each(|(ob, xb)| {
                self.forward_one(xb, ob, d, h, w_dim, od, oh, ow);
            });
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_one(
        &self,
        x: &[T],
        out: &mut [T],
        d: usize,
        h: usize,
        w_dim: usize,
        od: usize,
        oh: usize,
        ow: usize,
    ) {
        let (k, cin, cout, stride, pad) = (self.k, self.cin, self.cout, self.stride, self.pad);
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(&self.b);
        }
        for iz in 0..d {
            for iy in 0..h {
                for ix in 0..w_dim {
                    let in_row = &x[((iz * h + iy) * w_dim + ix) * cin..][..cin];
                    for kz in 0..k {
                        let oz = (iz * stride + kz).wrapping_sub(pad);
                        if oz >= od {
                            continue;
                        }
                        for ky in 0..k {
                            let oy = (iy * stride + ky).wrapping_sub(pad);
                            if oy >= oh {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * stride + kx).wrapping_sub(pad);
                                if ox >= ow {
                                    continue;
                                }
                                let out_row =
                                    &mut out[((oz * oh + oy) * ow + ox) * cout..][..cout];
                                let w_base = (((kz * k + ky) * k + kx) * cin) * cout;
                                for (ci, &xv) in in_row.iter().enumerate() {
                                    if xv == T::zero() {
                                        continue;
                                    }
                                    let wrow = &self.w[w_base + ci * cout..][..cout];
                                    for (a, &wv) in out_row.iter_mut().zip(wrow) {
                                        *a += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.take().ok_or(NnError::BackwardWithoutForward("deconv3d"))?;
        let (bsz, d, h, w_dim) = self.check(x.shape())?;
        let (od, oh, ow) = (d * self.stride, h * self.stride, w_dim * self.stride);
        if g.shape() != [bsz, od, oh, ow, self.cout] {
            return Err(shape_err(
                "deconv3d",
                format!("({bsz},{od},{oh},{ow},{})", self.cout),
                g.shape(),
            ));
        }
        let mut gin = Tensor::zeros(x.shape());
        let in_stride = d * h * w_dim * self.cin;
        let out_stride = od * oh * ow * self.cout;
        let wlen = self.w.len();
        let xs = x.data();
        let gs = g.data();
        let per_sample: Vec<(Vec<T>, Vec<T>)> = gin
            .data_mut()
            .par_chunks_mut(in_stride)
            .zip(xs.par_chunks(in_stride).zip(gs.par_chunks(out_stride)))
            .map(|(ginb, (xb, gb))| {
                let mut gw = vec![T::zero(); wlen];
                let mut gbias = vec![T::zero(); self.cout];
                for gv_row in gb.chunks(self.cout) {
                    for (a, &gv) in gbias.iter_mut().zip(gv_row) {
                        *a += gv;
                    }
                }
                self.backward_one(xb, gb, ginb, &mut gw, d, h, w_dim, od, oh, ow);
                (gw, gbias)
            })
            .collect();
        for (gw, gb) in per_sample {
            for (a, v) in self.gw.iter_mut().zip(gw) {
                *a += v;
            }
            for (a, v) in self.gb.iter_mut().zip(gb) {
                *a += v;
            }
        }
        Ok(gin)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_one(
        &self,
        x: &[T],
        g: &[T],
        gin: &mut [T],
        gw: &mut [T],
        d: usize,
        h: usize,
        w_dim: usize,
        od: usize,
        oh: usize,
        ow: usize,
    ) {
        let (k, cin, cout, stride, pad) = (self.k, self.cin, self.cout, self.stride, self.pad);
        for iz in 0..d {
            for iy in 0..h {
                for ix in 0..w_dim {
                    let in_base = ((iz * h + iy) * w_dim + ix) * cin;
                    for kz in 0..k {
                        let oz = (iz * stride + kz).wrapping_sub(pad);
                        if oz >= od {
                            continue;
                        }
                        for ky in 0..k {
                            let oy = (iy * stride + ky).wrapping_sub(pad);
                            if oy >= oh {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * stride + kx).wrapping_sub(pad);
                                if ox >= ow {
                                    continue;
                                }
                                let grow = &g[((oz * oh + oy) * ow + ox) * cout..][..cout];
                                let w_base = (((kz * k + ky) * k + kx) * cin) * cout;
                                for ci in 0..cin {
                                    let xv = x[in_base + ci];
                                    let wrow = &self.w[w_base + ci * cout..][..cout];
                                    let mut acc = T::zero();
                                    if xv != T::zero() {
                                        let gwrow = &mut gw[w_base + ci * cout..][..cout];
                                        for co in 0..cout {
                                            let gv = grow[co];
                                            gwrow[co] += xv * gv;
                                            acc += wrow[co] * gv;
                                        }
                                    } else {
                                        for co in 0..cout {
                                            acc += wrow[co] * grow[co];
                                        }
                                    }
                                    gin[in_base + ci] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Max pooling with cubic windows.

#[derive(Debug, Clone)]
pub struct MaxPool3<T> {
    pub size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool3<T> {
    pub fn new(size: usize) -> Self {
        Self { size, cache: None, _marker: std::marker::PhantomData }
    }

    fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
        let sh = x.shape();
        assert_eq!(sh.len(), 5, "maxpool3d expects (B,D,H,W,C)");
        let (bsz, d, h, w_dim, c) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
        let s = self.size;
        let (od, oh, ow) = (d / s, h / s, w_dim / s);
        let mut out = Tensor::zeros(&[bsz, od, oh, ow, c]);
        let mut argmax = vec![0usize; out.len()];
        let xs = x.data();
        let od_stride = od * oh * ow * c;
        let in_stride = d * h * w_dim * c;
        for b in 0..bsz {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        for ch in 0..c {
                            let mut best = T::neg_infinity();
                            let mut best_idx = 0usize;
                            for dz in 0..s {
                                for dy in 0..s {
                                    for dx in 0..s {
                                        let idx = b * in_stride
                                            + (((z * s + dz) * h + (y * s + dy)) * w_dim
                                                + (xx * s + dx))
                                                * c
                                            + ch;
                                        if xs[idx] > best {
                                            best = xs[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                            }
                            let o = b * od_stride + ((z * oh + y) * ow + xx) * c + ch;
                            out.data_mut()[o] = best;
                            argmax[o] = best_idx;
                        }
                    }
                }
            }
        }
        (out, argmax)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (in_shape, argmax) =
            self.cache.take().ok_or(NnError::BackwardWithoutForward("maxpool3d"))?;
        let mut gin = Tensor::zeros(&in_shape);
        for (o, &src) in argmax.iter().enumerate() {
            gin.data_mut()[src] += g.data()[o];
        }
        Ok(gin)
    }
}

// ---------------------------------------------------------------------------
// Fully connected layer; flattens any trailing dimensions.

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub input: usize,
    pub output: usize,
    /// Weights laid out `[input][output]`.
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub gw: Vec<T>,
    pub gb: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            w: vec![T::zero(); input * output],
            b: vec![T::zero(); output],
            gw: vec![T::zero(); input * output],
            gb: vec![T::zero(); output],
            cache: None,
        }
    }

    fn check(&self, shape: &[usize]) -> Result<usize, NnError> {
        let feat: usize = shape[1..].iter().product();
        if shape.is_empty() || feat != self.input {
            return Err(shape_err("dense", format!("(B,{})", self.input), shape));
        }
        Ok(shape[0])
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let bsz = self.check(x.shape())?;
        let mut out = Tensor::zeros(&[bsz, self.output]);
        let (inp, outp) = (self.input, self.output);
        out.data_mut()
            .par_chunks_mut(outp)
            .zip(x.data().par_chunks(inp))
            .for_each(|(orow, xrow)| {
                orow.copy_from_slice(&self.b);
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == T::zero() {
                        continue;
                    }
                    let wrow = &self.w[i * outp..][..outp];
                    for (a, &wv) in orow.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            });
        Ok(out)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.take().ok_or(NnError::BackwardWithoutForward("dense"))?;
        let bsz = self.check(x.shape())?;
        let (inp, outp) = (self.input, self.output);
        // Bias gradient.
        for grow in g.data().chunks(outp) {
            for (a, &gv) in self.gb.iter_mut().zip(grow) {
                *a += gv;
            }
        }
        // Weight gradient: parallel over disjoint weight rows.
        let xs = x.data();
        let gs = g.data();
        self.gw
            .par_chunks_mut(outp)
            .enumerate()
            .for_each(|(i, gwrow)| {
                for b in 0..bsz {
                    let xv = xs[b * inp + i];
                    if xv == T::zero() {
                        continue;
                    }
                    let grow = &gs[b * outp..][..outp];
                    for (a, &gv) in gwrow.iter_mut().zip(grow) {
                        *a += xv * gv;
                    }
                }
            });
        // Input gradient.
        let mut gin = Tensor::zeros(x.shape());
        gin.data_mut()
            .par_chunks_mut(inp)
            .zip(gs.par_chunks(outp))
            .for_each(|(ginrow, grow)| {
                for (i, gi) in ginrow.iter_mut().enumerate() {
                    let wrow = &self.w[i * outp..][..outp];
                    let mut acc = T::zero();
                    for (wv, gv) in wrow.iter().zip(grow) {
                        acc += *wv * *gv;
                    }
                    *gi = acc;
                }
            });
        Ok(gin)
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations.

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None, _marker: std::marker::PhantomData }
    }

    fn apply(mut x: Tensor<T>) -> Tensor<T> {
        for v in x.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        x
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn apply(mut x: Tensor<T>) -> Tensor<T> {
        for v in x.data_mut() {
            *v = T::one() / (T::one() + (-*v).exp());
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Batch normalization over the trailing (channel) dimension.

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub momentum: T,
    pub eps: T,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub ggamma: Vec<T>,
    pub gbeta: Vec<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    invstd: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: s(0.99),
            eps: s(1e-5),
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            ggamma: vec![T::zero(); channels],
            gbeta: vec![T::zero(); channels],
            cache: None,
        }
    }

    fn check(&self, shape: &[usize]) -> Result<usize, NnError> {
        match shape.last() {
            Some(&c) if c == self.channels => Ok(shape.iter().product::<usize>() / c),
            _ => Err(shape_err("batchnorm", format!("(..,{})", self.channels), shape)),
        }
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check(x.shape())?;
        let c = self.channels;
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (ch, v) in row.iter_mut().enumerate() {
                let inv = T::one() / (self.running_var[ch] + self.eps).sqrt();
                *v = self.gamma[ch] * (*v - self.running_mean[ch]) * inv + self.beta[ch];
            }
        }
        Ok(out)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check(x.shape())?;
        let c = self.channels;
        let nf = T::from_usize(n).unwrap();
        let mut mean = vec![T::zero(); c];
        for row in x.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        for m in mean.iter_mut() {
            *m /= nf;
        }
        let mut var = vec![T::zero(); c];
        for row in x.data().chunks(c) {
            for (ch, v) in row.iter().enumerate() {
                let d = *v - mean[ch];
                var[ch] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= nf;
        }
        let invstd: Vec<T> = var.iter().map(|v| T::one() / (*v + self.eps).sqrt()).collect();

        let mut xhat = x.clone();
        for row in xhat.data_mut().chunks_mut(c) {
            for (ch, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[ch]) * invstd[ch];
            }
        }
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (ch, v) in row.iter_mut().enumerate() {
                *v = self.gamma[ch] * *v + self.beta[ch];
            }
        }
        let one_m = T::one() - self.momentum;
        for ch in 0..c {
            self.running_mean[ch] = self.momentum * self.running_mean[ch] + one_m * mean[ch];
            self.running_var[ch] = self.momentum * self.running_var[ch] + one_m * var[ch];
        }
        self.cache = Some(BnCache { xhat, invstd });
        Ok(out)
    }

    // The incoming gradient may arrive flattened by downstream layers, so
    // only its volume is checked against the cached normalized activations.
    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let BnCache { xhat, invstd } =
            self.cache.take().ok_or(NnError::BackwardWithoutForward("batchnorm"))?;
        if g.len() != xhat.len() {
            return Err(shape_err("batchnorm", format!("volume {}", xhat.len()), g.shape()));
        }
        let c = self.channels;
        let nf = T::from_usize(xhat.len() / c).unwrap();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (grow, xrow) in g.data().chunks(c).zip(xhat.data().chunks(c)) {
            for ch in 0..c {
                sum_g[ch] += grow[ch];
                sum_gx[ch] += grow[ch] * xrow[ch];
            }
        }
        for ch in 0..c {
            self.gbeta[ch] += sum_g[ch];
            self.ggamma[ch] += sum_gx[ch];
        }
        let mut gin = Tensor::zeros(xhat.shape());
        for ((ginrow, grow), xrow) in gin
            .data_mut()
            .chunks_mut(c)
            .zip(g.data().chunks(c))
            .zip(xhat.data().chunks(c))
        {
            for ch in 0..c {
                let coef = self.gamma[ch] * invstd[ch] / nf;
                ginrow[ch] = coef * (nf * grow[ch] - sum_g[ch] - xrow[ch] * sum_gx[ch]);
            }
        }
        Ok(gin)
    }
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors scaled by 1/(1-ratio) at train time so the
// eval path is untouched.

#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub ratio: f64,
    cache: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(ratio: f64) -> Self {
        assert!((0.0..1.0).contains(&ratio), "dropout ratio must be in [0,1)");
        Self { ratio, cache: None }
    }

    fn forward_train(&mut self, mut x: Tensor<T>, rng: &mut ChaCha8Rng) -> Tensor<T> {
        if self.ratio == 0.0 {
            self.cache = None;
            return x;
        }
        let keep = s::<T>(1.0 / (1.0 - self.ratio));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < self.ratio { T::zero() } else { keep })
            .collect();
        for (v, m) in x.data_mut().iter_mut().zip(mask.iter()) {
            *v = *v * *m;
        }
        self.cache = Some(mask);
        x
    }

    fn backward(&mut self, mut g: Tensor<T>) -> Result<Tensor<T>, NnError> {
        if let Some(mask) = self.cache.take() {
            for (v, m) in g.data_mut().iter_mut().zip(mask.iter()) {
                *v = *v * *m;
            }
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// Concatenates the auxiliary (scale) vector onto flattened features.

#[derive(Debug, Clone)]
pub struct ConcatScale {
    pub features: usize,
    pub aux: usize,
}

impl ConcatScale {
    pub fn new(features: usize, aux: usize) -> Self {
        Self { features, aux }
    }

    fn forward<T: Scalar>(
        &self,
        x: &Tensor<T>,
        aux: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>, NnError> {
        let bsz = x.batch();
        let feat: usize = x.shape()[1..].iter().product();
        if feat != self.features {
            return Err(shape_err("concat-scale", format!("(B,{})", self.features), x.shape()));
        }
        let aux = aux.ok_or(NnError::MissingAux)?;
        if aux.shape() != [bsz, self.aux] {
            return Err(shape_err("concat-scale", format!("aux (B,{})", self.aux), aux.shape()));
        }
        let mut out = Tensor::zeros(&[bsz, self.features + self.aux]);
        for b in 0..bsz {
            let dst = &mut out.data_mut()[b * (self.features + self.aux)..];
            dst[..self.features]
                .copy_from_slice(&x.data()[b * self.features..][..self.features]);
            dst[self.features..self.features + self.aux]
                .copy_from_slice(&aux.data()[b * self.aux..][..self.aux]);
        }
        Ok(out)
    }

    fn backward<T: Scalar>(&self, g: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let bsz = g.batch();
        let width = self.features + self.aux;
        let mut gin = Tensor::zeros(&[bsz, self.features]);
        for b in 0..bsz {
            gin.data_mut()[b * self.features..][..self.features]
                .copy_from_slice(&g.data()[b * width..][..self.features]);
        }
        Ok(gin)
    }
}

// ---------------------------------------------------------------------------
// Fixed reshape of the non-batch dimensions.

#[derive(Debug, Clone)]
pub struct Reshape {
    pub dims: Vec<usize>,
}

impl Reshape {
    pub fn new(dims: &[usize]) -> Self {
        Self { dims: dims.to_vec() }
    }

    fn forward<T: Scalar>(&self, x: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let bsz = x.batch();
        let vol: usize = self.dims.iter().product();
        let feat: usize = x.shape()[1..].iter().product();
        if feat != vol {
            return Err(shape_err("reshape", format!("(B,{vol})"), x.shape()));
        }
        let mut shape = vec![bsz];
        shape.extend_from_slice(&self.dims);
        Ok(x.reshaped(&shape))
    }

    fn backward<T: Scalar>(&self, g: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let bsz = g.batch();
        let vol: usize = self.dims.iter().product();
        Ok(g.reshaped(&[bsz, vol]))
    }
}
