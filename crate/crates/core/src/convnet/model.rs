use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{ArchSpec, FeatureTap, KERNEL};
use super::ops::{channel_moments, col2im, im2col};
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix, Real};
use crate::seed;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics.
    Training,
    /// Running statistics; the forward pass is a pure function of
    /// `(weights, input)`.
    Inference,
}

/// What [`CnnSubmodel::forward`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Output {
    Logits,
    Tap(FeatureTap),
}

#[derive(Clone, Debug)]
struct BlockLayout {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
}

/// One CNN submodel (amplitude or phase difference).
///
/// All trainable tensors live in one flat vector so optimizers and
/// gradient checks can treat the model as a point in `R^n`.
#[derive(Clone, Debug)]
pub struct CnnSubmodel<T: Real = f32> {
    arch: ArchSpec,
    params: Vec<T>,
    running_mean: Vec<Vec<T>>,
    running_var: Vec<Vec<T>>,
    layout: Vec<BlockLayout>,
    fc_weight: usize,
    fc_bias: usize,
    mode: Mode,
}

/// Activations kept by [`CnnSubmodel::forward_train`] for backprop, plus
/// scratch buffers reused across steps.
#[derive(Default)]
pub struct ForwardCache<T> {
    batch: usize,
    input: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    cols: Vec<Vec<T>>,
    dpool: Vec<T>,
    dx: Vec<T>,
    dy: Vec<T>,
    dw: Vec<T>,
}

#[derive(Default)]
struct BlockCache<T> {
    conv_out: Vec<T>,
    pooled: Vec<T>,
    mean: Vec<f64>,
    invstd: Vec<f64>,
    argmax: Vec<u32>,
}

impl<T: Real> ForwardCache<T> {
    pub fn new() -> Self {
        ForwardCache {
            batch: 0,
            input: Vec::new(),
            blocks: Vec::new(),
            cols: Vec::new(),
            dpool: Vec::new(),
            dx: Vec::new(),
            dy: Vec::new(),
            dw: Vec::new(),
        }
    }
}

/// Samples per parallel work group. Groups share one im2col buffer; every
/// reduction runs per sample in sample order, so results do not depend on
/// the thread count.
fn group_size(batch: usize) -> usize {
    let threads = rayon::current_num_threads().max(1);
    batch.div_ceil(threads.min(batch).max(1))
}

fn resize<T: Copy>(v: &mut Vec<T>, len: usize, fill: T) {
    v.clear();
    v.resize(len, fill);
}

/// Builds a standard six-block submodel for 200×114 inputs.
pub fn build_submodel(c_in: usize, num_classes: usize, seed: u64) -> Result<CnnSubmodel<f32>> {
    CnnSubmodel::new(ArchSpec::standard(c_in, num_classes), seed)
}

impl<T: Real> CnnSubmodel<T> {
    /// He-normal convolution weights, LeCun-normal FC weights, unit BN
    /// gains and zero biases, all drawn deterministically from `seed`.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let c = arch.channels;
        let k2 = KERNEL * KERNEL;
        let mut layout = Vec::with_capacity(arch.num_blocks());
        let mut off = 0;
        for b in 0..arch.num_blocks() {
            let w_len = c * arch.block_c_in(b) * k2;
            layout.push(BlockLayout { weight: off, bias: off + w_len, gamma: off + w_len + c, beta: off + w_len + 2 * c });
            off += w_len + 3 * c;
        }
        let fc_weight = off;
        let fc_bias = off + arch.fc_in() * arch.num_classes;
        let total = fc_bias + arch.num_classes;

        let mut params = vec![T::zero(); total];
        let mut rng = seed::rng(seed::derive(seed, "cnn-init"));
        for (b, l) in layout.iter().enumerate() {
            let fan_in = (arch.block_c_in(b) * k2) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            for p in &mut params[l.weight..l.bias] {
                *p = T::from_f64_lossy(normal.sample(&mut rng));
            }
            params[l.gamma..l.beta].fill(T::one());
        }
        let normal = Normal::new(0.0, (1.0 / arch.fc_in() as f64).sqrt()).expect("valid std");
        for p in &mut params[fc_weight..fc_bias] {
            *p = T::from_f64_lossy(normal.sample(&mut rng));
        }

        let nb = arch.num_blocks();
        Ok(CnnSubmodel {
            running_mean: vec![vec![T::zero(); c]; nb],
            running_var: vec![vec![T::one(); c]; nb],
            arch,
            params,
            layout,
            fc_weight,
            fc_bias,
            mode: Mode::Training,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running_stats(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.running_mean, &self.running_var)
    }

    pub(crate) fn set_running_stats(&mut self, mean: Vec<Vec<T>>, var: Vec<Vec<T>>) -> Result<()> {
        let nb = self.arch.num_blocks();
        let c = self.arch.channels;
        if mean.len() != nb || var.len() != nb || mean.iter().chain(&var).any(|v| v.len() != c) {
            return Err(Error::Corruption("running statistics do not match the architecture".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    /// Named trainable tensors with their shapes, in storage order.
    pub fn param_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.arch.channels;
        let mut out = Vec::new();
        for b in 0..self.arch.num_blocks() {
            out.push((format!("block{b}.conv.weight"), vec![c, self.arch.block_c_in(b), KERNEL, KERNEL]));
            out.push((format!("block{b}.conv.bias"), vec![c]));
            out.push((format!("block{b}.bn.gamma"), vec![c]));
            out.push((format!("block{b}.bn.beta"), vec![c]));
        }
        out.push(("fc.weight".into(), vec![self.arch.num_classes, self.arch.fc_in()]));
        out.push(("fc.bias".into(), vec![self.arch.num_classes]));
        out
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<()> {
        let (h, w) = self.arch.input_hw;
        let per = self.arch.c_in * h * w;
        if batch == 0 || input.len() != batch * per {
            return Err(Error::Shape(format!(
                "expected {batch} inputs of {}x{}x{} ({} values), got {} values",
                self.arch.c_in,
                h,
                w,
                batch * per,
                input.len()
            )));
        }
        Ok(())
    }

    /// Batched forward pass over `[batch, c_in, H, W]` input.
    ///
    /// In [`Mode::Training`] batch statistics are used but running
    /// statistics are left untouched; use [`Self::forward_train`] to train.
    pub fn forward(&self, input: &[T], batch: usize, output: Output) -> Result<Matrix<T>> {
        self.check_input(input, batch)?;
        let mut ws = ForwardCache::new();
        Ok(self.run(input, batch, output, &mut ws))
    }

    /// Training-mode forward pass that updates running statistics and
    /// fills `cache` for [`Self::backward`]. Returns the logits.
    pub fn forward_train(&mut self, input: &[T], batch: usize, cache: &mut ForwardCache<T>) -> Result<Matrix<T>> {
        self.check_input(input, batch)?;
        let saved = self.mode;
        self.mode = Mode::Training;
        let logits = self.run(input, batch, Output::Logits, cache);
        self.mode = saved;

        let m = T::from_f64_lossy(BN_MOMENTUM);
        let one = T::one();
        for (b, bc) in cache.blocks.iter().enumerate() {
            let (h, w) = self.arch.block_input_hw(b);
            let n = (batch * h * w) as f64;
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for ci in 0..self.arch.channels {
                let var = 1.0 / (bc.invstd[ci] * bc.invstd[ci]) - BN_EPS;
                let rm = &mut self.running_mean[b][ci];
                *rm = (one - m) * *rm + m * T::from_f64_lossy(bc.mean[ci]);
                let rv = &mut self.running_var[b][ci];
                *rv = (one - m) * *rv + m * T::from_f64_lossy(var.max(0.0) * unbias);
            }
        }
        Ok(logits)
    }

    fn run(&self, input: &[T], batch: usize, output: Output, ws: &mut ForwardCache<T>) -> Matrix<T> {
        let arch = &self.arch;
        let c = arch.channels;
        let nb = arch.num_blocks();
        let gs = group_size(batch);
        let n_groups = batch.div_ceil(gs);
        ws.batch = batch;
        ws.input.clear();
        ws.input.extend_from_slice(input);
        ws.blocks.resize_with(nb, BlockCache::default);
        ws.cols.resize_with(n_groups, Vec::new);

        let stop = match output {
            Output::Tap(FeatureTap::Cnn2) => nb - 2,
            Output::Tap(FeatureTap::Cnn1) => nb - 1,
            _ => nb - 1,
        };

        for b in 0..=stop {
            let cin = arch.block_c_in(b);
            let (h, w) = arch.block_input_hw(b);
            let hw = h * w;
            let kk = cin * KERNEL * KERNEL;
            let l = &self.layout[b];
            let weight = &self.params[l.weight..l.bias];
            let bias = &self.params[l.bias..l.gamma];
            let (done, rest) = ws.blocks.split_at_mut(b);
            let x: &[T] = if b == 0 { &ws.input } else { &done[b - 1].pooled };
            let bc = &mut rest[0];

            resize(&mut bc.conv_out, batch * c * hw, T::zero());
            bc.conv_out.par_chunks_mut(gs * c * hw).zip(x.par_chunks(gs * cin * hw)).zip(ws.cols.par_iter_mut()).for_each(
                |((ys, xs), cols)| {
                    resize(cols, kk * hw, T::zero());
                    for (y1, x1) in ys.chunks_exact_mut(c * hw).zip(xs.chunks_exact(cin * hw)) {
                        im2col(x1, cin, h, w, cols);
                        matmul(c, kk, hw, weight, false, cols, false, T::zero(), y1);
                        for (ci, plane) in y1.chunks_exact_mut(hw).enumerate() {
                            let bv = bias[ci];
                            plane.iter_mut().for_each(|v| *v = *v + bv);
                        }
                    }
                },
            );

            let (mean, invstd) = match self.mode {
                Mode::Training => {
                    let partial: Vec<Vec<(f64, f64)>> = bc.conv_out.par_chunks(c * hw).map(|ys| channel_moments(ys, c, hw)).collect();
                    let n = (batch * hw) as f64;
                    let mut mean = vec![0.0; c];
                    let mut invstd = vec![0.0; c];
                    for ci in 0..c {
                        let (s, q) = partial.iter().fold((0.0, 0.0), |(s, q), p| (s + p[ci].0, q + p[ci].1));
                        let mu = s / n;
                        let var = (q / n - mu * mu).max(0.0);
                        mean[ci] = mu;
                        invstd[ci] = 1.0 / (var + BN_EPS).sqrt();
                    }
                    (mean, invstd)
                }
                Mode::Inference => {
                    let mean = self.running_mean[b].iter().map(|v| v.to_f64_lossy()).collect();
                    let invstd = self.running_var[b].iter().map(|v| 1.0 / (v.to_f64_lossy() + BN_EPS).sqrt()).collect();
                    (mean, invstd)
                }
            };
            let gamma = &self.params[l.gamma..l.beta];
            let beta = &self.params[l.beta..l.beta + c];
            let scale: Vec<T> = (0..c).map(|ci| gamma[ci] * T::from_f64_lossy(invstd[ci])).collect();
            let shift: Vec<T> = (0..c).map(|ci| beta[ci] - T::from_f64_lossy(mean[ci]) * scale[ci]).collect();
            bc.mean = mean;
            bc.invstd = invstd;

            let pool = arch.pools[b];
            let plen = c * (h / pool.0) * (w / pool.1);
            resize(&mut bc.pooled, batch * plen, T::zero());
            resize(&mut bc.argmax, batch * plen, 0u32);
            bc.pooled
                .par_chunks_mut(plen)
                .zip(bc.argmax.par_chunks_mut(plen))
                .zip(bc.conv_out.par_chunks(c * hw))
                .for_each(|((ps, am), ys)| bn_relu_pool(ys, c, h, w, pool, &scale, &shift, ps, am));
        }

        let last = &ws.blocks[stop].pooled;
        if let Output::Tap(FeatureTap::Cnn1 | FeatureTap::Cnn2) = output {
            return Matrix::from_vec(batch, last.len() / batch, last.clone());
        }
        let f = arch.fc_in();
        let k = arch.num_classes;
        let mut logits = vec![T::zero(); batch * k];
        matmul(batch, f, k, last, false, &self.params[self.fc_weight..self.fc_bias], true, T::zero(), &mut logits);
        let fb = &self.params[self.fc_bias..self.fc_bias + k];
        for row in logits.chunks_exact_mut(k) {
            for (v, &bv) in row.iter_mut().zip(fb) {
                *v = *v + bv;
            }
        }
        Matrix::from_vec(batch, k, logits)
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// loss gradient at the logits. Layout matches [`Self::params`].
    pub fn backward(&self, cache: &mut ForwardCache<T>, dlogits: &Matrix<T>) -> Vec<T> {
        let arch = &self.arch;
        let batch = cache.batch;
        let c = arch.channels;
        let k = arch.num_classes;
        let f = arch.fc_in();
        let nb = arch.num_blocks();
        assert_eq!((dlogits.rows, dlogits.cols), (batch, k), "dlogits shape");
        assert_eq!(cache.blocks.len(), nb, "cache from a full forward_train pass");
        let gs = group_size(batch);
        let mut grad = vec![T::zero(); self.params.len()];

        let fc_in = &cache.blocks[nb - 1].pooled;
        matmul(k, batch, f, &dlogits.data, true, fc_in, false, T::zero(), &mut grad[self.fc_weight..self.fc_bias]);
        for row in dlogits.rows_iter() {
            for (g, &d) in grad[self.fc_bias..].iter_mut().zip(row) {
                *g = *g + d;
            }
        }
        resize(&mut cache.dpool, batch * f, T::zero());
        matmul(batch, k, f, &dlogits.data, false, &self.params[self.fc_weight..self.fc_bias], false, T::zero(), &mut cache.dpool);

        for b in (0..nb).rev() {
            let cin = arch.block_c_in(b);
            let (h, w) = arch.block_input_hw(b);
            let hw = h * w;
            let kk = cin * KERNEL * KERNEL;
            let pool = arch.pools[b];
            let plen = c * (h / pool.0) * (w / pool.1);
            let per = plen / c;
            let l = &self.layout[b];
            let gamma: Vec<f64> = self.params[l.gamma..l.beta].iter().map(|v| v.to_f64_lossy()).collect();
            let beta: Vec<f64> = self.params[l.beta..l.beta + c].iter().map(|v| v.to_f64_lossy()).collect();
            let (before, rest) = cache.blocks.split_at(b);
            let bc = &rest[0];
            let x: &[T] = if b == 0 { &cache.input } else { &before[b - 1].pooled };

            // ReLU mask applied to the pooled gradient; per-sample sums of
            // dz and dz*xhat where dz is the BN-output gradient (nonzero
            // only at window maxima).
            let partial: Vec<Vec<(f64, f64)>> = cache
                .dpool
                .par_chunks_mut(plen)
                .zip(bc.argmax.par_chunks(plen))
                .zip(bc.conv_out.par_chunks(c * hw))
                .map(|((dps, ams), ys)| {
                    let mut sums = vec![(0.0, 0.0); c];
                    for ci in 0..c {
                        let yp = &ys[ci * hw..(ci + 1) * hw];
                        for (g, &i) in dps[ci * per..(ci + 1) * per].iter_mut().zip(&ams[ci * per..(ci + 1) * per]) {
                            let xhat = (yp[i as usize].to_f64_lossy() - bc.mean[ci]) * bc.invstd[ci];
                            if gamma[ci] * xhat + beta[ci] > 0.0 {
                                let gv = g.to_f64_lossy();
                                sums[ci].0 += gv;
                                sums[ci].1 += gv * xhat;
                            } else {
                                *g = T::zero();
                            }
                        }
                    }
                    sums
                })
                .collect();
            let mut sum_dz = vec![0.0; c];
            let mut sum_dz_xhat = vec![0.0; c];
            for p in &partial {
                for ci in 0..c {
                    sum_dz[ci] += p[ci].0;
                    sum_dz_xhat[ci] += p[ci].1;
                }
            }
            for ci in 0..c {
                grad[l.gamma + ci] = T::from_f64_lossy(sum_dz_xhat[ci]);
                grad[l.beta + ci] = T::from_f64_lossy(sum_dz[ci]);
            }

            // BN backward with batch statistics:
            // dy = g*s/n * (n*dz - sum(dz) - xhat*sum(dz*xhat)), xhat = (y-mu)*s,
            // folded to dy = a*dz + bb*y + c0 per channel.
            let n = (batch * hw) as f64;
            let coef: Vec<(T, T, T)> = (0..c)
                .map(|ci| {
                    let k1 = gamma[ci] * bc.invstd[ci] / n;
                    let a = k1 * n;
                    let bb = -k1 * sum_dz_xhat[ci] * bc.invstd[ci];
                    let c0 = -k1 * sum_dz[ci] + k1 * sum_dz_xhat[ci] * bc.mean[ci] * bc.invstd[ci];
                    (T::from_f64_lossy(a), T::from_f64_lossy(bb), T::from_f64_lossy(c0))
                })
                .collect();
            resize(&mut cache.dy, batch * c * hw, T::zero());
            cache
                .dy
                .par_chunks_mut(c * hw)
                .zip(bc.conv_out.par_chunks(c * hw))
                .zip(cache.dpool.par_chunks(plen))
                .zip(bc.argmax.par_chunks(plen))
                .for_each(|(((dys, ys), dps), ams)| {
                    for (ci, &(a, bb, c0)) in coef.iter().enumerate() {
                        let plane = &mut dys[ci * hw..(ci + 1) * hw];
                        for (d, &y) in plane.iter_mut().zip(&ys[ci * hw..(ci + 1) * hw]) {
                            *d = bb * y + c0;
                        }
                        for (g, &i) in dps[ci * per..(ci + 1) * per].iter().zip(&ams[ci * per..(ci + 1) * per]) {
                            plane[i as usize] = plane[i as usize] + a * *g;
                        }
                    }
                });

            // convolution backward
            let weight = &self.params[l.weight..l.bias];
            let need_dx = b > 0;
            resize(&mut cache.dw, batch * c * kk, T::zero());
            // block 0 needs no input gradient; a one-value-per-sample dummy
            // keeps the parallel zip uniform
            let dx_per = if need_dx { cin * hw } else { 1 };
            resize(&mut cache.dx, batch * dx_per, T::zero());
            let dy = &cache.dy;
            cache
                .dw
                .par_chunks_mut(gs * c * kk)
                .zip(dy.par_chunks(gs * c * hw))
                .zip(x.par_chunks(gs * cin * hw))
                .zip(cache.cols.par_iter_mut())
                .zip(cache.dx.par_chunks_mut(gs * dx_per))
                .for_each(|((((dws, dys), xs), cols), dxs)| {
                    resize(cols, kk * hw, T::zero());
                    for (s, (dw1, dy1)) in dws.chunks_exact_mut(c * kk).zip(dys.chunks_exact(c * hw)).enumerate() {
                        im2col(&xs[s * cin * hw..(s + 1) * cin * hw], cin, h, w, cols);
                        matmul(c, hw, kk, dy1, false, cols, true, T::zero(), dw1);
                    }
                    if need_dx {
                        for (dy1, dx1) in dys.chunks_exact(c * hw).zip(dxs.chunks_exact_mut(cin * hw)) {
                            matmul(kk, c, hw, weight, true, dy1, false, T::zero(), cols);
                            col2im(cols, cin, h, w, dx1);
                        }
                    }
                });
            let gw = &mut grad[l.weight..l.bias];
            for dw1 in cache.dw.chunks_exact(c * kk) {
                for (g, &d) in gw.iter_mut().zip(dw1) {
                    *g = *g + d;
                }
            }
            for dy1 in cache.dy.chunks_exact(c * hw) {
                for ci in 0..c {
                    let s = sum_f64(&dy1[ci * hw..(ci + 1) * hw]);
                    grad[l.bias + ci] = grad[l.bias + ci] + T::from_f64_lossy(s);
                }
            }
            if need_dx {
                std::mem::swap(&mut cache.dpool, &mut cache.dx);
            }
        }
        grad
    }

    /// Spatial `(channels, height, width)` after each block.
    pub fn probe_shapes(&self) -> Vec<(usize, usize, usize)> {
        self.arch.spatial_chain().into_iter().map(|(h, w)| (self.arch.channels, h, w)).collect()
    }
}

/// Sum in the element type over short runs, accumulated in `f64`.
fn sum_f64<T: Real>(xs: &[T]) -> f64 {
    xs.chunks(64).map(|ch| ch.iter().fold(T::zero(), |a, &b| a + b).to_f64_lossy()).sum()
}

/// Fused `max_pool(relu(y*scale + shift))` over each channel plane.
#[allow(clippy::too_many_arguments)]
fn bn_relu_pool<T: Real>(
    y: &[T],
    c: usize,
    h: usize,
    w: usize,
    (ph, pw): (usize, usize),
    scale: &[T],
    shift: &[T],
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (ho, wo) = (h / ph, w / pw);
    let zero = T::zero();
    let mut act = vec![zero; wo * pw];
    for ci in 0..c {
        let plane = &y[ci * h * w..(ci + 1) * h * w];
        let (s, t) = (scale[ci], shift[ci]);
        let o_plane = ci * ho * wo;
        let best = &mut out[o_plane..o_plane + ho * wo];
        let best_i = &mut argmax[o_plane..o_plane + ho * wo];
        for (oy, (brow, irow)) in best.chunks_exact_mut(wo).zip(best_i.chunks_exact_mut(wo)).enumerate() {
            for dy in 0..ph {
                let row = (oy * ph + dy) * w;
                for (a, &v) in act.iter_mut().zip(&plane[row..row + wo * pw]) {
                    let z = v * s + t;
                    *a = if z > zero { z } else { zero };
                }
                // branch-free selects: window maxima are data dependent and
                // mispredict badly otherwise
                for (ox, ((win, b), bi)) in act.chunks_exact(pw).zip(brow.iter_mut()).zip(irow.iter_mut()).enumerate() {
                    let mut mi = 0;
                    for dx in 1..pw {
                        mi = [mi, dx][(win[dx] > win[mi]) as usize];
                    }
                    let m = win[mi];
                    let take = (dy == 0 || m > *b) as usize;
                    *b = [*b, m][take];
                    *bi = [*bi, (row + ox * pw + mi) as u32][take];
                }
            }
        }
    }
}
