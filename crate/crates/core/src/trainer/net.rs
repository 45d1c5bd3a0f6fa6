//! Two-head convnet: a shared 3×3 conv → ReLU → 3×3 conv → ReLU trunk feeding
//! a 1×1 boundary head (logistic) and a 1×1 orientation head (linear).
//! Convolutions are stride 1 and zero padded, so outputs keep the input size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::angle::store_angle;
use crate::error::{Error, Result};
use crate::losses::{multitask_loss_f64, BatchLoss, LossInput, MultiTaskParams};
use crate::maps::{GroundTruth, OrientationMap, ProbabilityMap, ScalarMap};
use crate::parallel::Execution;

pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
const KSIZE: usize = 3;

/// Parameter block names in storage order.
pub const BLOCK_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "head_b.weight",
    "head_b.bias",
    "head_o.weight",
    "head_o.bias",
];

/// Weights of the network; the same shape doubles as a gradient or velocity
/// buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    /// `[out][in][ky][kx]`, 8×1×3×3.
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    /// `[out][in][ky][kx]`, 16×8×3×3.
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub head_b_w: Vec<f64>,
    pub head_b_b: Vec<f64>,
    pub head_o_w: Vec<f64>,
    pub head_o_b: Vec<f64>,
}

impl TinyNet {
    pub fn block_sizes() -> [usize; 8] {
        [
            CONV1_OUT * KSIZE * KSIZE,
            CONV1_OUT,
            CONV2_OUT * CONV1_OUT * KSIZE * KSIZE,
            CONV2_OUT,
            CONV2_OUT,
            1,
            CONV2_OUT,
            1,
        ]
    }

    pub fn zeros() -> Self {
        let s = Self::block_sizes();
        Self {
            conv1_w: vec![0.0; s[0]],
            conv1_b: vec![0.0; s[1]],
            conv2_w: vec![0.0; s[2]],
            conv2_b: vec![0.0; s[3]],
            head_b_w: vec![0.0; s[4]],
            head_b_b: vec![0.0; s[5]],
            head_o_w: vec![0.0; s[6]],
            head_o_b: vec![0.0; s[7]],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.head_b_w,
            &self.head_b_b,
            &self.head_o_w,
            &self.head_o_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.head_b_w,
            &mut self.head_b_b,
            &mut self.head_o_w,
            &mut self.head_o_b,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Parameter `k` in storage order.
    pub fn param(&self, k: usize) -> f64 {
        let mut k = k;
        for b in self.blocks() {
            if k < b.len() {
                return b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        let mut k = k;
        for b in self.blocks_mut() {
            if k < b.len() {
                return &mut b[k];
            }
            k -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, block by block in storage order.
    pub fn add_scaled(&mut self, other: &TinyNet, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// He ("msra") initialization: zero-mean Gaussian weights with standard
/// deviation `sqrt(2 / fan_in)`, zero biases.
pub fn init_params(seed: u64) -> TinyNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = TinyNet::zeros();
    let fan_ins = [KSIZE * KSIZE, CONV1_OUT * KSIZE * KSIZE, CONV2_OUT, CONV2_OUT];
    let weights = [
        &mut net.conv1_w,
        &mut net.conv2_w,
        &mut net.head_b_w,
        &mut net.head_o_w,
    ];
    for (w, fan_in) in weights.into_iter().zip(fan_ins) {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        for v in w.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    net
}

/// Valid output range for a kernel tap offset `d` ∈ {−1, 0, 1} along an axis
/// of length `n`: positions `p` with `p + d` inside `[0, n)`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

fn conv3x3_forward(
    input: &[f64],
    cin: usize,
    w: usize,
    h: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let hw = w * h;
    let mut out = vec![0.0; cout * hw];
    for o in 0..cout {
        let out_o = &mut out[o * hw..(o + 1) * hw];
        out_o.fill(bias[o]);
        for i in 0..cin {
            let in_i = &input[i * hw..(i + 1) * hw];
            for ky in 0..KSIZE {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..KSIZE {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = weights[((o * cin + i) * KSIZE + ky) * KSIZE + kx];
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * w;
                        let orow = &mut out_o[y * w + x0..y * w + x1];
                        let irow = &in_i[(src as isize + x0 as isize + dx) as usize
                            ..(src as isize + x1 as isize + dx) as usize];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    w: usize,
    h: usize,
    weights: &[f64],
    dout: &[f64],
    cout: usize,
    dweights: &mut [f64],
    dbias: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let hw = w * h;
    let mut din = if need_input_grad { vec![0.0; cin * hw] } else { Vec::new() };
    for o in 0..cout {
        let dout_o = &dout[o * hw..(o + 1) * hw];
        dbias[o] += dout_o.iter().sum::<f64>();
        for i in 0..cin {
            let in_i = &input[i * hw..(i + 1) * hw];
            for ky in 0..KSIZE {
                let dy = ky as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..KSIZE {
                    let dx = kx as isize - 1;
                    let (x0, x1) = tap_range(dx, w);
                    let widx = ((o * cin + i) * KSIZE + ky) * KSIZE + kx;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * w;
                        let lo = (src as isize + x0 as isize + dx) as usize;
                        let hi = (src as isize + x1 as isize + dx) as usize;
                        let drow = &dout_o[y * w + x0..y * w + x1];
                        let irow = &in_i[lo..hi];
                        acc += drow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        if need_input_grad {
                            let dinrow = &mut din[i * hw + lo..i * hw + hi];
                            for (d, g) in dinrow.iter_mut().zip(drow) {
                                *d += wv * g;
                            }
                        }
                    }
                    dweights[widx] += acc;
                }
            }
        }
    }
    din
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct Activations {
    pub width: usize,
    pub height: usize,
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    pub prob: Vec<f64>,
    pub orient: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward_f64(net: &TinyNet, image: &ScalarMap) -> Activations {
    let (w, h) = (image.width(), image.height());
    let hw = w * h;
    let input: Vec<f64> = image.values().iter().map(|&v| v as f64).collect();
    let mut a1 = conv3x3_forward(&input, 1, w, h, &net.conv1_w, &net.conv1_b, CONV1_OUT);
    a1.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut a2 = conv3x3_forward(&a1, CONV1_OUT, w, h, &net.conv2_w, &net.conv2_b, CONV2_OUT);
    a2.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut logit = vec![net.head_b_b[0]; hw];
    let mut orient = vec![net.head_o_b[0]; hw];
    for c in 0..CONV2_OUT {
        let (wb, wo) = (net.head_b_w[c], net.head_o_w[c]);
        let feat = &a2[c * hw..(c + 1) * hw];
        for ((l, o), f) in logit.iter_mut().zip(orient.iter_mut()).zip(feat) {
            *l += wb * f;
            *o += wo * f;
        }
    }
    let prob = logit.iter().map(|&z| sigmoid(z)).collect();
    Activations {
        width: w,
        height: h,
        input,
        a1,
        a2,
        prob,
        orient,
    }
}

/// Gradients of a scalar objective given its derivatives with respect to
/// the boundary probabilities and raw orientations.
pub fn backprop(net: &TinyNet, act: &Activations, grad_prob: &[f64], grad_orient: &[f64]) -> TinyNet {
    let (w, h) = (act.width, act.height);
    let hw = w * h;
    let mut g = TinyNet::zeros();
    let dlogit: Vec<f64> = grad_prob
        .iter()
        .zip(&act.prob)
        .map(|(d, p)| d * p * (1.0 - p))
        .collect();
    g.head_b_b[0] = dlogit.iter().sum();
    g.head_o_b[0] = grad_orient.iter().sum();
    let mut da2 = vec![0.0; CONV2_OUT * hw];
    for c in 0..CONV2_OUT {
        let feat = &act.a2[c * hw..(c + 1) * hw];
        let (wb, wo) = (net.head_b_w[c], net.head_o_w[c]);
        let (mut sb, mut so) = (0.0, 0.0);
        for (j, d) in da2[c * hw..(c + 1) * hw].iter_mut().enumerate() {
            sb += dlogit[j] * feat[j];
            so += grad_orient[j] * feat[j];
            if feat[j] > 0.0 {
                *d = wb * dlogit[j] + wo * grad_orient[j];
            }
        }
        g.head_b_w[c] = sb;
        g.head_o_w[c] = so;
    }
    let mut da1 = conv3x3_backward(
        &act.a1,
        CONV1_OUT,
        w,
        h,
        &net.conv2_w,
        &da2,
        CONV2_OUT,
        &mut g.conv2_w,
        &mut g.conv2_b,
        true,
    );
    for (d, a) in da1.iter_mut().zip(&act.a1) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    conv3x3_backward(
        &act.input,
        1,
        w,
        h,
        &net.conv1_w,
        &da1,
        CONV1_OUT,
        &mut g.conv1_w,
        &mut g.conv1_b,
        false,
    );
    g
}

/// Raw outputs: boundary probabilities and the unconstrained orientation
/// head.
pub fn forward(net: &TinyNet, image: &ScalarMap) -> (ProbabilityMap, ScalarMap) {
    let act = forward_f64(net, image);
    let (w, h) = (act.width, act.height);
    let prob = ScalarMap::from_raw(w, h, act.prob.iter().map(|&p| p as f32).collect());
    let orient = ScalarMap::from_raw(w, h, act.orient.iter().map(|&t| t as f32).collect());
    (ProbabilityMap::from_raw(prob), orient)
}

/// Forward pass with orientations folded into `(−π, π]` for export.
pub fn predict(net: &TinyNet, image: &ScalarMap) -> (ProbabilityMap, OrientationMap) {
    let act = forward_f64(net, image);
    let (w, h) = (act.width, act.height);
    let prob = ScalarMap::from_raw(w, h, act.prob.iter().map(|&p| p as f32).collect());
    let orient = ScalarMap::from_raw(w, h, act.orient.iter().map(|&t| store_angle(t)).collect());
    (ProbabilityMap::from_raw(prob), OrientationMap::new(orient))
}

/// Batch objective and parameter gradients.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: BatchLoss,
    pub grads: TinyNet,
}

/// Forward, loss and backward over a batch. Per-image work may run in
/// parallel; gradients are summed in image order, so the result does not
/// depend on `exec`.
pub fn batch_gradient(
    net: &TinyNet,
    batch: &[(ScalarMap, GroundTruth)],
    params: &MultiTaskParams,
    exec: Execution,
) -> Result<BatchGradient> {
    for (i, (img, gt)) in batch.iter().enumerate() {
        if !img.same_dims(&gt.boundary) {
            return Err(Error::validation(format!(
                "record {i}: image is {}x{} but ground truth is {}x{}",
                img.width(),
                img.height(),
                gt.width(),
                gt.height()
            )));
        }
    }
    let acts = exec.map(batch, |(img, _)| forward_f64(net, img));
    let inputs: Vec<LossInput<'_>> = acts
        .iter()
        .zip(batch)
        .map(|(a, (_, gt))| LossInput {
            prob: &a.prob,
            orient: &a.orient,
            gt,
        })
        .collect();
    let loss = multitask_loss_f64(&inputs, params)?;
    let per_image = exec.map_range(batch.len(), |i| {
        backprop(net, &acts[i], &loss.grad_prob[i], &loss.grad_orient[i])
    });
    let mut grads = TinyNet::zeros();
    for g in &per_image {
        grads.add_scaled(g, 1.0);
    }
    Ok(BatchGradient { loss, grads })
}

/// Single-image objective and gradients.
pub fn backward(
    net: &TinyNet,
    image: &ScalarMap,
    gt: &GroundTruth,
    params: &MultiTaskParams,
) -> Result<(f64, TinyNet)> {
    let out = batch_gradient(
        net,
        &[(image.clone(), gt.clone())],
        params,
        Execution::Sequential,
    )?;
    Ok((out.loss.loss, out.grads))
}

/// Batch objective only, for finite-difference checks.
pub fn batch_loss(
    net: &TinyNet,
    batch: &[(ScalarMap, GroundTruth)],
    params: &MultiTaskParams,
) -> Result<f64> {
    let acts: Vec<Activations> = batch.iter().map(|(img, _)| forward_f64(net, img)).collect();
    let inputs: Vec<LossInput<'_>> = acts
        .iter()
        .zip(batch)
        .map(|(a, (_, gt))| LossInput {
            prob: &a.prob,
            orient: &a.orient,
            gt,
        })
        .collect();
    Ok(multitask_loss_f64(&inputs, params)?.loss)
}
