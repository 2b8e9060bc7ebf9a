//! The encoder-decoder segmentation network and its backward pass.
//!
//! Encoder layer `i` samples `encoder_points[i]` centres by FPS, runs a
//! spherical convolution from level `i` onto them and a second one among the
//! centres themselves, each followed by batch norm and ReLU. Decoder layer
//! `i` convolves level `i + 1` back onto the level-`i` points, concatenates
//! the level-`i` encoder features and applies two per-point linear layers.
//! A two-layer head with dropout produces per-point logits.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::config::NetworkConfig;
use super::layers::{dropout_masks, hconcat, hsplit, relu, relu_backward, Batch, BatchNorm, BnCache, Linear};
use super::sph_conv::{SphConv, SphConvCache, SphConvGrads};
use crate::convop::ConvLayerParams;
use crate::density::DensityParams;
use crate::error::{Error, Result};
use crate::geometry::build_kernel;
use crate::rng::{rng_for, Rng};
use crate::spatial::{farthest_point_sample, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates and dropout.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub conv1: SphConv,
    pub bn1: BatchNorm,
    pub conv2: SphConv,
    pub bn2: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub conv: SphConv,
    pub bn: BatchNorm,
    pub mlp1: Linear,
    pub bn1: BatchNorm,
    pub mlp2: Linear,
    pub bn2: BatchNorm,
}

/// All parameters of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub encoders: Vec<EncoderLayer>,
    /// `decoders[i]` maps level `i + 1` back to level `i`.
    pub decoders: Vec<DecoderLayer>,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

fn view<'a, D: ndarray::Dimension>(out: &mut Vec<Tensor<'a>>, name: String, a: &'a ndarray::Array<f64, D>) {
    out.push(Tensor {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are contiguous"),
    });
}

fn view_mut<'a, D: ndarray::Dimension>(out: &mut Vec<TensorMut<'a>>, name: String, a: &'a mut ndarray::Array<f64, D>) {
    out.push(TensorMut {
        name,
        data: a.as_slice_mut().expect("parameters are contiguous"),
    });
}

impl SphConv {
    fn tensors<'a>(&'a self, p: &str, out: &mut Vec<Tensor<'a>>) {
        view(out, format!("{p}.weights"), &self.conv.weights);
        if self.conv.use_bias {
            view(out, format!("{p}.bias"), &self.conv.bias);
        }
        if let Some(d) = &self.density {
            view(out, format!("{p}.density.w1"), &d.w1);
            view(out, format!("{p}.density.b1"), &d.b1);
            view(out, format!("{p}.density.w2"), &d.w2);
            view(out, format!("{p}.density.b2"), &d.b2);
            view(out, format!("{p}.density.w3"), &d.w3);
            view(out, format!("{p}.density.b3"), &d.b3);
        }
    }

    fn tensors_mut<'a>(&'a mut self, p: &str, out: &mut Vec<TensorMut<'a>>) {
        view_mut(out, format!("{p}.weights"), &mut self.conv.weights);
        if self.conv.use_bias {
            view_mut(out, format!("{p}.bias"), &mut self.conv.bias);
        }
        if let Some(d) = &mut self.density {
            view_mut(out, format!("{p}.density.w1"), &mut d.w1);
            view_mut(out, format!("{p}.density.b1"), &mut d.b1);
            view_mut(out, format!("{p}.density.w2"), &mut d.w2);
            view_mut(out, format!("{p}.density.b2"), &mut d.b2);
            view_mut(out, format!("{p}.density.w3"), &mut d.w3);
            view_mut(out, format!("{p}.density.b3"), &mut d.b3);
        }
    }

    fn accumulate(&mut self, g: &SphConvGrads) {
        self.conv.weights += &g.weights;
        self.conv.bias += &g.bias;
        if let (Some(d), Some(gd)) = (&mut self.density, &g.density) {
            d.w1 += &gd.w1;
            d.b1 += &gd.b1;
            d.w2 += &gd.w2;
            d.b2 += &gd.b2;
            d.w3 += &gd.w3;
            d.b3 += &gd.b3;
        }
    }
}

impl BatchNorm {
    fn tensors<'a>(&'a self, p: &str, out: &mut Vec<Tensor<'a>>) {
        view(out, format!("{p}.gamma"), &self.gamma);
        view(out, format!("{p}.beta"), &self.beta);
    }

    fn tensors_mut<'a>(&'a mut self, p: &str, out: &mut Vec<TensorMut<'a>>) {
        view_mut(out, format!("{p}.gamma"), &mut self.gamma);
        view_mut(out, format!("{p}.beta"), &mut self.beta);
    }

    fn buffers<'a>(&'a self, p: &str, out: &mut Vec<Tensor<'a>>) {
        view(out, format!("{p}.running_mean"), &self.running_mean);
        view(out, format!("{p}.running_var"), &self.running_var);
    }

    fn buffers_mut<'a>(&'a mut self, p: &str, out: &mut Vec<TensorMut<'a>>) {
        view_mut(out, format!("{p}.running_mean"), &mut self.running_mean);
        view_mut(out, format!("{p}.running_var"), &mut self.running_var);
    }
}

impl Linear {
    fn tensors<'a>(&'a self, p: &str, out: &mut Vec<Tensor<'a>>) {
        view(out, format!("{p}.w"), &self.w);
        if let Some(b) = &self.b {
            view(out, format!("{p}.b"), b);
        }
    }

    fn tensors_mut<'a>(&'a mut self, p: &str, out: &mut Vec<TensorMut<'a>>) {
        view_mut(out, format!("{p}.w"), &mut self.w);
        if let Some(b) = &mut self.b {
            view_mut(out, format!("{p}.b"), b);
        }
    }
}

struct EncCache {
    conv1: Vec<SphConvCache>,
    bn1: BnCache,
    hidden: Batch,
    conv2: Vec<SphConvCache>,
    bn2: BnCache,
    out: Batch,
}

struct DecCache {
    conv: Vec<SphConvCache>,
    bn: BnCache,
    up: Batch,
    cat: Batch,
    bn1: BnCache,
    act1: Batch,
    bn2: BnCache,
    out: Batch,
}

/// Result of a forward pass; keeps what the backward pass needs.
pub struct Forward {
    pub logits: Batch,
    /// Point positions per item and level.
    pub levels: Vec<Vec<Vec<Point3>>>,
    enc: Vec<EncCache>,
    dec: Vec<DecCache>,
    head_in: Batch,
    hidden: Batch,
    masks: Option<Batch>,
    dropped: Batch,
}

fn conv_batch(
    op: &SphConv,
    levels: &[Vec<Vec<Point3>>],
    from: usize,
    to: usize,
    feats: &[Array2<f64>],
) -> Result<(Batch, Vec<SphConvCache>)> {
    let results = (0..feats.len())
        .into_par_iter()
        .map(|b| op.forward(&levels[b][from], feats[b].view(), &levels[b][to]))
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().unzip())
}

/// Backward through `op` for every item; accumulates into `grad` in item
/// order and returns the input-feature gradients.
fn conv_batch_backward(op: &SphConv, caches: &[SphConvCache], dout: &[Array2<f64>], grad: &mut SphConv) -> Result<Batch> {
    let results = caches
        .par_iter()
        .zip(dout.par_iter())
        .map(|(c, d)| op.backward(c, d.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .into_iter()
        .map(|g| {
            grad.accumulate(&g);
            g.input
        })
        .collect())
}

fn linear_batch(layer: &Linear, xs: &[Array2<f64>]) -> Result<Batch> {
    xs.iter().map(|x| layer.forward(x.view())).collect()
}

fn linear_batch_backward(layer: &Linear, xs: &[Array2<f64>], dys: &[Array2<f64>], grad: &mut Linear) -> Batch {
    xs.iter().zip(dys).map(|(x, dy)| layer.backward(x.view(), dy.view(), grad)).collect()
}

fn add_into(acc: &mut Option<Batch>, g: Batch) {
    match acc {
        Some(a) => {
            for (x, y) in a.iter_mut().zip(g) {
                *x += &y;
            }
        }
        None => *acc = Some(g),
    }
}

impl Network {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "network-init");
        let sph = |c_in: usize, c_out: usize, radius: f64, rng: &mut Rng| -> Result<SphConv> {
            let kind = config.kernel_kind;
            let geometry = build_kernel(kind, radius, &kind.default_preset())?;
            let conv = ConvLayerParams::init(geometry, c_in, c_out, false, rng);
            let density = config
                .use_density
                .then(|| DensityParams::init(c_in, config.density_hidden, config.density_scale, rng));
            Ok(SphConv {
                conv,
                density,
                radius,
                neighbors: config.density_neighbors,
            })
        };
        let mut encoders = Vec::new();
        for i in 0..config.layers() {
            let c = config.encoder_channels[i];
            let r = config.radius(i);
            encoders.push(EncoderLayer {
                conv1: sph(config.level_channels(i), c, r, &mut rng)?,
                bn1: BatchNorm::new(c),
                conv2: sph(c, c, r, &mut rng)?,
                bn2: BatchNorm::new(c),
            });
        }
        let mut decoders = Vec::new();
        for i in 0..config.layers() {
            let w = config.decoder_channels(i);
            decoders.push(DecoderLayer {
                conv: sph(config.decoder_input_channels(i), w, config.radius(i), &mut rng)?,
                bn: BatchNorm::new(w),
                mlp1: Linear::init(w + config.level_channels(i), w, false, &mut rng),
                bn1: BatchNorm::new(w),
                mlp2: Linear::init(w, w, false, &mut rng),
                bn2: BatchNorm::new(w),
            });
        }
        let head_in = if config.layers() == 0 {
            config.in_channels
        } else {
            config.decoder_channels(0)
        };
        Ok(Network {
            config: config.clone(),
            encoders,
            decoders,
            fc1: Linear::init(head_in, config.fc_hidden, true, &mut rng),
            fc2: Linear::init(config.fc_hidden, config.n_classes, true, &mut rng),
        })
    }

    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            e.conv1.tensors(&format!("enc{i}.conv1"), &mut out);
            e.bn1.tensors(&format!("enc{i}.bn1"), &mut out);
            e.conv2.tensors(&format!("enc{i}.conv2"), &mut out);
            e.bn2.tensors(&format!("enc{i}.bn2"), &mut out);
        }
        for (i, d) in self.decoders.iter().enumerate() {
            d.conv.tensors(&format!("dec{i}.conv"), &mut out);
            d.bn.tensors(&format!("dec{i}.bn"), &mut out);
            d.mlp1.tensors(&format!("dec{i}.mlp1"), &mut out);
            d.bn1.tensors(&format!("dec{i}.bn1"), &mut out);
            d.mlp2.tensors(&format!("dec{i}.mlp2"), &mut out);
            d.bn2.tensors(&format!("dec{i}.bn2"), &mut out);
        }
        self.fc1.tensors("head.fc1", &mut out);
        self.fc2.tensors("head.fc2", &mut out);
        out
    }

    /// Same order as [`Network::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.conv1.tensors_mut(&format!("enc{i}.conv1"), &mut out);
            e.bn1.tensors_mut(&format!("enc{i}.bn1"), &mut out);
            e.conv2.tensors_mut(&format!("enc{i}.conv2"), &mut out);
            e.bn2.tensors_mut(&format!("enc{i}.bn2"), &mut out);
        }
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.conv.tensors_mut(&format!("dec{i}.conv"), &mut out);
            d.bn.tensors_mut(&format!("dec{i}.bn"), &mut out);
            d.mlp1.tensors_mut(&format!("dec{i}.mlp1"), &mut out);
            d.bn1.tensors_mut(&format!("dec{i}.bn1"), &mut out);
            d.mlp2.tensors_mut(&format!("dec{i}.mlp2"), &mut out);
            d.bn2.tensors_mut(&format!("dec{i}.bn2"), &mut out);
        }
        self.fc1.tensors_mut("head.fc1", &mut out);
        self.fc2.tensors_mut("head.fc2", &mut out);
        out
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> Vec<Tensor<'_>> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            e.bn1.buffers(&format!("enc{i}.bn1"), &mut out);
            e.bn2.buffers(&format!("enc{i}.bn2"), &mut out);
        }
        for (i, d) in self.decoders.iter().enumerate() {
            d.bn.buffers(&format!("dec{i}.bn"), &mut out);
            d.bn1.buffers(&format!("dec{i}.bn1"), &mut out);
            d.bn2.buffers(&format!("dec{i}.bn2"), &mut out);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.bn1.buffers_mut(&format!("enc{i}.bn1"), &mut out);
            e.bn2.buffers_mut(&format!("enc{i}.bn2"), &mut out);
        }
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.bn.buffers_mut(&format!("dec{i}.bn"), &mut out);
            d.bn1.buffers_mut(&format!("dec{i}.bn1"), &mut out);
            d.bn2.buffers_mut(&format!("dec{i}.bn2"), &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// All trainable values concatenated in tensor order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// A copy with every parameter and buffer set to zero.
    pub fn zeros_like(&self) -> Network {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.data.fill(0.0);
        }
        for t in g.buffers_mut() {
            t.data.fill(0.0);
        }
        g
    }

    /// Points per level (level 0 is the input) for an `n`-point cloud.
    /// Clouds of other sizes than `n_points` scale the schedule.
    pub fn level_counts(&self, n: usize) -> Vec<usize> {
        let cfg = &self.config;
        let mut counts = vec![n];
        let mut prev = n;
        for &p in &cfg.encoder_points {
            let c = if n == cfg.n_points {
                p
            } else {
                ((p as f64 * n as f64 / cfg.n_points as f64).round() as usize).clamp(1, prev.max(1))
            };
            counts.push(c);
            prev = c;
        }
        counts
    }

    fn levels_for(&self, cloud: &PointCloud) -> Result<Vec<Vec<Point3>>> {
        let counts = self.level_counts(cloud.len());
        let mut levels = vec![cloud.positions.clone()];
        for &m in &counts[1..] {
            let prev = levels.last().expect("level 0 exists");
            let idx = farthest_point_sample(prev, m, 0)?;
            levels.push(idx.iter().map(|&j| prev[j]).collect());
        }
        Ok(levels)
    }

    pub fn forward(&mut self, clouds: &[PointCloud], mode: Mode, dropout_seed: u64) -> Result<Forward> {
        if clouds.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let train = mode == Mode::Train;
        let momentum = self.config.bn_momentum;
        let layers = self.config.layers();
        let inputs: Batch = clouds.iter().map(PointCloud::input_features).collect();
        for x in &inputs {
            if x.ncols() != self.config.in_channels {
                return Err(Error::shape("input channels", self.config.in_channels, x.ncols()));
            }
        }
        let levels = clouds
            .par_iter()
            .map(|c| self.levels_for(c))
            .collect::<Result<Vec<_>>>()?;

        let mut enc = Vec::with_capacity(layers);
        let mut x = inputs.clone();
        for i in 0..layers {
            let e = &mut self.encoders[i];
            let (pre, conv1) = conv_batch(&e.conv1, &levels, i, i + 1, &x)?;
            let (y, bn1) = e.bn1.forward(&pre, train, momentum)?;
            let hidden = relu(y);
            let (pre, conv2) = conv_batch(&e.conv2, &levels, i + 1, i + 1, &hidden)?;
            let (y, bn2) = e.bn2.forward(&pre, train, momentum)?;
            x = relu(y);
            enc.push(EncCache {
                conv1,
                bn1,
                hidden,
                conv2,
                bn2,
                out: x.clone(),
            });
        }

        let mut dec: Vec<Option<DecCache>> = (0..layers).map(|_| None).collect();
        for i in (0..layers).rev() {
            let skip = if i == 0 { &inputs } else { &enc[i - 1].out };
            let d = &mut self.decoders[i];
            let (pre, conv) = conv_batch(&d.conv, &levels, i + 1, i, &x)?;
            let (y, bn) = d.bn.forward(&pre, train, momentum)?;
            let up = relu(y);
            let cat = up
                .iter()
                .zip(skip)
                .map(|(u, s)| hconcat(u.view(), s.view()))
                .collect::<Result<Batch>>()?;
            let (y, bn1) = d.bn1.forward(&linear_batch(&d.mlp1, &cat)?, train, momentum)?;
            let act1 = relu(y);
            let (y, bn2) = d.bn2.forward(&linear_batch(&d.mlp2, &act1)?, train, momentum)?;
            x = relu(y);
            dec[i] = Some(DecCache {
                conv,
                bn,
                up,
                cat,
                bn1,
                act1,
                bn2,
                out: x.clone(),
            });
        }

        let head_in = x;
        let hidden = relu(linear_batch(&self.fc1, &head_in)?);
        let p = self.config.dropout_p;
        let masks = (train && p > 0.0).then(|| {
            let shapes: Vec<_> = hidden.iter().map(|h| h.dim()).collect();
            dropout_masks(&shapes, p, dropout_seed)
        });
        let dropped = match &masks {
            Some(m) => hidden.iter().zip(m).map(|(h, m)| h * m).collect(),
            None => hidden.clone(),
        };
        let logits = linear_batch(&self.fc2, &dropped)?;
        Ok(Forward {
            logits,
            levels,
            enc,
            dec: dec.into_iter().map(|d| d.expect("every decoder ran")).collect(),
            head_in,
            hidden,
            masks,
            dropped,
        })
    }

    /// Gradients of `sum_b <dlogits_b, logits_b>` for every trainable tensor.
    pub fn backward(&self, fwd: &Forward, dlogits: &[Array2<f64>]) -> Result<Network> {
        if dlogits.len() != fwd.logits.len()
            || dlogits.iter().zip(&fwd.logits).any(|(d, l)| d.dim() != l.dim())
        {
            return Err(Error::CacheMismatch("logit gradients do not match the forward pass".into()));
        }
        let layers = self.config.layers();
        let mut g = self.zeros_like();

        let d = linear_batch_backward(&self.fc2, &fwd.dropped, dlogits, &mut g.fc2);
        let d = match &fwd.masks {
            Some(m) => d.into_iter().zip(m).map(|(d, m)| d * m).collect(),
            None => d,
        };
        let d = relu_backward(&fwd.hidden, d);
        let mut dx = linear_batch_backward(&self.fc1, &fwd.head_in, &d, &mut g.fc1);

        // skip_grads[i] is the gradient reaching the level-i encoder output
        let mut skip_grads: Vec<Option<Batch>> = (0..=layers).map(|_| None).collect();
        for i in 0..layers {
            let (p, c, gd) = (&self.decoders[i], &fwd.dec[i], &mut g.decoders[i]);
            let d = relu_backward(&c.out, dx);
            let d = p.bn2.backward(&c.bn2, &d, &mut gd.bn2);
            let d = linear_batch_backward(&p.mlp2, &c.act1, &d, &mut gd.mlp2);
            let d = relu_backward(&c.act1, d);
            let d = p.bn1.backward(&c.bn1, &d, &mut gd.bn1);
            let dcat = linear_batch_backward(&p.mlp1, &c.cat, &d, &mut gd.mlp1);
            let width = p.bn.channels();
            let (dup, dskip): (Batch, Batch) = dcat.iter().map(|d| hsplit(d, width)).unzip();
            add_into(&mut skip_grads[i], dskip);
            let d = relu_backward(&c.up, dup);
            let d = p.bn.backward(&c.bn, &d, &mut gd.bn);
            dx = conv_batch_backward(&p.conv, &c.conv, &d, &mut gd.conv)?;
        }
        if layers > 0 {
            add_into(&mut skip_grads[layers], dx);
        }

        for i in (0..layers).rev() {
            let (p, c, ge) = (&self.encoders[i], &fwd.enc[i], &mut g.encoders[i]);
            let d = skip_grads[i + 1].take().expect("every encoder output feeds a decoder");
            let d = relu_backward(&c.out, d);
            let d = p.bn2.backward(&c.bn2, &d, &mut ge.bn2);
            let d = conv_batch_backward(&p.conv2, &c.conv2, &d, &mut ge.conv2)?;
            let d = relu_backward(&c.hidden, d);
            let d = p.bn1.backward(&c.bn1, &d, &mut ge.bn1);
            let d = conv_batch_backward(&p.conv1, &c.conv1, &d, &mut ge.conv1)?;
            add_into(&mut skip_grads[i], d);
        }
        Ok(g)
    }

    /// Eval-mode logits for one cloud.
    pub fn logits(&mut self, cloud: &PointCloud) -> Result<Array2<f64>> {
        let fwd = self.forward(std::slice::from_ref(cloud), Mode::Eval, 0)?;
        Ok(fwd.logits.into_iter().next().expect("one item"))
    }

    /// Eval-mode class per point.
    pub fn predict(&mut self, cloud: &PointCloud) -> Result<Vec<u32>> {
        Ok(argmax_rows(self.logits(cloud)?.view()))
    }
}

/// Row-wise argmax; ties go to the lowest class id.
pub fn argmax_rows(logits: ArrayView2<f64>) -> Vec<u32> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}
