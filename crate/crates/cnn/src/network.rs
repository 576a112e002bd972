//! Multi-scale maxout network over grid tensors.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ops::{
    conv2d_backward, conv2d_forward, conv_param_count, dense_backward, dense_forward, global_pool_backward,
    global_pool_forward, max_pool2_backward, max_pool2_forward, relu_backward_inplace, relu_inplace,
    softmax_cross_entropy, GlobalPool,
};
use crate::tensor::Tensor4;
use crate::CnnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// Output channels of each MSM-Conv layer; a 2x2 max-pool sits between
    /// consecutive layers and a global pool follows the last.
    pub msm_channels: Vec<usize>,
    /// Branches per MSM-Conv layer; branch `s` stacks `s + 1` 3x3 convs.
    pub scales: usize,
    /// Hidden fully connected widths, each followed by ReLU and dropout.
    pub fc_hidden: Vec<usize>,
    pub classes: usize,
    pub global_pool: GlobalPool,
    pub dropout: f64,
}

impl NetworkConfig {
    /// MSM-Conv(64) -> pool -> MSM-Conv(128) -> pool -> MSM-Conv(256) ->
    /// global pool -> FC(256) -> FC(128) -> FC(classes).
    pub fn standard(input_channels: usize, classes: usize) -> Self {
        Self {
            input_channels,
            msm_channels: vec![64, 128, 256],
            scales: 3,
            fc_hidden: vec![256, 128],
            classes,
            global_pool: GlobalPool::Max,
            dropout: 0.3,
        }
    }

    /// The standard topology with every width divided by `factor`.
    pub fn narrowed(input_channels: usize, classes: usize, factor: usize) -> Self {
        let mut c = Self::standard(input_channels, classes);
        c.msm_channels.iter_mut().for_each(|v| *v = (*v / factor).max(1));
        c.fc_hidden.iter_mut().for_each(|v| *v = (*v / factor).max(1));
        c
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |m: &str| Err(CnnError::Config(m.to_string()));
        if self.input_channels == 0 || self.classes == 0 {
            return bad("input channels and classes must be positive");
        }
        if self.msm_channels.is_empty() || self.msm_channels.contains(&0) || self.fc_hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.scales == 0 {
            return bad("scales must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// `(height, width, channels)` after each MSM-Conv layer and pool, for an
    /// `h x w` input.
    pub fn spatial_trace(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let mut out = vec![(h, w, self.input_channels)];
        let (mut h, mut w) = (h, w);
        for (i, &c) in self.msm_channels.iter().enumerate() {
            if i > 0 {
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
            out.push((h, w, c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSlot {
    pub cin: usize,
    pub cout: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// One multi-scale maxout layer: `scales` independent conv stacks of depth
/// `1..=scales`, ReLU after every conv, element-wise max over the stacks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsmConvLayer {
    pub cin: usize,
    pub cout: usize,
    /// `branches[s]` holds the `s + 1` convs of scale `s`.
    pub branches: Vec<Vec<ConvSlot>>,
}

impl MsmConvLayer {
    /// Lays out parameters starting at `offset`.
    pub fn new(cin: usize, cout: usize, scales: usize, offset: &mut usize) -> Self {
        let branches = (0..scales)
            .map(|s| {
                (0..=s)
                    .map(|j| {
                        let ci = if j == 0 { cin } else { cout };
                        let (wl, bl) = conv_param_count(ci, cout);
                        let weight = *offset..*offset + wl;
                        let bias = weight.end..weight.end + bl;
                        *offset = bias.end;
                        ConvSlot { cin: ci, cout, weight, bias }
                    })
                    .collect()
            })
            .collect();
        Self { cin, cout, branches }
    }
}

/// Cached activations of one MSM-Conv layer.
#[derive(Debug, Clone)]
pub struct MsmCache {
    /// `acts[s][j]` is the input of conv `j` in branch `s`; the last entry is
    /// the branch output.
    pub acts: Vec<Vec<Tensor4>>,
    /// Winning branch per output element (first maximum on ties).
    pub winner: Vec<u8>,
}

/// Forward pass of one MSM-Conv layer.
pub fn msm_conv_forward(x: &Tensor4, layer: &MsmConvLayer, params: &[f64]) -> Result<(Tensor4, MsmCache), CnnError> {
    if x.c != layer.cin {
        return Err(CnnError::Shape(format!("MSM layer expects {} channels, got {}", layer.cin, x.c)));
    }
    let mut acts = Vec::with_capacity(layer.branches.len());
    for branch in &layer.branches {
        let mut chain = vec![x.clone()];
        for conv in branch {
            let input = chain.last().expect("chain starts with the input");
            let mut y = conv2d_forward(input, &params[conv.weight.clone()], &params[conv.bias.clone()], conv.cout)?;
            relu_inplace(&mut y.data);
            chain.push(y);
        }
        acts.push(chain);
    }
    let mut out = acts[0].last().expect("branch output").clone();
    let mut winner = vec![0u8; out.data.len()];
    for (s, chain) in acts.iter().enumerate().skip(1) {
        let y = chain.last().expect("branch output");
        for ((o, w), &v) in out.data.iter_mut().zip(&mut winner).zip(&y.data) {
            if v > *o {
                *o = v;
                *w = s as u8;
            }
        }
    }
    Ok((out, MsmCache { acts, winner }))
}

/// Backward pass of one MSM-Conv layer: the output gradient flows only into
/// the winning branch of each element.
pub fn msm_conv_backward(
    layer: &MsmConvLayer,
    params: &[f64],
    cache: &MsmCache,
    dy: &Tensor4,
    grads: &mut [f64],
    need_dx: bool,
) -> Result<Option<Tensor4>, CnnError> {
    let x = &cache.acts[0][0];
    let mut dx = need_dx.then(|| Tensor4::zeros(x.n, x.h, x.w, x.c));
    for (s, (branch, chain)) in layer.branches.iter().zip(&cache.acts).enumerate() {
        let mut d = dy.clone();
        for (g, &w) in d.data.iter_mut().zip(&cache.winner) {
            if usize::from(w) != s {
                *g = 0.0;
            }
        }
        if d.data.iter().all(|&g| g == 0.0) && !need_dx {
            continue;
        }
        for (j, conv) in branch.iter().enumerate().rev() {
            relu_backward_inplace(&chain[j + 1].data, &mut d.data);
            let (dw, db) = split_two(grads, conv.weight.clone(), conv.bias.clone());
            let want = j > 0 || need_dx;
            match conv2d_backward(&chain[j], &params[conv.weight.clone()], &d, dw, db, want)? {
                Some(next) => d = next,
                None => break,
            }
        }
        if let Some(dx) = dx.as_mut() {
            for (a, b) in dx.data.iter_mut().zip(&d.data) {
                *a += b;
            }
        }
    }
    Ok(dx)
}

/// Two disjoint, ordered mutable ranges of one slice.
fn split_two(v: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (head, tail) = v.split_at_mut(b.start);
    (&mut head[a], &mut tail[..b.end - b.start])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseSlot {
    pub fin: usize,
    pub fout: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// Network with all parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: Vec<f64>,
    msm: Vec<MsmConvLayer>,
    dense: Vec<DenseSlot>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    msm: Vec<MsmCache>,
    /// Input shape and argmax of each inter-layer pool.
    pools: Vec<([usize; 4], Vec<usize>)>,
    global_shape: [usize; 4],
    global_arg: Vec<usize>,
    /// Input of each dense layer.
    dense_inputs: Vec<Vec<f64>>,
    /// Post-ReLU (pre-dropout) output of each hidden dense layer.
    hidden_relu: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (0 or 1 / (1 - p)); empty at inference.
    masks: Vec<Vec<f64>>,
    pub n: usize,
}

impl ForwardCache {
    /// Output shape of each MSM-Conv layer.
    pub fn msm_output_shapes(&self) -> Vec<[usize; 4]> {
        self.msm
            .iter()
            .map(|m| m.acts[0].last().expect("branch output").shape())
            .collect()
    }

    /// Every discrete choice made in the forward pass: ReLU signs, maxout
    /// winners and pooling argmaxes. The network is smooth in the parameters
    /// wherever this stays fixed.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for layer in &self.msm {
            for chain in &layer.acts {
                for a in &chain[1..] {
                    out.extend(a.data.iter().map(|&v| usize::from(v > 0.0)));
                }
            }
            out.extend(layer.winner.iter().map(|&w| usize::from(w)));
        }
        for (_, arg) in &self.pools {
            out.extend(arg);
        }
        out.extend(&self.global_arg);
        for h in &self.hidden_relu {
            out.extend(h.iter().map(|&v| usize::from(v > 0.0)));
        }
        out
    }
}

impl Network {
    /// Kaiming-uniform fan-in initialization, biases zero.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, CnnError> {
        config.validate()?;
        let mut offset = 0;
        let mut msm = Vec::new();
        let mut cin = config.input_channels;
        for &c in &config.msm_channels {
            msm.push(MsmConvLayer::new(cin, c, config.scales, &mut offset));
            cin = c;
        }
        let mut dense = Vec::new();
        let mut fin = cin;
        for &fout in config.fc_hidden.iter().chain(std::iter::once(&config.classes)) {
            let weight = offset..offset + fin * fout;
            let bias = weight.end..weight.end + fout;
            offset = bias.end;
            dense.push(DenseSlot { fin, fout, weight, bias });
            fin = fout;
        }
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |r: Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut params[r] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for layer in &msm {
            for conv in layer.branches.iter().flatten() {
                fill(conv.weight.clone(), 9 * conv.cin, &mut params);
            }
        }
        for d in &dense {
            fill(d.weight.clone(), d.fin, &mut params);
        }
        Ok(Self {
            config,
            params,
            msm,
            dense,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn msm_layers(&self) -> &[MsmConvLayer] {
        &self.msm
    }

    pub fn dense_layers(&self) -> &[DenseSlot] {
        &self.dense
    }

    /// Parameter blocks in declaration order as `(name, range)`.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (l, layer) in self.msm.iter().enumerate() {
            for (s, branch) in layer.branches.iter().enumerate() {
                for (j, conv) in branch.iter().enumerate() {
                    out.push((format!("msm{l}.scale{s}.conv{j}.weight"), conv.weight.clone()));
                    out.push((format!("msm{l}.scale{s}.conv{j}.bias"), conv.bias.clone()));
                }
            }
        }
        for (i, d) in self.dense.iter().enumerate() {
            out.push((format!("fc{i}.weight"), d.weight.clone()));
            out.push((format!("fc{i}.bias"), d.bias.clone()));
        }
        out
    }

    /// Logits (`N x classes`, row-major). Dropout is active only when an RNG
    /// is supplied.
    pub fn forward(&self, x: &Tensor4, mut dropout: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, ForwardCache), CnnError> {
        if x.c != self.config.input_channels {
            return Err(CnnError::Shape(format!(
                "network expects {} input channels, got {}",
                self.config.input_channels, x.c
            )));
        }
        if x.n == 0 || x.h == 0 || x.w == 0 {
            return Err(CnnError::Shape("empty input".into()));
        }
        let mut msm_caches = Vec::with_capacity(self.msm.len());
        let mut pools = Vec::new();
        let mut h = x.clone();
        for (i, layer) in self.msm.iter().enumerate() {
            if i > 0 {
                let shape = h.shape();
                let (pooled, arg) = max_pool2_forward(&h);
                pools.push((shape, arg));
                h = pooled;
            }
            let (y, cache) = msm_conv_forward(&h, layer, &self.params)?;
            msm_caches.push(cache);
            h = y;
        }
        let global_shape = h.shape();
        let (mut z, global_arg) = global_pool_forward(&h, self.config.global_pool);
        drop(h);

        let n = x.n;
        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        let mut hidden_relu = Vec::new();
        let mut masks = Vec::new();
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            let mut y = dense_forward(&z, n, &self.params[d.weight.clone()], &self.params[d.bias.clone()]);
            dense_inputs.push(std::mem::take(&mut z));
            if i < last {
                relu_inplace(&mut y);
                hidden_relu.push(y.clone());
                if let Some(rng) = dropout.as_deref_mut() {
                    let p = self.config.dropout;
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..y.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
                    y.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    masks.push(mask);
                }
            }
            z = y;
        }
        Ok((
            z,
            ForwardCache {
                msm: msm_caches,
                pools,
                global_shape,
                global_arg,
                dense_inputs,
                hidden_relu,
                masks,
                n,
            },
        ))
    }

    /// Parameter gradient for the logit gradient `dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> Result<Vec<f64>, CnnError> {
        let mut grads = vec![0.0; self.params.len()];
        let n = cache.n;
        let mut dz = dlogits.to_vec();
        for (i, d) in self.dense.iter().enumerate().rev() {
            if i < self.dense.len() - 1 {
                if let Some(mask) = cache.masks.get(i) {
                    dz.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                }
                relu_backward_inplace(&cache.hidden_relu[i], &mut dz);
            }
            let (dw, db) = split_two(&mut grads, d.weight.clone(), d.bias.clone());
            dz = dense_backward(&cache.dense_inputs[i], n, &self.params[d.weight.clone()], &dz, dw, db);
        }
        let mut dh = global_pool_backward(cache.global_shape, self.config.global_pool, &cache.global_arg, &dz);
        for (i, layer) in self.msm.iter().enumerate().rev() {
            let need_dx = i > 0;
            let dx = msm_conv_backward(layer, &self.params, &cache.msm[i], &dh, &mut grads, need_dx)?;
            if let Some(dx) = dx {
                let (shape, arg) = &cache.pools[i - 1];
                dh = max_pool2_backward(*shape, arg, &dx);
            }
        }
        Ok(grads)
    }

    /// Mean cross-entropy, its parameter gradient and the logits.
    pub fn loss_and_grad(
        &self,
        x: &Tensor4,
        labels: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>), CnnError> {
        self.check_labels(x, labels)?;
        let (logits, cache) = self.forward(x, dropout)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels, self.config.classes);
        let grads = self.backward(&cache, &dlogits)?;
        Ok((loss, grads, logits))
    }

    /// Mean cross-entropy without dropout.
    pub fn loss(&self, x: &Tensor4, labels: &[usize]) -> Result<f64, CnnError> {
        self.check_labels(x, labels)?;
        let (logits, _) = self.forward(x, None)?;
        Ok(softmax_cross_entropy(&logits, labels, self.config.classes).0)
    }

    fn check_labels(&self, x: &Tensor4, labels: &[usize]) -> Result<(), CnnError> {
        if labels.len() != x.n {
            return Err(CnnError::Shape(format!("{} labels for {} samples", labels.len(), x.n)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.classes) {
            return Err(CnnError::Shape(format!("label {bad} outside 0..{}", self.config.classes)));
        }
        Ok(())
    }

    /// Predicted class per sample (first maximum on ties).
    pub fn predict(&self, x: &Tensor4) -> Result<Vec<usize>, CnnError> {
        let (logits, _) = self.forward(x, None)?;
        Ok(argmax_rows(&logits, self.config.classes))
    }
}

pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
