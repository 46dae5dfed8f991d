//! Layers, parameter sets, initialization, and the Adam optimizer.
//!
//! Layers are free functions over [`Tensor`]s; anything expressible as a
//! composition of tensor primitives (dense, gru_cell) is composed so its
//! backward pass comes for free.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use super::kernels::{self, ConvGeom};
use super::tensor::{ShapeError, Tensor};

#[derive(Debug, Error)]
#[error("parameter set is frozen; optimizer steps are not allowed")]
pub struct FrozenError;

// ---------------------------------------------------------------------------
// parameter sets
// ---------------------------------------------------------------------------

/// Named collection of trainable tensors. Iteration order is the sorted
/// name order, which keeps optimizer updates and checkpoints deterministic.
#[derive(Default)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    frozen: bool,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(t.requires_grad(), "parameter {name} must be a trainable leaf");
        let prev = self.params.insert(name.to_string(), t);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// Deep copy with fresh leaves (used for parameter snapshots).
    pub fn deep_clone(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.insert(name, Tensor::var(t.shape(), t.to_vec()));
        }
        out.frozen = self.frozen;
        out
    }

    /// Flat view for serialization: (name, shape, data), name-sorted.
    pub fn entries(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.to_vec()))
            .collect()
    }

    /// Overwrite parameter values from serialized entries. Every entry must
    /// match an existing parameter's name and shape.
    pub fn load_entries(&self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<(), ShapeError> {
        for (name, shape, data) in entries {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| ShapeError(format!("unknown parameter {name} in checkpoint")))?;
            if t.shape() != shape.as_slice() {
                return Err(ShapeError(format!(
                    "parameter {name}: checkpoint shape {shape:?} vs model shape {:?}",
                    t.shape()
                )));
            }
            t.set_data(data);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Bias-corrected Adam. Moment buffers are keyed by parameter name and
/// allocated on first use.
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamState {
    pub fn new(lr: f32) -> AdamState {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }

    /// One update over every parameter with a populated gradient; gradients
    /// are zeroed afterwards. Errors if the set is frozen.
    pub fn step(&mut self, params: &ParamSet) -> Result<(), FrozenError> {
        if params.is_frozen() {
            return Err(FrozenError);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, t) in params.iter() {
            let Some(g) = t.grad() else { continue };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; t.len()], vec![0.0; t.len()]));
            let mut data = t.to_vec();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            t.set_data(&data);
            t.zero_grad();
        }
        Ok(())
    }

    /// Serialized moment buffers: (name, m, v), name-sorted.
    pub fn entries(&self) -> Vec<(String, Vec<f32>, Vec<f32>)> {
        self.moments
            .iter()
            .map(|(n, (m, v))| (n.clone(), m.clone(), v.clone()))
            .collect()
    }

    pub fn load_entries(&mut self, step: u64, entries: Vec<(String, Vec<f32>, Vec<f32>)>) {
        self.step = step;
        self.moments = entries.into_iter().map(|(n, m, v)| (n, (m, v))).collect();
    }
}

/// Global-norm gradient clipping across several parameter sets.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(sets: &[&ParamSet], max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for set in sets {
        for (_, t) in set.iter() {
            if let Some(g) = t.grad() {
                sq += g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for set in sets {
            for (_, t) in set.iter() {
                if let Some(mut g) = t.grad() {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                    t.zero_grad();
                    // re-seed the buffer with the scaled gradient
                    t.set_grad(g);
                }
            }
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

/// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::var(shape, data)
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::var(shape, vec![0.0; shape.iter().product()])
}

/// Square orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let proj: f64 = rows[i].iter().zip(rows[j].iter()).map(|(a, b)| a * b).sum();
            for k in 0..n {
                rows[i][k] -= proj * rows[j][k];
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for k in 0..n {
            rows[i][k] /= norm;
        }
    }
    rows.into_iter().flatten().map(|v| v as f32).collect()
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

/// 2D convolution over [n, c, h, w] with weight [out_c, c * kh * kw] and
/// bias [out_c].
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, geom: ConvGeom) -> Tensor {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "conv2d: input must be [n,c,h,w], got {shape:?}");
    let (n, c, h, wd) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!((c, h, wd), (geom.in_c, geom.in_h, geom.in_w), "conv2d: input {shape:?} vs geom {geom:?}");
    let k = geom.patch_len();
    assert_eq!(w.shape(), [geom.out_c, k], "conv2d: weight shape {:?} vs [{}, {k}]", w.shape(), geom.out_c);
    assert_eq!(b.shape(), [geom.out_c], "conv2d: bias shape {:?}", b.shape());

    let (oh, ow) = (geom.out_h(), geom.out_w());
    let p = oh * ow;
    let img_len = c * h * wd;
    let out_len = geom.out_c * p;

    let xv = x.data();
    let wv = w.data();
    let bv = b.data();
    let mut out = vec![0.0f32; n * out_len];
    let mut all_cols = vec![0.0f32; n * k * p];
    for i in 0..n {
        let cols = &mut all_cols[i * k * p..(i + 1) * k * p];
        kernels::im2col(&geom, &xv[i * img_len..(i + 1) * img_len], cols);
        let o = &mut out[i * out_len..(i + 1) * out_len];
        kernels::sgemm(geom.out_c, k, p, &wv, cols, o);
        for oc in 0..geom.out_c {
            let row = &mut o[oc * p..(oc + 1) * p];
            for v in row.iter_mut() {
                *v += bv[oc];
            }
        }
    }
    drop(xv);
    drop(wv);
    drop(bv);

    let w_h = w.clone();
    Tensor::from_op(
        vec![n, geom.out_c, oh, ow],
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |g, _| {
            let wv = w_h.data();
            let mut dx = vec![0.0f32; n * img_len];
            let mut dw = vec![0.0f32; geom.out_c * k];
            let mut db = vec![0.0f32; geom.out_c];
            let mut dcols = vec![0.0f32; k * p];
            for i in 0..n {
                let cols = &all_cols[i * k * p..(i + 1) * k * p];
                let go = &g[i * out_len..(i + 1) * out_len];
                // dW += G @ cols^T
                kernels::sgemm_nt(geom.out_c, p, k, go, cols, &mut dw);
                // dcols = W^T @ G
                dcols.fill(0.0);
                kernels::sgemm_tn(geom.out_c, k, p, &wv, go, &mut dcols);
                kernels::col2im_acc(&geom, &dcols, &mut dx[i * img_len..(i + 1) * img_len]);
                for oc in 0..geom.out_c {
                    db[oc] += go[oc * p..(oc + 1) * p].iter().sum::<f32>();
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        }),
    )
}

/// Group normalization over [n, c, h, w] with per-channel affine.
/// Statistics are per (sample, group), so rows of a batch never interact.
pub fn group_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f32) -> Tensor {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "group_norm: input must be [n,c,h,w]");
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert!(c % groups == 0, "group_norm: {c} channels not divisible by {groups} groups");
    assert_eq!(gamma.shape(), [c]);
    assert_eq!(beta.shape(), [c]);
    let cg = c / groups;
    let glen = cg * h * w;
    let hw = h * w;

    let xv = x.data();
    let gv = gamma.data();
    let bv = beta.data();
    let mut norm = vec![0.0f32; n * c * hw]; // pre-affine normalized values
    let mut out = vec![0.0f32; n * c * hw];
    let mut inv_std = vec![0.0f32; n * groups];
    for i in 0..n {
        for grp in 0..groups {
            let base = i * c * hw + grp * glen;
            let xs = &xv[base..base + glen];
            let mut sum = 0.0f64;
            for &v in xs {
                sum += v as f64;
            }
            let mean = sum / glen as f64;
            let mut var = 0.0f64;
            for &v in xs {
                let d = v as f64 - mean;
                var += d * d;
            }
            var /= glen as f64;
            let istd = 1.0 / (var + eps as f64).sqrt();
            inv_std[i * groups + grp] = istd as f32;
            for (j, &v) in xs.iter().enumerate() {
                let y = ((v as f64 - mean) * istd) as f32;
                norm[base + j] = y;
                let ch = grp * cg + j / hw;
                out[base + j] = gv[ch] * y + bv[ch];
            }
        }
    }
    drop(xv);
    drop(gv);
    drop(bv);

    let gamma_h = gamma.clone();
    Tensor::from_op(
        shape.clone(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _| {
            let gv = gamma_h.data();
            let mut dx = vec![0.0f32; n * c * hw];
            let mut dgamma = vec![0.0f32; c];
            let mut dbeta = vec![0.0f32; c];
            for i in 0..n {
                for ch in 0..c {
                    let base = i * c * hw + ch * hw;
                    for j in 0..hw {
                        dgamma[ch] += g[base + j] * norm[base + j];
                        dbeta[ch] += g[base + j];
                    }
                }
                for grp in 0..groups {
                    let base = i * c * hw + grp * glen;
                    // yhat = g * gamma (per channel); means over the group
                    let mut m1 = 0.0f64;
                    let mut m2 = 0.0f64;
                    for j in 0..glen {
                        let ch = grp * cg + j / hw;
                        let yh = (g[base + j] * gv[ch]) as f64;
                        m1 += yh;
                        m2 += yh * norm[base + j] as f64;
                    }
                    m1 /= glen as f64;
                    m2 /= glen as f64;
                    let istd = inv_std[i * groups + grp] as f64;
                    for j in 0..glen {
                        let ch = grp * cg + j / hw;
                        let yh = (g[base + j] * gv[ch]) as f64;
                        dx[base + j] = ((yh - m1 - norm[base + j] as f64 * m2) * istd) as f32;
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )
}

/// 2x2 max pooling with stride 2 over [n, c, h, w]; h and w must be even.
pub fn max_pool2(x: &Tensor) -> Tensor {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "max_pool2: input must be [n,c,h,w]");
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2: odd spatial dims {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let xv = x.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    for i in 0..n * c {
        let plane = &xv[i * h * w..(i + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut bidx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (oy * 2 + dy) * w + ox * 2 + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            bidx = idx;
                        }
                    }
                }
                out[i * oh * ow + oy * ow + ox] = best;
                argmax[i * oh * ow + oy * ow + ox] = (i * h * w + bidx) as u32;
            }
        }
    }
    drop(xv);
    let in_len = n * c * h * w;
    Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut dx = vec![0.0f32; in_len];
            for (j, &src) in argmax.iter().enumerate() {
                dx[src as usize] += g[j];
            }
            vec![Some(dx)]
        }),
    )
}

/// Spatial mean over [n, c, h, w] -> [n, c].
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let shape = x.shape().to_vec();
    assert_eq!(shape.len(), 4, "global_avg_pool: input must be [n,c,h,w]");
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let xv = x.data();
    let mut out = vec![0.0f32; n * c];
    for i in 0..n * c {
        out[i] = xv[i * hw..(i + 1) * hw].iter().sum::<f32>() / hw as f32;
    }
    drop(xv);
    Tensor::from_op(
        vec![n, c],
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut dx = vec![0.0f32; n * c * hw];
            for i in 0..n * c {
                let gv = g[i] / hw as f32;
                dx[i * hw..(i + 1) * hw].fill(gv);
            }
            vec![Some(dx)]
        }),
    )
}

/// Fully connected layer: x [n, i] with weight [o, i] and bias [o].
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    x.matmul_nt(w).add_bias(b)
}

/// GRU cell (PyTorch gate layout: reset, update, candidate).
/// x [n, i], h [n, hid], wx [3*hid, i], wh [3*hid, hid], bx/bh [3*hid].
pub fn gru_cell(x: &Tensor, h: &Tensor, wx: &Tensor, wh: &Tensor, bx: &Tensor, bh: &Tensor) -> Tensor {
    let hid = h.shape()[1];
    let gi = dense(x, wx, bx);
    let gh = dense(h, wh, bh);
    let r = gi.slice_cols(0, hid).add(&gh.slice_cols(0, hid)).sigmoid();
    let z = gi.slice_cols(hid, 2 * hid).add(&gh.slice_cols(hid, 2 * hid)).sigmoid();
    let cand = gi
        .slice_cols(2 * hid, 3 * hid)
        .add(&r.mul(&gh.slice_cols(2 * hid, 3 * hid)))
        .tanh();
    // h' = (1 - z) * cand + z * h
    cand.add(&z.mul(&h.sub(&cand)))
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

/// Four conv -> group_norm -> relu -> max_pool blocks followed by a global
/// average pool; the feature width equals the last block's channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: Vec<usize>,
    pub groups: usize,
}

impl EncoderConfig {
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("encoder needs at least one block")
    }

    fn block_geoms(&self) -> Vec<ConvGeom> {
        let mut geoms = Vec::new();
        let (mut h, mut w, mut c) = (self.in_h, self.in_w, self.in_channels);
        for &oc in &self.channels {
            geoms.push(ConvGeom { in_c: c, in_h: h, in_w: w, out_c: oc, kh: 3, kw: 3, stride: 1, pad: 1 });
            c = oc;
            h /= 2;
            w /= 2;
        }
        geoms
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.channels.is_empty() {
            return Err(ShapeError("encoder needs at least one block".into()));
        }
        let div = 1usize << self.channels.len();
        if self.in_h % div != 0 || self.in_w % div != 0 {
            return Err(ShapeError(format!(
                "encoder input {}x{} not divisible by pooling factor {div}",
                self.in_h, self.in_w
            )));
        }
        for &c in &self.channels {
            if c % self.groups != 0 {
                return Err(ShapeError(format!("channel count {c} not divisible by {} groups", self.groups)));
            }
        }
        Ok(())
    }
}

pub fn build_encoder(cfg: &EncoderConfig, rng: &mut impl Rng) -> ParamSet {
    cfg.validate().expect("invalid encoder config");
    let mut params = ParamSet::new();
    for (i, geom) in cfg.block_geoms().iter().enumerate() {
        let k = geom.patch_len();
        params.insert(&format!("conv{i}.w"), kaiming_uniform(&[geom.out_c, k], k, rng));
        params.insert(&format!("conv{i}.b"), zeros_param(&[geom.out_c]));
        params.insert(&format!("gn{i}.g"), Tensor::var(&[geom.out_c], vec![1.0; geom.out_c]));
        params.insert(&format!("gn{i}.b"), zeros_param(&[geom.out_c]));
    }
    params
}

/// Batch of images [n, c, h, w] -> features [n, feature_dim].
pub fn encode(cfg: &EncoderConfig, params: &ParamSet, batch: &Tensor) -> Result<Tensor, ShapeError> {
    let want = [cfg.in_channels, cfg.in_h, cfg.in_w];
    let got = batch.shape();
    if got.len() != 4 || got[1..] != want {
        return Err(ShapeError(format!(
            "encoder expects [n, {}, {}, {}], got {got:?}",
            want[0], want[1], want[2]
        )));
    }
    let mut t = batch.clone();
    for (i, geom) in cfg.block_geoms().iter().enumerate() {
        t = conv2d(&t, params.get(&format!("conv{i}.w")), params.get(&format!("conv{i}.b")), *geom);
        t = group_norm(&t, params.get(&format!("gn{i}.g")), params.get(&format!("gn{i}.b")), cfg.groups, 1e-5);
        t = t.relu();
        t = max_pool2(&t);
    }
    Ok(global_avg_pool(&t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_identity_kernel_preserves_input() {
        // 1x1 kernel with weight 1: output == input
        let x = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f32).collect());
        let w = Tensor::var(&[1, 1], vec![1.0]);
        let b = zeros_param(&[1]);
        let geom = ConvGeom { in_c: 1, in_h: 3, in_w: 3, out_c: 1, kh: 1, kw: 1, stride: 1, pad: 0 };
        let y = conv2d(&x, &w, &b, geom);
        assert_eq!(y.to_vec(), x.to_vec());
        assert_eq!(y.shape(), [1, 1, 3, 3]);
    }

    #[test]
    fn group_norm_constant_group_is_zero_pre_affine() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![5.0; 8]);
        let gamma = Tensor::var(&[2], vec![1.0, 1.0]);
        let beta = zeros_param(&[2]);
        let y = group_norm(&x, &gamma, &beta, 1, 1e-5);
        for v in y.to_vec() {
            assert!(v.abs() < 1e-4, "constant group should normalize to ~0, got {v}");
        }
    }

    #[test]
    fn max_pool_picks_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]);
        assert_eq!(max_pool2(&x).to_vec(), vec![3.0]);
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::var(&[2], vec![1.0, -1.0]));
        let mut adam = AdamState::new(0.1);
        // grad never populated -> skip
        adam.step(&set).unwrap();
        assert_eq!(set.get("w").to_vec(), vec![1.0, -1.0]);
        // explicit zero grad -> zero moments -> unchanged
        set.get("w").set_grad(vec![0.0, 0.0]);
        adam.step(&set).unwrap();
        assert_eq!(set.get("w").to_vec(), vec![1.0, -1.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::var(&[1], vec![0.0]));
        set.get("w").set_grad(vec![1.0]);
        let mut adam = AdamState::new(0.1);
        adam.step(&set).unwrap();
        let w = set.get("w").to_vec()[0];
        assert!((w + 0.1).abs() < 1e-6, "expected -0.1, got {w}");
        // grads were zeroed by the step
        assert!(set.get("w").grad().is_none());
    }

    #[test]
    fn adam_frozen_set_errors_and_preserves_bytes() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::var(&[2], vec![0.25, -0.5]));
        set.get("w").set_grad(vec![1.0, 1.0]);
        set.set_frozen(true);
        let before = set.get("w").to_vec();
        let mut adam = AdamState::new(0.1);
        assert!(adam.step(&set).is_err());
        let after = set.get("w").to_vec();
        assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn encoder_shapes_and_row_independence() {
        let cfg = EncoderConfig { in_channels: 3, in_h: 16, in_w: 16, channels: vec![4, 8], groups: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = build_encoder(&cfg, &mut rng);
        let n = 3;
        let mut data = vec![0.0f32; n * 3 * 16 * 16];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f32) / 101.0;
        }
        // rows 0 and 2 identical
        let row = data[0..3 * 16 * 16].to_vec();
        data[2 * 3 * 16 * 16..].copy_from_slice(&row);
        let batch = Tensor::from_vec(&[n, 3, 16, 16], data);
        let f = encode(&cfg, &params, &batch).unwrap();
        assert_eq!(f.shape(), [n, 8]);
        let fv = f.to_vec();
        assert_eq!(fv[0..8], fv[16..24], "identical inputs must give identical features");

        // all-zero image -> finite features
        let z = Tensor::from_vec(&[1, 3, 16, 16], vec![0.0; 3 * 16 * 16]);
        assert!(encode(&cfg, &params, &z).unwrap().to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encoder_rejects_wrong_shape() {
        let cfg = EncoderConfig { in_channels: 3, in_h: 16, in_w: 16, channels: vec![4], groups: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = build_encoder(&cfg, &mut rng);
        let bad = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(encode(&cfg, &params, &bad).is_err());
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 16;
        let q = orthogonal(n, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let dot: f32 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-4, "row {i}.{j}: {dot}");
            }
        }
    }
}
