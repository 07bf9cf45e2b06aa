//! Conv encoder with single-head, LOEV and LOEV++ projection topologies.
//!
//! Input `(N, frames, bins)` log-mel -> fixed input layer (time pooling and
//! affine rescale) -> stride-2 3x3 conv blocks with ReLU -> pooling -> dense
//! to `embed_dim` = superspace. Pooling is a global mean (default) or a mean
//! over time that keeps the frequency axis (`Pooling::Time`, flattened).
//! Heads: dense + ReLU hidden layers, linear projection, L2 normalization.
//!
//! For `LoevPlusPlus` the last `tail_blocks` conv blocks plus the pooling and
//! dense layer are replicated once per head.

use ndarray::{Array1, Array2, Array3, Array4, Axis, Ix1, Ix2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::he_uniform;
use crate::nn::{self, ConvCache, ConvGeom, ParamSet, Scalar};
use crate::seed;

const GEOM: ConvGeom = ConvGeom { kernel: 3, stride: 2, pad: 1 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    SingleHead,
    Loev,
    LoevPlusPlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over time and frequency.
    Global,
    /// Mean over time; channels x frequency are flattened.
    Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_frames: usize,
    pub mel_bins: usize,
    /// Frames averaged together by the fixed input layer.
    pub time_pool: usize,
    pub input_offset: f64,
    pub input_scale: f64,
    pub channels: Vec<usize>,
    pub pooling: Pooling,
    pub embed_dim: usize,
    pub head_hidden: Vec<usize>,
    pub proj_dim: usize,
    pub topology: Topology,
    /// One tag per variant head, in chain order (e.g. `["p", "t"]`).
    pub variant_tags: Vec<String>,
    /// Conv blocks replicated per tail under `LoevPlusPlus`.
    pub tail_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_frames: 400,
            mel_bins: 128,
            time_pool: 4,
            input_offset: -6.0,
            input_scale: 0.25,
            channels: vec![8, 16, 32, 64],
            pooling: Pooling::Global,
            embed_dim: 128,
            head_hidden: vec![256],
            proj_dim: 64,
            topology: Topology::Loev,
            variant_tags: vec!["p".into(), "t".into()],
            tail_blocks: 1,
        }
    }
}

/// A named embedding space of a particular model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Shared superspace `V` (single-head and LOEV).
    Super,
    /// Tail output `V^i` (0) or `V^k` (1 + k) under LOEV++.
    Tail(usize),
    /// `V^++`: concatenation of all tail outputs.
    Concat,
    /// Normalized projection `Z^i` (0) or `Z^k` (1 + k).
    Proj(usize),
}

impl ModelConfig {
    pub fn k(&self) -> usize {
        self.variant_tags.len()
    }

    pub fn n_heads(&self) -> usize {
        1 + self.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::param("channels", "need at least one block, all widths > 0"));
        }
        if self.embed_dim == 0 || self.proj_dim == 0 || self.head_hidden.contains(&0) {
            return Err(Error::param("embed_dim", "layer widths must be positive"));
        }
        if self.time_pool == 0 || self.input_frames % self.time_pool != 0 || self.input_frames == 0 {
            return Err(Error::param("time_pool", "must divide input_frames"));
        }
        if self.mel_bins == 0 {
            return Err(Error::param("mel_bins", "must be positive"));
        }
        if self.topology == Topology::SingleHead && self.k() > 0 {
            return Err(Error::param("variant_tags", "single_head has no variant heads"));
        }
        if self.topology == Topology::LoevPlusPlus && self.tail_blocks > self.channels.len() {
            return Err(Error::param("tail_blocks", "exceeds the number of conv blocks"));
        }
        for (i, t) in self.variant_tags.iter().enumerate() {
            if t.is_empty() || t == "i" || t == "++" || self.variant_tags[..i].contains(t) {
                return Err(Error::param("variant_tags", format!("invalid or repeated tag `{t}`")));
            }
        }
        Ok(())
    }

    fn trunk_blocks(&self) -> usize {
        match self.topology {
            Topology::LoevPlusPlus => self.channels.len() - self.tail_blocks,
            _ => self.channels.len(),
        }
    }

    /// Width of the pooled conv output feeding the embedding layer.
    fn pooled_width(&self) -> usize {
        let c = *self.channels.last().unwrap();
        match self.pooling {
            Pooling::Global => c,
            Pooling::Time => c * (0..self.channels.len()).fold(self.mel_bins, |w, _| GEOM.out_len(w)),
        }
    }

    fn tag_index(&self, tag: &str) -> Option<usize> {
        if tag == "i" {
            return Some(0);
        }
        self.variant_tags.iter().position(|t| t == tag).map(|k| k + 1)
    }

    /// Parse names such as `V`, `V^p`, `Vp`, `V^++`, `Z^i`, `Z`.
    pub fn resolve_space(&self, name: &str) -> Result<Space> {
        let clean: String = name.chars().filter(|c| !matches!(c, '^' | '_' | ' ')).collect();
        let unknown = || Error::UnknownSpace(name.to_string());
        let mut chars = clean.chars();
        let head = chars.next().ok_or_else(unknown)?.to_ascii_uppercase();
        let tag = chars.as_str().to_ascii_lowercase();
        let plus = self.topology == Topology::LoevPlusPlus;
        match (head, tag.as_str()) {
            ('V', "") if plus => Ok(Space::Concat),
            ('V', "") => Ok(Space::Super),
            ('V', "++") if plus => Ok(Space::Concat),
            ('V', t) if plus => self.tag_index(t).map(Space::Tail).ok_or_else(unknown),
            ('Z', "") => Ok(Space::Proj(0)),
            ('Z', t) => self.tag_index(t).map(Space::Proj).ok_or_else(unknown),
            _ => Err(unknown()),
        }
    }

    pub fn space_name(&self, space: Space) -> String {
        let tag = |i: usize| if i == 0 { "i".to_string() } else { self.variant_tags[i - 1].clone() };
        match space {
            Space::Super => "V".into(),
            Space::Concat => "V^++".into(),
            Space::Tail(i) => format!("V^{}", tag(i)),
            Space::Proj(i) => format!("Z^{}", tag(i)),
        }
    }

    /// Every space this topology exposes.
    pub fn spaces(&self) -> Vec<Space> {
        let heads = self.n_heads();
        let mut out = Vec::new();
        if self.topology == Topology::LoevPlusPlus {
            out.extend((0..heads).map(Space::Tail));
            out.push(Space::Concat);
        } else {
            out.push(Space::Super);
        }
        out.extend((0..heads).map(Space::Proj));
        out
    }

    pub fn space_dim(&self, space: Space) -> usize {
        match space {
            Space::Super | Space::Tail(_) => self.embed_dim,
            Space::Concat => self.embed_dim * self.n_heads(),
            Space::Proj(_) => self.proj_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct BranchIdx {
    convs: Vec<ConvIdx>,
    embed: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    trunk: BranchIdx,
    tails: Vec<BranchIdx>,
    heads: Vec<Vec<(usize, usize)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

fn name_seed(base: u64, name: &str) -> u64 {
    name.bytes().fold(seed::mix64(base), |h, b| seed::mix64(h ^ b as u64))
}

/// Register parameters in a fixed order. `init` decides the values.
fn make_layout<T: Scalar>(config: &ModelConfig, params: &mut ParamSet<T>, init: &mut dyn FnMut(&str, &[usize], usize) -> ndarray::ArrayD<T>) -> Layout {
    let mut add = |params: &mut ParamSet<T>, name: String, shape: &[usize], fan_in: usize| {
        let v = init(&name, shape, fan_in);
        params.push(name, v)
    };
    let conv = |params: &mut ParamSet<T>, add: &mut dyn FnMut(&mut ParamSet<T>, String, &[usize], usize) -> usize, prefix: &str, i: usize| {
        let cin = if i == 0 { 1 } else { config.channels[i - 1] };
        let cout = config.channels[i];
        let fan = cin * GEOM.kernel * GEOM.kernel;
        ConvIdx {
            w: add(params, format!("{prefix}.conv{i}.w"), &[cout, fan], fan),
            b: add(params, format!("{prefix}.conv{i}.b"), &[cout], fan),
        }
    };
    let flat = config.pooled_width();
    let split = config.trunk_blocks();
    let mut trunk = BranchIdx {
        convs: (0..split).map(|i| conv(params, &mut add, "trunk", i)).collect(),
        embed: None,
    };
    let mut tails = Vec::new();
    let heads_n = config.n_heads();
    let tag = |h: usize| if h == 0 { "i".to_string() } else { config.variant_tags[h - 1].clone() };
    if config.topology == Topology::LoevPlusPlus {
        for h in 0..heads_n {
            let prefix = format!("tail_{}", tag(h));
            let convs = (split..config.channels.len()).map(|i| conv(params, &mut add, &prefix, i)).collect();
            let w = add(params, format!("{prefix}.embed.w"), &[flat, config.embed_dim], flat);
            let b = add(params, format!("{prefix}.embed.b"), &[config.embed_dim], flat);
            tails.push(BranchIdx { convs, embed: Some((w, b)) });
        }
    } else {
        let w = add(params, "trunk.embed.w".into(), &[flat, config.embed_dim], flat);
        let b = add(params, "trunk.embed.b".into(), &[config.embed_dim], flat);
        trunk.embed = Some((w, b));
    }
    let mut heads = Vec::new();
    for h in 0..heads_n {
        let mut widths = vec![config.embed_dim];
        widths.extend(&config.head_hidden);
        widths.push(config.proj_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, wd)| {
                let w = add(params, format!("head_{}.fc{l}.w", tag(h)), &[wd[0], wd[1]], wd[0]);
                let b = add(params, format!("head_{}.fc{l}.b", tag(h)), &[wd[1]], wd[0]);
                (w, b)
            })
            .collect();
        heads.push(layers);
    }
    Layout { trunk, tails, heads }
}

pub fn build_model<T: Scalar>(config: &ModelConfig, init_seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut params = ParamSet::new();
    let layout = make_layout(config, &mut params, &mut |name, shape, fan_in| {
        let mut rng = seed::rng(name_seed(init_seed, name));
        if name.ends_with(".b") {
            let bound = 1.0 / (fan_in as f64).sqrt();
            ndarray::ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || T::of(rng.random_range(-bound..bound)))
        } else {
            he_uniform(shape, fan_in, &mut rng)
        }
    });
    Ok(Model {
        config: config.clone(),
        params,
        layout,
    })
}

/// Batched embeddings; row `r` of every matrix belongs to input `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle<T> {
    /// `[V]` for single-head and LOEV; `[V^i, V^k..]` for LOEV++.
    pub superspace: Vec<Array2<T>>,
    /// Unit-norm projections `[Z^i, Z^k..]`.
    pub projections: Vec<Array2<T>>,
}

impl<T: Scalar> EmbeddingBundle<T> {
    pub fn space(&self, space: Space) -> Array2<T> {
        match space {
            Space::Super => self.superspace[0].clone(),
            Space::Tail(i) => self.superspace[i].clone(),
            Space::Concat => {
                let views: Vec<_> = self.superspace.iter().map(|a| a.view()).collect();
                ndarray::concatenate(Axis(1), &views).unwrap()
            }
            Space::Proj(i) => self.projections[i].clone(),
        }
    }

    pub fn rows(&self) -> usize {
        self.projections[0].nrows()
    }
}

#[derive(Clone, Debug)]
struct BranchCache<T> {
    conv: Vec<(ConvCache<T>, Array4<T>)>,
    pooled_shape: Option<(usize, usize, usize, usize)>,
    pooled: Option<Array2<T>>,
}

#[derive(Clone, Debug)]
struct HeadCache<T> {
    inputs: Vec<Array2<T>>,
    z: Array2<T>,
    norms: Array1<T>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    trunk: BranchCache<T>,
    tails: Vec<BranchCache<T>>,
    heads: Vec<HeadCache<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn mat(&self, i: usize) -> ndarray::ArrayView2<'_, T> {
        self.params.get(i).view().into_dimensionality::<Ix2>().unwrap()
    }

    fn vec(&self, i: usize) -> Array1<T> {
        self.params.get(i).view().into_dimensionality::<Ix1>().unwrap().to_owned()
    }

    fn branch_forward(&self, x: Array4<T>, idx: &BranchIdx) -> (Array4<T>, Option<Array2<T>>, BranchCache<T>) {
        let mut cur = x;
        let mut conv = Vec::with_capacity(idx.convs.len());
        for c in &idx.convs {
            let (mut y, cache) = nn::conv2d_forward(&cur, self.mat(c.w), &self.vec(c.b), GEOM);
            nn::relu_inplace(&mut y);
            conv.push((cache, y.clone()));
            cur = y;
        }
        let mut cache = BranchCache { conv, pooled_shape: None, pooled: None };
        let embedding = idx.embed.map(|(w, b)| {
            let pooled = match self.config.pooling {
                Pooling::Global => nn::global_mean(&cur),
                Pooling::Time => nn::time_mean_flatten(&cur),
            };
            let e = nn::dense_forward(&pooled, self.mat(w), &self.vec(b));
            cache.pooled_shape = Some(cur.dim());
            cache.pooled = Some(pooled);
            e
        });
        (cur, embedding, cache)
    }

    /// Returns the gradient w.r.t. the branch input when `need_dx`.
    fn branch_backward(
        &self,
        idx: &BranchIdx,
        cache: &BranchCache<T>,
        d_embed: Option<&Array2<T>>,
        d_out: Option<Array4<T>>,
        need_dx: bool,
        grads: &mut ParamSet<T>,
    ) -> Option<Array4<T>> {
        let mut d = d_out;
        if let (Some((w, b)), Some(de)) = (idx.embed, d_embed) {
            let pooled = cache.pooled.as_ref().unwrap();
            let (dx, dw, db) = nn::dense_backward(de, pooled, self.mat(w), true);
            *grads.get_mut(w) += &dw.into_dyn();
            *grads.get_mut(b) += &db.into_dyn();
            let shape = cache.pooled_shape.unwrap();
            let dp = match self.config.pooling {
                Pooling::Global => nn::global_mean_backward(&dx.unwrap(), shape),
                Pooling::Time => nn::time_mean_flatten_backward(&dx.unwrap(), shape),
            };
            d = Some(match d {
                Some(prev) => prev + dp,
                None => dp,
            });
        }
        let mut d = d?;
        for (j, c) in idx.convs.iter().enumerate().rev() {
            let (cc, y) = &cache.conv[j];
            nn::relu_backward(&mut d, y);
            let want_dx = j > 0 || need_dx;
            let (dx, dw, db) = nn::conv2d_backward(&d, cc, self.mat(c.w), GEOM, want_dx);
            *grads.get_mut(c.w) += &dw.into_dyn();
            *grads.get_mut(c.b) += &db.into_dyn();
            match dx {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    fn head_forward(&self, e: &Array2<T>, layers: &[(usize, usize)]) -> (Array2<T>, HeadCache<T>) {
        let mut inputs = Vec::with_capacity(layers.len());
        let mut cur = e.clone();
        for (l, &(w, b)) in layers.iter().enumerate() {
            let mut y = nn::dense_forward(&cur, self.mat(w), &self.vec(b));
            if l + 1 < layers.len() {
                nn::relu_inplace(&mut y);
            }
            inputs.push(std::mem::replace(&mut cur, y));
        }
        let (z, norms) = nn::l2_normalize(&cur);
        (z.clone(), HeadCache { inputs, z, norms })
    }

    fn head_backward(&self, layers: &[(usize, usize)], cache: &HeadCache<T>, dz: &Array2<T>, grads: &mut ParamSet<T>) -> Array2<T> {
        let mut d = nn::l2_normalize_backward(dz, &cache.z, &cache.norms);
        for (l, &(w, b)) in layers.iter().enumerate().rev() {
            if l + 1 < layers.len() {
                // inputs[l + 1] is the ReLU output of layer l.
                nn::relu_backward(&mut d, &cache.inputs[l + 1]);
            }
            let (dx, dw, db) = nn::dense_backward(&d, &cache.inputs[l], self.mat(w), true);
            *grads.get_mut(w) += &dw.into_dyn();
            *grads.get_mut(b) += &db.into_dyn();
            d = dx.unwrap();
        }
        d
    }

    fn check_input(&self, x: &Array3<f32>) -> Result<()> {
        let (_, f, b) = x.dim();
        if f != self.config.input_frames || b != self.config.mel_bins {
            return Err(Error::Shape {
                expected: format!("(N, {}, {})", self.config.input_frames, self.config.mel_bins),
                actual: format!("{:?}", x.dim()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array3<f32>) -> Result<(EmbeddingBundle<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let c = &self.config;
        let input = nn::input_layer::<T>(x, c.time_pool, c.input_offset, c.input_scale);
        let (trunk_out, trunk_e, trunk_cache) = self.branch_forward(input, &self.layout.trunk);
        let mut tail_caches = Vec::new();
        let superspace = match trunk_e {
            Some(e) => vec![e],
            None => self
                .layout
                .tails
                .iter()
                .map(|t| {
                    let (_, e, cache) = self.branch_forward(trunk_out.clone(), t);
                    tail_caches.push(cache);
                    e.unwrap()
                })
                .collect(),
        };
        let mut projections = Vec::new();
        let mut head_caches = Vec::new();
        for (h, layers) in self.layout.heads.iter().enumerate() {
            let src = if superspace.len() == 1 { &superspace[0] } else { &superspace[h] };
            let (z, cache) = self.head_forward(src, layers);
            projections.push(z);
            head_caches.push(cache);
        }
        Ok((
            EmbeddingBundle { superspace, projections },
            ForwardCache {
                trunk: trunk_cache,
                tails: tail_caches,
                heads: head_caches,
            },
        ))
    }

    /// Forward pass without keeping activations.
    pub fn embed(&self, x: &Array3<f32>) -> Result<EmbeddingBundle<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Parameter gradients given loss gradients w.r.t. each normalized
    /// projection (`None` = the head does not contribute).
    pub fn backward(&self, cache: &ForwardCache<T>, dz: &[Option<Array2<T>>]) -> Result<ParamSet<T>> {
        if dz.len() != self.layout.heads.len() {
            return Err(Error::Shape {
                expected: format!("{} head gradients", self.layout.heads.len()),
                actual: format!("{}", dz.len()),
            });
        }
        let mut grads = self.params.zeros_like();
        let mut de: Vec<Option<Array2<T>>> = vec![None; self.layout.heads.len()];
        for (h, layers) in self.layout.heads.iter().enumerate() {
            if let Some(d) = &dz[h] {
                de[h] = Some(self.head_backward(layers, &cache.heads[h], d, &mut grads));
            }
        }
        if self.layout.tails.is_empty() {
            let total = de.into_iter().flatten().reduce(|a, b| a + b);
            if let Some(total) = total {
                self.branch_backward(&self.layout.trunk, &cache.trunk, Some(&total), None, false, &mut grads);
            }
        } else {
            let trunk_has_convs = !self.layout.trunk.convs.is_empty();
            let mut d_trunk: Option<Array4<T>> = None;
            for (h, tail) in self.layout.tails.iter().enumerate() {
                if let Some(d) = &de[h] {
                    let dx = self.branch_backward(tail, &cache.tails[h], Some(d), None, trunk_has_convs, &mut grads);
                    if let Some(dx) = dx {
                        d_trunk = Some(match d_trunk {
                            Some(prev) => prev + dx,
                            None => dx,
                        });
                    }
                }
            }
            if d_trunk.is_some() {
                self.branch_backward(&self.layout.trunk, &cache.trunk, None, d_trunk, false, &mut grads);
            }
        }
        Ok(grads)
    }

    /// Names of parameters used only by head `h` (its tail and projection head).
    pub fn exclusive_params(&self, h: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.layout.heads[h].iter().flat_map(|&(w, b)| [w, b]).collect();
        if let Some(tail) = self.layout.tails.get(h) {
            out.extend(tail.convs.iter().flat_map(|c| [c.w, c.b]));
            if let Some((w, b)) = tail.embed {
                out.extend([w, b]);
            }
        }
        out
    }

    pub fn trunk_params(&self) -> Vec<usize> {
        let t = &self.layout.trunk;
        let mut out: Vec<usize> = t.convs.iter().flat_map(|c| [c.w, c.b]).collect();
        if let Some((w, b)) = t.embed {
            out.extend([w, b]);
        }
        out
    }

    /// Rebuild a model around existing parameters (e.g. from a checkpoint).
    pub fn from_params(config: &ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let fresh: Model<T> = build_model(config, 0)?;
        fresh.params.check_layout(&params)?;
        Ok(Model {
            config: config.clone(),
            params,
            layout: fresh.layout,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }
}
