//! Semantic re-allocation head, class-token attention aggregation,
//! semantic-attention coupling and box extraction.
//!
//! Spatial maps are `[rows, cols]` over the patch grid; patch token `n`
//! sits at `(n / grid, n % grid)`.

mod bbox;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bbox::{extract_bbox, BBox};

use crate::error::{Error, Result};
use crate::interp;
use crate::params::{ParamVars, Params};
use crate::tensor::{ops, Real, Tape, Tensor, Var};
use crate::vit::{self, AttentionRecord, VitConfig};

/// Classification layer applied to the reshaped patch tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadVariant {
    Fc,
    Conv1d,
    #[default]
    Conv2d,
}

impl HeadVariant {
    pub fn kernel_shape(self, embed_dim: usize, classes: usize) -> Vec<usize> {
        match self {
            HeadVariant::Fc => vec![embed_dim, classes],
            HeadVariant::Conv1d => vec![classes, embed_dim, 3],
            HeadVariant::Conv2d => vec![classes, embed_dim, 3, 3],
        }
    }

    pub fn fan_in(self, embed_dim: usize) -> usize {
        match self {
            HeadVariant::Fc => embed_dim,
            HeadVariant::Conv1d => embed_dim * 3,
            HeadVariant::Conv2d => embed_dim * 9,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadVariant::Fc => "fc",
            HeadVariant::Conv1d => "conv1d",
            HeadVariant::Conv2d => "conv2d",
        }
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(HeadVariant::Fc),
            "conv1d" => Ok(HeadVariant::Conv1d),
            "conv2d" => Ok(HeadVariant::Conv2d),
            other => Err(Error::Config(format!("unknown head variant `{other}`"))),
        }
    }
}

/// Which map localizes an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalizationMode {
    /// Attention map coupled with the class's semantic map.
    #[default]
    TsCam,
    /// Class-agnostic aggregated attention only.
    TransAttention,
    /// Semantic map only.
    TransCam,
}

impl LocalizationMode {
    pub const ALL: [LocalizationMode; 3] = [
        LocalizationMode::TsCam,
        LocalizationMode::TransAttention,
        LocalizationMode::TransCam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LocalizationMode::TsCam => "tscam",
            LocalizationMode::TransAttention => "trans-attention",
            LocalizationMode::TransCam => "trans-cam",
        }
    }
}

impl fmt::Display for LocalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LocalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tscam" => Ok(LocalizationMode::TsCam),
            "trans-attention" => Ok(LocalizationMode::TransAttention),
            "trans-cam" => Ok(LocalizationMode::TransCam),
            other => Err(Error::Config(format!(
                "unknown localization mode `{other}`"
            ))),
        }
    }
}

/// Inclusive, 1-based range of transformer layers to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRange {
    pub lo: usize,
    pub hi: usize,
}

impl LayerRange {
    pub fn all(depth: usize) -> Self {
        Self { lo: 1, hi: depth }
    }

    fn check(&self, depth: usize) -> Result<()> {
        if self.lo == 0 || self.lo > self.hi || self.hi > depth {
            return Err(Error::Config(format!(
                "layer range [{}, {}] invalid for depth {depth}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// `C` per-class maps over the patch grid, `[C, grid, grid]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMaps<T>(pub Tensor<T>);

impl<T: Real> SemanticMaps<T> {
    pub fn num_classes(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn class_map(&self, c: usize) -> Tensor<T> {
        let (g1, g2) = (self.0.shape()[1], self.0.shape()[2]);
        Tensor::new(
            vec![g1, g2],
            self.0.data()[c * g1 * g2..(c + 1) * g1 * g2].to_vec(),
        )
        .unwrap()
    }

    /// Spatially mean-pooled class scores.
    pub fn pooled(&self) -> Vec<T> {
        let plane = self.0.len() / self.num_classes();
        let inv = T::one() / T::lit(plane as f64);
        self.0
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect()
    }
}

fn grid_side(n: usize) -> Result<usize> {
    let g = (n as f64).sqrt().round() as usize;
    if g * g != n || n == 0 {
        return Err(Error::Config(format!(
            "{n} patch tokens do not form a square grid"
        )));
    }
    Ok(g)
}

/// Semantic maps `[C, g, g]` from patch tokens `[N, D]` (class token excluded).
pub fn semantic_maps<T: Real>(
    tape: &mut Tape<T>,
    variant: HeadVariant,
    patch_tokens: Var,
    kernel: Var,
    bias: Var,
) -> Result<Var> {
    let (n, _) = tape.value(patch_tokens).dims2()?;
    let g = grid_side(n)?;
    let maps = match variant {
        HeadVariant::Conv2d => {
            let t = tape.transpose(patch_tokens)?;
            let d = tape.shape(t)[0];
            let t = tape.reshape(t, &[d, g, g])?;
            tape.conv2d_3x3(t, kernel)?
        }
        HeadVariant::Conv1d => {
            let t = tape.transpose(patch_tokens)?;
            tape.conv1d_k3(t, kernel)?
        }
        HeadVariant::Fc => {
            let y = tape.matmul(patch_tokens, kernel)?;
            tape.transpose(y)?
        }
    };
    let c = tape.shape(maps)[0];
    let maps = tape.add_channel_bias(maps, bias)?;
    tape.reshape(maps, &[c, g, g])
}

/// Semantic maps from a full token state (row 0 is the class token).
pub fn semantic_maps_from_tokens<T: Real>(
    tape: &mut Tape<T>,
    cfg: &VitConfig,
    vars: &ParamVars,
    tokens: Var,
) -> Result<Var> {
    let n = tape.shape(tokens)[0];
    let patches = tape.slice_rows(tokens, 1, n)?;
    semantic_maps(
        tape,
        cfg.head,
        patches,
        vars.get("head.weight")?,
        vars.get("head.bias")?,
    )
}

/// Cross-entropy over spatially mean-pooled class scores. Also returns the
/// pooled class probabilities.
pub fn semantic_loss<T: Real>(
    tape: &mut Tape<T>,
    maps: Var,
    label: usize,
) -> Result<(Var, Vec<T>)> {
    let c = tape.shape(maps)[0];
    if label >= c {
        return Err(Error::Label {
            label,
            num_classes: c,
        });
    }
    let pooled = tape.mean_per_channel(maps)?;
    let probs = ops::softmax(tape.value(pooled).data());
    Ok((tape.cross_entropy(pooled, label)?, probs))
}

/// Full forward pass plus the semantic re-allocation loss for one image.
pub fn tscam_loss<T: Real>(
    tape: &mut Tape<T>,
    cfg: &VitConfig,
    vars: &ParamVars,
    image: &Tensor<T>,
    label: usize,
) -> Result<(Var, Vec<T>)> {
    let out = vit::forward(tape, cfg, vars, image)?;
    let maps = semantic_maps_from_tokens(tape, cfg, vars, out.tokens)?;
    semantic_loss(tape, maps, label)
}

/// Mean class-token attention over `range`, with the class token's own
/// entry dropped and the remaining `N` entries reshaped onto the grid.
pub fn aggregate_attention<T: Real>(
    record: &AttentionRecord<T>,
    range: LayerRange,
) -> Result<Tensor<f64>> {
    range.check(record.depth())?;
    let tokens = record.num_tokens();
    let g = grid_side(tokens - 1)?;
    let mut acc = vec![0.0f64; tokens];
    for l in range.lo - 1..range.hi {
        for (a, v) in acc.iter_mut().zip(record.class_attention(l)) {
            *a += v.as_f64();
        }
    }
    let count = (range.hi - range.lo + 1) as f64;
    Tensor::new(vec![g, g], acc[1..].iter().map(|v| v / count).collect())
}

/// `M_c = A ⊙ S_c` for every class.
pub fn couple(attn: &Tensor<f64>, maps: &SemanticMaps<f64>) -> Result<SemanticMaps<f64>> {
    let s = &maps.0;
    if s.rank() != 3 || s.shape()[1..] != *attn.shape() {
        return Err(Error::dim("couple", attn.shape(), s.shape()));
    }
    let plane = attn.len();
    let mut out = s.clone();
    for chunk in out.data_mut().chunks_mut(plane) {
        for (m, &a) in chunk.iter_mut().zip(attn.data()) {
            *m *= a;
        }
    }
    Ok(SemanticMaps(out))
}

/// Bilinear upsampling to `height × width`, then min-max normalization to
/// `[0, 1]`. A constant map becomes all zeros.
pub fn postprocess(map: &Tensor<f64>, height: usize, width: usize) -> Result<Tensor<f64>> {
    let (h, w) = map.dims2()?;
    if height < h || width < w {
        return Err(Error::Config(format!(
            "cannot upsample {h}×{w} map to {height}×{width}"
        )));
    }
    let mut up = interp::resize_planes(map.data(), 1, (h, w), (height, width));
    let (lo, hi) = up
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range > 0.0 {
        up.iter_mut().for_each(|v| *v = (*v - lo) / range);
    } else {
        up.iter_mut().for_each(|v| *v = 0.0);
    }
    Tensor::new(vec![height, width], up)
}

/// Box of a post-processed map; a map without foreground yields the whole
/// image.
pub fn box_from_map(map: &Tensor<f64>, tau: f64) -> Result<BBox> {
    let (h, w) = map.dims2()?;
    match extract_bbox(map, tau) {
        Err(Error::NoForeground) => Ok(BBox::full(w as u32, h as u32)),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeOptions {
    pub mode: LocalizationMode,
    pub tau: f64,
    pub layers: LayerRange,
}

#[derive(Debug, Clone)]
pub struct LocalizationResult {
    /// Class probabilities from the pooled semantic maps.
    pub probs: Vec<f64>,
    pub semantic: SemanticMaps<f64>,
    /// Aggregated class-token attention on the patch grid.
    pub attention: Tensor<f64>,
    /// Per-class localization maps for the selected mode.
    pub maps: SemanticMaps<f64>,
    pub predicted: usize,
    /// Box of the predicted class, in network-input pixels.
    pub bbox: BBox,
    pub record: AttentionRecord<f64>,
    pub tau: f64,
    image_size: usize,
}

impl LocalizationResult {
    pub fn normalized_map(&self, class: usize) -> Result<Tensor<f64>> {
        postprocess(
            &self.maps.class_map(class),
            self.image_size,
            self.image_size,
        )
    }

    pub fn box_for_class(&self, class: usize) -> Result<BBox> {
        if class >= self.probs.len() {
            return Err(Error::Label {
                label: class,
                num_classes: self.probs.len(),
            });
        }
        box_from_map(&self.normalized_map(class)?, self.tau)
    }

    /// Class ids by descending probability (ties by id).
    pub fn ranked_classes(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }
}

/// Runs the model on a preprocessed `[3, S, S]` image and builds the
/// localization map of the requested mode.
pub fn localize<T: Real>(
    cfg: &VitConfig,
    params: &Params<T>,
    image: &Tensor<T>,
    opts: &LocalizeOptions,
) -> Result<LocalizationResult> {
    let mut tape = Tape::inference();
    let vars = params.register(&mut tape);
    let out = vit::forward(&mut tape, cfg, &vars, image)?;
    let maps = semantic_maps_from_tokens(&mut tape, cfg, &vars, out.tokens)?;
    let semantic = SemanticMaps(tape.value(maps).cast::<f64>());
    let probs = ops::softmax(&semantic.pooled());
    let record = AttentionRecord {
        layers: out.attention.layers.iter().map(Tensor::cast).collect(),
        heads: out
            .attention
            .heads
            .iter()
            .map(|hs| hs.iter().map(Tensor::cast).collect())
            .collect(),
    };
    let attention = aggregate_attention(&record, opts.layers)?;
    let maps = match opts.mode {
        LocalizationMode::TsCam => couple(&attention, &semantic)?,
        LocalizationMode::TransCam => semantic.clone(),
        LocalizationMode::TransAttention => {
            let c = semantic.num_classes();
            let g = attention.shape()[0];
            let data = (0..c)
                .flat_map(|_| attention.data().iter().copied())
                .collect();
            SemanticMaps(Tensor::new(vec![c, g, g], data)?)
        }
    };
    let mut result = LocalizationResult {
        probs,
        semantic,
        attention,
        maps,
        predicted: 0,
        bbox: BBox::full(cfg.image_size as u32, cfg.image_size as u32),
        record,
        tau: opts.tau,
        image_size: cfg.image_size,
    };
    result.predicted = result.ranked_classes()[0];
    result.bbox = result.box_for_class(result.predicted)?;
    Ok(result)
}

/// Pairwise cosine similarities of the rows of `[n, D]`.
pub fn cosine_similarity_matrix<T: Real>(vectors: &Tensor<T>) -> Result<Tensor<f64>> {
    let (n, _) = vectors.dims2()?;
    let norms: Vec<f64> = (0..n)
        .map(|r| {
            vectors
                .row(r)
                .iter()
                .map(|v| v.as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if let Some(r) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateVector(r));
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in i + 1..n {
            let dot: f64 = vectors
                .row(i)
                .iter()
                .zip(vectors.row(j))
                .map(|(a, b)| a.as_f64() * b.as_f64())
                .sum();
            let s = dot / (norms[i] * norms[j]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Tensor::new(vec![n, n], out)
}
