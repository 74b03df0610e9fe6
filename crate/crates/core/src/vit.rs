//! Toy-scale vision transformer with per-layer attention recording.
//!
//! Pre-norm blocks (`x += MHSA(LN(x)); x += MLP(LN(x))`), GELU MLP, learned
//! class token and positional embedding, final layer norm. Weights are stored
//! `[in, out]` so that a linear layer is `x · W + b`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::HeadVariant;
use crate::params::{ParamVars, Params};
use crate::tensor::{ops, Real, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub head: HeadVariant,
    /// Adds the linear class-token classifier used by the baseline objective.
    #[serde(default)]
    pub class_token_head: bool,
}

fn default_mlp_ratio() -> f64 {
    4.0
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            depth: 4,
            heads: 4,
            embed_dim: 64,
            mlp_ratio: 4.0,
            num_classes: 4,
            head: HeadVariant::Conv2d,
            class_token_head: false,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("depth", self.depth),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = nonzero.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_hidden() == 0 {
            return Err(Error::Config(
                "mlp_ratio leaves an empty hidden layer".into(),
            ));
        }
        Ok(())
    }

    /// Patch-grid side (`w = W/P`, `h = H/P`; images are square).
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, hid, c) = (self.embed_dim, self.mlp_hidden(), self.num_classes);
        let mut out = vec![
            ("patch_proj".to_string(), vec![self.patch_dim(), d]),
            ("cls_token".to_string(), vec![1, d]),
            ("pos_embed".to_string(), vec![self.num_patches() + 1, d]),
        ];
        for l in 0..self.depth {
            let b = |s: &str| format!("blocks.{l}.{s}");
            out.extend([
                (b("ln1.weight"), vec![d]),
                (b("ln1.bias"), vec![d]),
                (b("qkv.weight"), vec![d, 3 * d]),
                (b("qkv.bias"), vec![3 * d]),
                (b("proj.weight"), vec![d, d]),
                (b("proj.bias"), vec![d]),
                (b("ln2.weight"), vec![d]),
                (b("ln2.bias"), vec![d]),
                (b("mlp1.weight"), vec![d, hid]),
                (b("mlp1.bias"), vec![hid]),
                (b("mlp2.weight"), vec![hid, d]),
                (b("mlp2.bias"), vec![d]),
            ]);
        }
        out.push(("norm.weight".into(), vec![d]));
        out.push(("norm.bias".into(), vec![d]));
        out.push(("head.weight".into(), self.head.kernel_shape(d, c)));
        out.push(("head.bias".into(), vec![c]));
        if self.class_token_head {
            out.push(("cls_head.weight".into(), vec![d, c]));
            out.push(("cls_head.bias".into(), vec![c]));
        }
        out
    }
}

/// Per-layer attention captured during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord<T> {
    /// Head-averaged attention matrix per layer, `[(N+1), (N+1)]`.
    pub layers: Vec<Tensor<T>>,
    /// Raw per-head matrices per layer.
    pub heads: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> AttentionRecord<T> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Class-token attention row of layer `l` (0-based).
    pub fn class_attention(&self, l: usize) -> &[T] {
        self.layers[l].row(0)
    }

    pub fn num_tokens(&self) -> usize {
        self.layers.first().map_or(0, |a| a.shape()[0])
    }
}

pub struct ForwardOutput<T> {
    /// Final token state after the closing layer norm, `[(N+1), D]`.
    pub tokens: Var,
    pub attention: AttentionRecord<T>,
}

/// Splits a `[3, H, W]` image into `P×P` patches, row-major over the grid;
/// each patch is flattened channel-major.
pub fn patchify<T: Real>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (ch, h, w) = match image.shape() {
        &[ch, h, w] => (ch, h, w),
        other => {
            return Err(Error::Config(format!(
                "image must be [3, H, W], got {other:?}"
            )))
        }
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}×{w} is not divisible into {patch}×{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let pd = ch * patch * patch;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * pd);
    for gy in 0..gh {
        for gx in 0..gw {
            for c in 0..ch {
                for py in 0..patch {
                    let row = c * h * w + (gy * patch + py) * w + gx * patch;
                    out.extend_from_slice(&src[row..row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, pd], out)
}

/// Token state: row 0 is `cls + pos[0]`, row n is `patches[n-1]·proj + pos[n]`.
pub fn embed<T: Real>(tape: &mut Tape<T>, vars: &ParamVars, patches: &Tensor<T>) -> Result<Var> {
    let proj = vars.get("patch_proj")?;
    let cls = vars.get("cls_token")?;
    let pos = vars.get("pos_embed")?;
    let n = patches.dims2()?.0;
    if tape.shape(pos)[0] != n + 1 {
        return Err(Error::dim("embed", patches.shape(), tape.shape(pos)));
    }
    let p = tape.constant(patches.clone());
    let projected = tape.matmul(p, proj)?;
    let stacked = concat_rows(tape, cls, projected)?;
    tape.add(stacked, pos)
}

/// Stacks `top` (one row) above `rest`.
fn concat_rows<T: Real>(tape: &mut Tape<T>, top: Var, rest: Var) -> Result<Var> {
    let a = tape.transpose(top)?;
    let b = tape.transpose(rest)?;
    let joined = tape.concat_cols(&[a, b])?;
    tape.transpose(joined)
}

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, vars: &ParamVars, name: &str) -> Result<Var> {
    let w = vars.get(&format!("{name}.weight"))?;
    let b = vars.get(&format!("{name}.bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

fn norm<T: Real>(tape: &mut Tape<T>, x: Var, vars: &ParamVars, name: &str) -> Result<Var> {
    let g = vars.get(&format!("{name}.weight"))?;
    let b = vars.get(&format!("{name}.bias"))?;
    tape.layer_norm(x, g, b, T::lit(LN_EPS))
}

/// One pre-norm block. Returns the new token state, the head-averaged
/// attention matrix and the per-head matrices.
pub fn block_forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &VitConfig,
    vars: &ParamVars,
    x: Var,
    layer: usize,
) -> Result<(Var, Tensor<T>, Vec<Tensor<T>>)> {
    let prefix = format!("blocks.{layer}");
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let scale = T::one() / T::lit(dh as f64).sqrt();

    let h = norm(tape, x, vars, &format!("{prefix}.ln1"))?;
    let qkv = linear(tape, h, vars, &format!("{prefix}.qkv"))?;
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut head_maps = Vec::with_capacity(cfg.heads);
    for k in 0..cfg.heads {
        let q = tape.slice_cols(qkv, k * dh, (k + 1) * dh)?;
        let kk = tape.slice_cols(qkv, d + k * dh, d + (k + 1) * dh)?;
        let v = tape.slice_cols(qkv, 2 * d + k * dh, 2 * d + (k + 1) * dh)?;
        let scores = tape.matmul_nt(q, kk)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax_rows(scores)?;
        head_maps.push(tape.value(attn).clone());
        outs.push(tape.matmul(attn, v)?);
    }
    let merged = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    let attn_out = linear(tape, merged, vars, &format!("{prefix}.proj"))?;
    let x = tape.add(x, attn_out)?;

    let h = norm(tape, x, vars, &format!("{prefix}.ln2"))?;
    let h = linear(tape, h, vars, &format!("{prefix}.mlp1"))?;
    let h = tape.gelu(h)?;
    let h = linear(tape, h, vars, &format!("{prefix}.mlp2"))?;
    let x = tape.add(x, h)?;

    let mut mean = head_maps[0].clone();
    for m in &head_maps[1..] {
        mean.add_assign(m)?;
    }
    let mean = mean.scale(T::one() / T::lit(cfg.heads as f64));
    Ok((x, mean, head_maps))
}

/// Embeds `image` and runs every block, recording attention.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &VitConfig,
    vars: &ParamVars,
    image: &Tensor<T>,
) -> Result<ForwardOutput<T>> {
    if image.shape() != [3, cfg.image_size, cfg.image_size] {
        return Err(Error::dim(
            "forward",
            image.shape(),
            &[3, cfg.image_size, cfg.image_size],
        ));
    }
    let patches = patchify(image, cfg.patch_size)?;
    let mut x = embed(tape, vars, &patches)?;
    let mut record = AttentionRecord {
        layers: Vec::with_capacity(cfg.depth),
        heads: Vec::with_capacity(cfg.depth),
    };
    for l in 0..cfg.depth {
        let (next, mean, heads) = block_forward(tape, cfg, vars, x, l)?;
        x = next;
        record.layers.push(mean);
        record.heads.push(heads);
    }
    let tokens = norm(tape, x, vars, "norm")?;
    Ok(ForwardOutput {
        tokens,
        attention: record,
    })
}

/// Linear class-token classifier logits `[C]`.
pub fn class_token_logits<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    tokens: Var,
) -> Result<Var> {
    let t_star = tape.slice_rows(tokens, 0, 1)?;
    let logits = linear(tape, t_star, vars, "cls_head")?;
    let c = tape.shape(logits)[1];
    tape.reshape(logits, &[c])
}

/// Class probabilities from the class-token head.
pub fn classify_class_token<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    tokens: Var,
) -> Result<Vec<T>> {
    let logits = class_token_logits(tape, vars, tokens)?;
    Ok(ops::softmax(tape.value(logits).data()))
}

/// `−log p_y` on the class-token head.
pub fn class_token_loss<T: Real>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    tokens: Var,
    label: usize,
) -> Result<Var> {
    let logits = class_token_logits(tape, vars, tokens)?;
    tape.cross_entropy(logits, label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub rows: Vec<SummaryRow>,
    pub total: usize,
}

pub fn model_summary<T: Real>(params: &Params<T>) -> ModelSummary {
    let rows: Vec<SummaryRow> = params
        .iter()
        .map(|(name, t)| SummaryRow {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            count: t.len(),
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    ModelSummary { rows, total }
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        writeln!(f, "{:<width$}  {:<16}  {:>10}", "name", "shape", "params")?;
        for r in &self.rows {
            let shape = format!("{:?}", r.shape);
            writeln!(f, "{:<width$}  {:<16}  {:>10}", r.name, shape, r.count)?;
        }
        write!(f, "{:<width$}  {:<16}  {:>10}", "total", "", self.total)
    }
}
