//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tscam_core::dataset::synth::SHAPE_KINDS;
use tscam_core::dataset::{Background, SynthConfig};
use tscam_core::head::{HeadVariant, LayerRange, LocalizationMode};
use tscam_core::training::{AdamWConfig, TrainConfig};
use tscam_core::vit::VitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    All,
    Range(usize, usize),
}

impl LayerSpec {
    pub fn resolve(self, depth: usize) -> LayerRange {
        match self {
            LayerSpec::All => LayerRange::all(depth),
            LayerSpec::Range(lo, hi) => LayerRange { lo, hi },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Top1,
    Gt,
    AllTop5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityTarget {
    PosEmbed,
    PatchTokens,
}

/// A value that can be read from and written back to a config line.
pub trait ConfigValue: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64, bool);

macro_rules! core_enum_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> Result<Self, String> {
                <$t as FromStr>::from_str(s).map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

core_enum_value!(HeadVariant, LocalizationMode);

impl ConfigValue for Background {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|e: tscam_core::Error| e.to_string())
    }
    fn render(&self) -> String {
        match self {
            Background::Blobs => "blobs",
            Background::Flat => "flat",
        }
        .into()
    }
}

impl ConfigValue for LayerSpec {
    fn parse(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(LayerSpec::All);
        }
        let (a, b) = s.split_once('-').unwrap_or((s, s));
        let lo: usize = a
            .trim()
            .parse()
            .map_err(|_| format!("bad layer range `{s}`"))?;
        let hi: usize = b
            .trim()
            .parse()
            .map_err(|_| format!("bad layer range `{s}`"))?;
        if lo == 0 || lo > hi {
            return Err(format!("layer range `{s}` must be 1-based and ascending"));
        }
        Ok(LayerSpec::Range(lo, hi))
    }
    fn render(&self) -> String {
        match self {
            LayerSpec::All => "all".into(),
            LayerSpec::Range(lo, hi) => format!("{lo}-{hi}"),
        }
    }
}

impl ConfigValue for Selector {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "top1" => Ok(Selector::Top1),
            "gt" => Ok(Selector::Gt),
            "all-top5" => Ok(Selector::AllTop5),
            _ => Err(format!("unknown selector `{s}` (top1, gt, all-top5)")),
        }
    }
    fn render(&self) -> String {
        match self {
            Selector::Top1 => "top1",
            Selector::Gt => "gt",
            Selector::AllTop5 => "all-top5",
        }
        .into()
    }
}

impl ConfigValue for SimilarityTarget {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "pos-embed" => Ok(SimilarityTarget::PosEmbed),
            "patch-tokens" => Ok(SimilarityTarget::PatchTokens),
            _ => Err(format!(
                "unknown similarity target `{s}` (pos-embed, patch-tokens)"
            )),
        }
    }
    fn render(&self) -> String {
        match self {
            SimilarityTarget::PosEmbed => "pos-embed",
            SimilarityTarget::PatchTokens => "patch-tokens",
        }
        .into()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
            .collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for Option<usize> {
    fn parse(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("{e}"))
        }
    }
    fn render(&self) -> String {
        self.map(|v| v.to_string()).unwrap_or_default()
    }
}

impl ConfigValue for Option<PathBuf> {
    fn parse(s: &str) -> Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
    fn render(&self) -> String {
        self.as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    }
}

macro_rules! run_config {
    ($( $group:literal { $( $field:ident : $ty:ty = $default:expr, $help:literal; )* } )*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($( pub $field: $ty, )*)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($( $field: $default, )*)* }
            }
        }

        /// `(key, group, help)` for every configuration key.
        pub const KEYS: &[(&str, &str, &str)] = &[
            $($( (stringify!($field), $group, $help), )*)*
        ];

        impl RunConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $($( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse(value.trim())
                            .map_err(|e| format!("`{key}`: {e}"))?;
                    } )*)*
                    _ => return Err(format!("unknown configuration key `{key}`")),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($( stringify!($field) => Some(self.$field.render()), )*)*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    "model" {
        image_size: usize = 64, "input side length in pixels";
        patch_size: usize = 8, "patch side length";
        depth: usize = 4, "transformer blocks";
        heads: usize = 4, "attention heads";
        embed_dim: usize = 64, "token width";
        mlp_ratio: f64 = 4.0, "MLP hidden width over token width";
        num_classes: usize = 4, "number of classes";
        head: HeadVariant = HeadVariant::Conv2d, "semantic head: fc, conv1d or conv2d";
        class_token_head: bool = false, "add a linear classifier on the class token";
    }
    "data" {
        train_count: usize = 400, "training images to generate";
        val_count: usize = 100, "validation images to generate";
        test_count: usize = 200, "test images to generate";
        min_extent: usize = 24, "smallest object extent in pixels";
        max_extent: usize = 40, "largest object extent in pixels";
        margin: usize = 6, "minimum object distance from the border";
        background: Background = Background::Blobs, "background texture: blobs or flat";
        multi_instance: f64 = 0.0, "probability of a second object instance";
    }
    "training" {
        epochs: usize = 20, "training epochs";
        batch_size: usize = 32, "mini-batch size";
        lr: f64 = 5e-4, "peak learning rate (cosine decay to zero)";
        beta1: f64 = 0.9, "AdamW first-moment decay";
        beta2: f64 = 0.99, "AdamW second-moment decay";
        eps: f64 = 1e-8, "AdamW epsilon";
        weight_decay: f64 = 5e-4, "decoupled weight decay";
        clip_norm: f64 = 1.0, "global gradient-norm cap";
        resize_to: usize = 72, "resize side before cropping to image_size";
    }
    "localization" {
        mode: LocalizationMode = LocalizationMode::TsCam, "tscam, trans-attention or trans-cam";
        tau: f64 = 0.75, "box threshold relative to the map maximum";
        layer_range: LayerSpec = LayerSpec::All, "attention layers to average: all or lo-hi (1-based)";
        iou_threshold: f64 = 0.5, "IoU a box must exceed to count";
        thresholds: Vec<f64> = vec![0.3, 0.5, 0.7], "comma-separated IoU thresholds for sweep-iou";
        selector: Selector = Selector::Top1, "export-cam classes: top1, gt or all-top5";
        label: Option<usize> = None, "ground-truth class of --image (gt selector)";
        target: SimilarityTarget = SimilarityTarget::PosEmbed, "similarity target: pos-embed or patch-tokens";
    }
    "run" {
        seed: u64 = 7, "seed for data generation, initialization and shuffling";
    }
    "paths" {
        data: Option<PathBuf> = None, "dataset directory";
        out: Option<PathBuf> = None, "output directory";
        checkpoint: Option<PathBuf> = None, "checkpoint file";
        image: Option<PathBuf> = None, "input image (PPM)";
        manifest: Option<PathBuf> = None, "manifest to run inference on";
        pred: Option<PathBuf> = None, "predictions file";
        gt: Option<PathBuf> = None, "ground-truth manifest";
    }
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected `key = value`", origin.display(), i + 1))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| format!("{}:{}: {e}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Effective configuration as config-file text, without path keys so
    /// the echo does not depend on where a run was launched.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut group = "";
        for (key, g, _) in KEYS {
            if *g == "paths" {
                continue;
            }
            if *g != group {
                if !group.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {g}");
                group = g;
            }
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn model(&self) -> VitConfig {
        VitConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            depth: self.depth,
            heads: self.heads,
            embed_dim: self.embed_dim,
            mlp_ratio: self.mlp_ratio,
            num_classes: self.num_classes,
            head: self.head,
            class_token_head: self.class_token_head,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.num_classes,
            shapes: SHAPE_KINDS.iter().copied().take(self.num_classes).collect(),
            train: self.train_count,
            val: self.val_count,
            test: self.test_count,
            image_size: self.image_size,
            min_extent: self.min_extent,
            max_extent: self.max_extent,
            margin: self.margin,
            background: self.background,
            multi_instance: self.multi_instance,
            seed: self.seed,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optim: AdamWConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            clip_norm: self.clip_norm,
            resize_to: self.resize_to,
            seed: self.seed,
        }
    }
}

/// `snake_case` key to `kebab-case` flag name.
pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}
