use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use tscam_core::dataset::manifest::image_to_tensor;
use tscam_core::dataset::netpbm::write_pgm;
use tscam_core::dataset::{
    eval_input, generate, load, read_manifest, DatasetRecord, EvalTransform, RgbImage, Sample,
    Sizes,
};
use tscam_core::eval::{
    error_analysis, iou_sweep, predict, predict_all, read_predictions, sweep_table,
    write_predictions, ErrorCategory, EvalReport, GroundTruth,
};
use tscam_core::head::{
    cosine_similarity_matrix, localize, postprocess, LocalizationResult, LocalizeOptions,
};
use tscam_core::params::Params;
use tscam_core::tensor::{Container, Tape, Tensor};
use tscam_core::training::{train, Checkpoint};
use tscam_core::vit::{self, model_summary};
use tscam_core::{Error, Result};

use crate::config::{RunConfig, Selector, SimilarityTarget};

/// A failed command: bad invocation (exit 2) or a domain error (exit 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Outcome<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Usage(format!("--{} is required", crate::config::flag_name(key))))
}

fn out_dir(cfg: &RunConfig) -> Outcome<&Path> {
    let out = required(&cfg.out, "out")?;
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    Ok(out)
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write(&dir.join("config.txt"), cfg.echo())
}

fn options(cfg: &RunConfig, depth: usize) -> LocalizeOptions {
    LocalizeOptions {
        mode: cfg.mode,
        tau: cfg.tau,
        layers: cfg.layer_range.resolve(depth),
    }
}

fn load_checkpoint(cfg: &RunConfig) -> Outcome<Checkpoint> {
    Ok(Checkpoint::load(required(&cfg.checkpoint, "checkpoint")?)?)
}

fn sizes(cfg: &RunConfig, ck: &Checkpoint) -> Outcome<Sizes> {
    if cfg.resize_to < ck.config.image_size {
        return Err(Failure::Usage(format!(
            "resize_to {} is smaller than the model input {}",
            cfg.resize_to, ck.config.image_size
        )));
    }
    Ok(Sizes::new(cfg.resize_to, ck.config.image_size))
}

fn load_image_sample(path: &Path, label: usize) -> Result<Sample> {
    let img = RgbImage::load(path)?;
    Ok(Sample {
        image: image_to_tensor(&img),
        record: DatasetRecord {
            path: path.to_path_buf(),
            label,
            boxes: Vec::new(),
        },
    })
}

fn ground_truth(cfg: &RunConfig) -> Outcome<Vec<GroundTruth>> {
    let gt = required(&cfg.gt, "gt")?;
    Ok(read_manifest(gt, cfg.num_classes)?
        .iter()
        .map(GroundTruth::from)
        .collect())
}

pub fn generate_data(cfg: &RunConfig) -> Outcome {
    let out = out_dir(cfg)?;
    let summary = generate(&cfg.synth(), out)?;
    echo_config(cfg, out)?;
    for (split, n) in summary.counts {
        println!("{}: {n} images", split.name());
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Outcome {
    let data = required(&cfg.data, "data")?;
    let out = out_dir(cfg)?;
    let model = cfg.model();
    let tc = cfg.training();
    let train_set = load(&data.join("train.jsonl"), model.num_classes)?;
    let val_set = load(&data.join("val.jsonl"), model.num_classes)?;
    echo_config(cfg, out)?;
    let log_path = out.join("log.jsonl");
    let mut log = String::new();
    write(&log_path, "")?;
    train(&model, &tc, &train_set, &val_set, |entry, ck, is_best| {
        log.push_str(&serde_json::to_string(entry).expect("log serializes"));
        log.push('\n');
        write(&log_path, &log)?;
        ck.save(&out.join("final.tscam"))?;
        if is_best {
            ck.save(&out.join("best.tscam"))?;
        }
        eprintln!(
            "epoch {:>3}  loss {:.5}  val top-1 {:6.2}%  lr {:.2e}",
            entry.epoch, entry.train_loss, entry.val_cls_top1, entry.lr
        );
        Ok(())
    })?;
    Ok(())
}

fn class_map_pgm(result: &LocalizationResult, class: usize, path: &Path) -> Result<()> {
    let map = result.normalized_map(class)?;
    let (h, w) = map.dims2()?;
    write_pgm(path, w, h, map.data())
}

pub fn infer(cfg: &RunConfig) -> Outcome {
    let ck = load_checkpoint(cfg)?;
    let out = out_dir(cfg)?;
    let sizes = sizes(cfg, &ck)?;
    let opts = options(cfg, ck.config.depth);
    let preds = if let Some(manifest) = &cfg.manifest {
        let samples = load(manifest, ck.config.num_classes)?;
        predict_all(&ck, &samples, sizes, &opts, true)?
    } else {
        let image = required(&cfg.image, "image")?;
        let sample = load_image_sample(image, 0)?;
        let pred = predict(&ck, &sample, sizes, &opts, false)?;
        let input = eval_input(&sample.image, sizes, &ck.norm);
        let result = localize(&ck.config, &ck.params, &input, &opts)?;
        class_map_pgm(&result, result.predicted, &out.join("cam.pgm"))?;
        println!(
            "{}",
            serde_json::to_string(&pred).expect("prediction serializes")
        );
        vec![pred]
    };
    write_predictions(&out.join("predictions.jsonl"), &preds)?;
    echo_config(cfg, out)?;
    eprintln!("{} predictions written to {}", preds.len(), out.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Outcome {
    let preds = read_predictions(required(&cfg.pred, "pred")?)?;
    let gt = ground_truth(cfg)?;
    let report = EvalReport::compute(&preds, &gt, cfg.iou_threshold)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        write(&out.join("report.txt"), &table)?;
        write(&out.join("report.json"), to_json(&report))?;
    }
    Ok(())
}

pub fn sweep_iou(cfg: &RunConfig) -> Outcome {
    let preds = read_predictions(required(&cfg.pred, "pred")?)?;
    let gt = ground_truth(cfg)?;
    let points = iou_sweep(&preds, &gt, &cfg.thresholds)?;
    let table = sweep_table(&points);
    print!("{table}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        write(&out.join("sweep.txt"), &table)?;
        write(&out.join("sweep.json"), to_json(&points))?;
    }
    Ok(())
}

pub fn error_analysis_cmd(cfg: &RunConfig) -> Outcome {
    let preds = read_predictions(required(&cfg.pred, "pred")?)?;
    let gt = ground_truth(cfg)?;
    let breakdown = error_analysis(&preds, &gt)?;
    let mut table = String::new();
    let mut summary = serde_json::Map::new();
    for c in ErrorCategory::ALL {
        table.push_str(&format!(
            "{:<8} {:>5} {:>7.2}%\n",
            c.label(),
            breakdown.count(c),
            100.0 * breakdown.fraction(c)
        ));
        summary.insert(
            c.label().into(),
            json!({"count": breakdown.count(c), "fraction": breakdown.fraction(c)}),
        );
    }
    table.push_str(&format!("{:<8} {:>5}\n", "total", breakdown.total));
    summary.insert("total".into(), json!(breakdown.total));
    print!("{table}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        write(&out.join("errors.txt"), &table)?;
        write(&out.join("errors.json"), to_json(&summary))?;
    }
    Ok(())
}

pub fn export_cam(cfg: &RunConfig) -> Outcome {
    let ck = load_checkpoint(cfg)?;
    let out = out_dir(cfg)?;
    let image = required(&cfg.image, "image")?;
    let sizes = sizes(cfg, &ck)?;
    let opts = options(cfg, ck.config.depth);
    let sample = load_image_sample(image, cfg.label.unwrap_or(0))?;
    let input = eval_input(&sample.image, sizes, &ck.norm);
    let result = localize(&ck.config, &ck.params, &input, &opts)?;
    let classes: Vec<usize> = match cfg.selector {
        Selector::Top1 => vec![result.predicted],
        Selector::AllTop5 => result.ranked_classes().into_iter().take(5).collect(),
        Selector::Gt => {
            let label = cfg
                .label
                .ok_or_else(|| Failure::Usage("the gt selector needs --label".into()))?;
            if label >= ck.config.num_classes {
                return Err(Error::Label {
                    label,
                    num_classes: ck.config.num_classes,
                }
                .into());
            }
            vec![label]
        }
    };
    let transform = EvalTransform::new(sample.width(), sample.height(), sizes);
    let mut maps = Vec::new();
    for (rank, &c) in classes.iter().enumerate() {
        let file = format!("cam_{rank}_class{c}.pgm");
        class_map_pgm(&result, c, &out.join(&file))?;
        let input_box = result.box_for_class(c)?;
        maps.push(json!({
            "class": c,
            "score": result.probs[c],
            "file": file,
            "box": transform.box_to_original(&input_box),
            "input_box": input_box,
        }));
    }
    let sidecar = json!({
        "image": image.display().to_string(),
        "mode": cfg.mode.as_str(),
        "tau": cfg.tau,
        "maps": maps,
    });
    write(&out.join("cams.json"), to_json(&sidecar))?;
    echo_config(cfg, out)?;
    Ok(())
}

pub fn export_attn(cfg: &RunConfig) -> Outcome {
    let ck = load_checkpoint(cfg)?;
    let out = out_dir(cfg)?;
    let image = required(&cfg.image, "image")?;
    let sizes = sizes(cfg, &ck)?;
    let opts = options(cfg, ck.config.depth);
    let sample = load_image_sample(image, 0)?;
    let input = eval_input(&sample.image, sizes, &ck.norm);
    let result = localize(&ck.config, &ck.params, &input, &opts)?;
    let mut c = Container::new();
    for (l, layer) in result.record.layers.iter().enumerate() {
        c.insert(format!("attn.{}", l + 1), layer);
        for (k, head) in result.record.heads[l].iter().enumerate() {
            c.insert(format!("attn.{}.head.{k}", l + 1), head);
        }
    }
    c.insert("attn.aggregate", &result.attention);
    c.meta.insert(
        "layer_range".into(),
        json!([opts.layers.lo, opts.layers.hi]),
    );
    c.save(out.join("attention.tscam"))?;
    let side = ck.config.image_size;
    let map = postprocess(&result.attention, side, side)?;
    write_pgm(&out.join("attention.pgm"), side, side, map.data())?;
    echo_config(cfg, out)?;
    Ok(())
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

pub fn similarity(cfg: &RunConfig) -> Outcome {
    let ck = load_checkpoint(cfg)?;
    let out = out_dir(cfg)?;
    let n = ck.config.num_patches();
    let vectors: Tensor<f64> = match cfg.target {
        SimilarityTarget::PosEmbed => {
            let pos = ck.params.get("pos_embed")?.cast::<f64>();
            let d = pos.shape()[1];
            Tensor::new(vec![n, d], pos.data()[d..].to_vec())?
        }
        SimilarityTarget::PatchTokens => {
            let image = required(&cfg.image, "image")?;
            let sizes = sizes(cfg, &ck)?;
            let sample = load_image_sample(image, 0)?;
            let input = eval_input(&sample.image, sizes, &ck.norm);
            let mut tape = Tape::inference();
            let vars = ck.params.register(&mut tape);
            let fwd = vit::forward(&mut tape, &ck.config, &vars, &input)?;
            let tokens = tape.value(fwd.tokens).cast::<f64>();
            let d = tokens.shape()[1];
            Tensor::new(vec![n, d], tokens.data()[d..].to_vec())?
        }
    };
    let sim = cosine_similarity_matrix(&vectors)?;
    let mut c = Container::new();
    c.insert("similarity", &sim);
    c.save(out.join("similarity.tscam"))?;
    write_pgm(&out.join("similarity.pgm"), n, n, &min_max(sim.data()))?;
    echo_config(cfg, out)?;
    Ok(())
}

pub fn summary(cfg: &RunConfig) -> Outcome {
    let (model, params) = match &cfg.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (ck.config, ck.params)
        }
        None => {
            let model = cfg.model();
            model.validate()?;
            let mut p = Params::<f32>::new();
            for (name, shape) in model.param_shapes() {
                p.insert(name, Tensor::zeros(&shape));
            }
            (model, p)
        }
    };
    let s = model_summary(&params);
    let text = format!(
        "image {}  patch {}  tokens {}  depth {}  heads {}  width {}  head {}\n{s}",
        model.image_size,
        model.patch_size,
        model.num_patches() + 1,
        model.depth,
        model.heads,
        model.embed_dim,
        model.head
    );
    print!("{text}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        write(&out.join("summary.txt"), &text)?;
        let rows: BTreeMap<&str, usize> =
            s.rows.iter().map(|r| (r.name.as_str(), r.count)).collect();
        write(
            &out.join("summary.json"),
            to_json(&json!({"total": s.total, "parameters": rows})),
        )?;
    }
    Ok(())
}
