use std::path::Path;

use serde_json::{json, Value};

use super::adamw::{AdamWConfig, OptimState};
use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::Container;
use crate::vit::VitConfig;

const M_PREFIX: &str = "optim.m.";
const V_PREFIX: &str = "optim.v.";

/// Model weights plus everything needed to resume or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: VitConfig,
    pub params: Params<f32>,
    pub optim: Option<OptimState<f32>>,
    pub norm: Normalization,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        self.params.write_to(&mut c, "");
        let mut meta = serde_json::Map::new();
        meta.insert("epoch".into(), json!(self.epoch));
        meta.insert("normalization".into(), json!(self.norm));
        if let Some(opt) = &self.optim {
            opt.m.write_to(&mut c, M_PREFIX);
            opt.v.write_to(&mut c, V_PREFIX);
            meta.insert("optim.step".into(), json!(opt.step));
            meta.insert("optim.hyper".into(), json!(opt.hyper));
        }
        c.config = Some(serde_json::to_value(&self.config).expect("config serializes"));
        c.meta = meta;
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: VitConfig = c
            .config
            .clone()
            .ok_or_else(|| Error::Format("checkpoint has no model configuration".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Format(e.to_string())))?;
        config.validate()?;
        let template = template(&config);
        let params = Params::read_like(&template, c, "")?;
        let meta = |key: &str| -> Result<&Value> {
            c.meta
                .get(key)
                .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks `{key}`")))
        };
        let epoch = meta("epoch")?
            .as_u64()
            .ok_or_else(|| Error::Format("bad epoch".into()))? as usize;
        let norm: Normalization = serde_json::from_value(meta("normalization")?.clone())
            .map_err(|e| Error::Format(e.to_string()))?;
        let optim = if c.meta.contains_key("optim.step") {
            let step = meta("optim.step")?
                .as_u64()
                .ok_or_else(|| Error::Format("bad optimizer step".into()))?;
            let hyper: AdamWConfig = serde_json::from_value(meta("optim.hyper")?.clone())
                .map_err(|e| Error::Format(e.to_string()))?;
            Some(OptimState {
                m: Params::read_like(&template, c, M_PREFIX)?,
                v: Params::read_like(&template, c, V_PREFIX)?,
                step,
                hyper,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            optim,
            norm,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Loads a checkpoint that must have been trained with `expected`.
    pub fn load_matching(path: &Path, expected: &VitConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.config != expected {
            return Err(Error::Config(format!(
                "checkpoint model configuration {:?} differs from requested {:?}",
                ck.config, expected
            )));
        }
        Ok(ck)
    }
}

/// Zero-filled parameters with the shapes of `cfg`.
fn template(cfg: &VitConfig) -> Params<f32> {
    let mut p = Params::new();
    for (name, shape) in cfg.param_shapes() {
        p.insert(name, crate::tensor::Tensor::zeros(&shape));
    }
    p
}
