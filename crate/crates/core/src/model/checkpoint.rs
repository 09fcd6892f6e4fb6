use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use super::config::{parse_kv, ModelConfig};
use super::fcnw::{read_fcnw, write_fcnw, FcnwEntry};
use super::params::ParamStore;
use super::Model;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::train::{AdamConfig, AdamState};

pub const CONFIG_ENTRY: &str = "__config__";
pub const OPTIMIZER_ENTRY: &str = "__optimizer__";
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

/// Everything needed to rebuild a model and, optionally, continue training it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_config(self.config.clone())
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ParamStore,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let mut entries = vec![FcnwEntry::Text(CONFIG_ENTRY.into(), config.to_kv())];
    entries.extend(params.iter().map(|e| FcnwEntry::Tensor(e.name.clone(), e.value.clone())));
    if let Some(opt) = optimizer {
        let c = opt.config;
        let text = format!(
            "t={}\nlr={}\nbeta1={}\nbeta2={}\nepsilon={}\n",
            opt.t, c.lr, c.beta1, c.beta2, c.epsilon
        );
        entries.push(FcnwEntry::Text(OPTIMIZER_ENTRY.into(), text));
        for (name, m) in &opt.m {
            entries.push(FcnwEntry::Tensor(format!("{M_PREFIX}{name}"), m.clone()));
        }
        for (name, v) in &opt.v {
            entries.push(FcnwEntry::Tensor(format!("{V_PREFIX}{name}"), v.clone()));
        }
    }
    write_fcnw(path, &entries)
}

/// Reads a checkpoint and checks it against the layout its config implies.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let entries = read_fcnw(path)?;
    let mut config = None;
    let mut opt_text = None;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for e in entries {
        match e {
            FcnwEntry::Text(n, s) if n == CONFIG_ENTRY => config = Some(ModelConfig::from_kv(&s)?),
            FcnwEntry::Text(n, s) if n == OPTIMIZER_ENTRY => opt_text = Some(s),
            FcnwEntry::Text(..) => {}
            FcnwEntry::Tensor(n, t) => {
                tensors.insert(n, t);
            }
        }
    }
    let config = config.ok_or_else(|| Error::format(0, format!("checkpoint has no {CONFIG_ENTRY} entry")))?;
    let model = Model::from_config(config.clone())?;
    let (_, mut params) = super::build_model(config.clone(), 0)?;
    for (name, shape) in model.param_shapes() {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::config(name.clone(), "missing from checkpoint"))?;
        params.set_value(&name, fit_shape(&name, t, shape)?)?;
    }

    let optimizer = match opt_text {
        None => None,
        Some(text) => {
            let kv: BTreeMap<String, String> = parse_kv(&text)?.into_iter().collect();
            let num = |k: &str| -> Result<f64> {
                kv.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::config(format!("optimizer.{k}"), "missing or not a number"))
            };
            let mut st = AdamState::new(AdamConfig {
                lr: num("lr")?,
                beta1: num("beta1")?,
                beta2: num("beta2")?,
                epsilon: num("epsilon")?,
            });
            st.t = kv
                .get("t")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::config("optimizer.t", "missing or not an integer"))?;
            for (name, t) in tensors.drain() {
                let (map, pname) = if let Some(p) = name.strip_prefix(M_PREFIX) {
                    (&mut st.m, p.to_string())
                } else if let Some(p) = name.strip_prefix(V_PREFIX) {
                    (&mut st.v, p.to_string())
                } else {
                    continue;
                };
                let shape = params
                    .get(&pname)
                    .ok_or_else(|| Error::config(name.clone(), "moment for unknown parameter"))?
                    .value
                    .shape();
                map.insert(pname, fit_shape(&name, t, shape)?);
            }
            Some(st)
        }
    };
    Ok(Checkpoint { config, params, optimizer })
}

fn fit_shape(name: &str, t: Tensor, shape: Shape) -> Result<Tensor> {
    if t.shape() == shape {
        Ok(t)
    } else {
        Err(Error::dim(
            "shape",
            format!("`{name}` is {} in the file, expected {shape}", t.shape()),
        ))
    }
}

/// Outcome of [`import_weights`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportReport {
    /// Store names that were overwritten.
    pub matched: Vec<String>,
    /// Container names with no counterpart in the store.
    pub skipped: Vec<String>,
    /// Store name, store shape, container shape.
    pub conflicts: Vec<(String, Shape, Shape)>,
    /// Store entries that received nothing.
    pub missing: Vec<String>,
}

impl fmt::Display for ImportReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "matched {}, skipped {}, conflicts {}, missing {}",
            self.matched.len(),
            self.skipped.len(),
            self.conflicts.len(),
            self.missing.len()
        )?;
        for (n, want, got) in &self.conflicts {
            writeln!(f, "  conflict {n}: store {want}, file {got}")?;
        }
        Ok(())
    }
}

/// Copies tensors from an FCNW1 container into `params`.
///
/// `name_map` translates container names to store names; names absent from
/// the map are used as-is. Shape mismatches are reported and left untouched.
pub fn import_weights(
    params: &mut ParamStore,
    path: &Path,
    name_map: &HashMap<String, String>,
) -> Result<ImportReport> {
    let entries = read_fcnw(path)?;
    let mut report = ImportReport::default();
    for e in entries {
        let FcnwEntry::Tensor(name, t) = e else { continue };
        let target = name_map.get(&name).cloned().unwrap_or(name.clone());
        let Some(entry) = params.get(&target) else {
            report.skipped.push(name);
            continue;
        };
        if entry.value.shape() != t.shape() {
            report.conflicts.push((target, entry.value.shape(), t.shape()));
            continue;
        }
        params.set_value(&target, t)?;
        report.matched.push(target);
    }
    report.missing = params
        .names()
        .map(str::to_string)
        .filter(|n| !report.matched.contains(n) && !report.conflicts.iter().any(|c| &c.0 == n))
        .collect();
    Ok(report)
}

/// Container entries holding exactly the encoder tensors of `params`.
pub fn encoder_entries(params: &ParamStore) -> Vec<FcnwEntry> {
    params
        .iter()
        .filter(|e| e.name.starts_with("encoder."))
        .map(|e| FcnwEntry::Tensor(e.name.clone(), e.value.clone()))
        .collect()
}
