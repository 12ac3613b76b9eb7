//! Building a hybrid model from a sample and aggregates, and persisting it as
//! a directory holding `weights.csv`, `bn.json` and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregates::AggregateSet;
use crate::bayesnet::{learn_parameters, learn_structure, BayesNet, ParamDiagnostics, ParamMode, ParamOptions, StructureOptions};
use crate::error::{Error, Result};
use crate::evaluator::HybridModel;
use crate::reweight::{ipf_weights, linreg_weights, sum_normalize, uniform_weights, IpfOptions, WeightVector};
use crate::schema::{Relation, Schema};

pub const WEIGHTS_FILE: &str = "weights.csv";
pub const BN_FILE: &str = "bn.json";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMethod {
    Uniform,
    Linreg,
    Ipf,
}

impl FromStr for WeightMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightMethod::Uniform),
            "linreg" => Ok(WeightMethod::Linreg),
            "ipf" => Ok(WeightMethod::Ipf),
            _ => Err(Error::InvalidInput(format!("unknown weight method `{s}`"))),
        }
    }
}

/// `Sample` learns structure and parameters from the sample alone;
/// `Constrained` uses the aggregates for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    Off,
    Sample,
    Constrained,
}

impl FromStr for BnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(BnMode::Off),
            "sample" => Ok(BnMode::Sample),
            "constrained" => Ok(BnMode::Constrained),
            _ => Err(Error::InvalidInput(format!("unknown BN mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub weights: WeightMethod,
    pub bn: BnMode,
    pub max_parents: usize,
    pub k_replicas: usize,
    pub seed: u64,
    pub ipf: IpfOptions,
    /// `mode` is overridden by `bn`.
    pub params: ParamOptions,
    /// Overrides the population size carried by the aggregates.
    pub population_size: Option<f64>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            weights: WeightMethod::Ipf,
            bn: BnMode::Constrained,
            max_parents: 1,
            k_replicas: 10,
            seed: 0,
            ipf: IpfOptions::default(),
            params: ParamOptions::default(),
            population_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub method: WeightMethod,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub unsatisfiable: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnDiagnostics {
    pub edges: usize,
    pub locked_edges: usize,
    pub params: ParamDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    pub aggregates: usize,
    pub weights: WeightDiagnostics,
    pub bn: Option<BnDiagnostics>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub schema: Schema,
    pub population_size: f64,
    pub sample_size: usize,
    pub k_replicas: usize,
    pub seed: u64,
    pub config: BuildOptions,
    pub diagnostics: BuildDiagnostics,
    /// SHA-256 of caller-supplied inputs, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each model file.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Reweight the sample and learn the network. Every error carries the name
/// of the stage that raised it.
pub fn build_model(sample: Relation, gamma: &AggregateSet, opts: &BuildOptions) -> Result<(HybridModel, BuildDiagnostics)> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("the sample is empty".into()));
    }
    if opts.k_replicas == 0 {
        return Err(Error::InvalidInput("k_replicas must be at least 1".into()));
    }
    let mut gamma = gamma.clone();
    if let Some(n) = opts.population_size {
        gamma = AggregateSet::new(gamma.queries, n)?;
    }
    let n = gamma.population_size;
    gamma.validate_against(&sample.schema).map_err(|e| e.in_stage("aggregates"))?;

    let mut weights = match opts.weights {
        WeightMethod::Uniform => uniform_weights(sample.len(), n),
        WeightMethod::Linreg => linreg_weights(&sample, &gamma).map(|(w, _)| w),
        WeightMethod::Ipf => ipf_weights(&sample, &gamma, opts.ipf),
    }
    .map_err(|e| e.in_stage("reweight"))?;
    sum_normalize(&mut weights.weights, n).map_err(|e| e.in_stage("reweight"))?;
    if matches!(opts.weights, WeightMethod::Ipf) && !weights.converged {
        log::warn!(
            "IPF stopped after {} sweeps with relative residual {:.3e}",
            weights.iterations,
            weights.max_residual
        );
    }

    let (bn, bn_diag) = match opts.bn {
        BnMode::Off => (None, None),
        BnMode::Sample | BnMode::Constrained => {
            let (source, mode) = if opts.bn == BnMode::Constrained {
                (gamma.clone(), ParamMode::Constrained)
            } else {
                (AggregateSet::new(Vec::new(), n)?, ParamMode::SampleOnly)
            };
            let structure = learn_structure(&sample, &source, StructureOptions { max_parents: opts.max_parents })
                .map_err(|e| e.in_stage("structure"))?;
            let params = ParamOptions { mode, ..opts.params };
            let (bn, pd) = learn_parameters(&structure, &sample, &source, &params).map_err(|e| e.in_stage("parameters"))?;
            let diag = BnDiagnostics {
                edges: bn.structure.edges.len(),
                locked_edges: bn.structure.locked_edges().count(),
                params: pd,
            };
            (Some(bn), Some(diag))
        }
    };

    let diagnostics = BuildDiagnostics {
        aggregates: gamma.len(),
        weights: WeightDiagnostics {
            method: opts.weights,
            converged: weights.converged,
            iterations: weights.iterations,
            max_residual: weights.max_residual,
            unsatisfiable: weights.unsatisfiable.clone(),
        },
        bn: bn_diag,
    };
    let model = HybridModel {
        sample,
        weights,
        bn,
        population_size: n,
        k_replicas: opts.k_replicas,
        seed: opts.seed,
    };
    Ok((model, diagnostics))
}

fn temp_sibling(dir: &Path) -> Result<PathBuf> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a directory name", dir.display())))?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok(parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id())))
}

fn write_files(model: &HybridModel, dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let mut csv = Vec::new();
    model.sample.write_csv(&mut csv, Some(&model.weights.weights))?;
    let p = dir.join(WEIGHTS_FILE);
    fs::write(&p, &csv).map_err(|e| Error::io(&p, e))?;
    files.insert(WEIGHTS_FILE.to_string(), sha256_hex(&csv));
    if let Some(bn) = &model.bn {
        let json = bn.to_json()?;
        let p = dir.join(BN_FILE);
        fs::write(&p, &json).map_err(|e| Error::io(&p, e))?;
        files.insert(BN_FILE.to_string(), sha256_hex(json.as_bytes()));
    }
    Ok(files)
}

/// Write the model to `dir`, replacing any previous contents. Files are
/// staged in a sibling directory and moved into place only on success.
pub fn save_model(
    model: &HybridModel,
    diagnostics: &BuildDiagnostics,
    config: &BuildOptions,
    inputs: BTreeMap<String, String>,
    dir: &Path,
) -> Result<ModelManifest> {
    let tmp = temp_sibling(dir)?;
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let staged = (|| {
        let files = write_files(model, &tmp)?;
        let manifest = ModelManifest {
            format_version: FORMAT_VERSION,
            schema: model.schema().clone(),
            population_size: model.population_size,
            sample_size: model.sample.len(),
            k_replicas: model.k_replicas,
            seed: model.seed,
            config: *config,
            diagnostics: diagnostics.clone(),
            inputs,
            files,
        };
        let p = tmp.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    })();
    let manifest = match staged {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    let p = dir.join(MANIFEST_FILE);
    let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
    let m: ModelManifest = serde_json::from_reader(BufReader::new(f))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!("unsupported model format version {}", m.format_version)));
    }
    Ok(m)
}

/// Load a model written by [`save_model`], checking file hashes.
pub fn load_model(dir: &Path) -> Result<HybridModel> {
    let m = read_manifest(dir)?;
    for (name, digest) in &m.files {
        if sha256_file(&dir.join(name))? != *digest {
            return Err(Error::InvalidInput(format!("{name} does not match its recorded hash")));
        }
    }
    let schema = Arc::new(m.schema.clone());
    let p = dir.join(WEIGHTS_FILE);
    let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
    let (sample, weights) = Relation::read_labeled_csv(schema.clone(), BufReader::new(f))?;
    let weights = weights.ok_or_else(|| Error::InvalidInput(format!("{} has no weight column", p.display())))?;
    if sample.len() != m.sample_size {
        return Err(Error::InvalidInput(format!("expected {} sample rows, found {}", m.sample_size, sample.len())));
    }
    let bn = if m.files.contains_key(BN_FILE) {
        let bn = BayesNet::load(&dir.join(BN_FILE))?;
        if *bn.schema != *schema {
            return Err(Error::InvalidInput("network schema differs from the model schema".into()));
        }
        Some(BayesNet { schema: schema.clone(), ..bn })
    } else {
        None
    };
    let w = &m.diagnostics.weights;
    Ok(HybridModel {
        sample,
        weights: WeightVector {
            weights,
            converged: w.converged,
            iterations: w.iterations,
            max_residual: w.max_residual,
            unsatisfiable: w.unsatisfiable.clone(),
        },
        bn,
        population_size: m.population_size,
        k_replicas: m.k_replicas,
        seed: m.seed,
    })
}
