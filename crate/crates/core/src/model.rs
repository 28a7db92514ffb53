//! The hash model: an ordered list of hyperplanes with non-negative bit
//! weights, plus the preprocessing (standardization, optional kernel map)
//! baked in at training time. Serialized as JSON with a version tag;
//! serde_json's shortest-round-trip float formatting makes the file
//! byte-stable and exactly re-loadable.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::data::{DataMatrix, KernelMap, Standardizer};
use crate::error::{Error, Result};
use crate::exec;

pub const MODEL_FORMAT: &str = "structhash-model";
pub const MODEL_VERSION: u32 = 1;

/// One hash function: h(x) = 0.5 (sign(v.x + b) + 1), with sign(0) = +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub v: Vec<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn new(v: Vec<f64>, b: f64) -> Self {
        Hyperplane { v, b }
    }

    pub fn dims(&self) -> usize {
        self.v.len()
    }

    /// The binary output: true (bit 1) exactly when v.x + b >= 0.
    pub fn bit(&self, x: &[f64]) -> bool {
        let z: f64 = self.v.iter().zip(x).map(|(a, b)| a * b).sum();
        z + self.b >= 0.0
    }

    pub fn is_degenerate(&self) -> bool {
        !self.v.iter().all(|c| c.is_finite())
            || !self.b.is_finite()
            || self.v.iter().all(|&c| c == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashModel {
    pub format: String,
    pub version: u32,
    /// Stats applied to raw features before hashing, if any.
    pub standardization: Option<Standardizer>,
    /// Kernel feature map applied after standardization, if any.
    pub kernel: Option<KernelMap>,
    pub planes: Vec<Hyperplane>,
    /// Non-negative per-bit weights of the weighted Hamming distance.
    pub weights: Vec<f64>,
}

impl HashModel {
    pub fn new(planes: Vec<Hyperplane>, weights: Vec<f64>) -> Self {
        HashModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            standardization: None,
            kernel: None,
            planes,
            weights,
        }
    }

    pub fn with_standardization(mut self, stats: Option<Standardizer>) -> Self {
        self.standardization = stats;
        self
    }

    pub fn with_kernel(mut self, kernel: Option<KernelMap>) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn bits(&self) -> usize {
        self.planes.len()
    }

    /// Feature dimensionality the hyperplanes operate in.
    pub fn hash_dims(&self) -> usize {
        self.planes.first().map(|p| p.dims()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::data(format!("not a model file (format {:?})", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::data(format!("unsupported model version {}", self.version)));
        }
        if self.planes.len() != self.weights.len() {
            return Err(Error::data(format!(
                "{} planes but {} weights",
                self.planes.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::data("bit weights must be non-negative and finite"));
        }
        if self.planes.iter().any(|p| p.is_degenerate()) {
            return Err(Error::data("model contains a degenerate hyperplane"));
        }
        if let Some(p0) = self.planes.first() {
            if self.planes.iter().any(|p| p.dims() != p0.dims()) {
                return Err(Error::data("hyperplane dimensionalities disagree"));
            }
        }
        Ok(())
    }

    /// Applies the model's preprocessing chain to raw features.
    pub fn preprocess(&self, raw: &DataMatrix) -> Result<DataMatrix> {
        let standardized = match &self.standardization {
            Some(s) => s.apply(raw)?,
            None => raw.clone(),
        };
        match &self.kernel {
            Some(k) => k.apply(&standardized),
            None => Ok(standardized),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::data(format!("model serialization failed: {e}")))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: HashModel = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::data(format!("model parse failed: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// Encodes every row of an (already preprocessed) matrix under the planes.
pub fn encode_planes(planes: &[Hyperplane], data: &DataMatrix) -> Result<CodeMatrix> {
    if planes.is_empty() {
        return Err(Error::config("cannot encode with zero hash functions"));
    }
    if planes[0].dims() != data.dims() {
        return Err(Error::DimMismatch(format!(
            "hyperplanes expect {} dims, data has {}",
            planes[0].dims(),
            data.dims()
        )));
    }
    let bits_per_row: Vec<Vec<bool>> = exec::map_indices(data.rows(), |i| {
        let x = data.row(i);
        planes.iter().map(|p| p.bit(x)).collect()
    });
    Ok(CodeMatrix::from_bits(data.rows(), planes.len(), &bits_per_row))
}
