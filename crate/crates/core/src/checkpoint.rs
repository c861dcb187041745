//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"BIFM" | version: u16 | manifest_len: u32 | manifest: UTF-8 JSON
//!         | parameters: f32 in declaration order | sha256 of everything before
//! ```
//!
//! The manifest names the model kind. A trained network stores its
//! architecture and parameter shapes; the analytic Gaussian-path field stores
//! only its mean and scale and carries no parameter block.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AnalyticAverageField, GaussianPathOracle};
use crate::error::{Error, Result};
use crate::model::{AverageVelocity, ModelConfig, VelocityNet};

pub const MAGIC: &[u8; 4] = b"BIFM";
pub const VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamSpec {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Manifest {
    Mlp {
        model: ModelConfig,
        parameters: Vec<ParamSpec>,
    },
    AnalyticGaussian {
        mu: Vec<f64>,
        sigma: f64,
    },
}

/// Anything a checkpoint can hold.
#[derive(Debug, Clone)]
pub enum Model {
    Net(VelocityNet),
    Analytic(AnalyticAverageField),
}

impl Model {
    pub fn as_net(&self) -> Option<&VelocityNet> {
        match self {
            Model::Net(n) => Some(n),
            Model::Analytic(_) => None,
        }
    }

    pub fn num_labels(&self) -> usize {
        match self {
            Model::Net(n) => n.num_labels(),
            Model::Analytic(_) => 0,
        }
    }
}

impl AverageVelocity for Model {
    fn data_dim(&self) -> usize {
        match self {
            Model::Net(n) => n.data_dim(),
            Model::Analytic(a) => a.data_dim(),
        }
    }

    fn eval(&self, x: &Array2<f64>, t: &[f64], t_prime: &[f64], cond: Option<&[usize]>) -> Result<Array2<f64>> {
        match self {
            Model::Net(n) => n.eval(x, t, t_prime, cond),
            Model::Analytic(a) => a.eval(x, t, t_prime, cond),
        }
    }

    fn jvp(
        &self,
        x: &Array2<f64>,
        t: &[f64],
        t_prime: &[f64],
        dx: &Array2<f64>,
        dt: &[f64],
        dt_prime: &[f64],
        cond: Option<&[usize]>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        match self {
            Model::Net(n) => n.jvp(x, t, t_prime, dx, dt, dt_prime, cond),
            Model::Analytic(a) => a.jvp(x, t, t_prime, dx, dt, dt_prime, cond),
        }
    }
}

impl From<VelocityNet> for Model {
    fn from(n: VelocityNet) -> Self {
        Model::Net(n)
    }
}

impl From<AnalyticAverageField> for Model {
    fn from(a: AnalyticAverageField) -> Self {
        Model::Analytic(a)
    }
}

/// Serialises `model`. Parameters are rounded to `f32`.
pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let (manifest, params): (Manifest, &[Array2<f64>]) = match model {
        Model::Net(net) => (
            Manifest::Mlp {
                model: net.config().clone(),
                parameters: net
                    .param_names()
                    .iter()
                    .zip(net.params())
                    .map(|(name, p)| ParamSpec {
                        name: name.clone(),
                        shape: [p.nrows(), p.ncols()],
                    })
                    .collect(),
            },
            net.params(),
        ),
        Model::Analytic(a) => (
            Manifest::AnalyticGaussian {
                mu: a.oracle.mu.clone(),
                sigma: a.oracle.sigma,
            },
            &[],
        ),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("manifest too large".into()))?;
    let mut out = Vec::with_capacity(10 + json.len() + 4 * params.iter().map(|p| p.len()).sum::<usize>() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for &v in p.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format("bad magic bytes"));
    }
    if bytes.len() < 10 + DIGEST_LEN {
        return Err(format("truncated header"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(format("checksum mismatch"));
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes([body[6], body[7], body[8], body[9]]) as usize;
    let json = body.get(10..10 + len).ok_or_else(|| format("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| format(format!("manifest: {e}")))?;
    let mut rest = &body[10 + len..];
    match manifest {
        Manifest::AnalyticGaussian { mu, sigma } => {
            if !rest.is_empty() {
                return Err(format("analytic checkpoint carries parameter bytes"));
            }
            let oracle = GaussianPathOracle::new(mu, sigma).map_err(|e| format(e.to_string()))?;
            Ok(Model::Analytic(AnalyticAverageField::new(oracle)))
        }
        Manifest::Mlp { model, parameters } => {
            let expected = VelocityNet::param_shapes(&model);
            let declared: Vec<(String, (usize, usize))> = parameters
                .iter()
                .map(|p| (p.name.clone(), (p.shape[0], p.shape[1])))
                .collect();
            if declared != expected {
                return Err(format("parameter layout does not match the architecture"));
            }
            let mut params = Vec::with_capacity(expected.len());
            for (_, (r, c)) in &expected {
                let n = r * c * 4;
                if rest.len() < n {
                    return Err(format("truncated parameter block"));
                }
                let (chunk, tail) = rest.split_at(n);
                rest = tail;
                let values: Vec<f64> = chunk
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                    .collect();
                params.push(Array2::from_shape_vec((*r, *c), values).expect("shape checked"));
            }
            if !rest.is_empty() {
                return Err(format("trailing bytes after the parameter block"));
            }
            let net = VelocityNet::from_params(model, params).map_err(|e| format(e.to_string()))?;
            Ok(Model::Net(net))
        }
    }
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    decode(&std::fs::read(path)?)
}
