//! `XCB1` bundle: a JSON header followed by named `XCT1` records.
//!
//! ```text
//! offset 0   magic        b"XCB1"
//! offset 4   header_len   u32 little-endian
//! offset 8   header       UTF-8 JSON object, header_len bytes
//! ...        XCT1 records in the order of header["tensors"]
//! ```
//!
//! Projections, dataset statistics and model checkpoints are bundles
//! distinguished by `header["kind"]`.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::tensor_file::Tensor;
use crate::correlate::ChannelWeights;
use crate::error::{Error, Result};
use crate::learn::{HingeForm, Regime, SiameseModel};
use crate::normalize::GlobalStats;
use crate::scalar::Scalar;
use crate::whiten::Projection;

pub const BUNDLE_MAGIC: &[u8; 4] = b"XCB1";

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub header: Map<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Bundle {
    pub fn new(kind: &str) -> Self {
        let mut header = Map::new();
        header.insert("kind".into(), json!(kind));
        Self {
            header,
            tensors: vec![],
        }
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(Value::as_str)
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.header.insert(key.into(), value);
        self
    }

    pub fn push(&mut self, name: &str, t: Tensor) -> &mut Self {
        self.tensors.push((name.into(), t));
        self
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format {
                offset: 0,
                message: format!("bundle has no tensor '{name}'"),
            })
    }

    fn field(&self, key: &str) -> Result<&Value> {
        self.header.get(key).ok_or_else(|| Error::Format {
            offset: 8,
            message: format!("bundle header lacks '{key}'"),
        })
    }

    fn f64_field(&self, key: &str) -> Result<f64> {
        self.field(key)?.as_f64().ok_or_else(|| Error::Format {
            offset: 8,
            message: format!("header field '{key}' is not a number"),
        })
    }

    fn str_field(&self, key: &str) -> Result<&str> {
        self.field(key)?.as_str().ok_or_else(|| Error::Format {
            offset: 8,
            message: format!("header field '{key}' is not a string"),
        })
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Format {
                offset: 8,
                message: format!("expected a '{kind}' bundle, found {other:?}"),
            }),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.insert(
            "tensors".into(),
            Value::Array(self.tensors.iter().map(|(n, _)| json!(n)).collect()),
        );
        let text = serde_json::to_vec(&Value::Object(header))?;
        let len = u32::try_from(text.len())
            .map_err(|_| Error::Shape("bundle header exceeds 4 GiB".into()))?;
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&text);
        for (_, t) in &self.tensors {
            out.extend_from_slice(&t.encode());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != BUNDLE_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected \"XCB1\"".into(),
            });
        }
        if bytes.len() < 8 {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: format!("truncated bundle: expected 8 header bytes, found {}", bytes.len()),
            });
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() - 8 < len {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: format!("truncated header: expected {len} bytes, found {}", bytes.len() - 8),
            });
        }
        let mut header: Map<String, Value> = match serde_json::from_slice(&bytes[8..8 + len]) {
            Ok(Value::Object(m)) => m,
            Ok(_) => {
                return Err(Error::Format {
                    offset: 8,
                    message: "bundle header is not a JSON object".into(),
                })
            }
            Err(e) => {
                return Err(Error::Format {
                    offset: 8,
                    message: format!("bundle header: {e}"),
                })
            }
        };
        let names: Vec<String> = match header.remove("tensors") {
            Some(Value::Array(a)) => a
                .into_iter()
                .map(|v| v.as_str().map(str::to_owned))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Format {
                    offset: 8,
                    message: "tensor names must be strings".into(),
                })?,
            _ => {
                return Err(Error::Format {
                    offset: 8,
                    message: "bundle header lacks a 'tensors' list".into(),
                })
            }
        };
        let mut pos = 8 + len;
        let mut tensors = vec![];
        for name in names {
            let (t, used) = Tensor::decode(&bytes[pos..], pos as u64)?;
            tensors.push((name, t));
            pos += used;
        }
        if pos != bytes.len() {
            return Err(Error::Format {
                offset: pos as u64,
                message: format!("{} trailing bytes after bundle", bytes.len() - pos),
            });
        }
        Ok(Self { header, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn projection_tensors<T: Scalar>(p: &Projection<T>) -> Result<(Tensor, Tensor)> {
    Ok((Tensor::matrix(p.rows(), p.cols(), p.matrix())?, Tensor::vector(p.mean())?))
}

fn projection_from<T: Scalar>(
    matrix: &Tensor,
    mean: &Tensor,
    domain: &str,
    allow_narrowing: bool,
) -> Result<Projection<T>> {
    let [rows, cols] = matrix.dims()[..] else {
        return Err(Error::Shape(format!("projection matrix has dims {:?}", matrix.dims())));
    };
    Projection::new(
        rows as usize,
        cols as usize,
        matrix.values(allow_narrowing)?,
        mean.values(allow_narrowing)?,
        domain,
    )
}

pub fn projection_bundle<T: Scalar>(p: &Projection<T>) -> Result<Bundle> {
    let (m, mu) = projection_tensors(p)?;
    let mut b = Bundle::new("projection");
    b.set("domain", json!(p.domain())).push("matrix", m).push("mean", mu);
    Ok(b)
}

pub fn projection_from_bundle<T: Scalar>(b: &Bundle, allow_narrowing: bool) -> Result<Projection<T>> {
    b.expect_kind("projection")?;
    projection_from(b.tensor("matrix")?, b.tensor("mean")?, b.str_field("domain")?, allow_narrowing)
}

pub fn global_stats_bundle<T: Scalar>(g: &GlobalStats<T>, domain: &str) -> Result<Bundle> {
    let mut b = Bundle::new("global_stats");
    b.set("domain", json!(domain))
        .set("sample_count", json!(g.sample_count))
        .push("means", Tensor::vector(&g.means)?)
        .push("stddevs", Tensor::vector(&g.stddevs)?);
    Ok(b)
}

pub fn global_stats_from_bundle<T: Scalar>(b: &Bundle, allow_narrowing: bool) -> Result<GlobalStats<T>> {
    b.expect_kind("global_stats")?;
    let count = b.field("sample_count")?.as_u64().ok_or_else(|| Error::Format {
        offset: 8,
        message: "sample_count is not an integer".into(),
    })?;
    Ok(GlobalStats {
        means: b.tensor("means")?.values(allow_narrowing)?,
        stddevs: b.tensor("stddevs")?.values(allow_narrowing)?,
        sample_count: count as usize,
    })
}

/// Checkpoint of a trained model; `seed` is the training seed.
pub fn model_bundle<T: Scalar>(m: &SiameseModel<T>, seed: u64) -> Result<Bundle> {
    let (u, mu_x) = projection_tensors(&m.proj_x)?;
    let (v, mu_y) = projection_tensors(&m.proj_y)?;
    let mut b = Bundle::new("model");
    b.set("alpha", json!(m.alpha.as_f64()))
        .set("beta", json!(m.beta.as_f64()))
        .set("epsilon", json!(m.epsilon.as_f64()))
        .set("seed", json!(seed))
        .set("regime", json!(m.regime.to_string()))
        .set("hinge", json!(m.hinge.to_string()))
        .set("domain_x", json!(m.proj_x.domain()))
        .set("domain_y", json!(m.proj_y.domain()))
        .push("U", u)
        .push("mean_x", mu_x)
        .push("V", v)
        .push("mean_y", mu_y)
        .push("W", Tensor::vector(&m.weights.weights)?)
        .push("b", Tensor::vector(&[m.weights.bias])?);
    Ok(b)
}

pub fn model_from_bundle<T: Scalar>(b: &Bundle, allow_narrowing: bool) -> Result<SiameseModel<T>> {
    b.expect_kind("model")?;
    let u = projection_from(b.tensor("U")?, b.tensor("mean_x")?, b.str_field("domain_x")?, allow_narrowing)?;
    let v = projection_from(b.tensor("V")?, b.tensor("mean_y")?, b.str_field("domain_y")?, allow_narrowing)?;
    let bias: Vec<T> = b.tensor("b")?.values(allow_narrowing)?;
    if bias.len() != 1 {
        return Err(Error::Shape(format!("bias tensor has {} values", bias.len())));
    }
    let weights = ChannelWeights::new(b.tensor("W")?.values(allow_narrowing)?, bias[0])?;
    let regime: Regime = b.str_field("regime")?.parse()?;
    let hinge: HingeForm = b.str_field("hinge")?.parse()?;
    Ok(SiameseModel::new(
        u,
        v,
        weights,
        T::cast_f64(b.f64_field("alpha")?),
        T::cast_f64(b.f64_field("beta")?),
    )?
    .with_epsilon(T::cast_f64(b.f64_field("epsilon")?))
    .with_regime(regime)
    .with_hinge(hinge))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip() {
        let u = Projection::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.1, 0.2, 0.3], "B").unwrap();
        let v = Projection::new(2, 2, vec![1.0, 0.0, 0.5, 1.0], vec![-1.0, 1.0], "A").unwrap();
        let m = SiameseModel::new(u, v, ChannelWeights::new(vec![0.3, 0.7], -0.25).unwrap(), 100.0, 1.0)
            .unwrap()
            .with_regime(Regime::Joint)
            .with_hinge(HingeForm::Margin);
        let bytes = model_bundle(&m, 42).unwrap().encode().unwrap();
        let b = Bundle::decode(&bytes).unwrap();
        assert_eq!(b.header["seed"], json!(42));
        assert_eq!(model_from_bundle::<f64>(&b, false).unwrap(), m);
        assert!(projection_from_bundle::<f64>(&b, false).is_err());
    }

    #[test]
    fn truncated_bundle() {
        let p = Projection::<f32>::identity(2, "A");
        let bytes = projection_bundle(&p).unwrap().encode().unwrap();
        assert!(matches!(Bundle::decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let back = projection_from_bundle::<f32>(&Bundle::decode(&bytes).unwrap(), false).unwrap();
        assert_eq!(back, p);
    }
}
