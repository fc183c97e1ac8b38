//! `XCT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic  b"XCT1"
//! offset 4   dtype  u8   0 = f32, 1 = f64
//! offset 5   rank   u8
//! offset 6   dims   rank x u32
//! ...        payload, product(dims) values, row-major
//! ```
//!
//! Feature maps are stored as rank 3 `[C, H, W]`. Validity masks are not stored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::FeatureMap;

pub const TENSOR_MAGIC: &[u8; 4] = b"XCT1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// An n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: TensorData,
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("rank {} exceeds 255", dims.len())));
        }
        match element_count(&dims) {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            _ => Err(Error::Shape(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            ))),
        }
    }

    /// Rank-1 tensor from a slice.
    pub fn vector<T: Scalar>(values: &[T]) -> Result<Self> {
        let n = u32::try_from(values.len())
            .map_err(|_| Error::Shape(format!("{} values exceed u32 dims", values.len())))?;
        Self::from_values(vec![n], values)
    }

    /// Rank-2 tensor from a row-major matrix.
    pub fn matrix<T: Scalar>(rows: usize, cols: usize, values: &[T]) -> Result<Self> {
        Self::from_values(vec![dim(rows)?, dim(cols)?], values)
    }

    pub fn from_values<T: Scalar>(dims: Vec<u32>, values: &[T]) -> Result<Self> {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => TensorData::F64(values.iter().map(|v| v.as_f64()).collect()),
        };
        Self::new(dims, data)
    }

    pub fn from_map<T: Scalar>(map: &FeatureMap<T>) -> Result<Self> {
        Self::from_values(
            vec![dim(map.channels())?, dim(map.height())?, dim(map.width())?],
            map.as_slice(),
        )
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Values converted to `T`. Converting f64 data to an f32 pipeline is an
    /// error unless `allow_narrowing` is set; widening is always allowed.
    pub fn values<T: Scalar>(&self, allow_narrowing: bool) -> Result<Vec<T>> {
        if self.dtype().size() > T::DTYPE.size() && !allow_narrowing {
            return Err(Error::Config(format!(
                "tensor holds {:?} data but the pipeline is {:?}; narrowing must be allowed explicitly",
                self.dtype(),
                T::DTYPE
            )));
        }
        Ok(match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::cast_f64(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::cast_f64(x)).collect(),
        })
    }

    /// Rank 3 `[C, H, W]`, or rank 2 `[H, W]` as a single channel.
    pub fn to_map<T: Scalar>(&self, allow_narrowing: bool) -> Result<FeatureMap<T>> {
        let (c, h, w) = match self.dims[..] {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "feature maps need rank 2 or 3, got dims {:?}",
                    self.dims
                )))
            }
        };
        FeatureMap::new(c as usize, h as usize, w as usize, self.values(allow_narrowing)?, "")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(self.dtype().code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Decodes one tensor from the front of `bytes`, returning it and the
    /// number of bytes consumed. `base` is the absolute offset of `bytes[0]`
    /// and is only used in error messages.
    pub fn decode(bytes: &[u8], base: u64) -> Result<(Self, usize)> {
        let err = |at: usize, message: String| Error::Format {
            offset: base + at as u64,
            message,
        };
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            let got = &bytes[..bytes.len().min(4)];
            return Err(err(0, format!("bad magic {got:?}, expected \"XCT1\"")));
        }
        if bytes.len() < 6 {
            return Err(err(
                bytes.len(),
                format!("truncated header: expected 6 bytes, found {}", bytes.len()),
            ));
        }
        let dtype = DType::from_code(bytes[4]).ok_or_else(|| err(4, format!("unknown dtype code {}", bytes[4])))?;
        let rank = bytes[5] as usize;
        let header = 6 + 4 * rank;
        if bytes.len() < header {
            return Err(err(
                bytes.len(),
                format!("truncated dims: expected {header} header bytes, found {}", bytes.len()),
            ));
        }
        let dims: Vec<u32> = (0..rank)
            .map(|i| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().expect("4 bytes")))
            .collect();
        let count = element_count(&dims);
        let payload = count.and_then(|n| n.checked_mul(dtype.size()));
        let Some(payload) = payload.filter(|p| p.checked_add(header).is_some()) else {
            return Err(err(6, format!("dims {dims:?} overflow the addressable size")));
        };
        let available = bytes.len() - header;
        if available < payload {
            return Err(err(
                bytes.len(),
                format!("truncated payload: expected {payload} bytes, found {available}"),
            ));
        }
        let body = &bytes[header..header + payload];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        Ok((Self { dims, data }, header + payload))
    }
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Shape(format!("dimension {n} exceeds u32")))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.encode())?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (t, used) = Tensor::decode(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used as u64,
            message: format!("{} trailing bytes after tensor", bytes.len() - used),
        });
    }
    Ok(t)
}

pub fn write_feature_map<T: Scalar>(path: impl AsRef<Path>, map: &FeatureMap<T>) -> Result<()> {
    write_tensor(path, &Tensor::from_map(map)?)
}

pub fn read_feature_map<T: Scalar>(path: impl AsRef<Path>, allow_narrowing: bool) -> Result<FeatureMap<T>> {
    read_tensor(path)?.to_map(allow_narrowing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::vector(&[1.5f32, -2.0]).unwrap();
        let b = t.encode();
        assert_eq!(&b[..4], b"XCT1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..10], &2u32.to_le_bytes());
        assert_eq!(&b[10..14], &1.5f32.to_le_bytes());
        assert_eq!(b.len(), 18);
    }

    #[test]
    fn decode_errors_carry_offsets() {
        let b = Tensor::matrix(2, 3, &[0.0f64; 6]).unwrap().encode();
        match Tensor::decode(&b[..b.len() - 5], 0) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("expected 48 bytes, found 43"), "{message}")
            }
            other => panic!("{other:?}"),
        }
        let mut bad = b.clone();
        bad[0] = b'Y';
        assert!(matches!(Tensor::decode(&bad, 100), Err(Error::Format { offset: 100, .. })));
        let mut dtype = b.clone();
        dtype[4] = 7;
        assert!(matches!(Tensor::decode(&dtype, 0), Err(Error::Format { offset: 4, .. })));
        let mut huge = vec![];
        huge.extend_from_slice(b"XCT1");
        huge.extend_from_slice(&[1, 3]);
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        match Tensor::decode(&huge, 0) {
            Err(Error::Format { offset: 6, message }) => assert!(message.contains("overflow")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precision_policy() {
        let t = Tensor::vector(&[0.1f64, 0.2]).unwrap();
        assert!(t.values::<f32>(false).is_err());
        assert_eq!(t.values::<f32>(true).unwrap(), vec![0.1f32, 0.2]);
        assert_eq!(t.values::<f64>(false).unwrap(), vec![0.1, 0.2]);
        let narrow = Tensor::vector(&[0.1f32]).unwrap();
        assert_eq!(narrow.values::<f64>(false).unwrap(), vec![0.1f32 as f64]);
    }

    #[test]
    fn map_shapes() {
        let t = Tensor::matrix(2, 2, &[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let m: FeatureMap<f64> = t.to_map(false).unwrap();
        assert_eq!((m.channels(), m.height(), m.width()), (1, 2, 2));
        assert!(Tensor::vector(&[1.0f64]).unwrap().to_map::<f64>(false).is_err());
    }
}
