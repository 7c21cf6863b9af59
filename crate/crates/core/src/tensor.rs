//! Dense row-major `f32` tensors and the `HDAT1` container format.
//!
//! Layout on disk:
//!
//! ```text
//! bytes 0..5   magic "HDAT1"
//! byte  5      dtype code (0x01 = f32)
//! byte  6      rank (u8)
//! rank x u64   little-endian extents
//! payload      product(extents) little-endian f32, no padding
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"HDAT1";
pub const DTYPE_F32: u8 = 0x01;
const HEADER_FIXED: usize = 7;

/// A dense, row-major tensor of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape accounts for every element.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Converts `f64` values, e.g. the output of a numeric routine.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Number of elements per leading-axis row (1 for rank-0/1 tensors).
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Extent of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Returns the index of the first NaN or infinite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Stacks equally-shaped rows into a `[rows.len(), ..row_shape]` tensor.
    pub fn stack(row_shape: &[usize], rows: &[&[f32]]) -> Result<Self> {
        let width: usize = row_shape.iter().product();
        let mut data = Vec::with_capacity(width * rows.len());
        for r in rows {
            if r.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(row_shape);
        Tensor::new(shape, data)
    }
}

/// Serializes a tensor into `HDAT1` bytes.
pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::invalid(format!("rank {} exceeds 255", t.rank())));
    }
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &e in &t.shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates `HDAT1` bytes.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_FIXED {
        return Err(Error::Truncated {
            expected: HEADER_FIXED,
            found: bytes.len(),
        });
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[5]));
    }
    let rank = bytes[6] as usize;
    let header = HEADER_FIXED + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for chunk in bytes[HEADER_FIXED..header].chunks_exact(8) {
        let e = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        shape.push(usize::try_from(e).map_err(|_| Error::invalid("extent overflows usize"))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::invalid("element count overflows usize"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::invalid("payload size overflows usize"))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    let t = Tensor::new(shape, data)?;
    if let Some(i) = t.first_non_finite() {
        return Err(Error::NonFinite(i));
    }
    Ok(t)
}

/// Reads and validates an `HDAT1` container file.
pub fn load_container(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes a tensor as an `HDAT1` container file.
pub fn save_container(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_tensor_loads() {
        let t = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[2, 2]);
        assert_eq!(back.data(), &[0.0; 4]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = MAGIC.to_vec();
        bytes.push(DTYPE_F32);
        bytes.push(1);
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::Truncated {
                expected: 27,
                found: 23
            })
        ));
    }

    #[test]
    fn half_encodes_as_ieee_bytes() {
        let t = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(&bytes[..5], b"HDAT1");
        assert_eq!(bytes[5], 0x01);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..15], &1u64.to_le_bytes());
        assert_eq!(&bytes[15..23], &1u64.to_le_bytes());
        assert_eq!(&bytes[23..], &[0x00, 0x00, 0x00, 0x3F]);
        assert_eq!(bytes.len(), 27);
    }

    #[test]
    fn empty_shape_round_trips() {
        let t = Tensor::new(vec![0], vec![]).unwrap();
        assert_eq!(decode(&encode(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn distinct_error_codes() {
        assert!(matches!(decode(b"HDAT2\x01\x00"), Err(Error::BadMagic)));
        assert!(matches!(
            decode(b"HDAT1\x02\x00\x00\x00\x00\x00"),
            Err(Error::UnsupportedDtype(2))
        ));

        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::TrailingBytes(1))));

        let mut bytes = encode(&t).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFinite(1))));

        assert!(matches!(
            Tensor::new(vec![3, 2], vec![0.0; 5]),
            Err(Error::ShapeMismatch { expected: 6, .. })
        ));
    }

    #[test]
    fn random_4d_file_round_trip_is_bit_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..5 * 3 * 8 * 8).map(|_| rng.random::<f32>()).collect();
        let t = Tensor::new(vec![5, 3, 8, 8], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.hdat");
        save_container(&t, &p).unwrap();
        let back = load_container(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(0usize..5, 0..=4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(-1e6f32..1e6, n)
                .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_is_identity(t in arb_tensor()) {
            let back = decode(&encode(&t).unwrap()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
