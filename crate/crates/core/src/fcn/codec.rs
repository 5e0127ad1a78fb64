use alloc::vec::Vec;

use super::model::{ConvLayer, FcnModel, KERNEL, WEIGHTS_VERSION};
use super::FcnError;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"DSFC";

/// Little-endian layout: magic, u32 version, u64 seed, u32 layer count, then
/// per layer u32 cin, u32 cout, u32 kernel, weights and biases as f64.
pub fn encode_weights(model: &FcnModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + model.param_count() * 8 + model.layers.len() * 12);
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&model.version.to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        for v in [l.cin as u32, l.cout as u32, KERNEL as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], FcnError> {
        if self.buf.len() < N {
            return Err(FcnError::Truncated);
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, FcnError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FcnError> {
        if self.buf.len() / 8 < n {
            return Err(FcnError::Truncated);
        }
        (0..n)
            .map(|_| self.take::<8>().map(f64::from_le_bytes))
            .collect()
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<FcnModel, FcnError> {
    let mut r = Reader { buf: bytes };
    if r.take::<4>().map_err(|_| FcnError::BadMagic)? != WEIGHTS_MAGIC {
        return Err(FcnError::BadMagic);
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(FcnError::UnsupportedVersion(version));
    }
    let seed = u64::from_le_bytes(r.take::<8>()?);
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..count {
        let (cin, cout, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if k != KERNEL {
            return Err(FcnError::ShapeMismatch("kernel size must be 3"));
        }
        let n = cin
            .checked_mul(cout)
            .and_then(|v| v.checked_mul(k * k))
            .ok_or(FcnError::Truncated)?;
        let weights = r.f64s(n)?;
        let bias = r.f64s(cout)?;
        layers.push(ConvLayer {
            cin,
            cout,
            weights,
            bias,
        });
    }
    if !r.buf.is_empty() {
        return Err(FcnError::Truncated);
    }
    let model = FcnModel {
        layers,
        version,
        seed,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::DEFAULT_CHANNELS;

    #[test]
    fn round_trip_is_exact() {
        let m = FcnModel::init(&DEFAULT_CHANNELS, 77);
        let bytes = encode_weights(&m);
        assert_eq!(decode_weights(&bytes).unwrap(), m);
        assert_eq!(bytes.len(), 20 + 4 * 12 + m.param_count() * 8);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_weights(&FcnModel::init(&DEFAULT_CHANNELS, 1));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert_eq!(
            decode_weights(&bytes).unwrap_err(),
            FcnError::UnsupportedVersion(2)
        );
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = encode_weights(&FcnModel::init(&DEFAULT_CHANNELS, 1));
        assert_eq!(decode_weights(b"XXXX").unwrap_err(), FcnError::BadMagic);
        assert_eq!(
            decode_weights(&bytes[..bytes.len() - 3]).unwrap_err(),
            FcnError::Truncated
        );
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_weights(&long).unwrap_err(), FcnError::Truncated);
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let mut m = FcnModel::init(&DEFAULT_CHANNELS, 1);
        m.layers[1].bias[0] = f64::NAN;
        assert_eq!(
            decode_weights(&encode_weights(&m)).unwrap_err(),
            FcnError::NonFiniteWeights
        );
    }
}
