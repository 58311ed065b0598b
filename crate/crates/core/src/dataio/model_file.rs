//! Binary container for a trained cascade.
//!
//! Layout: 8-byte magic, u32 LE format version, u64 LE payload length,
//! JSON payload, 32-byte SHA-256 of the payload.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cascade::CascadeModel;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"EXRTCASC";
const HEADER_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

pub fn encode_model(model: &CascadeModel) -> Result<Vec<u8>> {
    model.validate()?;
    let payload = serde_json::to_vec(model)
        .map_err(|e| Error::Format(format!("cannot serialise model: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<CascadeModel> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a cascade model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("model file is truncated".into()));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (HEADER_LEN as u64)
        .checked_add(len)
        .and_then(|n| n.checked_add(DIGEST_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(Error::Format(format!(
            "model file length {} does not match declared payload of {len} bytes",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len as usize];
    let digest = &bytes[HEADER_LEN + len as usize..];
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Format("model file checksum mismatch".into()));
    }
    let model: CascadeModel = serde_json::from_slice(payload)
        .map_err(|e| Error::Format(format!("malformed model payload: {e}")))?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &CascadeModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<CascadeModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{CascadeMetadata, CascadeModel};
    use crate::mlp::{Activation, MlpModel, Scaler};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> CascadeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mk = |dim: usize, rng: &mut ChaCha8Rng| {
            let scaler = Scaler {
                mean: vec![0.5; dim],
                sd: vec![2.0; dim],
            };
            MlpModel::init(dim, &[4, 3], 2, Activation::default(), 0.5, true, scaler, rng)
        };
        CascadeModel {
            nn1: mk(128, &mut rng),
            nn2: mk(21, &mut rng),
            metadata: CascadeMetadata {
                nn1_seed: 1,
                nn2_seed: 2,
                nn1_epochs: 200,
                nn2_epochs: 175,
                nn1_training_rows: 57,
                nn2_training_rows: 38,
                nn1_classes: ["a".into(), "b".into()],
                nn2_classes: ["0".into(), "50".into()],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        assert_eq!(decode_model(&bytes).unwrap(), m);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&model()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(decode_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_model(&model()).unwrap();
        assert!(matches!(decode_model(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_model(&bytes[..5]), Err(Error::Format(_))));
    }

    #[test]
    fn future_version_is_unsupported() {
        let mut bytes = encode_model(&model()).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_model(&bytes),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn non_finite_model_is_not_saved() {
        let mut m = model();
        m.nn2.output.bias[0] = f64::NAN;
        assert!(encode_model(&m).is_err());
    }
}
