//! Model persistence: a JSON manifest, a raw little-endian f32 weight blob,
//! and a plain-text vocabulary, all sharing one path prefix.
//!
//! The manifest pins everything needed to reload safely: shapes, the block
//! layout of the blob, and SHA-256 digests of both the weights and the
//! vocabulary. Loading verifies all of them, so a model can never silently
//! run with the wrong vocabulary or a truncated blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lm::model::{LmConfig, LmParams, BLOCK_ORDER};
use crate::lm::vocab::{hex_string, Vocab};
use crate::{Error, Result};

const FORMAT: &str = "senseprop-lm-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmManifest {
    pub format: String,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_dim: usize,
    pub vocab_sha256: String,
    pub weights_sha256: String,
    pub block_order: Vec<String>,
    pub config: LmConfig,
    /// Fingerprint of the run configuration that produced the model.
    pub fingerprint: String,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

pub fn manifest_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".manifest.json")
}

pub fn weights_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".weights.bin")
}

pub fn vocab_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".vocab.txt")
}

/// Serializes the parameters as little-endian f32 in block order.
pub fn weight_bytes(params: &LmParams) -> Vec<u8> {
    let flat = params.flatten();
    let mut bytes = Vec::with_capacity(flat.len() * 4);
    for w in flat {
        bytes.extend_from_slice(&(w as f32).to_le_bytes());
    }
    bytes
}

/// Writes `<prefix>.manifest.json`, `<prefix>.weights.bin`, and
/// `<prefix>.vocab.txt`.
pub fn save_model(
    prefix: &Path,
    params: &LmParams,
    vocab: &Vocab,
    config: &LmConfig,
    fingerprint: &str,
) -> Result<()> {
    params.validate_shapes(vocab.len())?;
    let (v, d, h, p) = params.dims();
    let bytes = weight_bytes(params);
    let manifest = LmManifest {
        format: FORMAT.to_string(),
        vocab_size: v,
        embed_dim: d,
        hidden_dim: h,
        context_dim: p,
        vocab_sha256: vocab.content_hash(),
        weights_sha256: hex_string(&Sha256::digest(&bytes)),
        block_order: BLOCK_ORDER.iter().map(|s| s.to_string()).collect(),
        config: config.clone(),
        fingerprint: fingerprint.to_string(),
    };

    let manifest_file = manifest_path(prefix);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(&manifest_file, 0, e.to_string()))?;
    fs::write(&manifest_file, json).map_err(|e| Error::io(&manifest_file, e))?;

    let weights_file = weights_path(prefix);
    fs::write(&weights_file, &bytes).map_err(|e| Error::io(&weights_file, e))?;

    vocab.save(&vocab_path(prefix))
}

/// Loads and verifies a saved model.
pub fn load_model(prefix: &Path) -> Result<(LmParams, Vocab, LmManifest)> {
    let manifest_file = manifest_path(prefix);
    let raw = fs::read_to_string(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let manifest: LmManifest =
        serde_json::from_str(&raw).map_err(|e| Error::parse(&manifest_file, 0, e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::InvalidInput(format!(
            "unsupported model format `{}`",
            manifest.format
        )));
    }
    if manifest.block_order != BLOCK_ORDER {
        return Err(Error::InvalidInput(
            "model weight blob uses an unknown block order".to_string(),
        ));
    }

    let vocab = Vocab::load(&vocab_path(prefix))?;
    if vocab.len() != manifest.vocab_size {
        return Err(Error::InvalidInput(format!(
            "vocabulary has {} entries, manifest says {}",
            vocab.len(),
            manifest.vocab_size
        )));
    }
    if vocab.content_hash() != manifest.vocab_sha256 {
        return Err(Error::InvalidInput(
            "vocabulary file does not match the hash recorded in the manifest".to_string(),
        ));
    }

    let weights_file = weights_path(prefix);
    let bytes = fs::read(&weights_file).map_err(|e| Error::io(&weights_file, e))?;
    if hex_string(&Sha256::digest(&bytes)) != manifest.weights_sha256 {
        return Err(Error::InvalidInput(
            "weight blob does not match the hash recorded in the manifest".to_string(),
        ));
    }

    let (v, d, h, p) = (
        manifest.vocab_size,
        manifest.embed_dim,
        manifest.hidden_dim,
        manifest.context_dim,
    );
    let mut params = LmParams {
        embed: ndarray::Array2::zeros((v, d)),
        w_i: ndarray::Array2::zeros((d + h, h)),
        w_f: ndarray::Array2::zeros((d + h, h)),
        w_o: ndarray::Array2::zeros((d + h, h)),
        w_c: ndarray::Array2::zeros((d + h, h)),
        w_proj: ndarray::Array2::zeros((h, p)),
        w_out: ndarray::Array2::zeros((p, v)),
        b_i: ndarray::Array1::zeros(h),
        b_f: ndarray::Array1::zeros(h),
        b_o: ndarray::Array1::zeros(h),
        b_c: ndarray::Array1::zeros(h),
        b_out: ndarray::Array1::zeros(v),
    };
    if bytes.len() != params.n_params() * 4 {
        return Err(Error::InvalidInput(format!(
            "weight blob holds {} bytes, expected {}",
            bytes.len(),
            params.n_params() * 4
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    params.assign_from_flat(&flat)?;
    Ok((params, vocab, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (LmParams, Vocab, LmConfig) {
        let corpus = vec![
            vec!["alpha".to_string(), "beta".to_string()],
            vec!["gamma".to_string(), "alpha".to_string()],
        ];
        let vocab = Vocab::build(&corpus, 16).unwrap();
        let config = LmConfig {
            vocab_size: 16,
            embed_dim: 4,
            hidden_dim: 5,
            context_dim: 3,
            seed: 21,
            ..LmConfig::default()
        };
        let params = LmParams::init(&config, vocab.len());
        (params, vocab, config)
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (params, vocab, config) = fixture();
        let prefix = dir.path().join("model");
        save_model(&prefix, &params, &vocab, &config, "fp123").unwrap();

        let (loaded, loaded_vocab, manifest) = load_model(&prefix).unwrap();
        assert_eq!(manifest.fingerprint, "fp123");
        assert_eq!(manifest.config, config);
        assert_eq!(loaded_vocab.content_hash(), vocab.content_hash());
        assert_eq!(loaded.dims(), params.dims());
        // Weights round-trip through f32, so compare at f32 precision.
        for (a, b) in loaded.flatten().iter().zip(params.flatten().iter()) {
            assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (params, vocab, config) = fixture();
        let p1 = dir.path().join("m1");
        let p2 = dir.path().join("m2");
        save_model(&p1, &params, &vocab, &config, "fp").unwrap();
        save_model(&p2, &params, &vocab, &config, "fp").unwrap();
        let b1 = fs::read(weights_path(&p1)).unwrap();
        let b2 = fs::read(weights_path(&p2)).unwrap();
        assert_eq!(b1, b2);
        let m1 = fs::read(manifest_path(&p1)).unwrap();
        let m2 = fs::read(manifest_path(&p2)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn tampered_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (params, vocab, config) = fixture();
        let prefix = dir.path().join("model");
        save_model(&prefix, &params, &vocab, &config, "fp").unwrap();

        let wpath = weights_path(&prefix);
        let mut bytes = fs::read(&wpath).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&wpath, &bytes).unwrap();
        assert!(load_model(&prefix).is_err());
    }

    #[test]
    fn swapped_vocab_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (params, vocab, config) = fixture();
        let prefix = dir.path().join("model");
        save_model(&prefix, &params, &vocab, &config, "fp").unwrap();

        let other = Vocab::build(&[vec!["zeta".to_string(), "eta".to_string()]], 16).unwrap();
        other.save(&vocab_path(&prefix)).unwrap();
        assert!(load_model(&prefix).is_err());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (params, vocab, config) = fixture();
        let prefix = dir.path().join("model");
        save_model(&prefix, &params, &vocab, &config, "fp").unwrap();

        let wpath = weights_path(&prefix);
        let bytes = fs::read(&wpath).unwrap();
        fs::write(&wpath, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_model(&prefix).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
