//! Checkpoint directory format: `manifest.json` with names/shapes/config,
//! one raw little-endian f64 file per tensor, and the vocabulary as
//! `vocab.tsv`. Loading validates every shape against the manifest and the
//! configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{DynConvParams, PosConvParams};
use crate::error::{Error, Result};
use crate::interaction::PositionTable;
use crate::numerics::tensor::Tensor;
use crate::text::{EmbeddingStore, Vocabulary};

use super::{ModelParams, TrainConfig, SLOT_NAMES};

const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const VOCAB: &str = "vocab.tsv";
/// Prefix for AdaGrad accumulator tensors.
const ACC_PREFIX: &str = "adagrad.";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

fn write_raw(path: &Path, data: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_raw(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != expected_len * 8 {
        return Err(Error::format(
            path,
            0,
            format!("expected {} bytes, found {}", expected_len * 8, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Write parameters, optimizer state, vocabulary, and a config echo.
pub fn save_checkpoint(dir: &Path, params: &ModelParams, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    params.vocab.save(&dir.join(VOCAB))?;

    let slots: [(&str, &Tensor); 10] = [
        ("embeddings", &params.embeddings.matrix),
        ("conv_left", &params.dyn_conv.w_left),
        ("conv_center", &params.dyn_conv.w_center),
        ("conv_right", &params.dyn_conv.w_right),
        ("conv_bias", &params.dyn_conv.bias),
        ("attentive_weight", &params.pos_conv.weight),
        ("attentive_bias", &params.pos_conv.bias),
        ("position_table", &params.position.table),
        ("classifier_weight", &params.w_cls),
        ("classifier_bias", &params.b_cls),
    ];

    let mut tensors = Vec::new();
    for (name, tensor) in slots {
        let file = format!("{name}.bin");
        write_raw(&dir.join(&file), tensor.data())?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            dtype: "f64".to_string(),
            file,
        });
    }
    for (name, acc) in &params.accumulators {
        let file = format!("{ACC_PREFIX}{name}.bin");
        write_raw(&dir.join(&file), acc)?;
        tensors.push(TensorEntry {
            name: format!("{ACC_PREFIX}{name}"),
            shape: vec![acc.len()],
            dtype: "f64".to_string(),
            file,
        });
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: config.seed,
        config: config.clone(),
        tensors,
    };
    let mut out = BufWriter::new(File::create(dir.join(MANIFEST))?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Read a checkpoint back; the returned parameters satisfy the same shape
/// checks as freshly initialized ones.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, TrainConfig)> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(&manifest_path)?))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            0,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let config = manifest.config.clone();
    let vocab = Vocabulary::load(&dir.join(VOCAB))?;

    let read_tensor = |name: &str| -> Result<Tensor> {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(&manifest_path, 0, format!("missing tensor {name}")))?;
        if entry.dtype != "f64" {
            return Err(Error::format(
                &manifest_path,
                0,
                format!("tensor {name} has unsupported dtype {}", entry.dtype),
            ));
        }
        let numel: usize = entry.shape.iter().product();
        let data = read_raw(&dir.join(&entry.file), numel)?;
        Tensor::new(entry.shape.clone(), data)
    };

    let embeddings = EmbeddingStore {
        matrix: read_tensor("embeddings")?,
        trainable: true,
    };
    let dyn_conv = DynConvParams {
        w_left: read_tensor("conv_left")?,
        w_center: read_tensor("conv_center")?,
        w_right: read_tensor("conv_right")?,
        bias: read_tensor("conv_bias")?,
    };
    let pos_conv = PosConvParams {
        weight: read_tensor("attentive_weight")?,
        bias: read_tensor("attentive_bias")?,
    };
    let position = PositionTable {
        table: read_tensor("position_table")?,
    };
    let w_cls = read_tensor("classifier_weight")?;
    let b_cls = read_tensor("classifier_bias")?;

    let mut params = ModelParams::new(
        vocab, embeddings, dyn_conv, pos_conv, position, w_cls, b_cls, &config,
    )?;
    for slot in SLOT_NAMES {
        let name = format!("{ACC_PREFIX}{slot}");
        if manifest.tensors.iter().any(|t| t.name == name) {
            let numel: usize = manifest
                .tensors
                .iter()
                .find(|t| t.name == name)
                .expect("checked above")
                .shape
                .iter()
                .product();
            let data = read_raw(&dir.join(format!("{name}.bin")), numel)?;
            params.accumulators.insert(slot.to_string(), data);
        }
    }
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{tiny_config, tiny_params, tiny_vocab};
    use super::super::{adagrad_step, forward, ParamGrads};
    use super::*;
    use crate::data::PairExample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    #[test]
    fn round_trip_preserves_bits_and_predictions() {
        let config = tiny_config(4);
        let vocab = tiny_vocab(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut params = tiny_params(&config, vocab, 0.5, &mut rng);
        // give the optimizer state something non-trivial
        let mut grads = BTreeMap::new();
        grads.insert("classifier_bias".to_string(), vec![0.4]);
        adagrad_step(&mut params, &ParamGrads(grads), &config);

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &params, &config).unwrap();
        let (loaded, loaded_config) = load_checkpoint(dir.path()).unwrap();

        assert_eq!(loaded_config, config);
        assert!(loaded.embeddings.matrix.bits_eq(&params.embeddings.matrix));
        assert!(loaded.w_cls.bits_eq(&params.w_cls));
        assert!(loaded.b_cls.bits_eq(&params.b_cls));
        assert_eq!(
            loaded.accumulators["classifier_bias"],
            params.accumulators["classifier_bias"]
        );

        let pair = PairExample::new("p0 p1 p2", "h0 h1", 1).unwrap();
        let before = forward(&pair, &params, &config).unwrap();
        let after = forward(&pair, &loaded, &config).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let config = tiny_config(3);
        let vocab = tiny_vocab(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = tiny_params(&config, vocab, 0.5, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &params, &config).unwrap();

        // truncate one tensor file
        let path = dir.path().join("classifier_weight.bin");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let config = tiny_config(3);
        let vocab = tiny_vocab(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let params = tiny_params(&config, vocab, 0.5, &mut rng);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        save_checkpoint(dir_a.path(), &params, &config).unwrap();
        save_checkpoint(dir_b.path(), &params, &config).unwrap();
        for entry in std::fs::read_dir(dir_a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name:?} differs");
        }
    }
}
