//! Binary model checkpoint.
//!
//! Layout: magic `ACMR`, format version u32, the training-config echo as a
//! length-prefixed JSON string, a u32 segment count, then named parameter
//! segments (u64 name length, UTF-8 name, u64 rows, u64 cols, little-endian
//! f64 payload). Save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::iem::IemNet;
use crate::ndcore::{Activation, DenseLayer, Matrix, Mlp};
use crate::vae::{Modality, VaeBranch};
use crate::vsa::VsaHeads;

use super::{AcmrModel, SoftmaxClassifier, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ACMR";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AcmrModel,
    pub classifier: Option<SoftmaxClassifier>,
    pub config: TrainConfig,
}

fn layer_segments(name: &str, layer: &DenseLayer, out: &mut Vec<(String, Matrix)>) {
    out.push((format!("{name}.w"), layer.weights().clone()));
    let b = layer.bias().to_vec();
    let bias = Matrix::from_vec(1, b.len(), b).expect("finite bias");
    out.push((format!("{name}.b"), bias));
}

fn mlp_segments(prefix: &str, mlp: &Mlp, out: &mut Vec<(String, Matrix)>) {
    for (i, layer) in mlp.layers().iter().enumerate() {
        layer_segments(&format!("{prefix}.l{i}"), layer, out);
    }
}

fn collect_segments(ckpt: &Checkpoint) -> Vec<(String, Matrix)> {
    let m = &ckpt.model;
    let mut out = Vec::new();
    mlp_segments("visual.encoder", &m.visual.encoder, &mut out);
    mlp_segments("visual.decoder", &m.visual.decoder, &mut out);
    mlp_segments("semantic.encoder", &m.semantic.encoder, &mut out);
    mlp_segments("semantic.decoder", &m.semantic.decoder, &mut out);
    mlp_segments("iem_visual.score", m.iem_visual.mlp(), &mut out);
    mlp_segments("iem_semantic.score", m.iem_semantic.mlp(), &mut out);
    layer_segments("vsa.head_x", &m.heads.head_x, &mut out);
    layer_segments("vsa.head_a", &m.heads.head_a, &mut out);
    if let Some(clf) = &ckpt.classifier {
        layer_segments("classifier", &clf.layer, &mut out);
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;

    let config_json = serde_json::to_string(&ckpt.config).map_err(|e| CoreError::Parse {
        line: 0,
        detail: e.to_string(),
    })?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(config_json.as_bytes())?;

    let segments = collect_segments(ckpt);
    w.write_all(&(segments.len() as u32).to_le_bytes())?;
    for (name, m) in &segments {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
        for &v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

struct SegmentMap {
    segments: BTreeMap<String, Matrix>,
}

impl SegmentMap {
    fn take(&mut self, name: &str) -> Result<Matrix> {
        self.segments
            .remove(name)
            .ok_or_else(|| CoreError::HeaderMismatch {
                detail: format!("checkpoint is missing segment '{name}'"),
            })
    }

    fn take_layer(&mut self, name: &str, activation: Activation) -> Result<DenseLayer> {
        let w = self.take(&format!("{name}.w"))?;
        let b = self.take(&format!("{name}.b"))?;
        DenseLayer::from_parts(w, b.data().to_vec(), activation)
    }

    fn take_mlp(&mut self, prefix: &str, layers: usize, hidden: Activation) -> Result<Mlp> {
        let mut out = Vec::with_capacity(layers);
        for i in 0..layers {
            let act = if i + 1 == layers { Activation::Identity } else { hidden };
            out.push(self.take_layer(&format!("{prefix}.l{i}"), act)?);
        }
        Ok(Mlp::from_layers(out))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CoreError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }

    let config_len = read_u64(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: TrainConfig =
        serde_json::from_slice(&config_bytes).map_err(|e| CoreError::Parse {
            line: 0,
            detail: format!("checkpoint config echo: {e}"),
        })?;

    let num_segments = read_u32(&mut r)? as usize;
    let mut segments = BTreeMap::new();
    for _ in 0..num_segments {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| CoreError::Parse {
            line: 0,
            detail: "segment name is not UTF-8".into(),
        })?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut bytes = vec![0u8; rows * cols * 8];
        r.read_exact(&mut bytes)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        segments.insert(name, Matrix::from_vec(rows, cols, data)?);
    }

    let mut map = SegmentMap { segments };
    let hidden = config.hidden_activation;
    let visual = VaeBranch::from_parts(
        map.take_mlp("visual.encoder", 2, hidden)?,
        map.take_mlp("visual.decoder", 2, hidden)?,
        Modality::Visual,
    );
    let semantic = VaeBranch::from_parts(
        map.take_mlp("semantic.encoder", 2, hidden)?,
        map.take_mlp("semantic.decoder", 2, hidden)?,
        Modality::Semantic,
    );
    let iem_visual = IemNet::from_parts(map.take_mlp("iem_visual.score", 2, hidden)?, visual.input_dim());
    let iem_semantic =
        IemNet::from_parts(map.take_mlp("iem_semantic.score", 2, hidden)?, semantic.input_dim());
    let heads = VsaHeads {
        head_x: map.take_layer("vsa.head_x", Activation::Identity)?,
        head_a: map.take_layer("vsa.head_a", Activation::Identity)?,
    };
    let classifier = if map.segments.contains_key("classifier.w") {
        Some(SoftmaxClassifier {
            layer: map.take_layer("classifier", Activation::Identity)?,
        })
    } else {
        None
    };

    Ok(Checkpoint {
        model: AcmrModel {
            visual,
            semantic,
            iem_visual,
            iem_semantic,
            heads,
        },
        classifier,
        config,
    })
}
