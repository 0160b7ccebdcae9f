//! Model checkpoint format.
//!
//! Single file: magic "WTM1", a u32 version, a length-prefixed JSON header
//! (vocabulary, hyperparameters, segmentation statistics, named-tensor
//! index), then the tensor payload as little-endian f32 in index order.
//! Loading an f32 model back gives bit-identical tensors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{ActionHead, ModelParams, SegStats, TensorView};
use crate::corpus::Vocabularies;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, FusionParams};
use crate::scalar::Scalar;
use crate::shs::ShsParams;
use crate::tfidf::TfidfTables;
use crate::ths::ThsParams;

const MAGIC: &[u8; 4] = b"WTM1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: u32,
    cols: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    vocab: Vocabularies,
    config: TrainConfig,
    seg_stats: SegStats,
    tfidf_eps: f64,
    tensors: Vec<TensorEntry>,
}

fn push_tensor<S: Scalar>(
    entries: &mut Vec<TensorEntry>,
    payload: &mut Vec<u8>,
    name: &str,
    rows: usize,
    cols: usize,
    values: impl Iterator<Item = S>,
) {
    entries.push(TensorEntry { name: name.to_string(), rows: rows as u32, cols: cols as u32 });
    for v in values {
        payload.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
}

/// Serialize a model; tensors are stored as f32 regardless of `S`.
pub fn save_checkpoint<S: Scalar>(model: &ModelParams<S>, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    model.visit_trainable(|name, view| match view {
        TensorView::Mat(m) => {
            push_tensor(&mut entries, &mut payload, &name, m.nrows(), m.ncols(), m.iter().copied())
        }
        TensorView::Col(v) => {
            push_tensor(&mut entries, &mut payload, &name, v.len(), 1, v.iter().copied())
        }
    });
    if let Some(head) = &model.action_head {
        let w = &head.weight;
        push_tensor(&mut entries, &mut payload, "aux.action_weight", w.nrows(), w.ncols(), w.iter().copied());
        push_tensor(&mut entries, &mut payload, "aux.action_bias", head.bias.len(), 1, head.bias.iter().copied());
    }
    let t = &model.tfidf;
    push_tensor(&mut entries, &mut payload, "tfidf.tf", t.tf.nrows(), t.tf.ncols(), t.tf.iter().copied());
    push_tensor(&mut entries, &mut payload, "tfidf.idf", t.idf.len(), 1, t.idf.iter().copied());
    push_tensor(&mut entries, &mut payload, "tfidf.w", t.w.nrows(), t.w.ncols(), t.w.iter().copied());
    entries.push(TensorEntry { name: "tfidf.mask".into(), rows: t.mask.nrows() as u32, cols: t.mask.ncols() as u32 });
    for &m in t.mask.iter() {
        payload.extend_from_slice(&(m as f32).to_le_bytes());
    }

    let header = Header {
        version: VERSION,
        vocab: model.vocab.clone(),
        config: model.config.clone(),
        seg_stats: model.seg_stats.clone(),
        tfidf_eps: model.tfidf.eps.to_f64_lossy(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("checkpoint header serialization failed: {e}")))?;

    let mut out = Vec::with_capacity(16 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint; the result is always in the storage scalar f32.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("{}: not a WTM1 checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Format(format!("{}: truncated checkpoint header", path.display())));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("{}: bad checkpoint header: {e}", path.display())))?;

    let mut tensors: BTreeMap<String, Array2<f32>> = BTreeMap::new();
    let mut at = header_end;
    for entry in &header.tensors {
        let n = entry.rows as usize * entry.cols as usize;
        let end = at + 4 * n;
        if bytes.len() < end {
            return Err(Error::Format(format!("{}: truncated tensor payload", path.display())));
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let off = at + 4 * i;
            data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        let m = Array2::from_shape_vec((entry.rows as usize, entry.cols as usize), data)
            .map_err(|e| Error::Format(format!("{}: bad tensor shape: {e}", path.display())))?;
        tensors.insert(entry.name.clone(), m);
        at = end;
    }
    if at != bytes.len() {
        return Err(Error::Format(format!("{}: trailing bytes after payload", path.display())));
    }

    let take_mat = |tensors: &mut BTreeMap<String, Array2<f32>>, name: &str| -> Result<Array2<f32>> {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("{}: missing tensor \"{name}\"", path.display())))
    };
    let take_col = |tensors: &mut BTreeMap<String, Array2<f32>>, name: &str| -> Result<Array1<f32>> {
        Ok(take_mat(tensors, name)?.remove_axis(Axis(1)))
    };

    let cfg = header.config;
    cfg.validate()?;
    let encoder = EncoderParams {
        g_weight: take_mat(&mut tensors, "encoder.g_weight")?,
        g_bias: take_col(&mut tensors, "encoder.g_bias")?,
        conv_taps: (0..cfg.kernel_len)
            .map(|l| take_mat(&mut tensors, &format!("encoder.conv.{l:02}")))
            .collect::<Result<_>>()?,
        keep_rate: cfg.keep_rate as f32,
    };
    encoder.validate()?;
    let shs = ShsParams {
        attr_weight: take_mat(&mut tensors, "shs.attr_weight")?,
        attr_bias: take_col(&mut tensors, "shs.attr_bias")?,
        wc: take_mat(&mut tensors, "shs.wc")?,
        s: cfg.pool_s,
        lambda: cfg.lambda as f32,
    };
    shs.validate()?;
    let ths = ThsParams {
        stage_weights: (0..cfg.stages)
            .map(|k| take_mat(&mut tensors, &format!("ths.stage_weight.{k:02}")))
            .collect::<Result<_>>()?,
        stage_biases: (0..cfg.stages)
            .map(|k| take_col(&mut tensors, &format!("ths.stage_bias.{k:02}")))
            .collect::<Result<_>>()?,
        w_total: take_mat(&mut tensors, "ths.w_total")?,
    };
    ths.validate()?;
    let fusion = FusionParams {
        mode: cfg.fusion,
        w1: matches!(cfg.fusion, FusionMode::Weighted)
            .then(|| take_mat(&mut tensors, "fusion.w1"))
            .transpose()?,
        w2: matches!(cfg.fusion, FusionMode::Weighted)
            .then(|| take_mat(&mut tensors, "fusion.w2"))
            .transpose()?,
        w_alpha: matches!(cfg.fusion, FusionMode::Gated)
            .then(|| take_col(&mut tensors, "fusion.w_alpha"))
            .transpose()?,
        beta: cfg.beta as f32,
    };
    fusion.validate(header.vocab.n_tasks())?;
    let action_head = if tensors.contains_key("aux.action_weight") {
        Some(ActionHead {
            weight: take_mat(&mut tensors, "aux.action_weight")?,
            bias: take_col(&mut tensors, "aux.action_bias")?,
        })
    } else {
        None
    };
    let tfidf = TfidfTables {
        tf: take_mat(&mut tensors, "tfidf.tf")?,
        idf: take_col(&mut tensors, "tfidf.idf")?,
        w: take_mat(&mut tensors, "tfidf.w")?,
        mask: take_mat(&mut tensors, "tfidf.mask")?.mapv(|x| u8::from(x > 0.0)),
        eps: header.tfidf_eps as f32,
    };

    Ok(ModelParams {
        encoder,
        shs,
        ths,
        fusion,
        action_head,
        vocab: header.vocab,
        tfidf,
        seg_stats: header.seg_stats,
        config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::training::run::train;
    use crate::training::TrainConfig as Cfg;

    #[test]
    fn round_trip_is_bit_exact() {
        let corpus = generate_synthetic(&SynthConfig {
            n_tasks: 2,
            n_actions: 5,
            videos_per_task: 3,
            duration_mean: 6.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = Cfg {
            iterations: 5,
            enc_dim: 8,
            hidden_dim: 8,
            kernel_len: 3,
            batch_size: 3,
            ..Cfg::synthetic()
        };
        let (model, _) = train::<f32>(&corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("model.wtm");
        let p2 = dir.path().join("model2.wtm");
        save_checkpoint(&model, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        // Eval outputs must be preserved bit-exactly.
        let video = &corpus.videos[0];
        let a = model.evaluate(&video.features).unwrap();
        let b = loaded.evaluate(&video.features).unwrap();
        assert_eq!(a.fused_logits, b.fused_logits);
        assert_eq!(a.phi, b.phi);
        assert_eq!(model.seg_stats.log_prior, loaded.seg_stats.log_prior);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bogus.wtm");
        std::fs::write(&p, b"NOPE0000000000000000").unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("not a WTM1"));
    }
}
