//! Trained-model checkpoints: 16-byte header, model kind and dimensions,
//! then every parameter tensor as `name, length, row-major doubles`.

use std::path::Path;

use longsig_core::ablation::TrainedModel;
use longsig_core::mlp::MlpClassifier;
use longsig_core::param::ParamSet;
use longsig_core::tem::{EncoderConfig, EncoderState, Pooling, RelativeTime, TemMode};
use longsig_core::train::Classifier;

use super::binary::{Decoder, Encoder};
use crate::error::Result;

const MAGIC: &[u8; 12] = b"LONGSIG-CKPT";
const VERSION: u32 = 1;

const KIND_ENCODER: u32 = 0;
const KIND_MLP: u32 = 1;

fn write_tensors<P: ParamSet>(e: &mut Encoder, params: &P) {
    let tensors = params.tensors();
    e.usize(tensors.len());
    for (name, t) in tensors {
        e.str(&name);
        e.usize(t.len());
        e.f64s(t);
    }
}

/// Fills `params` (already shaped) from the stored tensors, checking names
/// and sizes.
fn read_tensors<P: ParamSet>(d: &mut Decoder, params: &mut P) -> Result<()> {
    let names: Vec<(String, usize)> = params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    let count = d.count(0)?;
    if count != names.len() {
        return Err(d.error(format!("{count} tensors stored, model has {}", names.len())));
    }
    for ((want, len), slot) in names.into_iter().zip(params.tensors_mut()) {
        let name = d.str()?;
        if name != want {
            return Err(d.error(format!("tensor `{name}` where `{want}` was expected")));
        }
        let n = d.count(8)?;
        if n != len {
            return Err(d.error(format!("tensor `{name}` holds {n} values, expected {len}")));
        }
        slot.copy_from_slice(&d.f64s(n)?);
    }
    Ok(())
}

pub fn encode_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let mut e = Encoder::with_header(MAGIC, VERSION);
    match model {
        TrainedModel::Encoder(state) => {
            let c = state.config();
            e.u32(KIND_ENCODER);
            for v in [
                c.context_dim,
                c.image_dim,
                c.model_dim,
                c.heads,
                c.head_dim,
                c.mlp_dim,
                c.blocks,
                c.max_scans,
            ] {
                e.usize(v);
            }
            e.u32(match c.tem_mode {
                TemMode::Learned => 0,
                TemMode::Unit => 1,
            });
            e.u32(match c.relative_time {
                RelativeTime::LastObservation => 0,
                RelativeTime::Pairwise => 1,
            });
            e.u32(match c.pooling {
                Pooling::Cls => 0,
                Pooling::Mean => 1,
            });
            e.f64(c.tem_init_b);
            e.f64(c.tem_init_c);
            e.f64(c.layer_norm_eps);
            e.u64(c.init_seed);
            write_tensors(&mut e, state.params());
        }
        TrainedModel::Mlp(mlp) => {
            e.u32(KIND_MLP);
            e.usize(mlp.input_dim());
            e.usize(mlp.params().b1.len());
            write_tensors(&mut e, mlp.params());
        }
    }
    e.finish()
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<TrainedModel> {
    let mut d = Decoder::new(bytes, path);
    let version = d.header(MAGIC)?;
    if version != VERSION {
        return Err(d.error(format!("unsupported version {version}")));
    }
    let model = match d.u32()? {
        KIND_ENCODER => {
            let mut dims = [0usize; 8];
            for v in &mut dims {
                *v = d.u64()? as usize;
            }
            let [context_dim, image_dim, model_dim, heads, head_dim, mlp_dim, blocks, max_scans] = dims;
            let tem_mode = match d.u32()? {
                0 => TemMode::Learned,
                1 => TemMode::Unit,
                other => return Err(d.error(format!("unknown attention scaling mode {other}"))),
            };
            let relative_time = match d.u32()? {
                0 => RelativeTime::LastObservation,
                1 => RelativeTime::Pairwise,
                other => return Err(d.error(format!("unknown relative-time mode {other}"))),
            };
            let pooling = match d.u32()? {
                0 => Pooling::Cls,
                1 => Pooling::Mean,
                other => return Err(d.error(format!("unknown pooling {other}"))),
            };
            let config = EncoderConfig {
                context_dim,
                image_dim,
                model_dim,
                heads,
                head_dim,
                mlp_dim,
                blocks,
                max_scans,
                tem_mode,
                relative_time,
                pooling,
                tem_init_b: d.f64()?,
                tem_init_c: d.f64()?,
                layer_norm_eps: d.f64()?,
                init_seed: d.u64()?,
            };
            // Guard against absurd stored dimensions before allocating.
            let width = model_dim.max(mlp_dim).max(context_dim).max(image_dim).max(heads * head_dim);
            if width.saturating_mul(width).saturating_mul(blocks.max(1)) > bytes.len() {
                return Err(d.error("dimensions exceed the stored tensors"));
            }
            let mut state = EncoderState::new(config)?;
            read_tensors(&mut d, state.params_mut())?;
            TrainedModel::Encoder(EncoderState::from_params(state.config().clone(), state.params().clone())?)
        }
        KIND_MLP => {
            let input = d.count(8)?;
            let hidden = d.count(8)?;
            let mut mlp = MlpClassifier::new(input, hidden, 0)?;
            read_tensors(&mut d, mlp.params_mut())?;
            TrainedModel::Mlp(MlpClassifier::from_params(mlp.params().clone())?)
        }
        other => return Err(d.error(format!("unknown model kind {other}"))),
    };
    d.finish()?;
    Ok(model)
}
