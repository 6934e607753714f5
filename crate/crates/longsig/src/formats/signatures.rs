//! Fitted signature model: 16-byte header, dimensions, variable names,
//! mean, scale, whitening, `S`, projector and convergence diagnostics.
//! Matrices are row-major doubles.

use std::path::Path;

use longsig_core::ica::{ConvergenceInfo, SignatureModel};

use super::binary::{Decoder, Encoder};
use super::curves::{read_matrix, write_matrix};
use crate::error::Result;

const MAGIC: &[u8; 12] = b"LONGSIG-ICA\0";
const VERSION: u32 = 1;

pub fn encode_signature_model(m: &SignatureModel) -> Vec<u8> {
    let mut e = Encoder::with_header(MAGIC, VERSION);
    e.usize(m.variable_count());
    e.usize(m.components());
    for v in m.variables() {
        e.str(v);
    }
    e.f64s(m.mean());
    e.f64s(m.scale());
    write_matrix(&mut e, m.whitening());
    write_matrix(&mut e, m.signatures());
    write_matrix(&mut e, m.projector());
    let c = m.convergence();
    e.usize(c.iterations);
    e.f64(c.final_delta);
    e.u32(u32::from(c.converged));
    e.finish()
}

pub fn decode_signature_model(path: &Path, bytes: &[u8]) -> Result<SignatureModel> {
    let mut d = Decoder::new(bytes, path);
    let version = d.header(MAGIC)?;
    if version != VERSION {
        return Err(d.error(format!("unsupported version {version}")));
    }
    let p = d.count(8)?;
    let _c = d.count(0)?;
    let variables = (0..p).map(|_| d.str()).collect::<Result<Vec<_>>>()?;
    let mean = d.f64s(p)?;
    let scale = d.f64s(p)?;
    let whitening = read_matrix(&mut d)?;
    let signatures = read_matrix(&mut d)?;
    let projector = read_matrix(&mut d)?;
    let convergence = ConvergenceInfo {
        iterations: d.u64()? as usize,
        final_delta: d.f64()?,
        converged: d.u32()? != 0,
    };
    d.finish()?;
    Ok(SignatureModel::from_parts(
        variables,
        mean,
        scale,
        whitening,
        signatures,
        projector,
        convergence,
    )?)
}
