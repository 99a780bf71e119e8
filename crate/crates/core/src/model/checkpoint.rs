//! `SEINEM1` checkpoints: magic, length-prefixed JSON hyperparameters, then
//! every tensor as `{ name, ndim, dims..., little-endian f64 data }` in
//! declaration order.

use super::{ModelError, ModelHyper, ModelParams};
use crate::graph::format::{put_f64s, put_str, put_u64, Reader};
use crate::rng::StreamKey;
use std::io::{Read, Write};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SEINEM1";

pub fn write_checkpoint(params: &ModelParams, w: &mut impl Write) -> Result<(), ModelError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_str(w, &serde_json::to_string(&params.hyper)?)?;
    let infos = params.tensor_infos();
    put_u64(w, infos.len() as u64)?;
    for (info, data) in infos.iter().zip(params.tensors()) {
        put_str(w, &info.name)?;
        put_u64(w, info.shape.len() as u64)?;
        for &dim in &info.shape {
            put_u64(w, dim as u64)?;
        }
        put_f64s(w, data)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams, ModelError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut rd = Reader::new(&buf);
    let bad = ModelError::Checkpoint;
    if rd.bytes(CHECKPOINT_MAGIC.len()).map_err(bad)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, expected SEINEM1".into()));
    }
    let hyper: ModelHyper = serde_json::from_str(&rd.string().map_err(bad)?)?;
    let mut params = ModelParams::init(&hyper, StreamKey::new(0))?;
    let infos = params.tensor_infos();
    let count = rd.usize().map_err(bad)?;
    if count != infos.len() {
        return Err(bad(format!("expected {} tensors, found {count}", infos.len())));
    }
    for (info, slot) in infos.iter().zip(params.tensors_mut()) {
        let name = rd.string().map_err(bad)?;
        if name != info.name {
            return Err(bad(format!("expected tensor `{}`, found `{name}`", info.name)));
        }
        let ndim = rd.usize().map_err(bad)?;
        let shape = (0..ndim).map(|_| rd.usize()).collect::<Result<Vec<_>, _>>().map_err(bad)?;
        if shape != info.shape {
            return Err(ModelError::Shape {
                what: name,
                expected: info.shape.clone(),
                found: shape,
            });
        }
        slot.copy_from_slice(&rd.f64s(slot.len()).map_err(bad)?);
    }
    if !rd.is_empty() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(params)
}
