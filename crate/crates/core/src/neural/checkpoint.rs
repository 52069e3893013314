//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `SPRM1`, version byte (1), flags byte
//! (bit 0 = tied), kind byte (0 = neural, 1 = direct), `n_nt`, `n_pt`,
//! `vocab_size`, `d` and the tensor count as u64, then per tensor a u32 name
//! length, the UTF-8 name, a u32 rank, each dimension as u64 and the values
//! as raw f64 in row-major order.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{DirectLogits, EmbeddingParams, Model, Tensors};
use crate::grammar::io::{put_f64s, Reader};
use crate::grammar::GrammarDims;
use crate::{Error, Result};

pub const PARAM_MAGIC: &[u8; 5] = b"SPRM1";
const VERSION: u8 = 1;
const MAX_RANK: usize = 8;

pub fn write_params(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.push(VERSION);
    out.push(u8::from(model.tied()));
    out.push(match model {
        Model::Neural(_) => 0,
        Model::Direct(_) => 1,
    });
    let dims = model.dims();
    let tensors = model.tensors();
    for v in [dims.n_nt, dims.n_pt, dims.vocab_size, model.embed_dim(), tensors.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for t in tensors.iter() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.value.ndim() as u32).to_le_bytes());
        for &d in t.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f64s(&mut out, t.value.iter().copied());
    }
    out
}

pub fn read_params(buf: &[u8]) -> Result<Model> {
    let mut r = Reader::new(buf);
    if r.take(5, "magic")? != PARAM_MAGIC {
        return Err(Error::format("magic", "expected \"SPRM1\""));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = r.u8("flags")?;
    if flags & !1 != 0 {
        return Err(Error::format("flags", format!("unknown bits {flags:#04x}")));
    }
    let tied = flags & 1 == 1;
    let kind = r.u8("kind")?;
    if kind > 1 {
        return Err(Error::format("kind", format!("unknown parameterization {kind}")));
    }
    let n_nt = r.count("n_nt")?;
    let n_pt = r.count("n_pt")?;
    let vocab = r.count("vocab_size")?;
    let d = r.count("d")?;
    let count = r.count("tensor count")?;
    let dims = GrammarDims::new(n_nt, n_pt, vocab).map_err(|e| Error::format("dims", e.to_string()))?;
    // every tensor needs at least its two length prefixes
    if count > r.remaining() / 8 {
        return Err(Error::format("tensor count", format!("{count} tensors cannot fit")));
    }
    let mut tensors = Tensors::default();
    for i in 0..count {
        let field = format!("tensor {i}");
        let name_len = r.u32(&field)? as usize;
        let name = std::str::from_utf8(r.take(name_len, &field)?)
            .map_err(|_| Error::format(&field, "name is not UTF-8"))?
            .to_string();
        let rank = r.u32(&name)? as usize;
        if rank > MAX_RANK {
            return Err(Error::format(&name, format!("rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.count(&name)?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| Error::format(&name, "size overflow"))?;
        let data = r.f64s(n, &name)?;
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("exact length");
        tensors.push(name, value);
    }
    r.finish()?;
    let read: usize = tensors.iter().map(|t| t.value.len()).sum();
    // reject before the shape check, which allocates reference tensors
    if expected_len(kind, dims, d, tied) != Some(read) {
        return Err(Error::format("tensors", format!("{read} values do not match the header")));
    }
    let model = match kind {
        0 => {
            let p = EmbeddingParams { dims, d, tied, tensors };
            p.check_shapes().map_err(|e| Error::format("tensors", e.to_string()))?;
            Model::Neural(p)
        }
        1 => {
            let p = DirectLogits { dims, tied, tensors };
            p.check_shapes().map_err(|e| Error::format("tensors", e.to_string()))?;
            Model::Direct(p)
        }
        other => return Err(Error::format("kind", format!("unknown parameterization {other}"))),
    };
    Ok(model)
}

/// Parameter count implied by a header, `None` on overflow or unknown kind.
fn expected_len(kind: u8, dims: GrammarDims, d: usize, tied: bool) -> Option<usize> {
    let mul = |a: usize, b: usize| a.checked_mul(b);
    let (n, s) = (dims.n_nt, dims.n_sym());
    match kind {
        0 => {
            let embeddings = mul(1 + s + n + dims.vocab_size, d)?;
            let affine = mul(d, d)?.checked_add(d)?;
            let heads = mul(if tied { 2 } else { 3 }, affine)?;
            // f1 and f5 hold two blocks of two affine maps each
            mul(8, affine)?.checked_add(heads)?.checked_add(embeddings)
        }
        1 => {
            let rules = mul(n, s)?;
            mul(if tied { 1 } else { 2 }, rules)?
                .checked_add(n)?
                .checked_add(mul(dims.n_pt, dims.vocab_size)?)
        }
        _ => None,
    }
}

pub fn save_params(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&write_params(model)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_params;

    fn models() -> Vec<Model> {
        let dims = GrammarDims::new(2, 3, 4).unwrap();
        vec![
            Model::Neural(init_params(dims, 4, 9, false).unwrap()),
            Model::Neural(init_params(dims, 4, 9, true).unwrap()),
            Model::Direct(DirectLogits::random(dims, false, 2, 1.0).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for m in models() {
            let back = read_params(&write_params(&m)).unwrap();
            assert_eq!(write_params(&back), write_params(&m));
            assert_eq!(back, m);
        }
    }

    #[test]
    fn every_truncation_is_an_error() {
        for m in models() {
            let buf = write_params(&m);
            for cut in 0..buf.len() {
                assert!(read_params(&buf[..cut]).is_err(), "cut {cut}");
            }
        }
    }

    #[test]
    fn wrong_version_and_kind() {
        let mut buf = write_params(&models()[0]);
        buf[5] = 0;
        assert!(matches!(read_params(&buf), Err(Error::UnsupportedVersion(0))));
        let mut buf = write_params(&models()[0]);
        buf[7] = 9;
        assert!(read_params(&buf).is_err());
    }

    #[test]
    fn oversized_header_dims_are_rejected() {
        for at in [15, 31, 39] {
            let mut buf = write_params(&models()[0]);
            buf[at] = 0x10;
            assert!(read_params(&buf).is_err(), "byte {at}");
        }
    }
}
