//! Binary grammar files.
//!
//! Layout (little-endian): magic `SPCFG`, version byte (1), flags byte
//! (bit 0 = tied), `n_nt`, `n_pt`, `vocab_size` as u64, then the root, left,
//! right and emission tables as raw f64 in row-major order. Tied grammars
//! store the left table once. Low-rank grammars use magic `SPLRG` with the
//! same header plus a u64 rank, followed by root, U, V, W and emission.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{GrammarDims, LowRankGrammar, SimpleGrammar};
use crate::{Error, Result};

pub const GRAMMAR_MAGIC: &[u8; 5] = b"SPCFG";
pub const LOWRANK_MAGIC: &[u8; 5] = b"SPLRG";
pub const GRAMMAR_VERSION: u8 = 1;

const FLAG_TIED: u8 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                field,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn count(&mut self, field: &str) -> Result<usize> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| Error::format(field, format!("value {v} too large")))
    }

    pub(crate) fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(field, "size overflow"))?;
        let raw = self.take(bytes, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }

    pub(crate) fn table(&mut self, rows: usize, cols: usize, field: &str) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(field, "size overflow"))?;
        let data = self.f64s(n, field)?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("exact length"))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                "trailer",
                format!("{} unexpected trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn checked_total(parts: &[(usize, usize)], field: &str) -> Result<usize> {
    parts.iter().try_fold(0usize, |acc, &(r, c)| {
        r.checked_mul(c)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| acc.checked_add(n))
            .ok_or_else(|| Error::format(field, "size overflow"))
    })
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 5]) -> Result<(u8, GrammarDims)> {
    if r.take(5, "magic")? != magic {
        return Err(Error::format(
            "magic",
            format!("expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = r.u8("version")?;
    if version != GRAMMAR_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = r.u8("flags")?;
    let n_nt = r.count("n_nt")?;
    let n_pt = r.count("n_pt")?;
    let vocab = r.count("vocab_size")?;
    let dims = GrammarDims::new(n_nt, n_pt, vocab)
        .map_err(|e| Error::format("dims", e.to_string()))?;
    Ok((flags, dims))
}

fn write_header(out: &mut Vec<u8>, magic: &[u8; 5], flags: u8, dims: GrammarDims) {
    out.extend_from_slice(magic);
    out.push(GRAMMAR_VERSION);
    out.push(flags);
    for v in [dims.n_nt, dims.n_pt, dims.vocab_size] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
}

pub fn write_grammar(g: &SimpleGrammar) -> Result<Vec<u8>> {
    g.check_structure()?;
    let mut out = Vec::new();
    write_header(&mut out, GRAMMAR_MAGIC, if g.tied { FLAG_TIED } else { 0 }, g.dims);
    put_f64s(&mut out, g.log_root.iter().copied());
    put_f64s(&mut out, g.log_left.iter().copied());
    if !g.tied {
        put_f64s(&mut out, g.log_right.iter().copied());
    }
    put_f64s(&mut out, g.log_emit.iter().copied());
    Ok(out)
}

pub fn read_grammar(buf: &[u8]) -> Result<SimpleGrammar> {
    let mut r = Reader::new(buf);
    let (flags, dims) = read_header(&mut r, GRAMMAR_MAGIC)?;
    if flags & !FLAG_TIED != 0 {
        return Err(Error::format("flags", format!("unknown flag bits {flags:#04x}")));
    }
    let tied = flags & FLAG_TIED != 0;
    let (n, s) = (dims.n_nt, dims.n_sym());
    let mut parts = vec![(1, n), (n, s), (dims.n_pt, dims.vocab_size)];
    if !tied {
        parts.push((n, s));
    }
    let expected = checked_total(&parts, "dims")?;
    if expected != r.remaining() {
        return Err(Error::format(
            "tables",
            format!("expected {expected} bytes of tables, found {}", r.remaining()),
        ));
    }
    let log_root = Array1::from(r.f64s(n, "root")?);
    let log_left = r.table(n, s, "left")?;
    let log_right = if tied {
        log_left.clone()
    } else {
        r.table(n, s, "right")?
    };
    let log_emit = r.table(dims.n_pt, dims.vocab_size, "emit")?;
    r.finish()?;
    SimpleGrammar::from_tables(log_root, log_left, log_right, log_emit, tied)
}

pub fn save_grammar(g: &SimpleGrammar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_grammar(g)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_grammar(path: impl AsRef<Path>) -> Result<SimpleGrammar> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_grammar(&bytes)
}

pub fn write_lowrank(lr: &LowRankGrammar) -> Result<Vec<u8>> {
    lr.check_structure()?;
    let mut out = Vec::new();
    write_header(&mut out, LOWRANK_MAGIC, 0, lr.dims);
    out.extend_from_slice(&(lr.rank as u64).to_le_bytes());
    put_f64s(&mut out, lr.log_root.iter().copied());
    for m in [&lr.u, &lr.v, &lr.w, &lr.log_emit] {
        put_f64s(&mut out, m.iter().copied());
    }
    Ok(out)
}

pub fn read_lowrank(buf: &[u8]) -> Result<LowRankGrammar> {
    let mut r = Reader::new(buf);
    let (flags, dims) = read_header(&mut r, LOWRANK_MAGIC)?;
    if flags != 0 {
        return Err(Error::format("flags", format!("unknown flag bits {flags:#04x}")));
    }
    let rank = r.count("rank")?;
    if rank == 0 {
        return Err(Error::format("rank", "must be positive"));
    }
    let (n, s) = (dims.n_nt, dims.n_sym());
    let expected = checked_total(
        &[(1, n), (n, rank), (s, rank), (s, rank), (dims.n_pt, dims.vocab_size)],
        "dims",
    )?;
    if expected != r.remaining() {
        return Err(Error::format(
            "tables",
            format!("expected {expected} bytes of tables, found {}", r.remaining()),
        ));
    }
    let log_root = Array1::from(r.f64s(n, "root")?);
    let u = r.table(n, rank, "U")?;
    let v = r.table(s, rank, "V")?;
    let w = r.table(s, rank, "W")?;
    let log_emit = r.table(dims.n_pt, dims.vocab_size, "emit")?;
    r.finish()?;
    let lr = LowRankGrammar {
        dims,
        rank,
        u,
        v,
        w,
        log_root,
        log_emit,
    };
    lr.check_structure()?;
    Ok(lr)
}

pub fn save_lowrank(lr: &LowRankGrammar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_lowrank(lr)?).map_err(|e| Error::io(path, e))
}

pub fn load_lowrank(path: impl AsRef<Path>) -> Result<LowRankGrammar> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_lowrank(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{random_grammar, random_lowrank};

    fn bits(m: &Array2<f64>) -> Vec<u64> {
        m.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = random_grammar(GrammarDims::new(3, 2, 5).unwrap(), 4, 0.3).unwrap();
        let back = read_grammar(&write_grammar(&g).unwrap()).unwrap();
        assert_eq!(bits(&g.log_left), bits(&back.log_left));
        assert_eq!(bits(&g.log_right), bits(&back.log_right));
        assert_eq!(bits(&g.log_emit), bits(&back.log_emit));
        assert_eq!(g, back);
    }

    #[test]
    fn tied_grammar_stores_left_once() {
        let g = random_grammar(GrammarDims::new(3, 2, 5).unwrap(), 4, 1.0)
            .unwrap()
            .into_tied();
        let untied = random_grammar(GrammarDims::new(3, 2, 5).unwrap(), 4, 1.0).unwrap();
        let a = write_grammar(&g).unwrap();
        let b = write_grammar(&untied).unwrap();
        assert_eq!(b.len() - a.len(), 3 * 5 * 8);
        let back = read_grammar(&a).unwrap();
        assert!(back.tied);
        assert_eq!(back, g);
    }

    #[test]
    fn truncations_are_errors() {
        let g = random_grammar(GrammarDims::new(2, 2, 3).unwrap(), 1, 1.0).unwrap();
        let bytes = write_grammar(&g).unwrap();
        for cut in 0..bytes.len() {
            assert!(read_grammar(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_zero_is_unsupported() {
        let g = random_grammar(GrammarDims::new(2, 2, 3).unwrap(), 1, 1.0).unwrap();
        let mut bytes = write_grammar(&g).unwrap();
        bytes[5] = 0;
        let err = read_grammar(&bytes).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion(0)));
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn bad_magic_names_the_field() {
        let err = read_grammar(b"NOPE!\x01\x00").unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        let mut bytes = Vec::new();
        write_header(
            &mut bytes,
            GRAMMAR_MAGIC,
            0,
            GrammarDims::new(1 << 40, 1 << 40, 1 << 40).unwrap(),
        );
        assert!(read_grammar(&bytes).is_err());
    }

    #[test]
    fn lowrank_round_trip() {
        let lr = random_lowrank(GrammarDims::new(2, 3, 2).unwrap(), 4, 8, 1.0).unwrap();
        let bytes = write_lowrank(&lr).unwrap();
        assert_eq!(read_lowrank(&bytes).unwrap(), lr);
        for cut in 0..bytes.len() {
            assert!(read_lowrank(&bytes[..cut]).is_err());
        }
    }
}
