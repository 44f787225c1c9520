//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! b"FPSM"            magic
//! u32                format version (1)
//! [u8; 32]           taxonomy content hash
//! u32 x 4            feature_dim, embed_dim, hidden_dim, vocab_size
//! f64 ...            every tensor of SeqModel::tensors(), row-major
//! ```
//!
//! The encoder architecture is fixed by the dims, so the tensor count and
//! sizes are implied by the header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelDims, SeqModel};
use crate::taxonomy::Taxonomy;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FPSM";
const VERSION: u32 = 1;
const KIND: &str = "checkpoint";

pub fn write_checkpoint<W: Write>(model: &SeqModel, taxonomy: &Taxonomy, mut w: W) -> Result<()> {
    if taxonomy.vocab_size() != model.dims().vocab_size {
        return Err(Error::dims(
            "taxonomy vocabulary",
            model.dims().vocab_size,
            taxonomy.vocab_size(),
        ));
    }
    let d = model.dims();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&taxonomy.content_hash())?;
    for v in [d.feature_dim, d.embed_dim, d.hidden_dim, d.vocab_size] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for t in model.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(taxonomy: &Taxonomy, mut r: R) -> Result<SeqModel> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(KIND, "bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(KIND, format!("unsupported version {version}")));
    }
    let mut hash = [0u8; 32];
    read_exact(&mut r, &mut hash)?;
    if hash != taxonomy.content_hash() {
        return Err(Error::format(KIND, "taxonomy hash mismatch"));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_u32(&mut r)? as usize;
    }
    let dims = ModelDims {
        feature_dim: dims[0],
        embed_dim: dims[1],
        hidden_dim: dims[2],
        vocab_size: dims[3],
    };
    if dims.vocab_size != taxonomy.vocab_size() {
        return Err(Error::format(KIND, "vocabulary size does not match taxonomy"));
    }
    let mut model =
        SeqModel::zeros(dims).map_err(|e| Error::format(KIND, format!("bad dims: {e}")))?;
    let mut buf = [0u8; 8];
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            read_exact(&mut r, &mut buf)?;
            *v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::format(KIND, "non-finite parameter"));
            }
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(KIND, "trailing bytes"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SeqModel, taxonomy: &Taxonomy, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, taxonomy, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(taxonomy: &Taxonomy, path: impl AsRef<Path>) -> Result<SeqModel> {
    read_checkpoint(taxonomy, BufReader::new(File::open(path)?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(KIND, "truncated"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(t: &Taxonomy) -> SeqModel {
        SeqModel::random(
            ModelDims {
                feature_dim: 5,
                embed_dim: 3,
                hidden_dim: 4,
                vocab_size: t.vocab_size(),
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let t = Taxonomy::example();
        let m = model(&t);
        let mut buf = Vec::new();
        write_checkpoint(&m, &t, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"FPSM");
        let back = read_checkpoint(&t, buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn mismatched_taxonomy_is_rejected() {
        let t = Taxonomy::example();
        let m = model(&t);
        let mut buf = Vec::new();
        write_checkpoint(&m, &t, &mut buf).unwrap();
        let mut def = t.def().clone();
        def.groups[0].classes[0] = "upper".into();
        let other = Taxonomy::new(def).unwrap();
        assert!(matches!(
            read_checkpoint(&other, buf.as_slice()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncated_and_padded_files_are_rejected() {
        let t = Taxonomy::example();
        let m = model(&t);
        let mut buf = Vec::new();
        write_checkpoint(&m, &t, &mut buf).unwrap();
        assert!(read_checkpoint(&t, &buf[..buf.len() - 3]).is_err());
        buf.push(0);
        assert!(read_checkpoint(&t, buf.as_slice()).is_err());
    }
}
