//! Embedding matrix files.
//!
//! Binary layout, all integers little-endian `u64`:
//!
//! ```text
//! b"LMKEMB01" | count | dims | tag_len | tag (UTF-8) | count*dims f64 (LE, row-major)
//! ```
//!
//! The text export has one `id<TAB>v1,v2,...` line per row.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LMKEMB01";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    /// Pooling strategy tag, e.g. `lmk` or `mean@4`.
    pub strategy: String,
    pub rows: Array2<f64>,
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl EmbeddingMatrix {
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.rows.ncols() as u64).to_le_bytes())?;
        w.write_all(&(self.strategy.len() as u64).to_le_bytes())?;
        w.write_all(self.strategy.as_bytes())?;
        for v in self.rows.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an embedding matrix file".into()));
        }
        let count = read_u64(&mut r)? as usize;
        let dims = read_u64(&mut r)? as usize;
        let tag_len = read_u64(&mut r)? as usize;
        if tag_len > 1 << 16 {
            return Err(Error::Format("strategy tag too long".into()));
        }
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag)?;
        let strategy = String::from_utf8(tag).map_err(|_| Error::Format("strategy tag is not UTF-8".into()))?;
        let n = count
            .checked_mul(dims)
            .ok_or_else(|| Error::Format("embedding matrix too large".into()))?;
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let rows = Array2::from_shape_vec((count, dims), data).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { strategy, rows })
    }

    pub fn write_text<W: Write, S: AsRef<str>>(&self, ids: &[S], mut w: W) -> Result<()> {
        if ids.len() != self.rows.nrows() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), self.rows.nrows())));
        }
        for (id, row) in ids.iter().zip(self.rows.rows()) {
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}\t{}", id.as_ref(), values.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
