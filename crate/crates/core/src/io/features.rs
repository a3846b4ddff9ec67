//! `CALF` feature matrices: clip features and query word vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::binary::CountingReader;
use crate::error::{Error, Result};
use crate::types::FeatureMatrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"CALF";
pub const FEATURE_VERSION: u16 = 1;

pub fn write_feature_matrix<W: Write>(m: &FeatureMatrix, mut w: W) -> std::io::Result<()> {
    w.write_all(&FEATURE_MAGIC)?;
    w.write_u16::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(m.rows() as u32)?;
    w.write_u32::<LittleEndian>(m.dim() as u32)?;
    for &x in m.data() {
        w.write_f32::<LittleEndian>(x)?;
    }
    w.flush()
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_matrix(m, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_feature_matrix<R: Read>(r: &mut CountingReader<R>) -> Result<FeatureMatrix> {
    r.expect_magic(FEATURE_MAGIC)?;
    r.expect_version(FEATURE_VERSION)?;
    let rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(r.format_error("zero feature dimension"));
    }
    let mut data = Vec::with_capacity((rows * dim).min(1 << 26));
    for row in 0..rows {
        for col in 0..dim {
            data.push(r.f32_finite(row, col)?);
        }
    }
    r.expect_eof()?;
    FeatureMatrix::new(rows, dim, data).map_err(|e| Error::Format {
        path: r.path().to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_matrix(&mut CountingReader::new(BufReader::new(file), path))
}
