//! Codec artifact files.
//!
//! Codebook file (`codebooks.bin`), all integers `u32` and all reals `f64`,
//! little-endian:
//!
//! ```text
//! magic "DFCB" | version (=1) | F | K | V
//! for v in 1..=V: for f in 0..F: for n in 0..2^v: K codeword components
//! ```
//!
//! Pixel projection file (`projection.bin`), only written in pixel mode:
//!
//! ```text
//! magic "DFCP" | version (=1) | pool | frame height | frame width | P | outputs
//! mean (P reals) | components (outputs x P reals, row-major)
//! ```
//!
//! Dataset file (`dataset.bin`), one record per sampled observation:
//!
//! ```text
//! magic "DFCD" | version (=1) | record count N (u64) | record width W
//! N x W reals
//! ```
//!
//! Dataset records are `previous ++ current` snapshot vectors: normalized
//! noisy coordinates in vector mode, true states in pixel mode (frames are
//! re-rendered on load).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Codebook, CodebookEnsemble, Level, PixelProjection, MAX_LEVEL};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"DFCB";
pub const PROJECTION_MAGIC: &[u8; 4] = b"DFCP";
pub const DATASET_MAGIC: &[u8; 4] = b"DFCD";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_ensemble<W: Write>(ens: &CodebookEnsemble, out: W) -> Result<W> {
    let mut w = Writer::new(out);
    w.bytes(CODEBOOK_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(ens.features() as u32)?;
    w.u32(ens.dim() as u32)?;
    w.u32(ens.max_level() as u32)?;
    for b in ens.books() {
        w.f64s(&b.codewords)?;
    }
    w.finish()
}

pub fn read_ensemble<R: Read>(input: R, name: &str) -> Result<CodebookEnsemble> {
    let mut r = Reader::new(input, name);
    r.magic(CODEBOOK_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let features = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let levels = r.u32()?;
    if features == 0 || dim == 0 || levels == 0 || levels > MAX_LEVEL as u32 {
        return Err(r.fail(format!("bad header F={features} K={dim} V={levels}")));
    }
    let mut books = Vec::with_capacity(levels as usize);
    for v in 1..=levels {
        let n = features * (1usize << v) * dim;
        books.push(Codebook {
            level: v as Level,
            features,
            dim,
            codewords: r.f64s(n)?,
        });
    }
    r.end()?;
    CodebookEnsemble::new(books)
}

pub fn save_ensemble(ens: &CodebookEnsemble, path: &Path) -> Result<()> {
    write_ensemble(ens, BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<CodebookEnsemble> {
    let f = File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    read_ensemble(BufReader::new(f), &path.display().to_string())
}

pub fn save_projection(p: &PixelProjection, path: &Path) -> Result<()> {
    let mut w = Writer::new(BufWriter::new(File::create(path)?));
    w.bytes(PROJECTION_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(p.pool as u32)?;
    w.u32(p.frame_height as u32)?;
    w.u32(p.frame_width as u32)?;
    w.u32(p.mean.len() as u32)?;
    w.u32(p.outputs as u32)?;
    w.f64s(&p.mean)?;
    w.f64s(&p.components)?;
    w.finish()?;
    Ok(())
}

pub fn load_projection(path: &Path) -> Result<PixelProjection> {
    let f = File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let mut r = Reader::new(BufReader::new(f), path.display().to_string());
    r.magic(PROJECTION_MAGIC)?;
    if r.u32()? != FORMAT_VERSION {
        return Err(r.fail("unsupported version"));
    }
    let pool = r.u32()? as usize;
    let frame_height = r.u32()? as usize;
    let frame_width = r.u32()? as usize;
    let p = r.u32()? as usize;
    let outputs = r.u32()? as usize;
    let mean = r.f64s(p)?;
    let components = r.f64s(outputs * p)?;
    r.end()?;
    Ok(PixelProjection {
        pool,
        frame_height,
        frame_width,
        mean,
        components,
        outputs,
    })
}

pub fn save_dataset(records: &[Vec<f64>], path: &Path) -> Result<()> {
    let width = records.first().map(|r| r.len()).unwrap_or(0);
    let mut w = Writer::new(BufWriter::new(File::create(path)?));
    w.bytes(DATASET_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u64(records.len() as u64)?;
    w.u32(width as u32)?;
    for r in records {
        if r.len() != width {
            return Err(Error::Dimension {
                what: "dataset record",
                expected: width,
                got: r.len(),
            });
        }
        w.f64s(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Vec<f64>>> {
    let f = File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    let mut r = Reader::new(BufReader::new(f), path.display().to_string());
    r.magic(DATASET_MAGIC)?;
    if r.u32()? != FORMAT_VERSION {
        return Err(r.fail("unsupported version"));
    }
    let n = r.u64()? as usize;
    let width = r.u32()? as usize;
    let records = (0..n).map(|_| r.f64s(width)).collect::<Result<Vec<_>>>()?;
    r.end()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::FeatureVector;
    use crate::seed::SeedTree;
    use rand::Rng as _;

    #[test]
    fn ensemble_file_round_trip_and_layout() {
        let mut rng = SeedTree::new(4).rng(crate::seed::Stream::Dataset, 0);
        let data: Vec<FeatureVector> = (0..200)
            .map(|_| FeatureVector((0..8).map(|_| rng.gen::<f64>()).collect()))
            .collect();
        let ens = CodebookEnsemble::train(&data, 3, 1, &SeedTree::new(4)).unwrap();
        let bytes = write_ensemble(&ens, Vec::new()).unwrap();
        assert_eq!(&bytes[..4], b"DFCB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 20 + 8 * 8 * (2 + 4 + 8));
        // first codeword of level 1, feature 0
        let first = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(first, ens.books()[0].codeword(0, 0)[0]);
        let back = read_ensemble(bytes.as_slice(), "mem").unwrap();
        assert_eq!(back, ens);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(read_ensemble(&b"NOPE"[..], "mem").is_err());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DFCB");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_ensemble(bytes.as_slice(), "mem"), Err(Error::Format { .. })));
    }
}
