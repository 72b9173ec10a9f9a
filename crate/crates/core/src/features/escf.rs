//! `ESCF` feature files.
//!
//! Layout, little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"ESCF"` |
//! | version | u16 = 1 |
//! | bands, frames, channels | u32 each |
//! | values | f32, band-major, frame-middle, channel-minor |
//! | band type | u8 (0 mel, 1 gammatone) |
//! | frame hop | f64 seconds |
//! | clip id | u32 byte length + UTF-8 |
//!
//! A file holds the whole log spectrogram of one clip (channels = 1)
//! before silence dropping, so threshold and segmentation settings can
//! change without re-extraction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BandType, FeatureError, Spectrogram};

pub const ESCF_MAGIC: &[u8; 4] = b"ESCF";
pub const ESCF_VERSION: u16 = 1;

pub fn write_escf<W: Write>(w: &mut W, spec: &Spectrogram, clip_id: &str) -> Result<(), FeatureError> {
    w.write_all(ESCF_MAGIC)?;
    w.write_all(&ESCF_VERSION.to_le_bytes())?;
    for n in [spec.bands, spec.frames, 1] {
        w.write_all(&u32::try_from(n).expect("dimension fits u32").to_le_bytes())?;
    }
    for v in &spec.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[spec.band_type.tag()])?;
    w.write_all(&spec.frame_hop_s.to_le_bytes())?;
    w.write_all(&(clip_id.len() as u32).to_le_bytes())?;
    w.write_all(clip_id.as_bytes())?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], FeatureError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FeatureError::MalformedEscf("truncated file".into()),
        _ => FeatureError::Io(e),
    })?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, FeatureError> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

/// Returns the spectrogram and the clip id it was extracted from.
pub fn read_escf<R: Read>(r: &mut R) -> Result<(Spectrogram, String), FeatureError> {
    if &read_array::<4, _>(r)? != ESCF_MAGIC {
        return Err(FeatureError::MalformedEscf("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(r)?);
    if version != ESCF_VERSION {
        return Err(FeatureError::MalformedEscf(format!("unsupported version {version}")));
    }
    let (bands, frames, channels) = (read_u32(r)?, read_u32(r)?, read_u32(r)?);
    if channels != 1 {
        return Err(FeatureError::MalformedEscf(format!(
            "expected 1 channel, found {channels}"
        )));
    }
    let n = bands
        .checked_mul(frames)
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| FeatureError::MalformedEscf("implausible dimensions".into()))?;
    let mut raw = vec![0u8; 4 * n];
    r.read_exact(&mut raw)
        .map_err(|_| FeatureError::MalformedEscf("truncated data".into()))?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let tag = read_array::<1, _>(r)?[0];
    let band_type =
        BandType::from_tag(tag).ok_or_else(|| FeatureError::MalformedEscf(format!("unknown band type {tag}")))?;
    let frame_hop_s = f64::from_le_bytes(read_array(r)?);
    let id_len = read_u32(r)?;
    if id_len > 1 << 16 {
        return Err(FeatureError::MalformedEscf("clip id too long".into()));
    }
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)
        .map_err(|_| FeatureError::MalformedEscf("truncated clip id".into()))?;
    let clip_id = String::from_utf8(id).map_err(|_| FeatureError::MalformedEscf("clip id not UTF-8".into()))?;
    Ok((
        Spectrogram {
            bands,
            frames,
            values,
            band_type,
            frame_hop_s,
        },
        clip_id,
    ))
}

pub fn write_escf_file(path: &Path, spec: &Spectrogram, clip_id: &str) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_escf(&mut w, spec, clip_id)?;
    w.flush()?;
    Ok(())
}

pub fn read_escf_file(path: &Path) -> Result<(Spectrogram, String), FeatureError> {
    read_escf(&mut BufReader::new(File::open(path)?))
}
