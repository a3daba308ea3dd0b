//! Model file format, all integers little-endian:
//!
//! ```text
//! "PKSPOTNN"  u32 version
//! u32 input_side  3 × (u32 filters, u32 kernel)  u32 classes
//! u32 tensor count, then per tensor: u32 rank, rank × u32 dim, f64 values
//!   (parameters first, then velocities)
//! u32 CRC-32 of every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use super::model::{Model, ModelArchitecture};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PKSPOTNN";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend(v.to_le_bytes());
}

pub fn save_model(model: &Model) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, FORMAT_VERSION);
    let arch = model.architecture();
    put_u32(&mut out, arch.input_side);
    for (f, k) in arch.conv {
        put_u32(&mut out, f);
        put_u32(&mut out, k);
    }
    put_u32(&mut out, arch.classes);
    let tensors: Vec<&Tensor> = model.params().iter().chain(model.velocity()).collect();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("model payload ends early".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len()));
        let n = n.ok_or_else(|| Error::Format(format!("tensor shape {shape:?} exceeds file")))?;
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }
}

/// Parses a model file. When `expected_input_side` is given, a model built
/// for a different patch size is rejected.
pub fn load_model(bytes: &[u8], expected_input_side: Option<u32>) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checksum);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::Checksum);
    }
    let mut r = Reader { bytes: body };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let input_side = r.u32()?;
    let mut conv = [(0, 0); 3];
    for c in &mut conv {
        *c = (r.u32()?, r.u32()?);
    }
    let arch = ModelArchitecture {
        input_side,
        conv,
        classes: r.u32()?,
    };
    if let Some(expected) = expected_input_side {
        if expected != input_side {
            return Err(Error::Architecture(format!(
                "model expects {input_side}px patches, {expected}px requested"
            )));
        }
    }
    let count = r.u32()? as usize;
    if count % 2 != 0 || count > 64 {
        return Err(Error::Format(format!("{count} tensors")));
    }
    let tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    if !r.bytes.is_empty() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    let mut params = tensors;
    let velocity = params.split_off(count / 2);
    Model::from_parts(arch, params, velocity)
}

/// Writes through a temporary file and renames it into place.
pub fn write_model_file(model: &Model, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let wrap = |e: std::io::Error| Error::from(e).in_file(path);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(&save_model(model)).map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

pub fn read_model_file(path: &Path, expected_input_side: Option<u32>) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    load_model(&bytes, expected_input_side).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let mut m = Model::new(ModelArchitecture::new(32), 11).unwrap();
        m.params_mut()[1].data_mut()[0] = -0.0;
        m.params_mut()[7].data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = load_model(&save_model(&m), Some(32)).unwrap();
        for (a, b) in m.params().iter().chain(m.velocity()).zip(back.params().iter().chain(back.velocity())) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let bytes = save_model(&model());
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(load_model(&bytes[..cut], None), Err(Error::Checksum)), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 3] ^= 0x10;
        assert!(matches!(load_model(&flipped, None), Err(Error::Checksum)));
    }

    #[test]
    fn input_side_mismatch() {
        let bytes = save_model(&model());
        assert!(matches!(load_model(&bytes, Some(48)), Err(Error::Architecture(_))));
        assert!(load_model(&bytes, None).is_ok());
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = save_model(&model());
        bytes[8] = 2;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(load_model(&bytes, None), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_model_file(&model(), &path).unwrap();
        assert_eq!(read_model_file(&path, Some(32)).unwrap(), model());
    }
}
