//! On-disk cache of extracted patches, one file per (image, annotation kind,
//! input side). File names are the SHA-256 of that key so the cache never
//! needs an index.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::AnnotationKind;
use crate::imaging::ImagePatch;

const MAGIC: &[u8; 8] = b"PKPATCH1";

#[derive(Debug, Clone)]
pub struct PatchCache {
    dir: PathBuf,
}

fn kind_byte(kind: AnnotationKind) -> u8 {
    AnnotationKind::ALL.iter().position(|&k| k == kind).unwrap() as u8
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("patch cache file truncated".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl PatchCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).in_file(&dir))?;
        Ok(PatchCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `extra` distinguishes settings that change the patches beyond kind
    /// and side, such as the fixed-square side.
    pub fn key(image: &Path, kind: AnnotationKind, input_side: u32, extra: &str) -> String {
        let mut h = Sha256::new();
        h.update(image.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(kind.as_str().as_bytes());
        h.update([0]);
        h.update(input_side.to_le_bytes());
        h.update(extra.as_bytes());
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn encode(patches: &[(String, ImagePatch)]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend((patches.len() as u32).to_le_bytes());
        for (id, p) in patches {
            out.extend((id.len() as u32).to_le_bytes());
            out.extend(id.as_bytes());
            out.push(kind_byte(p.kind()));
            out.extend(p.side().to_le_bytes());
            for v in p.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Vec<(String, ImagePatch)>> {
        let mut c = Cursor(bytes);
        if c.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a patch cache file".into()));
        }
        let n = c.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let len = c.u32()? as usize;
            let id = String::from_utf8(c.take(len)?.to_vec())
                .map_err(|_| Error::Format("spot id is not UTF-8".into()))?;
            let kind = *AnnotationKind::ALL
                .get(c.take(1)?[0] as usize)
                .ok_or_else(|| Error::Format("bad annotation kind".into()))?;
            let side = c.u32()?;
            let count = (side as usize).pow(2) * 3;
            let data = c
                .take(count * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            out.push((id, ImagePatch::new(side, kind, data)?));
        }
        if !c.0.is_empty() {
            return Err(Error::Format("trailing bytes in patch cache file".into()));
        }
        Ok(out)
    }

    /// A missing or unreadable entry is a miss; unreadable ones are logged.
    pub fn get(&self, key: &str) -> Option<Vec<(String, ImagePatch)>> {
        let path = self.path_for(key);
        let bytes = std::fs::read(&path).ok()?;
        match Self::decode(&bytes) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("{}: ignoring cache entry: {e}", path.display());
                None
            }
        }
    }

    /// Writes through a temporary file in the cache directory and renames it
    /// into place, so readers never see a partial entry.
    pub fn put(&self, key: &str, patches: &[(String, ImagePatch)]) -> Result<()> {
        let path = self.path_for(key);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&Self::encode(patches))?;
        tmp.persist(&path)
            .map_err(|e| Error::from(e.error).in_file(&path))?;
        Ok(())
    }

    pub fn get_or_insert_with(
        &self,
        key: &str,
        make: impl FnOnce() -> Result<Vec<(String, ImagePatch)>>,
    ) -> Result<Vec<(String, ImagePatch)>> {
        if let Some(p) = self.get(key) {
            return Ok(p);
        }
        let patches = make()?;
        self.put(key, &patches)?;
        Ok(patches)
    }
}
