//! On-disk corpus: a JSON manifest plus one KISE embedding file per space.
//!
//! KISE layout (little-endian): magic `KISE`, u32 version, u32 N, u32 dim,
//! then N×dim f32 values, row-major.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use kis_core::space::NormStats;
use kis_core::{Corpus, EmbeddingSpace, ItemMeta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KISE_MAGIC: [u8; 4] = *b"KISE";
pub const KISE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceEntry {
    pub space_id: String,
    pub dim: usize,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub items: Vec<ItemMeta>,
    pub spaces: Vec<SpaceEntry>,
}

/// Raw matrix as stored in a KISE file.
#[derive(Debug, Clone, PartialEq)]
pub struct KiseMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

pub fn write_kise_to<W: Write>(mut w: W, rows: usize, dim: usize, data: &[f32]) -> std::io::Result<()> {
    assert_eq!(data.len(), rows * dim, "matrix data does not match its shape");
    let to_u32 = |x: usize| u32::try_from(x).map_err(|_| std::io::Error::other("matrix too large for KISE"));
    w.write_all(&KISE_MAGIC)?;
    w.write_all(&KISE_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(rows)?.to_le_bytes())?;
    w.write_all(&to_u32(dim)?.to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn write_kise(path: &Path, space: &EmbeddingSpace) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_kise_to(BufWriter::new(f), space.len(), space.dim(), space.as_slice()).map_err(|e| Error::io(path, e))
}

pub fn read_kise_from<R: Read>(mut r: R, path: &Path) -> Result<KiseMatrix> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(path, "truncated KISE header"))?;
    if header[..4] != KISE_MAGIC {
        return Err(Error::format(path, "not a KISE file (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4-byte slice")) as usize;
    let version = word(4) as u32;
    if version != KISE_VERSION {
        return Err(Error::format(path, format!("unsupported KISE version {version}")));
    }
    let (rows, dim) = (word(8), word(12));
    if dim == 0 {
        return Err(Error::format(path, "dim must be positive"));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let want = rows * dim * 4;
    if bytes.len() != want {
        return Err(Error::format(
            path,
            format!("expected {want} bytes of data for {rows}×{dim}, found {}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(KiseMatrix { rows, dim, data })
}

pub fn read_kise(path: &Path) -> Result<KiseMatrix> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_kise_from(BufReader::new(f), path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads and validates a corpus. Rows are normalised on load.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest = read_manifest(manifest_path)?;
    if manifest.spaces.is_empty() {
        return Err(Error::format(manifest_path, "manifest lists no embedding spaces"));
    }
    let mut spaces = Vec::with_capacity(manifest.spaces.len());
    for entry in &manifest.spaces {
        let path = resolve(manifest_path, &entry.path);
        let m = read_kise(&path)?;
        if m.dim != entry.dim {
            return Err(kis_core::Error::DimMismatch {
                context: format!("space {}", entry.space_id),
                expected: entry.dim,
                actual: m.dim,
            }
            .into());
        }
        spaces.push(EmbeddingSpace::from_rows(entry.space_id.clone(), m.dim, m.data)?);
    }
    Ok(Corpus::new(manifest.items, spaces)?)
}

/// Writes `manifest.json` and one `<space_id>.kise` per space into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(corpus.num_spaces());
    for space in corpus.spaces() {
        let file = PathBuf::from(format!("{}.kise", space.id()));
        write_kise(&dir.join(&file), space)?;
        entries.push(SpaceEntry {
            space_id: space.id().to_string(),
            dim: space.dim(),
            path: file,
        });
    }
    let manifest = Manifest {
        items: corpus.items().to_vec(),
        spaces: entries,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpaceReport {
    pub space_id: String,
    pub dim: usize,
    pub norms: NormStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub items: usize,
    pub spaces: Vec<SpaceReport>,
}

/// Summary printed by `kis ingest --check`.
pub fn ingest_report(corpus: &Corpus) -> IngestReport {
    IngestReport {
        items: corpus.len(),
        spaces: corpus
            .spaces()
            .iter()
            .map(|s| SpaceReport {
                space_id: s.id().to_string(),
                dim: s.dim(),
                norms: s.norm_stats(),
            })
            .collect(),
    }
}
