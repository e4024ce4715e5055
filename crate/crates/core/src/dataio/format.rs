//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus four payloads. Each payload
//! is `"HIREFT01"`, a little-endian `u32` rank, `rank` little-endian `u32`
//! extents, then the row-major values as little-endian `f32`.
//!
//! | file            | extents                         |
//! |-----------------|---------------------------------|
//! | `images.bin`    | `[N, K, region_dim]`            |
//! | `boxes.bin`     | `[N, K, 4]` (x1, y1, x2, y2)    |
//! | `edges.bin`     | `[E, 3]` (image row, i, j)      |
//! | `sentences.bin` | `[S, max_words, word_dim]`, zero-padded past each sentence's `len` |

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::bbox::BoundingBox;
use super::records::{
    Dataset, DatasetManifest, ImageRecord, SentenceRecord, MANIFEST_FORMAT, MANIFEST_VERSION,
};
use crate::error::{HireError, Result};
use crate::numcore::Tensor;

pub const PAYLOAD_MAGIC: &[u8; 8] = b"HIREFT01";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FILE: &str = "images.bin";
pub const BOXES_FILE: &str = "boxes.bin";
pub const EDGES_FILE: &str = "edges.bin";
pub const SENTENCES_FILE: &str = "sentences.bin";

/// Raw payload: extents plus `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Payload {
    pub extents: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_payload(path: &Path, extents: &[usize], values: &[f32]) -> Result<()> {
    debug_assert_eq!(extents.iter().product::<usize>(), values.len());
    let file = fs::File::create(path).map_err(|e| HireError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| HireError::io(path, e));
    emit(PAYLOAD_MAGIC)?;
    emit(&(extents.len() as u32).to_le_bytes())?;
    for &e in extents {
        emit(&(e as u32).to_le_bytes())?;
    }
    for v in values {
        emit(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| HireError::io(path, e))
}

pub fn read_payload(path: &Path) -> Result<Payload> {
    let file = fs::File::open(path).map_err(|e| HireError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| HireError::io(path, e))?;
    if &magic != PAYLOAD_MAGIC {
        return Err(HireError::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(PAYLOAD_MAGIC).into_owned(),
        });
    }
    let mut word = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<fs::File>| -> Result<u32> {
        r.read_exact(&mut word).map_err(|e| HireError::io(path, e))?;
        Ok(u32::from_le_bytes(word))
    };
    let rank = read_u32(&mut r)? as usize;
    let extents = (0..rank)
        .map(|_| read_u32(&mut r).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = extents.iter().product();
    let mut bytes = Vec::with_capacity(n * 4);
    r.read_to_end(&mut bytes).map_err(|e| HireError::io(path, e))?;
    if bytes.len() != n * 4 {
        return Err(HireError::Dataset(format!(
            "{}: header declares {n} values, file holds {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Payload { extents, values })
}

fn to_f32(t: &Tensor) -> impl Iterator<Item = f32> + '_ {
    t.data().iter().map(|&x| x as f32)
}

/// Writes `ds` into `dir` (created if missing).
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| HireError::io(dir, e))?;
    let d = ds.dims;
    let n = ds.images.len();

    let mut feats = Vec::with_capacity(n * d.regions * d.region_dim);
    let mut boxes = Vec::with_capacity(n * d.regions * 4);
    let mut edges = Vec::new();
    for (row, img) in ds.images.iter().enumerate() {
        feats.extend(to_f32(&img.features));
        boxes.extend(img.boxes.iter().flat_map(BoundingBox::to_array));
        for &(i, j) in &img.sg_edges {
            edges.extend([row as f32, i as f32, j as f32]);
        }
    }
    write_payload(&dir.join(IMAGES_FILE), &[n, d.regions, d.region_dim], &feats)?;
    write_payload(&dir.join(BOXES_FILE), &[n, d.regions, 4], &boxes)?;
    write_payload(&dir.join(EDGES_FILE), &[edges.len() / 3, 3], &edges)?;

    let s = ds.sentences.len();
    let mut words = vec![0f32; s * d.max_words * d.word_dim];
    for (k, sent) in ds.sentences.iter().enumerate() {
        let off = k * d.max_words * d.word_dim;
        for (dst, v) in words[off..].iter_mut().zip(to_f32(&sent.features)) {
            *dst = v;
        }
    }
    write_payload(&dir.join(SENTENCES_FILE), &[s, d.max_words, d.word_dim], &words)?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&ds.manifest())?;
    fs::write(&manifest_path, json + "\n").map_err(|e| HireError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

fn check_dim(what: &str, manifest: usize, payload: usize) -> Result<()> {
    if manifest != payload {
        return Err(HireError::DimMismatch {
            what: what.into(),
            manifest,
            payload,
        });
    }
    Ok(())
}

fn check_extents(file: &str, p: &Payload, expected: &[(&str, usize)]) -> Result<()> {
    if p.extents.len() != expected.len() {
        return Err(HireError::Dataset(format!(
            "{file}: rank {} where {} was expected",
            p.extents.len(),
            expected.len()
        )));
    }
    for (&got, (what, want)) in p.extents.iter().zip(expected) {
        check_dim(&format!("{file} {what}"), *want, got)?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| HireError::io(path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(HireError::BadMagic {
            path: path.to_path_buf(),
            expected: format!("{MANIFEST_FORMAT} v{MANIFEST_VERSION}"),
        });
    }
    Ok(m)
}

/// Loads a dataset from its manifest path (or the directory holding it).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let m = read_manifest(&manifest_path)?;
    let d = m.dims;
    let n = m.images.len();
    let s = m.sentences.len();

    let images = read_payload(&dir.join(IMAGES_FILE))?;
    check_extents(
        IMAGES_FILE,
        &images,
        &[("images", n), ("K", d.regions), ("region_dim", d.region_dim)],
    )?;
    let boxes = read_payload(&dir.join(BOXES_FILE))?;
    check_extents(BOXES_FILE, &boxes, &[("images", n), ("K", d.regions), ("coords", 4)])?;
    let edges = read_payload(&dir.join(EDGES_FILE))?;
    if edges.extents.len() != 2 || edges.extents[1] != 3 {
        return Err(HireError::Dataset(format!(
            "{EDGES_FILE}: extents {:?}, expected [E, 3]",
            edges.extents
        )));
    }
    let words = read_payload(&dir.join(SENTENCES_FILE))?;
    check_extents(
        SENTENCES_FILE,
        &words,
        &[("sentences", s), ("max_words", d.max_words), ("word_dim", d.word_dim)],
    )?;

    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for e in edges.values.chunks_exact(3) {
        let row = e[0] as usize;
        if e.iter().any(|v| *v < 0.0 || v.fract() != 0.0) || row >= n {
            return Err(HireError::Dataset(format!("{EDGES_FILE}: malformed entry {e:?}")));
        }
        edge_lists[row].push((e[1] as usize, e[2] as usize));
    }

    let per_image = d.regions * d.region_dim;
    let mut image_records = Vec::with_capacity(n);
    for (row, (id, edges)) in m.images.iter().zip(edge_lists).enumerate() {
        let feats = images.values[row * per_image..(row + 1) * per_image]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let bx = &boxes.values[row * d.regions * 4..(row + 1) * d.regions * 4];
        let record = ImageRecord {
            id: id.clone(),
            features: Tensor::new(&[d.regions, d.region_dim], feats)?,
            boxes: bx
                .chunks_exact(4)
                .map(|c| BoundingBox {
                    x1: c[0],
                    y1: c[1],
                    x2: c[2],
                    y2: c[3],
                })
                .collect(),
            sg_edges: edges,
        };
        image_records.push(record);
    }

    let per_sentence = d.max_words * d.word_dim;
    let mut sentence_records = Vec::with_capacity(s);
    for (k, entry) in m.sentences.iter().enumerate() {
        if entry.len == 0 || entry.len > d.max_words {
            return Err(HireError::InvalidRecord {
                id: entry.id.clone(),
                reason: format!("length {} outside 1..={}", entry.len, d.max_words),
            });
        }
        let off = k * per_sentence;
        let feats = words.values[off..off + entry.len * d.word_dim]
            .iter()
            .map(|&v| v as f64)
            .collect();
        sentence_records.push(SentenceRecord {
            id: entry.id.clone(),
            image_id: entry.image_id.clone(),
            features: Tensor::new(&[entry.len, d.word_dim], feats)?,
            mask: vec![false; entry.len],
        });
    }

    Dataset::new(m.split, d, m.captions_per_image, image_records, sentence_records)
}
