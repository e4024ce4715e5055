//! Conversion of third-party feature dumps into the native layout.
//!
//! A dump directory holds NumPy arrays in C order:
//!
//! - `images.npy`: `[N, K, region_dim]` float
//! - `boxes.npy`: `[N, K, 4]` float, `(x1, y1, x2, y2)`
//! - `captions.npy`: `[S, max_words, word_dim]` float, zero-padded
//! - `caption_lengths.npy`: `[S]` integer
//! - `scene_graphs.json` (optional): one list per image; each entry is
//!   either a resolved `[i, j]` region pair or a raw detector relation
//!   `{"subject": [x1, y1, x2, y2], "object": [...]}` that is mapped onto
//!   the regions by maximum IoU
//! - `ids.json` (optional): `{"images": [...], "sentences": [...]}`
//!
//! Captions are grouped by image in order: sentence `s` belongs to image
//! `s / (S / N)`.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use npyz::{DType as NpyDType, NpyFile, TypeChar, WriterBuilder};
use serde::Deserialize;

use super::bbox::{iou, BoundingBox};
use super::format::write_dataset;
use super::records::{Dataset, Dims, ImageRecord, SentenceRecord};
use crate::error::{HireError, Result};
use crate::numcore::Tensor;

#[derive(Debug)]
struct Array {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn read_npy(path: &Path) -> Result<Array> {
    let file = fs::File::open(path).map_err(|e| HireError::io(path, e))?;
    let npy = NpyFile::new(BufReader::new(file)).map_err(|e| HireError::io(path, e))?;
    if npy.order() != npyz::Order::C {
        return Err(HireError::Dataset(format!(
            "{}: Fortran-ordered arrays are not supported",
            path.display()
        )));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let NpyDType::Plain(ts) = npy.dtype() else {
        return Err(HireError::Dataset(format!(
            "{}: structured dtypes are not supported",
            path.display()
        )));
    };
    let io = |e| HireError::io(path, e);
    let values: Vec<f64> = match (ts.type_char(), ts.size_field()) {
        (TypeChar::Float, 4) => npy.into_vec::<f32>().map_err(io)?.into_iter().map(f64::from).collect(),
        (TypeChar::Float, 8) => npy.into_vec::<f64>().map_err(io)?,
        (TypeChar::Int, 4) => npy.into_vec::<i32>().map_err(io)?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 8) => npy.into_vec::<i64>().map_err(io)?.into_iter().map(|v| v as f64).collect(),
        (TypeChar::Uint, 4) => npy.into_vec::<u32>().map_err(io)?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 8) => npy.into_vec::<u64>().map_err(io)?.into_iter().map(|v| v as f64).collect(),
        _ => {
            return Err(HireError::Dataset(format!(
                "{}: unsupported dtype {ts}",
                path.display()
            )))
        }
    };
    Ok(Array { shape, values })
}

fn expect_rank(name: &str, a: &Array, rank: usize) -> Result<()> {
    if a.shape.len() != rank {
        return Err(HireError::Dataset(format!(
            "{name}: rank {} where {rank} was expected (shape {:?})",
            a.shape.len(),
            a.shape
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GraphEntry {
    Resolved([usize; 2]),
    Raw { subject: [f32; 4], object: [f32; 4] },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Ids {
    images: Vec<String>,
    sentences: Vec<String>,
}

/// Region index with the highest IoU against `b`; ties go to the lower index.
pub fn best_region(regions: &[BoundingBox], b: &BoundingBox) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, r) in regions.iter().enumerate() {
        let v = iou(r, b);
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Maps raw detector relations onto region pairs; relations whose subject
/// and object land on the same region are dropped, duplicates collapse.
pub fn resolve_relations(
    regions: &[BoundingBox],
    relations: &[(BoundingBox, BoundingBox)],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, o) in relations {
        if let (Some(i), Some(j)) = (best_region(regions, s), best_region(regions, o)) {
            if i != j && !out.contains(&(i, j)) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Reads a dump directory, validates it, and returns the dataset.
pub fn import_dump(src: &Path, split: &str) -> Result<Dataset> {
    let images = read_npy(&src.join("images.npy"))?;
    let boxes = read_npy(&src.join("boxes.npy"))?;
    let captions = read_npy(&src.join("captions.npy"))?;
    let lengths = read_npy(&src.join("caption_lengths.npy"))?;
    expect_rank("images.npy", &images, 3)?;
    expect_rank("boxes.npy", &boxes, 3)?;
    expect_rank("captions.npy", &captions, 3)?;
    expect_rank("caption_lengths.npy", &lengths, 1)?;

    let (n, k, region_dim) = (images.shape[0], images.shape[1], images.shape[2]);
    let (s, max_words, word_dim) = (captions.shape[0], captions.shape[1], captions.shape[2]);
    if boxes.shape != [n, k, 4] {
        return Err(HireError::Dataset(format!(
            "boxes.npy shape {:?}, expected [{n}, {k}, 4]",
            boxes.shape
        )));
    }
    if lengths.shape != [s] {
        return Err(HireError::DimMismatch {
            what: "caption_lengths.npy entries".into(),
            manifest: s,
            payload: lengths.shape[0],
        });
    }
    if n == 0 || s % n != 0 {
        return Err(HireError::Dataset(format!(
            "{s} captions cannot be split evenly over {n} images"
        )));
    }
    let cpi = s / n;
    let dims = Dims {
        regions: k,
        region_dim,
        max_words,
        word_dim,
    };

    let ids = match fs::read_to_string(src.join("ids.json")) {
        Ok(text) => {
            let ids: Ids = serde_json::from_str(&text)?;
            if ids.images.len() != n || ids.sentences.len() != s {
                return Err(HireError::Dataset(format!(
                    "ids.json lists {} images / {} sentences, arrays hold {n} / {s}",
                    ids.images.len(),
                    ids.sentences.len()
                )));
            }
            Some(ids)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(HireError::io(src.join("ids.json"), e)),
    };

    let graphs: Option<Vec<Vec<GraphEntry>>> = match fs::read_to_string(src.join("scene_graphs.json")) {
        Ok(text) => {
            let g: Vec<Vec<GraphEntry>> = serde_json::from_str(&text)?;
            if g.len() != n {
                return Err(HireError::DimMismatch {
                    what: "scene_graphs.json images".into(),
                    manifest: n,
                    payload: g.len(),
                });
            }
            Some(g)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(HireError::io(src.join("scene_graphs.json"), e)),
    };

    let mut image_records = Vec::with_capacity(n);
    for row in 0..n {
        let id = ids
            .as_ref()
            .map_or_else(|| format!("img{row:06}"), |i| i.images[row].clone());
        let feats = images.values[row * k * region_dim..(row + 1) * k * region_dim]
            .iter()
            .map(|&v| v as f32 as f64)
            .collect();
        let bx: Vec<BoundingBox> = boxes.values[row * k * 4..(row + 1) * k * 4]
            .chunks_exact(4)
            .map(|c| BoundingBox {
                x1: c[0] as f32,
                y1: c[1] as f32,
                x2: c[2] as f32,
                y2: c[3] as f32,
            })
            .collect();
        let mut edges = Vec::new();
        let mut raw = Vec::new();
        if let Some(g) = &graphs {
            for e in &g[row] {
                match e {
                    GraphEntry::Resolved([i, j]) => edges.push((*i, *j)),
                    GraphEntry::Raw { subject, object } => {
                        let sb = BoundingBox::new(subject[0], subject[1], subject[2], subject[3])?;
                        let ob = BoundingBox::new(object[0], object[1], object[2], object[3])?;
                        raw.push((sb, ob));
                    }
                }
            }
        }
        for e in resolve_relations(&bx, &raw) {
            if !edges.contains(&e) {
                edges.push(e);
            }
        }
        image_records.push(ImageRecord {
            id,
            features: Tensor::new(&[k, region_dim], feats)?,
            boxes: bx,
            sg_edges: edges,
        });
    }

    let mut sentence_records = Vec::with_capacity(s);
    for row in 0..s {
        let len = lengths.values[row];
        if len < 1.0 || len.fract() != 0.0 || len as usize > max_words {
            return Err(HireError::InvalidRecord {
                id: format!("caption {row}"),
                reason: format!("length {len} outside 1..={max_words}"),
            });
        }
        let m = len as usize;
        let off = row * max_words * word_dim;
        let feats = captions.values[off..off + m * word_dim]
            .iter()
            .map(|&v| v as f32 as f64)
            .collect();
        let image = &image_records[row / cpi];
        let id = ids
            .as_ref()
            .map_or_else(|| format!("{}_cap{}", image.id, row % cpi), |i| i.sentences[row].clone());
        sentence_records.push(SentenceRecord {
            id,
            image_id: image.id.clone(),
            features: Tensor::new(&[m, word_dim], feats)?,
            mask: vec![false; m],
        });
    }

    Dataset::new(split, dims, cpi, image_records, sentence_records)
}

/// [`import_dump`] followed by a write into `out`.
pub fn import_to(src: &Path, out: &Path, split: &str) -> Result<Dataset> {
    let ds = import_dump(src, split)?;
    write_dataset(&ds, out)?;
    Ok(ds)
}

fn write_npy<T: npyz::Serialize + npyz::AutoSerialize + Copy>(path: &Path, shape: &[u64], values: &[T]) -> Result<()> {
    let io = |e| HireError::io(path, e);
    let file = fs::File::create(path).map_err(io)?;
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(shape)
        .writer(BufWriter::new(file))
        .begin_nd()
        .map_err(io)?;
    w.extend(values.iter().copied()).map_err(io)?;
    w.finish().map_err(io)
}

/// Writes `ds` as a dump directory readable by [`import_dump`]: f32
/// arrays, int64 lengths, resolved scene-graph pairs and ids.
pub fn export_dump(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HireError::io(dir, e))?;
    let d = ds.dims;
    let caps = ds.captions_of();
    let cpi = ds.captions_per_image;
    if let Some(i) = caps.iter().position(|c| c.len() != cpi) {
        return Err(HireError::Dataset(format!(
            "image {} has {} captions; dumps need exactly {cpi} per image",
            ds.images[i].id,
            caps[i].len()
        )));
    }
    let order: Vec<usize> = caps.iter().flatten().copied().collect();
    let n = ds.images.len() as u64;
    let s = order.len() as u64;

    let feats: Vec<f32> = ds.images.iter().flat_map(|r| r.features.data().iter().map(|&v| v as f32)).collect();
    write_npy(&dir.join("images.npy"), &[n, d.regions as u64, d.region_dim as u64], &feats)?;
    let boxes: Vec<f32> = ds.images.iter().flat_map(|r| r.boxes.iter().flat_map(BoundingBox::to_array)).collect();
    write_npy(&dir.join("boxes.npy"), &[n, d.regions as u64, 4], &boxes)?;

    let mut words = vec![0f32; order.len() * d.max_words * d.word_dim];
    let mut lengths = Vec::with_capacity(order.len());
    for (row, &si) in order.iter().enumerate() {
        let rec = &ds.sentences[si];
        let off = row * d.max_words * d.word_dim;
        for (o, &v) in words[off..].iter_mut().zip(rec.features.data()) {
            *o = v as f32;
        }
        lengths.push(rec.len() as i64);
    }
    write_npy(&dir.join("captions.npy"), &[s, d.max_words as u64, d.word_dim as u64], &words)?;
    write_npy(&dir.join("caption_lengths.npy"), &[s], &lengths)?;

    let graphs: Vec<Vec<[usize; 2]>> = ds
        .images
        .iter()
        .map(|r| r.sg_edges.iter().map(|&(i, j)| [i, j]).collect())
        .collect();
    let ids = serde_json::json!({
        "images": ds.images.iter().map(|r| &r.id).collect::<Vec<_>>(),
        "sentences": order.iter().map(|&i| &ds.sentences[i].id).collect::<Vec<_>>(),
    });
    for (name, value) in [("scene_graphs.json", serde_json::to_vec(&graphs)?), ("ids.json", serde_json::to_vec(&ids)?)] {
        fs::write(dir.join(name), value).map_err(|e| HireError::io(dir.join(name), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f32, y1: f32, x2: f32, y2: f32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn relations_resolve_by_max_iou() {
        let regions = [b(0.0, 0.0, 10.0, 10.0), b(20.0, 20.0, 30.0, 30.0), b(0.0, 0.0, 9.0, 9.0)];
        let rels = [
            (b(0.0, 0.0, 10.0, 10.0), b(21.0, 21.0, 30.0, 30.0)),
            // both ends on region 1
            (b(20.0, 20.0, 30.0, 30.0), b(20.0, 20.0, 29.0, 29.0)),
            // duplicate of the first
            (b(0.0, 0.0, 10.0, 10.0), b(20.0, 20.0, 30.0, 30.0)),
        ];
        assert_eq!(resolve_relations(&regions, &rels), vec![(0, 1)]);
    }

    #[test]
    fn export_then_import_is_exact() {
        let ds = crate::dataio::synth_generate(&crate::dataio::SynthConfig::new(2, 5, 3, Dims::TOY))
            .unwrap()
            .train;
        let dir = tempfile::tempdir().unwrap();
        export_dump(&ds, dir.path()).unwrap();
        let back = import_dump(dir.path(), &ds.split).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn raw_relations_and_missing_optionals() {
        let ds = crate::dataio::synth_generate(&crate::dataio::SynthConfig::new(4, 2, 2, Dims::TOY))
            .unwrap()
            .train;
        let dir = tempfile::tempdir().unwrap();
        export_dump(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("ids.json")).unwrap();
        let r0 = ds.images[0].boxes.clone();
        let raw = serde_json::json!([
            [{"subject": r0[0].to_array(), "object": r0[2].to_array()}],
            []
        ]);
        fs::write(dir.path().join("scene_graphs.json"), raw.to_string()).unwrap();
        let back = import_dump(dir.path(), "train").unwrap();
        assert_eq!(back.images[0].id, "img000000");
        assert_eq!(back.sentences[3].id, "img000001_cap1");
        assert_eq!(back.images[0].sg_edges, vec![(0, 2)]);
        assert!(back.images[1].sg_edges.is_empty());
    }
}
