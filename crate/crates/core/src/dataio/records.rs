use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::bbox::BoundingBox;
use crate::error::{HireError, Result};
use crate::numcore::Tensor;

pub const MANIFEST_FORMAT: &str = "hire-dataset";
pub const MANIFEST_VERSION: u32 = 1;

/// Feature geometry shared by every record of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// Regions per image (K).
    pub regions: usize,
    pub region_dim: usize,
    /// Longest sentence the payload can hold.
    pub max_words: usize,
    pub word_dim: usize,
}

impl Dims {
    /// Detector/encoder geometry of full-scale feature dumps.
    pub const FULL: Dims = Dims {
        regions: 36,
        region_dim: 2048,
        max_words: 60,
        word_dim: 768,
    };

    /// Small geometry used by the synthetic verification suite.
    pub const TOY: Dims = Dims {
        regions: 3,
        region_dim: 12,
        max_words: 4,
        word_dim: 10,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// `K × region_dim`
    pub features: Tensor,
    pub boxes: Vec<BoundingBox>,
    /// Scene-graph pairs already resolved to region indices.
    pub sg_edges: Vec<(usize, usize)>,
}

impl ImageRecord {
    pub fn regions(&self) -> usize {
        self.boxes.len()
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        let bad = |reason: String| HireError::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.features.shape() != [dims.regions, dims.region_dim] {
            return Err(bad(format!(
                "feature shape {:?}, expected [{}, {}]",
                self.features.shape(),
                dims.regions,
                dims.region_dim
            )));
        }
        if self.boxes.len() != dims.regions {
            return Err(bad(format!(
                "{} boxes for {} regions",
                self.boxes.len(),
                dims.regions
            )));
        }
        for b in &self.boxes {
            b.validate().map_err(|e| bad(e.to_string()))?;
        }
        for &(i, j) in &self.sg_edges {
            if i >= dims.regions || j >= dims.regions || i == j {
                return Err(HireError::EdgeOutOfRange {
                    image: self.id.clone(),
                    i,
                    j,
                    k: dims.regions,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub id: String,
    pub image_id: String,
    /// `m × word_dim`
    pub features: Tensor,
    /// `true` = the word is replaced by a zero vector for this epoch.
    pub mask: Vec<bool>,
}

impl SentenceRecord {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        let m = self.mask.len();
        let bad = |reason: String| HireError::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if m == 0 || m > dims.max_words {
            return Err(bad(format!("length {m} outside 1..={}", dims.max_words)));
        }
        if self.features.shape() != [m, dims.word_dim] {
            return Err(bad(format!(
                "feature shape {:?}, expected [{m}, {}]",
                self.features.shape(),
                dims.word_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceEntry {
    pub id: String,
    pub image_id: String,
    pub len: usize,
}

/// JSON side of a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub split: String,
    pub dims: Dims,
    pub captions_per_image: usize,
    pub images: Vec<String>,
    pub sentences: Vec<SentenceEntry>,
}

/// Fully validated in-memory dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub dims: Dims,
    pub captions_per_image: usize,
    pub images: Vec<ImageRecord>,
    pub sentences: Vec<SentenceRecord>,
    sentence_image: Vec<usize>,
}

impl Dataset {
    pub fn new(
        split: impl Into<String>,
        dims: Dims,
        captions_per_image: usize,
        images: Vec<ImageRecord>,
        sentences: Vec<SentenceRecord>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(images.len());
        for (n, img) in images.iter().enumerate() {
            img.validate(&dims)?;
            if index.insert(img.id.clone(), n).is_some() {
                return Err(HireError::InvalidRecord {
                    id: img.id.clone(),
                    reason: "duplicate image id".into(),
                });
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(sentences.len());
        let mut sentence_image = Vec::with_capacity(sentences.len());
        for s in &sentences {
            s.validate(&dims)?;
            if !seen.insert(s.id.as_str()) {
                return Err(HireError::InvalidRecord {
                    id: s.id.clone(),
                    reason: "duplicate sentence id".into(),
                });
            }
            let &n = index.get(&s.image_id).ok_or_else(|| HireError::DanglingLink {
                sentence: s.id.clone(),
                image: s.image_id.clone(),
            })?;
            sentence_image.push(n);
        }
        Ok(Dataset {
            split: split.into(),
            dims,
            captions_per_image,
            images,
            sentences,
            sentence_image,
        })
    }

    /// Image row of sentence `s`.
    pub fn image_of(&self, s: usize) -> usize {
        self.sentence_image[s]
    }

    /// Ground-truth sentence rows per image row.
    pub fn captions_of(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.images.len()];
        for (s, &i) in self.sentence_image.iter().enumerate() {
            out[i].push(s);
        }
        out
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            split: self.split.clone(),
            dims: self.dims,
            captions_per_image: self.captions_per_image,
            images: self.images.iter().map(|i| i.id.clone()).collect(),
            sentences: self
                .sentences
                .iter()
                .map(|s| SentenceEntry {
                    id: s.id.clone(),
                    image_id: s.image_id.clone(),
                    len: s.len(),
                })
                .collect(),
        }
    }

    /// Keeps the images in `rows` (and their sentences), in that order.
    pub fn subset(&self, rows: &[usize], split: &str) -> Result<Dataset> {
        let images: Vec<ImageRecord> = rows.iter().map(|&r| self.images[r].clone()).collect();
        let keep: std::collections::HashSet<&str> = images.iter().map(|i| i.id.as_str()).collect();
        let mut sentences = Vec::new();
        for &r in rows {
            for (s, &img) in self.sentence_image.iter().enumerate() {
                if img == r && keep.contains(self.sentences[s].image_id.as_str()) {
                    sentences.push(self.sentences[s].clone());
                }
            }
        }
        Dataset::new(split, self.dims, self.captions_per_image, images, sentences)
    }
}
