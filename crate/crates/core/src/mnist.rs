//! MNIST IDX files and the class-balanced, disjoint experiment splits.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    Magic { expected: u32, found: u32 },
    #[error("payload length {found} bytes, header implies {expected}")]
    Length { expected: usize, found: usize },
    #[error("images are {rows}×{cols}, expected 28×28")]
    Dimensions { rows: usize, cols: usize },
    #[error("label byte {value} at index {index} is not a digit class")]
    Label { index: usize, value: u8 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("gzip stream: {0}")]
    Gzip(std::io::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Vec<Vec<u8>>, labels: Vec<u8>) -> Result<Self, IdxError> {
        if images.len() != labels.len() {
            return Err(IdxError::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Length {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Transparently inflates gzip input (detected by the `1f 8b` prefix).
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>, IdxError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(IdxError::Gzip)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<u8>>, IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::Magic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(IdxError::Dimensions { rows, cols });
    }
    let expected = 16 + count * PIXELS;
    if bytes.len() != expected {
        return Err(IdxError::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[16..].chunks_exact(PIXELS).map(<[u8]>::to_vec).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::Magic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(IdxError::Length {
            expected,
            found: bytes.len(),
        });
    }
    let labels = &bytes[8..];
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| usize::from(v) >= CLASSES) {
        return Err(IdxError::Label { index, value });
    }
    Ok(labels.to_vec())
}

pub fn write_idx_images(images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * PIXELS);
    for v in [IMAGE_MAGIC, images.len() as u32, SIDE as u32, SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_candidate(dir: &Path, stem: &str) -> Result<Vec<u8>, IdxError> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    let path = if plain.exists() { plain } else { gz };
    let bytes = fs::read(&path).map_err(|source| IdxError::Io { path, source })?;
    maybe_gunzip(bytes)
}

/// Loads `train-images-idx3-ubyte[.gz]` and `train-labels-idx1-ubyte[.gz]`.
pub fn load_training_set(dir: &Path) -> Result<Dataset, IdxError> {
    let images = parse_idx_images(&read_candidate(dir, TRAIN_IMAGES)?)?;
    let labels = parse_idx_labels(&read_candidate(dir, TRAIN_LABELS)?)?;
    Dataset::new(images, labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub labeled_per_class: usize,
    pub unlabeled_per_class: usize,
    pub test_sets: usize,
    pub test_per_class: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            labeled_per_class: 10,
            unlabeled_per_class: 500,
            test_sets: 10,
            test_per_class: 10,
        }
    }
}

impl SplitSpec {
    pub fn per_class_total(&self) -> usize {
        self.labeled_per_class + self.unlabeled_per_class + self.test_sets * self.test_per_class
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    /// Dataset indices, grouped by class.
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test_sets: Vec<Vec<usize>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("class {class} has {available} samples, split needs {needed}")]
pub struct InsufficientSamples {
    pub class: usize,
    pub available: usize,
    pub needed: usize,
}

/// Per class: shuffle, then take the labeled block, the unlabeled block, and
/// `test_per_class` for each test set, in that order.
pub fn build_splits(labels: &[u8], spec: &SplitSpec, seed: u64) -> Result<Splits, InsufficientSamples> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[usize::from(l)].push(i);
    }
    let needed = spec.per_class_total();
    let mut splits = Splits {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        test_sets: vec![Vec::new(); spec.test_sets],
    };
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < needed {
            return Err(InsufficientSamples {
                class,
                available: idx.len(),
                needed,
            });
        }
        idx.shuffle(&mut rng_for(seed, "splits", 0, class as u64));
        let (labeled, rest) = idx.split_at(spec.labeled_per_class);
        let (unlabeled, rest) = rest.split_at(spec.unlabeled_per_class);
        splits.labeled.extend_from_slice(labeled);
        splits.unlabeled.extend_from_slice(unlabeled);
        for (set, chunk) in splits.test_sets.iter_mut().zip(rest.chunks(spec.test_per_class)) {
            set.extend_from_slice(chunk);
        }
    }
    debug_assert!(splits.is_disjoint());
    Ok(splits)
}

impl Splits {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<usize> = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(self.test_sets.iter().flatten())
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n_per_class: usize) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..CLASSES {
            for i in 0..n_per_class {
                images.push(vec![(c * 7 + i) as u8; PIXELS]);
                labels.push(c as u8);
            }
        }
        Dataset::new(images, labels).unwrap()
    }

    #[test]
    fn images_round_trip() {
        let ds = synthetic(2);
        let bytes = write_idx_images(&ds.images);
        assert_eq!(parse_idx_images(&bytes).unwrap(), ds.images);
        let lbytes = write_idx_labels(&ds.labels);
        assert_eq!(parse_idx_labels(&lbytes).unwrap(), ds.labels);
    }

    #[test]
    fn wrong_magic() {
        let bytes = write_idx_labels(&[1, 2]);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(IdxError::Magic { found: 0x801, .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = write_idx_images(&synthetic(1).images);
        bytes.pop();
        assert!(matches!(parse_idx_images(&bytes), Err(IdxError::Length { .. })));
        let mut bytes = write_idx_labels(&[1, 2, 3]);
        bytes.pop();
        assert!(matches!(parse_idx_labels(&bytes), Err(IdxError::Length { .. })));
    }

    #[test]
    fn wrong_dimensions() {
        let mut bytes = write_idx_images(&[]);
        bytes[11] = 27;
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(IdxError::Dimensions { rows: 27, cols: 28 })
        ));
    }

    #[test]
    fn label_out_of_range() {
        let bytes = write_idx_labels(&[3, 10]);
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(IdxError::Label { index: 1, value: 10 })
        ));
    }

    #[test]
    fn count_mismatch() {
        assert!(matches!(
            Dataset::new(vec![vec![0; PIXELS]], vec![1, 2]),
            Err(IdxError::CountMismatch { images: 1, labels: 2 })
        ));
    }

    #[test]
    fn gzip_detected() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let raw = write_idx_labels(&[4, 5, 6]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&maybe_gunzip(gz).unwrap()).unwrap(), vec![4, 5, 6]);
        assert_eq!(maybe_gunzip(raw.clone()).unwrap(), raw);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = synthetic(640);
        for labeled in [10, 30] {
            let spec = SplitSpec {
                labeled_per_class: labeled,
                ..SplitSpec::default()
            };
            let s = build_splits(&ds.labels, &spec, 5).unwrap();
            assert_eq!(s.labeled.len(), labeled * 10);
            assert_eq!(s.unlabeled.len(), 5000);
            assert_eq!(s.test_sets.len(), 10);
            assert!(s.test_sets.iter().all(|t| t.len() == 100));
            assert!(s.is_disjoint());
            for set in &s.test_sets {
                let mut per_class = [0; CLASSES];
                for &i in set {
                    per_class[usize::from(ds.labels[i])] += 1;
                }
                assert_eq!(per_class, [10; CLASSES]);
            }
            assert_eq!(s, build_splits(&ds.labels, &spec, 5).unwrap());
            assert_ne!(s, build_splits(&ds.labels, &spec, 6).unwrap());
        }
    }

    #[test]
    fn split_insufficient() {
        let ds = synthetic(100);
        let err = build_splits(&ds.labels, &SplitSpec::default(), 1).unwrap_err();
        assert_eq!(err.needed, 610);
        assert_eq!(err.available, 100);
    }
}
