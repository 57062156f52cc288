//! Dataset loaders (MNIST IDX, CIFAR-10 binary), synthetic Gaussian blobs,
//! and seeded mini-batching.
//!
//! Pixel bytes are scaled by `1/255` into `[0,1]` with no further
//! normalisation. For image datasets the recorded input norm bound is the
//! range bound `sqrt(features)`, which every sample satisfies because each
//! pixel is at most 1 (for CIFAR-10 this gives `X² = 3072`).

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeded_stream;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 3073;
const SHUFFLE_STREAM_BASE: u64 = 0x2000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, ...sample_shape]`, values in `[0,1]` for image sets.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub name: String,
    pub num_classes: usize,
    /// Upper bound `X` on every sample's Euclidean norm.
    pub input_norm_bound: f64,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        name: impl Into<String>,
        num_classes: usize,
        input_norm_bound: f64,
    ) -> Result<Self> {
        let name = name.into();
        if images.batch_size() != labels.len() {
            return Err(Error::Data(format!(
                "{name}: {} images but {} labels",
                images.batch_size(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "{name}: label {bad} outside [0, {num_classes})"
            )));
        }
        let ds = Dataset {
            images,
            labels,
            name,
            num_classes,
            input_norm_bound,
        };
        let observed = ds.max_sample_norm();
        // Tolerate last-ulp disagreement between the two norm computations.
        if observed > input_norm_bound * (1.0 + 1e-12) {
            return Err(Error::Data(format!(
                "{}: sample norm {observed} exceeds recorded bound {input_norm_bound}",
                ds.name
            )));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn max_sample_norm(&self) -> f64 {
        self.images
            .per_sample_norms()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Same data with each sample reshaped to `shape`.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Dataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            images: self.images.clone().reshape(full)?,
            ..self.clone()
        })
    }

    /// First `k` samples of every class, original order preserved.
    pub fn subset_per_class(&self, k: usize) -> Dataset {
        let mut counts = vec![0usize; self.num_classes];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut counts[self.labels[i]];
                *c += 1;
                *c <= k
            })
            .collect();
        self.select(&keep)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_samples(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::Length {
        path: path.to_path_buf(),
        detail: format!("file ends inside {what}"),
    }
}

fn read_idx(path: &Path, magic: u32, ndims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = read_file(path)?;
    let mut cur = Cursor::new(bytes.as_slice());
    let found = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated(path, "magic number"))?;
    if found != magic {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let dims = (0..ndims)
        .map(|_| {
            cur.read_u32::<BigEndian>()
                .map(|d| d as usize)
                .map_err(|_| truncated(path, "dimension header"))
        })
        .collect::<Result<Vec<_>>>()?;
    let header = 4 * (1 + ndims);
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            detail: format!(
                "header {dims:?} promises {expected} bytes, file has {}",
                body.len()
            ),
        });
    }
    Ok((dims, body.to_vec()))
}

/// Loads an IDX image/label pair (MNIST layout).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (idims, pixels) = read_idx(images_path, IDX_IMAGES_MAGIC, 3)?;
    let (ldims, labels) = read_idx(labels_path, IDX_LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Data(format!(
            "{} holds {} images but {} holds {} labels",
            images_path.display(),
            idims[0],
            labels_path.display(),
            ldims[0]
        )));
    }
    let (rows, cols) = (idims[1], idims[2]);
    let images = Tensor::new(
        vec![idims[0], 1, rows, cols],
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    )?;
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(
        images,
        labels.into_iter().map(usize::from).collect(),
        name,
        10,
        ((rows * cols) as f64).sqrt(),
    )
}

fn to_byte(v: f64) -> Result<u8> {
    let b = (v * 255.0).round();
    if !(0.0..=255.0).contains(&b) {
        return Err(Error::Data(format!("pixel value {v} outside [0,1]")));
    }
    Ok(b as u8)
}

/// Writes a dataset of `[N, 1, rows, cols]` (or `[N, rows, cols]`) images as
/// an IDX pair.
pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let shape = dataset.sample_shape();
    let (rows, cols) = match shape {
        [1, r, c] | [r, c] => (*r, *c),
        _ => {
            return Err(Error::Shape(format!(
                "IDX images must be single-channel 2-D, got {shape:?}"
            )))
        }
    };
    let mut img = Vec::with_capacity(16 + dataset.images.len());
    img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
    for d in [dataset.len(), rows, cols] {
        img.write_u32::<BigEndian>(d as u32).unwrap();
    }
    for &v in dataset.images.data() {
        img.push(to_byte(v)?);
    }
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
    lab.write_u32::<BigEndian>(dataset.len() as u32).unwrap();
    for &l in &dataset.labels {
        lab.push(
            u8::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit a byte")))?,
        );
    }
    write_file(images_path.as_ref(), &img)?;
    write_file(labels_path.as_ref(), &lab)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Loads and concatenates CIFAR-10 binary batches (3073-byte records: one
/// label byte, then 1024 red, 1024 green and 1024 blue bytes).
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::Length {
                path: path.to_path_buf(),
                detail: format!(
                    "{} bytes is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
                    bytes.len()
                ),
            });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 3, 32, 32], pixels)?,
        labels,
        "cifar10",
        10,
        3072f64.sqrt(),
    )
}

/// Writes a `[N, 3, 32, 32]` dataset as one CIFAR-10 binary batch.
pub fn write_cifar10_bin(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.sample_shape() != [3, 32, 32] {
        return Err(Error::Shape(format!(
            "CIFAR-10 records are 3x32x32, got {:?}",
            dataset.sample_shape()
        )));
    }
    let mut bytes = Vec::with_capacity(dataset.len() * CIFAR_RECORD_LEN);
    for i in 0..dataset.len() {
        bytes.push(
            u8::try_from(dataset.labels[i])
                .map_err(|_| Error::Data("label does not fit a byte".into()))?,
        );
        for &v in dataset.images.sample(i) {
            bytes.push(to_byte(v)?);
        }
    }
    write_file(path.as_ref(), &bytes)
}

/// Standard file locations under a data root.
pub fn mnist_paths(root: &Path, train: bool) -> (PathBuf, PathBuf) {
    let dir = root.join("mnist");
    if train {
        (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )
    } else {
        (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )
    }
}

pub fn cifar10_paths(root: &Path, train: bool) -> Vec<PathBuf> {
    let dir = root.join("cifar-10-batches-bin");
    if train {
        (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect()
    } else {
        vec![dir.join("test_batch.bin")]
    }
}

/// Deterministic permutation of `0..n` for a given (seed, epoch).
pub fn epoch_permutation(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_stream(shuffle_seed, SHUFFLE_STREAM_BASE + epoch);
    idx.shuffle(&mut rng);
    idx
}

/// Mini-batches over one epoch; the last partial batch is kept.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Batches<'a> {
    pub fn indices(&self) -> Vec<Vec<usize>> {
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some((
            self.dataset.images.select_samples(idx),
            idx.iter().map(|&i| self.dataset.labels[i]).collect(),
        ))
    }
}

pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    Ok(Batches {
        dataset,
        order: epoch_permutation(dataset.len(), shuffle_seed, epoch),
        batch_size,
        pos: 0,
    })
}

pub const DEFAULT_BLOB_SPREAD: f64 = 0.5;
const BLOB_RADIUS: f64 = 3.0;

/// Class centres: `±3·e_j` for the first `2·dim` classes, seeded Gaussian
/// draws with the same scale beyond that.
fn blob_means(num_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_stream(seed, 0);
    (0..num_classes)
        .map(|c| {
            let mut mean = vec![0.0; dim];
            if c < 2 * dim {
                mean[c % dim] = if c < dim { BLOB_RADIUS } else { -BLOB_RADIUS };
            } else {
                for m in mean.iter_mut() {
                    *m = BLOB_RADIUS * rng.sample::<f64, _>(StandardNormal);
                }
            }
            mean
        })
        .collect()
}

/// Isotropic Gaussian clusters. Samples are interleaved by class; `stream`
/// selects independent draws around the same centres (train vs test).
pub fn synthetic_blobs_with(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
    stream: u64,
) -> Result<Dataset> {
    if dim == 0 || num_classes < 2 {
        return Err(Error::Config("blobs need dim >= 1 and >= 2 classes".into()));
    }
    let means = blob_means(num_classes, dim, seed);
    let mut rng = seeded_stream(seed, 1 + stream);
    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        for &m in &means[c] {
            data.push(m + spread * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(c);
    }
    let images = Tensor::new(vec![n, dim], data)?;
    let bound = images.per_sample_norms().into_iter().fold(0.0, f64::max);
    Dataset::new(images, labels, "blobs", num_classes, bound)
}

pub fn synthetic_blobs(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    synthetic_blobs_with(num_classes, dim, n_per_class, DEFAULT_BLOB_SPREAD, seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.write_u32::<BigEndian>(magic).unwrap();
        for &d in dims {
            v.write_u32::<BigEndian>(d).unwrap();
        }
        v.extend_from_slice(body);
        v
    }

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
        let (i, l) = (dir.join("img"), dir.join("lab"));
        fs::write(&i, images).unwrap();
        fs::write(&l, labels).unwrap();
        (i, l)
    }

    #[test]
    fn idx_pixels_scale_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let body = [0u8, 255, 128, 0, 10, 20, 30, 40];
        let (i, l) = write_pair(
            dir.path(),
            &idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &body),
            &idx_bytes(IDX_LABELS_MAGIC, &[2], &[7, 1]),
        );
        let ds = load_idx(&i, &l).unwrap();
        assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(&ds.images.data()[..4], &[0.0, 1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(ds.labels, vec![7, 1]);
        assert_eq!(ds.input_norm_bound, 2.0);
    }

    #[test]
    fn idx_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let body: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 37 % 256) as u8).collect();
        let img = idx_bytes(IDX_IMAGES_MAGIC, &[3, 4, 5], &body);
        let lab = idx_bytes(IDX_LABELS_MAGIC, &[3], &[0, 9, 4]);
        let (i, l) = write_pair(dir.path(), &img, &lab);
        let ds = load_idx(&i, &l).unwrap();
        let (i2, l2) = (dir.path().join("img2"), dir.path().join("lab2"));
        write_idx(&ds, &i2, &l2).unwrap();
        assert_eq!(fs::read(i2).unwrap(), img);
        assert_eq!(fs::read(l2).unwrap(), lab);
    }

    #[test]
    fn idx_count_mismatch_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = write_pair(
            dir.path(),
            &idx_bytes(IDX_IMAGES_MAGIC, &[2, 1, 1], &[1, 2]),
            &idx_bytes(IDX_LABELS_MAGIC, &[3], &[0, 1, 2]),
        );
        assert!(matches!(load_idx(&i, &l), Err(Error::Data(_))));
    }

    #[test]
    fn idx_bad_magic_reports_observed_value() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = write_pair(
            dir.path(),
            &idx_bytes(0x0000_0801, &[1, 1, 1], &[1]),
            &idx_bytes(IDX_LABELS_MAGIC, &[1], &[0]),
        );
        match load_idx(&i, &l) {
            Err(Error::Magic {
                found, expected, ..
            }) => {
                assert_eq!(found, 0x801);
                assert_eq!(expected, 0x803);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn idx_truncated_is_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = write_pair(
            dir.path(),
            &idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &[1, 2, 3]),
            &idx_bytes(IDX_LABELS_MAGIC, &[2], &[0, 1]),
        );
        assert!(matches!(load_idx(&i, &l), Err(Error::Length { .. })));
        let (i, l) = write_pair(dir.path(), &[0, 0], &idx_bytes(IDX_LABELS_MAGIC, &[0], &[]));
        assert!(matches!(load_idx(&i, &l), Err(Error::Length { .. })));
    }

    fn cifar_record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, 3072));
        r
    }

    #[test]
    fn cifar_full_white_record_has_norm_sq_3072() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        fs::write(&p, cifar_record(3, 255)).unwrap();
        let ds = load_cifar10_bin(&[&p]).unwrap();
        assert_eq!(ds.labels, vec![3]);
        assert_eq!(ds.images.sum_sq(), 3072.0);
        assert_eq!(ds.input_norm_bound.powi(2).round(), 3072.0);
    }

    #[test]
    fn cifar_zero_record_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = cifar_record(5, 0);
        bytes.extend(cifar_record(2, 17));
        fs::write(&p, &bytes).unwrap();
        let ds = load_cifar10_bin(&[&p]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![5, 2]);
        assert_eq!(ds.images.per_sample_norms()[0], 0.0);
        let out = dir.path().join("c.bin");
        write_cifar10_bin(&ds, &out).unwrap();
        assert_eq!(fs::read(out).unwrap(), bytes);
    }

    #[test]
    fn cifar_bad_length_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        fs::write(&p, vec![0u8; 3074]).unwrap();
        assert!(matches!(load_cifar10_bin(&[&p]), Err(Error::Length { .. })));
    }

    #[test]
    fn batches_cover_a_permutation() {
        let ds = synthetic_blobs(3, 2, 7, 1).unwrap();
        let b = batches(&ds, 4, 99, 2).unwrap();
        let mut seen: Vec<usize> = b.indices().concat();
        assert_eq!(b.indices().len(), 6);
        assert_eq!(b.indices().last().unwrap().len(), 1);
        seen.sort_unstable();
        assert_eq!(seen, (0..21).collect::<Vec<_>>());
        let again: Vec<_> = batches(&ds, 4, 99, 2).unwrap().collect();
        let first: Vec<_> = batches(&ds, 4, 99, 2).unwrap().collect();
        assert_eq!(again, first);
        assert_ne!(epoch_permutation(21, 99, 2), epoch_permutation(21, 99, 3));
    }

    #[test]
    fn full_batch_is_single_permuted_batch() {
        let ds = synthetic_blobs(2, 2, 5, 1).unwrap();
        let all: Vec<_> = batches(&ds, 10, 7, 0).unwrap().collect();
        assert_eq!(all.len(), 1);
        let perm = epoch_permutation(10, 7, 0);
        assert_eq!(
            all[0].1,
            perm.iter().map(|&i| ds.labels[i]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_spread_blobs_sit_on_means() {
        let ds = synthetic_blobs_with(2, 3, 5, 0.0, 4, 0).unwrap();
        let means = blob_means(2, 3, 4);
        for i in 0..ds.len() {
            // nearest-mean classification is exact
            let x = ds.images.sample(i);
            let d: Vec<f64> = means
                .iter()
                .map(|m| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            let pred = if d[0] <= d[1] { 0 } else { 1 };
            assert_eq!(pred, ds.labels[i]);
            assert_eq!(x, means[ds.labels[i]].as_slice());
        }
        assert_eq!(
            synthetic_blobs(4, 2, 3, 8).unwrap(),
            synthetic_blobs(4, 2, 3, 8).unwrap()
        );
    }

    #[test]
    fn subset_takes_first_k_per_class() {
        let ds = synthetic_blobs(3, 2, 10, 1).unwrap();
        let s = ds.subset_per_class(2);
        assert_eq!(s.labels, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(s.images.sample(3), ds.images.sample(3));
    }
}
