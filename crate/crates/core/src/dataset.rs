//! Labeled datasets: IDX and CSV ingestion plus a synthetic generator.
//!
//! `Dataset` counts every ground-truth label access. Training paths that must
//! not consume labels (dark-label distillation) are validated against this
//! counter staying at zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::rng::Rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images with integer class labels in `[0, K)`.
#[derive(Debug)]
pub struct Dataset {
    images: ImageBatch,
    labels: Vec<u32>,
    class_count: usize,
    split: Split,
    label_reads: AtomicU64,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Dataset {
            images: self.images.clone(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            split: self.split,
            label_reads: AtomicU64::new(0),
        }
    }
}

impl Dataset {
    pub fn new(
        images: ImageBatch,
        labels: Vec<u32>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.len() != images.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset labels",
                expected: format!("{}", images.len()),
                got: format!("{}", labels.len()),
            });
        }
        for &y in &labels {
            if y as usize >= class_count {
                return Err(Error::ClassOutOfRange {
                    index: y as usize,
                    class_count,
                });
            }
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            split,
            label_reads: AtomicU64::new(0),
        })
    }

    pub fn images(&self) -> &ImageBatch {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Ground-truth labels. Every call bumps the access counter.
    pub fn labels(&self) -> &[u32] {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        &self.labels
    }

    /// How many times labels have been read since construction (or clone).
    pub fn label_accesses(&self) -> u64 {
        self.label_reads.load(Ordering::Relaxed)
    }

    /// Subset by sample indices, keeping the split tag.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.select(indices)?;
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(images, labels, self.class_count, self.split)
    }
}

/// Where a dataset comes from. Mirrors the CLI configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Idx {
        images: String,
        labels: String,
        class_count: usize,
    },
    Csv {
        path: String,
        class_count: usize,
        #[serde(default)]
        shape: Option<(usize, usize, usize)>,
    },
}

/// Load a dataset from a declared source.
pub fn load_dataset(spec: &DataSpec, split: Split) -> Result<Dataset> {
    match spec {
        DataSpec::Idx {
            images,
            labels,
            class_count,
        } => load_idx_dataset(Path::new(images), Path::new(labels), *class_count, split),
        DataSpec::Csv {
            path,
            class_count,
            shape,
        } => load_csv_dataset(Path::new(path), *class_count, *shape, split),
    }
}

/// Read an IDX image file (magic `0x00000803`) and its label companion
/// (magic `0x00000801`). Pixels are unsigned bytes scaled to `[0,1]`.
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    class_count: usize,
    split: Split,
) -> Result<Dataset> {
    let data = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    let images = ImageBatch::with_default_ids(data)?;
    Dataset::new(images, labels, class_count, split)
}

pub fn read_idx_images(path: &Path) -> Result<Array4<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::DatasetFormat(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let h = r.read_u32::<BigEndian>()? as usize;
    let w = r.read_u32::<BigEndian>()? as usize;
    let mut bytes = vec![0u8; n * h * w];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::DatasetFormat("payload shorter than header shape".into()))?;
    let data: Vec<f32> = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok(Array4::from_shape_vec((n, 1, h, w), data).expect("shape from header"))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u32>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::DatasetFormat(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::DatasetFormat("payload shorter than header shape".into()))?;
    Ok(bytes.into_iter().map(u32::from).collect())
}

/// Export a single-channel image batch as an IDX file, rounding pixels back
/// to the 0-255 byte scale.
pub fn write_idx_images(batch: &ImageBatch, path: &Path) -> Result<()> {
    let (c, h, w) = batch.sample_shape();
    if c != 1 {
        return Err(Error::Unsupported(format!(
            "IDX export requires single-channel images, got c={c}"
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    out.write_u32::<BigEndian>(batch.len() as u32)?;
    out.write_u32::<BigEndian>(h as u32)?;
    out.write_u32::<BigEndian>(w as u32)?;
    for &v in batch.data().iter() {
        out.write_all(&[(v * 255.0).round() as u8])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_idx_labels(labels: &[u32], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    out.write_u32::<BigEndian>(labels.len() as u32)?;
    for &y in labels {
        if y > 255 {
            return Err(Error::Unsupported("IDX labels are single bytes".into()));
        }
        out.write_all(&[y as u8])?;
    }
    out.flush()?;
    Ok(())
}

/// Read a CSV dataset: first column integer label, remaining columns pixel
/// bytes 0-255, row-major. When `shape` is omitted the pixel count must be a
/// perfect square and is interpreted as a single-channel square image.
pub fn load_csv_dataset(
    path: &Path,
    class_count: usize,
    shape: Option<(usize, usize, usize)>,
    split: Split,
) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut pixels: Vec<f32> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: u32 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| {
                Error::DatasetFormat(format!("line {}: missing integer label", lineno + 1))
            })?;
        labels.push(label);
        let mut count = 0usize;
        for f in fields {
            let byte: u32 = f.trim().parse().map_err(|_| {
                Error::DatasetFormat(format!("line {}: non-integer pixel {f:?}", lineno + 1))
            })?;
            if byte > 255 {
                return Err(Error::DatasetFormat(format!(
                    "line {}: pixel {byte} above 255",
                    lineno + 1
                )));
            }
            pixels.push(byte as f32 / 255.0);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(wd) if wd != count => {
                return Err(Error::DatasetFormat(format!(
                    "line {}: {count} pixels, expected {wd}",
                    lineno + 1
                )))
            }
            _ => {}
        }
    }
    let per_image = width.ok_or(Error::EmptyInput("csv dataset"))?;
    let (c, h, w) = match shape {
        Some(s) => s,
        None => {
            let side = (per_image as f64).sqrt() as usize;
            if side * side != per_image {
                return Err(Error::DatasetFormat(format!(
                    "cannot infer shape from {per_image} pixels; pass an explicit shape"
                )));
            }
            (1, side, side)
        }
    };
    if c * h * w != per_image {
        return Err(Error::ShapeMismatch {
            context: "csv shape",
            expected: format!("{per_image} pixels"),
            got: format!("{c}x{h}x{w}"),
        });
    }
    let n = labels.len();
    let data = Array4::from_shape_vec((n, c, h, w), pixels).expect("counted shape");
    let images = ImageBatch::with_default_ids(data)?;
    Dataset::new(images, labels, class_count, split)
}

/// Parameters of the synthetic classification dataset.
///
/// Each class is a blend of two entries from a shared motif dictionary, so
/// classes overlap in feature space the way related natural classes do; a
/// trained teacher therefore produces genuinely structured soft labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub class_count: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise_sd: f32,
    /// Maximum absolute pixel shift applied per sample.
    pub max_shift: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_count: 10,
            train_per_class: 200,
            test_per_class: 40,
            height: 12,
            width: 12,
            noise_sd: 0.18,
            max_shift: 1,
        }
    }
}

/// Generate disjoint train/test splits of the synthetic dataset.
pub fn make_classification(spec: &SynthSpec, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if spec.class_count < 2 {
        return Err(Error::InvalidParameter {
            name: "class_count",
            reason: "need at least 2 classes".into(),
        });
    }
    let prototypes = class_prototypes(spec, &mut rng.fork("prototypes"));
    let train = synth_split(
        spec,
        &prototypes,
        spec.train_per_class,
        Split::Train,
        &mut rng.fork("train"),
    )?;
    let test = synth_split(
        spec,
        &prototypes,
        spec.test_per_class,
        Split::Test,
        &mut rng.fork("test"),
    )?;
    Ok((train, test))
}

fn class_prototypes(spec: &SynthSpec, rng: &mut Rng) -> Vec<Array4<f32>> {
    // Smallest motif dictionary whose unordered pairs cover the classes.
    let mut m = 2usize;
    while m * (m - 1) / 2 < spec.class_count {
        m += 1;
    }
    let motifs: Vec<Array4<f32>> = (0..m).map(|_| smooth_pattern(spec, rng)).collect();
    let mut pairs = Vec::new();
    'outer: for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((i, j));
            if pairs.len() == spec.class_count {
                break 'outer;
            }
        }
    }
    pairs
        .into_iter()
        .map(|(i, j)| {
            let mut p = &motifs[i] * 0.5 + &motifs[j] * 0.5;
            // Headroom for jitter before clamping.
            p.mapv_inplace(|v| v * 0.8);
            p
        })
        .collect()
}

fn smooth_pattern(spec: &SynthSpec, rng: &mut Rng) -> Array4<f32> {
    let (h, w) = (spec.height, spec.width);
    let mut img = Array4::<f32>::zeros((1, 1, h, w));
    for _ in 0..3 {
        let cy = rng.next_f64() * h as f64;
        let cx = rng.next_f64() * w as f64;
        let sigma = (h.min(w) as f64 / 5.0) * (0.7 + 0.6 * rng.next_f64());
        let amp = 0.5 + 0.5 * rng.next_f64();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img[[0, 0, y, x]] += (amp * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
            }
        }
    }
    let max = img.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    img.mapv_inplace(|v| v / max);
    img
}

fn synth_split(
    spec: &SynthSpec,
    prototypes: &[Array4<f32>],
    per_class: usize,
    split: Split,
    rng: &mut Rng,
) -> Result<Dataset> {
    let (h, w) = (spec.height, spec.width);
    let n = per_class * spec.class_count;
    let mut data = Array4::<f32>::zeros((n, 1, h, w));
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut row = 0usize;
    for class in 0..spec.class_count {
        for sample in 0..per_class {
            let proto = &prototypes[class];
            let shift = spec.max_shift as i64;
            let dy = rng.range_inclusive(0, 2 * shift as usize) as i64 - shift;
            let dx = rng.range_inclusive(0, 2 * shift as usize) as i64 - shift;
            let gain = 0.8 + 0.3 * rng.next_f32();
            for y in 0..h {
                for x in 0..w {
                    let sy = y as i64 - dy;
                    let sx = x as i64 - dx;
                    let base = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        proto[[0, 0, sy as usize, sx as usize]]
                    } else {
                        0.0
                    };
                    let noisy = base * gain + spec.noise_sd * rng.normal() as f32;
                    data[[row, 0, y, x]] = noisy.clamp(0.0, 1.0);
                }
            }
            labels.push(class as u32);
            ids.push(format!("c{class}_{sample}"));
            row += 1;
        }
    }
    let images = ImageBatch::new(data, ids)?;
    Dataset::new(images, labels, spec.class_count, split)
}
