//! Paired two-modality datasets, the `EDSHMAT1` matrix file format,
//! feature centering, seeded train/query splits and a synthetic
//! clustered-data generator.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MATRIX_MAGIC: &[u8; 8] = b"EDSHMAT1";
const MATRIX_HEADER_LEN: u64 = 16;

pub const X1_FILE: &str = "x1.edshmat";
pub const X2_FILE: &str = "x2.edshmat";
pub const LABELS_FILE: &str = "labels.edshmat";

/// Two feature modalities and a binary label matrix, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x1: DenseMatrix,
    pub x2: DenseMatrix,
    pub labels: DenseMatrix,
}

impl Dataset {
    pub fn new(x1: DenseMatrix, x2: DenseMatrix, labels: DenseMatrix) -> Result<Self> {
        let n = x1.cols();
        if x2.cols() != n || labels.cols() != n {
            return Err(Error::shape(
                "dataset",
                format!(
                    "column counts differ: x1 {}, x2 {}, labels {}",
                    n,
                    x2.cols(),
                    labels.cols()
                ),
            ));
        }
        validate_labels(&labels)?;
        Ok(Dataset { x1, x2, labels })
    }

    pub fn len(&self) -> usize {
        self.x1.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.rows()
    }

    pub fn modality(&self, m: Modality) -> &DenseMatrix {
        match m {
            Modality::First => &self.x1,
            Modality::Second => &self.x2,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x1: self.x1.select_columns(indices),
            x2: self.x2.select_columns(indices),
            labels: self.labels.select_columns(indices),
        }
    }

    /// Writes `x1.edshmat`, `x2.edshmat` and `labels.edshmat` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_matrix(&dir.join(X1_FILE), &self.x1)?;
        save_matrix(&dir.join(X2_FILE), &self.x2)?;
        save_matrix(&dir.join(LABELS_FILE), &self.labels)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let x1 = load_matrix(&dir.join(X1_FILE))?;
        let x2 = load_matrix(&dir.join(X2_FILE))?;
        let labels = load_matrix(&dir.join(LABELS_FILE))?;
        Dataset::new(x1, x2, labels)
    }
}

/// Label entries must be exactly 0 or 1 and every sample needs a class.
pub fn validate_labels(labels: &DenseMatrix) -> Result<()> {
    for i in 0..labels.rows() {
        for (j, &v) in labels.row(i).iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Argument(format!(
                    "label entry ({i}, {j}) = {v} is not 0 or 1"
                )));
            }
        }
    }
    for j in 0..labels.cols() {
        if (0..labels.rows()).all(|i| labels.get(i, j) == 0.0) {
            return Err(Error::Argument(format!("sample {j} has no class label")));
        }
    }
    Ok(())
}

/// Which feature modality (image-like `First`, text-like `Second`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    First,
    Second,
}

impl Modality {
    pub fn from_index(m: usize) -> Result<Self> {
        match m {
            1 => Ok(Modality::First),
            2 => Ok(Modality::Second),
            _ => Err(Error::Argument(format!("modality must be 1 or 2, got {m}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Modality::First => 1,
            Modality::Second => 2,
        }
    }
}

/// Per-modality feature means of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub mean1: Vec<f64>,
    pub mean2: Vec<f64>,
}

impl CenteringStats {
    pub fn mean(&self, m: Modality) -> &[f64] {
        match m {
            Modality::First => &self.mean1,
            Modality::Second => &self.mean2,
        }
    }
}

/// Subtracts each row's mean; returns the centered matrix and the means.
pub fn center(x: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let n = x.cols() as f64;
    let mean: Vec<f64> = (0..x.rows())
        .map(|i| x.row(i).iter().sum::<f64>() / n)
        .collect();
    let centered = apply_center(x, &mean).expect("mean length matches by construction");
    (centered, mean)
}

pub fn apply_center(x: &DenseMatrix, mean: &[f64]) -> Result<DenseMatrix> {
    if mean.len() != x.rows() {
        return Err(Error::shape(
            "apply_center",
            format!("{} means for {} feature rows", mean.len(), x.rows()),
        ));
    }
    let mut out = x.clone();
    for (i, &mu) in mean.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v -= mu);
    }
    Ok(out)
}

/// Centers both modalities of `ds`, returning the centered copy and the
/// statistics needed to shift unseen samples the same way.
pub fn center_dataset(ds: &Dataset) -> (Dataset, CenteringStats) {
    let (x1, mean1) = center(&ds.x1);
    let (x2, mean2) = center(&ds.x2);
    (
        Dataset {
            x1,
            x2,
            labels: ds.labels.clone(),
        },
        CenteringStats { mean1, mean2 },
    )
}

/// Seeded random split into `(train, query)`.
///
/// The query part receives `round(N * query_fraction)` samples, clamped to
/// `[1, N - 1]`. Both parts keep the original column order.
pub fn split(ds: &Dataset, query_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "query fraction must lie in (0, 1), got {query_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Argument(format!(
            "cannot split {n} samples into two nonempty parts"
        )));
    }
    let n_query = ((n as f64 * query_fraction).round() as usize).clamp(1, n - 1);

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut query_idx = perm[..n_query].to_vec();
    let mut train_idx = perm[n_query..].to_vec();
    query_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&query_idx)))
}

/// Parameters of the synthetic clustered generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub classes: usize,
    pub d1: usize,
    pub d2: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.n < self.classes {
            return Err(Error::Argument(format!(
                "need n >= classes >= 2, got n = {}, classes = {}",
                self.n, self.classes
            )));
        }
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::Argument("feature dimensions must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument(format!(
                "noise sigma must be a finite non-negative value, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

const MAX_CENTER_DOT: f64 = 0.5;
const MAX_CENTER_ATTEMPTS: usize = 1000;

/// Draws `c` unit vectors in `d` dimensions with pairwise dot products at
/// most 0.5, by rejection.
fn class_centers(rng: &mut ChaCha8Rng, c: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
    while centers.len() < c {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_CENTER_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "could not place {c} separated centers in {d} dimensions \
                     (center {} rejected {MAX_CENTER_ATTEMPTS} times)",
                    centers.len()
                )));
            }
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let separated = centers
                .iter()
                .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= MAX_CENTER_DOT);
            if separated {
                centers.push(v);
                break;
            }
        }
    }
    Ok(centers)
}

/// Generates a one-hot labelled two-modality dataset of Gaussian clusters.
pub fn synth(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers1 = class_centers(&mut rng, spec.classes, spec.d1)?;
    let centers2 = class_centers(&mut rng, spec.classes, spec.d2)?;

    let n = spec.n;
    let mut x1 = DenseMatrix::zeros(spec.d1, n);
    let mut x2 = DenseMatrix::zeros(spec.d2, n);
    let mut labels = DenseMatrix::zeros(spec.classes, n);
    for j in 0..n {
        let class = rng.random_range(0..spec.classes);
        labels.set(class, j, 1.0);
        for (x, centers) in [(&mut x1, &centers1), (&mut x2, &centers2)] {
            for (i, &c) in centers[class].iter().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x.set(i, j, c + spec.noise_sigma * noise);
            }
        }
    }
    Dataset::new(x1, x2, labels)
}

/// Writes `m` as an `EDSHMAT1` file.
pub fn save_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &DenseMatrix) -> Result<()> {
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::shape("write_matrix", "row count exceeds u32"))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| Error::shape("write_matrix", "column count exceeds u32"))?;
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let file = fs::File::open(path)?;
    read_matrix(&mut BufReader::new(file))
}

/// Decodes an `EDSHMAT1` stream; the stream must end right after the payload.
pub fn read_matrix<R: Read>(r: &mut R) -> Result<DenseMatrix> {
    let mut header = [0u8; MATRIX_HEADER_LEN as usize];
    let got = read_full(r, &mut header)?;
    if got < 8 || &header[..8] != MATRIX_MAGIC {
        return Err(Error::format(0, "missing EDSHMAT1 magic"));
    }
    if got < header.len() {
        return Err(Error::format(
            got as u64,
            "truncated header (expected 16 bytes)",
        ));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(8, "declared size overflows"))?;

    let mut data = Vec::with_capacity(count.min(1 << 24));
    let mut buf = [0u8; 8];
    for idx in 0..count {
        let offset = MATRIX_HEADER_LEN + 8 * idx as u64;
        let got = read_full(r, &mut buf)?;
        if got < 8 {
            return Err(Error::format(
                offset + got as u64,
                format!("truncated payload: header declares {rows}x{cols}, found {idx} values"),
            ));
        }
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::format(offset, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    let end = MATRIX_HEADER_LEN + 8 * count as u64;
    let mut probe = [0u8; 1];
    if read_full(r, &mut probe)? != 0 {
        return Err(Error::format(
            end,
            format!("trailing bytes after {rows}x{cols} payload"),
        ));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// Reads until `buf` is full or EOF; returns the number of bytes read.
pub(crate) fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}
