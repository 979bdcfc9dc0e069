//! Signal-noise data model: two-patch samples with one signal patch `y*mu`
//! and one Gaussian noise patch drawn orthogonal to `mu`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, norm, norm_sq};
use crate::rng::stream;
use crate::{Error, Result};

const DATASET_MAGIC: &[u8; 4] = b"SNDM";
const DATASET_VERSION: u32 = 1;

/// Distribution parameters: signal vector `mu`, noise scale `sigma_p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataModelParams {
    pub mu: Vec<f64>,
    pub sigma_p: f64,
}

impl DataModelParams {
    pub fn new(mu: Vec<f64>, sigma_p: f64) -> Result<Self> {
        let p = DataModelParams { mu, sigma_p };
        p.validate()?;
        Ok(p)
    }

    /// Signal `mu = mu_norm * e_1` in dimension `d`.
    pub fn axis_signal(d: usize, mu_norm: f64, sigma_p: f64) -> Result<Self> {
        let mut mu = vec![0.0; d];
        if d > 0 {
            mu[0] = mu_norm;
        }
        Self::new(mu, sigma_p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d() < 2 {
            return Err(Error::InvalidParam(format!("d = {} must be >= 2", self.d())));
        }
        if !(self.mu_norm() > 0.0) {
            return Err(Error::InvalidParam("mu must be nonzero".into()));
        }
        if !(self.sigma_p >= 0.0) {
            return Err(Error::InvalidParam(format!("sigma_p = {} must be >= 0", self.sigma_p)));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn mu_norm(&self) -> f64 {
        norm(&self.mu)
    }

    /// Signal-to-noise ratio `||mu|| / (sigma_p * sqrt(d))`.
    pub fn snr(&self) -> Result<f64> {
        if self.sigma_p == 0.0 {
            return Err(Error::InfiniteSnr);
        }
        Ok(self.mu_norm() / (self.sigma_p * (self.d() as f64).sqrt()))
    }
}

/// One data point: two patches, a label, and which patch carries the signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub patch1: Vec<f64>,
    pub patch2: Vec<f64>,
    /// Label in {-1, +1}.
    pub label: i8,
    /// 1 or 2: the patch equal to `label * mu`.
    pub signal_position: u8,
}

impl SamplePair {
    pub fn d(&self) -> usize {
        self.patch1.len()
    }

    pub fn signal_patch(&self) -> &[f64] {
        if self.signal_position == 1 {
            &self.patch1
        } else {
            &self.patch2
        }
    }

    pub fn noise_patch(&self) -> &[f64] {
        if self.signal_position == 1 {
            &self.patch2
        } else {
            &self.patch1
        }
    }

    /// `z = patch1 + patch2 = y*mu + xi`.
    pub fn patch_sum(&self) -> Vec<f64> {
        self.patch1.iter().zip(&self.patch2).map(|(a, b)| a + b).collect()
    }
}

/// Role of a dataset in the pipeline.
///
/// Labels of `PretrainUnlabeled` data exist in memory but are consumed only
/// by the augmentation oracle and diagnostics, never by training code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    PretrainUnlabeled,
    FinetuneLabeled,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<SamplePair>,
    pub kind: DatasetKind,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels, for the augmentation oracle and diagnostics only.
    pub fn labels(&self) -> Vec<i8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Draw `xi = sigma_p * (g - mu <mu,g> / ||mu||^2)`, `g ~ N(0, I)`.
///
/// The projection makes `<xi, mu> = 0` up to floating point; `sigma_p = 0`
/// returns the zero vector.
pub fn sample_noise<R: Rng>(params: &DataModelParams, rng: &mut R) -> Vec<f64> {
    let d = params.d();
    let mut g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let coef = dot(&params.mu, &g) / norm_sq(&params.mu);
    axpy(-coef, &params.mu, &mut g);
    for v in &mut g {
        *v *= params.sigma_p;
    }
    g
}

/// Draw one sample: Rademacher label, uniform signal position, fresh noise.
pub fn sample_datapoint<R: Rng>(params: &DataModelParams, rng: &mut R) -> SamplePair {
    let label: i8 = if rng.gen::<bool>() { 1 } else { -1 };
    let signal_position: u8 = if rng.gen::<bool>() { 1 } else { 2 };
    let noise = sample_noise(params, rng);
    let signal: Vec<f64> = params.mu.iter().map(|&v| v * label as f64).collect();
    let (patch1, patch2) = if signal_position == 1 { (signal, noise) } else { (noise, signal) };
    SamplePair { patch1, patch2, label, signal_position }
}

/// Ideal augmentation: an independent draw conditioned on the same label.
///
/// Both the noise patch and the signal position are redrawn.
pub fn augment<R: Rng>(sample: &SamplePair, params: &DataModelParams, rng: &mut R) -> SamplePair {
    let signal_position: u8 = if rng.gen::<bool>() { 1 } else { 2 };
    let noise = sample_noise(params, rng);
    let signal: Vec<f64> = params.mu.iter().map(|&v| v * sample.label as f64).collect();
    let (patch1, patch2) = if signal_position == 1 { (signal, noise) } else { (noise, signal) };
    SamplePair { patch1, patch2, label: sample.label, signal_position }
}

/// Generate a dataset of `n` samples; the seed fully determines the content.
pub fn generate_dataset(params: &DataModelParams, n: usize, kind: DatasetKind, seed: u64) -> Dataset {
    let mut rng = stream(seed);
    let samples = (0..n).map(|_| sample_datapoint(params, &mut rng)).collect();
    Dataset { samples, kind, seed }
}

/// Augment every sample of a dataset (index-paired), with its own stream.
pub fn augment_dataset(data: &Dataset, params: &DataModelParams, seed: u64) -> Dataset {
    let mut rng = stream(seed);
    let samples = data.samples.iter().map(|s| augment(s, params, &mut rng)).collect();
    Dataset { samples, kind: data.kind, seed }
}

/// Concentration diagnostics for a generated dataset.
///
/// Violations are reported as warnings, not hard failures: below the lemma
/// regime (small `d`, small `n`) the bounds are allowed to fail.
pub fn concentration_warnings(data: &Dataset, params: &DataModelParams, delta: f64) -> Vec<String> {
    let mut warnings = Vec::new();
    let n = data.len();
    if n == 0 {
        return warnings;
    }
    let d = params.d() as f64;
    let sp2 = params.sigma_p * params.sigma_p;
    let (lo, hi) = (sp2 * d / 2.0, 1.5 * sp2 * d);
    for (i, s) in data.samples.iter().enumerate() {
        let nsq = norm_sq(s.noise_patch());
        if nsq < lo || nsq > hi {
            warnings.push(format!(
                "noise norm^2 of sample {i} = {nsq:.6} outside [{lo:.6}, {hi:.6}]"
            ));
        }
    }
    let bound = 2.0 * sp2 * (d * (4.0 * (n * n) as f64 / delta).ln()).sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            let ip = dot(data.samples[i].noise_patch(), data.samples[j].noise_patch()).abs();
            if ip > bound {
                warnings.push(format!(
                    "noise inner product |<xi_{i}, xi_{j}>| = {ip:.6} exceeds {bound:.6}"
                ));
            }
        }
    }
    let pos = data.samples.iter().filter(|s| s.label == 1).count();
    let neg = n - pos;
    if n >= 8 && (pos * 4 < n || neg * 4 < n) {
        warnings.push(format!("class counts unbalanced: +1 x {pos}, -1 x {neg} (want >= n/4 each)"));
    }
    warnings
}

// ---------------------------------------------------------------------------
// Persistence: CSV rows and the compact binary form.
// ---------------------------------------------------------------------------

fn kind_tag(kind: DatasetKind) -> u32 {
    match kind {
        DatasetKind::PretrainUnlabeled => 0,
        DatasetKind::FinetuneLabeled => 1,
        DatasetKind::Test => 2,
    }
}

fn kind_from_tag(tag: u32) -> Result<DatasetKind> {
    match tag {
        0 => Ok(DatasetKind::PretrainUnlabeled),
        1 => Ok(DatasetKind::FinetuneLabeled),
        2 => Ok(DatasetKind::Test),
        other => Err(Error::Format(format!("unknown dataset kind tag {other}"))),
    }
}

/// One row per sample: label, signal_position, then the 2d patch entries.
pub fn write_csv<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    for s in &data.samples {
        write!(w, "{},{}", s.label, s.signal_position)?;
        for v in s.patch1.iter().chain(&s.patch2) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R, kind: DatasetKind, seed: u64) -> Result<Dataset> {
    let reader = BufReader::new(r);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 || fields.len() % 2 != 0 {
            return Err(Error::Format(format!("csv line {}: bad field count {}", lineno + 1, fields.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Format(format!("csv line {}: {e}", lineno + 1)))
        };
        let label = parse(fields[0])? as i8;
        let signal_position = parse(fields[1])? as u8;
        let d = (fields.len() - 2) / 2;
        let patch1 = fields[2..2 + d].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
        let patch2 = fields[2 + d..].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
        samples.push(SamplePair { patch1, patch2, label, signal_position });
    }
    Ok(Dataset { samples, kind, seed })
}

/// Binary form: magic "SNDM", version u32, d u32, n u32, then per sample
/// label f64, signal_position f64, patch1, patch2 as little-endian f64.
pub fn write_binary<W: Write>(data: &Dataset, mut w: W) -> Result<()> {
    let d = data.samples.first().map_or(0, |s| s.d());
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_u32::<LittleEndian>(data.len() as u32)?;
    w.write_u32::<LittleEndian>(kind_tag(data.kind))?;
    w.write_u64::<LittleEndian>(data.seed)?;
    for s in &data.samples {
        w.write_f64::<LittleEndian>(s.label as f64)?;
        w.write_f64::<LittleEndian>(s.signal_position as f64)?;
        for &v in s.patch1.iter().chain(&s.patch2) {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, want SNDM")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let kind = kind_from_tag(r.read_u32::<LittleEndian>()?)?;
    let seed = r.read_u64::<LittleEndian>()?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let label = r.read_f64::<LittleEndian>()? as i8;
        let signal_position = r.read_f64::<LittleEndian>()? as u8;
        let mut patch1 = vec![0.0; d];
        let mut patch2 = vec![0.0; d];
        for v in patch1.iter_mut().chain(patch2.iter_mut()) {
            *v = r.read_f64::<LittleEndian>()?;
        }
        samples.push(SamplePair { patch1, patch2, label, signal_position });
    }
    Ok(Dataset { samples, kind, seed })
}

pub fn save_binary(data: &Dataset, path: &Path) -> Result<()> {
    write_binary(data, BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_binary(path: &Path) -> Result<Dataset> {
    read_binary(BufReader::new(std::fs::File::open(path)?))
}
