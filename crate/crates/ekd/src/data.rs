//! Deterministic synthetic waveform generation, distortion families with
//! exact SNR control, seen/unseen evaluation splits, and a raw corpus
//! export/import format.
//!
//! Every sample is a pure function of its seed arguments; generation
//! order never matters. Class identity is carried by the base frequency
//! of a three-harmonic tone, so the classification task is separable by
//! construction (verified by the nearest-centroid test below).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Hard headroom: no sample may exceed this magnitude after any
/// distortion. Additive noise is clipped here; at the most extreme
/// negative SNRs this slightly saturates impulse bursts.
pub const MAX_ABS_SAMPLE: f64 = 4.0;

/// RMS every clean waveform is normalized to before the noise floor.
pub const CLEAN_RMS: f64 = 0.25;

/// Standard deviation of the post-normalization noise floor.
pub const FLOOR_STD: f64 = 0.02;

/// Nominal sample rate recorded as metadata.
pub const SAMPLE_RATE: u32 = 16_000;

/// One synthetic waveform with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveSample {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: usize,
    pub generator_seed: u64,
}

/// Families of input distortion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionFamily {
    Gaussian,
    TonalHum,
    BandReject,
    ImpulseBurst,
}

impl DistortionFamily {
    fn tag(self) -> u64 {
        match self {
            DistortionFamily::Gaussian => 1,
            DistortionFamily::TonalHum => 2,
            DistortionFamily::BandReject => 3,
            DistortionFamily::ImpulseBurst => 4,
        }
    }

    /// Additive families honor the SNR contract; band rejection is
    /// subtractive and ignores `snr_db`.
    pub fn is_additive(self) -> bool {
        !matches!(self, DistortionFamily::BandReject)
    }
}

/// A concrete distortion to apply: family, target SNR, and noise seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub family: DistortionFamily,
    pub snr_db: f64,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(-10.0..=60.0).contains(&self.snr_db) {
            return Err(Error::Config(format!(
                "snr_db must lie in [-10, 60], got {}",
                self.snr_db
            )));
        }
        Ok(())
    }

    /// Stable identity of this spec, used to derive the distorted
    /// sample's generator seed so caches never conflate clean/distorted
    /// variants of one waveform.
    fn fingerprint(&self) -> u64 {
        derive_seed(derive_seed(self.family.tag(), self.snr_db.to_bits()), self.seed)
    }
}

pub fn mean_power(samples: &[f64]) -> f64 {
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// Measured SNR in dB of `distorted` against its clean original.
pub fn measured_snr_db(clean: &[f64], distorted: &[f64]) -> f64 {
    let noise: Vec<f64> = distorted.iter().zip(clean).map(|(d, c)| d - c).collect();
    10.0 * (mean_power(clean) / mean_power(&noise)).log10()
}

// ── clean generation ───────────────────────────────────────────────────

/// Class base frequencies occupy `[0.05, 0.15)` cycles/sample, one band
/// per class, with per-sample jitter confined to half the band so
/// classes never overlap.
fn class_frequency(rng: &mut ChaCha8Rng, label: usize, n_classes: usize) -> f64 {
    let spacing = 0.10 / n_classes as f64;
    let center = 0.05 + spacing * (label as f64 + 0.5);
    center + rng.random_range(-0.25..0.25) * spacing
}

/// Generate `count` clean samples with round-robin balanced labels.
/// Each sample is a pure function of `(seed, index)`.
pub fn gen_clean(seed: u64, count: usize, length: usize, n_classes: usize) -> Result<Vec<WaveSample>> {
    if count == 0 {
        return Err(Error::Config("gen_clean: count must be at least 1".into()));
    }
    if n_classes < 2 {
        return Err(Error::Config("gen_clean: need at least 2 classes".into()));
    }
    if length < 2 {
        return Err(Error::Config("gen_clean: length must be at least 2".into()));
    }
    (0..count)
        .map(|idx| {
            let label = idx % n_classes;
            let sample_seed = derive_seed(seed, idx as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let f0 = class_frequency(&mut rng, label, n_classes);
            let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            let amps = [1.0, 0.5, 0.25];
            let mut samples: Vec<f64> = (0..length)
                .map(|i| {
                    let t = i as f64;
                    (0..3)
                        .map(|h| {
                            let f = f0 * (h + 1) as f64;
                            amps[h] * (std::f64::consts::TAU * f * t + phases[h]).sin()
                        })
                        .sum()
                })
                .collect();
            let rms = mean_power(&samples).sqrt();
            if rms > 0.0 {
                let scale = CLEAN_RMS / rms;
                for v in samples.iter_mut() {
                    *v *= scale;
                }
            }
            let floor = Normal::new(0.0, FLOOR_STD).expect("valid std");
            for v in samples.iter_mut() {
                *v = (*v + floor.sample(&mut rng)).clamp(-MAX_ABS_SAMPLE, MAX_ABS_SAMPLE);
            }
            Ok(WaveSample {
                samples,
                sample_rate: SAMPLE_RATE,
                label,
                generator_seed: sample_seed,
            })
        })
        .collect()
}

// ── distortion ─────────────────────────────────────────────────────────

fn additive_noise(family: DistortionFamily, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match family {
        DistortionFamily::Gaussian => {
            let normal = Normal::new(0.0, 1.0).expect("valid std");
            (0..n).map(|_| normal.sample(rng)).collect()
        }
        DistortionFamily::TonalHum => {
            let f = rng.random_range(0.01..0.03);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..n)
                .map(|i| (std::f64::consts::TAU * f * i as f64 + phase).sin())
                .collect()
        }
        DistortionFamily::ImpulseBurst => {
            // one impulse per ~20 samples keeps amplitudes inside the
            // headroom even at the lowest allowed SNR
            let k = (n / 20).max(1);
            let mut noise = vec![0.0; n];
            for _ in 0..k {
                let pos = rng.random_range(0..n);
                let mag = rng.random_range(0.7..1.3);
                let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                noise[pos] += sign * mag;
            }
            noise
        }
        DistortionFamily::BandReject => unreachable!("band_reject is not additive"),
    }
}

fn band_reject(samples: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = samples.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);

    // zero a seeded band inside the class-informative range
    let center = rng.random_range(0.05..0.15);
    let half_width = 0.015;
    for k in 0..n {
        let freq = if k <= n / 2 {
            k as f64 / n as f64
        } else {
            (n - k) as f64 / n as f64
        };
        if (freq - center).abs() <= half_width {
            buf[k] = Complex::new(0.0, 0.0);
        }
    }
    ifft.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Apply one distortion. Additive families are scaled so the measured
/// SNR equals `spec.snr_db` exactly (then clipped to the headroom);
/// band rejection zeroes a seeded frequency band and ignores `snr_db`.
pub fn apply_distortion(w: &WaveSample, spec: &DistortionSpec) -> Result<WaveSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = if spec.family.is_additive() {
        let p_signal = mean_power(&w.samples);
        if p_signal <= 1e-300 {
            return Err(Error::Domain(
                "degenerate input: zero-power waveform cannot receive SNR-scaled noise".into(),
            ));
        }
        let noise = additive_noise(spec.family, w.samples.len(), &mut rng);
        let p_noise = mean_power(&noise);
        if p_noise <= 0.0 {
            return Err(Error::Numeric("generated noise has zero power".into()));
        }
        let target_p_noise = p_signal / 10f64.powf(spec.snr_db / 10.0);
        let alpha = (target_p_noise / p_noise).sqrt();
        w.samples
            .iter()
            .zip(&noise)
            .map(|(s, n)| (s + alpha * n).clamp(-MAX_ABS_SAMPLE, MAX_ABS_SAMPLE))
            .collect()
    } else {
        band_reject(&w.samples, &mut rng)
            .into_iter()
            .map(|v| v.clamp(-MAX_ABS_SAMPLE, MAX_ABS_SAMPLE))
            .collect()
    };
    Ok(WaveSample {
        samples,
        sample_rate: w.sample_rate,
        label: w.label,
        generator_seed: derive_seed(w.generator_seed, spec.fingerprint()),
    })
}

// ── splits ─────────────────────────────────────────────────────────────

/// Declarative description of a dataset split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub train_count: usize,
    pub eval_count: usize,
    pub length: usize,
    pub n_classes: usize,
    pub seen_families: Vec<DistortionFamily>,
    pub unseen_families: Vec<DistortionFamily>,
    /// SNR applied to both noisy eval conditions.
    pub eval_snr_db: f64,
}

impl Default for SplitConfig {
    /// The default length gives the 16/8 front-end 19 frames per sample;
    /// mean-pooled probe features need that many frames before deep
    /// encoder states become linearly separable by class.
    fn default() -> Self {
        SplitConfig {
            seed: 0,
            train_count: 256,
            eval_count: 128,
            length: 160,
            n_classes: 4,
            seen_families: vec![DistortionFamily::Gaussian, DistortionFamily::TonalHum],
            unseen_families: vec![DistortionFamily::ImpulseBurst, DistortionFamily::BandReject],
            eval_snr_db: 5.0,
        }
    }
}

/// Train set plus paired clean/seen-noise/unseen-noise eval sets. The
/// three eval variants share the same underlying clean content index by
/// index.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<WaveSample>,
    pub eval_clean: Vec<WaveSample>,
    pub eval_seen_noise: Vec<WaveSample>,
    pub eval_unseen_noise: Vec<WaveSample>,
    pub seen_families: Vec<DistortionFamily>,
    pub unseen_families: Vec<DistortionFamily>,
}

/// Build a full split. The train set is clean; eval distortions cycle
/// through the respective family list.
pub fn make_split(cfg: &SplitConfig) -> Result<DatasetSplit> {
    if cfg.seen_families.is_empty() || cfg.unseen_families.is_empty() {
        return Err(Error::Config("seen and unseen family lists must be non-empty".into()));
    }
    if cfg
        .seen_families
        .iter()
        .any(|f| cfg.unseen_families.contains(f))
    {
        return Err(Error::Config(format!(
            "seen and unseen families overlap: {:?} vs {:?}",
            cfg.seen_families, cfg.unseen_families
        )));
    }
    let train = gen_clean(derive_seed(cfg.seed, 1), cfg.train_count, cfg.length, cfg.n_classes)?;
    let eval_clean = gen_clean(derive_seed(cfg.seed, 2), cfg.eval_count, cfg.length, cfg.n_classes)?;
    let distort = |families: &[DistortionFamily], stream: u64| -> Result<Vec<WaveSample>> {
        eval_clean
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let spec = DistortionSpec {
                    family: families[k % families.len()],
                    snr_db: cfg.eval_snr_db,
                    seed: derive_seed(cfg.seed, stream + k as u64),
                };
                apply_distortion(w, &spec)
            })
            .collect()
    };
    let eval_seen_noise = distort(&cfg.seen_families, 0x5EE0_0000)?;
    let eval_unseen_noise = distort(&cfg.unseen_families, 0x0A5E_0000)?;
    Ok(DatasetSplit {
        train,
        eval_clean,
        eval_seen_noise,
        eval_unseen_noise,
        seen_families: cfg.seen_families.clone(),
        unseen_families: cfg.unseen_families.clone(),
    })
}

// ── hand-crafted spectral features ─────────────────────────────────────

/// Goertzel power of `samples` at normalized frequency `freq`.
fn goertzel_power(samples: &[f64], freq: f64) -> f64 {
    let w = std::f64::consts::TAU * freq;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0, 0.0);
    for &x in samples {
        let s0 = x + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    (s1 * s1 + s2 * s2 - coeff * s1 * s2) / samples.len() as f64
}

/// Fixed bank of Goertzel powers covering the class bands and their
/// harmonics; log-compressed. Independent of any learned model — used as
/// the separability oracle.
pub fn spectral_features(samples: &[f64], n_bins: usize) -> Vec<f64> {
    (0..n_bins)
        .map(|b| {
            let freq = 0.03 + 0.42 * (b as f64 + 0.5) / n_bins as f64;
            (goertzel_power(samples, freq) + 1e-12).ln()
        })
        .collect()
}

// ── corpus export / import ─────────────────────────────────────────────

pub const CORPUS_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    label: usize,
    generator_seed: u64,
    sample_rate: u32,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusManifest {
    version: u32,
    count: usize,
    samples: Vec<ManifestEntry>,
}

/// Translate a serde_json error position (line/column) to a byte offset
/// in `src`.
pub(crate) fn json_byte_offset(src: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in src.lines().enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(src: &str, what: &str) -> Result<T> {
    serde_json::from_str(src).map_err(|e| Error::Parse {
        offset: json_byte_offset(src, e.line(), e.column()),
        message: format!("{what}: {e}"),
    })
}

/// Write samples as raw little-endian f64 files plus a JSON manifest.
pub fn export_corpus(dir: &Path, samples: &[WaveSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let entries = samples
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let file = format!("sample_{k:05}.f64");
            let mut bytes = Vec::with_capacity(w.samples.len() * 8);
            for v in &w.samples {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(dir.join(&file), bytes)?;
            Ok(ManifestEntry {
                file,
                label: w.label,
                generator_seed: w.generator_seed,
                sample_rate: w.sample_rate,
                length: w.samples.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        version: CORPUS_MANIFEST_VERSION,
        count: samples.len(),
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Read a corpus directory written by [`export_corpus`].
pub fn import_corpus(dir: &Path) -> Result<Vec<WaveSample>> {
    let manifest_src = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CorpusManifest = parse_json(&manifest_src, "corpus manifest")?;
    if manifest.version != CORPUS_MANIFEST_VERSION {
        return Err(Error::Incompatible(format!(
            "corpus manifest version {} (supported: {})",
            manifest.version, CORPUS_MANIFEST_VERSION
        )));
    }
    if manifest.samples.len() != manifest.count {
        return Err(Error::Incompatible(format!(
            "manifest declares {} samples but lists {}",
            manifest.count,
            manifest.samples.len()
        )));
    }
    manifest
        .samples
        .iter()
        .map(|e| {
            let bytes = fs::read(dir.join(&e.file))?;
            if bytes.len() != e.length * 8 {
                return Err(Error::Incompatible(format!(
                    "{}: expected {} bytes for {} samples, found {}",
                    e.file,
                    e.length * 8,
                    e.length,
                    bytes.len()
                )));
            }
            let samples = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Ok(WaveSample {
                samples,
                sample_rate: e.sample_rate,
                label: e.label,
                generator_seed: e.generator_seed,
            })
        })
        .collect()
}
