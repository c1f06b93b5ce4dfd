//! Frame-level features: framing, power spectrum, mel filterbank, log-mel and MFCC.
//!
//! Pipeline for one waveform:
//!
//! 1. split into 25 ms frames with a 10 ms hop, each multiplied by a Hamming window
//! 2. zero-pad to the FFT size and take the power spectrum `|X[k]|^2`, `k = 0..=N/2`
//! 3. pool through triangular filters spaced on `mel(f) = 2595 log10(1 + f/700)`
//! 4. `ln(energy + floor)` gives the MEL features
//! 5. an orthonormal DCT-II of the log energies, truncated to the first 14
//!    coefficients (c0 included), gives the MFCC features

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Waveform;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("signal of {len} samples is shorter than one {frame}-sample frame")]
    TooShort { len: usize, frame: usize },
    #[error("invalid dsp config: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected:?} features, got {got:?}")]
    WrongKind { expected: FeatureKind, got: FeatureKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hamming if len == 1 => vec![1.0],
            Window::Hamming => (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub num_mel_filters: usize,
    pub num_cepstra: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub window: Window,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 1024,
            num_mel_filters: 24,
            num_cepstra: 14,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            window: Window::Hamming,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * f64::from(self.sample_rate) / 1000.0).round() as usize
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let err = |m: String| Err(DspError::Config(m));
        if self.frame_len() == 0 || self.hop_len() == 0 {
            return err("frame and hop must be at least one sample".into());
        }
        if self.frame_len() > self.fft_size {
            return err(format!(
                "frame of {} samples exceeds FFT size {}",
                self.frame_len(),
                self.fft_size
            ));
        }
        if self.num_mel_filters == 0 || self.num_cepstra == 0 {
            return err("filter and cepstrum counts must be positive".into());
        }
        if self.num_cepstra > self.num_mel_filters {
            return err(format!(
                "{} cepstra requested from {} filters",
                self.num_cepstra, self.num_mel_filters
            ));
        }
        if self.num_bins() < self.num_mel_filters {
            return err(format!(
                "{} FFT bins cannot host {} filters",
                self.num_bins(),
                self.num_mel_filters
            ));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return err(format!("frequency range {}..{} Hz", self.fmin_hz, self.fmax_hz));
        }
        if self.fmax_hz > f64::from(self.sample_rate) / 2.0 {
            return err(format!("fmax {} Hz above Nyquist", self.fmax_hz));
        }
        if !(self.log_floor > 0.0) {
            return err("log floor must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "MEL")]
    Mel,
    #[serde(rename = "MFCC")]
    Mfcc,
}

impl FeatureKind {
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Mel => 24,
            FeatureKind::Mfcc => 14,
        }
    }
}

/// Variable-length frame-by-dimension features, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    rows: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, rows: usize, values: Vec<f32>) -> Result<Self, String> {
        if values.len() != rows * kind.dim() {
            return Err(format!(
                "{} values for {rows} rows of {} {:?} columns",
                values.len(),
                kind.dim(),
                kind
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite feature value".into());
        }
        Ok(Self { kind, rows, values })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.kind.dim()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }
}

/// Windowed frames, each `frame_len` samples long.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub frame_len: usize,
    pub data: Vec<Vec<f64>>,
}

impl Frames {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Power spectra, one row of `fft_size/2 + 1` bins per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMatrix {
    pub bins: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Triangular mel filters over FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub bins: usize,
    pub weights: Vec<Vec<f64>>,
    /// `num_filters + 2` band edges in Hz; filter `i` spans `edges[i]..edges[i+2]`
    /// and peaks at `edges[i+1]`.
    pub edges_hz: Vec<f64>,
}

impl FilterBank {
    pub fn num_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `floor((len - frame) / hop) + 1` windowed frames.
pub fn frame_signal(wave: &Waveform, cfg: &DspConfig) -> Result<Frames, DspError> {
    frame_samples(wave.samples(), cfg)
}

pub fn frame_samples(samples: &[f64], cfg: &DspConfig) -> Result<Frames, DspError> {
    cfg.validate()?;
    let frame = cfg.frame_len();
    let hop = cfg.hop_len();
    if samples.len() < frame {
        return Err(DspError::TooShort {
            len: samples.len(),
            frame,
        });
    }
    let window = cfg.window.coefficients(frame);
    let count = (samples.len() - frame) / hop + 1;
    let data = (0..count)
        .map(|i| {
            samples[i * hop..i * hop + frame]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect();
    Ok(Frames {
        frame_len: frame,
        data,
    })
}

pub fn power_spectrum(frames: &Frames, cfg: &DspConfig) -> Result<SpectrumMatrix, DspError> {
    let n = cfg.fft_size;
    if frames.frame_len > n {
        return Err(DspError::Config(format!(
            "frame of {} samples exceeds FFT size {n}",
            frames.frame_len
        )));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let rows = frames
        .data
        .iter()
        .map(|frame| {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (c, &s) in buf.iter_mut().zip(frame) {
                c.re = s;
            }
            fft.process(&mut buf);
            buf[..bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();
    Ok(SpectrumMatrix { bins, rows })
}

pub fn mel_filterbank(cfg: &DspConfig) -> Result<FilterBank, DspError> {
    cfg.validate()?;
    let nf = cfg.num_mel_filters;
    let bins = cfg.num_bins();
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax_hz);
    let edges_hz: Vec<f64> = (0..nf + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (nf + 1) as f64))
        .collect();
    let bin_hz = f64::from(cfg.sample_rate) / cfg.fft_size as f64;
    let weights: Vec<Vec<f64>> = (0..nf)
        .map(|i| {
            let (l, c, r) = (edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect();
    if let Some(i) = weights.iter().position(|w| w.iter().all(|&x| x == 0.0)) {
        return Err(DspError::Config(format!(
            "filter {i} covers no FFT bin; use a larger FFT or fewer filters"
        )));
    }
    Ok(FilterBank {
        bins,
        weights,
        edges_hz,
    })
}

/// `ln(bank . P + floor)` per frame.
pub fn log_mel(
    spectrum: &SpectrumMatrix,
    bank: &FilterBank,
    cfg: &DspConfig,
) -> Result<FeatureMatrix, DspError> {
    if spectrum.bins != bank.bins {
        return Err(DspError::DimensionMismatch {
            expected: bank.bins,
            got: spectrum.bins,
        });
    }
    if bank.num_filters() != FeatureKind::Mel.dim() {
        return Err(DspError::DimensionMismatch {
            expected: FeatureKind::Mel.dim(),
            got: bank.num_filters(),
        });
    }
    let mut values = Vec::with_capacity(spectrum.rows.len() * bank.num_filters());
    for p in &spectrum.rows {
        for w in &bank.weights {
            let e: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
            values.push((e + cfg.log_floor).ln() as f32);
        }
    }
    Ok(FeatureMatrix::new(FeatureKind::Mel, spectrum.rows.len(), values)
        .expect("log of positive energies is finite"))
}

/// Orthonormal DCT-II: `c_k = s_k * sum_n x_n cos(pi k (2n+1) / 2N)` with
/// `s_0 = sqrt(1/N)` and `s_k = sqrt(2/N)`.
pub fn dct_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                .sum();
            scale * s
        })
        .collect()
}

pub fn mfcc(mel: &FeatureMatrix, cfg: &DspConfig) -> Result<FeatureMatrix, DspError> {
    if mel.kind() != FeatureKind::Mel {
        return Err(DspError::WrongKind {
            expected: FeatureKind::Mel,
            got: mel.kind(),
        });
    }
    if cfg.num_cepstra != FeatureKind::Mfcc.dim() {
        return Err(DspError::Config(format!(
            "MFCC features carry {} coefficients, config asks for {}",
            FeatureKind::Mfcc.dim(),
            cfg.num_cepstra
        )));
    }
    let mut values = Vec::with_capacity(mel.rows() * cfg.num_cepstra);
    for r in 0..mel.rows() {
        let row: Vec<f64> = mel.row(r).iter().map(|&v| f64::from(v)).collect();
        values.extend(dct_ortho(&row)[..cfg.num_cepstra].iter().map(|&c| c as f32));
    }
    Ok(FeatureMatrix::new(FeatureKind::Mfcc, mel.rows(), values).expect("finite DCT of finite input"))
}

/// Runs the full pipeline on one waveform.
pub fn extract(wave: &Waveform, cfg: &DspConfig, kind: FeatureKind) -> Result<FeatureMatrix, DspError> {
    let frames = frame_signal(wave, cfg)?;
    let spectrum = power_spectrum(&frames, cfg)?;
    let bank = mel_filterbank(cfg)?;
    let mel = log_mel(&spectrum, &bank, cfg)?;
    match kind {
        FeatureKind::Mel => Ok(mel),
        FeatureKind::Mfcc => mfcc(&mel, cfg),
    }
}
