//! Time-domain signal containers and test-stimulus generation.
//!
//! Amplitudes are normalized so that full scale (the quantizer step `Δ/2`)
//! is 1.0. Signals are immutable after construction and safe to share across
//! threads.

use std::io::{BufRead, Write};

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("sample rate must be positive, got {0}")]
    NonPositiveSampleRate(f64),
    #[error("signal must contain at least one sample")]
    Empty,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("tone at {freq} Hz would alias: sample rate is {sample_rate} Hz")]
    Aliasing { freq: f64, sample_rate: f64 },
    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("malformed signal file at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A uniformly sampled real-valued waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSignal<T> {
    samples: Vec<T>,
    sample_rate: T,
}

/// A uniformly sampled complex-valued waveform (I/Q baseband).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal<T> {
    samples: Vec<Complex<T>>,
    sample_rate: T,
}

impl<T: Scalar> RealSignal<T> {
    pub fn new(samples: Vec<T>, sample_rate: T) -> Result<Self, SignalError> {
        if !(sample_rate > T::zero()) {
            return Err(SignalError::NonPositiveSampleRate(sample_rate.as_f64()));
        }
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> T {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 is a construction invariant
    }

    pub fn duration(&self) -> T {
        T::from_usize(self.len()).unwrap() / self.sample_rate
    }

    /// Mean-square power of the waveform.
    pub fn power(&self) -> T {
        let sum = self
            .samples
            .iter()
            .fold(T::zero(), |acc, &s| acc + s * s);
        sum / T::from_usize(self.len()).unwrap()
    }

    /// Pointwise map, keeping the sample rate.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| f(s)).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Serialize as CSV: a `# sample_rate_hz=` header then one sample per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SignalError> {
        writeln!(w, "# sample_rate_hz={}", self.sample_rate.as_f64())?;
        for s in &self.samples {
            writeln!(w, "{}", s.as_f64())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, SignalError> {
        let (rate, rows) = parse_csv_body(r, 1)?;
        let samples = rows.into_iter().map(|row| T::of(row[0])).collect();
        Self::new(samples, T::of(rate))
    }
}

impl<T: Scalar> ComplexSignal<T> {
    pub fn new(samples: Vec<Complex<T>>, sample_rate: T) -> Result<Self, SignalError> {
        if !(sample_rate > T::zero()) {
            return Err(SignalError::NonPositiveSampleRate(sample_rate.as_f64()));
        }
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        if let Some(index) = samples
            .iter()
            .position(|s| !s.re.is_finite() || !s.im.is_finite())
        {
            return Err(SignalError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[Complex<T>] {
        &self.samples
    }

    pub fn sample_rate(&self) -> T {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn power(&self) -> T {
        let sum = self
            .samples
            .iter()
            .fold(T::zero(), |acc, s| acc + s.norm_sqr());
        sum / T::from_usize(self.len()).unwrap()
    }

    /// Real part as a standalone signal.
    pub fn real(&self) -> RealSignal<T> {
        RealSignal {
            samples: self.samples.iter().map(|s| s.re).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Imaginary part as a standalone signal.
    pub fn imag(&self) -> RealSignal<T> {
        RealSignal {
            samples: self.samples.iter().map(|s| s.im).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SignalError> {
        writeln!(w, "# sample_rate_hz={}", self.sample_rate.as_f64())?;
        for s in &self.samples {
            writeln!(w, "{},{}", s.re.as_f64(), s.im.as_f64())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, SignalError> {
        let (rate, rows) = parse_csv_body(r, 2)?;
        let samples = rows
            .into_iter()
            .map(|row| Complex::new(T::of(row[0]), T::of(row[1])))
            .collect();
        Self::new(samples, T::of(rate))
    }
}

fn parse_csv_body<R: BufRead>(r: R, cols: usize) -> Result<(f64, Vec<Vec<f64>>), SignalError> {
    let mut rate = None;
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("sample_rate_hz=") {
                rate = Some(v.parse::<f64>().map_err(|e| SignalError::Parse {
                    line: i + 1,
                    reason: format!("bad sample rate: {e}"),
                })?);
            }
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse()).collect();
        let fields = fields.map_err(|e| SignalError::Parse {
            line: i + 1,
            reason: format!("bad sample: {e}"),
        })?;
        if fields.len() != cols {
            return Err(SignalError::Parse {
                line: i + 1,
                reason: format!("expected {cols} column(s), got {}", fields.len()),
            });
        }
        rows.push(fields);
    }
    let rate = rate.ok_or(SignalError::Parse {
        line: 0,
        reason: "missing `# sample_rate_hz=` header".into(),
    })?;
    Ok((rate, rows))
}

/// Generate `amplitude * cos(2π f t + phase)` sampled at `sample_rate`.
pub fn generate_tone<T: Scalar>(
    freq: T,
    amplitude: T,
    phase: T,
    n: usize,
    sample_rate: T,
) -> Result<RealSignal<T>, SignalError> {
    if !(sample_rate > T::zero()) {
        return Err(SignalError::NonPositiveSampleRate(sample_rate.as_f64()));
    }
    if freq < T::zero() || freq >= sample_rate / T::of(2.0) {
        return Err(SignalError::Aliasing {
            freq: freq.as_f64(),
            sample_rate: sample_rate.as_f64(),
        });
    }
    if n == 0 {
        return Err(SignalError::Empty);
    }
    let w = T::TAU() * freq / sample_rate;
    let samples = (0..n)
        .map(|i| amplitude * (w * T::from_usize(i).unwrap() + phase).cos())
        .collect();
    RealSignal::new(samples, sample_rate)
}

/// Generate a complex exponential `amplitude * exp(j(2π f t + phase))`.
///
/// Negative frequencies are allowed (complex baseband); `|freq|` must still
/// respect Nyquist.
pub fn generate_complex_tone<T: Scalar>(
    freq: T,
    amplitude: T,
    phase: T,
    n: usize,
    sample_rate: T,
) -> Result<ComplexSignal<T>, SignalError> {
    if !(sample_rate > T::zero()) {
        return Err(SignalError::NonPositiveSampleRate(sample_rate.as_f64()));
    }
    if freq.abs() >= sample_rate / T::of(2.0) {
        return Err(SignalError::Aliasing {
            freq: freq.as_f64(),
            sample_rate: sample_rate.as_f64(),
        });
    }
    if n == 0 {
        return Err(SignalError::Empty);
    }
    let w = T::TAU() * freq / sample_rate;
    let samples = (0..n)
        .map(|i| {
            let arg = w * T::from_usize(i).unwrap() + phase;
            Complex::new(amplitude * arg.cos(), amplitude * arg.sin())
        })
        .collect();
    ComplexSignal::new(samples, sample_rate)
}

/// Add zero-mean white Gaussian noise of the given variance.
///
/// Deterministic for a fixed seed: the noise stream comes from a ChaCha8
/// generator, so re-running with the same seed reproduces the output
/// bit-exactly.
pub fn add_white_noise<T: Scalar>(
    sig: &RealSignal<T>,
    variance: T,
    seed: u64,
) -> Result<RealSignal<T>, SignalError> {
    if variance < T::zero() {
        return Err(SignalError::NegativeVariance(variance.as_f64()));
    }
    if variance == T::zero() {
        return Ok(sig.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.as_f64().sqrt()).expect("finite std dev");
    let samples = sig
        .samples()
        .iter()
        .map(|&s| s + T::of(normal.sample(&mut rng)))
        .collect();
    RealSignal::new(samples, sig.sample_rate())
}
