//! Windowed power spectral density estimation.
//!
//! Averaged periodograms over non-overlapping segments, mirroring how a bench
//! spectrum analyzer with trace averaging reduces the displayed noise level.
//! Bin powers are normalized so that the sum over all bins of a rectangular-
//! window spectrum equals the time-domain mean-square power (Parseval).

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::scalar::{db10, Scalar};
use crate::signal::RealSignal;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("fft length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("need {required} samples for {n_averages} segment(s) of {fft_length}, got {have}")]
    TooShort {
        required: usize,
        have: usize,
        fft_length: usize,
        n_averages: usize,
    },
    #[error("n_averages must be at least 1")]
    ZeroAverages,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Analysis window applied to each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Window coefficient `w[i]` for a length-`n` window.
    pub fn coefficient<T: Scalar>(self, i: usize, n: usize) -> T {
        match self {
            Window::Rectangular => T::one(),
            Window::Hann => {
                // Periodic Hann, ENBW exactly 1.5 bins.
                let x = T::TAU() * T::from_usize(i).unwrap() / T::from_usize(n).unwrap();
                T::of(0.5) * (T::one() - x.cos())
            }
        }
    }

    /// Equivalent noise bandwidth in bins: 1.0 rectangular, 1.5 Hann.
    pub fn enbw_bins<T: Scalar>(self) -> T {
        match self {
            Window::Rectangular => T::one(),
            Window::Hann => T::of(1.5),
        }
    }
}

/// Unit in which [`Spectrum::psd`] is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdUnit {
    /// Power relative to a full-scale square, where a full-scale sine
    /// (amplitude 1.0) carries power 0.5.
    FullScaleSquared,
    /// Absolute power in watts.
    Watts,
}

/// One-sided averaged power spectrum with bin metadata.
#[derive(Debug, Clone)]
pub struct Spectrum<T> {
    bin_freqs: Vec<T>,
    psd: Vec<T>,
    unit: PsdUnit,
    window: Window,
    n_averages: usize,
    enbw_bins: T,
}

impl<T: Scalar> Spectrum<T> {
    /// Frequencies of the bin centres, ascending and uniformly spaced.
    pub fn bin_freqs(&self) -> &[T] {
        &self.bin_freqs
    }

    /// Linear power per bin (see [`PsdUnit`]).
    pub fn psd(&self) -> &[T] {
        &self.psd
    }

    pub fn unit(&self) -> PsdUnit {
        self.unit
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn n_averages(&self) -> usize {
        self.n_averages
    }

    pub fn enbw_bins(&self) -> T {
        self.enbw_bins
    }

    pub fn bin_width(&self) -> T {
        self.bin_freqs[1] - self.bin_freqs[0]
    }

    /// Bin index whose centre frequency is closest to `freq`.
    pub fn bin_of(&self, freq: T) -> usize {
        let idx = (freq / self.bin_width()).round().as_f64() as isize;
        idx.clamp(0, self.psd.len() as isize - 1) as usize
    }

    /// Bin power in dB relative to full scale (a full-scale sine reads 0 dBFS).
    pub fn psd_dbfs(&self, bin: usize) -> T {
        db10(self.psd[bin] / T::of(0.5))
    }

    /// Total power summed over all bins.
    pub fn total_power(&self) -> T {
        self.psd.iter().fold(T::zero(), |a, &p| a + p)
    }

    /// Index of the strongest bin, optionally skipping the first `skip` bins.
    pub fn peak_bin(&self, skip: usize) -> usize {
        let mut best = skip;
        for k in skip..self.psd.len() {
            if self.psd[k] > self.psd[best] {
                best = k;
            }
        }
        best
    }

    /// Serialize as CSV columns `freq_hz,psd_db`.
    ///
    /// dB values are dBFS for [`PsdUnit::FullScaleSquared`] spectra and dBW
    /// for [`PsdUnit::Watts`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SpectrumError> {
        writeln!(w, "freq_hz,psd_db")?;
        for (f, &p) in self.bin_freqs.iter().zip(&self.psd) {
            let db = match self.unit {
                PsdUnit::FullScaleSquared => db10(p / T::of(0.5)),
                PsdUnit::Watts => db10(p),
            };
            writeln!(w, "{},{}", f.as_f64(), db.as_f64())?;
        }
        Ok(())
    }

    /// Rescale every bin by a linear power factor, relabelling the unit.
    pub fn scaled(&self, factor: T, unit: PsdUnit) -> Self {
        Spectrum {
            bin_freqs: self.bin_freqs.clone(),
            psd: self.psd.iter().map(|&p| p * factor).collect(),
            unit,
            window: self.window,
            n_averages: self.n_averages,
            enbw_bins: self.enbw_bins,
        }
    }
}

/// Estimate the one-sided PSD by averaging windowed periodograms over
/// non-overlapping segments.
///
/// `fft_length` must be a power of two and the signal must supply
/// `fft_length * n_averages` samples. The output has `fft_length/2 + 1` bins.
pub fn estimate_psd<T: Scalar>(
    sig: &RealSignal<T>,
    fft_length: usize,
    window: Window,
    n_averages: usize,
) -> Result<Spectrum<T>, SpectrumError> {
    if !fft_length.is_power_of_two() || fft_length < 2 {
        return Err(SpectrumError::NotPowerOfTwo(fft_length));
    }
    if n_averages == 0 {
        return Err(SpectrumError::ZeroAverages);
    }
    let required = fft_length * n_averages;
    if sig.len() < required {
        return Err(SpectrumError::TooShort {
            required,
            have: sig.len(),
            fft_length,
            n_averages,
        });
    }

    let fft = FftPlanner::<T>::new().plan_fft_forward(fft_length);
    let w: Vec<T> = (0..fft_length)
        .map(|i| window.coefficient(i, fft_length))
        .collect();
    let w_sq_sum = w.iter().fold(T::zero(), |a, &x| a + x * x);

    let n_bins = fft_length / 2 + 1;
    let mut acc = vec![T::zero(); n_bins];
    for seg in 0..n_averages {
        let start = seg * fft_length;
        accumulate_periodogram(
            &fft,
            &sig.samples()[start..start + fft_length],
            &w,
            w_sq_sum,
            &mut acc,
        );
    }
    let n_avg_t = T::from_usize(n_averages).unwrap();
    for p in &mut acc {
        *p /= n_avg_t;
    }

    let df = sig.sample_rate() / T::from_usize(fft_length).unwrap();
    let bin_freqs = (0..n_bins)
        .map(|k| df * T::from_usize(k).unwrap())
        .collect();
    Ok(Spectrum {
        bin_freqs,
        psd: acc,
        unit: PsdUnit::FullScaleSquared,
        window,
        n_averages,
        enbw_bins: window.enbw_bins(),
    })
}

fn accumulate_periodogram<T: Scalar>(
    fft: &Arc<dyn Fft<T>>,
    segment: &[T],
    w: &[T],
    w_sq_sum: T,
    acc: &mut [T],
) {
    let n = segment.len();
    let mut buf: Vec<Complex<T>> = segment
        .iter()
        .zip(w)
        .map(|(&s, &wi)| Complex::new(s * wi, T::zero()))
        .collect();
    fft.process(&mut buf);

    // One-sided per-bin power with Parseval normalization:
    //   sum_k |X_k|^2 = N * sum_i (w_i x_i)^2
    let norm = T::one() / (T::from_usize(n).unwrap() * w_sq_sum);
    let two = T::of(2.0);
    let last = acc.len() - 1;
    acc[0] += buf[0].norm_sqr() * norm;
    for k in 1..last {
        acc[k] += buf[k].norm_sqr() * norm * two;
    }
    acc[last] += buf[last].norm_sqr() * norm;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{add_white_noise, generate_tone, RealSignal};

    #[test]
    fn full_scale_tone_reads_zero_dbfs() {
        // Integer-bin tone, rectangular window, single average.
        let n = 4096;
        let fs = 1e6;
        let freq = 32.0 * fs / n as f64; // exactly bin 32
        let sig = generate_tone::<f64>(freq, 1.0, 0.0, n, fs).unwrap();
        let spec = estimate_psd(&sig, n, Window::Rectangular, 1).unwrap();
        let peak = spec.peak_bin(1);
        assert_eq!(peak, 32);
        let dbfs = spec.psd_dbfs(peak);
        assert!(
            dbfs.abs() < 0.05,
            "full-scale coherent tone should read 0 dBFS, got {dbfs}"
        );
    }

    #[test]
    fn parseval_rectangular() {
        let n = 2048;
        let sig = generate_tone::<f64>(12e3, 0.7, 0.3, n, 1e6).unwrap();
        let sig = add_white_noise(&sig, 1e-3, 5).unwrap();
        let spec = estimate_psd(&sig, n, Window::Rectangular, 1).unwrap();
        let time_power = sig.power();
        let freq_power = spec.total_power();
        let ratio_db = 10.0 * (freq_power / time_power).log10();
        assert!(
            ratio_db.abs() < 0.1,
            "Parseval violated by {ratio_db} dB (time {time_power:e}, freq {freq_power:e})"
        );
    }

    #[test]
    fn tone_frequency_recovered_within_one_bin() {
        let n = 8192;
        let fs = 20e6;
        let freq = 199.7e3; // deliberately non-coherent
        let sig = generate_tone::<f64>(freq, 0.5, 0.0, n, fs).unwrap();
        let spec = estimate_psd(&sig, n, Window::Hann, 1).unwrap();
        let peak_freq = spec.bin_freqs()[spec.peak_bin(1)];
        assert!(
            (peak_freq - freq).abs() <= spec.bin_width(),
            "peak at {peak_freq} vs generated {freq}"
        );
    }

    #[test]
    fn averaging_reduces_periodogram_spread() {
        // With 16 averages the per-bin std dev over a flat noise region
        // drops by about 1/sqrt(16) relative to a single periodogram.
        let n_fft = 1024;
        let total = n_fft * 64;
        let base = RealSignal::new(vec![0.0_f64; total], 1e6).unwrap();
        let sig = add_white_noise(&base, 1e-4, 99).unwrap();

        let spread = |spec: &Spectrum<f64>| {
            let bins = &spec.psd()[8..n_fft / 2 - 8];
            let mean = bins.iter().sum::<f64>() / bins.len() as f64;
            let var = bins.iter().map(|&p| (p - mean) * (p - mean)).sum::<f64>()
                / bins.len() as f64;
            var.sqrt() / mean
        };

        let one = estimate_psd(&sig, n_fft, Window::Rectangular, 1).unwrap();
        let sixteen = estimate_psd(&sig, n_fft, Window::Rectangular, 16).unwrap();
        let ratio = spread(&sixteen) / spread(&one);
        assert!(
            (ratio - 0.25).abs() < 0.1,
            "16-average spread ratio {ratio} should be near 1/sqrt(16) = 0.25"
        );
    }

    #[test]
    fn hann_enbw_is_recorded() {
        let sig = generate_tone::<f64>(1e3, 0.1, 0.0, 512, 1e6).unwrap();
        let spec = estimate_psd(&sig, 256, Window::Hann, 2).unwrap();
        assert_eq!(spec.enbw_bins(), 1.5);
        assert_eq!(spec.n_averages(), 2);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let sig = generate_tone::<f64>(1e3, 0.1, 0.0, 512, 1e6).unwrap();
        assert!(matches!(
            estimate_psd(&sig, 300, Window::Hann, 1),
            Err(SpectrumError::NotPowerOfTwo(300))
        ));
    }

    #[test]
    fn too_short_for_averages_rejected() {
        let sig = generate_tone::<f64>(1e3, 0.1, 0.0, 512, 1e6).unwrap();
        assert!(matches!(
            estimate_psd(&sig, 256, Window::Hann, 3),
            Err(SpectrumError::TooShort { .. })
        ));
    }

    #[test]
    fn seeded_noise_psd_reproducible() {
        let base = RealSignal::new(vec![0.0_f64; 4096], 1e6).unwrap();
        let a = estimate_psd(
            &add_white_noise(&base, 1e-5, 1234).unwrap(),
            1024,
            Window::Hann,
            4,
        )
        .unwrap();
        let b = estimate_psd(
            &add_white_noise(&base, 1e-5, 1234).unwrap(),
            1024,
            Window::Hann,
            4,
        )
        .unwrap();
        assert_eq!(a.psd(), b.psd(), "same seed must give bit-identical PSD");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let sig = generate_tone::<f64>(1e3, 0.1, 0.0, 256, 1e6).unwrap();
        let spec = estimate_psd(&sig, 256, Window::Rectangular, 1).unwrap();
        let mut buf = Vec::new();
        spec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("freq_hz,psd_db\n"));
        assert_eq!(text.lines().count(), 1 + 129);
    }
}
