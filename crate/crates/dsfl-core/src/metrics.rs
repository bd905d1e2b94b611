//! Measurement procedures: SNR/SNDR extraction from spectra, peak-SNR
//! amplitude search, 1 dB compression fitting and end-to-end dynamic range.

use std::io::Write;

use thiserror::Error;

use crate::scalar::{db10, Scalar};
use crate::spectrum::Spectrum;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("band edges invalid: f_low {f_low} .. f_high {f_high} (Nyquist {nyquist})")]
    BadBand {
        f_low: f64,
        f_high: f64,
        nyquist: f64,
    },
    #[error("no signal bins inside the analysis band")]
    EmptySignalBins,
    #[error("sweep needs at least {need} points, got {got}")]
    SweepTooShort { need: usize, got: usize },
    #[error("sweep input powers must be strictly increasing")]
    NonMonotonicSweep,
    #[error("no linear region found in the sweep")]
    NoLinearRegion,
    #[error("p1db {p1db_dbm} dBm must exceed the noise floor {floor_dbm} dBm")]
    InvertedRange { p1db_dbm: f64, floor_dbm: f64 },
    #[error("all points in the search grid were unstable")]
    AllUnstable,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Analysis band: in-band region, signal-bin set and DC exclusion.
#[derive(Debug, Clone)]
pub struct BandSpec<T> {
    pub f_low: T,
    pub f_high: T,
    pub signal_bins: Vec<usize>,
    pub dc_guard_bins: usize,
    /// Harmonics of the fundamental treated as distortion: excluded from
    /// the SNR noise sum, included by SNDR.
    pub tracked_harmonics: usize,
}

/// Guard bins kept around the fundamental when building a [`BandSpec`].
pub const SIGNAL_GUARD_BINS: usize = 2;
/// Bins excluded near DC by default.
pub const DC_GUARD_BINS: usize = 4;
/// Harmonics tracked as distortion by default.
pub const TRACKED_HARMONICS: usize = 5;

impl<T: Scalar> BandSpec<T> {
    /// Band from DC to `f_high` with the fundamental at `f_sig`; the signal
    /// window is the fundamental bin +- 2 guard bins and 4 bins next to DC
    /// are excluded from the noise sum.
    pub fn new(spec: &Spectrum<T>, f_sig: T, f_high: T) -> Result<Self, MetricsError> {
        let nyquist = *spec.bin_freqs().last().unwrap();
        if !(f_high > T::zero()) || f_high > nyquist {
            return Err(MetricsError::BadBand {
                f_low: 0.0,
                f_high: f_high.as_f64(),
                nyquist: nyquist.as_f64(),
            });
        }
        let sig_bin = spec.bin_of(f_sig);
        let lo = sig_bin.saturating_sub(SIGNAL_GUARD_BINS);
        let hi = sig_bin + SIGNAL_GUARD_BINS;
        Ok(Self {
            f_low: T::zero(),
            f_high,
            signal_bins: (lo..=hi).collect(),
            dc_guard_bins: DC_GUARD_BINS,
            tracked_harmonics: TRACKED_HARMONICS,
        })
    }

    fn band_bins(&self, spec: &Spectrum<T>) -> (usize, usize) {
        let lo = if self.f_low <= T::zero() {
            0
        } else {
            spec.bin_of(self.f_low)
        };
        (lo, spec.bin_of(self.f_high))
    }

    fn fundamental_bin(&self) -> usize {
        self.signal_bins[self.signal_bins.len() / 2]
    }

    /// Bins carrying tracked harmonics (each guarded like the signal).
    fn harmonic_bins(&self, n_bins: usize) -> Vec<usize> {
        let sig = self.fundamental_bin();
        let mut out = Vec::new();
        for h in 2..=self.tracked_harmonics + 1 {
            let hbin = sig * h;
            if hbin >= n_bins {
                break;
            }
            for k in hbin.saturating_sub(SIGNAL_GUARD_BINS)
                ..=(hbin + SIGNAL_GUARD_BINS).min(n_bins - 1)
            {
                out.push(k);
            }
        }
        out
    }
}

/// Ratio of signal power to in-band noise power, in dB. The signal is the
/// sum over the signal bins; the noise is everything else in band except
/// the DC guard and the tracked harmonic bins (those count as distortion
/// and belong to SNDR, not SNR).
pub fn compute_snr<T: Scalar>(
    spec: &Spectrum<T>,
    band: &BandSpec<T>,
) -> Result<T, MetricsError> {
    let (lo, hi) = band.band_bins(spec);
    if band.signal_bins.is_empty()
        || band.signal_bins.iter().any(|&b| b < lo || b > hi)
    {
        return Err(MetricsError::EmptySignalBins);
    }
    let psd = spec.psd();
    let harmonics = band.harmonic_bins(psd.len());
    let mut p_sig = T::zero();
    let mut p_noise = T::zero();
    for k in lo.max(band.dc_guard_bins + 1)..=hi {
        if band.signal_bins.contains(&k) {
            p_sig += psd[k];
        } else if !harmonics.contains(&k) {
            p_noise += psd[k];
        }
    }
    if p_noise <= T::zero() {
        // Numerically silent band; report a very large ratio instead of inf.
        return Ok(T::of(300.0));
    }
    Ok(db10(p_sig / p_noise))
}

/// Signal-to-noise-and-distortion report. `in_band` treats all
/// non-fundamental bins inside the band as noise plus distortion; the
/// `wideband` variant extends the sum to the full Nyquist interval
/// (harmonics included, DC excluded).
#[derive(Debug, Clone, Copy)]
pub struct SndrReport<T> {
    pub in_band_db: T,
    pub wideband_db: T,
    /// Power captured in tracked harmonic bins (guarded like the signal).
    pub harmonic_power: T,
}

pub fn compute_sndr<T: Scalar>(
    spec: &Spectrum<T>,
    band: &BandSpec<T>,
    harmonics: usize,
) -> Result<SndrReport<T>, MetricsError> {
    let (lo, hi) = band.band_bins(spec);
    if band.signal_bins.is_empty() {
        return Err(MetricsError::EmptySignalBins);
    }
    let psd = spec.psd();

    let mut p_sig = T::zero();
    let mut p_inband = T::zero();
    for k in lo.max(band.dc_guard_bins + 1)..=hi {
        if band.signal_bins.contains(&k) {
            p_sig += psd[k];
        } else {
            p_inband += psd[k];
        }
    }
    let mut p_wide = T::zero();
    for (k, &p) in psd.iter().enumerate().skip(band.dc_guard_bins + 1) {
        if !band.signal_bins.contains(&k) {
            p_wide += p;
        }
    }
    let mut tracked = band.clone();
    tracked.tracked_harmonics = harmonics;
    let harmonic_power = tracked
        .harmonic_bins(psd.len())
        .into_iter()
        .fold(T::zero(), |a, k| a + psd[k]);
    let safe = |p: T| if p <= T::zero() { T::of(1e-30) } else { p };
    Ok(SndrReport {
        in_band_db: db10(p_sig / safe(p_inband)),
        wideband_db: db10(p_sig / safe(p_wide)),
        harmonic_power,
    })
}

/// One measured point of an input sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint<T> {
    pub input_dbm: T,
    pub output_dbm: T,
    pub snr_db: T,
    pub sndr_db: T,
    pub stable: bool,
}

/// Input/output sweep with strictly increasing input power.
#[derive(Debug, Clone)]
pub struct SweepResult<T> {
    points: Vec<SweepPoint<T>>,
}

impl<T: Scalar> SweepResult<T> {
    pub fn new(points: Vec<SweepPoint<T>>) -> Result<Self, MetricsError> {
        if points.windows(2).any(|w| w[1].input_dbm <= w[0].input_dbm) {
            return Err(MetricsError::NonMonotonicSweep);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[SweepPoint<T>] {
        &self.points
    }

    /// CSV columns `input_dbm,output_dbm,snr_db,sndr_db,stable`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MetricsError> {
        writeln!(w, "input_dbm,output_dbm,snr_db,sndr_db,stable")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.input_dbm.as_f64(),
                p.output_dbm.as_f64(),
                p.snr_db.as_f64(),
                p.sndr_db.as_f64(),
                p.stable
            )?;
        }
        Ok(())
    }
}

/// Peak-SNR search over an ascending amplitude grid: runs the supplied
/// simulator per amplitude, skips unstable points, returns the argmax.
pub fn peak_snr_search<T: Scalar, F>(
    mut run: F,
    amp_grid_dbfs: &[T],
) -> Result<(T, T), MetricsError>
where
    F: FnMut(T) -> Option<T>,
{
    let mut best: Option<(T, T)> = None;
    for &amp in amp_grid_dbfs {
        if let Some(snr) = run(amp) {
            if best.map_or(true, |(_, s)| snr > s) {
                best = Some((amp, snr));
            }
        }
    }
    best.ok_or(MetricsError::AllUnstable)
}

/// 1 dB compression estimate.
#[derive(Debug, Clone, Copy)]
pub struct P1dbReport<T> {
    /// Input-referred 1 dB compression point (dBm); `None` when the sweep
    /// never compresses (open-ended).
    pub p1db_in_dbm: Option<T>,
    pub fit_slope: T,
    pub fit_intercept: T,
    pub linear_points: usize,
}

/// Fit the linear region of an input/output sweep and locate the input
/// power where the output falls 1 dB below the fit, interpolating between
/// samples.
///
/// The linear region is the longest run of consecutive points whose local
/// slope stays within 1.0 +- 0.05 dB/dB, searched from the low-power end.
pub fn estimate_p1db<T: Scalar>(sweep: &SweepResult<T>) -> Result<P1dbReport<T>, MetricsError> {
    let pts = sweep.points();
    if pts.len() < 5 {
        return Err(MetricsError::SweepTooShort {
            need: 5,
            got: pts.len(),
        });
    }

    // Longest run of unit-slope segments.
    let tol = T::of(0.05);
    let mut best_run = (0usize, 0usize); // (start, len) in segment indices
    let mut run_start = 0usize;
    let mut run_len = 0usize;
    for i in 0..pts.len() - 1 {
        let slope = (pts[i + 1].output_dbm - pts[i].output_dbm)
            / (pts[i + 1].input_dbm - pts[i].input_dbm);
        if (slope - T::one()).abs() <= tol {
            if run_len == 0 {
                run_start = i;
            }
            run_len += 1;
            if run_len > best_run.1 {
                best_run = (run_start, run_len);
            }
        } else {
            run_len = 0;
        }
    }
    if best_run.1 < 2 {
        return Err(MetricsError::NoLinearRegion);
    }
    let lin: Vec<SweepPoint<T>> = pts[best_run.0..=best_run.0 + best_run.1].to_vec();

    let fit = |points: &[SweepPoint<T>]| {
        let n = T::from_usize(points.len()).unwrap();
        let sx = points.iter().fold(T::zero(), |a, p| a + p.input_dbm);
        let sy = points.iter().fold(T::zero(), |a, p| a + p.output_dbm);
        let sxx = points
            .iter()
            .fold(T::zero(), |a, p| a + p.input_dbm * p.input_dbm);
        let sxy = points
            .iter()
            .fold(T::zero(), |a, p| a + p.input_dbm * p.output_dbm);
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        (slope, intercept)
    };

    // Compression only ever pulls the output down, so refit iteratively
    // while trimming points that fall below the current line; this stops
    // the onset of compression from tilting the fit.
    let mut lin = lin;
    let (mut slope, mut intercept) = fit(&lin);
    for _ in 0..4 {
        let kept: Vec<SweepPoint<T>> = lin
            .iter()
            .filter(|p| p.output_dbm - (slope * p.input_dbm + intercept) >= T::of(-0.02))
            .copied()
            .collect();
        if kept.len() < 3 || kept.len() == lin.len() {
            break;
        }
        lin = kept;
        let f = fit(&lin);
        slope = f.0;
        intercept = f.1;
    }

    // First crossing of -1 dB deviation beyond the linear region.
    let one = T::one();
    let mut p1db = None;
    let dev = |p: &SweepPoint<T>| p.output_dbm - (slope * p.input_dbm + intercept);
    for w in pts.windows(2) {
        let d0 = dev(&w[0]);
        let d1 = dev(&w[1]);
        if d0 > -one && d1 <= -one {
            let t = (-one - d0) / (d1 - d0);
            p1db = Some(w[0].input_dbm + t * (w[1].input_dbm - w[0].input_dbm));
            break;
        }
    }
    Ok(P1dbReport {
        p1db_in_dbm: p1db,
        fit_slope: slope,
        fit_intercept: intercept,
        linear_points: lin.len(),
    })
}

/// End-to-end dynamic range: input-referred P1dB minus the input-referred
/// noise floor, in dB.
pub fn dynamic_range<T: Scalar>(p1db_in_dbm: T, noise_floor_dbm: T) -> Result<T, MetricsError> {
    if !(p1db_in_dbm > noise_floor_dbm) {
        return Err(MetricsError::InvertedRange {
            p1db_dbm: p1db_in_dbm.as_f64(),
            floor_dbm: noise_floor_dbm.as_f64(),
        });
    }
    Ok(p1db_in_dbm - noise_floor_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{add_white_noise, generate_tone};
    use crate::spectrum::{estimate_psd, Window};

    fn tone_spectrum(
        freq: f64,
        amp: f64,
        noise_var: f64,
        n: usize,
        fs: f64,
    ) -> Spectrum<f64> {
        let sig = generate_tone::<f64>(freq, amp, 0.0, n, fs).unwrap();
        let sig = add_white_noise(&sig, noise_var, 17).unwrap();
        estimate_psd(&sig, n, Window::Rectangular, 1).unwrap()
    }

    #[test]
    fn pure_tone_snr_is_huge() {
        let n = 4096;
        let fs = 1e6;
        let freq = 129.0 * fs / n as f64;
        let spec = tone_spectrum(freq, 0.5, 0.0, n, fs);
        let band = BandSpec::new(&spec, freq, 100e3).unwrap();
        let snr = compute_snr(&spec, &band).unwrap();
        assert!(snr > 120.0, "noise-free tone SNR {snr}");
    }

    #[test]
    fn white_noise_snr_matches_analytic_partition() {
        // Tone + white noise: in-band noise = variance * f_band/(fs/2).
        let n = 1 << 16;
        let fs = 10e6;
        let freq = 3001.0 * fs / n as f64;
        let amp = 0.3;
        let var = 1e-4;
        let f_band = 2e6;
        let spec = tone_spectrum(freq, amp, var, n, fs);
        let band = BandSpec::new(&spec, freq, f_band).unwrap();
        let snr = compute_snr(&spec, &band).unwrap();
        let expect = 10.0 * ((amp * amp / 2.0) / (var * f_band / (fs / 2.0))).log10();
        assert!(
            (snr - expect).abs() < 0.5,
            "measured {snr} vs analytic {expect}"
        );
    }

    #[test]
    fn snr_invariant_under_scaling() {
        let n = 8192;
        let fs = 1e6;
        let freq = 513.0 * fs / n as f64;
        let spec = tone_spectrum(freq, 0.4, 1e-5, n, fs);
        let band = BandSpec::new(&spec, freq, 200e3).unwrap();
        let a = compute_snr(&spec, &band).unwrap();
        let scaled = spec.scaled(1e-3, crate::spectrum::PsdUnit::Watts);
        let b = compute_snr(&scaled, &band).unwrap();
        assert!((a - b).abs() < 1e-9, "SNR must be scale invariant");
    }

    #[test]
    fn sndr_equals_snr_without_distortion() {
        let n = 1 << 14;
        let fs = 1e6;
        let freq = 1001.0 * fs / n as f64;
        let spec = tone_spectrum(freq, 0.4, 1e-6, n, fs);
        let band = BandSpec::new(&spec, freq, 300e3).unwrap();
        let snr = compute_snr(&spec, &band).unwrap();
        let sndr = compute_sndr(&spec, &band, 5).unwrap();
        assert!(
            (snr - sndr.in_band_db).abs() < 0.1,
            "SNR {snr} vs SNDR {}",
            sndr.in_band_db
        );
        assert!(sndr.in_band_db >= sndr.wideband_db - 1e-9);
    }

    #[test]
    fn sndr_catches_cubic_distortion() {
        // Third-order nonlinearity over a fixed noise floor: SNDR falls
        // below SNR, and in the distortion-dominated regime the gap grows
        // 3 dB per dB of drive (HD3 power rises as the 6th power of the
        // amplitude, i.e. 3 dB per amplitude-dB, over constant noise).
        let n = 1 << 14;
        let fs = 1e6;
        let freq = 301.0 * fs / n as f64;
        let gap_at = |amp: f64| {
            let sig = generate_tone::<f64>(freq, amp, 0.0, n, fs).unwrap();
            let warped = sig.map(|x| x - 0.3 * x * x * x);
            let warped = add_white_noise(&warped, 1e-9, 3).unwrap();
            let spec = estimate_psd(&warped, n, Window::Rectangular, 1).unwrap();
            let band = BandSpec::new(&spec, freq, 450e3).unwrap();
            let snr = compute_snr(&spec, &band).unwrap();
            let sndr = compute_sndr(&spec, &band, 3).unwrap();
            snr - sndr.in_band_db
        };
        let g1 = gap_at(0.30);
        let g2 = gap_at(0.30 * 10f64.powf(1.0 / 20.0));
        assert!(g1 > 10.0, "cubic should cost SNDR, gap {g1}");
        let growth = g2 - g1;
        assert!(
            (growth - 3.0).abs() < 0.5,
            "gap growth {growth} dB per 1 dB drive, expected ~3"
        );
    }

    #[test]
    fn p1db_recovers_analytic_compression_point() {
        // y = a1 x + a3 x^3 compresses 1 dB at A^2 = (4/3)(1 - 10^(-1/20))|a1/a3|.
        let a1 = 1.0_f64;
        let a3 = -0.5_f64;
        let r = 50.0;
        let a1db = (4.0 / 3.0) * (1.0 - 10f64.powf(-0.05)) * (a1 / a3.abs());
        let p1db_analytic_dbm =
            10.0 * ((a1db / 2.0) / r * 1e3).log10();

        let mut pts = Vec::new();
        for k in 0..90 {
            let pin_dbm = -35.0 + 0.5 * k as f64;
            let a = (2.0 * r * 10f64.powf((pin_dbm - 30.0) / 10.0)).sqrt();
            // Fundamental amplitude of a1 x + a3 x^3 driven by a sine.
            let fund = a1 * a + 0.75 * a3 * a * a * a;
            let pout_dbm = 10.0 * ((fund * fund / 2.0) / r * 1e3).log10();
            pts.push(SweepPoint {
                input_dbm: pin_dbm,
                output_dbm: pout_dbm,
                snr_db: 100.0,
                sndr_db: 100.0,
                stable: true,
            });
        }
        let sweep = SweepResult::new(pts).unwrap();
        let report = estimate_p1db(&sweep).unwrap();
        let got = report.p1db_in_dbm.expect("compression reached");
        assert!(
            (got - p1db_analytic_dbm).abs() < 0.2,
            "P1dB {got} dBm vs analytic {p1db_analytic_dbm} dBm"
        );
        assert!(
            (report.fit_slope - 1.0).abs() < 0.005,
            "slope {}",
            report.fit_slope
        );
    }

    #[test]
    fn perfectly_linear_sweep_is_open_ended() {
        let pts: Vec<SweepPoint<f64>> = (0..20)
            .map(|k| SweepPoint {
                input_dbm: -40.0 + 2.0 * k as f64,
                output_dbm: -35.0 + 2.0 * k as f64,
                snr_db: 80.0,
                sndr_db: 80.0,
                stable: true,
            })
            .collect();
        let report = estimate_p1db(&SweepResult::new(pts).unwrap()).unwrap();
        assert!(report.p1db_in_dbm.is_none(), "no compression in a pure line");
    }

    #[test]
    fn dynamic_range_examples() {
        assert_eq!(dynamic_range(-5.0, -86.0).unwrap(), 81.0);
        assert!(matches!(
            dynamic_range(-86.0, -86.0),
            Err(MetricsError::InvertedRange { .. })
        ));
    }

    #[test]
    fn peak_search_returns_single_point_grid() {
        let got = peak_snr_search(|amp| Some(amp * 2.0), &[-6.0]).unwrap();
        assert_eq!(got, (-6.0, -12.0));
        let none: Result<_, _> = peak_snr_search(|_: f64| None, &[-6.0, -3.0]);
        assert!(matches!(none, Err(MetricsError::AllUnstable)));
    }

    #[test]
    fn sweep_requires_increasing_input() {
        let pts = vec![
            SweepPoint {
                input_dbm: 0.0_f64,
                output_dbm: 0.0,
                snr_db: 0.0,
                sndr_db: 0.0,
                stable: true,
            };
            2
        ];
        assert!(matches!(
            SweepResult::new(pts),
            Err(MetricsError::NonMonotonicSweep)
        ));
    }
}
