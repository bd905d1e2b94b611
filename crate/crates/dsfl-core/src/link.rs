//! Behavioral model of the digital RF-over-fiber chain: down-conversion
//! mixers, the on-off-keyed optical channel with photodiode/TIA receiver,
//! comparator plus retiming flip-flop, reconstruction filtering and
//! up-conversion back to the RF carrier.
//!
//! Analog stages run at an oversampled rate relative to the bitstream; the
//! chain picks the smallest multiple of the modulator's input rate that
//! also represents the RF carrier.

use std::io::Write;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use thiserror::Error;

use crate::ciff::RealizationKind;
use crate::filter::{
    apply_cascade, brickwall_bandpass, butterworth_lowpass, one_pole_lowpass,
};
use crate::scalar::Scalar;
use crate::signal::{ComplexSignal, RealSignal};
use crate::sim::{simulate, BitstreamResult, ModulatorConfig, SimError, CT_INPUT_OVERSAMPLING};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("bad link config: {0}")]
    BadConfig(String),
    #[error("single-mixer IF {f_if} Hz is below half the signal bandwidth {f_b} Hz")]
    SidebandOverlap { f_if: f64, f_b: f64 },
    #[error("laser bias {i_bias} A does not exceed the threshold {i_threshold} A: output stays dark")]
    LaserBelowThreshold { i_bias: f64, i_threshold: f64 },
    #[error("rf sample rate {rf_rate} Hz is not an integer multiple of the modulator rate {need} Hz")]
    RateNotCommensurate { rf_rate: f64, need: f64 },
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        source: SimError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerMode {
    Single,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    /// Causal cascaded-biquad Butterworth (bench-like behavior).
    Butterworth,
    /// Zero-phase brick-wall mask (ideal-instrument paths).
    Brickwall,
}

/// Anti-alias / reconstruction low-pass specification.
#[derive(Debug, Clone, Copy)]
pub struct LpfSpec<T> {
    pub cutoff: T,
    pub order: usize,
    pub kind: FilterKind,
}

impl<T: Scalar> LpfSpec<T> {
    /// Conventional choice: sixth-order Butterworth at 1.2x the bandwidth.
    pub fn for_bandwidth(f_b: T) -> Self {
        Self {
            cutoff: T::of(1.2) * f_b,
            order: 6,
            kind: FilterKind::Butterworth,
        }
    }

    fn apply(&self, x: &[T], fs: T) -> Vec<T> {
        match self.kind {
            FilterKind::Butterworth => {
                let sections = butterworth_lowpass(self.order, self.cutoff, fs);
                apply_cascade(&sections, x)
            }
            FilterKind::Brickwall => {
                let sig = RealSignal::new(x.to_vec(), fs).expect("non-empty stage");
                brickwall_bandpass(&sig, T::zero(), self.cutoff)
                    .samples()
                    .to_vec()
            }
        }
    }
}

/// Laser driver, fiber and receiver front-end settings.
#[derive(Debug, Clone)]
pub struct OpticalConfig<T> {
    /// Laser bias current (A); set from `v_ref / r2` by the bias network.
    pub i_bias: T,
    /// Laser threshold current (A), typically 9 mA.
    pub i_threshold: T,
    pub v_ref: T,
    pub r2: T,
    /// Fiber/connector loss applied to optical power, dB.
    pub attenuation_db: T,
    /// Variance of additive detector noise at the TIA output (V^2 per
    /// analog-rate sample).
    pub detector_noise_variance: T,
    /// One-pole TIA bandwidth; `None` models an unlimited front end.
    pub tia_bandwidth: Option<T>,
    /// Transimpedance (ohms), 1 kOhm in the prototype.
    pub tia_transimpedance: T,
    pub noise_seed: u64,
    ///额fixed per-block power entries for the budget report (name, mW).
    pub block_powers_mw: Vec<(String, T)>,
}

impl<T: Scalar> OpticalConfig<T> {
    /// Bias network: `i_bias = v_ref / r2`.
    pub fn from_bias_network(v_ref: T, r2: T) -> Self {
        Self {
            i_bias: v_ref / r2,
            i_threshold: T::of(9e-3),
            v_ref,
            r2,
            attenuation_db: T::zero(),
            detector_noise_variance: T::zero(),
            tia_bandwidth: None,
            tia_transimpedance: T::of(1e3),
            noise_seed: 0,
            block_powers_mw: Vec::new(),
        }
    }

    /// Prototype values: 2.5 V reference, 100 ohm potentiometer (25 mA
    /// bias), 1 kOhm TIA limited to 35 MHz by the 70 MHz-GBW op-amp.
    pub fn prototype() -> Self {
        let mut cfg = Self::from_bias_network(T::of(2.5), T::of(100.0));
        cfg.tia_bandwidth = Some(T::of(35e6));
        cfg
    }

    /// TIA output swing for a fully-on laser.
    fn v_on(&self) -> T {
        let lin = T::of(10.0).powf(-self.attenuation_db / T::of(10.0));
        (self.i_bias - self.i_threshold) * lin * self.tia_transimpedance
    }
}

/// Full transmitter/receiver chain settings.
#[derive(Debug, Clone)]
pub struct LinkConfig<T> {
    /// Local oscillator frequency.
    pub f_lo: T,
    /// RF carrier (Larmor) frequency.
    pub f_l: T,
    /// Signal bandwidth.
    pub f_b: T,
    /// LO phase noise table `(offset_hz, dBc/Hz)`; `None` for a clean LO.
    pub lo_phase_noise: Option<Vec<(T, T)>>,
    pub lo_noise_seed: u64,
    pub mixer_mode: MixerMode,
    pub lpf: LpfSpec<T>,
    /// Memoryless third-order nonlinearity `(a1, a3)` at the RF input.
    pub nonlinearity: (T, T),
    pub optical: OpticalConfig<T>,
    /// Receiver retiming delay (s).
    pub retime_delay: T,
    /// Fiber length in metres (propagation-mismatch bookkeeping).
    pub fiber_length: T,
}

impl<T: Scalar> LinkConfig<T> {
    pub fn new(f_lo: T, f_l: T, f_b: T) -> Self {
        Self {
            f_lo,
            f_l,
            f_b,
            lo_phase_noise: None,
            lo_noise_seed: 0,
            mixer_mode: MixerMode::Single,
            lpf: LpfSpec::for_bandwidth(f_b),
            nonlinearity: (T::one(), T::zero()),
            optical: OpticalConfig::prototype(),
            retime_delay: T::zero(),
            fiber_length: T::of(2.0),
        }
    }

    fn validate(&self) -> Result<(), LinkError> {
        if !(self.f_lo > T::zero()) || !(self.f_l > T::zero()) || !(self.f_b > T::zero()) {
            return Err(LinkError::BadConfig(
                "f_lo, f_l and f_b must be positive".into(),
            ));
        }
        if self.mixer_mode == MixerMode::Single {
            let f_if = (self.f_l - self.f_lo).abs();
            if f_if < self.f_b / T::of(2.0) {
                return Err(LinkError::SidebandOverlap {
                    f_if: f_if.as_f64(),
                    f_b: self.f_b.as_f64(),
                });
            }
        }
        if !(self.nonlinearity.0 > T::zero()) {
            return Err(LinkError::BadConfig("a1 must be positive".into()));
        }
        Ok(())
    }
}

/// Output of the down-conversion stage.
#[derive(Debug, Clone)]
pub enum MixOutput<T> {
    /// Real IF signal (single mixer).
    Real(RealSignal<T>),
    /// Complex zero-IF baseband (quadrature mixer).
    Complex(ComplexSignal<T>),
}

/// Synthesize an LO phase process whose spectrum follows the tabulated
/// phase-noise profile (log-frequency/dB interpolation), by shaping white
/// Gaussian bins in the frequency domain.
fn lo_phase_process<T: Scalar>(
    table: &[(T, T)],
    n: usize,
    fs: T,
    seed: u64,
) -> Vec<T> {
    let mut pts: Vec<(T, T)> = table.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let l_db = |f: T| -> T {
        if f <= pts[0].0 {
            pts[0].1
        } else if f >= pts.last().unwrap().0 {
            pts.last().unwrap().1
        } else {
            let mut v = pts.last().unwrap().1;
            for w in pts.windows(2) {
                if f >= w[0].0 && f <= w[1].0 {
                    let t = (f.ln() - w[0].0.ln()) / (w[1].0.ln() - w[0].0.ln());
                    v = w[0].1 + (w[1].1 - w[0].1) * t;
                    break;
                }
            }
            v
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let nf = T::from_usize(n).unwrap();
    let df = fs / nf;
    let mut spec = vec![Complex::new(T::zero(), T::zero()); n];
    for k in 1..n / 2 {
        let f = T::from_usize(k).unwrap() * df;
        // One-sided phase PSD = 2 L(f); bin variance = PSD * df.
        let s_phi = T::of(2.0) * T::of(10.0).powf(l_db(f) / T::of(10.0));
        let sigma = (s_phi * df / T::of(2.0)).sqrt() * nf / T::of(2.0).sqrt();
        let re = T::of(normal.sample(&mut rng)) * sigma;
        let im = T::of(normal.sample(&mut rng)) * sigma;
        spec[k] = Complex::new(re, im);
        spec[n - k] = Complex::new(re, -im);
    }
    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(n);
    ifft.process(&mut spec);
    let scale = T::one() / nf;
    spec.iter().map(|c| c.re * scale).collect()
}

/// Frequency down-conversion with ideal multiplying mixers followed by the
/// configured low-pass. Single mode produces a real IF signal at
/// `|f_l - f_lo|`; quadrature mode produces complex baseband centred at DC
/// with the opposite sideband cancelled.
pub fn mix_down<T: Scalar>(
    rf: &RealSignal<T>,
    cfg: &LinkConfig<T>,
) -> Result<MixOutput<T>, LinkError> {
    cfg.validate()?;
    let fs = rf.sample_rate();
    let n = rf.len();
    let w = T::TAU() * cfg.f_lo / fs;
    let phase: Option<Vec<T>> = cfg
        .lo_phase_noise
        .as_ref()
        .map(|t| lo_phase_process(t, n, fs, cfg.lo_noise_seed));
    let phi = |i: usize| phase.as_ref().map_or(T::zero(), |p| p[i]);

    match cfg.mixer_mode {
        MixerMode::Single => {
            let mixed: Vec<T> = rf
                .samples()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let arg = w * T::from_usize(i).unwrap() + phi(i);
                    T::of(2.0) * x * arg.cos()
                })
                .collect();
            let filtered = cfg.lpf.apply(&mixed, fs);
            Ok(MixOutput::Real(
                RealSignal::new(filtered, fs).expect("non-empty"),
            ))
        }
        MixerMode::Quadrature => {
            let mut i_arm = Vec::with_capacity(n);
            let mut q_arm = Vec::with_capacity(n);
            for (i, &x) in rf.samples().iter().enumerate() {
                let arg = w * T::from_usize(i).unwrap() + phi(i);
                i_arm.push(T::of(2.0) * x * arg.cos());
                q_arm.push(-T::of(2.0) * x * arg.sin());
            }
            let i_f = cfg.lpf.apply(&i_arm, fs);
            let q_f = cfg.lpf.apply(&q_arm, fs);
            let samples = i_f
                .into_iter()
                .zip(q_f)
                .map(|(re, im)| Complex::new(re, im))
                .collect();
            Ok(MixOutput::Complex(
                ComplexSignal::new(samples, fs).expect("non-empty"),
            ))
        }
    }
}

/// Analog-rate oversampling of the optical/receive stages relative to the
/// bitstream clock.
pub const ANALOG_OVERSAMPLING: usize = 4;

/// Drive the laser with the bitstream (on-off keying), propagate, detect
/// and amplify: returns the TIA output voltage centred about the comparator
/// threshold (AC-coupled mid-level).
pub fn ook_channel<T: Scalar>(
    bits: &BitstreamResult<T>,
    cfg: &OpticalConfig<T>,
) -> Result<RealSignal<T>, LinkError> {
    if !(cfg.i_bias > cfg.i_threshold) {
        return Err(LinkError::LaserBelowThreshold {
            i_bias: cfg.i_bias.as_f64(),
            i_threshold: cfg.i_threshold.as_f64(),
        });
    }
    let v_on = cfg.v_on();
    let rate = bits.sample_rate * T::from_usize(ANALOG_OVERSAMPLING).unwrap();
    let mut analog = Vec::with_capacity(bits.bits.len() * ANALOG_OVERSAMPLING);
    for &b in &bits.bits {
        let level = if b > 0 { v_on } else { T::zero() };
        for _ in 0..ANALOG_OVERSAMPLING {
            analog.push(level);
        }
    }
    if let Some(bw) = cfg.tia_bandwidth {
        analog = one_pole_lowpass(&analog, bw, rate);
    }
    if cfg.detector_noise_variance > T::zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
        rng.set_stream(7);
        let normal = Normal::new(0.0, cfg.detector_noise_variance.as_f64().sqrt()).unwrap();
        for a in &mut analog {
            *a += T::of(normal.sample(&mut rng));
        }
    }
    let mid = v_on / T::of(2.0);
    for a in &mut analog {
        *a -= mid;
    }
    Ok(RealSignal::new(analog, rate).expect("non-empty"))
}

/// Retiming diagnostics from the comparator/DFF stage.
#[derive(Debug, Clone, Copy)]
pub struct RetimeReport<T> {
    /// Smallest distance between a sampling instant and the nearest data
    /// transition, in seconds.
    pub min_margin_s: T,
    /// True когда a sample landed inside a transition settling window.
    pub margin_violation: bool,
    /// Clock-versus-data propagation mismatch range for the configured
    /// fiber length (5 to 5.5 ns per metre).
    pub mismatch_range_s: (T, T),
}

/// Sign comparator followed by a clocked flip-flop: re-samples the analog
/// waveform on clock edges shifted by `delay`, stripping accumulated
/// timing jitter.
pub fn comparator_retime<T: Scalar>(
    analog: &RealSignal<T>,
    clock_f: T,
    delay: T,
    fiber_length_m: T,
) -> Result<(BitstreamResult<T>, RetimeReport<T>), LinkError> {
    let rate = analog.sample_rate();
    let per_bit_f = rate / clock_f;
    let per_bit = per_bit_f.round().as_f64() as usize;
    if per_bit == 0
        || ((per_bit_f - T::from_usize(per_bit).unwrap()) / per_bit_f).abs() > T::of(1e-6)
    {
        return Err(LinkError::RateNotCommensurate {
            rf_rate: rate.as_f64(),
            need: clock_f.as_f64(),
        });
    }
    let offset_f = delay * rate;
    let offset = offset_f.round().as_f64() as isize;
    let x = analog.samples();

    // Transition instants of the comparator output (sign changes).
    let mut transitions = Vec::new();
    for i in 1..x.len() {
        if (x[i] >= T::zero()) != (x[i - 1] >= T::zero()) {
            transitions.push(i);
        }
    }

    let n_bits = x.len() / per_bit;
    let mut bits = Vec::with_capacity(n_bits);
    let mut min_margin_samples = T::of(f64::MAX);
    for k in 0..n_bits {
        let idx = (k * per_bit) as isize + offset;
        let idx = idx.rem_euclid(x.len() as isize) as usize;
        bits.push(if x[idx] >= T::zero() { 1 } else { -1 });
        if !transitions.is_empty() {
            let nearest = transitions
                .iter()
                .map(|&t| {
                    let d = (t as isize - idx as isize).unsigned_abs();
                    T::from_usize(d).unwrap()
                })
                .fold(T::of(f64::MAX), |a, b| if b < a { b } else { a });
            if nearest < min_margin_samples {
                min_margin_samples = nearest;
            }
        }
    }
    let min_margin_s = if transitions.is_empty() {
        T::one() / (T::of(2.0) * clock_f)
    } else {
        min_margin_samples / rate
    };
    let report = RetimeReport {
        min_margin_s,
        // Violation when sampling lands within one analog sample of an edge.
        margin_violation: !transitions.is_empty()
            && min_margin_samples < T::one(),
        mismatch_range_s: (
            fiber_length_m * T::of(5.0e-9),
            fiber_length_m * T::of(5.5e-9),
        ),
    };
    Ok((
        BitstreamResult {
            bits,
            delta: T::of(2.0),
            sample_rate: clock_f,
            stable: true,
            max_state: T::zero(),
        },
        report,
    ))
}

/// Low-pass reconstruction of the bitstream followed by up-conversion to
/// the RF carrier, band-limited to `[f_l - f_b, f_l + f_b]`.
pub fn reconstruct_and_upconvert<T: Scalar>(
    bits: &BitstreamResult<T>,
    cfg: &LinkConfig<T>,
) -> Result<RealSignal<T>, LinkError> {
    cfg.validate()?;
    let mult = rf_oversampling_factor(cfg, bits.sample_rate);
    let rate = bits.sample_rate * T::from_usize(mult).unwrap();
    let half = bits.delta / T::of(2.0);
    let mut analog = Vec::with_capacity(bits.bits.len() * mult);
    for &b in &bits.bits {
        let level = half * T::of(b as f64);
        for _ in 0..mult {
            analog.push(level);
        }
    }
    let recon = cfg.lpf.apply(&analog, rate);
    let w = T::TAU() * cfg.f_lo / rate;
    let rf: Vec<T> = recon
        .iter()
        .enumerate()
        .map(|(i, &x)| T::of(2.0) * x * (w * T::from_usize(i).unwrap()).cos())
        .collect();
    let sig = RealSignal::new(rf, rate).expect("non-empty");
    Ok(brickwall_bandpass(
        &sig,
        cfg.f_l - cfg.f_b,
        cfg.f_l + cfg.f_b,
    ))
}

/// Upconvert a complex baseband pair: `RF = I 2cos - Q 2sin`, band-limited.
fn upconvert_iq<T: Scalar>(
    i_bits: &BitstreamResult<T>,
    q_bits: &BitstreamResult<T>,
    cfg: &LinkConfig<T>,
) -> Result<RealSignal<T>, LinkError> {
    let mult = rf_oversampling_factor(cfg, i_bits.sample_rate);
    let rate = i_bits.sample_rate * T::from_usize(mult).unwrap();
    let half = i_bits.delta / T::of(2.0);
    let expand = |bits: &BitstreamResult<T>| -> Vec<T> {
        let mut v = Vec::with_capacity(bits.bits.len() * mult);
        for &b in &bits.bits {
            let level = half * T::of(b as f64);
            for _ in 0..mult {
                v.push(level);
            }
        }
        v
    };
    let i_rec = cfg.lpf.apply(&expand(i_bits), rate);
    let q_rec = cfg.lpf.apply(&expand(q_bits), rate);
    // Complex-envelope modulation: no image split, so no 2x make-up gain.
    let w = T::TAU() * cfg.f_lo / rate;
    let rf: Vec<T> = i_rec
        .iter()
        .zip(&q_rec)
        .enumerate()
        .map(|(idx, (&i, &q))| {
            let arg = w * T::from_usize(idx).unwrap();
            i * arg.cos() - q * arg.sin()
        })
        .collect();
    let sig = RealSignal::new(rf, rate).expect("non-empty");
    Ok(brickwall_bandpass(
        &sig,
        cfg.f_l - cfg.f_b,
        cfg.f_l + cfg.f_b,
    ))
}

/// Smallest bitstream-rate multiple whose Nyquist covers the RF carrier
/// with margin (at least the 4x analog oversampling).
pub fn rf_oversampling_factor<T: Scalar>(cfg: &LinkConfig<T>, bit_rate: T) -> usize {
    let need = T::of(2.5) * (cfg.f_l + cfg.f_b) / bit_rate;
    let m = need.ceil().as_f64() as usize;
    m.max(ANALOG_OVERSAMPLING)
}

/// Pointwise third-order nonlinearity `y = a1 x + a3 x^3`.
pub fn cubic_nonlinearity<T: Scalar>(
    sig: &RealSignal<T>,
    a1: T,
    a3: T,
) -> Result<RealSignal<T>, LinkError> {
    if !(a1 > T::zero()) {
        return Err(LinkError::BadConfig("a1 must be positive".into()));
    }
    Ok(sig.map(|x| a1 * x + a3 * x * x * x))
}

/// Dissipation report for the transmitter power budget.
#[derive(Debug, Clone)]
pub struct PowerReport<T> {
    pub entries: Vec<(String, T)>,
    pub total_mw: T,
}

/// Bias-network dissipation `i_bias * v_ref` plus configured block powers.
pub fn power_budget<T: Scalar>(cfg: &OpticalConfig<T>) -> PowerReport<T> {
    let bias_mw = cfg.i_bias * cfg.v_ref * T::of(1e3);
    let mut entries = vec![("bias-network".to_string(), bias_mw)];
    entries.extend(cfg.block_powers_mw.iter().cloned());
    let total_mw = entries.iter().fold(T::zero(), |a, (_, p)| a + *p);
    PowerReport { entries, total_mw }
}

/// One captured intermediate signal of a chain run.
#[derive(Debug, Clone)]
pub enum StageData<T> {
    Real(RealSignal<T>),
    Complex(ComplexSignal<T>),
    Bits(BitstreamResult<T>),
}

/// Named intermediate signals from every stage of a chain execution.
#[derive(Debug, Clone)]
pub struct ChainTrace<T> {
    pub stages: Vec<(String, StageData<T>)>,
    pub retime: Vec<RetimeReport<T>>,
}

impl<T: Scalar> ChainTrace<T> {
    pub fn stage(&self, name: &str) -> Option<&StageData<T>> {
        self.stages
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
    }

    pub fn output(&self) -> &RealSignal<T> {
        match self.stage("rf-out") {
            Some(StageData::Real(sig)) => sig,
            _ => unreachable!("chain always captures rf-out"),
        }
    }

    /// Write one CSV per stage plus a manifest listing name, rate and
    /// length, into `dir`.
    pub fn export_csv(&self, dir: &std::path::Path) -> Result<(), LinkError> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = std::fs::File::create(dir.join("manifest.csv"))?;
        writeln!(manifest, "stage,sample_rate_hz,length,file")?;
        for (name, data) in &self.stages {
            let file = format!("{name}.csv");
            let f = std::fs::File::create(dir.join(&file))?;
            let mut f = std::io::BufWriter::new(f);
            match data {
                StageData::Real(sig) => {
                    sig.write_csv(&mut f)
                        .map_err(|e| LinkError::BadConfig(e.to_string()))?;
                    writeln!(
                        manifest,
                        "{name},{},{},{file}",
                        sig.sample_rate().as_f64(),
                        sig.len()
                    )?;
                }
                StageData::Complex(sig) => {
                    sig.write_csv(&mut f)
                        .map_err(|e| LinkError::BadConfig(e.to_string()))?;
                    writeln!(
                        manifest,
                        "{name},{},{},{file}",
                        sig.sample_rate().as_f64(),
                        sig.len()
                    )?;
                }
                StageData::Bits(bits) => {
                    bits.write_csv(&mut f)
                        .map_err(|e| LinkError::BadConfig(e.to_string()))?;
                    writeln!(
                        manifest,
                        "{name},{},{},{file}",
                        bits.sample_rate.as_f64(),
                        bits.bits.len()
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Execute every stage of the link on an RF input.
///
/// The RF sample rate must be an integer multiple of the modulator input
/// rate (`f_s` for discrete-time loops, `4 f_s` for continuous-time ones).
/// Quadrature mode runs two matched modulators and optical channels for the
/// I and Q rails with independent noise streams.
pub fn run_chain<T: Scalar>(
    rf_in: &RealSignal<T>,
    link: &LinkConfig<T>,
    modulator: &ModulatorConfig<T>,
) -> Result<ChainTrace<T>, LinkError> {
    link.validate()?;
    let mod_rate = match modulator.kind {
        RealizationKind::DiscreteTime => modulator.f_s_actual,
        RealizationKind::ContinuousTime => {
            modulator.f_s_actual * T::from_usize(CT_INPUT_OVERSAMPLING).unwrap()
        }
    };
    let ratio_f = rf_in.sample_rate() / mod_rate;
    let ratio = ratio_f.round().as_f64() as usize;
    if ratio == 0 || ((ratio_f - T::from_usize(ratio).unwrap()) / ratio_f).abs() > T::of(1e-9)
    {
        return Err(LinkError::RateNotCommensurate {
            rf_rate: rf_in.sample_rate().as_f64(),
            need: mod_rate.as_f64(),
        });
    }

    let mut stages: Vec<(String, StageData<T>)> = Vec::new();
    let mut retime_reports = Vec::new();
    stages.push(("rf-in".into(), StageData::Real(rf_in.clone())));

    let (a1, a3) = link.nonlinearity;
    let warped = cubic_nonlinearity(rf_in, a1, a3)?;
    stages.push(("post-nonlinearity".into(), StageData::Real(warped.clone())));

    let mixed = mix_down(&warped, link)?;

    let decimate = |x: &[T]| -> Vec<T> { x.iter().step_by(ratio).copied().collect() };

    let rf_out = match mixed {
        MixOutput::Real(if_sig) => {
            stages.push(("post-mixer".into(), StageData::Real(if_sig.clone())));
            let bb = RealSignal::new(decimate(if_sig.samples()), mod_rate)
                .expect("non-empty decimated stage");
            stages.push(("modulator-in".into(), StageData::Real(bb.clone())));

            let bits = simulate(modulator, &bb).map_err(|source| LinkError::Stage {
                stage: "modulator",
                source,
            })?;
            stages.push(("bitstream".into(), StageData::Bits(bits.clone())));

            let optical = ook_channel(&bits, &link.optical)?;
            stages.push(("post-optical".into(), StageData::Real(optical.clone())));

            let (recovered, report) = comparator_retime(
                &optical,
                modulator.f_s_actual,
                link.retime_delay,
                link.fiber_length,
            )?;
            retime_reports.push(report);
            stages.push(("post-retime".into(), StageData::Bits(recovered.clone())));

            let rf = reconstruct_and_upconvert(&recovered, link)?;
            stages.push(("rf-out".into(), StageData::Real(rf.clone())));
            rf
        }
        MixOutput::Complex(bb) => {
            stages.push(("post-mixer".into(), StageData::Complex(bb.clone())));
            let i_sig = RealSignal::new(
                decimate(&bb.samples().iter().map(|c| c.re).collect::<Vec<_>>()),
                mod_rate,
            )
            .expect("non-empty");
            let q_sig = RealSignal::new(
                decimate(&bb.samples().iter().map(|c| c.im).collect::<Vec<_>>()),
                mod_rate,
            )
            .expect("non-empty");
            stages.push(("modulator-in-i".into(), StageData::Real(i_sig.clone())));
            stages.push(("modulator-in-q".into(), StageData::Real(q_sig.clone())));

            let mut q_modulator = modulator.clone();
            q_modulator.seed = modulator.seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let i_bits = simulate(modulator, &i_sig).map_err(|source| LinkError::Stage {
                stage: "modulator-i",
                source,
            })?;
            let q_bits = simulate(&q_modulator, &q_sig).map_err(|source| LinkError::Stage {
                stage: "modulator-q",
                source,
            })?;
            stages.push(("bitstream-i".into(), StageData::Bits(i_bits.clone())));
            stages.push(("bitstream-q".into(), StageData::Bits(q_bits.clone())));

            let mut q_optical = link.optical.clone();
            q_optical.noise_seed = link.optical.noise_seed.wrapping_add(1);
            let i_analog = ook_channel(&i_bits, &link.optical)?;
            let q_analog = ook_channel(&q_bits, &q_optical)?;
            stages.push(("post-optical-i".into(), StageData::Real(i_analog.clone())));
            stages.push(("post-optical-q".into(), StageData::Real(q_analog.clone())));

            let (i_rec, i_rep) = comparator_retime(
                &i_analog,
                modulator.f_s_actual,
                link.retime_delay,
                link.fiber_length,
            )?;
            let (q_rec, q_rep) = comparator_retime(
                &q_analog,
                modulator.f_s_actual,
                link.retime_delay,
                link.fiber_length,
            )?;
            retime_reports.push(i_rep);
            retime_reports.push(q_rep);
            stages.push(("post-retime-i".into(), StageData::Bits(i_rec.clone())));
            stages.push(("post-retime-q".into(), StageData::Bits(q_rec.clone())));

            let rf = upconvert_iq(&i_rec, &q_rec, link)?;
            stages.push(("rf-out".into(), StageData::Real(rf.clone())));
            rf
        }
    };
    let _ = rf_out;
    Ok(ChainTrace {
        stages,
        retime: retime_reports,
    })
}
