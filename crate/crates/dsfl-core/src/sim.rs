//! Time-domain modulator simulation.
//!
//! Two engines share one coefficient set:
//!
//! * `simulate_dt` — the discrete-time loop, stepped sample by sample.
//! * `simulate_ct` — the continuous-time loop, integrated exactly per clock
//!   period with the matrix exponential of the loop's state matrix. The NRZ
//!   feedback DAC updates half a clock after the quantizer decision and is
//!   held constant for a full period; the input is treated as piecewise
//!   linear at four sub-steps per clock.
//!
//! Impairments: white thermal noise injected at the input node, clock jitter
//! as random modulation of the DAC pulse width, fractional time-constant
//! error on all integrators, and an applied clock `f_s_actual` that may
//! deviate from the design value `f_s` (the continuous-time filter does not
//! scale with the clock, so such deviation degrades noise shaping).

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ciff::{ct_matrices, dt_matrices, CiffCoefficients,
                  RealizationKind};
use crate::matexp::step_kernels;
use crate::scalar::Scalar;
use crate::signal::RealSignal;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error("input sample rate {got} Hz does not match the required {want} Hz")]
    RateMismatch { got: f64, want: f64 },
    #[error("input too short: need at least {need} samples, got {got}")]
    InputTooShort { need: usize, got: usize },
    #[error("phase-noise table needs at least two points")]
    EmptyPhaseNoiseTable,
    #[error("phase-noise table must cover offsets up to f_s = {0} Hz")]
    PhaseNoiseTableTooShort(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Clock quality model: rms period jitter, optionally derived from a
/// tabulated phase-noise spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockModel<T> {
    sigma_t: T,
    phase_noise: Option<Vec<(T, T)>>,
}

impl<T: Scalar> ClockModel<T> {
    /// Jitter-free clock.
    pub fn ideal() -> Self {
        Self {
            sigma_t: T::zero(),
            phase_noise: None,
        }
    }

    /// Clock with the given rms period jitter in seconds.
    pub fn with_rms_jitter(sigma_t: T) -> Self {
        Self {
            sigma_t: sigma_t.max(T::zero()),
            phase_noise: None,
        }
    }

    /// Clock whose rms period jitter is derived from a phase-noise table
    /// of `(offset_hz, dBc/Hz)` points; `sigma_t` is then not an
    /// independent setting.
    pub fn from_phase_noise(table: Vec<(T, T)>, f_s: T) -> Result<Self, SimError> {
        let sigma_t = sigma_t_from_phase_noise(&table, f_s)?;
        Ok(Self {
            sigma_t,
            phase_noise: Some(table),
        })
    }

    pub fn sigma_t(&self) -> T {
        self.sigma_t
    }

    pub fn phase_noise(&self) -> Option<&[(T, T)]> {
        self.phase_noise.as_deref()
    }
}

/// Everything needed to run one modulator: realization, clocking, quantizer
/// step, impairment settings and the seed that makes runs reproducible.
#[derive(Debug, Clone)]
pub struct ModulatorConfig<T> {
    pub kind: RealizationKind,
    pub coeffs: CiffCoefficients<T>,
    /// Design clock rate the loop filter was matched at.
    pub f_s: T,
    /// Clock rate actually applied (clock-frequency sweeps move this).
    pub f_s_actual: T,
    /// Quantizer step; the 1-bit output alphabet is +-delta/2.
    pub delta: T,
    /// Variance of the white noise sequence injected at the input node, one
    /// sample per clock. In-band it contributes `variance / OSR`.
    pub thermal_noise_variance: T,
    /// Fractional error of the integrator gain coefficients: every gain
    /// scales by `1 + tc_error` (equivalently the RC time constants scale
    /// by `1/(1 + tc_error)`). Positive errors speed the loop up and pull
    /// the instability onset to lower amplitudes; negative errors slow it
    /// down and gradually degrade the noise shaping.
    pub tc_error: T,
    /// Independent per-integrator errors; overrides `tc_error` when set.
    pub tc_error_per_integrator: Option<Vec<T>>,
    pub jitter: ClockModel<T>,
    pub seed: u64,
}

impl<T: Scalar> ModulatorConfig<T> {
    pub fn new(coeffs: CiffCoefficients<T>, f_s: T) -> Self {
        Self {
            kind: coeffs.kind,
            coeffs,
            f_s,
            f_s_actual: f_s,
            delta: T::of(2.0),
            thermal_noise_variance: T::zero(),
            tc_error: T::zero(),
            tc_error_per_integrator: None,
            jitter: ClockModel::ideal(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_thermal_noise(mut self, variance: T) -> Self {
        self.thermal_noise_variance = variance;
        self
    }

    pub fn with_jitter(mut self, jitter: ClockModel<T>) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_tc_error(mut self, dk_over_k: T) -> Self {
        self.tc_error = dk_over_k;
        self
    }

    pub fn with_applied_clock(mut self, f_s_actual: T) -> Self {
        self.f_s_actual = f_s_actual;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.f_s > T::zero()) || !(self.f_s_actual > T::zero()) {
            return Err(SimError::BadConfig("clock rates must be positive".into()));
        }
        if !(self.delta > T::zero()) {
            return Err(SimError::BadConfig("quantizer step must be positive".into()));
        }
        if self.tc_error.abs() >= T::of(0.5) {
            return Err(SimError::BadConfig(format!(
                "|tc_error| must be below 0.5, got {}",
                self.tc_error.as_f64()
            )));
        }
        if let Some(v) = &self.tc_error_per_integrator {
            if v.len() != self.coeffs.order() {
                return Err(SimError::BadConfig(
                    "per-integrator tc error length != order".into(),
                ));
            }
            if v.iter().any(|e| e.abs() >= T::of(0.5)) {
                return Err(SimError::BadConfig("|tc_error| must be below 0.5".into()));
            }
        }
        if self.kind != self.coeffs.kind {
            return Err(SimError::BadConfig(
                "config kind does not match the realization kind of the coefficients".into(),
            ));
        }
        if self.thermal_noise_variance < T::zero() {
            return Err(SimError::BadConfig("thermal variance must be >= 0".into()));
        }
        Ok(())
    }

    fn gain_scale(&self) -> Vec<T> {
        match &self.tc_error_per_integrator {
            Some(v) => v.iter().map(|&e| T::one() + e).collect(),
            None => vec![T::one() + self.tc_error; self.coeffs.order()],
        }
    }
}

/// One simulated bitstream plus run diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamResult<T> {
    /// Output symbols, exactly -1 or +1 (scale by `delta/2` for volts).
    pub bits: Vec<i8>,
    pub delta: T,
    pub sample_rate: T,
    /// False when any integrator state stayed above 10x the DAC feedback
    /// level for 16 consecutive clocks.
    pub stable: bool,
    /// Largest integrator-state magnitude observed.
    pub max_state: T,
}

impl<T: Scalar> BitstreamResult<T> {
    /// The bitstream as an analog waveform at +-delta/2.
    pub fn waveform(&self) -> RealSignal<T> {
        let half = self.delta / T::of(2.0);
        let samples = self.bits.iter().map(|&b| half * T::of(b as f64)).collect();
        RealSignal::new(samples, self.sample_rate).expect("non-empty bitstream")
    }

    /// CSV of +-1 integers with a `# f_s_hz=` header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        writeln!(w, "# f_s_hz={}", self.sample_rate.as_f64())?;
        for b in &self.bits {
            writeln!(w, "{b}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, delta: T) -> Result<Self, SimError> {
        let mut rate = None;
        let mut bits = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("f_s_hz=") {
                    rate = v.parse::<f64>().ok();
                }
                continue;
            }
            let b: i8 = line
                .parse()
                .map_err(|e| SimError::BadConfig(format!("bad bit: {e}")))?;
            if b != 1 && b != -1 {
                return Err(SimError::BadConfig(format!("bit {b} outside {{-1,+1}}")));
            }
            bits.push(b);
        }
        let rate = rate.ok_or_else(|| SimError::BadConfig("missing # f_s_hz= header".into()))?;
        Ok(Self {
            bits,
            delta,
            sample_rate: T::of(rate),
            stable: true,
            max_state: T::zero(),
        })
    }
}

/// Tracks the 16-consecutive-clocks instability rule.
struct StabilityMonitor<T> {
    bound: T,
    consecutive: usize,
    max_state: T,
    unstable: bool,
}

impl<T: Scalar> StabilityMonitor<T> {
    fn new(delta: T, dac1: T) -> Self {
        Self {
            bound: T::of(10.0) * (delta / T::of(2.0)) * dac1.abs(),
            consecutive: 0,
            max_state: T::zero(),
            unstable: false,
        }
    }

    fn observe(&mut self, states: &[T]) {
        let mut worst = T::zero();
        for &x in states {
            if x.abs() > worst {
                worst = x.abs();
            }
        }
        if worst > self.max_state {
            self.max_state = worst;
        }
        if worst > self.bound {
            self.consecutive += 1;
            if self.consecutive >= 16 {
                self.unstable = true;
            }
        } else {
            self.consecutive = 0;
        }
    }
}

const STATE_CAP: f64 = 1e9;

struct NoiseStreams<T> {
    thermal: Option<(ChaCha8Rng, Normal<f64>)>,
    jitter: Option<(ChaCha8Rng, Normal<f64>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> NoiseStreams<T> {
    fn new(cfg: &ModulatorConfig<T>) -> Self {
        let thermal = if cfg.thermal_noise_variance > T::zero() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0);
            Some((
                rng,
                Normal::new(0.0, cfg.thermal_noise_variance.as_f64().sqrt()).unwrap(),
            ))
        } else {
            None
        };
        let jitter = if cfg.jitter.sigma_t() > T::zero() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1);
            Some((rng, Normal::new(0.0, cfg.jitter.sigma_t().as_f64()).unwrap()))
        } else {
            None
        };
        Self {
            thermal,
            jitter,
            _marker: std::marker::PhantomData,
        }
    }

    fn thermal_sample(&mut self) -> T {
        match &mut self.thermal {
            Some((rng, dist)) => T::of(dist.sample(rng)),
            None => T::zero(),
        }
    }

    /// DAC pulse-width error already scaled to a fraction of the period.
    fn jitter_fraction(&mut self, f_s_actual: T) -> T {
        match &mut self.jitter {
            Some((rng, dist)) => T::of(dist.sample(rng)) * f_s_actual,
            None => T::zero(),
        }
    }
}

/// Simulate the discrete-time loop. The input must be sampled at the
/// applied clock rate.
pub fn simulate_dt<T: Scalar>(
    cfg: &ModulatorConfig<T>,
    input: &RealSignal<T>,
) -> Result<BitstreamResult<T>, SimError> {
    cfg.validate()?;
    if cfg.kind != RealizationKind::DiscreteTime {
        return Err(SimError::BadConfig("simulate_dt needs a DT config".into()));
    }
    check_rate(input.sample_rate(), cfg.f_s_actual)?;

    let n = cfg.coeffs.order();
    let lm = dt_matrices(&cfg.coeffs, &cfg.gain_scale());
    let a_vec = cfg.coeffs.feedforward.clone();
    let dac2 = cfg.coeffs.dac2_gain;
    let half_delta = cfg.delta / T::of(2.0);

    let mut noise = NoiseStreams::new(cfg);
    let mut monitor = StabilityMonitor::new(cfg.delta, cfg.coeffs.dac1_gain);
    let cap = T::of(STATE_CAP);

    let mut x = vec![T::zero(); n];
    let mut v_prev = T::zero();
    let mut v_dac_prev = T::zero();
    let mut bits = Vec::with_capacity(input.len());

    for &u in input.samples() {
        let y = dot(&a_vec, &x) - dac2 * v_dac_prev;
        let v = if y >= T::zero() { half_delta } else { -half_delta };
        bits.push(if y >= T::zero() { 1 } else { -1 });

        let jitter = noise.jitter_fraction(cfg.f_s_actual);
        let v_dac = v + (v - v_prev) * jitter;
        let u_eff = u + noise.thermal_sample();

        let mut next = lm.a.matvec(&x);
        for i in 0..n {
            next[i] += lm.b_u[i] * u_eff + lm.b_v[i] * v_dac;
            next[i] = next[i].max(-cap).min(cap);
        }
        x = next;
        monitor.observe(&x);
        v_prev = v;
        v_dac_prev = v;
    }

    Ok(BitstreamResult {
        bits,
        delta: cfg.delta,
        sample_rate: cfg.f_s_actual,
        stable: !monitor.unstable,
        max_state: monitor.max_state,
    })
}

/// Input oversampling factor of the continuous-time engine: the input is
/// taken as piecewise linear between samples at four times the clock rate.
pub const CT_INPUT_OVERSAMPLING: usize = 4;

/// Simulate the continuous-time loop. The input must be sampled at
/// `4 * f_s_actual`; each clock period is integrated exactly over four
/// piecewise-linear input sub-steps, with the NRZ DAC pulse for decision n
/// spanning `[n + 1/2, n + 3/2)` clock periods.
pub fn simulate_ct<T: Scalar>(
    cfg: &ModulatorConfig<T>,
    input: &RealSignal<T>,
) -> Result<BitstreamResult<T>, SimError> {
    cfg.validate()?;
    if cfg.kind != RealizationKind::ContinuousTime {
        return Err(SimError::BadConfig("simulate_ct needs a CT config".into()));
    }
    let over = T::from_usize(CT_INPUT_OVERSAMPLING).unwrap();
    check_rate(input.sample_rate(), cfg.f_s_actual * over)?;
    if input.len() < CT_INPUT_OVERSAMPLING {
        return Err(SimError::InputTooShort {
            need: CT_INPUT_OVERSAMPLING,
            got: input.len(),
        });
    }

    let n = cfg.coeffs.order();
    // Normalized time: one unit = one applied clock period. The filter was
    // designed against f_s, so its matrix carries the ratio f_s/f_s_actual.
    let ratio = cfg.f_s / cfg.f_s_actual;
    let mc = ct_matrices(&cfg.coeffs, &cfg.gain_scale());
    let a_scaled = mc.a.scale(ratio);
    let b_u: Vec<T> = mc.b_u.iter().map(|&b| b * ratio).collect();
    let b_v: Vec<T> = mc.b_v.iter().map(|&b| b * ratio).collect();

    let h = T::one() / over;
    let kern = step_kernels(&a_scaled, h);
    let q1_bu = kern.q1.matvec(&b_u);
    let q1_bv = kern.q1.matvec(&b_v);
    let q2_bu = kern.q2.matvec(&b_u);

    let a_vec = cfg.coeffs.feedforward.clone();
    let dac2 = cfg.coeffs.dac2_gain;
    let half_delta = cfg.delta / T::of(2.0);

    let mut noise = NoiseStreams::new(cfg);
    let mut monitor = StabilityMonitor::new(cfg.delta, cfg.coeffs.dac1_gain);
    let cap = T::of(STATE_CAP);

    let n_clocks = input.len() / CT_INPUT_OVERSAMPLING;
    let samples = input.samples();
    let mut x = vec![T::zero(); n];
    let mut v_prev = T::zero();
    let mut v_dac_new = T::zero(); // jitter-adjusted value of the active pulse
    let mut bits = Vec::with_capacity(n_clocks);

    for clk in 0..n_clocks {
        let y = dot(&a_vec, &x) - dac2 * v_prev;
        let v = if y >= T::zero() { half_delta } else { -half_delta };
        bits.push(if y >= T::zero() { 1 } else { -1 });

        let jitter = noise.jitter_fraction(cfg.f_s_actual);
        let v_dac_old = v_dac_new;
        v_dac_new = v + (v - v_prev) * jitter;

        let noise_u = noise.thermal_sample();
        for sub in 0..CT_INPUT_OVERSAMPLING {
            let idx = clk * CT_INPUT_OVERSAMPLING + sub;
            let u0 = samples[idx] + noise_u;
            let u1 = if idx + 1 < samples.len() {
                samples[idx + 1] + noise_u
            } else {
                u0
            };
            let slope = (u1 - u0) / h;
            // DAC pulse for decision n starts half a period late: the first
            // two sub-steps still integrate the previous pulse.
            let dac = if sub < CT_INPUT_OVERSAMPLING / 2 {
                v_dac_old
            } else {
                v_dac_new
            };
            let mut next = kern.e.matvec(&x);
            for i in 0..n {
                next[i] += q1_bu[i] * u0 + q1_bv[i] * dac + q2_bu[i] * slope;
                next[i] = next[i].max(-cap).min(cap);
            }
            x = next;
        }
        monitor.observe(&x);
        v_prev = v;
    }

    Ok(BitstreamResult {
        bits,
        delta: cfg.delta,
        sample_rate: cfg.f_s_actual,
        stable: !monitor.unstable,
        max_state: monitor.max_state,
    })
}

/// Route either engine based on the config kind.
pub fn simulate<T: Scalar>(
    cfg: &ModulatorConfig<T>,
    input: &RealSignal<T>,
) -> Result<BitstreamResult<T>, SimError> {
    match cfg.kind {
        RealizationKind::DiscreteTime => simulate_dt(cfg, input),
        RealizationKind::ContinuousTime => simulate_ct(cfg, input),
    }
}

fn check_rate<T: Scalar>(got: T, want: T) -> Result<(), SimError> {
    if ((got - want) / want).abs() > T::of(1e-9) {
        return Err(SimError::RateMismatch {
            got: got.as_f64(),
            want: want.as_f64(),
        });
    }
    Ok(())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// RMS period jitter from a tabulated phase-noise spectrum in dBc/Hz:
///
/// `sigma_t^2 = 8/(2 pi f_s)^2 * ∫_0^{f_s} L(f) sin^2(pi f / f_s) df`
///
/// with `L(f)` interpolated linearly in (log-offset, dB) space between the
/// table points and clamped beyond them.
pub fn sigma_t_from_phase_noise<T: Scalar>(
    table: &[(T, T)],
    f_s: T,
) -> Result<T, SimError> {
    if table.len() < 2 {
        return Err(SimError::EmptyPhaseNoiseTable);
    }
    let mut pts: Vec<(T, T)> = table.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if pts[0].0 <= T::zero() {
        return Err(SimError::BadConfig("offsets must be positive".into()));
    }
    if pts.last().unwrap().0 < f_s {
        return Err(SimError::PhaseNoiseTableTooShort(f_s.as_f64()));
    }
    let linear = move |f: T| -> T {
        let db = if f <= pts[0].0 {
            pts[0].1
        } else if f >= pts.last().unwrap().0 {
            pts.last().unwrap().1
        } else {
            let mut val = pts.last().unwrap().1;
            for w in pts.windows(2) {
                if f >= w[0].0 && f <= w[1].0 {
                    let lf = f.ln();
                    let l0 = w[0].0.ln();
                    let l1 = w[1].0.ln();
                    let t = (lf - l0) / (l1 - l0);
                    val = w[0].1 + (w[1].1 - w[0].1) * t;
                    break;
                }
            }
            val
        };
        T::of(10.0).powf(db / T::of(10.0))
    };
    Ok(sigma_t_from_linear_phase_noise(linear, f_s))
}

/// Same integral with `L(f)` supplied directly in linear power units.
pub fn sigma_t_from_linear_phase_noise<T: Scalar>(l: impl Fn(T) -> T, f_s: T) -> T {
    let integrand = |f: T| {
        let s = (T::PI() * f / f_s).sin();
        l(f) * s * s
    };
    let integral = crate::quad::integrate(integrand, T::zero(), f_s, T::of(1e-300), T::of(1e-9));
    let scale = T::of(8.0) / (T::TAU() * f_s).powi(2);
    (scale * integral).sqrt()
}

/// One cell of a time-constant-error sweep.
#[derive(Debug, Clone, Copy)]
pub struct TcSweepCell<T> {
    pub dk_over_k: T,
    pub amplitude_fs: T,
    pub sqnr_db: T,
    pub stable: bool,
}

/// SQNR across a (gain error x amplitude) grid.
///
/// Negative errors slow the loop and degrade SQNR gradually; positive
/// errors raise the loop gain and pull the instability onset to lower
/// amplitudes. Unstable cells are recorded, not skipped.
pub fn sweep_tc_error<T: Scalar>(
    base: &ModulatorConfig<T>,
    osr: T,
    dk_grid: &[T],
    amp_grid: &[T],
) -> Result<Vec<TcSweepCell<T>>, crate::sqnr::SqnrError> {
    use rayon::prelude::*;
    let cells: Vec<(T, T)> = dk_grid
        .iter()
        .flat_map(|&dk| amp_grid.iter().map(move |&a| (dk, a)))
        .collect();
    cells
        .into_par_iter()
        .map(|(dk, amp)| {
            let mut cfg = base.clone();
            cfg.tc_error = dk;
            let s = crate::sqnr::measure_snr_point(
                &cfg,
                osr,
                amp,
                crate::sqnr::SQNR_RUN_LENGTH / 2,
                T::of(0.5),
            )?;
            Ok(TcSweepCell {
                dk_over_k: dk,
                amplitude_fs: amp,
                sqnr_db: s.snr_db,
                stable: s.stable,
            })
        })
        .collect()
}

/// CSV `dk_over_k,amplitude_fs,sqnr_db,stable` for a tc-error sweep.
pub fn write_tc_sweep_csv<T: Scalar, W: Write>(
    cells: &[TcSweepCell<T>],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "dk_over_k,amplitude_fs,sqnr_db,stable")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{}",
            c.dk_over_k.as_f64(),
            c.amplitude_fs.as_f64(),
            if c.stable { c.sqnr_db.as_f64() } else { f64::NAN },
            c.stable
        )?;
    }
    Ok(())
}

/// Combine independent jitter contributions in quadrature.
pub fn combine_jitter_rms<T: Scalar>(parts: &[T]) -> T {
    parts
        .iter()
        .fold(T::zero(), |acc, &p| acc + p * p)
        .sqrt()
}

/// In-band noise variance caused by DAC pulse-width jitter:
///
/// `sigma_j^2 = (sigma_t f_s)^2 * (delta^2/12) * (1/(pi OSR)) *
///              ∫_0^pi |(1 - e^{-jw}) NTF(w)|^2 dw`
pub fn jitter_variance_closed_form<T: Scalar>(
    ntf: &crate::tf::TransferFunction<T>,
    osr: T,
    sigma_t: T,
    f_s: T,
    delta: T,
) -> Result<T, crate::ntf::NtfError> {
    if !ntf.is_stable() {
        return Err(crate::ntf::NtfError::UnstableNtf);
    }
    let integral = crate::quad::integrate(
        |w: T| {
            let diff = T::of(2.0) * (w / T::of(2.0)).sin(); // |1 - e^{-jw}|
            let m = ntf.magnitude(w);
            diff * diff * m * m
        },
        T::zero(),
        T::PI(),
        T::of(1e-300),
        T::of(1e-9),
    );
    let st_fs = sigma_t * f_s;
    Ok(st_fs * st_fs * delta * delta / T::of(12.0) * integral / (T::PI() * osr))
}
