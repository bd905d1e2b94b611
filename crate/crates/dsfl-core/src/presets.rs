//! Ready-made configurations for the two modulators the link is built
//! around: the commercial second-order discrete-time part clocked at
//! 20 MHz, and the custom fourth-order continuous-time design clocked at
//! 100 MHz (OSR 50 over a 1 MHz band, ||H||inf = 1.5, optimized zeros).

use crate::ciff::{realize_ciff, CiffCoefficients, RealizationKind};
use crate::ntf::{synthesize_ntf, NtfSpec};
use crate::scalar::Scalar;
use crate::sim::ModulatorConfig;
use crate::sqnr::SqnrError;
use crate::tf::TransferFunction;

/// Design clock of the custom fourth-order continuous-time modulator.
pub fn ct_clock<T: Scalar>() -> T {
    T::of(100e6)
}

/// Design clock of the commercial second-order part.
pub fn dt_clock<T: Scalar>() -> T {
    T::of(20e6)
}

/// The custom chip's NTF: fourth order, OSR 50, ||H||inf 1.5, optimized
/// zeros.
pub fn fourth_order_ntf<T: Scalar>() -> TransferFunction<T> {
    synthesize_ntf(&NtfSpec::new(4, T::of(50.0))).expect("paper design synthesizes")
}

/// Continuous-time realization of the custom chip's loop filter.
pub fn fourth_order_ct<T: Scalar>() -> CiffCoefficients<T> {
    realize_ciff(&fourth_order_ntf(), RealizationKind::ContinuousTime)
        .expect("paper design realizes")
}

/// Fourth-order modulator config at the design clock, no impairments.
pub fn fourth_order_config<T: Scalar>() -> ModulatorConfig<T> {
    ModulatorConfig::new(fourth_order_ct(), ct_clock())
}

/// Behavioral stand-in for the commercial second-order part. Its silicon
/// NTF is undisclosed; a synthesized second-order shaper with
/// ||H||inf = 2.5 reproduces the part's published peak SNR at OSR 20.
pub fn second_order_ntf<T: Scalar>(osr: T) -> TransferFunction<T> {
    synthesize_ntf(&NtfSpec::new(2, osr).with_h_inf(T::of(2.5)))
        .expect("second-order model synthesizes")
}

/// Discrete-time realization of the second-order model.
pub fn second_order_dt<T: Scalar>(osr: T) -> CiffCoefficients<T> {
    realize_ciff(&second_order_ntf(osr), RealizationKind::DiscreteTime)
        .expect("second-order model realizes")
}

/// Second-order modulator config at the 20 MHz part clock.
pub fn second_order_config<T: Scalar>(osr: T) -> ModulatorConfig<T> {
    ModulatorConfig::new(second_order_dt(osr), dt_clock())
}

/// Thermal-noise injection calibrated so the measured in-band thermal power
/// is `factor` times the measured in-band quantization noise at the clean
/// design's peak-SNR amplitude (the design target uses factor 4, leaving
/// under 20% of the total noise to quantization).
pub fn calibrated_thermal_injection<T: Scalar>(
    cfg: &ModulatorConfig<T>,
    osr: T,
    factor: T,
) -> Result<T, SqnrError> {
    let peak = crate::sqnr::peak_snr_for_config(cfg, osr)?;
    let amp = crate::scalar::undb20(peak.amplitude_dbfs);
    let point = crate::sqnr::measure_snr_point(
        cfg,
        osr,
        amp,
        crate::sqnr::SQNR_RUN_LENGTH,
        T::of(0.5),
    )?;
    // In-band quantization power scaled to the injection rate: white noise
    // injected at the input spreads over the Nyquist band, so in-band it
    // contributes injected/OSR.
    Ok(factor * point.noise_power * osr)
}
