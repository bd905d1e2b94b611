//! Design and simulation library for delta-sigma-modulation digital
//! RF-over-fiber links.
//!
//! The crate covers the full chain at behavioral level: noise transfer
//! function synthesis and loop-filter realization, discrete- and
//! continuous-time modulator simulation with thermal noise, clock jitter and
//! time-constant error, the optical on-off-keying link with comparator
//! retiming, measurement procedures (SNR/SNDR, peak-SNR search, 1 dB
//! compression, dynamic range), and MRI k-space handling for end-to-end
//! image-fidelity experiments.
//!
//! All numeric types are generic over a [`scalar::Scalar`] (`f32` or `f64`);
//! the `*64` aliases at the crate root pin the double-precision variants
//! that the published accuracy figures assume.

pub mod ciff;
pub mod kspace;
pub mod linalg;
pub mod experiments;
pub mod filter;
pub mod link;
pub mod matexp;
pub mod metrics;
pub mod ntf;
pub mod poly;
pub mod presets;
pub mod quad;
pub mod sqnr;
pub mod scalar;
pub mod sim;
pub mod signal;
pub mod spectrum;
pub mod tf;

pub use ntf::{compute_osr, synthesize_ntf, NtfSpec};
pub use scalar::Scalar;
pub use signal::{add_white_noise, generate_complex_tone, generate_tone};
pub use spectrum::{estimate_psd, Window};
pub use tf::TransferFunction;

/// Double-precision aliases for the main domain types.
pub type RealSignal64 = signal::RealSignal<f64>;
pub type ComplexSignal64 = signal::ComplexSignal<f64>;
pub type Spectrum64 = spectrum::Spectrum<f64>;
pub type TransferFunction64 = tf::TransferFunction<f64>;

/// Single-precision aliases.
pub type RealSignal32 = signal::RealSignal<f32>;
pub type ComplexSignal32 = signal::ComplexSignal<f32>;
pub type Spectrum32 = spectrum::Spectrum<f32>;
pub type TransferFunction32 = tf::TransferFunction<f32>;
