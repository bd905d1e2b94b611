//! Filters used by the behavioral link model: Butterworth biquad cascades,
//! a one-pole low-pass for the transimpedance stage, and zero-phase
//! brick-wall filtering for ideal-instrument paths.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;
use crate::signal::{ComplexSignal, RealSignal};

/// One second-order section in direct form I coefficients
/// `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy)]
pub struct Biquad<T> {
    pub b: [T; 3],
    pub a: [T; 2],
}

impl<T: Scalar> Biquad<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = Vec::with_capacity(x.len());
        let (mut x1, mut x2, mut y1, mut y2) = (T::zero(), T::zero(), T::zero(), T::zero());
        for &xi in x {
            let yi = self.b[0] * xi + self.b[1] * x1 + self.b[2] * x2
                - self.a[0] * y1
                - self.a[1] * y2;
            x2 = x1;
            x1 = xi;
            y2 = y1;
            y1 = yi;
            y.push(yi);
        }
        y
    }
}

/// Butterworth low-pass as cascaded biquads (bilinear transform with
/// pre-warped cutoff). Odd orders get one first-order section expressed as
/// a degenerate biquad.
pub fn butterworth_lowpass<T: Scalar>(order: usize, cutoff: T, sample_rate: T) -> Vec<Biquad<T>> {
    assert!(order >= 1, "filter order must be at least 1");
    assert!(
        cutoff > T::zero() && cutoff < sample_rate / T::of(2.0),
        "cutoff must sit below Nyquist"
    );
    let k = T::one() / (T::PI() * cutoff / sample_rate).tan();
    let mut sections = Vec::new();
    let pairs = order / 2;
    for m in 0..pairs {
        let phi = T::PI() * T::of((2 * m + 1) as f64) / T::of(2.0 * order as f64);
        let s = phi.sin();
        let b0 = k * k + T::of(2.0) * s * k + T::one();
        sections.push(Biquad {
            b: [T::one() / b0, T::of(2.0) / b0, T::one() / b0],
            a: [
                T::of(2.0) * (T::one() - k * k) / b0,
                (k * k - T::of(2.0) * s * k + T::one()) / b0,
            ],
        });
    }
    if order % 2 == 1 {
        let b0 = k + T::one();
        sections.push(Biquad {
            b: [T::one() / b0, T::one() / b0, T::zero()],
            a: [(T::one() - k) / b0, T::zero()],
        });
    }
    sections
}

pub fn apply_cascade<T: Scalar>(sections: &[Biquad<T>], x: &[T]) -> Vec<T> {
    let mut y = x.to_vec();
    for s in sections {
        y = s.apply(&y);
    }
    y
}

/// Single-pole low-pass (matched-z), `f_c` in Hz.
pub fn one_pole_lowpass<T: Scalar>(x: &[T], f_c: T, sample_rate: T) -> Vec<T> {
    let alpha = T::one() - (-T::TAU() * f_c / sample_rate).exp();
    let mut y = Vec::with_capacity(x.len());
    let mut state = T::zero();
    for &xi in x {
        state += alpha * (xi - state);
        y.push(state);
    }
    y
}

/// Zero-phase brick-wall band-pass: keeps only bins with `f_lo <= |f| <=
/// f_hi` (set `f_lo = 0` for a low-pass mask).
pub fn brickwall_bandpass<T: Scalar>(sig: &RealSignal<T>, f_lo: T, f_hi: T) -> RealSignal<T> {
    let n = sig.len();
    let fs = sig.sample_rate();
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<T>> = sig
        .samples()
        .iter()
        .map(|&x| Complex::new(x, T::zero()))
        .collect();
    fft.process(&mut buf);
    let nf = T::from_usize(n).unwrap();
    for (kidx, b) in buf.iter_mut().enumerate() {
        let k = kidx as isize;
        let k_signed = if k <= (n / 2) as isize {
            k
        } else {
            k - n as isize
        };
        let f = T::of(k_signed.unsigned_abs() as f64) * fs / nf;
        if f < f_lo || f > f_hi {
            *b = Complex::new(T::zero(), T::zero());
        }
    }
    ifft.process(&mut buf);
    let scale = T::one() / nf;
    RealSignal::new(buf.iter().map(|c| c.re * scale).collect(), fs)
        .expect("filtered signal stays finite")
}

/// Brick-wall low-pass on a complex baseband signal (`|f| <= f_hi`,
/// negative frequencies kept independently).
pub fn brickwall_lowpass_complex<T: Scalar>(sig: &ComplexSignal<T>, f_hi: T) -> ComplexSignal<T> {
    let n = sig.len();
    let fs = sig.sample_rate();
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<T>> = sig.samples().to_vec();
    fft.process(&mut buf);
    let nf = T::from_usize(n).unwrap();
    for (kidx, b) in buf.iter_mut().enumerate() {
        let k = kidx as isize;
        let k_signed = if k <= (n / 2) as isize {
            k
        } else {
            k - n as isize
        };
        let f = T::of(k_signed.unsigned_abs() as f64) * fs / nf;
        if f > f_hi {
            *b = Complex::new(T::zero(), T::zero());
        }
    }
    ifft.process(&mut buf);
    let scale = T::one() / nf;
    ComplexSignal::new(buf.iter().map(|c| c * scale).collect(), fs)
        .expect("filtered signal stays finite")
}
