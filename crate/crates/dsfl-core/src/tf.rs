//! Rational discrete-time transfer functions in zero/pole/gain form.

use num_complex::Complex;
use thiserror::Error;

use crate::poly::{enforce_conjugate_pairs, eval, from_roots};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TfError {
    #[error("zeros/poles must come in conjugate pairs for real coefficients")]
    NotConjugateSymmetric,
    #[error("value is not finite")]
    NonFinite,
    #[error("transfer function is unstable: pole at |z| = {0}")]
    Unstable(f64),
    #[error("parse error: {0}")]
    Parse(String),
}

/// `H(z) = gain * prod(z - zero_i) / prod(z - pole_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction<T> {
    zeros: Vec<Complex<T>>,
    poles: Vec<Complex<T>>,
    gain: T,
}

impl<T: Scalar> TransferFunction<T> {
    /// Build from zeros/poles/gain, enforcing conjugate symmetry so the
    /// expanded polynomial coefficients are real.
    pub fn new(
        zeros: Vec<Complex<T>>,
        poles: Vec<Complex<T>>,
        gain: T,
    ) -> Result<Self, TfError> {
        if !gain.is_finite()
            || zeros.iter().chain(&poles).any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(TfError::NonFinite);
        }
        let tol = T::of(1e-9);
        let zeros =
            enforce_conjugate_pairs(&zeros, tol).ok_or(TfError::NotConjugateSymmetric)?;
        let poles =
            enforce_conjugate_pairs(&poles, tol).ok_or(TfError::NotConjugateSymmetric)?;
        Ok(Self { zeros, poles, gain })
    }

    pub fn zeros(&self) -> &[Complex<T>] {
        &self.zeros
    }

    pub fn poles(&self) -> &[Complex<T>] {
        &self.poles
    }

    pub fn gain(&self) -> T {
        self.gain
    }

    /// Number of poles (loop order for a synthesized noise shaper).
    pub fn order(&self) -> usize {
        self.poles.len()
    }

    /// All poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.norm() < T::one())
    }

    /// Largest pole magnitude (1.0 means marginally stable).
    pub fn max_pole_radius(&self) -> T {
        self.poles
            .iter()
            .map(|p| p.norm())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        let mut num = Complex::new(self.gain, T::zero());
        for &zr in &self.zeros {
            num = num * (z - zr);
        }
        let mut den = Complex::new(T::one(), T::zero());
        for &p in &self.poles {
            den = den * (z - p);
        }
        num / den
    }

    /// Frequency response at normalized angular frequency `w` (rad/sample).
    pub fn eval_omega(&self, w: T) -> Complex<T> {
        self.eval(Complex::new(w.cos(), w.sin()))
    }

    /// `|H(e^{jw})|`.
    pub fn magnitude(&self, w: T) -> T {
        self.eval_omega(w).norm()
    }

    /// Peak magnitude over `[0, pi]`: coarse grid scan plus golden-section
    /// refinement around the best cell.
    pub fn peak_magnitude(&self, grid: usize) -> (T, T) {
        let pi = T::PI();
        let n = grid.max(16);
        let mut best_w = T::zero();
        let mut best_m = T::zero();
        for k in 0..=n {
            let w = pi * T::from_usize(k).unwrap() / T::from_usize(n).unwrap();
            let m = self.magnitude(w);
            if m > best_m {
                best_m = m;
                best_w = w;
            }
        }
        let dw = pi / T::from_usize(n).unwrap();
        let (mut lo, mut hi) = (
            (best_w - dw).max(T::zero()),
            (best_w + dw).min(pi),
        );
        let phi = T::of(0.618_033_988_749_894_8);
        for _ in 0..80 {
            let a = hi - (hi - lo) * phi;
            let b = lo + (hi - lo) * phi;
            if self.magnitude(a) < self.magnitude(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        let w = (lo + hi) / T::of(2.0);
        (w, self.magnitude(w))
    }

    /// Numerator polynomial coefficients, ascending powers of z (real parts;
    /// imaginary residue from conjugate products is discarded).
    pub fn numerator(&self) -> Vec<T> {
        from_roots(&self.zeros)
            .iter()
            .map(|c| c.re * self.gain)
            .collect()
    }

    /// Denominator polynomial coefficients, ascending powers of z.
    pub fn denominator(&self) -> Vec<T> {
        from_roots(&self.poles).iter().map(|c| c.re).collect()
    }

    /// Evaluate via expanded polynomials (independent of the factored path;
    /// used by round-trip checks).
    pub fn eval_expanded(&self, z: Complex<T>) -> Complex<T> {
        let num = self.numerator();
        let den = self.denominator();
        let n: Complex<T> = eval(
            &num.iter().map(|&c| Complex::new(c, T::zero())).collect::<Vec<_>>(),
            z,
        );
        let d: Complex<T> = eval(
            &den.iter().map(|&c| Complex::new(c, T::zero())).collect::<Vec<_>>(),
            z,
        );
        n / d
    }

    /// Serialize as JSON text with exact decimal representations.
    pub fn to_json(&self) -> String {
        fn fmt_c<T: Scalar>(c: &Complex<T>) -> String {
            format!("[{}, {}]", c.re.as_f64(), c.im.as_f64())
        }
        let zeros: Vec<String> = self.zeros.iter().map(fmt_c).collect();
        let poles: Vec<String> = self.poles.iter().map(fmt_c).collect();
        format!(
            "{{\n  \"zeros\": [{}],\n  \"poles\": [{}],\n  \"gain\": {}\n}}\n",
            zeros.join(", "),
            poles.join(", "),
            self.gain.as_f64()
        )
    }

    /// Parse the format produced by [`TransferFunction::to_json`].
    pub fn from_json(text: &str) -> Result<Self, TfError> {
        fn extract_array(text: &str, key: &str) -> Result<Vec<f64>, TfError> {
            let start = text
                .find(&format!("\"{key}\""))
                .ok_or_else(|| TfError::Parse(format!("missing key {key}")))?;
            let rest = &text[start..];
            let open = rest
                .find('[')
                .ok_or_else(|| TfError::Parse(format!("missing array for {key}")))?;
            // Find the matching close bracket (arrays may be nested one deep).
            let mut depth = 0usize;
            let mut close = None;
            for (i, ch) in rest[open..].char_indices() {
                match ch {
                    '[' => depth += 1,
                    ']' => {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(open + i);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            let close = close.ok_or_else(|| TfError::Parse(format!("unterminated {key}")))?;
            let body = &rest[open + 1..close];
            let nums: Result<Vec<f64>, _> = body
                .split(|c: char| c == ',' || c == '[' || c == ']')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect();
            nums.map_err(|e| TfError::Parse(format!("bad number in {key}: {e}")))
        }

        let zs = extract_array(text, "zeros")?;
        let ps = extract_array(text, "poles")?;
        if zs.len() % 2 != 0 || ps.len() % 2 != 0 {
            return Err(TfError::Parse("odd number of re/im values".into()));
        }
        let gain_pos = text
            .find("\"gain\"")
            .ok_or_else(|| TfError::Parse("missing gain".into()))?;
        let gain_text = text[gain_pos..]
            .split(':')
            .nth(1)
            .ok_or_else(|| TfError::Parse("missing gain value".into()))?;
        let gain_text = gain_text.trim().trim_end_matches(['}', '\n', ' ', ',']);
        let gain: f64 = gain_text
            .parse()
            .map_err(|e| TfError::Parse(format!("bad gain: {e}")))?;

        let to_complex = |v: &[f64]| -> Vec<Complex<T>> {
            v.chunks(2)
                .map(|c| Complex::new(T::of(c[0]), T::of(c[1])))
                .collect()
        };
        TransferFunction::new(to_complex(&zs), to_complex(&ps), T::of(gain))
    }
}

/// The canonical first-order noise shaper `1 - z^{-1}` = `(z - 1)/z`.
pub fn mod1_ntf<T: Scalar>() -> TransferFunction<T> {
    TransferFunction::new(
        vec![Complex::new(T::one(), T::zero())],
        vec![Complex::new(T::zero(), T::zero())],
        T::one(),
    )
    .expect("static construction")
}

/// The pure differentiator `(1 - z^{-1})^n` = `(z-1)^n / z^n`.
pub fn differentiator_ntf<T: Scalar>(n: usize) -> TransferFunction<T> {
    TransferFunction::new(
        vec![Complex::new(T::one(), T::zero()); n],
        vec![Complex::new(T::zero(), T::zero()); n],
        T::one(),
    )
    .expect("static construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mod1_magnitude() {
        let ntf = mod1_ntf::<f64>();
        // |1 - e^{-jw}| = 2 sin(w/2)
        for &w in &[0.01_f64, 0.5, 1.0, 3.0] {
            let expect = 2.0 * (w / 2.0).sin();
            assert!((ntf.magnitude(w) - expect).abs() < 1e-12);
        }
        assert!(ntf.is_stable());
    }

    #[test]
    fn rejects_unpaired_complex() {
        let err = TransferFunction::<f64>::new(
            vec![Complex::new(0.5, 0.5)],
            vec![Complex::new(0.0, 0.0)],
            1.0,
        );
        assert!(matches!(err, Err(TfError::NotConjugateSymmetric)));
    }

    #[test]
    fn peak_magnitude_of_differentiator() {
        // |(1 - z^{-1})^2| peaks at w = pi with value 4.
        let ntf = differentiator_ntf::<f64>(2);
        let (w, m) = ntf.peak_magnitude(512);
        assert!((m - 4.0).abs() < 1e-9, "peak {m}");
        assert!((w - std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn expanded_matches_factored() {
        let tf = TransferFunction::<f64>::new(
            vec![
                Complex::new(0.99, 0.02),
                Complex::new(0.99, -0.02),
            ],
            vec![Complex::new(0.4, 0.3), Complex::new(0.4, -0.3)],
            1.7,
        )
        .unwrap();
        for &w in &[0.0, 0.3, 1.2, 3.0] {
            let z = Complex::new(f64::cos(w), f64::sin(w));
            let a = tf.eval(z);
            let b = tf.eval_expanded(z);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_exact() {
        let tf = TransferFunction::<f64>::new(
            vec![
                Complex::new(0.9987654321234567, 0.0123456789012345),
                Complex::new(0.9987654321234567, -0.0123456789012345),
            ],
            vec![Complex::new(0.3141592653589793, 0.0), Complex::new(0.25, 0.125)],
            1.5000000000000002,
        );
        // 0.25+0.125j has no conjugate: constructor must reject it.
        assert!(tf.is_err());

        let tf = TransferFunction::<f64>::new(
            vec![
                Complex::new(0.9987654321234567, 0.0123456789012345),
                Complex::new(0.9987654321234567, -0.0123456789012345),
            ],
            vec![
                Complex::new(0.3141592653589793, 0.0),
                Complex::new(0.25, 0.125),
                Complex::new(0.25, -0.125),
            ],
            1.5000000000000002,
        )
        .unwrap();
        let text = tf.to_json();
        let back = TransferFunction::<f64>::from_json(&text).unwrap();
        assert_eq!(tf, back, "JSON round trip must be exact");
    }
}
