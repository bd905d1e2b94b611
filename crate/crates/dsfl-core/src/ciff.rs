//! Cascade-of-integrators feedforward (CIFF) loop-filter realization.
//!
//! The structure: a chain of integrators with a single input feed-in at the
//! first integrator, local resonator feedback `g` around integrator pairs
//! (placing the NTF zeros on the unit circle), feedforward weights `a_i`
//! into one summing node, and two DAC paths — `dac1` into the input node and
//! `dac2` directly around the quantizer.
//!
//! Realizations exist in two flavours sharing the same coefficient set:
//!
//! * **Discrete time** — delaying integrators, with the second member of
//!   each resonator pair non-delaying so the pair eigenvalues land exactly
//!   on the unit circle.
//! * **Continuous time** — analog integrators with unity-gain frequency
//!   `k_i * f_s`, an NRZ feedback DAC held over each clock period, and the
//!   quantizer sampling the summer at clock edges. Coefficients are matched
//!   through the exact NRZ discretization, so the realized loop reproduces
//!   the target NTF sample-exactly at the design clock rate.

use num_complex::Complex;
use thiserror::Error;

use crate::linalg::{faddeev_leverrier, solve, Mat};
use crate::matexp::step_kernels;
use crate::poly;
use crate::scalar::Scalar;
use crate::tf::TransferFunction;

#[derive(Debug, Error)]
pub enum CiffError {
    #[error("NTF must be stable to realize")]
    UnstableNtf,
    #[error("NTF order {0} outside the supported range 1..=8")]
    UnsupportedOrder(usize),
    #[error("NTF gain must be 1 for a realizable loop, got {0}")]
    NonUnityGain(f64),
    #[error("NTF zeros must lie on the unit circle (|z| = {0} found)")]
    ZerosOffUnitCircle(f64),
    #[error("odd-order NTF needs exactly one zero at z = 1")]
    MissingDcZero,
    #[error("ill-conditioned realization: coefficient magnitude {0} exceeds 1e3")]
    IllConditioned(f64),
    #[error("pole-placement system is singular")]
    SingularSystem,
    #[error("coefficient vector lengths are inconsistent with the order")]
    BadCoefficients,
}

/// Which integrator family the coefficients are matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealizationKind {
    DiscreteTime,
    ContinuousTime,
}

/// CIFF loop-filter coefficients.
///
/// `integrator_gains` are per-clock scale factors (a continuous-time
/// integrator has unity-gain frequency `k_i * f_s`). `resonator_gains[m]`
/// closes the local feedback around integrator pair m. `input_gain` scales
/// the single feed-in so the closed-loop signal transfer function is exactly
/// unity at DC even when the NTF zeros are spread off DC.
#[derive(Debug, Clone, PartialEq)]
pub struct CiffCoefficients<T> {
    pub kind: RealizationKind,
    pub integrator_gains: Vec<T>,
    pub feedforward: Vec<T>,
    pub resonator_gains: Vec<T>,
    pub dac1_gain: T,
    pub dac2_gain: T,
    pub input_gain: T,
}

impl<T: Scalar> CiffCoefficients<T> {
    pub fn order(&self) -> usize {
        self.integrator_gains.len()
    }

    fn validate(&self) -> Result<(), CiffError> {
        let n = self.order();
        if n == 0 || n > 8 {
            return Err(CiffError::UnsupportedOrder(n));
        }
        if self.feedforward.len() != n || self.resonator_gains.len() != n / 2 {
            return Err(CiffError::BadCoefficients);
        }
        Ok(())
    }
}

/// Resonator pair layout: for even order the pairs are (0,1), (2,3), ...;
/// for odd order a lone DC integrator comes first and pairs follow.
pub(crate) fn pair_start_indices(order: usize) -> Vec<usize> {
    let first = order % 2;
    (0..order / 2).map(|m| first + 2 * m).collect()
}

/// State-space matrices of the open loop filter: `x' = A x + b_u u + b_v v`,
/// summer output `y = a . x - dac2 * v_prev`.
pub(crate) struct LoopMatrices<T> {
    pub a: Mat<T>,
    pub b_u: Vec<T>,
    pub b_v: Vec<T>,
}

/// Discrete-time assembly. Row propagation over `[x; u; v]`: delaying
/// integrators add their input expression; the non-delaying second member of
/// each pair consumes the already-updated first member.
pub(crate) fn dt_matrices<T: Scalar>(
    c: &CiffCoefficients<T>,
    gain_scale: &[T],
) -> LoopMatrices<T> {
    let n = c.order();
    let pairs = pair_start_indices(n);
    let is_pair_start = |i: usize| pairs.contains(&i);
    let is_pair_second = |i: usize| i > 0 && pairs.contains(&(i - 1));
    let pair_index = |i: usize| pairs.iter().position(|&s| s == i).unwrap();

    // Extended row length: n states + u + v.
    let width = n + 2;
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(n);
    for i in 0..n {
        let k = c.integrator_gains[i] * gain_scale[i];
        let mut input = vec![T::zero(); width];
        if i == 0 {
            input[n] = c.input_gain; // u
            input[n + 1] = -c.dac1_gain; // v
        } else if is_pair_second(i) {
            // handled below via the updated row of i-1
        } else {
            input[i - 1] = T::one();
        }
        if is_pair_start(i) {
            let g = c.resonator_gains[pair_index(i)];
            input[i + 1] -= g;
        }

        let mut row = vec![T::zero(); width];
        row[i] = T::one();
        if is_pair_second(i) {
            // x_i[n+1] = x_i[n] + k * x_{i-1}[n+1]
            for (r, p) in row.iter_mut().zip(&rows[i - 1]) {
                *r += k * *p;
            }
        } else {
            for (r, inp) in row.iter_mut().zip(&input) {
                *r += k * *inp;
            }
        }
        rows.push(row);
    }

    let mut a = Mat::zeros(n, n);
    let mut b_u = vec![T::zero(); n];
    let mut b_v = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = rows[i][j];
        }
        b_u[i] = rows[i][n];
        b_v[i] = rows[i][n + 1];
    }
    LoopMatrices { a, b_u, b_v }
}

/// Continuous-time assembly in normalized time (clock period = 1):
/// `dx/dt = A x + b_u u + b_v v_dac`.
pub(crate) fn ct_matrices<T: Scalar>(
    c: &CiffCoefficients<T>,
    gain_scale: &[T],
) -> LoopMatrices<T> {
    let n = c.order();
    let pairs = pair_start_indices(n);
    let is_pair_start = |i: usize| pairs.contains(&i);
    let pair_index = |i: usize| pairs.iter().position(|&s| s == i).unwrap();

    let mut a = Mat::zeros(n, n);
    let mut b_u = vec![T::zero(); n];
    let mut b_v = vec![T::zero(); n];
    for i in 0..n {
        let k = c.integrator_gains[i] * gain_scale[i];
        if i == 0 {
            b_u[0] = k * c.input_gain;
            b_v[0] = -k * c.dac1_gain;
        } else {
            a[(i, i - 1)] = k;
        }
        if is_pair_start(i) {
            let g = c.resonator_gains[pair_index(i)];
            a[(i, i + 1)] = -k * g;
        }
    }
    LoopMatrices { a, b_u, b_v }
}

/// Discretization of the feedback path with the NRZ DAC updating half a
/// clock after the quantizer decision (the excess loop delay the DAC2 path
/// compensates). The pulse for `v[n]` spans `[n + 1/2, n + 3/2)`, so the
/// period update sees two segments:
///
/// `x[n+1] = A_d x[n] + phi_new v[n] + phi_old v[n-1] + (input terms)`
pub(crate) struct HalfDelayFeedback<T> {
    pub a_d: Mat<T>,
    /// Segment `[n + 1/2, n + 1)` carrying `v[n]`.
    pub phi_new: Vec<T>,
    /// Segment `[n, n + 1/2)` carrying `v[n-1]`.
    pub phi_old: Vec<T>,
}

pub(crate) fn ct_half_delay_feedback<T: Scalar>(
    c: &CiffCoefficients<T>,
    gain_scale: &[T],
) -> HalfDelayFeedback<T> {
    let m = ct_matrices(c, gain_scale);
    let half = step_kernels(&m.a, T::of(0.5));
    let phi_new = half.q1.matvec(&m.b_v);
    let phi_old = half.e.matvec(&phi_new);
    HalfDelayFeedback {
        a_d: half.e.matmul(&half.e),
        phi_new,
        phi_old,
    }
}

/// Group NTF zeros into resonator angles. Returns angles (rad/sample) of the
/// conjugate pairs, ascending, with a leading DC entry for odd orders.
fn zero_angles<T: Scalar>(ntf: &TransferFunction<T>) -> Result<Vec<T>, CiffError> {
    let n = ntf.zeros().len();
    let tol = T::of(1e-6);
    let mut angles: Vec<T> = Vec::new();
    let mut dc_count = 0usize;
    for z in ntf.zeros() {
        let r = z.norm();
        if (r - T::one()).abs() > tol {
            return Err(CiffError::ZerosOffUnitCircle(r.as_f64()));
        }
        let ang = z.im.atan2(z.re);
        if ang.abs() < T::of(1e-12) {
            dc_count += 1;
        } else if ang > T::zero() {
            angles.push(ang);
        }
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        if dc_count % 2 == 0 {
            return Err(CiffError::MissingDcZero);
        }
        dc_count -= 1;
    }
    // Remaining DC zeros pair up as zero-frequency resonators (g = 0).
    let mut out = Vec::new();
    if n % 2 == 1 {
        out.push(T::zero()); // the lone DC integrator
    }
    for _ in 0..dc_count / 2 {
        out.push(T::zero());
    }
    out.extend(angles);
    if out.len() != n % 2 + n / 2 {
        return Err(CiffError::MissingDcZero);
    }
    Ok(out)
}

/// Realize the target NTF as CIFF coefficients for the requested kind.
pub fn realize_ciff<T: Scalar>(
    ntf: &TransferFunction<T>,
    kind: RealizationKind,
) -> Result<CiffCoefficients<T>, CiffError> {
    let n = ntf.order();
    if n == 0 || n > 8 {
        return Err(CiffError::UnsupportedOrder(n));
    }
    if !ntf.is_stable() {
        return Err(CiffError::UnstableNtf);
    }
    if (ntf.gain() - T::one()).abs() > T::of(1e-9) {
        return Err(CiffError::NonUnityGain(ntf.gain().as_f64()));
    }

    let angles = zero_angles(ntf)?;
    let pair_angles = &angles[n % 2..];
    let resonator_gains: Vec<T> = pair_angles
        .iter()
        .map(|&w| match kind {
            // Pair eigenvalues at e^{+-jw}: z^2 - (2 - g) z + 1.
            RealizationKind::DiscreteTime => T::of(2.0) * (T::one() - w.cos()),
            // CT pair eigenvalues at +-j sqrt(g) per clock: exp gives e^{+-jw}.
            RealizationKind::ContinuousTime => w * w,
        })
        .collect();

    let mut coeffs = CiffCoefficients {
        kind,
        integrator_gains: vec![T::one(); n],
        feedforward: vec![T::zero(); n],
        resonator_gains,
        dac1_gain: T::one(),
        dac2_gain: T::zero(),
        input_gain: T::one(),
    };
    let unit = vec![T::one(); n];
    let denom = ntf.denominator();

    match kind {
        RealizationKind::DiscreteTime => {
            // char_cl(z) = char_A(z) - a.adj(zI-A).b_v must equal the NTF
            // denominator D(z); char_A(z) is the numerator by construction.
            let lm = dt_matrices(&coeffs, &unit);
            let (char_a, adj_mats) = faddeev_leverrier(&lm.a);

            // Basis polynomials q_i(z) = [adj(zI - A) b_v]_i.
            let mut basis = vec![vec![T::zero(); n]; n];
            for (k, mk) in adj_mats.iter().enumerate() {
                // mk multiplies z^{n-1-k}
                let col = mk.matvec(&lm.b_v);
                for i in 0..n {
                    basis[i][n - 1 - k] += col[i];
                }
            }

            // Solve sum_i a_i q_i(z) = char_A(z) - D(z) coefficient-wise.
            let mut m = Mat::zeros(n, n);
            let mut rhs = vec![T::zero(); n];
            for j in 0..n {
                for i in 0..n {
                    m[(j, i)] = basis[i][j];
                }
                rhs[j] = char_a[j] - denom[j];
            }
            let a = solve(&m, &rhs).ok_or(CiffError::SingularSystem)?;
            coeffs.feedforward = a;
        }
        RealizationKind::ContinuousTime => {
            // The NRZ DAC updates half a clock after the quantizer; the
            // direct DAC2 path absorbs the delayed part of the response:
            //   -a.adj(zI-A_d)(phi_new z + phi_old) + dac2 Z(z) = z (D - Z)
            // in N+1 coefficients for the N feedforward weights plus dac2.
            let fb = ct_half_delay_feedback(&coeffs, &unit);
            let (char_a, adj_mats) = faddeev_leverrier(&fb.a_d);

            let mut basis = vec![vec![T::zero(); n + 2]; n];
            for (k, mk) in adj_mats.iter().enumerate() {
                // mk multiplies z^{n-1-k}
                let col_new = mk.matvec(&fb.phi_new);
                let col_old = mk.matvec(&fb.phi_old);
                for i in 0..n {
                    basis[i][n - k] += col_new[i];
                    basis[i][n - 1 - k] += col_old[i];
                }
            }

            // char_a holds c[0..n-1]; the monic z^n coefficient is implicit.
            let mut m = Mat::zeros(n + 1, n + 1);
            let mut rhs = vec![T::zero(); n + 1];
            for j in 0..=n {
                for i in 0..n {
                    m[(j, i)] = -basis[i][j];
                }
                m[(j, n)] = if j == n { T::one() } else { char_a[j] };
                rhs[j] = if j == 0 {
                    T::zero()
                } else {
                    denom[j - 1] - char_a[j - 1]
                };
            }
            let sol = solve(&m, &rhs).ok_or(CiffError::SingularSystem)?;
            coeffs.feedforward = sol[..n].to_vec();
            coeffs.dac2_gain = sol[n];
        }
    }

    // Normalize the feed-in for unity DC signal gain. STF(1) =
    // b1 * dc_num / den(1) with both factors finite even when an
    // integrator's infinite DC gain meets an NTF zero at z = 1.
    let dc_unit = dc_gain(&coeffs);
    if dc_unit.abs() > T::of(1e-12) {
        coeffs.input_gain = T::one() / dc_unit;
    }

    // Dynamic-range scaling: rescale internal states so swings stay within
    // the quantizer range (the NTF and STF are invariant under this).
    scale_state_swings(&mut coeffs);

    for &ai in coeffs
        .feedforward
        .iter()
        .chain(coeffs.integrator_gains.iter())
        .chain(coeffs.resonator_gains.iter())
    {
        if ai.abs() > T::of(1e3) {
            return Err(CiffError::IllConditioned(ai.abs().as_f64()));
        }
    }
    Ok(coeffs)
}

/// Recover the NTF realized by a coefficient set (linearized quantizer).
pub fn extract_ntf<T: Scalar>(c: &CiffCoefficients<T>) -> Result<TransferFunction<T>, CiffError> {
    c.validate()?;
    let n = c.order();
    let unit = vec![T::one(); n];

    // NTF zeros are the loop-filter eigenvalues, exact from the resonator
    // block structure.
    let mut zeros: Vec<Complex<T>> = Vec::with_capacity(n);
    if n % 2 == 1 {
        zeros.push(Complex::new(T::one(), T::zero()));
    }
    for (m_idx, &start) in pair_start_indices(n).iter().enumerate() {
        let g = c.resonator_gains[m_idx];
        let kk = c.integrator_gains[start] * c.integrator_gains[start + 1];
        match c.kind {
            RealizationKind::DiscreteTime => {
                // z^2 - (2 - kk g) z + 1
                let cos_w = T::one() - kk * g / T::of(2.0);
                let sin_w = (T::one() - cos_w * cos_w).max(T::zero()).sqrt();
                zeros.push(Complex::new(cos_w, sin_w));
                zeros.push(Complex::new(cos_w, -sin_w));
            }
            RealizationKind::ContinuousTime => {
                let w = (kk * g).max(T::zero()).sqrt();
                zeros.push(Complex::new(w.cos(), w.sin()));
                zeros.push(Complex::new(w.cos(), -w.sin()));
            }
        }
    }

    match c.kind {
        RealizationKind::DiscreteTime => {
            let lm = dt_matrices(c, &unit);
            let (char_a, adj_mats) = faddeev_leverrier(&lm.a);
            // a . adj(zI - A) b_v
            let mut c_adj_bv = vec![T::zero(); n];
            for (k, mk) in adj_mats.iter().enumerate() {
                let col = mk.matvec(&lm.b_v);
                let dot = c
                    .feedforward
                    .iter()
                    .zip(&col)
                    .fold(T::zero(), |acc, (&ai, &qi)| acc + ai * qi);
                c_adj_bv[n - 1 - k] += dot;
            }

            if c.dac2_gain == T::zero() {
                // Denominator: char_A - a.adj.b_v
                let mut den = vec![T::zero(); n + 1];
                den[n] = T::one();
                for j in 0..n {
                    den[j] = char_a[j] - c_adj_bv[j];
                }
                let poles = real_poly_roots(&den);
                TransferFunction::new(zeros, poles, T::one())
                    .map_err(|_| CiffError::SingularSystem)
            } else {
                // dac2 adds a one-sample direct path around the quantizer:
                // NTF = z char_A / (z (char_A - a.adj.b_v) + dac2 char_A).
                let mut den = vec![T::zero(); n + 2];
                for j in 0..n {
                    den[j + 1] += char_a[j] - c_adj_bv[j];
                    den[j] += c.dac2_gain * char_a[j];
                }
                den[n + 1] += T::one();
                den[n] += c.dac2_gain;
                zeros.push(Complex::new(T::zero(), T::zero()));
                let poles = real_poly_roots(&den);
                cancel_origin_pair(zeros, poles)
            }
        }
        RealizationKind::ContinuousTime => {
            // Half-delay NRZ feedback:
            // NTF = z char_A / (z char_A - a.adj(phi_new z + phi_old)
            //                   + dac2 char_A)
            let fb = ct_half_delay_feedback(c, &unit);
            let (char_a, adj_mats) = faddeev_leverrier(&fb.a_d);

            let mut a_basis = vec![T::zero(); n + 1];
            for (k, mk) in adj_mats.iter().enumerate() {
                let col_new = mk.matvec(&fb.phi_new);
                let col_old = mk.matvec(&fb.phi_old);
                let dot_new = c
                    .feedforward
                    .iter()
                    .zip(&col_new)
                    .fold(T::zero(), |acc, (&ai, &qi)| acc + ai * qi);
                let dot_old = c
                    .feedforward
                    .iter()
                    .zip(&col_old)
                    .fold(T::zero(), |acc, (&ai, &qi)| acc + ai * qi);
                a_basis[n - k] += dot_new;
                a_basis[n - 1 - k] += dot_old;
            }

            let mut den = vec![T::zero(); n + 2];
            den[n + 1] = T::one(); // z * z^n
            den[n] += c.dac2_gain;
            for j in 0..n {
                den[j + 1] += char_a[j];
                den[j] += c.dac2_gain * char_a[j];
            }
            for j in 0..=n {
                den[j] -= a_basis[j];
            }
            zeros.push(Complex::new(T::zero(), T::zero()));
            let poles = real_poly_roots(&den);
            cancel_origin_pair(zeros, poles)
        }
    }
}

/// Largest integrator swing tolerated after dynamic-range scaling, in units
/// of the DAC feedback level. Swings are scaled to the full quantizer range
/// (2x the feedback level); realizations whose natural swing already fits
/// are left untouched so canonical designs keep their textbook coefficients.
const SWING_TARGET: f64 = 2.0;

/// Rescale internal states so simulated swings stay within [`SWING_TARGET`].
///
/// State substitution `x_i -> x_i / s_i` maps the coefficients as
/// `k_i -> k_i s_{i-1}/s_i`, `g_m -> g_m s_{i+1}/s_{i-1}`, `a_i -> a_i s_i`
/// (with `s_0 = 1` at the input node), leaving NTF and STF unchanged.
fn scale_state_swings<T: Scalar>(c: &mut CiffCoefficients<T>) {
    let n = c.order();
    let mut swing = vec![T::zero(); n];
    for &amp in &[T::zero(), T::of(0.35), T::of(0.55)] {
        let s = swing_probe(c, amp);
        for i in 0..n {
            if s[i] > swing[i] {
                swing[i] = s[i];
            }
        }
    }
    let scales: Vec<T> = swing
        .iter()
        .map(|&s| (s / T::of(SWING_TARGET)).max(T::one()))
        .collect();

    let pairs = pair_start_indices(n);
    for i in 0..n {
        let prev = if i == 0 { T::one() } else { scales[i - 1] };
        c.integrator_gains[i] = c.integrator_gains[i] * prev / scales[i];
        c.feedforward[i] = c.feedforward[i] * scales[i];
    }
    for (m, &start) in pairs.iter().enumerate() {
        let prev = if start == 0 { T::one() } else { scales[start - 1] };
        c.resonator_gains[m] = c.resonator_gains[m] * scales[start + 1] / prev;
    }
}

/// Per-state maximum absolute excursion for a sine drive at the given
/// amplitude (fraction of full scale), over a fixed-length noiseless run.
fn swing_probe<T: Scalar>(c: &CiffCoefficients<T>, amplitude: T) -> Vec<T> {
    let n = c.order();
    let len = 8192usize;
    let w_sig = T::of(2.0) * T::PI() * T::of(0.003); // in-band for OSR >= 8
    let unit = vec![T::one(); n];
    let mut x = vec![T::zero(); n];
    let mut swing = vec![T::zero(); n];
    let mut v_prev = T::zero();
    let cap = T::of(1e12);

    match c.kind {
        RealizationKind::DiscreteTime => {
            let lm = dt_matrices(c, &unit);
            for t in 0..len {
                let u = amplitude * (w_sig * T::from_usize(t).unwrap()).cos();
                let y = dot(&c.feedforward, &x) - c.dac2_gain * v_prev;
                let v = if y >= T::zero() { T::one() } else { -T::one() };
                let mut next = lm.a.matvec(&x);
                for i in 0..n {
                    next[i] += lm.b_u[i] * u + lm.b_v[i] * v;
                    next[i] = next[i].max(-cap).min(cap);
                    if next[i].abs() > swing[i] {
                        swing[i] = next[i].abs();
                    }
                }
                x = next;
                v_prev = v;
            }
        }
        RealizationKind::ContinuousTime => {
            // Half-period stepping honours the delayed DAC pulse; the input
            // is in-band and slow, held constant per period.
            let mc = ct_matrices(c, &unit);
            let kern = step_kernels(&mc.a, T::of(0.5));
            let q1_bu = kern.q1.matvec(&mc.b_u);
            let q1_bv = kern.q1.matvec(&mc.b_v);
            let mut v_dac_new = T::zero();
            for t in 0..len {
                let u = amplitude * (w_sig * T::from_usize(t).unwrap()).cos();
                let y = dot(&c.feedforward, &x) - c.dac2_gain * v_prev;
                let v = if y >= T::zero() { T::one() } else { -T::one() };
                let v_dac_old = v_dac_new;
                v_dac_new = v;
                for half in 0..2 {
                    let dac = if half == 0 { v_dac_old } else { v_dac_new };
                    let mut next = kern.e.matvec(&x);
                    for i in 0..n {
                        next[i] += q1_bu[i] * u + q1_bv[i] * dac;
                        next[i] = next[i].max(-cap).min(cap);
                        if next[i].abs() > swing[i] {
                            swing[i] = next[i].abs();
                        }
                    }
                    x = next;
                }
                v_prev = v;
            }
        }
    }
    swing
}

/// Signed DC gain of the closed-loop signal path, `STF(1)`.
///
/// Evaluated algebraically as `dc_num / den(1)`: the adjugate form keeps the
/// product finite where an integrator's unbounded DC gain multiplies an NTF
/// zero at z = 1.
pub fn dc_gain<T: Scalar>(c: &CiffCoefficients<T>) -> T {
    let n = c.order();
    let unit = vec![T::one(); n];
    match c.kind {
        RealizationKind::DiscreteTime => {
            let lm = dt_matrices(c, &unit);
            let (char_a, adj_mats) = faddeev_leverrier(&lm.a);
            let mut adj_sum = Mat::zeros(n, n);
            for mk in &adj_mats {
                adj_sum.add_assign(mk);
            }
            let dc_num = dot(&c.feedforward, &adj_sum.matvec(&lm.b_u));
            let mut c_adj_bv = vec![T::zero(); n];
            for (k, mk) in adj_mats.iter().enumerate() {
                c_adj_bv[n - 1 - k] += dot(&c.feedforward, &mk.matvec(&lm.b_v));
            }
            // den(1): char_A(1) - a.adj(1).b_v, plus the dac2 z-augmentation
            // which at z = 1 reduces to (1 + dac2) char_A(1) - a.adj.b_v.
            let char_a1 = char_a.iter().fold(T::one(), |acc, &x| acc + x);
            let sum_adj_bv = c_adj_bv.iter().fold(T::zero(), |acc, &x| acc + x);
            let den1 = char_a1 * (T::one() + c.dac2_gain) - sum_adj_bv;
            dc_num / den1
        }
        RealizationKind::ContinuousTime => {
            let mc = ct_matrices(c, &unit);
            let fb = ct_half_delay_feedback(c, &unit);
            let kern = step_kernels(&mc.a, T::one());
            let beta_u = kern.q1.matvec(&mc.b_u);
            let (char_a, adj_mats) = faddeev_leverrier(&fb.a_d);
            let mut adj_sum = Mat::zeros(n, n);
            for mk in &adj_mats {
                adj_sum.add_assign(mk);
            }
            let dc_num = dot(&c.feedforward, &adj_sum.matvec(&beta_u));
            let mut a_fb = T::zero();
            for mk in &adj_mats {
                let seg = mk.matvec(&fb.phi_new);
                a_fb += dot(&c.feedforward, &seg);
                let seg = mk.matvec(&fb.phi_old);
                a_fb += dot(&c.feedforward, &seg);
            }
            let char_a1 = char_a.iter().fold(T::one(), |acc, &x| acc + x);
            let den1 = char_a1 * (T::one() + c.dac2_gain) - a_fb;
            dc_num / den1
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn real_poly_roots<T: Scalar>(coeffs: &[T]) -> Vec<Complex<T>> {
    let c: Vec<Complex<T>> = coeffs
        .iter()
        .map(|&x| Complex::new(x, T::zero()))
        .collect();
    poly::roots(&c)
}

/// Drop a matched zero/pole pair at the origin, the common factor left over
/// when a delayed-DAC loop realizes its target exactly.
fn cancel_origin_pair<T: Scalar>(
    mut zeros: Vec<Complex<T>>,
    mut poles: Vec<Complex<T>>,
) -> Result<TransferFunction<T>, CiffError> {
    let zero_at_origin = zeros
        .iter()
        .position(|z| z.norm() < T::of(1e-9));
    let pole_near_origin = poles
        .iter()
        .position(|p| p.norm() < T::of(1e-6));
    if let (Some(zi), Some(pi)) = (zero_at_origin, pole_near_origin) {
        zeros.remove(zi);
        poles.remove(pi);
    }
    TransferFunction::new(zeros, poles, T::one()).map_err(|_| CiffError::SingularSystem)
}

/// Closed-loop signal transfer function report.
#[derive(Debug, Clone)]
pub struct StfReport<T> {
    /// Exact rational STF in z (available for zero-delay single feed-in
    /// loops, i.e. `dac2 = 0`).
    pub rational: Option<TransferFunction<T>>,
    pub peak_magnitude: T,
    /// Normalized angular frequency (rad/sample) of the peak.
    pub peak_freq: T,
    pub dc_magnitude: T,
}

/// Compute the closed-loop STF of a realized CIFF loop.
///
/// For discrete-time loops with a single feed-in sharing the input node with
/// DAC1 and no direct quantizer path, `STF(z) = (b1/dac1) (1 - NTF(z))`
/// exactly and the rational form is returned. For continuous-time loops the
/// signal rides through the analog filter before the sampled loop closes
/// around it: `STF(f) = L0(j 2 pi f) NTF(e^{j 2 pi f / f_s})`, evaluated on
/// a dense grid up to the sampling frequency.
pub fn compute_stf<T: Scalar>(c: &CiffCoefficients<T>) -> Result<StfReport<T>, CiffError> {
    c.validate()?;
    let ntf = extract_ntf(c)?;
    if c.dac2_gain != T::zero() || c.kind == RealizationKind::ContinuousTime {
        return stf_from_response(c, &ntf);
    }
    let scale = c.input_gain / c.dac1_gain;
    // STF = scale * (D - Z)/D
    let num_d = ntf.denominator();
    let num_z = ntf.numerator();
    let diff: Vec<Complex<T>> = num_d
        .iter()
        .zip(&num_z)
        .map(|(&d, &z)| Complex::new(d - z, T::zero()))
        .collect();
    // Leading coefficient cancels (both monic): degree n-1 polynomial.
    let mut diff_trim = diff.clone();
    while diff_trim.len() > 1 && diff_trim.last().unwrap().norm() < T::of(1e-12) {
        diff_trim.pop();
    }
    let lead = diff_trim.last().unwrap().re;
    let stf_zeros = poly::roots(&diff_trim);
    let stf = TransferFunction::new(stf_zeros, ntf.poles().to_vec(), scale * lead)
        .map_err(|_| CiffError::SingularSystem)?;
    let (w, m) = stf.peak_magnitude(4096);
    let dc = stf.magnitude(T::zero());
    Ok(StfReport {
        rational: Some(stf),
        peak_magnitude: m,
        peak_freq: w,
        dc_magnitude: dc,
    })
}

/// Complex closed-loop signal response at normalized frequency `w`
/// (rad/sample of the design clock). Used both for STF reports and for
/// receiver-side equalization of the deterministic channel response.
pub fn stf_response<T: Scalar>(c: &CiffCoefficients<T>, w: T) -> Result<Complex<T>, CiffError> {
    c.validate()?;
    let ntf = extract_ntf(c)?;
    let n = c.order();
    let unit = vec![T::one(); n];
    if w.abs() < T::of(1e-12) {
        return Ok(Complex::new(dc_gain(c), T::zero()));
    }
    let resp = match c.kind {
        RealizationKind::DiscreteTime => {
            let lm = dt_matrices(c, &unit);
            let z = Complex::new(w.cos(), w.sin());
            let pre = resolvent_dot(&lm, &c.feedforward, z);
            pre * ntf.eval_omega(w)
        }
        RealizationKind::ContinuousTime => {
            let lm = ct_matrices(c, &unit);
            let s = Complex::new(T::zero(), w);
            let pre = resolvent_dot(&lm, &c.feedforward, s);
            pre * ntf.eval_omega(w)
        }
    };
    Ok(resp)
}

fn stf_from_response<T: Scalar>(
    c: &CiffCoefficients<T>,
    ntf: &TransferFunction<T>,
) -> Result<StfReport<T>, CiffError> {
    let n = c.order();
    let unit = vec![T::one(); n];
    let lm = match c.kind {
        RealizationKind::DiscreteTime => dt_matrices(c, &unit),
        RealizationKind::ContinuousTime => ct_matrices(c, &unit),
    };
    let response = |w: T| -> T {
        let pre = match c.kind {
            RealizationKind::DiscreteTime => {
                resolvent_dot(&lm, &c.feedforward, Complex::new(w.cos(), w.sin()))
            }
            RealizationKind::ContinuousTime => {
                resolvent_dot(&lm, &c.feedforward, Complex::new(T::zero(), w))
            }
        };
        pre.norm() * ntf.eval_omega(w).norm()
    };
    let grid = 8192;
    let mut best = (T::zero(), T::zero());
    // At exact DC an odd-order analog chain has a singular resolvent while
    // the NTF zero cancels it; the adjugate form evaluates the limit.
    let dc = dc_gain(c).abs();
    for kf in 1..=grid {
        let w = T::PI() * T::from_usize(kf).unwrap() / T::from_usize(grid).unwrap();
        let mag = response(w);
        if mag > best.1 {
            best = (w, mag);
        }
    }
    Ok(StfReport {
        rational: None,
        peak_magnitude: best.1.max(dc),
        peak_freq: best.0,
        dc_magnitude: dc,
    })
}

/// `a . (zI - A)^{-1} b_u` by solving the small complex system directly.
fn resolvent_dot<T: Scalar>(lm: &LoopMatrices<T>, a_vec: &[T], z: Complex<T>) -> Complex<T> {
    let n = lm.a.rows();
    // Solve (zI - A) x = b_u in complex arithmetic via Gaussian elimination.
    let mut m: Vec<Vec<Complex<T>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = if i == j { z } else { Complex::new(T::zero(), T::zero()) };
                    d - Complex::new(lm.a[(i, j)], T::zero())
                })
                .collect()
        })
        .collect();
    let mut rhs: Vec<Complex<T>> = lm
        .b_u
        .iter()
        .map(|&b| Complex::new(b, T::zero()))
        .collect();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].norm() > m[piv][col].norm() {
                piv = r;
            }
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        let d = m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / d;
            for j in col..n {
                let v = m[col][j];
                m[r][j] = m[r][j] - f * v;
            }
            let v = rhs[col];
            rhs[r] = rhs[r] - f * v;
        }
    }
    let mut x = vec![Complex::new(T::zero(), T::zero()); n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for j in r + 1..n {
            acc = acc - m[r][j] * x[j];
        }
        x[r] = acc / m[r][r];
    }
    a_vec
        .iter()
        .zip(&x)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (&ai, &xi)| {
            acc + xi * ai
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntf::{synthesize_ntf, NtfSpec};
    use crate::tf::mod1_ntf;

    fn match_roots(got: &[Complex<f64>], want: &[Complex<f64>], tol: f64, what: &str) {
        assert_eq!(got.len(), want.len(), "{what}: count mismatch");
        for w in want {
            let nearest = got.iter().map(|g| (g - w).norm()).fold(f64::MAX, f64::min);
            assert!(
                nearest <= tol,
                "{what}: root {w} missed by {nearest:e} (tol {tol:e})"
            );
        }
    }

    #[test]
    fn mod1_realization_is_canonical() {
        let ntf = mod1_ntf::<f64>();
        let c = realize_ciff(&ntf, RealizationKind::DiscreteTime).unwrap();
        assert_eq!(c.integrator_gains, vec![1.0]);
        assert!((c.feedforward[0] - 1.0).abs() < 1e-12);
        assert!(c.resonator_gains.is_empty());
        assert_eq!(c.dac1_gain, 1.0);
        assert_eq!(c.dac2_gain, 0.0);
        assert!((c.input_gain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dt_round_trip_all_orders() {
        for order in 1..=8 {
            let ntf = synthesize_ntf(&NtfSpec::<f64>::new(order, 50.0)).unwrap();
            let c = realize_ciff(&ntf, RealizationKind::DiscreteTime).unwrap();
            let back = extract_ntf(&c).unwrap();
            match_roots(back.poles(), ntf.poles(), 1e-3, &format!("order {order} poles"));
            match_roots(back.zeros(), ntf.zeros(), 1e-3, &format!("order {order} zeros"));
        }
    }

    #[test]
    fn ct_round_trip_all_orders() {
        for order in 1..=8 {
            let ntf = synthesize_ntf(&NtfSpec::<f64>::new(order, 50.0)).unwrap();
            let c = realize_ciff(&ntf, RealizationKind::ContinuousTime).unwrap();
            let back = extract_ntf(&c).unwrap();
            match_roots(back.poles(), ntf.poles(), 1e-3, &format!("order {order} poles"));
            match_roots(back.zeros(), ntf.zeros(), 1e-3, &format!("order {order} zeros"));
        }
    }

    #[test]
    fn round_trip_tight_radial_error() {
        // 0.1% radial agreement on the paper-like fourth-order design.
        let ntf = synthesize_ntf(&NtfSpec::<f64>::new(4, 50.0)).unwrap();
        for kind in [RealizationKind::DiscreteTime, RealizationKind::ContinuousTime] {
            let c = realize_ciff(&ntf, kind).unwrap();
            let back = extract_ntf(&c).unwrap();
            for p in ntf.poles() {
                let nearest = back
                    .poles()
                    .iter()
                    .map(|g| (g - p).norm())
                    .fold(f64::MAX, f64::min);
                assert!(nearest < 1e-3 * p.norm().max(0.1), "{kind:?}: pole {p}");
            }
            for z in ntf.zeros() {
                let nearest = back
                    .zeros()
                    .iter()
                    .map(|g| (g - z).norm())
                    .fold(f64::MAX, f64::min);
                assert!(nearest < 1e-3, "{kind:?}: zero {z}");
            }
        }
    }

    #[test]
    fn stf_is_unity_at_dc() {
        for order in [2usize, 4] {
            let ntf = synthesize_ntf(&NtfSpec::<f64>::new(order, 50.0)).unwrap();
            let c = realize_ciff(&ntf, RealizationKind::DiscreteTime).unwrap();
            let stf = compute_stf(&c).unwrap();
            assert!(
                (stf.dc_magnitude - 1.0).abs() < 1e-6,
                "order {order}: |STF(1)| = {}",
                stf.dc_magnitude
            );
        }
    }

    #[test]
    fn paper_design_stf_peak() {
        // Fourth-order, OSR 50, ||H||inf 1.5, optimized zeros, single
        // feed-in continuous-time loop: peaking of 8.3 +- 0.2 dB.
        let ntf = synthesize_ntf(&NtfSpec::<f64>::new(4, 50.0)).unwrap();
        let ct = realize_ciff(&ntf, RealizationKind::ContinuousTime).unwrap();
        let stf = compute_stf(&ct).unwrap();
        let peak_db = 20.0 * stf.peak_magnitude.log10();
        assert!(
            (peak_db - 8.3).abs() < 0.2,
            "CT STF peaking {} dB should be 8.3 +- 0.2 dB (magnitude {})",
            peak_db,
            stf.peak_magnitude
        );
        assert!(stf.peak_freq > std::f64::consts::PI / 50.0, "peak out of band");
        assert!((stf.dc_magnitude - 1.0).abs() < 1e-6);
    }

    #[test]
    fn first_order_stf_peak_matches_dense_grid() {
        let ntf = mod1_ntf::<f64>();
        let c = realize_ciff(&ntf, RealizationKind::DiscreteTime).unwrap();
        let stf = compute_stf(&c).unwrap();
        // Direct dense evaluation of |1 - NTF| as the oracle.
        let mut best = 0.0_f64;
        for k in 0..=100_000 {
            let w = std::f64::consts::PI * k as f64 / 100_000.0;
            let z = num_complex::Complex::new(w.cos(), w.sin());
            let v = (num_complex::Complex::new(1.0, 0.0) - ntf.eval(z)).norm();
            if v > best {
                best = v;
            }
        }
        assert!(
            (stf.peak_magnitude - best).abs() < 1e-6,
            "STF peak {} vs dense-grid {best}",
            stf.peak_magnitude
        );
    }

    #[test]
    fn rejects_off_circle_zeros() {
        let tf = TransferFunction::<f64>::new(
            vec![Complex::new(0.9, 0.1), Complex::new(0.9, -0.1)],
            vec![Complex::new(0.2, 0.0), Complex::new(0.3, 0.0)],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            realize_ciff(&tf, RealizationKind::DiscreteTime),
            Err(CiffError::ZerosOffUnitCircle(_))
        ));
    }
}
