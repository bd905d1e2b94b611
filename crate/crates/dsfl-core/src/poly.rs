//! Polynomial helpers over complex coefficients.
//!
//! Coefficients are stored ascending: `p[0] + p[1] z + ... + p[d] z^d`.
//! Root finding uses Durand–Kerner with Newton polishing, which is adequate
//! for the degree <= 9, well-separated root sets produced by modulator
//! synthesis.

use num_complex::Complex;

use crate::scalar::Scalar;

pub(crate) type CPoly<T> = Vec<Complex<T>>;

/// Monic polynomial with the given roots.
pub(crate) fn from_roots<T: Scalar>(roots: &[Complex<T>]) -> CPoly<T> {
    let mut p = vec![Complex::new(T::one(), T::zero())];
    for &r in roots {
        let mut next = vec![Complex::new(T::zero(), T::zero()); p.len() + 1];
        for (k, &c) in p.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        p = next;
    }
    p
}

pub(crate) fn eval<T: Scalar>(p: &[Complex<T>], z: Complex<T>) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for &c in p.iter().rev() {
        acc = acc * z + c;
    }
    acc
}

fn derivative<T: Scalar>(p: &[Complex<T>]) -> CPoly<T> {
    p.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| c * T::from_usize(k).unwrap())
        .collect()
}

/// All roots of a polynomial (any leading coefficient, degree >= 1).
///
/// Durand–Kerner simultaneous iteration followed by a few Newton steps per
/// root. Multiple roots converge slowly and lose accuracy; callers that need
/// exact multiple roots should avoid root-finding and carry the factored
/// form instead.
pub(crate) fn roots<T: Scalar>(p: &[Complex<T>]) -> Vec<Complex<T>> {
    // Trim trailing (leading-coefficient) zeros.
    let mut p = p.to_vec();
    while p.len() > 1 && p.last().unwrap().norm() < T::of(1e-300) {
        p.pop();
    }
    let d = p.len() - 1;
    if d == 0 {
        return Vec::new();
    }
    // Normalize to monic.
    let lead = p[d];
    let monic: CPoly<T> = p.iter().map(|&c| c / lead).collect();

    // Cauchy bound on root magnitude.
    let bound = T::one()
        + monic[..d]
            .iter()
            .map(|c| c.norm())
            .fold(T::zero(), |a, b| if b > a { b } else { a });

    // Distinct starting points on a spiral.
    let seed = Complex::new(T::of(0.4), T::of(0.9));
    let mut xs: Vec<Complex<T>> = (0..d)
        .map(|k| {
            let mut z = Complex::new(bound * T::of(0.7), T::zero());
            for _ in 0..k {
                z = z * seed;
            }
            z + Complex::new(T::of(0.1), T::of(0.05))
        })
        .collect();

    let tol = T::of(1e-14) * bound;
    for _ in 0..400 {
        let mut max_step = T::zero();
        for i in 0..d {
            let mut denom = Complex::new(T::one(), T::zero());
            for j in 0..d {
                if j != i {
                    denom *= xs[i] - xs[j];
                }
            }
            if denom.norm() < T::of(1e-300) {
                // Perturb coincident estimates.
                xs[i] += Complex::new(T::of(1e-6), T::of(1e-6));
                continue;
            }
            let step = eval(&monic, xs[i]) / denom;
            xs[i] -= step;
            if step.norm() > max_step {
                max_step = step.norm();
            }
        }
        if max_step < tol {
            break;
        }
    }

    // Newton polish.
    let dp = derivative(&monic);
    for x in &mut xs {
        for _ in 0..5 {
            let f = eval(&monic, *x);
            let df = eval(&dp, *x);
            if df.norm() < T::of(1e-300) {
                break;
            }
            let step = f / df;
            *x -= step;
            if step.norm() < T::of(1e-16) * bound {
                break;
            }
        }
    }
    xs
}

/// Pair complex values into a conjugate-symmetric set: values with tiny
/// imaginary part are realified, others are averaged with their conjugate
/// partner. Returns `None` if no consistent pairing exists.
pub(crate) fn enforce_conjugate_pairs<T: Scalar>(
    vals: &[Complex<T>],
    tol: T,
) -> Option<Vec<Complex<T>>> {
    let mut out = Vec::with_capacity(vals.len());
    let mut used = vec![false; vals.len()];
    for i in 0..vals.len() {
        if used[i] {
            continue;
        }
        let v = vals[i];
        if v.im.abs() <= tol * (T::one() + v.norm()) {
            out.push(Complex::new(v.re, T::zero()));
            used[i] = true;
            continue;
        }
        // Find the closest unused conjugate partner.
        let mut best: Option<(usize, T)> = None;
        for (j, w) in vals.iter().enumerate() {
            if j == i || used[j] {
                continue;
            }
            let dist = (*w - v.conj()).norm();
            if best.map_or(true, |(_, d)| dist < d) {
                best = Some((j, dist));
            }
        }
        let (j, dist) = best?;
        if dist > tol * (T::one() + v.norm()) * T::of(100.0) {
            return None;
        }
        let avg = (v + vals[j].conj()) / T::of(2.0);
        out.push(avg);
        out.push(avg.conj());
        used[i] = true;
        used[j] = true;
    }
    Some(out)
}
