//! Dynamic stochastic quantizer.
//!
//! Any finite input `y` decomposes uniquely as `y = n*d + z` with
//! `z in (0, d]`. The quantizer rounds to the lattice point `n*d` with
//! probability `1 - z/d` and to `(n+1)*d` with probability `z/d`, so the
//! output is unbiased (`E[Q(y)|y] = y`) with conditional variance
//! `z(d - z) <= d^2/4`. Exact multiples of `d` decompose with `z = d` and
//! pass through unchanged.
//!
//! Besides the sampling path, this module exposes the exact two-point
//! outcome distribution and the worst-case event-probability gap between
//! two nearby inputs, both of which serve as test oracles for the
//! statistical and privacy properties.

use rand::Rng;

use crate::error::{Error, Result};

/// Inputs whose lattice index would not be exactly representable are refused.
const MAX_RATIO: f64 = 1e15;

/// Exact two-point distribution of `Q(y)` for stepsize `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantOutcome {
    /// Lattice index of the lower support point.
    pub lattice: i64,
    /// The two support points `{n*d, (n+1)*d}`.
    pub support: [f64; 2],
    /// Probabilities of the support points; sum to 1.
    pub probabilities: [f64; 2],
}

impl QuantOutcome {
    /// Exact mean of the distribution.
    pub fn mean(&self) -> f64 {
        self.support[0] * self.probabilities[0] + self.support[1] * self.probabilities[1]
    }

    /// Exact variance of the distribution.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probabilities[0] * (self.support[0] - m).powi(2)
            + self.probabilities[1] * (self.support[1] - m).powi(2)
    }
}

fn check_input(y: f64, d: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::invalid(format!("quantizer input must be finite, got {y}")));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::invalid(format!("quantizer stepsize must be positive, got {d}")));
    }
    if (y / d).abs() > MAX_RATIO {
        return Err(Error::invalid(format!(
            "|y/d| = {:.3e} exceeds the representable lattice range",
            (y / d).abs()
        )));
    }
    Ok(())
}

/// Decompose `y = n*d + z` with `z in (0, d]` and `n` the unique integer
/// making that hold.
pub fn decompose(y: f64, d: f64) -> Result<(i64, f64)> {
    check_input(y, d)?;
    let mut n = (y / d).ceil() as i64 - 1;
    let mut z = y - n as f64 * d;
    // Rounding in y/d can land one lattice step off; walk back into (0, d].
    while z <= 0.0 {
        n -= 1;
        z = y - n as f64 * d;
    }
    while z > d {
        n += 1;
        z = y - n as f64 * d;
    }
    Ok((n, z))
}

/// Exact outcome distribution of the quantizer on input `y`.
pub fn outcome_distribution(y: f64, d: f64) -> Result<QuantOutcome> {
    let (n, z) = decompose(y, d)?;
    let p_up = z / d;
    Ok(QuantOutcome {
        lattice: n,
        support: [n as f64 * d, (n + 1) as f64 * d],
        probabilities: [1.0 - p_up, p_up],
    })
}

/// Draw one quantized value, consuming exactly one uniform variate.
pub fn quantize<R: Rng + ?Sized>(y: f64, d: f64, stream: &mut R) -> Result<f64> {
    let (n, z) = decompose(y, d)?;
    let u: f64 = stream.random();
    let level = if u < z / d { n + 1 } else { n };
    Ok(level as f64 * d)
}

/// Quantize a vector coordinate-wise with independent variates, consumed in
/// coordinate order.
pub fn quantize_vector<R: Rng + ?Sized>(
    y: &nalgebra::DVector<f64>,
    d: f64,
    stream: &mut R,
) -> Result<nalgebra::DVector<f64>> {
    let mut out = nalgebra::DVector::zeros(y.len());
    for (o, &v) in out.iter_mut().zip(y.iter()) {
        *o = quantize(v, d, stream)?;
    }
    Ok(out)
}

/// Worst-case gap `max_tau |P(Q(y) in tau) - P(Q(y') in tau)|` over all
/// subsets of the union support, by exhaustive enumeration. Requires
/// `|y - y'| < d`; the result is bounded by `|y - y'| / d`.
pub fn event_probability_gap(y: f64, y_prime: f64, d: f64) -> Result<f64> {
    if !((y - y_prime).abs() < d) {
        return Err(Error::invalid(format!(
            "|y - y'| = {} must be smaller than d = {d}",
            (y - y_prime).abs()
        )));
    }
    let a = outcome_distribution(y, d)?;
    let b = outcome_distribution(y_prime, d)?;

    // Union support indexed by lattice position; at most 4 distinct points.
    let mut keys = vec![a.lattice, a.lattice + 1, b.lattice, b.lattice + 1];
    keys.sort_unstable();
    keys.dedup();
    let prob_at = |o: &QuantOutcome, k: i64| -> f64 {
        if k == o.lattice {
            o.probabilities[0]
        } else if k == o.lattice + 1 {
            o.probabilities[1]
        } else {
            0.0
        }
    };

    let mut max_gap = 0.0f64;
    for mask in 0..(1u32 << keys.len()) {
        let mut pa = 0.0;
        let mut pb = 0.0;
        for (bit, &k) in keys.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                pa += prob_at(&a, k);
                pb += prob_at(&b, k);
            }
        }
        max_gap = max_gap.max((pa - pb).abs());
    }
    Ok(max_gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decompose_examples() {
        assert_eq!(decompose(0.7, 1.0).unwrap(), (0, 0.7));
        assert_eq!(decompose(3.0, 1.0).unwrap(), (2, 1.0));
        assert_eq!(decompose(-0.25, 0.5).unwrap(), (-1, 0.25));
    }

    #[test]
    fn decompose_rejects_bad_input() {
        assert!(decompose(f64::NAN, 1.0).is_err());
        assert!(decompose(f64::INFINITY, 1.0).is_err());
        assert!(decompose(1.0, 0.0).is_err());
        assert!(decompose(1.0, -2.0).is_err());
    }

    #[test]
    fn outcome_distribution_examples() {
        let o = outcome_distribution(0.7, 1.0).unwrap();
        assert_eq!(o.support, [0.0, 1.0]);
        assert_relative_eq!(o.probabilities[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(o.probabilities[1], 0.7, epsilon = 1e-15);

        // An exact multiple maps to itself with probability 1.
        let d = 0.37;
        let o = outcome_distribution(d, d).unwrap();
        assert_eq!(o.support, [0.0, d]);
        assert_eq!(o.probabilities, [0.0, 1.0]);
    }

    #[test]
    fn exact_multiple_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(quantize(3.0, 1.0, &mut rng).unwrap(), 3.0);
        }
    }

    #[test]
    fn negative_input_example() {
        let o = outcome_distribution(-0.25, 0.5).unwrap();
        assert_eq!(o.support, [-0.5, 0.0]);
        assert_relative_eq!(o.probabilities[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(o.probabilities[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quantize_consumes_one_variate_per_scalar() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let _ = quantize(0.3, 1.0, &mut a).unwrap();
        let _: f64 = b.random();
        // Streams must now be in lockstep.
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn empty_vector_consumes_no_variates() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let out = quantize_vector(&DVector::zeros(0), 1.0, &mut a).unwrap();
        assert_eq!(out.len(), 0);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn vector_of_exact_multiples_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let q = quantize_vector(&y, 1.0, &mut rng).unwrap();
        assert_eq!(q, y);
    }

    #[test]
    fn joint_outcome_probability_is_the_product_of_marginals() {
        // Each coordinate of (0.5, 0.5) with d = 1 lands in {0, 1} with
        // probability 1/2; the joint outcome (0, 1) should appear ~1/4.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = DVector::from_vec(vec![0.5, 0.5]);
        let n = 200_000;
        let mut count = 0usize;
        for _ in 0..n {
            let q = quantize_vector(&y, 1.0, &mut rng).unwrap();
            if q[0] == 0.0 && q[1] == 1.0 {
                count += 1;
            }
        }
        let freq = count as f64 / n as f64;
        // 5 sigma for a Bernoulli(1/4).
        assert!((freq - 0.25).abs() < 5.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn event_gap_examples() {
        assert_relative_eq!(event_probability_gap(0.2, 0.5, 1.0).unwrap(), 0.3, epsilon = 1e-12);
        assert_eq!(event_probability_gap(0.4, 0.4, 1.0).unwrap(), 0.0);
        // Inputs straddling a lattice point (case 2 of the union support).
        let g = event_probability_gap(0.9, 1.1, 1.0).unwrap();
        assert!(g <= 0.2 + 1e-12, "straddling gap {g} exceeds 0.2");
    }

    #[test]
    fn event_gap_requires_close_inputs() {
        assert!(event_probability_gap(0.0, 1.0, 1.0).is_err());
        assert!(event_probability_gap(0.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn sample_mean_and_variance_follow_the_exact_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let d = 1.0;
        for &y in &[-1.3, 0.7, 2.0] {
            let n = 1_000_000usize;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let q = quantize(y, d, &mut rng).unwrap();
                sum += q;
                sumsq += q * q;
            }
            let mean = sum / n as f64;
            let var = sumsq / n as f64 - mean * mean;
            assert!((mean - y).abs() <= 3.0 * (d / 2.0) / (n as f64).sqrt() + 1e-6);
            assert!(var <= d * d / 4.0 + 2e-3);
        }
    }

    proptest! {
        #[test]
        fn decomposition_is_exact_and_in_range(y in -1e6f64..1e6, d in 1e-6f64..1e3) {
            let (n, z) = decompose(y, d).unwrap();
            prop_assert!(z > 0.0 && z <= d);
            prop_assert!((n as f64 * d + z - y).abs() <= 1e-9 * y.abs().max(1.0));
        }

        #[test]
        fn pmf_mean_equals_input(y in -1e3f64..1e3, d in 1e-3f64..1e2) {
            let o = outcome_distribution(y, d).unwrap();
            prop_assert!((o.mean() - y).abs() <= 1e-14 * y.abs().max(d));
        }

        #[test]
        fn pmf_variance_is_bounded(y in -1e3f64..1e3, d in 1e-3f64..1e2) {
            let o = outcome_distribution(y, d).unwrap();
            let (_, z) = decompose(y, d).unwrap();
            prop_assert!((o.variance() - z * (d - z)).abs() <= 1e-10 * d * d);
            prop_assert!(o.variance() <= d * d / 4.0 + 1e-12 * d * d);
        }

        #[test]
        fn samples_live_on_the_decomposition_lattice(y in -1e3f64..1e3, d in 1e-3f64..1e2, seed: u64) {
            let (n, _) = decompose(y, d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = quantize(y, d, &mut rng).unwrap();
            prop_assert!(q == n as f64 * d || q == (n + 1) as f64 * d);
        }

        #[test]
        fn gap_is_bounded_by_distance_over_stepsize(
            y in -50.0f64..50.0,
            delta in -0.999f64..0.999,
            d in 0.1f64..5.0,
        ) {
            let y2 = y + delta * d;
            let gap = event_probability_gap(y, y2, d).unwrap();
            prop_assert!(gap <= (y - y2).abs() / d + 1e-12);
        }
    }

    #[test]
    fn identical_seeds_reproduce_samples() {
        let mut a = ChaCha8Rng::seed_from_u64(77);
        let mut b = ChaCha8Rng::seed_from_u64(77);
        for i in 0..100 {
            let y = (i as f64) * 0.317 - 9.0;
            assert_eq!(
                quantize(y, 0.25, &mut a).unwrap(),
                quantize(y, 0.25, &mut b).unwrap()
            );
        }
    }
}
