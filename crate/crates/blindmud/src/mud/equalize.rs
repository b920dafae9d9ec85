//! Blind equalization of a despread BPSK stream.
//!
//! The despread soft symbols form two antipodal clusters somewhere in the
//! complex plane. Four fixed boundaries (the axes and both diagonals) each
//! split the plane in half; summing the samples with a ±1 weight per half
//! estimates the cluster center, and the boundary whose estimate has the
//! largest magnitude wins. Rotating by the estimate's phase puts the cluster
//! axis on the real line, up to the inherent π ambiguity that bi-stream
//! decoding resolves downstream.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use super::UnequalizedStream;

/// The four partition boundaries. Each boundary is a line through the
/// origin; `normal_angle` is the direction it separates along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// Real axis; separates by the sign of the imaginary part.
    XAxis,
    /// Imaginary axis; separates by the sign of the real part.
    YAxis,
    /// The 45° diagonal; separates along the 135° direction.
    Deg45,
    /// The 135° diagonal; separates along the 45° direction.
    Deg135,
}

impl Boundary {
    pub const ALL: [Boundary; 4] = [
        Boundary::YAxis,
        Boundary::Deg135,
        Boundary::XAxis,
        Boundary::Deg45,
    ];

    /// Direction of the half-plane assigned weight +1.
    pub fn normal_angle(self) -> f64 {
        match self {
            Boundary::YAxis => 0.0,
            Boundary::Deg135 => FRAC_PI_4,
            Boundary::XAxis => FRAC_PI_2,
            Boundary::Deg45 => 3.0 * FRAC_PI_4,
        }
    }

    /// Angle of the boundary line itself.
    pub fn line_angle(self) -> f64 {
        (self.normal_angle() + FRAC_PI_2) % PI
    }
}

/// Result of blind equalization.
#[derive(Debug, Clone)]
pub struct EqualizedStream {
    /// Soft symbols rotated onto the real axis.
    pub values: Vec<Complex64>,
    /// Phase removed from the stream, in `[0, 2π)`.
    pub applied_phase: f64,
    /// Winning partition boundary.
    pub boundary: Boundary,
    /// Signed cluster-center estimate before rotation. Zero magnitude flags
    /// a degenerate (all-zero) stream.
    pub gain_estimate: Complex64,
    pub candidate_sequence: usize,
}

impl EqualizedStream {
    pub fn is_degenerate(&self) -> bool {
        self.gain_estimate.norm_sqr() == 0.0
    }
}

/// Partition-and-sum channel-phase estimation over the four boundaries.
pub fn blind_equalize(stream: &UnequalizedStream) -> EqualizedStream {
    let n = stream.values.len().max(1) as f64;
    let mut best = (Boundary::YAxis, Complex64::ZERO);
    for boundary in Boundary::ALL {
        let rot = Complex64::from_polar(1.0, -boundary.normal_angle());
        let mut sum = Complex64::ZERO;
        for v in &stream.values {
            if (v * rot).re >= 0.0 {
                sum += v;
            } else {
                sum -= v;
            }
        }
        let center = sum / n;
        if center.norm_sqr() > best.1.norm_sqr() {
            best = (boundary, center);
        }
    }
    let (boundary, center) = best;
    let phase = if center.norm_sqr() > 0.0 { center.arg() } else { 0.0 };
    let rot = Complex64::from_polar(1.0, -phase);
    EqualizedStream {
        values: stream.values.iter().map(|v| v * rot).collect(),
        applied_phase: phase.rem_euclid(TAU),
        boundary,
        gain_estimate: center,
        candidate_sequence: stream.candidate_sequence,
    }
}

/// Mean squared deviation of the samples from their folded cluster center:
/// the intra-cluster interference-plus-noise power.
pub(super) fn intra_cluster_power(values: &[Complex64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mu = values.iter().map(|v| v.re.abs()).sum::<f64>() / n;
    values
        .iter()
        .map(|v| {
            let sign = if v.re < 0.0 { -1.0 } else { 1.0 };
            (v - Complex64::new(sign * mu, 0.0)).norm_sqr()
        })
        .sum::<f64>()
        / n
}

/// Hard-detection SINR of an equalized stream: folded-mean signal power over
/// intra-cluster power. A stream with no measurable cluster spread returns
/// `cap` (noiseless) or zero (empty).
pub fn hard_detection_sinr(eq: &EqualizedStream, cap: f64) -> f64 {
    debug_assert!(eq.values.len() >= 2);
    let n = eq.values.len() as f64;
    let mu = eq.values.iter().map(|v| v.re.abs()).sum::<f64>() / n;
    let nu = intra_cluster_power(&eq.values);
    if nu <= mu * mu * 1e-18 {
        if mu > 0.0 {
            cap
        } else {
            0.0
        }
    } else {
        (mu * mu / nu).min(cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn stream(values: Vec<Complex64>) -> UnequalizedStream {
        UnequalizedStream {
            values,
            candidate_sequence: 0,
        }
    }

    fn two_clusters(
        amplitude: f64,
        phase: f64,
        noise_std: f64,
        n: usize,
        rng: &mut impl Rng,
    ) -> UnequalizedStream {
        let center = Complex64::from_polar(amplitude, phase);
        let values = (0..n)
            .map(|_| {
                let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let noise = Complex64::new(
                    noise_std * gaussian(rng) / 2f64.sqrt(),
                    noise_std * gaussian(rng) / 2f64.sqrt(),
                );
                center * s + noise
            })
            .collect();
        stream(values)
    }

    fn gaussian(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn diagonal_clusters_pick_perpendicular_boundary() {
        // Clusters on the 45° axis are split by the 135° line, and the
        // recovered gain magnitude is the cluster amplitude.
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = two_clusters(2.0, FRAC_PI_4, 0.0, 64, &mut rng);
        let eq = blind_equalize(&s);
        assert_eq!(eq.boundary, Boundary::Deg135);
        assert_relative_eq!(eq.gain_estimate.norm(), 2.0, epsilon = 1e-12);
        for v in &eq.values {
            assert!(v.im.abs() < 1e-12);
            assert_relative_eq!(v.re.abs(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn real_clusters_pick_imaginary_axis_boundary() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let s = two_clusters(1.5, 0.0, 0.0, 64, &mut rng);
        let eq = blind_equalize(&s);
        assert_eq!(eq.boundary, Boundary::YAxis);
        assert_relative_eq!(eq.gain_estimate.norm(), 1.5, epsilon = 1e-12);
        assert!(
            eq.applied_phase < 1e-9 || (eq.applied_phase - PI).abs() < 1e-9,
            "phase {}",
            eq.applied_phase
        );
    }

    #[test]
    fn negation_symmetry() {
        // Equalizing the negated stream flips the phase by π and keeps the
        // gain magnitude; this is the ambiguity bi-stream decoding absorbs.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let phase = rng.gen_range(0.0..TAU);
            let s = two_clusters(1.0, phase, 0.2, 128, &mut rng);
            let neg = stream(s.values.iter().map(|v| -v).collect());
            let eq = blind_equalize(&s);
            let eq_neg = blind_equalize(&neg);
            assert_eq!(eq.boundary, eq_neg.boundary);
            assert_relative_eq!(
                eq.gain_estimate.norm(),
                eq_neg.gain_estimate.norm(),
                epsilon = 1e-12
            );
            let dphase = (eq.applied_phase - eq_neg.applied_phase).rem_euclid(TAU);
            assert!((dphase - PI).abs() < 1e-9, "phase gap {dphase}");
            for (a, b) in eq.values.iter().zip(&eq_neg.values) {
                assert!((a + b).norm() > 0.0 || a.norm_sqr() == 0.0);
                // Post-rotation streams coincide: both were rotated onto the
                // positive real axis of their own center estimate.
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn boundary_within_quantization_bound() {
        // For synthetic clusters at any phase the winning boundary's normal
        // lies within 45° of the cluster axis (mod π).
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for k in 0..64 {
            let phase = k as f64 / 64.0 * TAU;
            let s = two_clusters(1.0, phase, 0.1, 192, &mut rng);
            let eq = blind_equalize(&s);
            let diff = angle_mod_pi(eq.boundary.normal_angle() - phase);
            assert!(diff <= FRAC_PI_4 + 1e-6, "phase {phase}: off by {diff}");
        }
    }

    fn angle_mod_pi(a: f64) -> f64 {
        let m = a.rem_euclid(PI);
        m.min(PI - m)
    }

    #[test]
    fn zero_stream_flagged() {
        let s = stream(vec![Complex64::ZERO; 32]);
        let eq = blind_equalize(&s);
        assert!(eq.is_degenerate());
        assert_eq!(eq.applied_phase, 0.0);
        assert_eq!(hard_detection_sinr(&eq, 1e12), 0.0);
    }

    #[test]
    fn sinr_noiseless_capped() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let s = two_clusters(0.7, 1.0, 0.0, 64, &mut rng);
        let eq = blind_equalize(&s);
        assert_eq!(hard_detection_sinr(&eq, 1e12), 1e12);
    }

    #[test]
    fn sinr_tracks_true_ratio() {
        // ±1 clusters with total complex noise variance 0.1 have SINR 10.
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut estimates = Vec::new();
        for _ in 0..64 {
            let s = two_clusters(1.0, 0.0, 0.1f64.sqrt(), 192, &mut rng);
            let eq = blind_equalize(&s);
            estimates.push(hard_detection_sinr(&eq, 1e12));
        }
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        assert!((mean - 10.0).abs() < 2.0, "mean SINR estimate {mean}");
    }

    #[test]
    fn sinr_pure_noise_is_small() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..32 {
            let values: Vec<Complex64> = (0..192)
                .map(|_| Complex64::new(gaussian(&mut rng), gaussian(&mut rng)))
                .collect();
            let eq = blind_equalize(&stream(values));
            let sinr = hard_detection_sinr(&eq, 1e12);
            assert!(sinr < 3.0, "pure-noise SINR {sinr}");
        }
    }
}
