//! Structural invariants of the chaos algebra: product identities, transport
//! semigroup, adjointness of derivative and divergence, serialization.

use anticalc::chaos::ChaosVector;
use anticalc::linalg::operator_norm;
use anticalc::rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Random dense chaos vector with small coefficients.
fn random_chaos(dim: usize, max_degree: usize, seed: u64) -> ChaosVector {
    let mut out = ChaosVector::zeros(dim, max_degree).unwrap();
    let mut r = rng::stream(seed, 0);
    for k in 0..=max_degree {
        let layer = out.coeff_mut(k);
        let len = layer.data().len();
        let g = rng::normal_vector(&mut r, len);
        for (slot, &v) in layer.data_mut().iter_mut().zip(g.iter()) {
            *slot = 0.3 * v;
        }
    }
    out
}

/// Random matrix rescaled to operator norm `target`.
fn random_contraction(dim: usize, target: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 1);
    let m = DMatrix::from_fn(dim, dim, |_, _| {
        rng::normal_vector(&mut r, 1)[0]
    });
    let norm = operator_norm(&m);
    m * (target / norm)
}

fn random_point(dim: usize, seed: u64) -> DVector<f64> {
    let mut r = rng::stream(seed, 2);
    rng::normal_vector(&mut r, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The pointwise product of two expansions evaluates to the product of
    /// their values when the truncation degree has room for every term.
    #[test]
    fn pointwise_product_evaluates_to_product(seed in 0u64..5_000) {
        let dim = 4;
        let a = random_chaos(dim, 2, seed);
        let b = random_chaos(dim, 2, seed ^ 0xabcd);
        let prod = a.mul_pointwise(&b, 4).unwrap();
        for pt in 0..3 {
            let z = random_point(dim, seed.wrapping_add(pt));
            let lhs = prod.evaluate(&z);
            let rhs = a.evaluate(&z) * b.evaluate(&z);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()),
                "product mismatch: {lhs} vs {rhs}");
        }
    }

    /// Transport operators compose contravariantly: applying `C` then `B`
    /// substitutes `C(Bz)`, i.e. equals the single transport by `C·B`.
    #[test]
    fn transport_semigroup(seed in 0u64..5_000) {
        let dim = 4;
        let a = random_chaos(dim, 3, seed);
        let c = random_contraction(dim, 0.8, seed ^ 0x11);
        let b = random_contraction(dim, 0.7, seed ^ 0x22);
        let two_step = a
            .second_quantization(&c).unwrap()
            .second_quantization(&b).unwrap();
        let one_step = a.second_quantization(&(&c * &b)).unwrap();
        let diff = two_step.sub(&one_step).norm_sq().sqrt();
        prop_assert!(diff < 1e-10, "semigroup residual {diff}");
    }

    /// Derivative and divergence are adjoint: for a vector field `u` and a
    /// scalar `alpha`, `E[div(u) alpha] = sum_i E[u_i (D alpha)_i]`.
    #[test]
    fn divergence_is_adjoint_to_derivative(seed in 0u64..5_000) {
        let dim = 4;
        let alpha = random_chaos(dim, 3, seed);
        let mut field = anticalc::chaos::VectorChaos::zeros(
            dim, 2, anticalc::chaos::Basis::Whitened).unwrap();
        for i in 0..dim {
            field.components[i] = random_chaos(dim, 2, seed ^ (0x100 + i as u64));
        }
        let div = field.divergence().unwrap();
        let lhs = div.l2_inner(&alpha);
        let grad = alpha.derivative();
        let rhs: f64 = (0..dim)
            .map(|i| field.components[i].l2_inner(&grad.components[i]))
            .sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()),
            "adjointness gap: {lhs} vs {rhs}");
    }

    /// Truncation splits the squared norm exactly into kept and dropped mass.
    #[test]
    fn truncation_mass_splits(seed in 0u64..5_000, keep in 0usize..3) {
        let a = random_chaos(4, 3, seed);
        let (kept, report) = a.truncate(keep);
        prop_assert_eq!(kept.max_degree(), keep);
        let total = report.kept_norm_sq + report.dropped_norm_sq;
        prop_assert!((total - a.norm_sq()).abs() < 1e-12,
            "mass split off by {}", total - a.norm_sq());
    }

    /// JSON round trip preserves every coefficient.
    #[test]
    fn serialization_round_trips(seed in 0u64..5_000) {
        let a = random_chaos(3, 3, seed);
        let text = serde_json::to_string(&a.to_dto()).unwrap();
        let dto: anticalc::chaos::ChaosVectorDto = serde_json::from_str(&text).unwrap();
        let back = ChaosVector::from_dto(&dto).unwrap();
        let diff = a.sub(&back).norm_sq();
        prop_assert!(diff == 0.0, "round-trip changed coefficients by {diff}");
    }
}

#[test]
fn wick_of_exponential_vectors_adds_arguments() {
    let phi = DVector::from_column_slice(&[0.4, -0.3, 0.2]);
    let psi = DVector::from_column_slice(&[-0.1, 0.5, 0.3]);
    let k = 5;
    let (e_phi, _) = ChaosVector::exp_vector(&phi, k).unwrap();
    let (e_psi, _) = ChaosVector::exp_vector(&psi, k).unwrap();
    let (e_sum, _) = ChaosVector::exp_vector(&(&phi + &psi), k).unwrap();
    let prod = e_phi.wick(&e_psi, k).unwrap();
    let diff = prod.sub(&e_sum).norm_sq().sqrt();
    assert!(diff < 1e-12, "wick of exponentials differs by {diff}");
}

#[test]
fn divergence_of_derivative_counts_degree() {
    // The composition div(D alpha) multiplies layer k by k.
    let alpha = random_chaos(4, 3, 71);
    let n_alpha = alpha.derivative().divergence().unwrap();
    for k in 0..=3 {
        let expect = alpha.coeff(k).data().iter().map(|v| v * k as f64);
        for (got, want) in n_alpha.coeff(k).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn expansion_rejected_for_expanding_matrix() {
    let a = random_chaos(3, 2, 5);
    let c = DMatrix::identity(3, 3) * 1.5;
    assert!(a.second_quantization(&c).is_err());
}

#[test]
fn mean_and_variance_follow_layers() {
    let a = random_chaos(4, 3, 9);
    let mean = a.mean();
    let var: f64 = a.norm_sq() - mean * mean;
    assert!((a.variance() - var).abs() < 1e-12);
}
