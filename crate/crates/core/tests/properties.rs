//! Randomized properties across modules, checked against dense references.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{rngs::StdRng, SeedableRng};
use ttriem::baselines::{clip_ranks, naive_grad_at, naive_hvp, DenseProjector};
use ttriem::io::{decode_tt, encode_tt};
use ttriem::matrix_manifold::{
    dense_projection, hess_vec_matrix, project_matrix, riemannian_grad_matrix, FixedRankPoint, MatrixObjective,
};
use ttriem::objectives::Objective;
use ttriem::tt_manifold::{hess_vec_tt, project_tt, riemannian_grad_at};
use ttriem::{DenseTensor, TtMatrix, TtTensor};

fn rel(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().norm() / b.norm().max(1e-300)
}

prop_compose! {
    fn tt_shape()(d in 2usize..=4, n in 2usize..=4, r in 1usize..=3, seed in any::<u64>()) -> (Vec<usize>, usize, u64) {
        (vec![n; d], r, seed)
    }
}

fn random_tt(modes: &[usize], r: usize, seed: u64) -> TtTensor {
    let mut rng = StdRng::seed_from_u64(seed);
    TtTensor::random(modes, &clip_ranks(modes, r), &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn orthogonalization_preserves_the_tensor((modes, r, seed) in tt_shape()) {
        let x = random_tt(&modes, r, seed);
        let mu = x.orthogonalize().unwrap();
        prop_assert!(mu.left_residual() < 1e-12);
        prop_assert!(mu.right_residual() < 1e-12);
        let dense = x.to_dense().unwrap();
        for k in 0..modes.len() {
            prop_assert!(rel(&mu.mu_tensor(k).to_dense().unwrap(), &dense) < 1e-12);
        }
    }

    #[test]
    fn projection_is_an_orthogonal_projector((modes, r, seed) in tt_shape()) {
        let x = random_tt(&modes, r, seed);
        let base = Arc::new(x.orthogonalize().unwrap());
        let z = random_tt(&modes, 2, seed ^ 1);
        let pz = project_tt(&base, &z).unwrap();
        prop_assert!(pz.gauge_residual() < 1e-12);
        // Idempotent.
        let ppz = project_tt(&base, &pz.to_tt().unwrap()).unwrap();
        prop_assert!(rel(&ppz.to_dense().unwrap(), &pz.to_dense().unwrap()) < 1e-10);
        // Matches the explicit projector built from the tangent-space span.
        let proj = DenseProjector::new(&base).unwrap();
        prop_assert!(rel(&pz.to_dense().unwrap(), &proj.apply(&z.to_dense().unwrap()).unwrap()) < 1e-10);
        // The point itself lies in its tangent space.
        let px = project_tt(&base, &x).unwrap();
        prop_assert!(rel(&px.to_dense().unwrap(), &x.to_dense().unwrap()) < 1e-10);
    }

    #[test]
    fn tangent_space_has_the_manifold_dimension((modes, r, seed) in tt_shape()) {
        let x = random_tt(&modes, r, seed);
        let mu = x.orthogonalize().unwrap();
        let ranks = mu.ranks();
        // Σ r_{k-1} n_k r_k − Σ_{interior} r_k² for a full-rank point.
        let cores: usize = (0..modes.len()).map(|k| ranks[k] * modes[k] * ranks[k + 1]).sum();
        let gauge: usize = ranks[1..modes.len()].iter().map(|r| r * r).sum();
        prop_assert_eq!(DenseProjector::new(&mu).unwrap().dim(), cores - gauge);
    }

    #[test]
    fn frobenius_derivatives_are_closed_form((modes, r, seed) in tt_shape()) {
        let x = random_tt(&modes, r, seed);
        let base = Arc::new(x.orthogonalize().unwrap());
        let obj = Objective::frobenius();
        let g = riemannian_grad_at(&obj, &base).unwrap();
        prop_assert!(rel(&g.to_dense().unwrap(), &x.to_dense().unwrap().scale(2.0)) < 1e-12);
        let z = project_tt(&base, &random_tt(&modes, 2, seed ^ 7)).unwrap();
        let h = hess_vec_tt(&obj, &z).unwrap();
        prop_assert!(rel(&h.to_dense().unwrap(), &z.to_dense().unwrap().scale(2.0)) < 1e-12);
    }

    #[test]
    fn ad_matches_projected_closed_form_for_random_quadratics((modes, r, seed) in tt_shape()) {
        let mut rng = StdRng::seed_from_u64(seed ^ 3);
        let obj = Objective::quadratic_form(TtMatrix::random_symmetric(&modes, 2, &mut rng).unwrap()).unwrap();
        let base = Arc::new(random_tt(&modes, r, seed).orthogonalize().unwrap());
        let ad = riemannian_grad_at(&obj, &base).unwrap();
        let naive = naive_grad_at(&obj, &base).unwrap();
        prop_assert!(rel(&ad.to_dense().unwrap(), &naive.to_dense().unwrap()) < 1e-10);
        let z = project_tt(&base, &random_tt(&modes, 2, seed ^ 5)).unwrap();
        let ad = hess_vec_tt(&obj, &z).unwrap();
        let naive = naive_hvp(&obj, &z).unwrap();
        prop_assert!(rel(&ad.to_dense().unwrap(), &naive.to_dense().unwrap()) < 1e-10);
    }

    #[test]
    fn rounding_error_is_bounded_by_discarded_mass((modes, r, seed) in tt_shape(), keep in 1usize..=2) {
        let x = random_tt(&modes, r + 1, seed);
        let (y, discarded) = x.round_with_report(&[keep], 0.0).unwrap();
        let err = x.to_dense().unwrap().sub(&y.to_dense().unwrap()).unwrap().norm();
        let bound = discarded.iter().map(|t| t * t).sum::<f64>().sqrt();
        prop_assert!(err <= bound * (1.0 + 1e-10) + 1e-12 * x.norm().unwrap());
        prop_assert!(y.max_rank() <= keep);
    }

    #[test]
    fn serialization_round_trips_bit_for_bit((modes, r, seed) in tt_shape()) {
        let x = random_tt(&modes, r, seed);
        let y = decode_tt(&encode_tt(&x)).unwrap();
        prop_assert_eq!(x.ranks(), y.ranks());
        for (a, b) in x.cores().iter().zip(y.cores()) {
            prop_assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn matrix_manifold_derivatives_match_dense_projection(
        m in 3usize..=6, n in 3usize..=6, r in 1usize..=2, seed in any::<u64>()
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let x = Arc::new(FixedRankPoint::random(m, n, r, &mut rng).unwrap());
        let b = DenseTensor::from_fn(&[m, m], |ix| ((ix[0] * 7 + ix[1] * 3 + seed as usize % 11) % 5) as f64 - 2.0);
        let a = b.add(&b.t()).unwrap();
        let rows: Vec<usize> = (0..m).collect();
        let cols: Vec<usize> = (0..m).map(|i| (i * 2 + 1) % n).collect();
        let values: Vec<f64> = (0..m).map(|i| i as f64 - 1.5).collect();
        let xd = x.to_dense().unwrap();
        let zd = DenseTensor::from_fn(&[m, n], |ix| ((ix[0] + 2 * ix[1] + seed as usize % 5) % 4) as f64 - 1.0);
        let z = project_matrix(&x, &zd).unwrap();
        for obj in [MatrixObjective::Quadratic(a), MatrixObjective::Completion { rows, cols, values }] {
            let g = riemannian_grad_matrix(&obj, &x).unwrap();
            prop_assert!(g.gauge_residual() < 1e-12);
            let want = dense_projection(&x, &obj.grad_dense(&xd).unwrap()).unwrap();
            prop_assert!(rel(&g.to_dense().unwrap(), &want) < 1e-10);
            let h = hess_vec_matrix(&obj, &z).unwrap();
            let want = dense_projection(&x, &obj.hess_vec_dense(&xd, &z.to_dense().unwrap()).unwrap()).unwrap();
            prop_assert!(rel(&h.to_dense().unwrap(), &want) < 1e-10);
        }
    }
}
