mod common;

use common::*;
use coupled_dr::boed::{eim_design, random_designs, relaxed_design, select_sensors_diag, GoalOperator};
use coupled_dr::experiments::{burgers_prior, BurgersModel, ConditionedDiffusion};
use coupled_dr::gsa::{FactorSet, SobolBoundCalculator};
use coupled_dr::oracles::{conditional_expectation_error, linear_gaussian_closed_forms, NestedEigSampler};
use coupled_dr::subspace::{bound_objective, diag_hx, diag_hy};
use coupled_dr::{
    alternating_decomposition, assemble_hx, assemble_hy, GaussianPrior, JacobianSampleSet, Model,
    NoiseModel, OrthonormalBasis, Space,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_samples(seed: u64, count: usize, m: usize, d: usize) -> JacobianSampleSet {
    let mut rng = rng(seed);
    JacobianSampleSet::from_dense((0..count).map(|_| gaussian_matrix(&mut rng, m, d)).collect()).unwrap()
}

fn all_subsets(m: usize, s: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m)
        .filter(|mask| mask.count_ones() as usize == s)
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_identity(seed in any::<u64>(), d in 2usize..9, m in 2usize..9, r in 1usize..3, s in 1usize..3) {
        let samples = random_samples(seed, 7, m, d);
        let mut g = rng(seed ^ 1);
        let u = random_basis(&mut g, d, r, Space::Input);
        let v = random_basis(&mut g, m, s, Space::Output);
        let via_hy = assemble_hy(&samples, &u).unwrap().projected_trace(v.matrix());
        let via_hx = assemble_hx(&samples, &v).unwrap().projected_trace(u.matrix());
        let direct = samples
            .dense_all()
            .unwrap()
            .iter()
            .map(|j| (v.matrix().transpose() * j * u.matrix()).norm_squared())
            .sum::<f64>()
            / 7.0;
        prop_assert!(relative_diff(via_hy, direct) < 1e-10);
        prop_assert!(relative_diff(via_hx, direct) < 1e-10);
        prop_assert!(relative_diff(bound_objective(&samples, &u, &v).unwrap(), direct) < 1e-10);
    }

    #[test]
    fn alternation_never_decreases_objective(seed in any::<u64>(), d in 3usize..10, m in 3usize..10) {
        let samples = random_samples(seed, 12, m, d);
        let v0 = OrthonormalBasis::random(m, 2, seed, Space::Output).unwrap();
        let pair = alternating_decomposition(&samples, 2, 2, &v0, 10, 0.0).unwrap();
        for w in pair.objective_history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs(), "{:?}", pair.objective_history);
        }
    }

    #[test]
    fn objective_is_invariant_under_rotations_within_bases(seed in any::<u64>(), d in 3usize..9, m in 3usize..9) {
        let samples = random_samples(seed, 5, m, d);
        let mut g = rng(seed ^ 2);
        let u = random_basis(&mut g, d, 3, Space::Input);
        let v = random_basis(&mut g, m, 2, Space::Output);
        let base = bound_objective(&samples, &u, &v).unwrap();
        let u_rot = OrthonormalBasis::new(u.matrix() * random_orthogonal(&mut g, 3), Space::Input).unwrap();
        let v_rot = OrthonormalBasis::new(v.matrix() * random_orthogonal(&mut g, 2), Space::Output).unwrap();
        prop_assert!(relative_diff(bound_objective(&samples, &u_rot, &v_rot).unwrap(), base) < 1e-12);
    }

    #[test]
    fn relaxation_dominates_diagonal_selection_which_dominates_random(seed in any::<u64>(), m in 3usize..12, s in 1usize..4) {
        let s = s.min(m);
        let samples = random_samples(seed, 6, m, 6);
        let goal = GoalOperator::window(6, 1, 2).unwrap();
        let hy = assemble_hy(&samples, goal.basis()).unwrap();
        let diag = hy.diagonal();
        let chosen = select_sensors_diag(&samples, &goal, s).unwrap();
        let score: f64 = chosen.indices().iter().map(|&i| diag[i]).sum();
        let (_, relaxed) = relaxed_design(&samples, &goal, s).unwrap();
        prop_assert!(relaxed >= score - 1e-12 * relaxed.abs().max(1.0));
        for design in random_designs(m, s, 5, seed).unwrap() {
            let other: f64 = design.indices().iter().map(|&i| diag[i]).sum();
            prop_assert!(score >= other - 1e-12 * score.abs().max(1.0));
        }
    }

    #[test]
    fn diagonal_rule_matches_exhaustive_search(seed in any::<u64>(), m in 2usize..=12, s in 1usize..5) {
        let s = s.min(m);
        let samples = random_samples(seed, 4, m, 5);
        let goal = GoalOperator::window(5, 0, 2).unwrap();
        let diag = diag_hy(&samples, goal.basis()).unwrap();
        let chosen = select_sensors_diag(&samples, &goal, s).unwrap();
        let score: f64 = chosen.indices().iter().map(|&i| diag[i]).sum();
        let best = all_subsets(m, s)
            .iter()
            .map(|t| {
                let v = OrthonormalBasis::canonical(m, t, Space::Output).unwrap();
                assemble_hy(&samples, goal.basis()).unwrap().projected_trace(v.matrix())
            })
            .fold(f64::MIN, f64::max);
        prop_assert!(relative_diff(score, best) < 1e-12);
    }

    #[test]
    fn eim_selects_distinct_points(seed in any::<u64>(), n in 4usize..15, k in 1usize..4) {
        let mut g = rng(seed);
        let basis = random_basis(&mut g, n, k.min(n), Space::Output);
        let design = eim_design(&basis).unwrap();
        let mut idx = design.indices().to_vec();
        idx.dedup();
        prop_assert_eq!(idx.len(), k.min(n));
    }

    #[test]
    fn sobol_bound_machinery_is_complementary_and_additive(seed in any::<u64>(), d in 3usize..10) {
        let samples = random_samples(seed, 8, 4, d);
        let v = OrthonormalBasis::window(4, 1, 2, Space::Output).unwrap();
        let hx = diag_hx(&samples, &v).unwrap();
        let total = assemble_hx(&samples, &v).unwrap().matrix().trace();
        let tau = FactorSet::new((0..d).filter(|i| i % 2 == 0).collect(), d).unwrap();
        let split: f64 = tau.indices().iter().map(|&i| hx[i]).sum::<f64>()
            + tau.complement().indices().iter().map(|&i| hx[i]).sum::<f64>();
        prop_assert!((split - total).abs() <= 1e-12 * total.max(1.0));

        let calc = SobolBoundCalculator::new(&samples, &v, &GaussianPrior::standard(d), 1.0).unwrap();
        let a = FactorSet::singleton(0, d).unwrap();
        let b = FactorSet::singleton(d - 1, d).unwrap();
        let ab = FactorSet::new(vec![0, d - 1], d).unwrap();
        let sum = calc.total(&a).upper + calc.total(&b).upper;
        prop_assert!((calc.total(&ab).upper - sum).abs() <= 1e-12 * sum.max(1.0));
        prop_assert!(calc.total(&ab).upper >= calc.total(&a).upper);
    }

    #[test]
    fn goal_eig_lower_bound_chain(seed in any::<u64>(), d in 2usize..7, m in 2usize..7, noise in 0.05f64..2.0) {
        let mut g = rng(seed);
        let model = random_affine(&mut g, m, d);
        let prior = random_prior(&mut g, d);
        let noise = NoiseModel::new(noise, m).unwrap();
        let goal = random_basis(&mut g, d, 1, Space::Input);
        let design = OrthonormalBasis::canonical(m, &[0, m - 1], Space::Output).unwrap();
        let f = linear_gaussian_closed_forms(model.offset(), model.matrix(), &prior, &noise, &design, &goal).unwrap();
        prop_assert!(f.goal_eig >= f.full_eig - f.l2_error / (2.0 * noise.variance()) - 1e-8);
    }
}

fn adjoint_and_tangent_checks(model: &dyn Model, prior: &GaussianPrior, seed: u64) {
    let (d, m) = (model.input_dim(), model.output_dim());
    let mut g = rng(seed);
    for trial in 0..100 {
        let x = prior.sample(&mut g);
        let u = gaussian_matrix(&mut g, d, 1).column(0).into_owned();
        let w = gaussian_matrix(&mut g, m, 1).column(0).into_owned();
        let ju = model.tangent(&x, &u).unwrap();
        let jtw = model.adjoint(&x, &w).unwrap();
        let (lhs, rhs) = (ju.dot(&w), u.dot(&jtw));
        let scale = ju.norm() * w.norm();
        assert!((lhs - rhs).abs() <= 1e-10 * scale, "trial {trial}: {lhs} vs {rhs}");
    }
    // Central differences on whitened coordinates, x = μ + L z.
    for _ in 0..5 {
        let z = gaussian_matrix(&mut g, d, 1).column(0).into_owned();
        let u = gaussian_matrix(&mut g, d, 1).column(0).into_owned();
        let h = 1e-6;
        let at = |t: f64| model.forward(&prior.from_whitened(&(&z + &u * t))).unwrap();
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let ju = model.tangent(&prior.from_whitened(&z), &(prior.factor() * &u)).unwrap();
        assert!((&fd - &ju).norm() <= 1e-5 * ju.norm(), "{} vs {}", (&fd - &ju).norm(), ju.norm());
    }
}

#[test]
fn conditioned_diffusion_adjoint_and_tangent() {
    let model = ConditionedDiffusion::new(50, 0.02).unwrap();
    adjoint_and_tangent_checks(&model, &GaussianPrior::standard(50), 3);
}

#[test]
fn burgers_adjoint_and_tangent() {
    let model = BurgersModel::new(30, 1e-3, 0.05, 1e-3).unwrap();
    let prior = burgers_prior(&model.grid_points(), 0.1, 1.0, false).unwrap();
    adjoint_and_tangent_checks(&model, &prior, 4);
}

#[test]
fn pick_freeze_error_converges_on_affine_model() {
    let mut g = rng(11);
    let model = random_affine(&mut g, 4, 5);
    let prior = GaussianPrior::standard(5);
    let u = random_basis(&mut g, 5, 2, Space::Input);
    let v = random_basis(&mut g, 4, 2, Space::Output);
    let m = model.matrix();
    // E‖G − V V^T E[G | U^T X]‖² = ‖M‖_F² − ‖V^T M U‖_F².
    let exact = m.norm_squared() - (v.matrix().transpose() * m * u.matrix()).norm_squared();
    let est = conditional_expectation_error(&model, &prior, &u, &v, 100_000, 5).unwrap();
    assert!(est.covers(exact, 3.0), "{est:?} vs {exact}");
}

#[test]
fn doubling_inner_samples_reduces_eig_bias() {
    let model = coupled_dr::AffineModel::new(
        DVector::zeros(3),
        DMatrix::from_row_slice(3, 3, &[1.5, 0.3, 0.0, 0.2, 1.0, 0.4, 0.0, 0.5, 0.8]),
    )
    .unwrap();
    let prior = GaussianPrior::standard(3);
    let noise = NoiseModel::new(0.2, 3).unwrap();
    let goal = OrthonormalBasis::window(3, 0, 1, Space::Input).unwrap();
    let design = OrthonormalBasis::canonical(3, &[0, 2], Space::Output).unwrap();
    let exact = linear_gaussian_closed_forms(model.offset(), model.matrix(), &prior, &noise, &design, &goal).unwrap();
    let mut improvements = Vec::new();
    for seed in 0..20 {
        let err = |k: usize| {
            let est = NestedEigSampler::new(&model, &prior, &noise, Some(&goal), 400, k, seed)
                .unwrap()
                .estimate(&design)
                .unwrap();
            (est.value - exact.goal_eig).abs()
        };
        improvements.push(err(8) - err(16));
    }
    improvements.sort_by(f64::total_cmp);
    let median = 0.5 * (improvements[9] + improvements[10]);
    assert!(median > 0.0, "median improvement {median}");
}

#[test]
fn conddiff_causality_is_exact() {
    let model = std::sync::Arc::new(ConditionedDiffusion::new(40, 0.025).unwrap());
    let samples = coupled_dr::sample_jacobians(model, &GaussianPrior::standard(40), 50, 2, coupled_dr::StorageMode::Dense).unwrap();
    let goal = OrthonormalBasis::window(40, 10, 5, Space::Input).unwrap();
    let hy = diag_hy(&samples, &goal).unwrap();
    assert!(hy.rows(0, 10).iter().all(|v| v.abs() <= 1e-14));
    let obs = OrthonormalBasis::window(40, 20, 5, Space::Output).unwrap();
    let hx = diag_hx(&samples, &obs).unwrap();
    assert!(hx.rows(25, 15).iter().all(|v| v.abs() <= 1e-14));
}

#[test]
fn estimates_are_reproducible_for_fixed_seed() {
    let model = ConditionedDiffusion::new(10, 0.1).unwrap();
    let prior = GaussianPrior::standard(10);
    let u = OrthonormalBasis::window(10, 0, 3, Space::Input).unwrap();
    let v = OrthonormalBasis::window(10, 5, 3, Space::Output).unwrap();
    let a = conditional_expectation_error(&model, &prior, &u, &v, 200, 9).unwrap();
    let b = conditional_expectation_error(&model, &prior, &u, &v, 200, 9).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.standard_error.to_bits(), b.standard_error.to_bits());
}
