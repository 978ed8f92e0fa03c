mod common;

use concept_slider::axis::{
    attribute_bases, rayleigh_ratio, scatter_matrices, solve_concept_axis, solve_concept_axis_with, AxisSolver,
    ConceptAxisModel, ScatterPair, DEFAULT_RIDGE_FACTOR,
};
use concept_slider::config::RunConfig;
use concept_slider::features::{synth_concept_sampler, ConceptSpec, FeatureSet, Side};
use concept_slider::Error;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn pair(dim: usize, seed: u64, samples: usize) -> (FeatureSet, FeatureSet) {
    let spec = ConceptSpec::synthetic(dim, seed).unwrap();
    (
        synth_concept_sampler(&spec, 1, Side::Positive, samples, seed).unwrap(),
        synth_concept_sampler(&spec, 1, Side::Negative, samples, seed).unwrap(),
    )
}

/// Leading generalized eigenvector of `S_b w = l (S_w + rI) w`, through the
/// symmetric inverse square root of the regularized scatter.
fn whitened_oracle(sp: &ScatterPair, ridge: f64) -> DVector<f64> {
    let d = sp.dim();
    let m = SymmetricEigen::new(&sp.s_w + DMatrix::identity(d, d) * ridge);
    let inv_sqrt = &m.eigenvectors
        * DMatrix::from_diagonal(&m.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * m.eigenvectors.transpose();
    let inner = &inv_sqrt * &sp.s_b * &inv_sqrt;
    let e = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let top = e.eigenvalues.imax();
    (inv_sqrt * e.eigenvectors.column(top)).normalize()
}

#[test]
fn both_solvers_match_the_whitened_oracle() {
    for seed in 0..20 {
        let (p, n) = pair(2 + seed as usize % 10, seed, 6);
        let sp = scatter_matrices(&p, &n).unwrap();
        let ridge = sp.default_ridge(DEFAULT_RIDGE_FACTOR);
        let oracle = whitened_oracle(&sp, ridge);
        let closed = solve_concept_axis(&sp, ridge).unwrap().b_c;
        let eigen = solve_concept_axis_with(&sp, ridge, AxisSolver::Eigen, 1).unwrap().b_c;
        assert!(closed.dot(&oracle).abs() > 1.0 - 1e-9, "closed form, seed {seed}");
        assert!(eigen.dot(&oracle).abs() > 1.0 - 1e-9, "eigen, seed {seed}");
    }
}

#[test]
fn recovery_on_the_default_data_shape() {
    let base = RunConfig::default();
    let mut hits = 0;
    for seed in 0..100 {
        let cfg = RunConfig { seed, ..base.clone() };
        let spec = cfg.spec().unwrap();
        assert!(spec.ground_truth_gap / spec.noise_scale >= 4.0);
        let p = synth_concept_sampler(&spec, 1, Side::Positive, cfg.data.samples, seed).unwrap();
        let n = synth_concept_sampler(&spec, 1, Side::Negative, cfg.data.samples, seed).unwrap();
        let sp = scatter_matrices(&p, &n).unwrap();
        let b = solve_concept_axis(&sp, sp.default_ridge(DEFAULT_RIDGE_FACTOR)).unwrap().b_c;
        hits += (b.dot(&spec.axis_vector().unwrap()).abs() >= 0.99) as usize;
    }
    assert!(hits >= 95, "{hits}/100");
}

/// Merged second moment about the overall mean, from raw vectors.
fn raw_second_moment(p: &FeatureSet, n: &FeatureSet) -> DMatrix<f64> {
    let d = p.dim;
    let rows: Vec<DVector<f64>> = p
        .vectors()
        .chain(n.vectors())
        .map(|v| DVector::from_iterator(d, v.iter().map(|&x| x as f64)))
        .collect();
    let mean = rows.iter().fold(DVector::zeros(d), |a, r| a + r) / rows.len() as f64;
    rows.iter().fold(DMatrix::zeros(d, d), |a, r| {
        let c = r - &mean;
        a + &c * c.transpose()
    })
}

#[test]
fn bases_span_the_projected_top_eigenspace() {
    let k = 5;
    let mut checked = 0;
    for seed in 0..10 {
        let (p, n) = pair(12, seed, 4);
        let sp = scatter_matrices(&p, &n).unwrap();
        let b = solve_concept_axis(&sp, sp.default_ridge(DEFAULT_RIDGE_FACTOR)).unwrap().b_c;
        let set = attribute_bases(&p, &n, &b, k).unwrap();
        assert_eq!(set.len(), k);
        let q = DMatrix::from_columns(&set.bases);
        assert!((q.transpose() * &q - DMatrix::identity(k, k)).amax() < 1e-8);
        assert!((q.transpose() * &b).amax() < 1e-8);

        let proj = DMatrix::identity(12, 12) - &b * b.transpose();
        let c = &proj * raw_second_moment(&p, &n) * &proj;
        let e = SymmetricEigen::new((&c + c.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..12).collect();
        order.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]));
        let lam: Vec<f64> = order.iter().map(|&i| e.eigenvalues[i]).collect();
        if (0..k).any(|i| lam[i] - lam[i + 1] < 1e-6 * lam[0]) {
            continue;
        }
        let top = DMatrix::from_columns(&order[..k].iter().map(|&i| e.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
        let resid = &q - &top * (top.transpose() * &q);
        let sine = resid.singular_values().max();
        assert!(sine.asin() <= 1e-6, "seed {seed}: angle {}", sine.asin());
        for (i, ev) in set.explained_variance.iter().enumerate() {
            assert!((ev - lam[i]).abs() <= 1e-8 * lam[0], "seed {seed} basis {i}");
        }
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn model_file_round_trip_and_truncation() {
    let (_, model) = common::axis_model(1, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("axis.json");
    model.save(&path).unwrap();
    let back = ConceptAxisModel::load(&path).unwrap();
    for (a, b) in back.stages.iter().zip(&model.stages) {
        assert_eq!(a.axis.b_c, b.axis.b_c);
        assert_eq!(a.bases.bases, b.bases.bases);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(ConceptAxisModel::load(&path), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn axis_is_rayleigh_optimal(seed in any::<u64>(), dim in 2usize..10, probe in prop::collection::vec(-1.0f64..1.0, 10)) {
        let (p, n) = pair(dim, seed, 3);
        let sp = scatter_matrices(&p, &n).unwrap();
        let ridge = sp.default_ridge(DEFAULT_RIDGE_FACTOR);
        let axis = solve_concept_axis(&sp, ridge).unwrap();
        prop_assert!((axis.b_c.norm() - 1.0).abs() < 1e-12);
        prop_assert!(axis.b_c.dot(&sp.mean_gap()) >= 0.0);
        let w = DVector::from_column_slice(&probe[..dim]);
        prop_assume!(w.norm() > 1e-6);
        let best = rayleigh_ratio(&sp, ridge, &axis.b_c);
        prop_assert!(rayleigh_ratio(&sp, ridge, &w) <= best * (1.0 + 1e-10));
    }

    #[test]
    fn closed_form_matches_lu_solve(seed in any::<u64>(), dim in 2usize..12) {
        let (p, n) = pair(dim, seed, 2);
        let sp = scatter_matrices(&p, &n).unwrap();
        let ridge = sp.default_ridge(DEFAULT_RIDGE_FACTOR);
        let m = &sp.s_w + DMatrix::identity(dim, dim) * ridge;
        let oracle = m.lu().solve(&sp.mean_gap()).unwrap().normalize();
        let b = solve_concept_axis(&sp, ridge).unwrap().b_c;
        prop_assert!(b.dot(&oracle).abs() >= 1.0 - 1e-9);
    }
}
