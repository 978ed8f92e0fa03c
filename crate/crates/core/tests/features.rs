use concept_slider::features::{
    class_means, read_feature_file, stage_params, synth_concept_sampler, write_feature_file, ConceptSpec,
    FeatureSet, Side,
};
use concept_slider::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn naive_mean(fs: &FeatureSet) -> Vec<f64> {
    let mut m = vec![0.0; fs.dim];
    for (k, x) in fs.data.iter().enumerate() {
        m[k % fs.dim] += *x as f64;
    }
    m.iter().map(|v| v / fs.len() as f64).collect()
}

#[test]
fn sample_covariance_approaches_factor_product() {
    let spec = ConceptSpec::synthetic(6, 4).unwrap();
    let fs = synth_concept_sampler(&spec, 2, Side::Negative, 400, 1).unwrap();
    let p = stage_params(&spec, 2).unwrap();
    let mu = DVector::from_vec(naive_mean(&fs));
    let mut c = DMatrix::zeros(6, 6);
    for v in fs.vectors() {
        let x = DVector::from_iterator(6, v.iter().map(|&a| a as f64)) - &mu;
        c += &x * x.transpose();
    }
    c /= (fs.len() - 1) as f64;
    let truth = &p.noise_factor * p.noise_factor.transpose();
    // Entry (i, j) has standard error about sqrt((s_ii s_jj + s_ij^2) / n).
    let n = fs.len() as f64;
    for i in 0..6 {
        for j in 0..6 {
            let se = ((truth[(i, i)] * truth[(j, j)] + truth[(i, j)].powi(2)) / n).sqrt();
            assert!((c[(i, j)] - truth[(i, j)]).abs() < 5.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn axis_std_is_the_largest_direction() {
    let spec = ConceptSpec::synthetic(8, 2).unwrap();
    let p = stage_params(&spec, 1).unwrap();
    let cov = &p.noise_factor * p.noise_factor.transpose();
    let eig = cov.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    let along = p.axis.dot(&(&cov * &p.axis));
    assert!((along - spec.noise_scale.powi(2)).abs() < 1e-12);
    assert!((top - along).abs() < 1e-12);
}

#[test]
fn sides_differ_by_the_gap() {
    let spec = ConceptSpec::synthetic(5, 3).unwrap();
    let p = stage_params(&spec, 4).unwrap();
    let d = p.mean(Side::Positive) - p.mean(Side::Negative);
    assert!((d - p.axis.clone() * spec.ground_truth_gap).amax() < 1e-12);
    assert!(((p.mean(Side::Positive) + p.mean(Side::Negative)) * 0.5 - p.mean(Side::Neutral)).amax() < 1e-12);
}

#[test]
fn truncated_file_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.acsf");
    let spec = ConceptSpec::synthetic(3, 0).unwrap();
    write_feature_file(&synth_concept_sampler(&spec, 1, Side::Positive, 1, 0).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_feature_file(&path), Err(Error::Format { .. })));
}

#[test]
fn missing_file_is_named() {
    let err = read_feature_file("/nonexistent/stage01_positive.acsf").unwrap_err();
    assert!(err.to_string().contains("stage01_positive.acsf"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn file_round_trip(
        dim in 2usize..7, h in 1usize..4, w in 1usize..4, n in 1usize..4,
        seed in any::<u64>(), stage in 1u32..6,
    ) {
        let mut spec = ConceptSpec::synthetic(dim, seed).unwrap();
        spec.height = h;
        spec.width = w;
        let fs = synth_concept_sampler(&spec, stage, Side::Neutral, n, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.acsf");
        write_feature_file(&fs, &path).unwrap();
        let back = read_feature_file(&path).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        fs.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, fs);
    }

    #[test]
    fn class_means_match_naive_sums(seed in any::<u64>(), dim in 2usize..6) {
        let spec = ConceptSpec::synthetic(dim, seed).unwrap();
        let p = synth_concept_sampler(&spec, 1, Side::Positive, 3, seed).unwrap();
        let n = synth_concept_sampler(&spec, 1, Side::Negative, 2, seed ^ 1).unwrap();
        let (mp, mn) = class_means(&p, &n).unwrap();
        for (a, b) in mp.iter().zip(naive_mean(&p)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in mn.iter().zip(naive_mean(&n)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
