use dfalgebra::algebra::{AlgebraBasis, AlgebraStructure};
use dfalgebra::dataset::{generate_dataset, Dataset, GenerationOptions, ModelSource};
use dfalgebra::likelihood::{batch_log_likelihood, gradient};
use dfalgebra::params::{init_params, ParameterVector};
use dfalgebra::physmodels::haar_structured_model;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64) -> Dataset {
    let s: AlgebraStructure = "({1,2},{1,1})".parse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = haar_structured_model(&s, 4, 1.0, &mut rng).unwrap();
    let acc = AlgebraBasis::haar(AlgebraStructure::unital(&[(3, 1)]).unwrap(), &mut rng);
    generate_dataset(
        &ModelSource::Structured(m),
        &acc,
        6,
        5,
        0.4,
        seed,
        &GenerationOptions::default(),
    )
    .unwrap()
}

fn params(seed: u64) -> (AlgebraStructure, ParameterVector) {
    let s: AlgebraStructure = "({1,1},{1,2})".parse().unwrap();
    let p = init_params(&s, 2, &mut ChaCha8Rng::seed_from_u64(seed), 0.5).unwrap();
    (s, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batch_order_does_not_matter(seed in 0u64..1000, perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        let ds = dataset(seed);
        let (s, p) = params(seed + 1);
        let id: Vec<usize> = (0..6).collect();
        let a = batch_log_likelihood(&s, &p, &ds, &id).unwrap();
        let b = batch_log_likelihood(&s, &p, &ds, &perm).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        let (_, ga) = gradient(&s, &p, &ds, &id).unwrap();
        let (_, gb) = gradient(&s, &p, &ds, &perm).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn value_is_mean_over_chains(seed in 0u64..1000) {
        let ds = dataset(seed);
        let (s, p) = params(seed + 7);
        let all: Vec<usize> = (0..ds.len()).collect();
        let total = batch_log_likelihood(&s, &p, &ds, &all).unwrap();
        let mean = all
            .iter()
            .map(|&i| batch_log_likelihood(&s, &p, &ds, &[i]).unwrap())
            .sum::<f64>()
            / ds.len() as f64;
        prop_assert!((total - mean).abs() <= 1e-12 * total.abs());
        prop_assert!(total <= 0.0);
    }

    #[test]
    fn block_relabelling_is_a_symmetry(seed in 0u64..1000) {
        // Swapping the two blocks of the structure together with their
        // parameters leaves the dynamics unchanged up to a change of basis
        // that is absorbed by G.
        let ds = dataset(seed);
        let (s, p) = params(seed + 3);
        let model = p.to_model().unwrap();
        let swapped_structure: AlgebraStructure = "({1,2},{1,1})".parse().unwrap();
        let n = 3;
        let mut perm = dfalgebra::linalg::CMatrix::zeros(n, n);
        // Old canonical order: block 0 = (1,1) at index 0, block 1 = (1,2) at 1..3.
        // New order puts (1,2) first at 0..2 and (1,1) at 2.
        perm[(1, 0)] = dfalgebra::linalg::ONE;
        perm[(2, 1)] = dfalgebra::linalg::ONE;
        perm[(0, 2)] = dfalgebra::linalg::ONE;
        let u = model.unitary().unwrap() * perm;
        let g = dfalgebra::linalg::unitary_log_hermitian(&u).unwrap();
        let betas = model.betas().iter().map(|b| vec![b[1].clone(), b[0].clone()]).collect();
        let kappas = vec![model.kappas()[1].clone(), model.kappas()[0].clone()];
        let mus = vec![model.mus()[1].clone(), model.mus()[0].clone()];
        let m2 = dfalgebra::generator::GkslModel::new(swapped_structure.clone(), g, betas, kappas, mus).unwrap();
        let p2 = ParameterVector::from_model(&m2);
        let all: Vec<usize> = (0..ds.len()).collect();
        let a = batch_log_likelihood(&s, &p, &ds, &all).unwrap();
        let b = batch_log_likelihood(&swapped_structure, &p2, &ds, &all).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}
