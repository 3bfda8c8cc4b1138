//! The property suite run by `dfalgebra verify`.

use dfalgebra::algebra::{enumerate_structures, is_embedded, AlgebraBasis, AlgebraStructure};
use dfalgebra::dataset::{generate_dataset, GenerationOptions, ModelSource};
use dfalgebra::dynamics::{random_instrument, sequence_probability, Granularity, InitialState, MeasurementChain};
use dfalgebra::generator::{model_propagator, verify_cptp, verify_decoherence_free};
use dfalgebra::likelihood::{chain_log_likelihood, gradient_check, nested_log_likelihood};
use dfalgebra::params::init_params;
use dfalgebra::physmodels::{haar_structured_model, random_structured_model};
use dfalgebra::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::VerifyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Brute-force embedding test over all matrices with entries `≤ n_k / ñ_ℓ`.
pub fn exhaustive_embedding(sub: &AlgebraStructure, sup: &AlgebraStructure) -> bool {
    let (sb, pb) = (sub.blocks(), sup.blocks());
    let (kk, ll) = (pb.len(), sb.len());
    let bound: Vec<usize> = (0..kk * ll).map(|i| pb[i / ll].dim / sb[i % ll].dim).collect();
    let mut a = vec![0usize; kk * ll];
    loop {
        let rows = (0..kk).all(|k| pb[k].dim == (0..ll).map(|l| a[k * ll + l] * sb[l].dim).sum::<usize>());
        let cols = (0..ll).all(|l| sb[l].mult == (0..kk).map(|k| a[k * ll + l] * pb[k].mult).sum::<usize>());
        if rows && cols {
            return true;
        }
        let mut i = 0;
        loop {
            if i == a.len() {
                return false;
            }
            if a[i] < bound[i] {
                a[i] += 1;
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

fn check_enumeration(n: usize) -> Result<Check> {
    let ordered = enumerate_structures(n, false, false)?.len();
    let canonical = enumerate_structures(n, true, false)?.len();
    let expected = match n {
        4 => Some((18, 11)),
        _ => None,
    };
    Ok(Check {
        name: "enumeration".into(),
        passed: expected.is_none_or(|e| e == (ordered, canonical)),
        detail: serde_json::json!({ "n": n, "ordered": ordered, "canonical": canonical }),
    })
}

fn check_embedding(n: usize) -> Result<Check> {
    let mut mismatches = Vec::new();
    let mut pairs = 0;
    for m in 1..=n.min(4) {
        let all = enumerate_structures(m, true, false)?;
        for a in &all {
            for b in &all {
                pairs += 1;
                let fast = is_embedded(a, b)?;
                let ok = fast.is_some() == exhaustive_embedding(a, b) && fast.is_none_or(|w| w.certifies(a, b));
                if !ok {
                    mismatches.push(format!("{a} ⊆ {b}"));
                }
            }
        }
    }
    Ok(Check {
        name: "embedding_oracle".into(),
        passed: mismatches.is_empty(),
        detail: serde_json::json!({ "pairs": pairs, "mismatches": mismatches }),
    })
}

fn check_generators(cfg: &VerifyConfig, seed: u64) -> Result<Check> {
    let structures = enumerate_structures(cfg.n, true, false)?;
    let times = [cfg.tau, 2.0 * cfg.tau, 5.0 * cfg.tau];
    let per_structure: Vec<Result<serde_json::Value>> = structures
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let mut r = rng(seed, 100 + si as u64);
            let (mut trace, mut choi, mut df) = (0.0f64, f64::INFINITY, 0.0f64);
            for _ in 0..cfg.models_per_structure {
                let m = haar_structured_model(s, s.default_lindblad_count(), 1.0, &mut r)?;
                let c = verify_cptp(&model_propagator(&m, cfg.tau)?, cfg.tol);
                trace = trace.max(c.max_trace_deviation);
                choi = choi.min(c.min_choi_eigenvalue);
                let d = verify_decoherence_free(&m, &times, 20, cfg.tol, &mut r)?;
                df = df
                    .max(d.product_residual)
                    .max(d.coproduct_residual)
                    .max(d.unitary_residual.unwrap_or(0.0));
            }
            Ok(serde_json::json!({
                "structure": s.to_string(),
                "max_trace_deviation": trace,
                "min_choi_eigenvalue": choi,
                "max_df_residual": df,
                "passed": trace < 1e-10 && choi > -cfg.tol && df < cfg.tol,
            }))
        })
        .collect();
    let rows = per_structure.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Check {
        name: "generator_cptp_and_decoherence_free".into(),
        passed: rows.iter().all(|r| r["passed"] == true),
        detail: serde_json::Value::Array(rows),
    })
}

fn check_normalization(cfg: &VerifyConfig, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut r = rng(seed, 200);
    for n in 1..=cfg.n.min(3) {
        for s in enumerate_structures(n, true, false)? {
            let m = random_structured_model(&s, s.default_lindblad_count(), 1.0, &mut r)?;
            let p = model_propagator(&m, cfg.tau)?;
            let basis = AlgebraBasis::haar(AlgebraStructure::unital(&[(n, 1)])?, &mut r);
            for steps in 1..=cfg.enumeration_steps.min(3) {
                let table: Vec<_> = (0..steps)
                    .map(|_| random_instrument(&basis, &mut r, Granularity::Fine))
                    .collect();
                let sigma = InitialState::MaximallyMixed.density(n)?;
                let mut total = 0.0;
                let mut outcomes = vec![0usize; steps];
                loop {
                    let chain = MeasurementChain {
                        instrument_ids: (0..steps).collect(),
                        outcomes: outcomes.clone(),
                        tau: cfg.tau,
                        initial_state: InitialState::MaximallyMixed,
                    };
                    total += sequence_probability(&chain, &table, &p, &sigma);
                    let mut i = 0;
                    while i < steps {
                        outcomes[i] += 1;
                        if outcomes[i] < table[i].outcome_count() {
                            break;
                        }
                        outcomes[i] = 0;
                        i += 1;
                    }
                    if i == steps {
                        break;
                    }
                }
                worst = worst.max((total - 1.0).abs());
                cases += 1;
            }
        }
    }
    Ok(Check {
        name: "probability_normalization".into(),
        passed: worst <= 1e-9,
        detail: serde_json::json!({ "cases": cases, "max_deviation": worst }),
    })
}

fn check_likelihood_forms(seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed, 300);
    for case in 0..100u64 {
        let n = 2 + (case % 3) as usize;
        let s = AlgebraStructure::unital(&[(1, n)])?;
        let m = random_structured_model(&s, 2, 0.8, &mut r)?;
        let basis = AlgebraBasis::haar(AlgebraStructure::unital(&[(n, 1)])?, &mut r);
        let ds = generate_dataset(
            &ModelSource::Structured(m.clone()),
            &basis,
            1,
            8,
            0.5,
            seed ^ case,
            &GenerationOptions::default(),
        )?;
        let p = model_propagator(&m, 0.5)?;
        let sigma = InitialState::MaximallyMixed.density(n)?;
        let additive = chain_log_likelihood(&p, &ds.chains[0], &ds.instruments, &sigma).total;
        let nested = nested_log_likelihood(&p, &ds.chains[0], &ds.instruments, &sigma);
        worst = worst.max((additive - nested).abs() / nested.abs().max(f64::MIN_POSITIVE));
    }
    Ok(Check {
        name: "likelihood_additive_vs_nested".into(),
        passed: worst <= 1e-10,
        detail: serde_json::json!({ "cases": 100, "max_relative_difference": worst }),
    })
}

fn check_gradients(cfg: &VerifyConfig, seed: u64) -> Result<Check> {
    let mut rows = Vec::new();
    for (i, s) in cfg.gradient_structures.iter().enumerate() {
        let mut r = rng(seed, 400 + i as u64);
        let n = s.n();
        let truth = random_structured_model(s, s.default_lindblad_count(), 0.8, &mut r)?;
        let basis = AlgebraBasis::haar(AlgebraStructure::unital(&[(n, 1)])?, &mut r);
        let ds = generate_dataset(
            &ModelSource::Structured(truth),
            &basis,
            3,
            6,
            cfg.tau,
            seed,
            &GenerationOptions::default(),
        )?;
        let params = init_params(s, s.default_lindblad_count(), &mut r, 0.5)?;
        let check = gradient_check(s, &params, &ds, &[0, 1, 2], 1e-5, 1e-4, 1e-8)?;
        rows.push(serde_json::json!({ "structure": s.to_string(), "check": check }));
    }
    Ok(Check {
        name: "gradient_vs_finite_differences".into(),
        passed: rows.iter().all(|r| r["check"]["passed"] == true),
        detail: serde_json::Value::Array(rows),
    })
}

pub fn run_verify(cfg: &VerifyConfig, seed: u64) -> Result<VerifyReport> {
    let checks = vec![
        check_enumeration(cfg.n)?,
        check_embedding(cfg.n)?,
        check_generators(cfg, seed)?,
        check_normalization(cfg, seed)?,
        check_likelihood_forms(seed)?,
        check_gradients(cfg, seed)?,
    ];
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
