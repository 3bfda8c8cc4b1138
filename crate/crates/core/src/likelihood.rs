//! Log-likelihood of measurement records and its gradient.
//!
//! For a chain with projectors `E_1 … E_N` the additive form is
//! `F = Σ_j ln Tr[E_j Φ(ρ_{j−1})]` with `ρ_0 = σ` and
//! `ρ_j = E_j Φ(ρ_{j−1}) E_j / Tr[E_j Φ(ρ_{j−1})]`.
//!
//! Gradients use the convention `Ḡ = ∂F/∂Re Z + i ∂F/∂Im Z` for a complex
//! intermediate `Z`, so that `dF = Re Tr(Ḡ† dZ)`. They are propagated by
//! hand from the chain back through `exp(τ𝓛)`, the superoperator, the
//! change of basis and finally `U = exp(iG)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::AlgebraStructure;
use crate::dataset::Dataset;
use crate::dynamics::{Instrument, MeasurementChain, PROBABILITY_FLOOR};
use crate::error::{Error, Result};
use crate::generator::{gksl_superoperator, propagator, GkslModel, OperatorPair, Propagator};
use crate::linalg::{self, CMatrix, CVector, C64, I};
use crate::params::{Layout, ParameterVector};

/// States below this trace are replaced by `E/Tr E` instead of being divided.
const RENORMALIZE_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodValue {
    pub total: f64,
    pub per_step: Vec<f64>,
    pub normalized: f64,
}

fn fallback_state(e: &CMatrix) -> CMatrix {
    let tr = linalg::trace(e).re;
    e / C64::new(tr, 0.0)
}

/// Additive log-likelihood of one chain with an explicit probability floor.
pub fn chain_log_likelihood_with_floor(
    p: &Propagator,
    chain: &MeasurementChain,
    table: &[Instrument],
    sigma: &CMatrix,
    floor: f64,
) -> LikelihoodValue {
    let mut rho = sigma.clone();
    let mut per_step = Vec::with_capacity(chain.len());
    for e in chain.steps(table) {
        let v = p.apply(&rho);
        let prob = linalg::trace_of_product(e, &v).re;
        per_step.push(prob.max(floor).ln());
        rho = if prob > RENORMALIZE_FLOOR {
            e * v * e / C64::new(prob, 0.0)
        } else {
            fallback_state(e)
        };
    }
    let total = per_step.iter().sum::<f64>();
    let normalized = if per_step.is_empty() {
        0.0
    } else {
        total / per_step.len() as f64
    };
    LikelihoodValue {
        total,
        per_step,
        normalized,
    }
}

pub fn chain_log_likelihood(
    p: &Propagator,
    chain: &MeasurementChain,
    table: &[Instrument],
    sigma: &CMatrix,
) -> LikelihoodValue {
    chain_log_likelihood_with_floor(p, chain, table, sigma, PROBABILITY_FLOOR)
}

/// `ln Tr[E_N Φ(⋯ E_1 Φ(σ) E_1 ⋯) E_N]` evaluated as one nested expression.
pub fn nested_log_likelihood(p: &Propagator, chain: &MeasurementChain, table: &[Instrument], sigma: &CMatrix) -> f64 {
    crate::dynamics::sequence_probability_nested(chain, table, p, sigma).ln()
}

fn check_params(structure: &AlgebraStructure, params: &ParameterVector) -> Result<GkslModel> {
    if params.structure != *structure {
        return Err(Error::InvalidArgument(format!(
            "parameters are laid out for {} but the structure is {structure}",
            params.structure
        )));
    }
    params.to_model()
}

fn structured_propagator(structure: &AlgebraStructure, params: &ParameterVector, tau: f64) -> Result<Propagator> {
    let model = check_params(structure, params)?;
    propagator(&gksl_superoperator(&crate::generator::assemble_operators(&model)?), tau)
}

pub fn log_likelihood(
    structure: &AlgebraStructure,
    params: &ParameterVector,
    chain: &MeasurementChain,
    table: &[Instrument],
    tau: f64,
) -> Result<LikelihoodValue> {
    let p = structured_propagator(structure, params, tau)?;
    let sigma = chain.initial_state.density(p.n())?;
    Ok(chain_log_likelihood(&p, chain, table, &sigma))
}

fn check_batch(dataset: &Dataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= dataset.chains.len()) {
        return Err(Error::InvalidArgument(format!(
            "batch index {i} out of range for {} chains",
            dataset.chains.len()
        )));
    }
    if let Some(c) = batch.iter().map(|&i| &dataset.chains[i]).find(|c| c.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "chain with instruments {:?} has no steps",
            c.instrument_ids
        )));
    }
    Ok(())
}

/// Mean of `F/N` over the selected chains for a fixed propagator.
pub fn propagator_batch_value(p: &Propagator, dataset: &Dataset, batch: &[usize]) -> Result<f64> {
    check_batch(dataset, batch)?;
    let values: Vec<Result<f64>> = batch
        .par_iter()
        .map(|&i| {
            let chain = &dataset.chains[i];
            let sigma = chain.initial_state.density(p.n())?;
            Ok(chain_log_likelihood(p, chain, &dataset.instruments, &sigma).normalized)
        })
        .collect();
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok(sum / batch.len() as f64)
}

/// Mean `F/N` of every chain in the dataset.
pub fn dataset_value(p: &Propagator, dataset: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..dataset.chains.len()).collect();
    propagator_batch_value(p, dataset, &all)
}

/// Mean `F/N` of a dataset under arbitrary GKSL operators.
pub fn operators_dataset_value(ops: &OperatorPair, dataset: &Dataset) -> Result<f64> {
    dataset_value(&propagator(&gksl_superoperator(ops), dataset.tau)?, dataset)
}

pub fn batch_log_likelihood(
    structure: &AlgebraStructure,
    params: &ParameterVector,
    dataset: &Dataset,
    batch: &[usize],
) -> Result<f64> {
    let p = structured_propagator(structure, params, dataset.tau)?;
    propagator_batch_value(&p, dataset, batch)
}

/// Value of one chain's weighted log-likelihood and its gradient with
/// respect to the propagator matrix.
fn chain_backward(
    p: &Propagator,
    chain: &MeasurementChain,
    table: &[Instrument],
    sigma: &CMatrix,
    weight: f64,
) -> (f64, CMatrix) {
    let n = p.n();
    let steps = chain.len();
    let projectors: Vec<&CMatrix> = chain.steps(table).collect();
    let mut inputs = Vec::with_capacity(steps);
    let mut outputs: Vec<CMatrix> = Vec::with_capacity(steps);
    let mut probs = Vec::with_capacity(steps);
    let mut rho = sigma.clone();
    let mut total = 0.0;
    for e in &projectors {
        let r = linalg::vectorize(&rho);
        let v = linalg::unvectorize(&(&p.matrix * &r), n);
        let prob = linalg::trace_of_product(e, &v).re;
        total += prob.max(PROBABILITY_FLOOR).ln();
        rho = if prob > RENORMALIZE_FLOOR {
            *e * &v * *e / C64::new(prob, 0.0)
        } else {
            fallback_state(e)
        };
        inputs.push(r);
        outputs.push(v);
        probs.push(prob);
    }

    let mut grad_v_cols = CMatrix::zeros(n * n, steps);
    let mut input_cols = CMatrix::zeros(n * n, steps);
    let mut grad_rho = CMatrix::zeros(n, n);
    for j in (0..steps).rev() {
        let e = projectors[j];
        let prob = probs[j];
        let mut grad_v = CMatrix::zeros(n, n);
        if prob > PROBABILITY_FLOOR {
            grad_v += e * C64::new(weight / prob, 0.0);
        }
        if prob > RENORMALIZE_FLOOR {
            let w = e * &outputs[j] * e;
            let grad_w = &grad_rho / C64::new(prob, 0.0);
            let grad_s = -linalg::real_inner(&grad_rho, &w) / (prob * prob);
            grad_v += e * grad_w * e + e * C64::new(grad_s, 0.0);
        }
        let gv = linalg::vectorize(&grad_v);
        grad_v_cols.set_column(j, &gv);
        input_cols.set_column(j, &inputs[j]);
        let back: CVector = &p.adjoint_matrix * gv;
        grad_rho = linalg::unvectorize(&back, n);
    }
    let grad_m = linalg::matmul(&grad_v_cols, &input_cols.adjoint());
    (weight * total, grad_m)
}

/// Gradient of `batch_log_likelihood` with respect to the propagator matrix.
pub fn propagator_gradient(p: &Propagator, dataset: &Dataset, batch: &[usize]) -> Result<(f64, CMatrix)> {
    check_batch(dataset, batch)?;
    let b = batch.len() as f64;
    let parts: Vec<Result<(f64, CMatrix)>> = batch
        .par_iter()
        .map(|&i| {
            let chain = &dataset.chains[i];
            let sigma = chain.initial_state.density(p.n())?;
            let weight = 1.0 / (b * chain.len() as f64);
            Ok(chain_backward(p, chain, &dataset.instruments, &sigma, weight))
        })
        .collect();
    let dim = p.n() * p.n();
    let mut value = 0.0;
    let mut grad = CMatrix::zeros(dim, dim);
    for part in parts {
        let (v, g) = part?;
        value += v;
        grad += g;
    }
    Ok((value, grad))
}

/// Pulls a gradient on the superoperator back to `(Ḡ_H, Ḡ_{L_j})`.
pub fn superoperator_pullback(ops: &OperatorPair, grad: &CMatrix) -> (CMatrix, Vec<CMatrix>) {
    let n = ops.n();
    let g = |i: usize, a: usize, j: usize, b: usize| grad[(i * n + a, j * n + b)];
    let mut grad_a = CMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut s = C64::new(0.0, 0.0);
            let mut t = C64::new(0.0, 0.0);
            for i in 0..n {
                s += g(i, a, i, b);
                t += g(a, i, b, i);
            }
            grad_a[(a, b)] += s + t.conj();
        }
    }
    let grad_h = &grad_a * I;
    let grad_k = &grad_a * C64::new(-0.5, 0.0);
    let grad_k_adj = grad_k.adjoint();
    let grad_ls = ops
        .lindblads()
        .iter()
        .map(|l| {
            let mut gl = CMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let lij = l[(i, j)];
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..n {
                        for b in 0..n {
                            let gv = g(i, a, j, b);
                            gl[(a, b)] += gv * lij;
                            acc += gv.conj() * l[(a, b)];
                        }
                    }
                    gl[(i, j)] += acc;
                }
            }
            gl + l * &grad_k_adj + l * &grad_k
        })
        .collect();
    (grad_h, grad_ls)
}

/// Value and gradient of `batch_log_likelihood` with respect to every real
/// parameter in the flat layout.
pub fn gradient(
    structure: &AlgebraStructure,
    params: &ParameterVector,
    dataset: &Dataset,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let model = check_params(structure, params)?;
    let layout = Layout::new(structure, model.lindblad_count());
    let n = structure.n();
    let tau = dataset.tau;

    let z = model.unitary_generator() * I;
    let u = linalg::expm(&z)?;
    let ud = u.adjoint();
    let bs: Vec<CMatrix> = (0..model.lindblad_count())
        .map(|j| model.canonical_lindblad(j))
        .collect();
    let d = model.canonical_hamiltonian();
    let ls: Vec<CMatrix> = bs.iter().map(|b| &u * b * &ud).collect();
    let h = &u * &d * &ud;
    let ops = OperatorPair::new(linalg::hermitian_part(&h), ls)?;
    let superop = gksl_superoperator(&ops);
    let scaled = &superop * C64::new(tau, 0.0);
    let p = Propagator::from_matrix(tau, linalg::expm(&scaled)?)?;

    let (value, grad_m) = propagator_gradient(&p, dataset, batch)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "batch log-likelihood".into(),
            index: None,
        });
    }
    let grad_superop = linalg::expm_pullback(&scaled, &grad_m)? * C64::new(tau, 0.0);
    let (grad_h, grad_ls) = superoperator_pullback(&ops, &grad_superop);

    let mut grad_u = CMatrix::zeros(n, n);
    let mut out = vec![0.0; layout.len()];
    for (j, (gl, b)) in grad_ls.iter().zip(&bs).enumerate() {
        let gb = &ud * gl * &u;
        grad_u += gl * &u * b.adjoint() + gl.adjoint() * &u * b;
        for (k, block) in structure.blocks().iter().enumerate() {
            let off = structure.block_range(k).start;
            let m = block.mult;
            for r in 0..m {
                for c in 0..m {
                    let s: C64 = (0..block.dim).map(|a| gb[(off + a * m + r, off + a * m + c)]).sum();
                    let idx = layout.beta_index(j, k, r, c);
                    out[idx] = s.re;
                    out[idx + 1] = s.im;
                }
            }
        }
    }
    let gd = &ud * &grad_h * &u;
    grad_u += &grad_h * &u * &d + grad_h.adjoint() * &u * &d;
    for (k, block) in structure.blocks().iter().enumerate() {
        let off = structure.block_range(k).start;
        let m = block.mult;
        let kr = layout.kappa_range(k);
        let mr = layout.mu_range(k);
        for a in 0..block.dim {
            for c in 0..m {
                let g = gd[(off + a * m + c, off + a * m + c)].re;
                out[kr.start + a] += g;
                out[mr.start + c] += g;
            }
        }
    }
    let grad_z = linalg::expm_pullback(&z, &grad_u)?;
    let grad_g = grad_z * C64::new(0.0, -1.0);
    for i in 0..n {
        out[i] = grad_g[(i, i)].re;
        for j in i + 1..n {
            let (re, im) = layout.generator_index(i, j);
            out[re] = grad_g[(i, j)].re + grad_g[(j, i)].re;
            out[im.expect("off-diagonal")] = grad_g[(i, j)].im - grad_g[(j, i)].im;
        }
    }
    if let Some(idx) = out.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient".into(),
            index: Some(idx),
        });
    }
    Ok((value, out))
}

/// Central differences of [`batch_log_likelihood`], one component per task.
pub fn finite_difference_gradient(
    structure: &AlgebraStructure,
    params: &ParameterVector,
    dataset: &Dataset,
    batch: &[usize],
    step: f64,
) -> Result<Vec<f64>> {
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let mut plus = params.clone();
            plus.values[i] += step;
            let mut minus = params.clone();
            minus.values[i] -= step;
            let f = batch_log_likelihood(structure, &plus, dataset, batch)?;
            let b = batch_log_likelihood(structure, &minus, dataset, batch)?;
            Ok((f - b) / (2.0 * step))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub components: usize,
    /// Largest `|g − g_fd| / max(|g|, |g_fd|)` among components above the floor.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub worst_index: Option<usize>,
    pub passed: bool,
}

/// Compares [`gradient`] with central differences: every component must
/// satisfy `|g − g_fd| ≤ rel·max(|g|, |g_fd|) + abs_floor`.
pub fn gradient_check(
    structure: &AlgebraStructure,
    params: &ParameterVector,
    dataset: &Dataset,
    batch: &[usize],
    step: f64,
    rel: f64,
    abs_floor: f64,
) -> Result<GradientCheck> {
    let (_, g) = gradient(structure, params, dataset, batch)?;
    let fd = finite_difference_gradient(structure, params, dataset, batch, step)?;
    let mut out = GradientCheck {
        components: g.len(),
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_index: None,
        passed: true,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
        let err = (a - b).abs();
        let scale = a.abs().max(b.abs());
        out.max_absolute_error = out.max_absolute_error.max(err);
        if err > abs_floor {
            out.max_relative_error = out.max_relative_error.max(err / scale);
        }
        let excess = err - (rel * scale + abs_floor);
        if excess > worst_excess {
            worst_excess = excess;
            out.worst_index = Some(i);
        }
        if excess > 0.0 {
            out.passed = false;
        }
    }
    Ok(out)
}
