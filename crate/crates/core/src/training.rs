//! Gradient-ascent training, structure scans and hierarchy checks.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraStructure, EmbeddingWitness, HierarchyDag};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::generator::{GkslModel, Propagator};
use crate::likelihood::{batch_log_likelihood, dataset_value, gradient};
use crate::linalg::{self, CMatrix, C64};
use crate::params::{init_params, ParameterVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None`: the whole training set when it has at most 128 chains, else 64.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub restarts: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// `None`: `max_k m_k²` Lindblad operators.
    pub lindblad_count: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: None,
            learning_rate: 1e-2,
            optimizer: Optimizer::default(),
            restarts: 3,
            init_scale: 0.1,
            seed: 0,
            eval_every: 1,
            lindblad_count: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be non-negative");
        }
        if self.lindblad_count == Some(0) {
            return bad("lindblad_count must be at least 1");
        }
        Ok(())
    }

    pub fn resolved_batch_size(&self, train_len: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(train_len),
            None if train_len <= 128 => train_len,
            None => 64,
        }
    }

    pub fn resolved_lindblad_count(&self, structure: &AlgebraStructure) -> usize {
        self.lindblad_count
            .unwrap_or_else(|| structure.default_lindblad_count())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    /// Mean of the batch objectives seen during the epoch.
    pub train_value: f64,
    pub test_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub structure: AlgebraStructure,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_test_value: f64,
    /// `|test(𝒯) − test(previous evaluation)|`, reported only when the best
    /// epoch lies in the last 5% of training.
    pub final_delta: Option<f64>,
    pub history: Vec<HistoryEntry>,
    pub best_params: ParameterVector,
    pub restart_index: usize,
    /// Best test value of every restart, `None` for failed restarts.
    pub restart_values: Vec<Option<f64>>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, len: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One ascent step on `x` along `grad`.
    fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..x.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    x[i] += self.lr * mh / (vh.sqrt() + eps);
                }
            }
            Optimizer::Sgd { momentum } => {
                for i in 0..x.len() {
                    self.m[i] = momentum * self.m[i] + grad[i];
                    x[i] += self.lr * self.m[i];
                }
            }
        }
    }
}

struct RestartOutcome {
    best_epoch: usize,
    best_test_value: f64,
    best_params: ParameterVector,
    history: Vec<HistoryEntry>,
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn run_restart(
    structure: &AlgebraStructure,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    restart: usize,
) -> Result<RestartOutcome> {
    let mut rng = restart_rng(cfg.seed, restart);
    let j = cfg.resolved_lindblad_count(structure);
    let mut params = init_params(structure, j, &mut rng, cfg.init_scale)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.len());
    let batch_size = cfg.resolved_batch_size(train_set.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let all_test: Vec<usize> = (0..test_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParameterVector)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(batch_size) {
            let (value, grad) = gradient(structure, &params, train_set, batch)?;
            opt.step(&mut params.values, &grad);
            sum += value;
            batches += 1;
        }
        if let Some(i) = params.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameters after update".into(),
                index: Some(i),
            });
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let test_value = batch_log_likelihood(structure, &params, test_set, &all_test)?;
            if !test_value.is_finite() {
                return Err(Error::NonFinite {
                    what: "test log-likelihood".into(),
                    index: None,
                });
            }
            history.push(HistoryEntry {
                epoch,
                train_value: sum / batches as f64,
                test_value,
            });
            if best.as_ref().is_none_or(|b| test_value > b.1) {
                best = Some((epoch, test_value, params.clone()));
            }
        }
    }
    let (best_epoch, best_test_value, best_params) = best.expect("at least one evaluation");
    Ok(RestartOutcome {
        best_epoch,
        best_test_value,
        best_params,
        history,
    })
}

fn check_compatible(structure: &AlgebraStructure, a: &Dataset, b: &Dataset) -> Result<()> {
    structure.require_unital()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "training and test sets must be non-empty".into(),
        ));
    }
    for ds in [a, b] {
        if ds.n != structure.n() {
            return Err(Error::DimensionMismatch {
                what: format!("dataset for structure {structure}"),
                expected: structure.n(),
                found: ds.n,
            });
        }
    }
    if a.tau.to_bits() != b.tau.to_bits() {
        return Err(Error::InvalidArgument(format!(
            "training and test sets use different time steps ({} vs {})",
            a.tau, b.tau
        )));
    }
    Ok(())
}

/// Trains `cfg.restarts` independent runs and keeps the one with the best
/// test value.
pub fn train(
    structure: &AlgebraStructure,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(structure, train_set, test_set)?;
    let outcomes: Vec<Result<RestartOutcome>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(structure, cfg, train_set, test_set, r))
        .collect();
    let mut chosen: Option<(usize, RestartOutcome)> = None;
    let mut restart_values = Vec::with_capacity(outcomes.len());
    let mut errors = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                restart_values.push(Some(o.best_test_value));
                if chosen.as_ref().is_none_or(|c| o.best_test_value > c.1.best_test_value) {
                    chosen = Some((r, o));
                }
            }
            Err(e) => {
                log::warn!("restart {r} for {structure} failed: {e}");
                restart_values.push(None);
                errors.push(format!("restart {r}: {e}"));
            }
        }
    }
    let Some((restart_index, o)) = chosen else {
        return Err(Error::TrainingFailed(format!(
            "all restarts for {structure} failed ({})",
            errors.join("; ")
        )));
    };
    let final_delta = if o.best_epoch as f64 >= 0.95 * cfg.epochs as f64 {
        let h = &o.history;
        match h.len() {
            0 => None,
            1 => Some(0.0),
            len => Some((h[len - 1].test_value - h[len - 2].test_value).abs()),
        }
    } else {
        None
    };
    Ok(TrainReport {
        structure: structure.clone(),
        epochs: cfg.epochs,
        best_epoch: o.best_epoch,
        best_test_value: o.best_test_value,
        final_delta,
        history: o.history,
        best_params: o.best_params,
        restart_index,
        restart_values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub structure: AlgebraStructure,
    pub report: Option<TrainReport>,
    pub error: Option<String>,
}

impl ScanRow {
    pub fn value(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.best_test_value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    /// `F_E/N`: test value of the generating dynamics.
    pub reference_value: Option<f64>,
}

impl ScanResult {
    pub fn row(&self, structure: &AlgebraStructure) -> Option<&ScanRow> {
        let c = structure.canonical();
        self.rows.iter().find(|r| r.structure.canonical() == c)
    }

    pub fn value(&self, structure: &AlgebraStructure) -> Option<f64> {
        self.row(structure).and_then(ScanRow::value)
    }
}

/// Descending by value, ties by structure order, failed rows last.
pub fn compare_rows(a: &ScanRow, b: &ScanRow) -> Ordering {
    match (a.value(), b.value()) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.structure.cmp(&b.structure)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.structure.cmp(&b.structure),
    }
}

/// Trains every candidate on the same data. Training failures are kept as
/// rows with an error message instead of aborting the scan.
pub fn structure_scan(
    candidates: &[AlgebraStructure],
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    reference: Option<&Propagator>,
) -> Result<ScanResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate structures".into()));
    }
    cfg.validate()?;
    let reference_value = reference.map(|p| dataset_value(p, test_set)).transpose()?;
    let mut rows: Vec<ScanRow> = candidates
        .par_iter()
        .map(|s| match train(s, cfg, train_set, test_set) {
            Ok(report) => ScanRow {
                structure: s.clone(),
                report: Some(report),
                error: None,
            },
            Err(e) => ScanRow {
                structure: s.clone(),
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    rows.sort_by(compare_rows);
    Ok(ScanResult { rows, reference_value })
}

/// A more complex model (smaller algebra) scoring below a simpler one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub complex: AlgebraStructure,
    pub simple: AlgebraStructure,
    pub complex_value: f64,
    pub simple_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub margin: f64,
    pub violations: Vec<Violation>,
    /// Most complex structure such that no violation involves it or any
    /// model simpler than it.
    pub frontier: Option<AlgebraStructure>,
}

pub const DEFAULT_MARGIN: f64 = 0.005;

/// Model `A` is more complex than `B` when the algebra of `A` embeds into
/// that of `B`; the ranking should then satisfy `F(A) ≥ F(B) − margin`.
pub fn hierarchy_consistency(scan: &ScanResult, dag: &HierarchyDag, margin: f64) -> Result<ConsistencyReport> {
    let mut scored: Vec<(usize, &ScanRow, f64)> = Vec::new();
    for row in &scan.rows {
        let idx = dag
            .index_of(&row.structure)
            .ok_or_else(|| Error::UnknownStructure(row.structure.to_string()))?;
        if let Some(v) = row.value() {
            scored.push((idx, row, v));
        }
    }
    let mut violations = Vec::new();
    for &(a, ra, va) in &scored {
        for &(b, rb, vb) in &scored {
            if dag.embeds(a, b) && va < vb - margin {
                violations.push(Violation {
                    complex: ra.structure.clone(),
                    simple: rb.structure.clone(),
                    complex_value: va,
                    simple_value: vb,
                });
            }
        }
    }
    let frontier = scored
        .iter()
        .filter(|&&(s, _, _)| {
            violations.iter().all(|v| {
                let a = dag.index_of(&v.complex).expect("violation nodes are in the DAG");
                a != s && !dag.embeds(s, a)
            })
        })
        .min_by(|x, y| {
            x.1.structure
                .algebra_dimension()
                .cmp(&y.1.structure.algebra_dimension())
                .then_with(|| x.1.structure.canonical().cmp(&y.1.structure.canonical()))
        })
        .map(|&(_, r, _)| r.structure.clone());
    Ok(ConsistencyReport {
        margin,
        violations,
        frontier,
    })
}

/// Re-expresses a model built on `sup` as a model built on the smaller
/// algebra `sub`, using the block embedding described by `witness`.
///
/// Lindblad operators always carry over. The Hamiltonian carries over only
/// when, inside every sub-block, the `κ` values of the copies differ by
/// constants; otherwise the super model is outside the sub model class.
pub fn embed_parameters(
    sub: &AlgebraStructure,
    sup: &AlgebraStructure,
    witness: &EmbeddingWitness,
    params: &ParameterVector,
) -> Result<ParameterVector> {
    if params.structure != *sup {
        return Err(Error::InvalidArgument(format!(
            "parameters belong to {}, not {sup}",
            params.structure
        )));
    }
    if !witness.certifies(sub, sup) {
        return Err(Error::InvalidArgument(format!(
            "witness does not certify {sub} ⊆ {sup}"
        )));
    }
    let model = params.to_model()?;
    let n = sup.n();
    let sup_blocks = sup.blocks();
    let sub_blocks = sub.blocks();
    let a = &witness.a;

    // offset_kl: start of the copies of sub-block l inside super block k.
    let offsets: Vec<Vec<usize>> = (0..sup_blocks.len())
        .map(|k| {
            let mut acc = 0;
            (0..sub_blocks.len())
                .map(|l| {
                    let o = acc;
                    acc += a[k][l] * sub_blocks[l].dim;
                    o
                })
                .collect()
        })
        .collect();

    let mut perm = CMatrix::zeros(n, n);
    // Super-block diagonal value at (k, α, b) for the Hamiltonian check.
    let kappa_at = |k: usize, alpha: usize| model.kappas()[k][alpha];
    let mut kappas_sub = Vec::with_capacity(sub_blocks.len());
    let mut mus_sub = Vec::with_capacity(sub_blocks.len());
    for (l, lb) in sub_blocks.iter().enumerate() {
        let sub_off = sub.block_range(l).start;
        let copies: Vec<(usize, usize)> = (0..sup_blocks.len())
            .flat_map(|k| (0..a[k][l]).map(move |c| (k, c)))
            .collect();
        let (k0, c0) = copies[0];
        let kappa_l: Vec<f64> = (0..lb.dim)
            .map(|s| kappa_at(k0, offsets[k0][l] + c0 * lb.dim + s))
            .collect();
        let mut mu_l = Vec::with_capacity(lb.mult);
        let mut t = 0;
        for &(k, c) in &copies {
            let kb = sup_blocks[k];
            let base = offsets[k][l] + c * lb.dim;
            let shift = kappa_at(k, base) - kappa_l[0];
            for (s, &ks) in kappa_l.iter().enumerate() {
                let mismatch = (kappa_at(k, base + s) - ks - shift).abs();
                let scale = 1.0 + ks.abs();
                if mismatch > 1e-10 * scale {
                    return Err(Error::NotRepresentable(format!(
                        "κ of block {k} is not a shifted copy of the sub-block {l} spectrum \
                         (mismatch {mismatch:e})"
                    )));
                }
            }
            for b in 0..kb.mult {
                mu_l.push(model.mus()[k][b] + shift);
                for s in 0..lb.dim {
                    let sup_idx = sup.block_range(k).start + (base + s) * kb.mult + b;
                    let sub_idx = sub_off + s * lb.mult + t + b;
                    perm[(sup_idx, sub_idx)] = C64::new(1.0, 0.0);
                }
            }
            t += kb.mult;
        }
        kappas_sub.push(kappa_l);
        mus_sub.push(mu_l);
    }

    let betas_sub: Vec<Vec<CMatrix>> = model
        .betas()
        .iter()
        .map(|row| {
            sub_blocks
                .iter()
                .enumerate()
                .map(|(l, _)| {
                    let parts: Vec<CMatrix> = (0..sup_blocks.len())
                        .flat_map(|k| (0..a[k][l]).map(move |_| k))
                        .map(|k| row[k].clone())
                        .collect();
                    linalg::block_diagonal(&parts)
                })
                .collect()
        })
        .collect();

    let u_sub = model.unitary()? * perm;
    let g_sub = linalg::unitary_log_hermitian(&u_sub)?;
    let embedded = GkslModel::new(sub.clone(), g_sub, betas_sub, kappas_sub, mus_sub)?;
    Ok(ParameterVector::from_model(&embedded))
}
