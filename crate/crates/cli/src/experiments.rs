//! Experiment runners behind the subcommands.

use std::path::{Path, PathBuf};

use dfalgebra::algebra::{enumerate_structures, hierarchy_dag, is_embedded, AlgebraBasis, AlgebraStructure};
use dfalgebra::dataset::{generate_dataset, load_dataset, save_dataset, Dataset, GenerationOptions, ModelSource};
use dfalgebra::dynamics::{ComplementPolicy, Granularity};
use dfalgebra::generator::{gksl_superoperator, propagator, Propagator};
use dfalgebra::likelihood::dataset_value;
use dfalgebra::physmodels::{haar_structured_model, waveguide_operators};
use dfalgebra::report::{scan_table, scan_table_hierarchical, tradeoff_table, Table, TableFormat, TradeoffCell};
use dfalgebra::training::{
    hierarchy_consistency, structure_scan, train, ConsistencyReport, ScanResult, TrainConfig, TrainReport,
};
use dfalgebra::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::verify::run_verify;

/// Independent seeds derived from the run seed, one per random consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub generator: u64,
    pub accessible: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub training: u64,
}

impl Seeds {
    pub fn derive(run: u64) -> Self {
        let pick = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(run);
            rng.set_stream(stream);
            rng.next_u64()
        };
        Self {
            run,
            generator: pick(1),
            accessible: pick(2),
            train_data: pick(3),
            test_data: pick(4),
            training: pick(5),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunContext {
    pub seeds: Seeds,
    /// Multiplier for full-scale chain counts.
    pub scale: f64,
    pub out_dir: PathBuf,
}

/// Result of a run: files written plus a JSON summary for stdout.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
    /// `false` when the run completed but a property check failed.
    pub passed: bool,
}

/// Wrapper written to every result JSON so `report` knows what it reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultDocument {
    Train {
        report: TrainReport,
        reference_value: Option<f64>,
    },
    Scan {
        result: ScanResult,
        consistency: Option<ConsistencyReport>,
    },
    Tradeoff(TradeoffResult),
    Restricted(RestrictedResult),
}

impl ResultDocument {
    pub fn table(&self) -> Result<Table> {
        Ok(match self {
            Self::Train {
                report,
                reference_value,
            } => scan_table(&ScanResult {
                rows: vec![dfalgebra::training::ScanRow {
                    structure: report.structure.clone(),
                    report: Some(report.clone()),
                    error: None,
                }],
                reference_value: *reference_value,
            }),
            Self::Scan { result, .. } => {
                let nodes: Vec<AlgebraStructure> = result.rows.iter().map(|r| r.structure.clone()).collect();
                match hierarchy_dag(&nodes) {
                    Ok(dag) => scan_table_hierarchical(result, &dag),
                    Err(_) => scan_table(result),
                }
            }
            Self::Tradeoff(t) => {
                let mut table = tradeoff_table(&t.cells);
                if let Some(v) = t.reference_value {
                    table.notes.push(format!("F_E/N = {v:.4}"));
                }
                table
            }
            Self::Restricted(r) => r.table(),
        })
    }
}

pub struct Problem {
    pub train: Dataset,
    pub test: Dataset,
    /// Generating propagator, when known.
    pub reference: Option<Propagator>,
}

pub fn model_source(generator: &GeneratorSpec, seeds: &Seeds) -> Result<ModelSource> {
    match generator {
        GeneratorSpec::Structured {
            structure,
            scale,
            lindblad_count,
        } => {
            let j = lindblad_count.unwrap_or_else(|| structure.default_lindblad_count());
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.generator);
            Ok(ModelSource::Structured(haar_structured_model(
                structure, j, *scale, &mut rng,
            )?))
        }
        GeneratorSpec::Waveguide(p) => Ok(ModelSource::Operators {
            label: format!(
                "waveguide(gamma={}, r={}, theta={}, atoms={})",
                p.gamma, p.r, p.theta, p.atoms
            ),
            ops: waveguide_operators(p)?,
        }),
    }
}

/// Haar-rotated accessible algebra; the stream keeps bases for different
/// structures independent.
pub fn accessible_basis(structure: AlgebraStructure, seeds: &Seeds, stream: u64) -> AlgebraBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.accessible);
    rng.set_stream(stream);
    AlgebraBasis::haar(structure, &mut rng)
}

fn reference_propagator(source: &ModelSource, tau: f64) -> Result<Propagator> {
    propagator(&gksl_superoperator(&source.operators()?), tau)
}

pub fn prepare_problem(spec: &ProblemSpec, scale: f64, seeds: &Seeds) -> Result<Problem> {
    spec.validate()?;
    let source = model_source(&spec.generator, seeds)?;
    let basis = accessible_basis(spec.accessible_structure()?, seeds, 0);
    let options = GenerationOptions {
        granularity: spec.granularity,
        complement: spec.complement,
        ..Default::default()
    };
    let s_train = scaled(spec.chains, scale);
    let s_test = scaled(spec.test_chains.unwrap_or(spec.chains), scale);
    let train = generate_dataset(
        &source,
        &basis,
        s_train,
        spec.steps,
        spec.tau,
        seeds.train_data,
        &options,
    )?;
    let test = generate_dataset(&source, &basis, s_test, spec.steps, spec.tau, seeds.test_data, &options)?;
    Ok(Problem {
        reference: Some(reference_propagator(&source, spec.tau)?),
        train,
        test,
    })
}

fn load_problem(source: &DataSource, scale: f64, seeds: &Seeds) -> Result<Problem> {
    match source {
        DataSource::Generate(spec) => prepare_problem(spec, scale, seeds),
        DataSource::Files { train, test } => {
            let train = load_dataset(train)?;
            let test = load_dataset(test)?;
            let reference = match &test.generator_metadata {
                Some(m) => m.propagator(test.tau)?,
                None => None,
            };
            Ok(Problem { train, test, reference })
        }
    }
}

fn with_seed(cfg: &TrainConfig, seeds: &Seeds) -> TrainConfig {
    TrainConfig {
        seed: seeds.training,
        ..cfg.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffResult {
    pub product: usize,
    pub cells: Vec<TradeoffCell>,
    pub reference_value: Option<f64>,
    pub spread: Option<f64>,
}

pub fn tradeoff(cfg: &TradeoffConfig, scale: f64, seeds: &Seeds) -> Result<TradeoffResult> {
    let source = model_source(&cfg.generator, seeds)?;
    let n = cfg.generator.n();
    let basis = accessible_basis(AlgebraStructure::unital(&[(n, 1)])?, seeds, 0);
    let options = GenerationOptions::default();
    let product = scaled(cfg.product, scale);
    let test = generate_dataset(
        &source,
        &basis,
        cfg.test_chains,
        cfg.test_steps,
        cfg.tau,
        seeds.test_data,
        &options,
    )?;
    let reference = reference_propagator(&source, cfg.tau)?;
    let structure = match (&cfg.structure, cfg.generator.structure()) {
        (Some(s), _) | (None, Some(s)) => s.clone(),
        (None, None) => return Err(Error::InvalidArgument("tradeoff needs a structure to train".into())),
    };
    let train_cfg = with_seed(&cfg.train, seeds);
    let cells: Vec<Result<TradeoffCell>> = cfg
        .chain_lengths
        .par_iter()
        .map(|&steps| {
            let chains = (product / steps).max(1);
            let data = generate_dataset(&source, &basis, chains, steps, cfg.tau, seeds.train_data, &options)?;
            let mut c = train_cfg.clone();
            if let Some(f) = cfg.batch_fraction {
                c.batch_size = Some(((chains as f64 * f).round() as usize).max(1));
            }
            let report = train(&structure, &c, &data, &test)?;
            Ok(TradeoffCell {
                chain_length: steps,
                chains,
                report,
            })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = cells.iter().map(|c| c.report.best_test_value).collect();
    Ok(TradeoffResult {
        product,
        spread: dfalgebra::report::spread(&values),
        cells,
        reference_value: Some(dataset_value(&reference, &test)?),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedRow {
    pub n0: usize,
    pub accessible: AlgebraStructure,
    /// Best test value on data measured with the same accessible algebra.
    pub own_value: f64,
    pub own_reference: f64,
    /// The trained model evaluated on data measured with all of `M_n`.
    pub full_value: f64,
    pub full_reference: f64,
    pub best_epoch: usize,
    pub final_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedResult {
    pub structure: AlgebraStructure,
    pub complement: ComplementPolicy,
    pub rows: Vec<RestrictedRow>,
}

impl RestrictedResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "n₀",
            "𝒜",
            "F/N (own 𝒜)",
            "F_E/N (own 𝒜)",
            "F/N (full)",
            "F_E/N (full)",
            "𝒯_best",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.n0.into(),
                r.accessible.to_string().into(),
                r.own_value.into(),
                r.own_reference.into(),
                r.full_value.into(),
                r.full_reference.into(),
                r.best_epoch.into(),
            ]);
        }
        t.notes.push(format!(
            "model {}, zero-block outcome: {:?}",
            self.structure, self.complement
        ));
        t
    }
}

pub fn restricted(cfg: &RestrictedConfig, scale: f64, seeds: &Seeds) -> Result<RestrictedResult> {
    let source = model_source(&cfg.generator, seeds)?;
    let n = cfg.generator.n();
    let structure = match (&cfg.structure, cfg.generator.structure()) {
        (Some(s), _) | (None, Some(s)) => s.clone(),
        (None, None) => return Err(Error::InvalidArgument("restricted needs a structure to train".into())),
    };
    let chains = scaled(cfg.chains, scale);
    let reference = reference_propagator(&source, cfg.tau)?;
    let full_basis = accessible_basis(AlgebraStructure::unital(&[(n, 1)])?, seeds, 0);
    let full_test = generate_dataset(
        &source,
        &full_basis,
        chains,
        cfg.steps,
        cfg.tau,
        seeds.test_data,
        &GenerationOptions::default(),
    )?;
    let full_reference = dataset_value(&reference, &full_test)?;
    let train_cfg = with_seed(&cfg.train, seeds);
    let rows: Vec<Result<RestrictedRow>> = cfg
        .n0_values
        .par_iter()
        .map(|&n0| {
            let acc = restricted_structure(n, n0)?;
            let basis = if n0 == 0 {
                full_basis.clone()
            } else {
                accessible_basis(acc.clone(), seeds, n0 as u64)
            };
            let options = GenerationOptions {
                complement: cfg.complement,
                ..Default::default()
            };
            let tr = generate_dataset(&source, &basis, chains, cfg.steps, cfg.tau, seeds.train_data, &options)?;
            let te = if n0 == 0 {
                full_test.clone()
            } else {
                generate_dataset(
                    &source,
                    &basis,
                    chains,
                    cfg.steps,
                    cfg.tau,
                    seeds.test_data ^ n0 as u64,
                    &options,
                )?
            };
            let report = train(&structure, &train_cfg, &tr, &te)?;
            let trained = propagator(
                &gksl_superoperator(&dfalgebra::generator::assemble_operators(
                    &report.best_params.to_model()?,
                )?),
                cfg.tau,
            )?;
            Ok(RestrictedRow {
                n0,
                accessible: acc,
                own_value: report.best_test_value,
                own_reference: dataset_value(&reference, &te)?,
                full_value: dataset_value(&trained, &full_test)?,
                full_reference,
                best_epoch: report.best_epoch,
                final_delta: report.final_delta,
            })
        })
        .collect();
    Ok(RestrictedResult {
        structure,
        complement: cfg.complement,
        rows: rows.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

pub fn waveguide_scan(cfg: &WaveguideConfig, scale: f64, seeds: &Seeds) -> Result<ScanResult> {
    let spec = ProblemSpec {
        generator: GeneratorSpec::Waveguide(cfg.model),
        accessible: None,
        chains: cfg.chains,
        test_chains: None,
        steps: cfg.steps,
        tau: cfg.tau,
        granularity: Granularity::Fine,
        complement: ComplementPolicy::Record,
    };
    let p = prepare_problem(&spec, scale, seeds)?;
    structure_scan(
        &cfg.candidates,
        &with_seed(&cfg.train, seeds),
        &p.train,
        &p.test,
        p.reference.as_ref(),
    )
}

fn write(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(path, contents)?;
    files.push(path.to_path_buf());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text, files)
}

fn write_tables(dir: &Path, stem: &str, table: &Table, files: &mut Vec<PathBuf>) -> Result<()> {
    write(
        &dir.join(format!("{stem}.txt")),
        &table.render(TableFormat::Text)?,
        files,
    )?;
    write(
        &dir.join(format!("{stem}.csv")),
        &table.render(TableFormat::Csv)?,
        files,
    )
}

/// Long-format per-evaluation history for plotting learning curves.
fn history_csv(reports: &[(&str, &TrainReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["label", "structure", "epoch", "train_value", "test_value"])
        .map_err(err)?;
    for (label, r) in reports {
        for h in &r.history {
            w.write_record([
                label.to_string(),
                r.structure.to_string(),
                h.epoch.to_string(),
                h.train_value.to_string(),
                h.test_value.to_string(),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Serialize)]
struct StructureList {
    n: usize,
    allow_n0: bool,
    ordered: Vec<String>,
    canonical: Vec<String>,
}

#[derive(Serialize)]
struct HierarchyEdge {
    sub: String,
    sup: String,
    witness: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct HierarchyDocument {
    nodes: Vec<String>,
    edges: Vec<HierarchyEdge>,
    order: Vec<String>,
}

pub fn run_experiment(exp: &Experiment, ctx: &RunContext) -> Result<Outcome> {
    exp.validate()?;
    std::fs::create_dir_all(&ctx.out_dir)?;
    let dir = ctx.out_dir.as_path();
    let seeds = &ctx.seeds;
    let mut files = Vec::new();
    let summary;
    let mut passed = true;
    match exp {
        Experiment::GenData(c) => {
            let p = prepare_problem(&c.problem, ctx.scale, seeds)?;
            let (a, b) = (dir.join("train.jsonl"), dir.join("test.jsonl"));
            save_dataset(&p.train, &a)?;
            save_dataset(&p.test, &b)?;
            files.extend([a, b]);
            let reference = p.reference.as_ref().map(|r| dataset_value(r, &p.test)).transpose()?;
            summary = serde_json::json!({
                "train_chains": p.train.len(),
                "test_chains": p.test.len(),
                "steps": c.problem.steps,
                "reference_value": reference,
            });
        }
        Experiment::Enumerate(c) => {
            let ordered = enumerate_structures(c.n, false, c.allow_n0)?;
            let canonical = enumerate_structures(c.n, true, c.allow_n0)?;
            let doc = StructureList {
                n: c.n,
                allow_n0: c.allow_n0,
                ordered: ordered.iter().map(ToString::to_string).collect(),
                canonical: canonical.iter().map(ToString::to_string).collect(),
            };
            write_json(&dir.join("structures.json"), &doc, &mut files)?;
            let mut text = String::new();
            for s in &canonical {
                text.push_str(&format!("{s}\n"));
            }
            write(&dir.join("structures.txt"), &text, &mut files)?;
            summary = serde_json::json!({ "ordered": ordered.len(), "canonical": canonical.len() });
        }
        Experiment::Hierarchy(c) => {
            let structures = match &c.structures {
                Some(l) => l.clone(),
                None => enumerate_structures(c.n, true, false)?,
            };
            let dag = hierarchy_dag(&structures)?;
            let name = |i: usize| dag.nodes()[i].to_string();
            let mut edges = Vec::new();
            for &(a, b) in dag.edges() {
                let w = is_embedded(&dag.nodes()[a], &dag.nodes()[b])?
                    .ok_or_else(|| Error::Format("edge without witness".into()))?;
                edges.push(HierarchyEdge {
                    sub: name(a),
                    sup: name(b),
                    witness: w.a,
                });
            }
            let doc = HierarchyDocument {
                nodes: dag.nodes().iter().map(ToString::to_string).collect(),
                order: dag.topological_order().into_iter().map(name).collect(),
                edges,
            };
            write_json(&dir.join("hierarchy.json"), &doc, &mut files)?;
            write(&dir.join("hierarchy.dot"), &dag.to_dot(), &mut files)?;
            summary = serde_json::json!({ "nodes": doc.nodes.len(), "edges": doc.edges.len() });
        }
        Experiment::Train(c) => {
            let p = load_problem(&c.data, ctx.scale, seeds)?;
            let report = train(&c.structure, &with_seed(&c.train, seeds), &p.train, &p.test)?;
            let reference_value = p.reference.as_ref().map(|r| dataset_value(r, &p.test)).transpose()?;
            let doc = ResultDocument::Train {
                report: report.clone(),
                reference_value,
            };
            write_json(&dir.join("train.json"), &doc, &mut files)?;
            write_tables(dir, "train", &doc.table()?, &mut files)?;
            write(
                &dir.join("history.csv"),
                &history_csv(&[("train", &report)])?,
                &mut files,
            )?;
            summary = serde_json::json!({
                "structure": report.structure.to_string(),
                "best_test_value": report.best_test_value,
                "best_epoch": report.best_epoch,
                "reference_value": reference_value,
            });
        }
        Experiment::Scan(c) => {
            let p = load_problem(&c.data, ctx.scale, seeds)?;
            let candidates = c.candidates.resolve(p.train.n)?;
            let result = structure_scan(
                &candidates,
                &with_seed(&c.train, seeds),
                &p.train,
                &p.test,
                p.reference.as_ref(),
            )?;
            let dag = hierarchy_dag(&candidates)?;
            let consistency = hierarchy_consistency(&result, &dag, c.margin)?;
            summary = scan_summary(&result, Some(&consistency));
            let history: Vec<(&str, &TrainReport)> = result
                .rows
                .iter()
                .filter_map(|r| r.report.as_ref().map(|rep| ("scan", rep)))
                .collect();
            write(&dir.join("history.csv"), &history_csv(&history)?, &mut files)?;
            let doc = ResultDocument::Scan {
                result,
                consistency: Some(consistency),
            };
            write_json(&dir.join("scan.json"), &doc, &mut files)?;
            write_tables(dir, "scan", &doc.table()?, &mut files)?;
        }
        Experiment::Tradeoff(c) => {
            let result = tradeoff(c, ctx.scale, seeds)?;
            let history: Vec<(String, &TrainReport)> = result
                .cells
                .iter()
                .map(|cell| (format!("N={} S={}", cell.chain_length, cell.chains), &cell.report))
                .collect();
            let history: Vec<(&str, &TrainReport)> = history.iter().map(|(l, r)| (l.as_str(), *r)).collect();
            write(&dir.join("history.csv"), &history_csv(&history)?, &mut files)?;
            summary = serde_json::json!({
                "product": result.product,
                "spread": result.spread,
                "reference_value": result.reference_value,
                "values": result.cells.iter().map(|c| serde_json::json!({
                    "N": c.chain_length, "S": c.chains, "value": c.report.best_test_value
                })).collect::<Vec<_>>(),
            });
            let doc = ResultDocument::Tradeoff(result);
            write_json(&dir.join("tradeoff.json"), &doc, &mut files)?;
            write_tables(dir, "tradeoff", &doc.table()?, &mut files)?;
        }
        Experiment::Restricted(c) => {
            let result = restricted(c, ctx.scale, seeds)?;
            summary = serde_json::to_value(&result.rows)?;
            let doc = ResultDocument::Restricted(result);
            write_json(&dir.join("restricted.json"), &doc, &mut files)?;
            write_tables(dir, "restricted", &doc.table()?, &mut files)?;
        }
        Experiment::Waveguide(c) => {
            let result = waveguide_scan(c, ctx.scale, seeds)?;
            summary = scan_summary(&result, None);
            let history: Vec<(&str, &TrainReport)> = result
                .rows
                .iter()
                .filter_map(|r| r.report.as_ref().map(|rep| ("waveguide", rep)))
                .collect();
            write(&dir.join("history.csv"), &history_csv(&history)?, &mut files)?;
            let doc = ResultDocument::Scan {
                result,
                consistency: None,
            };
            write_json(&dir.join("waveguide.json"), &doc, &mut files)?;
            write_tables(dir, "waveguide", &doc.table()?, &mut files)?;
        }
        Experiment::Verify(c) => {
            let report = run_verify(c, seeds.run)?;
            passed = report.passed;
            summary = serde_json::json!({
                "passed": report.passed,
                "checks": report.checks.iter().map(|c| serde_json::json!({"name": c.name, "passed": c.passed})).collect::<Vec<_>>(),
            });
            write_json(&dir.join("verify.json"), &report, &mut files)?;
        }
    }
    Ok(Outcome { files, summary, passed })
}

fn scan_summary(result: &ScanResult, consistency: Option<&ConsistencyReport>) -> serde_json::Value {
    serde_json::json!({
        "ranking": result.rows.iter().map(|r| serde_json::json!({
            "structure": r.structure.to_string(),
            "value": r.value(),
            "error": r.error,
        })).collect::<Vec<_>>(),
        "reference_value": result.reference_value,
        "violations": consistency.map(|c| c.violations.len()),
        "frontier": consistency.and_then(|c| c.frontier.as_ref().map(ToString::to_string)),
    })
}
