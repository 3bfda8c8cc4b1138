//! Synthetic measurement datasets and their JSON-lines file format.
//!
//! File layout: one header line, then one line per instrument, then one line
//! per chain. Every line carries a `"kind"` tag.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraBasis, AlgebraStructure};
use crate::dynamics::{
    intersection_dimension, random_instrument, sample_chain, ComplementPolicy, Granularity, InitialState, Instrument,
    MeasurementChain,
};
use crate::error::{Error, Result};
use crate::generator::{assemble_operators, gksl_superoperator, propagator, GkslModel, OperatorPair, Propagator};
use crate::linalg::{CMatrix, MatrixRecord};
use crate::params::ParameterVector;

pub const FORMAT_TAG: &str = "dfalgebra-dataset/1";

/// Provenance of synthetic data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub label: String,
    pub structure: Option<AlgebraStructure>,
    pub seed: u64,
    pub parameters: Option<ParameterVector>,
    pub operators: Option<OperatorPair>,
    #[serde(default)]
    pub settings: BTreeMap<String, f64>,
}

impl GeneratorMetadata {
    /// Rebuilds the generating propagator, if the metadata pins it down.
    pub fn propagator(&self, tau: f64) -> Result<Option<Propagator>> {
        let ops = match (&self.parameters, &self.operators) {
            (Some(p), _) => assemble_operators(&p.to_model()?)?,
            (None, Some(ops)) => ops.clone(),
            (None, None) => return Ok(None),
        };
        propagator(&gksl_superoperator(&ops), tau).map(Some)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub n: usize,
    pub tau: f64,
    pub accessible: AlgebraBasis,
    pub complement: ComplementPolicy,
    pub instruments: Vec<Instrument>,
    pub chains: Vec<MeasurementChain>,
    pub generator_metadata: Option<GeneratorMetadata>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.tau.to_bits() == other.tau.to_bits()
            && self.accessible.structure() == other.accessible.structure()
            && self.accessible.unitary() == other.accessible.unitary()
            && self.complement == other.complement
            && self.instruments == other.instruments
            && self.chains == other.chains
            && self.generator_metadata == other.generator_metadata
    }
}

impl Dataset {
    pub fn accessible_structure(&self) -> &AlgebraStructure {
        self.accessible.structure()
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.accessible.n() != self.n {
            return Err(Error::DimensionMismatch {
                what: "accessible algebra".into(),
                expected: self.n,
                found: self.accessible.n(),
            });
        }
        if let Some(inst) = self.instruments.iter().find(|i| i.n() != self.n) {
            return Err(Error::DimensionMismatch {
                what: "instrument".into(),
                expected: self.n,
                found: inst.n(),
            });
        }
        for chain in &self.chains {
            chain.validate(&self.instruments)?;
        }
        Ok(())
    }

    /// Mean number of steps per chain.
    pub fn mean_chain_length(&self) -> f64 {
        if self.chains.is_empty() {
            return 0.0;
        }
        self.chains.iter().map(|c| c.len()).sum::<usize>() as f64 / self.chains.len() as f64
    }
}

/// The dynamics that produce a dataset.
#[derive(Clone, Debug)]
pub enum ModelSource {
    Structured(GkslModel),
    Operators { label: String, ops: OperatorPair },
}

impl ModelSource {
    pub fn operators(&self) -> Result<OperatorPair> {
        match self {
            Self::Structured(m) => assemble_operators(m),
            Self::Operators { ops, .. } => Ok(ops.clone()),
        }
    }

    fn metadata(&self, seed: u64) -> GeneratorMetadata {
        match self {
            Self::Structured(m) => GeneratorMetadata {
                label: format!("structured {}", m.structure()),
                structure: Some(m.structure().clone()),
                seed,
                parameters: Some(ParameterVector::from_model(m)),
                operators: None,
                settings: BTreeMap::new(),
            },
            Self::Operators { label, ops } => GeneratorMetadata {
                label: label.clone(),
                structure: None,
                seed,
                parameters: None,
                operators: Some(ops.clone()),
                settings: BTreeMap::new(),
            },
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GenerationOptions {
    pub granularity: Granularity,
    pub complement: ComplementPolicy,
    pub initial_state: InitialState,
}

/// Per-chain random stream: every chain draws its instruments and outcomes
/// from `(seed, chain index)` alone, so parallel generation is reproducible.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// `S` chains of `N` steps; chain `c` uses instruments `cN … cN + N − 1`.
pub fn generate_dataset(
    source: &ModelSource,
    accessible: &AlgebraBasis,
    chains: usize,
    steps: usize,
    tau: f64,
    seed: u64,
    options: &GenerationOptions,
) -> Result<Dataset> {
    if chains == 0 || steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "chain count and chain length must be positive (got S={chains}, N={steps})"
        )));
    }
    let ops = source.operators()?;
    let n = ops.n();
    if accessible.n() != n {
        return Err(Error::DimensionMismatch {
            what: "accessible algebra".into(),
            expected: n,
            found: accessible.n(),
        });
    }
    if let ModelSource::Structured(m) = source {
        let dim = intersection_dimension(&m.basis()?, accessible);
        // Full access contains every algebra; only proper subalgebras are worth a warning.
        let full = accessible.structure().blocks() == [crate::algebra::Block { dim: n, mult: 1 }];
        if dim > 1 && !full {
            log::warn!(
                "decoherence-free algebra and accessible algebra share {dim} dimensions; \
                 they are not in generic position"
            );
        } else if dim > 1 {
            log::debug!("decoherence-free algebra has dimension {dim} inside the full accessible algebra");
        }
    }
    let p = propagator(&gksl_superoperator(&ops), tau)?;
    let sigma = options.initial_state.density(n)?;
    let results: Vec<Result<(Vec<Instrument>, MeasurementChain)>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(seed, c);
            let table: Vec<Instrument> = (0..steps)
                .map(|_| {
                    let inst = random_instrument(accessible, &mut rng, options.granularity);
                    match options.complement {
                        ComplementPolicy::Record => inst,
                        ComplementPolicy::Postselect => inst.without_complement(),
                    }
                })
                .collect();
            let local: Vec<usize> = (0..steps).collect();
            let mut chain = sample_chain(&p, &table, &local, &sigma, options.initial_state.clone(), &mut rng)?;
            chain.instrument_ids = (c * steps..(c + 1) * steps).collect();
            Ok((table, chain))
        })
        .collect();
    let mut instruments = Vec::with_capacity(chains * steps);
    let mut out_chains = Vec::with_capacity(chains);
    for r in results {
        let (table, chain) = r?;
        instruments.extend(table);
        out_chains.push(chain);
    }
    Ok(Dataset {
        n,
        tau,
        accessible: accessible.clone(),
        complement: options.complement,
        instruments,
        chains: out_chains,
        generator_metadata: Some(source.metadata(seed)),
    })
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    format: String,
    n: usize,
    tau: f64,
    accessible_structure: AlgebraStructure,
    accessible_unitary: MatrixRecord,
    complement: ComplementPolicy,
    instrument_count: usize,
    chain_count: usize,
    generator_metadata: Option<GeneratorMetadata>,
}

#[derive(Serialize, Deserialize)]
struct InstrumentRecord {
    id: usize,
    #[serde(flatten)]
    instrument: Instrument,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(Box<HeaderRecord>),
    Instrument(InstrumentRecord),
    Chain(MeasurementChain),
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Line::Header(Box::new(HeaderRecord {
        format: FORMAT_TAG.into(),
        n: ds.n,
        tau: ds.tau,
        accessible_structure: ds.accessible.structure().clone(),
        accessible_unitary: ds.accessible.unitary().into(),
        complement: ds.complement,
        instrument_count: ds.instruments.len(),
        chain_count: ds.chains.len(),
        generator_metadata: ds.generator_metadata.clone(),
    }));
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (id, inst) in ds.instruments.iter().enumerate() {
        serde_json::to_writer(
            &mut w,
            &Line::Instrument(InstrumentRecord {
                id,
                instrument: inst.clone(),
            }),
        )?;
        w.write_all(b"\n")?;
    }
    for chain in &ds.chains {
        serde_json::to_writer(&mut w, &Line::Chain(chain.clone()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut header: Option<HeaderRecord> = None;
    let mut instruments = Vec::new();
    let mut chains = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        match parsed {
            Line::Header(h) if header.is_none() && lineno == 0 => header = Some(*h),
            Line::Header(_) => return Err(Error::Format("header must be the first and only one".into())),
            Line::Instrument(rec) => {
                if rec.id != instruments.len() {
                    return Err(Error::Format(format!(
                        "instrument id {} out of sequence (expected {})",
                        rec.id,
                        instruments.len()
                    )));
                }
                instruments.push(rec.instrument);
            }
            Line::Chain(c) => chains.push(c),
        }
    }
    let h = header.ok_or_else(|| Error::Format("missing header line".into()))?;
    if h.format != FORMAT_TAG {
        return Err(Error::Format(format!("unsupported dataset format {:?}", h.format)));
    }
    if instruments.len() != h.instrument_count || chains.len() != h.chain_count {
        return Err(Error::Format(format!(
            "header announces {} instruments and {} chains, file has {} and {}",
            h.instrument_count,
            h.chain_count,
            instruments.len(),
            chains.len()
        )));
    }
    let unitary = CMatrix::try_from(&h.accessible_unitary)?;
    let ds = Dataset {
        n: h.n,
        tau: h.tau,
        accessible: AlgebraBasis::new(h.accessible_structure, unitary)?,
        complement: h.complement,
        instruments,
        chains,
        generator_metadata: h.generator_metadata,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::physmodels::haar_structured_model;

    fn st(s: &str) -> AlgebraStructure {
        s.parse().unwrap()
    }

    fn small_source(seed: u64) -> ModelSource {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = st("({1,2},{1,1})");
        ModelSource::Structured(haar_structured_model(&s, 4, 0.7, &mut rng).unwrap())
    }

    #[test]
    fn shape_and_metadata() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let acc = AlgebraBasis::haar(st("({3,1})"), &mut rng);
        let ds = generate_dataset(&small_source(2), &acc, 5, 7, 0.2, 42, &GenerationOptions::default()).unwrap();
        assert_eq!(ds.chains.len(), 5);
        assert_eq!(ds.instruments.len(), 35);
        assert!(ds.chains.iter().all(|c| c.len() == 7));
        assert_eq!(ds.chains[3].instrument_ids[0], 21);
        let meta = ds.generator_metadata.as_ref().unwrap();
        assert_eq!(meta.seed, 42);
        assert_eq!(meta.structure, Some(st("({1,2},{1,1})")));
        ds.validate().unwrap();
    }

    #[test]
    fn single_step_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let acc = AlgebraBasis::haar(st("({3,1})"), &mut rng);
        let ds = generate_dataset(&small_source(4), &acc, 1, 1, 0.2, 1, &GenerationOptions::default()).unwrap();
        assert_eq!(ds.chains.len(), 1);
        assert_eq!(ds.chains[0].len(), 1);
    }

    #[test]
    fn rejects_empty_requests() {
        let acc = AlgebraBasis::identity(st("({3,1})"));
        let o = GenerationOptions::default();
        assert!(generate_dataset(&small_source(5), &acc, 0, 3, 0.2, 1, &o).is_err());
        assert!(generate_dataset(&small_source(5), &acc, 3, 0, 0.2, 1, &o).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let acc = AlgebraBasis::identity(st("({3,1})"));
        let o = GenerationOptions::default();
        let a = generate_dataset(&small_source(6), &acc, 8, 5, 0.2, 77, &o).unwrap();
        let b = generate_dataset(&small_source(6), &acc, 8, 5, 0.2, 77, &o).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small_source(6), &acc, 8, 5, 0.2, 78, &o).unwrap();
        assert_ne!(a.chains, c.chains);
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let acc = AlgebraBasis::haar(st("(n0=1,{2,1})"), &mut rng);
        let opts = GenerationOptions {
            granularity: Granularity::Coarse,
            ..Default::default()
        };
        let ds = generate_dataset(&small_source(8), &acc, 4, 6, 0.35, 9, &opts).unwrap();
        assert!(ds.instruments.iter().all(|i| i.includes_complement()));
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("\"kind\":\"header\""));
    }

    #[test]
    fn postselected_instruments_drop_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let acc = AlgebraBasis::haar(st("(n0=1,{2,1})"), &mut rng);
        let opts = GenerationOptions {
            complement: ComplementPolicy::Postselect,
            ..Default::default()
        };
        let ds = generate_dataset(&small_source(11), &acc, 3, 5, 0.2, 1, &opts).unwrap();
        for inst in &ds.instruments {
            assert!(!inst.includes_complement());
            assert_eq!(inst.outcome_count(), 2);
            let sum = inst.sum();
            assert!((&sum * &sum - &sum).norm() < 1e-10);
            assert!((linalg::trace(&sum).re - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn metadata_rebuilds_the_generator() {
        let acc = AlgebraBasis::identity(st("({3,1})"));
        let src = small_source(12);
        let ds = generate_dataset(&src, &acc, 2, 2, 0.2, 1, &GenerationOptions::default()).unwrap();
        let p = ds.generator_metadata.unwrap().propagator(0.2).unwrap().unwrap();
        let ModelSource::Structured(m) = src else {
            unreachable!()
        };
        let direct = crate::generator::model_propagator(&m, 0.2).unwrap();
        assert!((p.matrix - direct.matrix).norm() < 1e-14);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_dataset("".as_bytes()).is_err());
        assert!(read_dataset("{\"kind\":\"chain\"}\n".as_bytes()).is_err());
    }
}
