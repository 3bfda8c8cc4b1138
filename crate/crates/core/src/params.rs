//! Flat real parameter vectors for structured GKSL models.
//!
//! Layout `v1`, in order:
//! - `G`: the `n` diagonal entries, then `(Re, Im)` of each `G_ij` with
//!   `i < j` in row-major order (`n²` reals);
//! - `β`: for each Lindblad index `j`, each block `k`, each entry of the
//!   `m_k × m_k` factor in row-major order, `(Re, Im)`;
//! - `κ`: the `n_k` diagonal entries of each block;
//! - `μ`: the `m_k` diagonal entries of each block.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::AlgebraStructure;
use crate::error::{Error, Result};
use crate::generator::GkslModel;
use crate::linalg::{CMatrix, C64};

pub const LAYOUT_VERSION: &str = "v1";

/// Offsets of each parameter group inside a flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    mults: Vec<usize>,
    dims: Vec<usize>,
    lindblad_count: usize,
    beta_start: usize,
    beta_stride: usize,
    block_beta_offsets: Vec<usize>,
    kappa_offsets: Vec<usize>,
    mu_offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    pub fn new(structure: &AlgebraStructure, lindblad_count: usize) -> Self {
        let n = structure.n();
        let dims: Vec<usize> = structure.blocks().iter().map(|b| b.dim).collect();
        let mults: Vec<usize> = structure.blocks().iter().map(|b| b.mult).collect();
        let beta_start = n * n;
        let mut block_beta_offsets = Vec::with_capacity(mults.len());
        let mut acc = 0;
        for m in &mults {
            block_beta_offsets.push(acc);
            acc += 2 * m * m;
        }
        let beta_stride = acc;
        let mut cursor = beta_start + lindblad_count * beta_stride;
        let mut kappa_offsets = Vec::new();
        for d in &dims {
            kappa_offsets.push(cursor);
            cursor += d;
        }
        let mut mu_offsets = Vec::new();
        for m in &mults {
            mu_offsets.push(cursor);
            cursor += m;
        }
        Self {
            n,
            mults,
            dims,
            lindblad_count,
            beta_start,
            beta_stride,
            block_beta_offsets,
            kappa_offsets,
            mu_offsets,
            len: cursor,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn generator_range(&self) -> Range<usize> {
        0..self.n * self.n
    }

    /// Index of `Re G_ij` (or the real diagonal entry) and, for `i < j`, of `Im G_ij`.
    pub fn generator_index(&self, i: usize, j: usize) -> (usize, Option<usize>) {
        let n = self.n;
        if i == j {
            return (i, None);
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // Pairs preceding row i: Σ_{r<i} (n − 1 − r).
        let before = i * (2 * n - i - 1) / 2;
        let pair = before + (j - i - 1);
        (n + 2 * pair, Some(n + 2 * pair + 1))
    }

    /// Index of `Re β_{jk}[r, c]`; the imaginary part follows it.
    pub fn beta_index(&self, j: usize, k: usize, r: usize, c: usize) -> usize {
        let m = self.mults[k];
        self.beta_start + j * self.beta_stride + self.block_beta_offsets[k] + 2 * (r * m + c)
    }

    pub fn kappa_range(&self, k: usize) -> Range<usize> {
        self.kappa_offsets[k]..self.kappa_offsets[k] + self.dims[k]
    }

    pub fn mu_range(&self, k: usize) -> Range<usize> {
        self.mu_offsets[k]..self.mu_offsets[k] + self.mults[k]
    }

    pub fn lindblad_count(&self) -> usize {
        self.lindblad_count
    }
}

/// `λ_ν` as a flat real vector, tagged with its layout version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub layout: String,
    pub structure: AlgebraStructure,
    pub lindblad_count: usize,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(structure: AlgebraStructure, lindblad_count: usize, values: Vec<f64>) -> Result<Self> {
        structure.require_unital()?;
        let expected = Layout::new(&structure, lindblad_count).len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: format!("parameter vector for {structure}"),
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            layout: LAYOUT_VERSION.into(),
            structure,
            lindblad_count,
            values,
        })
    }

    pub fn zeros(structure: AlgebraStructure, lindblad_count: usize) -> Result<Self> {
        let len = Layout::new(&structure, lindblad_count).len();
        Self::new(structure, lindblad_count, vec![0.0; len])
    }

    pub fn layout_info(&self) -> Layout {
        Layout::new(&self.structure, self.lindblad_count)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_version(&self) -> Result<()> {
        if self.layout != LAYOUT_VERSION {
            return Err(Error::Format(format!("unsupported parameter layout {:?}", self.layout)));
        }
        Ok(())
    }

    pub fn from_model(model: &GkslModel) -> Self {
        let layout = Layout::new(model.structure(), model.lindblad_count());
        let mut values = vec![0.0; layout.len()];
        let g = model.unitary_generator();
        let n = model.n();
        for i in 0..n {
            values[i] = g[(i, i)].re;
            for j in i + 1..n {
                let (re, im) = layout.generator_index(i, j);
                values[re] = g[(i, j)].re;
                values[im.expect("off-diagonal")] = g[(i, j)].im;
            }
        }
        for (j, row) in model.betas().iter().enumerate() {
            for (k, beta) in row.iter().enumerate() {
                for r in 0..beta.nrows() {
                    for c in 0..beta.ncols() {
                        let idx = layout.beta_index(j, k, r, c);
                        values[idx] = beta[(r, c)].re;
                        values[idx + 1] = beta[(r, c)].im;
                    }
                }
            }
        }
        for k in 0..model.structure().blocks().len() {
            values[layout.kappa_range(k)].copy_from_slice(&model.kappas()[k]);
            values[layout.mu_range(k)].copy_from_slice(&model.mus()[k]);
        }
        Self {
            layout: LAYOUT_VERSION.into(),
            structure: model.structure().clone(),
            lindblad_count: model.lindblad_count(),
            values,
        }
    }

    pub fn to_model(&self) -> Result<GkslModel> {
        self.check_version()?;
        let layout = self.layout_info();
        if self.values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: format!("parameter vector for {}", self.structure),
                expected: layout.len(),
                found: self.values.len(),
            });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter vector".into(),
                index: Some(i),
            });
        }
        let v = &self.values;
        let n = self.structure.n();
        let mut g = CMatrix::zeros(n, n);
        for i in 0..n {
            g[(i, i)] = C64::new(v[i], 0.0);
            for j in i + 1..n {
                let (re, im) = layout.generator_index(i, j);
                let z = C64::new(v[re], v[im.expect("off-diagonal")]);
                g[(i, j)] = z;
                g[(j, i)] = z.conj();
            }
        }
        let blocks = self.structure.blocks();
        let betas = (0..self.lindblad_count)
            .map(|j| {
                blocks
                    .iter()
                    .enumerate()
                    .map(|(k, b)| {
                        CMatrix::from_fn(b.mult, b.mult, |r, c| {
                            let idx = layout.beta_index(j, k, r, c);
                            C64::new(v[idx], v[idx + 1])
                        })
                    })
                    .collect()
            })
            .collect();
        let kappas = (0..blocks.len()).map(|k| v[layout.kappa_range(k)].to_vec()).collect();
        let mus = (0..blocks.len()).map(|k| v[layout.mu_range(k)].to_vec()).collect();
        GkslModel::new(self.structure.clone(), g, betas, kappas, mus)
    }
}

/// I.i.d. Gaussian parameters with standard deviation `init_scale`.
///
/// Drawing each real coordinate of the flat layout independently gives a
/// Hermitian `G` directly.
pub fn init_params<R: Rng + ?Sized>(
    structure: &AlgebraStructure,
    lindblad_count: usize,
    rng: &mut R,
    init_scale: f64,
) -> Result<ParameterVector> {
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init_scale must be a non-negative finite number, got {init_scale}"
        )));
    }
    let len = Layout::new(structure, lindblad_count).len();
    let values = (0..len)
        .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParameterVector::new(structure.clone(), lindblad_count, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{assemble_operators, model_propagator};
    use crate::linalg;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(s: &str) -> AlgebraStructure {
        s.parse().unwrap()
    }

    #[test]
    fn parameter_counts() {
        // ({1,2},{1,1}), J = 4: G 9, β 4·(8 + 2), κ 2, μ 3.
        let l = Layout::new(&st("({1,2},{1,1})"), 4);
        assert_eq!(l.len(), 9 + 40 + 2 + 3);
    }

    #[test]
    fn generator_indices_cover_the_block_once() {
        let n = 5;
        let l = Layout::new(&st("({5,1})"), 1);
        let mut seen = vec![false; n * n];
        for i in 0..n {
            for j in i..n {
                let (re, im) = l.generator_index(i, j);
                assert!(!seen[re]);
                seen[re] = true;
                if let Some(im) = im {
                    assert_eq!(im, re + 1);
                    assert!(!seen[im]);
                    seen[im] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_scale_gives_identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(&st("({1,3})"), 9, &mut rng, 0.0).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        let m = p.to_model().unwrap();
        let ops = assemble_operators(&m).unwrap();
        assert_eq!(ops.hamiltonian(), &CMatrix::zeros(3, 3));
        let prop = model_propagator(&m, 0.5).unwrap();
        assert!((prop.matrix - linalg::identity(9)).norm() < 1e-15);
    }

    #[test]
    fn seeded_draws_repeat() {
        let s = st("({2,1},{1,2})");
        let a = init_params(&s, 4, &mut ChaCha8Rng::seed_from_u64(9), 0.3).unwrap();
        let b = init_params(&s, 4, &mut ChaCha8Rng::seed_from_u64(9), 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_standard_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scale = 0.4;
        let mut all = Vec::new();
        while all.len() < 10_000 {
            all.extend(init_params(&st("({1,4})"), 16, &mut rng, scale).unwrap().values);
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        assert!((var.sqrt() / scale - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_wrong_length_and_version() {
        assert!(ParameterVector::new(st("({2,1})"), 1, vec![0.0; 3]).is_err());
        let mut p = ParameterVector::zeros(st("({2,1})"), 1).unwrap();
        p.layout = "v0".into();
        assert!(p.to_model().is_err());
    }

    #[test]
    fn non_finite_parameter_reports_index() {
        let mut p = ParameterVector::zeros(st("({2,1})"), 1).unwrap();
        p.values[3] = f64::NAN;
        match p.to_model() {
            Err(Error::NonFinite { index: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_through_model(seed in any::<u64>(), which in 0usize..5) {
            let s = ["({1,4})", "({2,2})", "({2,1},{1,2})", "({1,2},{1,1},{1,1})", "({3,1})"][which];
            let s = st(s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = s.default_lindblad_count();
            let p = init_params(&s, j, &mut rng, 1.0).unwrap();
            let back = ParameterVector::from_model(&p.to_model().unwrap());
            prop_assert_eq!(back, p.clone());
            let text = serde_json::to_string(&p).unwrap();
            let parsed: ParameterVector = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(parsed, p);
        }
    }
}
