//! Structured GKSL generators, their superoperators and propagators.
//!
//! A model with decoherence-free algebra `ν` has, in canonical coordinates,
//! Lindblad operators `B_j = ⊕_k I_{n_k} ⊗ β_{jk}` and Hamiltonian
//! `D = ⊕_k (κ_k ⊗ I_{m_k} + I_{n_k} ⊗ μ_k)`; the physical operators are
//! `U B_j U†` and `U D U†` with `U = exp(iG)`.
//!
//! Superoperators act on column-stacked density matrices, so
//! `vec(A X B) = (Bᵀ ⊗ A) vec X`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraBasis, AlgebraStructure};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, MatrixRecord, C64, I, ONE};

#[derive(Clone, Debug, PartialEq)]
pub struct GkslModel {
    structure: AlgebraStructure,
    unitary_generator: CMatrix,
    betas: Vec<Vec<CMatrix>>,
    kappas: Vec<Vec<f64>>,
    mus: Vec<Vec<f64>>,
}

impl GkslModel {
    /// `betas[j][k]` is the `m_k × m_k` factor of Lindblad operator `j` on
    /// block `k`; `kappas[k]` and `mus[k]` are the diagonals of `κ_k`, `μ_k`.
    pub fn new(
        structure: AlgebraStructure,
        unitary_generator: CMatrix,
        betas: Vec<Vec<CMatrix>>,
        kappas: Vec<Vec<f64>>,
        mus: Vec<Vec<f64>>,
    ) -> Result<Self> {
        structure.require_unital()?;
        let n = structure.n();
        let blocks = structure.blocks();
        if unitary_generator.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                what: "unitary generator G".into(),
                expected: n,
                found: unitary_generator.nrows(),
            });
        }
        let defect = linalg::hermiticity_defect(&unitary_generator);
        if defect > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "unitary generator is not Hermitian (defect {defect:e})"
            )));
        }
        for (j, row) in betas.iter().enumerate() {
            if row.len() != blocks.len() {
                return Err(Error::DimensionMismatch {
                    what: format!("beta factors of Lindblad operator {j}"),
                    expected: blocks.len(),
                    found: row.len(),
                });
            }
            for (beta, b) in row.iter().zip(blocks) {
                if beta.shape() != (b.mult, b.mult) {
                    return Err(Error::DimensionMismatch {
                        what: format!("beta factor of Lindblad operator {j}"),
                        expected: b.mult,
                        found: beta.nrows().max(beta.ncols()),
                    });
                }
            }
        }
        let check_diag = |what: &str, values: &[Vec<f64>], size: &dyn Fn(usize) -> usize| {
            if values.len() != blocks.len() {
                return Err(Error::DimensionMismatch {
                    what: what.to_string(),
                    expected: blocks.len(),
                    found: values.len(),
                });
            }
            for (k, v) in values.iter().enumerate() {
                if v.len() != size(k) {
                    return Err(Error::DimensionMismatch {
                        what: format!("{what} of block {k}"),
                        expected: size(k),
                        found: v.len(),
                    });
                }
            }
            Ok(())
        };
        check_diag("kappa diagonals", &kappas, &|k| blocks[k].dim)?;
        check_diag("mu diagonals", &mus, &|k| blocks[k].mult)?;
        Ok(Self {
            structure,
            unitary_generator,
            betas,
            kappas,
            mus,
        })
    }

    /// All parameters zero: `U = I`, `H = 0`, `L_j = 0`.
    pub fn zeros(structure: AlgebraStructure, lindblad_count: usize) -> Result<Self> {
        structure.require_unital()?;
        let n = structure.n();
        let blocks = structure.blocks().to_vec();
        Self::new(
            structure,
            CMatrix::zeros(n, n),
            (0..lindblad_count)
                .map(|_| blocks.iter().map(|b| CMatrix::zeros(b.mult, b.mult)).collect())
                .collect(),
            blocks.iter().map(|b| vec![0.0; b.dim]).collect(),
            blocks.iter().map(|b| vec![0.0; b.mult]).collect(),
        )
    }

    pub fn structure(&self) -> &AlgebraStructure {
        &self.structure
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    pub fn unitary_generator(&self) -> &CMatrix {
        &self.unitary_generator
    }

    pub fn betas(&self) -> &[Vec<CMatrix>] {
        &self.betas
    }

    pub fn kappas(&self) -> &[Vec<f64>] {
        &self.kappas
    }

    pub fn mus(&self) -> &[Vec<f64>] {
        &self.mus
    }

    pub fn lindblad_count(&self) -> usize {
        self.betas.len()
    }

    pub fn unitary(&self) -> Result<CMatrix> {
        linalg::expm(&(&self.unitary_generator * I))
    }

    pub fn basis(&self) -> Result<AlgebraBasis> {
        AlgebraBasis::new(self.structure.clone(), self.unitary()?)
    }

    /// `B_j = ⊕_k I_{n_k} ⊗ β_{jk}` in canonical coordinates.
    pub fn canonical_lindblad(&self, j: usize) -> CMatrix {
        let parts: Vec<CMatrix> = self
            .structure
            .blocks()
            .iter()
            .zip(&self.betas[j])
            .map(|(b, beta)| linalg::kron(&linalg::identity(b.dim), beta))
            .collect();
        linalg::block_diagonal(&parts)
    }

    /// `D = ⊕_k (κ_k ⊗ I_{m_k} + I_{n_k} ⊗ μ_k)`, a real diagonal matrix.
    pub fn canonical_hamiltonian(&self) -> CMatrix {
        self.canonical_diagonal(true)
    }

    /// `⊕_k κ_k ⊗ I_{m_k}`.
    pub fn canonical_effective_hamiltonian(&self) -> CMatrix {
        self.canonical_diagonal(false)
    }

    fn canonical_diagonal(&self, with_mu: bool) -> CMatrix {
        let mut diag = Vec::with_capacity(self.n());
        for (k, b) in self.structure.blocks().iter().enumerate() {
            for a in 0..b.dim {
                for c in 0..b.mult {
                    let mu = if with_mu { self.mus[k][c] } else { 0.0 };
                    diag.push(C64::new(self.kappas[k][a] + mu, 0.0));
                }
            }
        }
        CMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
    }
}

#[derive(Serialize, Deserialize)]
struct GkslModelRecord {
    structure: AlgebraStructure,
    unitary_generator: MatrixRecord,
    betas: Vec<Vec<MatrixRecord>>,
    kappas: Vec<Vec<f64>>,
    mus: Vec<Vec<f64>>,
}

impl Serialize for GkslModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GkslModelRecord {
            structure: self.structure.clone(),
            unitary_generator: (&self.unitary_generator).into(),
            betas: self
                .betas
                .iter()
                .map(|row| row.iter().map(MatrixRecord::from).collect())
                .collect(),
            kappas: self.kappas.clone(),
            mus: self.mus.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GkslModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = GkslModelRecord::deserialize(d)?;
        let g = CMatrix::try_from(&r.unitary_generator).map_err(D::Error::custom)?;
        let betas = r
            .betas
            .iter()
            .map(|row| row.iter().map(CMatrix::try_from).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        GkslModel::new(r.structure, g, betas, r.kappas, r.mus).map_err(D::Error::custom)
    }
}

/// Hamiltonian and Lindblad operators of a GKSL generator.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorPair {
    hamiltonian: CMatrix,
    lindblads: Vec<CMatrix>,
}

impl OperatorPair {
    pub fn new(hamiltonian: CMatrix, lindblads: Vec<CMatrix>) -> Result<Self> {
        let n = hamiltonian.nrows();
        if hamiltonian.ncols() != n {
            return Err(Error::InvalidArgument("Hamiltonian must be square".into()));
        }
        let defect = linalg::hermiticity_defect(&hamiltonian);
        if defect > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "Hamiltonian is not Hermitian (defect {defect:e})"
            )));
        }
        if let Some(l) = lindblads.iter().find(|l| l.shape() != (n, n)) {
            return Err(Error::DimensionMismatch {
                what: "Lindblad operator".into(),
                expected: n,
                found: l.nrows().max(l.ncols()),
            });
        }
        Ok(Self {
            hamiltonian: linalg::hermitian_part(&hamiltonian),
            lindblads,
        })
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn lindblads(&self) -> &[CMatrix] {
        &self.lindblads
    }

    pub fn n(&self) -> usize {
        self.hamiltonian.nrows()
    }
}

#[derive(Serialize, Deserialize)]
struct OperatorPairRecord {
    hamiltonian: MatrixRecord,
    lindblads: Vec<MatrixRecord>,
}

impl Serialize for OperatorPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OperatorPairRecord {
            hamiltonian: (&self.hamiltonian).into(),
            lindblads: self.lindblads.iter().map(MatrixRecord::from).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OperatorPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = OperatorPairRecord::deserialize(d)?;
        let h = CMatrix::try_from(&r.hamiltonian).map_err(D::Error::custom)?;
        let ls = r
            .lindblads
            .iter()
            .map(CMatrix::try_from)
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        OperatorPair::new(h, ls).map_err(D::Error::custom)
    }
}

pub fn assemble_operators(model: &GkslModel) -> Result<OperatorPair> {
    let u = model.unitary()?;
    let lindblads = (0..model.lindblad_count())
        .map(|j| linalg::conjugate_by(&u, &model.canonical_lindblad(j)))
        .collect();
    let h = linalg::hermitian_part(&linalg::conjugate_by(&u, &model.canonical_hamiltonian()));
    OperatorPair::new(h, lindblads)
}

/// `H̃ = U (⊕_k κ_k ⊗ I_{m_k}) U†`.
pub fn effective_hamiltonian(model: &GkslModel) -> Result<CMatrix> {
    let u = model.unitary()?;
    Ok(linalg::hermitian_part(&linalg::conjugate_by(
        &u,
        &model.canonical_effective_hamiltonian(),
    )))
}

/// Matrix of `ρ ↦ −i[H, ρ] + Σ_j (L_j ρ L_j† − ½{L_j†L_j, ρ})` on `vec ρ`.
pub fn gksl_superoperator(ops: &OperatorPair) -> CMatrix {
    let n = ops.n();
    let eye = linalg::identity(n);
    let mut k = CMatrix::zeros(n, n);
    for l in ops.lindblads() {
        k += l.adjoint() * l;
    }
    // A = −iH − K/2 so that the non-jump part is ρ ↦ Aρ + ρA†.
    let a = ops.hamiltonian() * C64::new(0.0, -1.0) - k * C64::new(0.5, 0.0);
    let mut out = linalg::kron(&eye, &a) + linalg::kron(&a.map(|z| z.conj()), &eye);
    for l in ops.lindblads() {
        out += linalg::kron(&l.map(|z| z.conj()), l);
    }
    out
}

/// Semigroup element `Φ_τ = exp(τ𝓛)` together with its Hilbert–Schmidt adjoint.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub tau: f64,
    pub matrix: CMatrix,
    pub adjoint_matrix: CMatrix,
    n: usize,
}

impl Propagator {
    /// Wraps an explicit `n² × n²` channel matrix.
    pub fn from_matrix(tau: f64, matrix: CMatrix) -> Result<Self> {
        let dim = matrix.nrows();
        let n = (dim as f64).sqrt().round() as usize;
        if n * n != dim || matrix.ncols() != dim {
            return Err(Error::InvalidArgument(format!(
                "superoperator of shape {:?} is not n²×n²",
                matrix.shape()
            )));
        }
        if !linalg::all_finite(&matrix) {
            return Err(Error::NonFinite {
                what: "propagator".into(),
                index: None,
            });
        }
        let adjoint_matrix = matrix.adjoint();
        Ok(Self {
            tau,
            matrix,
            adjoint_matrix,
            n,
        })
    }

    pub fn identity(n: usize, tau: f64) -> Self {
        Self::from_matrix(tau, linalg::identity(n * n)).expect("identity is a valid channel")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Schrödinger picture `Φ_τ(ρ)`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        linalg::unvectorize(&(&self.matrix * linalg::vectorize(rho)), self.n)
    }

    /// Heisenberg picture `Φ*_τ(X)`.
    pub fn apply_adjoint(&self, x: &CMatrix) -> CMatrix {
        linalg::unvectorize(&(&self.adjoint_matrix * linalg::vectorize(x)), self.n)
    }
}

pub fn propagator(superop: &CMatrix, tau: f64) -> Result<Propagator> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    if !linalg::all_finite(superop) {
        return Err(Error::NonFinite {
            what: "GKSL superoperator".into(),
            index: None,
        });
    }
    Propagator::from_matrix(tau, linalg::expm(&(superop * C64::new(tau, 0.0)))?)
}

/// Convenience: `propagator(gksl_superoperator(assemble_operators(model)), tau)`.
pub fn model_propagator(model: &GkslModel, tau: f64) -> Result<Propagator> {
    propagator(&gksl_superoperator(&assemble_operators(model)?), tau)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CptpReport {
    pub max_trace_deviation: f64,
    pub min_choi_eigenvalue: f64,
    pub passed: bool,
}

/// Trace preservation over all matrix units and positivity of the Choi matrix.
pub fn verify_cptp(p: &Propagator, tol: f64) -> CptpReport {
    let n = p.n();
    let m = &p.matrix;
    let mut max_trace_deviation: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let col = a + b * n;
            let tr: C64 = (0..n).map(|i| m[(i + i * n, col)]).sum();
            let expected = if a == b { ONE } else { C64::new(0.0, 0.0) };
            max_trace_deviation = max_trace_deviation.max((tr - expected).norm());
        }
    }
    // Choi matrix Σ_ab E_ab ⊗ Φ(E_ab).
    let choi = CMatrix::from_fn(n * n, n * n, |r, c| {
        let (a, i) = (r / n, r % n);
        let (b, j) = (c / n, c % n);
        m[(i + j * n, a + b * n)]
    });
    let min_choi_eigenvalue = if linalg::all_finite(&choi) {
        linalg::min_hermitian_eigenvalue(&choi)
    } else {
        f64::NEG_INFINITY
    };
    let passed = max_trace_deviation <= tol && min_choi_eigenvalue >= -tol;
    CptpReport {
        max_trace_deviation,
        min_choi_eigenvalue,
        passed,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecoherenceFreeReport {
    /// Largest `‖Φ*_t(X†X) − Φ*_t(X)†Φ*_t(X)‖`.
    pub product_residual: f64,
    /// Largest `‖Φ*_t(XX†) − Φ*_t(X)Φ*_t(X)†‖`.
    pub coproduct_residual: f64,
    /// Largest `‖Φ*_t(X) − e^{iH̃t} X e^{−iH̃t}‖`, when `H̃` is known.
    pub unitary_residual: Option<f64>,
    pub passed: bool,
}

/// Residuals of the decoherence-free conditions for one element `X`.
pub fn decoherence_free_residuals(
    p: &Propagator,
    effective: Option<&CMatrix>,
    x: &CMatrix,
    t: f64,
) -> Result<(f64, f64, Option<f64>)> {
    let phi_x = p.apply_adjoint(x);
    let xd = x.adjoint();
    let product = (p.apply_adjoint(&(&xd * x)) - phi_x.adjoint() * &phi_x).norm();
    let coproduct = (p.apply_adjoint(&(x * &xd)) - &phi_x * phi_x.adjoint()).norm();
    let unitary = match effective {
        Some(h) => {
            let v = linalg::expm(&(h * C64::new(0.0, t)))?;
            Some((phi_x - linalg::conjugate_by(&v, x)).norm())
        }
        None => None,
    };
    Ok((product, coproduct, unitary))
}

/// Checks the decoherence-free conditions for arbitrary operators against a
/// candidate algebra, on `samples` random elements at each time.
pub fn verify_decoherence_free_operators<R: Rng + ?Sized>(
    ops: &OperatorPair,
    algebra: &AlgebraBasis,
    effective: Option<&CMatrix>,
    times: &[f64],
    samples: usize,
    tol: f64,
    rng: &mut R,
) -> Result<DecoherenceFreeReport> {
    let superop = gksl_superoperator(ops);
    let elements: Vec<CMatrix> = (0..samples)
        .map(|_| crate::algebra::assemble_element(&algebra.random_element(rng)))
        .collect();
    let mut report = DecoherenceFreeReport {
        product_residual: 0.0,
        coproduct_residual: 0.0,
        unitary_residual: effective.map(|_| 0.0),
        passed: true,
    };
    for &t in times {
        let p = propagator(&superop, t)?;
        for x in &elements {
            let (a, b, c) = decoherence_free_residuals(&p, effective, x, t)?;
            report.product_residual = report.product_residual.max(a);
            report.coproduct_residual = report.coproduct_residual.max(b);
            if let (Some(r), Some(c)) = (report.unitary_residual.as_mut(), c) {
                *r = r.max(c);
            }
        }
    }
    report.passed = report.product_residual <= tol
        && report.coproduct_residual <= tol
        && report.unitary_residual.is_none_or(|r| r <= tol);
    Ok(report)
}

pub fn verify_decoherence_free<R: Rng + ?Sized>(
    model: &GkslModel,
    times: &[f64],
    samples: usize,
    tol: f64,
    rng: &mut R,
) -> Result<DecoherenceFreeReport> {
    let ops = assemble_operators(model)?;
    let basis = model.basis()?;
    let h_eff = effective_hamiltonian(model)?;
    verify_decoherence_free_operators(&ops, &basis, Some(&h_eff), times, samples, tol, rng)
}
