//! Projective instruments, multi-time outcome probabilities and sampling of
//! measurement records.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::AlgebraBasis;
use crate::error::{Error, Result};
use crate::generator::Propagator;
use crate::linalg::{self, CMatrix, C64};

/// Probability floor `ε_p` used before logarithms and divisions.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One outcome per basis vector of each block factor.
    #[default]
    Fine,
    /// A random two-outcome grouping of the fine projectors.
    Coarse,
}

/// What happens to the mass outside the accessible subspace when `n₀ > 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplementPolicy {
    /// The zero-block projector is an explicit extra outcome.
    #[default]
    Record,
    /// Only accessible outcomes are recorded; sampling conditions on them.
    Postselect,
}

/// Projective measurement `{E_x}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    #[serde(with = "projector_list")]
    projectors: Vec<CMatrix>,
    includes_complement: bool,
}

mod projector_list {
    use crate::linalg::{CMatrix, MatrixRecord};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ps: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        ps.iter().map(MatrixRecord::from).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
        Vec::<MatrixRecord>::deserialize(d)?
            .iter()
            .map(|r| CMatrix::try_from(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

impl Instrument {
    pub fn new(projectors: Vec<CMatrix>, includes_complement: bool) -> Result<Self> {
        let Some(first) = projectors.first() else {
            return Err(Error::InvalidArgument(
                "an instrument needs at least one outcome".into(),
            ));
        };
        let n = first.nrows();
        if let Some(p) = projectors.iter().find(|p| p.shape() != (n, n)) {
            return Err(Error::DimensionMismatch {
                what: "instrument projector".into(),
                expected: n,
                found: p.nrows().max(p.ncols()),
            });
        }
        Ok(Self {
            projectors,
            includes_complement,
        })
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    pub fn projector(&self, x: usize) -> &CMatrix {
        &self.projectors[x]
    }

    pub fn outcome_count(&self) -> usize {
        self.projectors.len()
    }

    pub fn includes_complement(&self) -> bool {
        self.includes_complement
    }

    pub fn n(&self) -> usize {
        self.projectors[0].nrows()
    }

    /// Drops the trailing complement outcome, if present.
    pub fn without_complement(mut self) -> Self {
        if self.includes_complement {
            self.projectors.pop();
            self.includes_complement = false;
        }
        self
    }

    /// Largest deviation from `E_x E_y = δ_xy E_x` and `E_x = E_x†`.
    pub fn orthogonality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, e) in self.projectors.iter().enumerate() {
            worst = worst.max(linalg::hermiticity_defect(e));
            for (y, f) in self.projectors.iter().enumerate() {
                let prod = e * f;
                let d = if x == y { (prod - e).norm() } else { prod.norm() };
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn sum(&self) -> CMatrix {
        let n = self.n();
        self.projectors.iter().fold(CMatrix::zeros(n, n), |acc, e| acc + e)
    }
}

/// Random projective measurement inside the accessible algebra.
///
/// Each block factor `ℂ^{n_k}` gets a Haar-random orthonormal basis; its
/// rank-one projectors, tensored with `I_{m_k}`, are the fine outcomes. For
/// `n₀ > 0` the zero-block projector is appended as the last outcome.
pub fn random_instrument<R: Rng + ?Sized>(basis: &AlgebraBasis, rng: &mut R, granularity: Granularity) -> Instrument {
    let structure = basis.structure();
    let n = structure.n();
    let mut fine = Vec::new();
    for (k, block) in structure.blocks().iter().enumerate() {
        let w = linalg::haar_unitary(block.dim, rng);
        let p = basis.block_projector(k);
        for col in 0..block.dim {
            let v = w.column(col).into_owned();
            let local = linalg::kron(&(&v * v.adjoint()), &linalg::identity(block.mult));
            fine.push(linalg::hermitian_part(&(p.adjoint() * local * &p)));
        }
    }
    let mut projectors = match granularity {
        Granularity::Fine => fine,
        Granularity::Coarse if fine.len() < 2 => fine,
        Granularity::Coarse => {
            let count = fine.len();
            let mut groups: Vec<bool>;
            loop {
                groups = (0..count).map(|_| rng.random::<bool>()).collect();
                if groups.iter().any(|&g| g) && groups.iter().any(|&g| !g) {
                    break;
                }
            }
            let mut a = CMatrix::zeros(n, n);
            let mut b = CMatrix::zeros(n, n);
            for (e, g) in fine.iter().zip(groups) {
                if g {
                    a += e;
                } else {
                    b += e;
                }
            }
            vec![a, b]
        }
    };
    let includes_complement = match basis.zero_block_projector() {
        Some(p0) => {
            projectors.push(linalg::hermitian_part(&(p0.adjoint() * p0)));
            true
        }
        None => false,
    };
    Instrument {
        projectors,
        includes_complement,
    }
}

/// `Tr[E Φ_τ(ρ)]` clamped to `[0, 1]`.
pub fn conditional_probability(e: &CMatrix, p: &Propagator, rho: &CMatrix) -> f64 {
    let v = p.apply(rho);
    linalg::trace_of_product(e, &v).re.clamp(0.0, 1.0)
}

/// `E Φ_τ(ρ) E / Tr[E Φ_τ(ρ)]`.
pub fn conditioned_state(e: &CMatrix, p: &Propagator, rho: &CMatrix) -> Result<CMatrix> {
    let v = p.apply(rho);
    let prob = linalg::trace_of_product(e, &v).re;
    if prob <= PROBABILITY_FLOOR {
        return Err(Error::ZeroProbabilityBranch { probability: prob });
    }
    Ok(linalg::hermitian_part(&(e * v * e)) / C64::new(prob, 0.0))
}

/// How the record starts: before the first step the state is `σ`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    MaximallyMixed,
    Explicit {
        #[serde(with = "linalg::matrix_serde")]
        rho: CMatrix,
    },
}

impl InitialState {
    pub fn density(&self, n: usize) -> Result<CMatrix> {
        match self {
            Self::MaximallyMixed => Ok(linalg::identity(n) / C64::new(n as f64, 0.0)),
            Self::Explicit { rho } if rho.shape() == (n, n) => Ok(rho.clone()),
            Self::Explicit { rho } => Err(Error::DimensionMismatch {
                what: "initial state".into(),
                expected: n,
                found: rho.nrows(),
            }),
        }
    }
}

/// Outcomes `x_1 … x_N` of instruments applied at `t_j = jτ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementChain {
    pub instrument_ids: Vec<usize>,
    pub outcomes: Vec<usize>,
    pub tau: f64,
    pub initial_state: InitialState,
}

impl MeasurementChain {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn validate(&self, table: &[Instrument]) -> Result<()> {
        if self.instrument_ids.len() != self.outcomes.len() {
            return Err(Error::Format(format!(
                "chain has {} instrument ids but {} outcomes",
                self.instrument_ids.len(),
                self.outcomes.len()
            )));
        }
        for (&id, &x) in self.instrument_ids.iter().zip(&self.outcomes) {
            let Some(inst) = table.get(id) else {
                return Err(Error::Format(format!("instrument id {id} is out of range")));
            };
            if x >= inst.outcome_count() {
                return Err(Error::Format(format!(
                    "outcome {x} is out of range for instrument {id} with {} outcomes",
                    inst.outcome_count()
                )));
            }
        }
        Ok(())
    }

    /// `(E_{x_j}, …)` for each step.
    pub fn steps<'a>(&'a self, table: &'a [Instrument]) -> impl Iterator<Item = &'a CMatrix> + 'a {
        self.instrument_ids
            .iter()
            .zip(&self.outcomes)
            .map(move |(&id, &x)| table[id].projector(x))
    }
}

/// Probability of the whole record as a product of conditional probabilities.
pub fn sequence_probability(chain: &MeasurementChain, table: &[Instrument], p: &Propagator, sigma: &CMatrix) -> f64 {
    let mut rho = sigma.clone();
    let mut total = 1.0;
    for e in chain.steps(table) {
        let q = conditional_probability(e, p, &rho);
        match conditioned_state(e, p, &rho) {
            Ok(next) => rho = next,
            Err(_) => return 0.0,
        }
        total *= q;
    }
    total
}

/// Probability of the record as one nested trace,
/// `Tr[E_N Φ(⋯ E_1 Φ(σ) E_1 ⋯) E_N]`.
pub fn sequence_probability_nested(
    chain: &MeasurementChain,
    table: &[Instrument],
    p: &Propagator,
    sigma: &CMatrix,
) -> f64 {
    let mut x = sigma.clone();
    for e in chain.steps(table) {
        x = e * p.apply(&x) * e;
    }
    linalg::trace(&x).re
}

/// Draws outcomes for the given instruments; the categorical weights are
/// renormalized, which also conditions on accessible outcomes when the
/// instruments omit the complement.
pub fn sample_chain<R: Rng + ?Sized>(
    p: &Propagator,
    table: &[Instrument],
    instrument_ids: &[usize],
    sigma: &CMatrix,
    initial_state: InitialState,
    rng: &mut R,
) -> Result<MeasurementChain> {
    let mut rho = sigma.clone();
    let mut outcomes = Vec::with_capacity(instrument_ids.len());
    for &id in instrument_ids {
        let inst = table
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("instrument id {id} is out of range")))?;
        let v = p.apply(&rho);
        let weights: Vec<f64> = inst
            .projectors()
            .iter()
            .map(|e| linalg::trace_of_product(e, &v).re.max(0.0))
            .collect();
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 1e-300 {
            return Err(Error::ZeroProbabilityBranch { probability: total });
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut x = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                x = i;
                break;
            }
        }
        // Skip zero-weight tails picked up by round-off at the boundary.
        while weights[x] == 0.0 && x > 0 {
            x -= 1;
        }
        let e = inst.projector(x);
        rho = linalg::hermitian_part(&(e * v * e)) / C64::new(weights[x], 0.0);
        outcomes.push(x);
    }
    Ok(MeasurementChain {
        instrument_ids: instrument_ids.to_vec(),
        outcomes,
        tau: p.tau,
        initial_state,
    })
}

/// Orthonormal (Hilbert–Schmidt) basis of an algebra as columns of an
/// `n² × Σ n_k²` matrix.
fn algebra_frame(basis: &AlgebraBasis) -> CMatrix {
    let s = basis.structure();
    let n = s.n();
    let mut cols = Vec::new();
    for (k, block) in s.blocks().iter().enumerate() {
        let p = basis.block_projector(k);
        let scale = C64::new(1.0 / (block.mult as f64).sqrt(), 0.0);
        for a in 0..block.dim {
            for c in 0..block.dim {
                let mut unit = CMatrix::zeros(block.dim, block.dim);
                unit[(a, c)] = C64::new(1.0, 0.0);
                let local = linalg::kron(&unit, &linalg::identity(block.mult));
                cols.push(linalg::vectorize(&(p.adjoint() * local * &p * scale)));
            }
        }
    }
    CMatrix::from_fn(n * n, cols.len(), |r, c| cols[c][r])
}

/// Numerical dimension of `𝒩 ∩ 𝒜`; generic relative position gives 1
/// (only multiples of the identity are shared) for unital algebras.
pub fn intersection_dimension(first: &AlgebraBasis, second: &AlgebraBasis) -> usize {
    let qa = algebra_frame(first);
    let qb = algebra_frame(second);
    let overlap = qa.adjoint() * &qb;
    let gram = &overlap * overlap.adjoint();
    linalg::hermitian_eigen(&gram)
        .0
        .iter()
        .filter(|&&v| v > 1.0 - 1e-8)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::AlgebraStructure;
    use crate::generator::{gksl_superoperator, model_propagator, propagator, OperatorPair};
    use crate::physmodels::random_structured_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(s: &str) -> AlgebraStructure {
        s.parse().unwrap()
    }

    fn random_density<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
        let g = linalg::ginibre(n, n, rng);
        let rho = &g * g.adjoint();
        let tr = linalg::trace(&rho);
        rho / tr
    }

    fn random_propagator<R: Rng>(s: &str, rng: &mut R) -> Propagator {
        let s = st(s);
        let m = random_structured_model(&s, s.default_lindblad_count(), 0.8, rng).unwrap();
        model_propagator(&m, 0.3).unwrap()
    }

    #[test]
    fn fine_instrument_on_full_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instrument(&AlgebraBasis::identity(st("({3,1})")), &mut rng, Granularity::Fine);
        assert_eq!(inst.outcome_count(), 3);
        assert!(!inst.includes_complement());
        assert!((inst.sum() - linalg::identity(3)).norm() < 1e-12);
        for e in inst.projectors() {
            assert!((linalg::trace(e).re - 1.0).abs() < 1e-12);
        }
        assert!(inst.orthogonality_defect() < 1e-12);
    }

    #[test]
    fn scalar_algebra_gives_trivial_instrument() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instrument(&AlgebraBasis::identity(st("({1,3})")), &mut rng, Granularity::Fine);
        assert_eq!(inst.outcome_count(), 1);
        assert!((inst.projector(0) - linalg::identity(3)).norm() < 1e-12);
    }

    #[test]
    fn restricted_instrument_appends_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = AlgebraBasis::haar(st("(n0=2,{3,1})"), &mut rng);
        let inst = random_instrument(&basis, &mut rng, Granularity::Fine);
        assert_eq!(inst.outcome_count(), 4);
        assert!(inst.includes_complement());
        let ranks: Vec<f64> = inst.projectors().iter().map(|e| linalg::trace(e).re).collect();
        for r in &ranks[..3] {
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!((ranks[3] - 2.0).abs() < 1e-12);
        assert!((inst.sum() - linalg::identity(5)).norm() < 1e-10);
        assert!(inst.orthogonality_defect() < 1e-10);
        for e in &inst.projectors()[..3] {
            assert!(basis.membership_residual(e) < 1e-10);
        }
        let accessible = inst.clone().without_complement();
        assert_eq!(accessible.outcome_count(), 3);
        let sum = accessible.sum();
        assert!((&sum * &sum - &sum).norm() < 1e-10);
    }

    #[test]
    fn coarse_instruments_have_two_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = AlgebraBasis::haar(st("({2,1},{1,2})"), &mut rng);
        for _ in 0..20 {
            let inst = random_instrument(&basis, &mut rng, Granularity::Coarse);
            assert_eq!(inst.outcome_count(), 2);
            assert!((inst.sum() - linalg::identity(4)).norm() < 1e-10);
            assert!(inst.orthogonality_defect() < 1e-10);
            for e in inst.projectors() {
                assert!(linalg::trace(e).re > 0.5);
                assert!(basis.membership_residual(e) < 1e-10);
            }
        }
    }

    #[test]
    fn probability_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_propagator("({1,3})", &mut rng);
        let rho = random_density(3, &mut rng);
        assert!((conditional_probability(&linalg::identity(3), &p, &rho) - 1.0).abs() < 1e-12);
        let inst = random_instrument(
            &AlgebraBasis::haar(st("({3,1})"), &mut rng),
            &mut rng,
            Granularity::Fine,
        );
        let total: f64 = inst
            .projectors()
            .iter()
            .map(|e| conditional_probability(e, &p, &rho))
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn born_rule_with_identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = linalg::haar_unitary(3, &mut rng);
        let eig = [0.5, 0.3, 0.2];
        let rho = linalg::conjugate_by(
            &u,
            &CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                3,
                eig.iter().map(|&x| C64::new(x, 0.0)),
            )),
        );
        let p = Propagator::identity(3, 0.1);
        for (i, &lam) in eig.iter().enumerate() {
            let v = u.column(i).into_owned();
            let e = &v * v.adjoint();
            assert!((conditional_probability(&e, &p, &rho) - lam).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioned_state_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = random_density(3, &mut rng);
        let id = Propagator::identity(3, 0.1);
        let same = conditioned_state(&linalg::identity(3), &id, &rho).unwrap();
        assert!((same - &rho).norm() < 1e-12);
        let v = linalg::haar_unitary(3, &mut rng).column(0).into_owned();
        let e = &v * v.adjoint();
        let p = random_propagator("({1,3})", &mut rng);
        let out = conditioned_state(&e, &p, &rho).unwrap();
        assert!((out - &e).norm() < 1e-12);
    }

    #[test]
    fn zero_branch_is_reported() {
        let id = Propagator::identity(2, 0.1);
        let mut rho = CMatrix::zeros(2, 2);
        rho[(0, 0)] = C64::new(1.0, 0.0);
        let mut e = CMatrix::zeros(2, 2);
        e[(1, 1)] = C64::new(1.0, 0.0);
        assert_eq!(conditional_probability(&e, &id, &rho), 0.0);
        assert!(matches!(
            conditioned_state(&e, &id, &rho),
            Err(Error::ZeroProbabilityBranch { .. })
        ));
    }

    #[test]
    fn two_steps_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_propagator("({1,3})", &mut rng);
        let basis = AlgebraBasis::haar(st("({3,1})"), &mut rng);
        let e1 = random_instrument(&basis, &mut rng, Granularity::Fine)
            .projector(0)
            .clone();
        let e2 = random_instrument(&basis, &mut rng, Granularity::Fine)
            .projector(1)
            .clone();
        let sigma = random_density(3, &mut rng);
        let step = conditioned_state(&e2, &p, &conditioned_state(&e1, &p, &sigma).unwrap()).unwrap();
        let raw = &e2 * p.apply(&(&e1 * p.apply(&sigma) * &e1)) * &e2;
        let direct = &raw / linalg::trace(&raw);
        assert!((step - direct).norm() < 1e-12);
    }

    fn chain_over(ids: Vec<usize>, outcomes: Vec<usize>) -> MeasurementChain {
        MeasurementChain {
            instrument_ids: ids,
            outcomes,
            tau: 0.3,
            initial_state: InitialState::MaximallyMixed,
        }
    }

    #[test]
    fn single_step_is_born_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_propagator("({1,2},{1,1})", &mut rng);
        let table = vec![random_instrument(
            &AlgebraBasis::haar(st("({3,1})"), &mut rng),
            &mut rng,
            Granularity::Fine,
        )];
        let sigma = random_density(3, &mut rng);
        let chain = chain_over(vec![0], vec![2]);
        let want = linalg::trace(&(table[0].projector(2) * p.apply(&sigma))).re;
        assert!((sequence_probability(&chain, &table, &p, &sigma) - want).abs() < 1e-14);
    }

    #[test]
    fn enumeration_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_propagator("({1,3})", &mut rng);
        let basis = AlgebraBasis::haar(st("({3,1})"), &mut rng);
        let table: Vec<Instrument> = (0..3)
            .map(|_| random_instrument(&basis, &mut rng, Granularity::Fine))
            .collect();
        let sigma = InitialState::MaximallyMixed.density(3).unwrap();
        let mut total = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let ch = chain_over(vec![0, 1, 2], vec![a, b, c]);
                    let prod = sequence_probability(&ch, &table, &p, &sigma);
                    let nested = sequence_probability_nested(&ch, &table, &p, &sigma);
                    assert!((prod - nested).abs() <= 1e-10 * nested.abs().max(1e-300));
                    total += prod;
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_chain_for_fixed_eigenstate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = random_instrument(
            &AlgebraBasis::haar(st("({3,1})"), &mut rng),
            &mut rng,
            Granularity::Fine,
        );
        let table = vec![inst];
        let sigma = table[0].projector(1).clone();
        let p = Propagator::identity(3, 0.1);
        let chain = sample_chain(&p, &table, &[0; 25], &sigma, InitialState::MaximallyMixed, &mut rng).unwrap();
        assert!(chain.outcomes.iter().all(|&x| x == 1));
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_propagator("({1,3})", &mut rng);
        let table = vec![random_instrument(
            &AlgebraBasis::haar(st("({3,1})"), &mut rng),
            &mut rng,
            Granularity::Fine,
        )];
        let sigma = random_density(3, &mut rng);
        let trials = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let ch = sample_chain(&p, &table, &[0], &sigma, InitialState::MaximallyMixed, &mut rng).unwrap();
            counts[ch.outcomes[0]] += 1;
        }
        for (x, &c) in counts.iter().enumerate() {
            let q = conditional_probability(table[0].projector(x), &p, &sigma);
            let sd = (q * (1.0 - q) / trials as f64).sqrt();
            assert!((c as f64 / trials as f64 - q).abs() < 3.0 * sd + 1e-12, "outcome {x}");
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_propagator("({2,2})", &mut rng);
        let basis = AlgebraBasis::haar(st("({4,1})"), &mut rng);
        let table: Vec<Instrument> = (0..10)
            .map(|_| random_instrument(&basis, &mut rng, Granularity::Fine))
            .collect();
        let ids: Vec<usize> = (0..10).collect();
        let sigma = InitialState::MaximallyMixed.density(4).unwrap();
        let a = sample_chain(
            &p,
            &table,
            &ids,
            &sigma,
            InitialState::MaximallyMixed,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = sample_chain(
            &p,
            &table,
            &ids,
            &sigma,
            InitialState::MaximallyMixed,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn states_stay_physical_along_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_propagator("({1,2},{1,1})", &mut rng);
        let basis = AlgebraBasis::haar(st("({3,1})"), &mut rng);
        let table: Vec<Instrument> = (0..40)
            .map(|_| random_instrument(&basis, &mut rng, Granularity::Coarse))
            .collect();
        let ids: Vec<usize> = (0..40).collect();
        let sigma = InitialState::MaximallyMixed.density(3).unwrap();
        let ch = sample_chain(&p, &table, &ids, &sigma, InitialState::MaximallyMixed, &mut rng).unwrap();
        let mut rho = sigma;
        for e in ch.steps(&table) {
            rho = conditioned_state(e, &p, &rho).unwrap();
            assert!(linalg::min_hermitian_eigenvalue(&rho) >= -1e-10);
            assert!((linalg::trace(&rho).re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn product_equals_telescoping_conditionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_propagator("({2,1},{1,2})", &mut rng);
        let basis = AlgebraBasis::haar(st("({2,1},{1,2})"), &mut rng);
        let table: Vec<Instrument> = (0..6)
            .map(|_| random_instrument(&basis, &mut rng, Granularity::Fine))
            .collect();
        let ids: Vec<usize> = (0..6).collect();
        let sigma = InitialState::MaximallyMixed.density(4).unwrap();
        let ch = sample_chain(&p, &table, &ids, &sigma, InitialState::MaximallyMixed, &mut rng).unwrap();
        let mut rho = sigma.clone();
        let mut prod = 1.0;
        for e in ch.steps(&table) {
            prod *= conditional_probability(e, &p, &rho);
            rho = conditioned_state(e, &p, &rho).unwrap();
        }
        assert_eq!(prod, sequence_probability(&ch, &table, &p, &sigma));
    }

    #[test]
    fn chain_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let table = vec![random_instrument(
            &AlgebraBasis::identity(st("({2,1})")),
            &mut rng,
            Granularity::Fine,
        )];
        assert!(chain_over(vec![0], vec![1]).validate(&table).is_ok());
        assert!(chain_over(vec![0], vec![2]).validate(&table).is_err());
        assert!(chain_over(vec![1], vec![0]).validate(&table).is_err());
        assert!(chain_over(vec![0, 0], vec![0]).validate(&table).is_err());
    }

    #[test]
    fn generic_position_heuristic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = AlgebraBasis::haar(st("({2,2})"), &mut rng);
        let b = AlgebraBasis::haar(st("({2,2})"), &mut rng);
        assert_eq!(intersection_dimension(&a, &b), 1);
        assert_eq!(intersection_dimension(&a, &a), 4);
        let full = AlgebraBasis::identity(st("({4,1})"));
        assert_eq!(intersection_dimension(&a, &full), 4);
    }

    #[test]
    fn unstructured_propagator_still_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let ops = OperatorPair::new(
            linalg::hermitian_part(&linalg::ginibre(2, 2, &mut rng)),
            vec![linalg::ginibre(2, 2, &mut rng)],
        )
        .unwrap();
        let p = propagator(&gksl_superoperator(&ops), 0.5).unwrap();
        let basis = AlgebraBasis::haar(st("({2,1})"), &mut rng);
        let table: Vec<Instrument> = (0..3)
            .map(|_| random_instrument(&basis, &mut rng, Granularity::Fine))
            .collect();
        let sigma = InitialState::MaximallyMixed.density(2).unwrap();
        let mut total = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    total += sequence_probability(&chain_over(vec![0, 1, 2], vec![a, b, c]), &table, &p, &sigma);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }
}
