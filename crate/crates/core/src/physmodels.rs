//! Concrete generators used to synthesize data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::AlgebraStructure;
use crate::error::{Error, Result};
use crate::generator::{GkslModel, OperatorPair};
use crate::linalg::{self, CMatrix, C64};
use crate::params::init_params;

/// Emitters coupled to a waveguide with parametric gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideParams {
    pub gamma: f64,
    /// Total squeezing parameter across the array.
    pub r: f64,
    pub theta: f64,
    pub atoms: usize,
}

impl Default for WaveguideParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            r: 0.5,
            theta: 0.0,
            atoms: 3,
        }
    }
}

impl WaveguideParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.atoms == 0 || self.atoms > 6 {
            return Err(Error::InvalidArgument(format!(
                "atoms must be between 1 and 6, got {}",
                self.atoms
            )));
        }
        if !self.r.is_finite() || !self.theta.is_finite() {
            return Err(Error::InvalidArgument("r and theta must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        1 << self.atoms
    }
}

/// `σ₋ = |0⟩⟨1|` acting on emitter `j` (0-based, leftmost tensor factor first).
fn lowering_on(j: usize, atoms: usize) -> CMatrix {
    let sm = CMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0].map(|x| C64::new(x, 0.0)));
    let mut out = linalg::identity(1);
    for a in 0..atoms {
        let factor = if a == j { sm.clone() } else { linalg::identity(2) };
        out = linalg::kron(&out, &factor);
    }
    out
}

/// Hamiltonian and the two chiral jump operators of the waveguide array.
pub fn waveguide_operators(p: &WaveguideParams) -> Result<OperatorPair> {
    p.validate()?;
    let atoms = p.atoms;
    let n = p.n();
    let lower: Vec<CMatrix> = (0..atoms).map(|j| lowering_on(j, atoms)).collect();
    let raise: Vec<CMatrix> = lower.iter().map(|m| m.adjoint()).collect();
    let phase = C64::from_polar(1.0, -p.theta);

    let mut h = CMatrix::zeros(n, n);
    for i in 0..atoms {
        for j in 0..atoms {
            let s = (p.r * i.abs_diff(j) as f64 / 2.0).sinh();
            if s == 0.0 {
                continue;
            }
            let term = &raise[j] * &raise[i] * phase + &lower[j] * &lower[i] * phase.conj();
            h += term * C64::new(0.5 * p.gamma * s, 0.0);
        }
    }

    let sqrt_gamma = C64::new(p.gamma.sqrt(), 0.0);
    let minus_i_phase = C64::new(0.0, -1.0) * phase;
    let jump = |r_of: &dyn Fn(usize) -> f64| {
        let mut l = CMatrix::zeros(n, n);
        for j in 0..atoms {
            let rj = r_of(j);
            l += &lower[j] * C64::new(rj.cosh(), 0.0) + &raise[j] * (minus_i_phase * rj.sinh());
        }
        l * sqrt_gamma
    };
    // With 1-based emitter index j: r_→ = r(j−1)/2, r_← = r(atoms−j)/2.
    let right = jump(&|j| p.r * j as f64 / 2.0);
    let left = jump(&|j| p.r * (atoms - 1 - j) as f64 / 2.0);
    OperatorPair::new(linalg::hermitian_part(&h), vec![right, left])
}

/// Structured model with i.i.d. Gaussian parameters of standard deviation `scale`.
pub fn random_structured_model<R: Rng + ?Sized>(
    structure: &AlgebraStructure,
    lindblad_count: usize,
    scale: f64,
    rng: &mut R,
) -> Result<GkslModel> {
    init_params(structure, lindblad_count, rng, scale)?.to_model()
}

/// Like [`random_structured_model`] but with a Haar-distributed basis
/// unitary, so the decoherence-free algebra sits in generic position.
pub fn haar_structured_model<R: Rng + ?Sized>(
    structure: &AlgebraStructure,
    lindblad_count: usize,
    scale: f64,
    rng: &mut R,
) -> Result<GkslModel> {
    let u = linalg::haar_unitary(structure.n(), rng);
    let g = linalg::unitary_log_hermitian(&u)?;
    let model = init_params(structure, lindblad_count, rng, scale)?.to_model()?;
    GkslModel::new(
        structure.clone(),
        g,
        model.betas().to_vec(),
        model.kappas().to_vec(),
        model.mus().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{gksl_superoperator, propagator, verify_cptp, verify_decoherence_free};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn permutation_of_atoms(perm: &[usize]) -> CMatrix {
        // Basis state bits: atom a is bit (atoms-1-a) of the index.
        let atoms = perm.len();
        let n = 1 << atoms;
        let mut out = CMatrix::zeros(n, n);
        for idx in 0..n {
            let mut target = 0;
            for (a, &to) in perm.iter().enumerate() {
                let bit = (idx >> (atoms - 1 - a)) & 1;
                target |= bit << (atoms - 1 - to);
            }
            out[(target, idx)] = C64::new(1.0, 0.0);
        }
        out
    }

    #[test]
    fn no_squeezing_gives_collective_decay() {
        let p = WaveguideParams {
            gamma: 0.7,
            r: 0.0,
            theta: 1.1,
            atoms: 3,
        };
        let ops = waveguide_operators(&p).unwrap();
        assert_eq!(ops.hamiltonian(), &CMatrix::zeros(8, 8));
        let mut collective = CMatrix::zeros(8, 8);
        for j in 0..3 {
            collective += lowering_on(j, 3);
        }
        collective *= C64::new(0.7f64.sqrt(), 0.0);
        assert!((&ops.lindblads()[0] - &collective).norm() < 1e-15);
        assert!((&ops.lindblads()[1] - &collective).norm() < 1e-15);
    }

    #[test]
    fn three_atoms_are_eight_dimensional() {
        let ops = waveguide_operators(&WaveguideParams::default()).unwrap();
        assert_eq!(ops.n(), 8);
        assert_eq!(ops.lindblads().len(), 2);
    }

    #[test]
    fn hamiltonian_is_hermitian_for_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let p = WaveguideParams {
                gamma: rng.random_range(0.1..2.0),
                r: rng.random_range(-1.0..1.0),
                theta: rng.random_range(0.0..std::f64::consts::TAU),
                atoms: 3,
            };
            let ops = waveguide_operators(&p).unwrap();
            assert!(linalg::hermiticity_defect(ops.hamiltonian()) < 1e-12);
            assert!(ops.hamiltonian().norm() > 0.0 || p.r == 0.0);
        }
    }

    #[test]
    fn lowering_operator_convention() {
        // Atom 1 excited, others in ground: |100⟩ is index 4.
        let sm = lowering_on(0, 3);
        assert_eq!(sm[(0, 4)], C64::new(1.0, 0.0));
        assert_eq!(sm.iter().filter(|z| z.norm() > 0.0).count(), 4);
    }

    #[test]
    fn hand_computed_two_atom_hamiltonian() {
        // Two atoms, θ = 0: H = γ sinh(r/2) (σ₊σ₊ + σ₋σ₋), so ⟨11|H|00⟩ = γ sinh(r/2).
        let p = WaveguideParams {
            gamma: 1.3,
            r: 0.8,
            theta: 0.0,
            atoms: 2,
        };
        let ops = waveguide_operators(&p).unwrap();
        let want = 1.3 * (0.4f64).sinh();
        assert!((ops.hamiltonian()[(3, 0)].re - want).abs() < 1e-14);
        assert!((ops.hamiltonian()[(0, 3)].re - want).abs() < 1e-14);
        // L_→ on atom 2 carries cosh(r/2); on atom 1 it is a pure σ₋.
        let l = &ops.lindblads()[0];
        assert!((l[(0, 2)].re - 1.3f64.sqrt()).abs() < 1e-14);
        assert!((l[(0, 1)].re - 1.3f64.sqrt() * 0.4f64.cosh()).abs() < 1e-14);
    }

    #[test]
    fn waveguide_channels_are_cptp() {
        let ops = waveguide_operators(&WaveguideParams::default()).unwrap();
        let sup = gksl_superoperator(&ops);
        for tau in [0.05, 0.1, 0.5] {
            assert!(verify_cptp(&propagator(&sup, tau).unwrap(), 1e-8).passed);
        }
    }

    #[test]
    fn exchange_symmetry_without_squeezing() {
        let p = WaveguideParams {
            gamma: 1.0,
            r: 0.0,
            theta: 0.0,
            atoms: 3,
        };
        let ops = waveguide_operators(&p).unwrap();
        let perm = permutation_of_atoms(&[2, 0, 1]);
        for l in ops.lindblads() {
            assert!((linalg::conjugate_by(&perm, l) - l).norm() < 1e-12);
        }
        let prop = propagator(&gksl_superoperator(&ops), 0.2).unwrap();
        let sup_perm = linalg::kron(&perm.map(|z| z.conj()), &perm);
        let moved = &sup_perm * &prop.matrix * sup_perm.adjoint();
        assert!((moved - &prop.matrix).norm() < 1e-10);
    }

    #[test]
    fn rejects_invalid_parameters() {
        let bad = WaveguideParams {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(waveguide_operators(&bad).is_err());
        let bad = WaveguideParams {
            atoms: 0,
            ..Default::default()
        };
        assert!(waveguide_operators(&bad).is_err());
    }

    #[test]
    fn zero_scale_is_identity_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: AlgebraStructure = "({1,2},{1,1})".parse().unwrap();
        let m = random_structured_model(&s, 4, 0.0, &mut rng).unwrap();
        let prop = propagator(
            &gksl_superoperator(&crate::generator::assemble_operators(&m).unwrap()),
            1.0,
        )
        .unwrap();
        assert!((prop.matrix - linalg::identity(9)).norm() < 1e-15);
    }

    #[test]
    fn random_draws_are_valid_and_repeatable() {
        let s: AlgebraStructure = "({2,2})".parse().unwrap();
        let a = random_structured_model(&s, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = random_structured_model(&s, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = haar_structured_model(&s, 4, 0.5, &mut rng).unwrap();
        let prop = crate::generator::model_propagator(&h, 0.2).unwrap();
        assert!(verify_cptp(&prop, 1e-8).passed);
        assert!(
            verify_decoherence_free(&h, &[0.2, 1.0], 5, 1e-8, &mut rng)
                .unwrap()
                .passed
        );
    }
}
