//! Ergotropy, passivity, entropies, photon statistics and Stokes parameters.
//!
//! Energies are in units of `hbar * omega` with `H = n`; entropies in nats.

use crate::error::{invalid, Error, Result};
use crate::fock::{self, DensityOperator, ModeRegister, HERMITICITY_TOLERANCE};
use crate::linalg::{self, C64, ZERO};

/// Tolerance used when testing populations for monotone falloff.
pub const PASSIVITY_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ErgotropyReport {
    pub energy: f64,
    pub passive_energy: f64,
    pub ergotropy: f64,
    /// Spectrum sorted non-increasing, i.e. the passive state's populations.
    pub passive_distribution: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Passivity {
    pub passive: bool,
    /// Smallest `n` with `p_{n+1} > p_n + tol`.
    pub first_violation: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stokes {
    pub s0: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Stokes {
    pub fn length(&self) -> f64 {
        (self.sx * self.sx + self.sy * self.sy + self.sz * self.sz).sqrt()
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(invalid("empty distribution"));
    }
    if p.iter().any(|&x| !(x >= -fock::NEGATIVITY_TOLERANCE)) {
        return Err(Error::InvalidState("negative or NaN probability".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("probabilities sum to {total}")));
    }
    Ok(())
}

pub fn mean_energy(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(n, x)| n as f64 * x).sum()
}

/// Ergotropy of a single-mode state with `H = n`.
pub fn ergotropy(rho: &DensityOperator) -> Result<ErgotropyReport> {
    if rho.dims().len() != 1 {
        return Err(invalid(format!(
            "ergotropy needs a single-mode state, got {} modes",
            rho.dims().len()
        )));
    }
    let herm = rho.hermiticity_deviation();
    if herm > HERMITICITY_TOLERANCE {
        return Err(Error::InvalidState(format!("not Hermitian: {herm:.3e}")));
    }
    let tr = rho.trace();
    if (tr - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    let energy = mean_energy(&rho.diagonal());
    let spectrum = rho.spectrum()?;
    Ok(report(energy, spectrum))
}

/// Ergotropy of a state diagonal in the number basis.
pub fn ergotropy_of_diagonal(p: &[f64]) -> Result<ErgotropyReport> {
    check_distribution(p)?;
    let mut sorted: Vec<f64> = p.iter().map(|&x| x.max(0.0)).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(report(mean_energy(p), sorted))
}

fn report(energy: f64, passive_distribution: Vec<f64>) -> ErgotropyReport {
    let passive_energy = mean_energy(&passive_distribution);
    ErgotropyReport {
        energy,
        passive_energy,
        ergotropy: energy - passive_energy,
        passive_distribution,
    }
}

pub fn is_passive(p: &[f64]) -> Result<Passivity> {
    check_distribution(p)?;
    let first_violation = p.windows(2).position(|w| w[1] > w[0] + PASSIVITY_TOLERANCE);
    Ok(Passivity {
        passive: first_violation.is_none(),
        first_violation,
    })
}

pub fn von_neumann_entropy(rho: &DensityOperator) -> Result<f64> {
    Ok(linalg::entropy_of(rho.spectrum()?))
}

/// Joint entropy of any register representation.
pub fn register_entropy(reg: &ModeRegister) -> Result<f64> {
    Ok(linalg::entropy_of(reg.spectrum()?))
}

/// Sum of single-mode marginal entropies.
pub fn marginal_entropies(reg: &ModeRegister) -> Result<Vec<f64>> {
    (0..reg.arity())
        .map(|m| von_neumann_entropy(&fock::partial_trace(reg, &[m])?))
        .collect()
}

pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(linalg::entropy_of(p.iter().copied()))
}

/// `(nbar + 1) ln(nbar + 1) - nbar ln nbar`.
pub fn thermal_entropy(nbar: f64) -> f64 {
    if nbar <= 0.0 {
        return 0.0;
    }
    (nbar + 1.0) * (nbar + 1.0).ln() - nbar * nbar.ln()
}

/// `sum n(n-1) p_n / <n>^2`.
pub fn g2_zero(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    let mean = mean_energy(p);
    if !(mean > 0.0) {
        return Err(invalid("g2 is undefined for the vacuum"));
    }
    let second: f64 = p
        .iter()
        .enumerate()
        .map(|(n, x)| (n * n.saturating_sub(1)) as f64 * x)
        .sum();
    Ok(second / (mean * mean))
}

/// Stokes parameters of modes `(a, b)`: `S0 = (n_a + n_b)/2`,
/// `Sx + i Sy = <a† b>`, `Sz = (n_a - n_b)/2`.
pub fn stokes_parameters(reg: &ModeRegister, a: usize, b: usize) -> Result<Stokes> {
    if a == b {
        return Err(invalid("Stokes parameters need two distinct modes"));
    }
    let rho = fock::partial_trace_unordered(reg, &[a, b])?;
    let (da, db) = (reg.dims()[a], reg.dims()[b]);
    let idx = |na: usize, nb: usize| na * db + nb;
    let mut na_mean = 0.0;
    let mut nb_mean = 0.0;
    let mut adag_b = ZERO;
    for na in 0..da {
        for nb in 0..db {
            let p = rho[(idx(na, nb), idx(na, nb))].re;
            na_mean += na as f64 * p;
            nb_mean += nb as f64 * p;
            // Tr(rho a†b) = sum rho[(na, nb), (na+1, nb-1)] sqrt(na+1) sqrt(nb)
            if na + 1 < da && nb >= 1 {
                let f = ((na + 1) as f64 * nb as f64).sqrt();
                adag_b += rho[(idx(na, nb), idx(na + 1, nb - 1))] * C64::from(f);
            }
        }
    }
    Ok(Stokes {
        s0: 0.5 * (na_mean + nb_mean),
        sx: adag_b.re,
        sy: adag_b.im,
        sz: 0.5 * (na_mean - nb_mean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{
        make_coherent, make_fock, make_thermal, tensor, ThermalSpec, TruncatedBasis,
    };
    use crate::linalg::{CMatrix, CVector};
    use approx::assert_abs_diff_eq;

    fn basis(c: usize) -> TruncatedBasis {
        TruncatedBasis::new(c).unwrap()
    }

    fn thermal(nbar: f64, c: usize) -> DensityOperator {
        make_thermal(ThermalSpec::new(nbar).unwrap(), basis(c)).unwrap()
    }

    #[test]
    fn thermal_has_no_ergotropy() {
        let r = ergotropy(&thermal(5.0, 140)).unwrap();
        assert!(r.ergotropy.abs() < 1e-9);
    }

    #[test]
    fn single_photon_ergotropy_is_one() {
        let rho = make_fock(1, basis(5)).unwrap().to_density();
        let r = ergotropy(&rho).unwrap();
        assert_abs_diff_eq!(r.ergotropy, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.passive_distribution[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn displaced_thermal_ergotropy_is_displacement_squared() {
        // D rho_th D† built explicitly, compared with |delta|^2
        let c = 90;
        let delta = C64::new(1.5, -0.8);
        let core = thermal(2.0, 50);
        let mut big = CMatrix::zeros(c, c);
        big.view_mut((0, 0), (50, 50)).copy_from(core.matrix());
        let d = fock::displacement(delta, c);
        let m = &d * big * d.adjoint();
        let tr = m.trace().re;
        let rho = DensityOperator::from_matrix(vec![c], m, 1e-6).unwrap();
        assert!(1.0 - tr < 1e-6);
        let r = ergotropy(&rho).unwrap();
        assert_abs_diff_eq!(r.ergotropy, delta.norm_sqr(), epsilon = 1e-3);
    }

    #[test]
    fn ergotropy_rejects_multimode_and_bad_trace() {
        let v = ModeRegister::Pure(make_fock(0, basis(2)).unwrap());
        let j = tensor(&[v.clone(), v]).unwrap().to_density();
        assert!(ergotropy(&j).is_err());
        let half = DensityOperator::from_parts_unchecked(
            vec![2],
            CMatrix::identity(2, 2) * C64::from(0.3),
            0.0,
        );
        assert!(ergotropy(&half).is_err());
    }

    #[test]
    fn passivity_examples() {
        let geo: Vec<f64> = (0..60).map(|n| 0.5f64.powi(n + 1)).collect();
        let total: f64 = geo.iter().sum();
        let geo: Vec<f64> = geo.iter().map(|x| x / total).collect();
        assert!(is_passive(&geo).unwrap().passive);

        let delta = [0.0, 0.0, 0.0, 1.0, 0.0];
        let p = is_passive(&delta).unwrap();
        assert!(!p.passive);
        assert_eq!(p.first_violation, Some(2));
    }

    #[test]
    fn entropy_examples() {
        let pure = make_coherent(C64::new(0.4, 0.1), basis(20))
            .unwrap()
            .to_density();
        assert!(von_neumann_entropy(&pure).unwrap().abs() < 1e-10);

        for nbar in [0.5, 1.0, 3.0] {
            let s = von_neumann_entropy(&thermal(nbar, 200)).unwrap();
            assert_abs_diff_eq!(s, thermal_entropy(nbar), epsilon = 1e-6);
        }

        let mixed = DensityOperator::from_diagonal(vec![6], &[1.0 / 6.0; 6]).unwrap();
        assert_abs_diff_eq!(
            von_neumann_entropy(&mixed).unwrap(),
            6f64.ln(),
            epsilon = 1e-12
        );

        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            shannon_entropy(&[0.125; 8]).unwrap(),
            8f64.ln(),
            epsilon = 1e-14
        );

        let th = thermal(1.0, 80);
        assert_abs_diff_eq!(
            shannon_entropy(&th.diagonal()).unwrap(),
            von_neumann_entropy(&th).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn g2_examples() {
        assert_abs_diff_eq!(
            g2_zero(&thermal(3.0, 200).diagonal()).unwrap(),
            2.0,
            epsilon = 1e-9
        );
        let co = ModeRegister::Pure(make_coherent(C64::new(1.2, 0.0), basis(40)).unwrap());
        assert_abs_diff_eq!(
            g2_zero(&fock::number_distribution(&co, 0).unwrap()).unwrap(),
            1.0,
            epsilon = 1e-9
        );
        for n in 1..6 {
            let f = ModeRegister::Pure(make_fock(n, basis(8)).unwrap());
            let g = g2_zero(&fock::number_distribution(&f, 0).unwrap()).unwrap();
            assert_abs_diff_eq!(g, 1.0 - 1.0 / n as f64, epsilon = 1e-14);
        }
        assert!(g2_zero(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn stokes_examples() {
        let v = |n| ModeRegister::Pure(make_fock(n, basis(4)).unwrap());
        let s = stokes_parameters(&tensor(&[v(1), v(0)]).unwrap(), 0, 1).unwrap();
        assert_abs_diff_eq!(s.sz, 0.5, epsilon = 1e-15);
        assert_eq!((s.sx, s.sy), (0.0, 0.0));

        let alpha = C64::new(0.9, 0.4);
        let co = ModeRegister::Pure(make_coherent(alpha, basis(30)).unwrap());
        let s = stokes_parameters(&tensor(&[co.clone(), co]).unwrap(), 0, 1).unwrap();
        assert_abs_diff_eq!(s.sx, alpha.norm_sqr(), epsilon = 1e-8);
        assert_abs_diff_eq!(s.sy, 0.0, epsilon = 1e-12);

        let (na, nb) = (0.7, 0.2);
        let joint = tensor(&[
            ModeRegister::Mixed(thermal(na, 80)),
            ModeRegister::Mixed(thermal(nb, 40)),
        ])
        .unwrap();
        let s = stokes_parameters(&joint, 0, 1).unwrap();
        assert!(s.sx.abs() < 1e-14 && s.sy.abs() < 1e-14);
        assert_abs_diff_eq!(s.sz, (na - nb) / 2.0, epsilon = 1e-7);
    }

    #[test]
    fn stokes_sign_follows_mode_order() {
        let mut v = CVector::zeros(4);
        v[1] = C64::from(0.5f64.sqrt());
        v[2] = C64::new(0.0, 0.5f64.sqrt());
        let reg = ModeRegister::Pure(fock::PureState::from_amplitudes(vec![2, 2], v).unwrap());
        let ab = stokes_parameters(&reg, 0, 1).unwrap();
        let ba = stokes_parameters(&reg, 1, 0).unwrap();
        assert_abs_diff_eq!(ab.sy, -ba.sy, epsilon = 1e-15);
        assert_abs_diff_eq!(ab.length(), 0.5, epsilon = 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn normalized(raw: Vec<f64>) -> Vec<f64> {
            let t: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / t).collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn ergotropy_zero_iff_passive(raw in proptest::collection::vec(0.001f64..1.0, 2..12)) {
                let p = normalized(raw);
                let w = ergotropy_of_diagonal(&p).unwrap().ergotropy;
                prop_assert!(w >= -1e-12);
                prop_assert_eq!(w.abs() < 1e-12, is_passive(&p).unwrap().passive);
            }

            #[test]
            fn ergotropy_invariant_under_phases(raw in proptest::collection::vec(0.001f64..1.0, 2..10), phi in -3.0f64..3.0) {
                let p = normalized(raw);
                let d = p.len();
                let rho = DensityOperator::from_diagonal(vec![d], &p).unwrap();
                let u = CMatrix::from_diagonal(&CVector::from_iterator(d, (0..d).map(|n| C64::from_polar(1.0, phi * (n * n) as f64))));
                let rotated = DensityOperator::from_matrix(vec![d], &u * rho.matrix() * u.adjoint(), 1e-12).unwrap();
                let a = ergotropy(&rho).unwrap().ergotropy;
                let b = ergotropy(&rotated).unwrap().ergotropy;
                prop_assert!((a - b).abs() < 1e-10);
                prop_assert!((a - ergotropy_of_diagonal(&p).unwrap().ergotropy).abs() < 1e-10);
            }

            #[test]
            fn ergotropy_ignores_tie_order(vals in proptest::collection::vec(1usize..4, 2..10), perm_seed in 0u64..1000) {
                // many degenerate values; permuting them must not change ergotropy
                let p = normalized(vals.iter().map(|&v| v as f64).collect());
                let mut q = p.clone();
                let n = q.len();
                let mut s = perm_seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    q.swap(i, (s >> 33) as usize % (i + 1));
                }
                let a = ergotropy_of_diagonal(&p).unwrap();
                let b = ergotropy_of_diagonal(&q).unwrap();
                prop_assert!((a.passive_energy - b.passive_energy).abs() < 1e-12);
            }

            #[test]
            fn thermal_mixtures_bunch(n1 in 0.1f64..5.0, n2 in 0.1f64..5.0, w in 0.0f64..1.0) {
                let a = thermal(n1, 300).diagonal();
                let b = thermal(n2, 300).diagonal();
                let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| w * x + (1.0 - w) * y).collect();
                prop_assert!(g2_zero(&mix).unwrap() >= 2.0 - 1e-9);
            }

            #[test]
            fn dephasing_raises_entropy(seed in proptest::collection::vec(-1.0f64..1.0, 12)) {
                let d = 6;
                let v = CVector::from_fn(d, |i, _| C64::new(seed[i], seed[i + 6]));
                prop_assume!(v.norm() > 1e-3);
                let psi = fock::PureState::from_amplitudes(vec![d], v).unwrap().to_density();
                let mix = DensityOperator::from_diagonal(vec![d], &[0.3, 0.25, 0.2, 0.1, 0.1, 0.05]).unwrap();
                let m = psi.matrix() * C64::from(0.5) + mix.matrix() * C64::from(0.5);
                let rho = DensityOperator::from_matrix(vec![d], m, 1e-12).unwrap();
                prop_assert!(shannon_entropy(&rho.diagonal()).unwrap() >= von_neumann_entropy(&rho).unwrap() - 1e-9);
            }
        }
    }
}
