//! Collective spins coupled to a bosonic bath: bath-induced one-axis
//! twisting, cat-state formation time and fidelity.
//!
//! States live in the symmetric sector `j = N/2`, indexed by the number
//! `k` of flipped spins, with `m = j - k`.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::linalg::{CMatrix, CVector, C64};

/// One discretized bath mode: squared coupling and frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BathMode {
    pub coupling2: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BathSpectrum {
    modes: Vec<BathMode>,
}

pub const DEFAULT_GRID_POINTS: usize = 4001;

impl BathSpectrum {
    pub fn from_modes(modes: Vec<BathMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(invalid("bath needs at least one mode"));
        }
        if modes
            .iter()
            .any(|m| !(m.omega > 0.0) || !(m.coupling2 >= 0.0))
        {
            return Err(invalid("bath modes need omega > 0 and coupling^2 >= 0"));
        }
        Ok(Self { modes })
    }

    pub fn single_mode(coupling2: f64, omega: f64) -> Result<Self> {
        Self::from_modes(vec![BathMode { coupling2, omega }])
    }

    /// Lorentzian coupling density of total weight `coupling2` over
    /// positive frequencies, centred at `center` with half width `width`.
    ///
    /// Frequencies follow `omega = center + width tan(u)` on a uniform
    /// midpoint grid in `u`, so every mode carries equal weight and the
    /// whole positive half-line is covered.
    pub fn lorentzian(center: f64, width: f64, coupling2: f64, points: usize) -> Result<Self> {
        if !(width > 0.0) {
            return Err(invalid("Lorentzian width must be > 0"));
        }
        if !(center >= 0.0) || !(coupling2 >= 0.0) {
            return Err(invalid("Lorentzian needs center >= 0 and coupling^2 >= 0"));
        }
        if points == 0 {
            return Err(invalid("Lorentzian grid needs at least one point"));
        }
        let u0 = (-center / width).atan();
        let du = (PI / 2.0 - u0) / points as f64;
        let w = coupling2 / points as f64;
        let modes = (0..points)
            .map(|i| BathMode {
                coupling2: w,
                omega: center + width * (u0 + (i as f64 + 0.5) * du).tan(),
            })
            .collect();
        Self::from_modes(modes)
    }

    pub fn modes(&self) -> &[BathMode] {
        &self.modes
    }

    pub fn total_coupling2(&self) -> f64 {
        self.modes.iter().map(|m| m.coupling2).sum()
    }
}

/// `(1/t) sum eta^2 (omega t - sin omega t) / omega^2`; zero at `t = 0`.
pub fn lamb_shift(t: f64, bath: &BathSpectrum) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(bath
        .modes
        .iter()
        .map(|m| {
            let x = m.omega * t;
            // series near zero avoids cancellation in x - sin x
            let f = if x < 1e-3 {
                x * x * x / 6.0 * (1.0 - x * x / 20.0)
            } else {
                x - x.sin()
            };
            m.coupling2 * f / (m.omega * m.omega)
        })
        .sum::<f64>()
        / t)
}

/// `sum eta^2 (1 - cos omega t) / omega^2 coth(omega / 2T)`.
pub fn dephasing_gamma(t: f64, bath: &BathSpectrum, temperature: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    if !(temperature >= 0.0) {
        return Err(invalid("temperature must be >= 0"));
    }
    Ok(bath
        .modes
        .iter()
        .map(|m| {
            let thermal = if temperature == 0.0 {
                1.0
            } else {
                1.0 / (m.omega / (2.0 * temperature)).tanh()
            };
            let half = (m.omega * t / 2.0).sin();
            m.coupling2 * 2.0 * half * half / (m.omega * m.omega) * thermal
        })
        .sum())
}

/// Time average of `dephasing_gamma` over `[0, t]` by Simpson's rule.
pub fn mean_gamma(t: f64, bath: &BathSpectrum, temperature: f64, intervals: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("averaging window must be > 0"));
    }
    let n = (intervals.max(2) + 1) & !1;
    let h = t / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * dephasing_gamma(i as f64 * h, bath, temperature)?;
    }
    Ok(s * h / 3.0 / t)
}

/// Earliest `t` with `t f(t) = pi/2`, by doubling then bisection.
///
/// `t f(t)` must be nondecreasing in `t`.
pub fn solve_mqs_time<F: Fn(f64) -> Result<f64>>(lamb: F, horizon: f64) -> Result<f64> {
    let g = |t: f64| -> Result<f64> { Ok(t * lamb(t)? - PI / 2.0) };
    let mut hi = 1e-6_f64.min(horizon);
    let mut lo = 0.0;
    while g(hi)? < 0.0 {
        lo = hi;
        if hi >= horizon {
            return Err(Error::NoConvergence(format!(
                "t Delta_L(t) stays below pi/2 up to t = {horizon}"
            )));
        }
        hi = (2.0 * hi).min(horizon);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Cat formation time of `bath`: earliest `t` with `t Delta_L(t) = pi/2`.
pub fn mqs_time(bath: &BathSpectrum, horizon: f64) -> Result<f64> {
    solve_mqs_time(|t| lamb_shift(t, bath), horizon)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveSpinState {
    atoms: usize,
    amplitudes: CVector,
}

impl CollectiveSpinState {
    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn j(&self) -> f64 {
        self.atoms as f64 / 2.0
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    /// `m = j - k` for each basis index.
    pub fn m_values(&self) -> Vec<f64> {
        m_values(self.atoms)
    }

    pub fn to_density(&self) -> SpinDensity {
        SpinDensity {
            atoms: self.atoms,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

fn m_values(atoms: usize) -> Vec<f64> {
    let j = atoms as f64 / 2.0;
    (0..=atoms).map(|k| j - k as f64).collect()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let lf = |x: usize| (1..=x).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

/// Product of `N` spins each in `cos(theta/2)|up> + sin(theta/2) e^{i phi}|down>`.
pub fn coherent_spin_state(atoms: usize, theta: f64, phi: f64) -> Result<CollectiveSpinState> {
    if atoms == 0 {
        return Err(invalid("need at least one atom"));
    }
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let amplitudes = CVector::from_fn(atoms + 1, |k, _| {
        let pow = |x: f64, e: usize| if e == 0 { 0.0 } else { e as f64 * x.abs().ln() };
        let lm = 0.5 * ln_binomial(atoms, k) + pow(c, atoms - k) + pow(s, k);
        let sign = c.signum().powi((atoms - k) as i32) * s.signum().powi(k as i32);
        let mag = sign * lm.exp();
        C64::from_polar(mag, k as f64 * phi)
    });
    let norm = amplitudes.norm();
    Ok(CollectiveSpinState {
        atoms,
        amplitudes: amplitudes / C64::from(norm),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinDensity {
    pub atoms: usize,
    pub matrix: CMatrix,
}

impl SpinDensity {
    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn expectation(&self, v: &CVector) -> f64 {
        (v.adjoint() * &self.matrix * v)[(0, 0)].re
    }

    /// Largest modulus of an off-diagonal element.
    pub fn max_coherence(&self) -> f64 {
        let d = self.matrix.nrows();
        let mut m = 0.0f64;
        for r in 0..d {
            for c in 0..d {
                if r != c {
                    m = m.max(self.matrix[(r, c)].norm());
                }
            }
        }
        m
    }
}

/// Twist by `exp(-i phase J_z^2)` and damp coherences by
/// `exp(-gamma (m - m')^2 / 2)`.
pub fn twist_evolve(state: &CollectiveSpinState, phase: f64, gamma: f64) -> Result<SpinDensity> {
    if !(gamma >= 0.0) {
        return Err(invalid("dephasing must be >= 0"));
    }
    let pure = twist_pure(state, phase);
    let mut rho = pure.to_density();
    if gamma > 0.0 {
        let m = state.m_values();
        let d = m.len();
        for r in 0..d {
            for c in 0..d {
                let dm = m[r] - m[c];
                rho.matrix[(r, c)] *= (-gamma * dm * dm / 2.0).exp();
            }
        }
    }
    Ok(rho)
}

/// Dephasing-free twist of a pure state.
pub fn twist_pure(state: &CollectiveSpinState, phase: f64) -> CollectiveSpinState {
    let m = state.m_values();
    let amplitudes = CVector::from_fn(m.len(), |k, _| {
        // reduce m^2 phase mod 2 pi before multiplying
        let arg = (phase * m[k] * m[k]).rem_euclid(2.0 * PI);
        state.amplitudes[k] * C64::from_polar(1.0, -arg)
    });
    CollectiveSpinState {
        atoms: state.atoms,
        amplitudes,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CatFidelity {
    pub fidelity: f64,
    pub delta: f64,
}

/// Largest overlap of `rho` with `(|theta, phi> + e^{i delta}|theta, phi + pi>)`
/// (normalized) over the relative phase `delta`.
pub fn cat_fidelity(rho: &SpinDensity, theta: f64, phi: f64) -> Result<CatFidelity> {
    let a = coherent_spin_state(rho.atoms, theta, phi)?.amplitudes;
    let b = coherent_spin_state(rho.atoms, theta, phi + PI)?.amplitudes;
    let ra = &rho.matrix * &a;
    let rb = &rho.matrix * &b;
    let aa = a.dotc(&ra).re;
    let bb = b.dotc(&rb).re;
    // <a|rho|b>
    let ab = a.dotc(&rb);
    let s = a.dotc(&b);
    let f = |d: f64| {
        let e = C64::from_polar(1.0, d);
        let num = aa + bb + 2.0 * (e * ab).re;
        let den = 2.0 + 2.0 * (e * s).re;
        if den <= 1e-14 {
            0.0
        } else {
            num / den
        }
    };
    let grid = 720;
    let step = 2.0 * PI / grid as f64;
    let (mut best_d, mut best) = (0.0, f(0.0));
    for i in 1..grid {
        let d = i as f64 * step;
        let v = f(d);
        if v > best {
            best = v;
            best_d = d;
        }
    }
    // golden-section refinement around the grid maximum
    let (mut lo, mut hi) = (best_d - step, best_d + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let d = 0.5 * (lo + hi);
    let fd = f(d);
    let (delta, fidelity) = if fd >= best { (d, fd) } else { (best_d, best) };
    Ok(CatFidelity {
        fidelity: fidelity.clamp(0.0, 1.0),
        delta: delta.rem_euclid(2.0 * PI),
    })
}

/// `tau Gamma N^2 < 1`.
pub fn size_limit_check(atoms: usize, tau: f64, mean_gamma: f64) -> bool {
    tau * mean_gamma * ((atoms * atoms) as f64) < 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatReport {
    pub atoms: usize,
    pub tau: f64,
    pub mean_gamma: f64,
    pub fidelity: f64,
    pub fidelity_ideal: f64,
    pub purity: f64,
    pub size_ok: bool,
}

/// Evolve `|pi/2, 0>` to the cat time of `bath` and score it.
pub fn cat_report(
    atoms: usize,
    bath: &BathSpectrum,
    temperature: f64,
    horizon: f64,
) -> Result<CatReport> {
    let tau = mqs_time(bath, horizon)?;
    let gamma_tau = dephasing_gamma(tau, bath, temperature)?;
    let mean = mean_gamma(tau, bath, temperature, 200)?;
    let css = coherent_spin_state(atoms, PI / 2.0, 0.0)?;
    let phase = tau * lamb_shift(tau, bath)?;
    let rho = twist_evolve(&css, phase, gamma_tau)?;
    let ideal = twist_evolve(&css, phase, 0.0)?;
    Ok(CatReport {
        atoms,
        tau,
        mean_gamma: mean,
        fidelity: cat_fidelity(&rho, PI / 2.0, 0.0)?.fidelity,
        fidelity_ideal: cat_fidelity(&ideal, PI / 2.0, 0.0)?.fidelity,
        purity: rho.purity(),
        size_ok: size_limit_check(atoms, tau, mean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fidelity_pure(a: &CollectiveSpinState, b: &CollectiveSpinState) -> f64 {
        a.amplitudes.dotc(&b.amplitudes).norm_sqr()
    }

    #[test]
    fn lamb_shift_limits() {
        let bath = BathSpectrum::single_mode(0.3, 2.0).unwrap();
        assert_eq!(lamb_shift(0.0, &bath).unwrap(), 0.0);
        assert!(lamb_shift(1e-6, &bath).unwrap().abs() < 1e-6);
        let t = 1.7;
        assert_abs_diff_eq!(
            lamb_shift(t, &bath).unwrap(),
            0.3 * (2.0 * t - (2.0 * t).sin()) / (4.0 * t),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(lamb_shift(1e7, &bath).unwrap(), 0.3 / 2.0, epsilon = 1e-7);
    }

    #[test]
    fn lorentzian_grid_converges() {
        let coarse = BathSpectrum::lorentzian(1.0, 10.0, 1.0, DEFAULT_GRID_POINTS).unwrap();
        let fine = BathSpectrum::lorentzian(1.0, 10.0, 1.0, 2 * DEFAULT_GRID_POINTS).unwrap();
        for t in [0.05, 0.3, 1.0, 3.0] {
            let a = lamb_shift(t, &coarse).unwrap();
            let b = lamb_shift(t, &fine).unwrap();
            assert!((a - b).abs() < 1e-6, "t = {t}: {a} vs {b}");
        }
        assert_abs_diff_eq!(coarse.total_coupling2(), 1.0, epsilon = 1e-12);
        assert!(coarse.modes().iter().all(|m| m.omega > 0.0));
    }

    #[test]
    fn gamma_properties() {
        let bath = BathSpectrum::single_mode(0.5, 1.5).unwrap();
        assert_eq!(dephasing_gamma(0.0, &bath, 0.7).unwrap(), 0.0);
        let t = 0.9;
        assert_abs_diff_eq!(
            dephasing_gamma(t, &bath, 0.0).unwrap(),
            0.5 * (1.0 - (1.5 * t).cos()) / 2.25,
            epsilon = 1e-15
        );
        let lor = BathSpectrum::lorentzian(1.0, 10.0, 1.0, 1001).unwrap();
        let temp = 0.5;
        let bound: f64 = lor
            .modes()
            .iter()
            .map(|m| 2.0 * m.coupling2 / (m.omega * m.omega) / (m.omega / (2.0 * temp)).tanh())
            .sum();
        for t in [0.1, 1.0, 10.0, 100.0] {
            let g = dephasing_gamma(t, &lor, temp).unwrap();
            assert!(g >= 0.0 && g <= bound + 1e-12);
        }
    }

    #[test]
    fn css_examples() {
        let up = coherent_spin_state(5, 0.0, 0.3).unwrap();
        assert_abs_diff_eq!(up.amplitudes()[0].norm(), 1.0, epsilon = 1e-15);
        let eq = coherent_spin_state(2, PI / 2.0, 0.0).unwrap();
        let want = [0.5, 0.5f64.sqrt(), 0.5];
        for (a, w) in eq.amplitudes().iter().zip(want) {
            assert_abs_diff_eq!(a.re, w, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn recurrence_at_two_pi() {
        for atoms in [1usize, 2, 7, 10] {
            let css = coherent_spin_state(atoms, 1.1, 0.4).unwrap();
            let back = twist_pure(&css, 2.0 * PI);
            assert!(fidelity_pure(&css, &back) > 1.0 - 1e-9);
            let back = twist_pure(&css, 4.0 * PI);
            assert!(fidelity_pure(&css, &back) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn quarter_turn_makes_a_cat() {
        for atoms in (2..=20).step_by(2) {
            let css = coherent_spin_state(atoms, PI / 2.0, 0.3).unwrap();
            let rho = twist_evolve(&css, PI / 2.0, 0.0).unwrap();
            let f = cat_fidelity(&rho, PI / 2.0, 0.3).unwrap();
            assert!((f.fidelity - 1.0).abs() < 1e-9, "N = {atoms}: {f:?}");
        }
    }

    #[test]
    fn two_atom_cat_by_hand() {
        // |1,1>, |1,0>, |1,-1> = (1/2, 1/sqrt2, 1/2) -> phases (-i, 1, -i)
        let css = coherent_spin_state(2, PI / 2.0, 0.0).unwrap();
        let out = twist_pure(&css, PI / 2.0);
        let want = [
            C64::new(0.0, -0.5),
            C64::new(0.5f64.sqrt(), 0.0),
            C64::new(0.0, -0.5),
        ];
        for (a, w) in out.amplitudes().iter().zip(want) {
            assert!((a - w).norm() < 1e-15);
        }
    }

    #[test]
    fn initial_and_dephased_states_are_not_cats() {
        let css = coherent_spin_state(10, PI / 2.0, 0.0).unwrap();
        let f0 = cat_fidelity(&css.to_density(), PI / 2.0, 0.0)
            .unwrap()
            .fidelity;
        assert!(f0 <= 0.5 + 1e-12);
        let rho = twist_evolve(&css, PI / 2.0, 50.0).unwrap();
        assert!(rho.max_coherence() < 1e-10);
        assert!(cat_fidelity(&rho, PI / 2.0, 0.0).unwrap().fidelity < 1.0 - 1e-3);
    }

    #[test]
    fn mqs_time_examples() {
        assert_abs_diff_eq!(
            solve_mqs_time(|_| Ok(1.0), 100.0).unwrap(),
            PI / 2.0,
            epsilon = 1e-12
        );
        let (eta2, omega) = (0.01, 3.0);
        let bath = BathSpectrum::single_mode(eta2, omega).unwrap();
        let tau = mqs_time(&bath, 1e6).unwrap();
        assert!(((tau - PI * omega / (2.0 * eta2)) / tau).abs() < 0.01);
        assert!(mqs_time(&bath, 1.0).is_err());
    }

    #[test]
    fn mqs_time_solves_equation() {
        let bath = BathSpectrum::lorentzian(1.0, 10.0, 1.0, DEFAULT_GRID_POINTS).unwrap();
        let tau = mqs_time(&bath, 1e4).unwrap();
        assert!((tau * lamb_shift(tau, &bath).unwrap() - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn size_limit_is_strict() {
        assert!(size_limit_check(1000, 5.0, 0.0));
        assert!(!size_limit_check(2, 0.25, 1.0));
        assert!(size_limit_check(2, 0.24, 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn css_is_normalized(atoms in 1usize..60, theta in 0.0f64..PI, phi in -PI..PI) {
            let s = coherent_spin_state(atoms, theta, phi).unwrap();
            prop_assert!((s.amplitudes().norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn purity_falls_with_dephasing(atoms in 1usize..12, g1 in 0.0f64..2.0, dg in 0.0f64..2.0) {
            let css = coherent_spin_state(atoms, 1.0, 0.2).unwrap();
            let a = twist_evolve(&css, 0.7, g1).unwrap().purity();
            let b = twist_evolve(&css, 0.7, g1 + dg).unwrap().purity();
            prop_assert!(b <= a + 1e-12);
            if g1 == 0.0 {
                prop_assert!((a - 1.0).abs() < 1e-12);
            }
        }
    }
}
