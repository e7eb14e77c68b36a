//! Four-mode nonlinear coherent heat engine.
//!
//! Modes are indexed 0..4 for the device's modes 1..4. Modes 1 and 4 are hot
//! (thermal, `nbar_hot`), modes 2 and 3 start empty. Four levels of
//! description are provided: single coherent trajectories, phase-averaged
//! coherent inputs, thermal averages (closed form plus Monte Carlo), and a
//! small-cutoff full quantum propagation.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{invalid, Result};
use crate::fock::{self, Ensemble, ModeRegister, ThermalSpec};
use crate::linalg::{self, bessel_j1, CVector, C64, I, ONE};
use crate::montecarlo::{self, Estimate};
use crate::optics::{Circuit, CircuitElement, PropagationReport};
use crate::thermo::{self, ErgotropyReport, Stokes};

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub nbar_hot: f64,
    /// Input beam-splitter transmissivity.
    pub t2: f64,
    pub chi: f64,
    pub samples: usize,
    pub seed: u64,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t2 > 0.0 && self.t2 < 1.0) {
            return Err(invalid(format!("t2 must lie in (0, 1), got {}", self.t2)));
        }
        if !(self.nbar_hot >= 0.0 && self.nbar_hot.is_finite()) {
            return Err(invalid("nbar_hot must be >= 0"));
        }
        if !self.chi.is_finite() {
            return Err(invalid("chi must be finite"));
        }
        if self.samples == 0 {
            return Err(invalid("samples must be >= 1"));
        }
        Ok(())
    }

    pub fn r2(&self) -> f64 {
        1.0 - self.t2
    }
}

/// Output intensities of modes 1 and 4 for one coherent component with real
/// amplitudes `a1`, `a4` and relative phase `phi`:
/// `(r^2/2) [(a1^2 + a4^2) ± 2 a1 a4 sin(2 t^2 a1 a4 chi cos(phi) - phi)]`.
pub fn semiclassical_trajectory(a1: f64, a4: f64, phi: f64, t2: f64, chi: f64) -> (f64, f64) {
    let r2 = 1.0 - t2;
    let base = a1 * a1 + a4 * a4;
    let interference = 2.0 * a1 * a4 * (2.0 * t2 * a1 * a4 * chi * phi.cos() - phi).sin();
    (
        0.5 * r2 * (base + interference),
        0.5 * r2 * (base - interference),
    )
}

/// Classical fields at the stages of the steering interferometer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldStages {
    /// Modes 2 and 3 after the input splitters.
    pub before_nl: (C64, C64),
    /// Modes 2 and 3 after the cross-Kerr phases.
    pub after_nl: (C64, C64),
    /// Output modes 1 and 4.
    pub output: (C64, C64),
}

/// Propagate coherent amplitudes through the steering interferometer: input
/// splitters of transmissivity `t2`, a balanced mix of the transmitted arms
/// whose intensities drive cross-Kerr phases on the reflected arms, and a
/// balanced output splitter on the reflected arms.
pub fn propagate_fields(alpha1: C64, alpha4: C64, t2: f64, chi: f64) -> FieldStages {
    let (t, r) = (t2.sqrt(), (1.0 - t2).sqrt());
    let (a1, a2) = (alpha1 * t, alpha1 * r);
    let (a4, a3) = (alpha4 * t, alpha4 * r);
    let b_plus = (a1 + a4) * FRAC_1_SQRT_2;
    let b_minus = (a1 - a4) * FRAC_1_SQRT_2;
    let a2k = a2 * C64::from_polar(1.0, chi * b_plus.norm_sqr());
    let a3k = a3 * C64::from_polar(1.0, chi * b_minus.norm_sqr());
    FieldStages {
        before_nl: (a2, a3),
        after_nl: (a2k, a3k),
        output: (
            (a2k + I * a3k) * FRAC_1_SQRT_2,
            (I * a2k + a3k) * FRAC_1_SQRT_2,
        ),
    }
}

/// Stokes parameters of a classical field pair.
pub fn classical_stokes(x: C64, y: C64) -> Stokes {
    let c = x.conj() * y;
    Stokes {
        s0: 0.5 * (x.norm_sqr() + y.norm_sqr()),
        sx: c.re,
        sy: c.im,
        sz: 0.5 * (x.norm_sqr() - y.norm_sqr()),
    }
}

/// Bessel argument `b` and damping `d` of the phase-averaged coherent output.
pub fn steering_factors(a1: f64, a4: f64, t2: f64, chi: f64, quantum: bool) -> (f64, f64) {
    let b = 2.0 * t2 * a1 * a4 * chi.sin();
    let d = if quantum {
        t2 * (1.0 - chi.cos()) * (a1 * a1 + a4 * a4)
    } else {
        0.0
    };
    (b, d)
}

/// Phase-averaged outputs `r^2 a^2 (1 ± J1(b) e^{-d})` for equal amplitudes.
/// The classical variant sets `d = 0`.
pub fn phase_averaged_coherent(
    a1: f64,
    a4: f64,
    t2: f64,
    chi: f64,
    quantum: bool,
) -> Result<(f64, f64)> {
    if (a1 - a4).abs() > 1e-12 * a1.abs().max(1.0) {
        return Err(invalid(
            "phase-averaged formula assumes equal amplitudes a1 = a4",
        ));
    }
    let (b, d) = steering_factors(a1, a4, t2, chi, quantum);
    let s = bessel_j1(b) * (-d).exp();
    let base = (1.0 - t2) * a1 * a1;
    Ok((base * (1.0 + s), base * (1.0 - s)))
}

/// Closed-form thermal steering term `t^2 chi nbar / (1 + t^4 chi^2 nbar^2)^2`.
pub fn steering_term(nbar: f64, t2: f64, chi: f64) -> f64 {
    let x = t2 * chi * nbar;
    x / (1.0 + x * x).powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermalEngineReport {
    pub n1_out: f64,
    pub n4_out: f64,
    pub steering: f64,
    /// `n1_out / (r^2 nbar)`.
    pub steering_gain: f64,
    pub mc_n1_out: f64,
    pub mc_n4_out: f64,
    pub mc_steering: Estimate,
    /// `|mc - closed| / |closed|` of the steering term (absolute when the
    /// closed form vanishes).
    pub discrepancy: f64,
}

/// Closed-form thermal outputs together with a semiclassical Monte Carlo
/// average over thermal coherent components.
pub fn thermal_averaged_output(cfg: &EngineConfig, workers: usize) -> Result<ThermalEngineReport> {
    cfg.validate()?;
    let (nbar, t2, chi) = (cfg.nbar_hot, cfg.t2, cfg.chi);
    let r2 = cfg.r2();
    let steering = steering_term(nbar, t2, chi);
    let mc = montecarlo::mean_of(cfg.seed, cfg.samples, workers, |rng| {
        let a1 = montecarlo::thermal_amplitude(rng, nbar);
        let a4 = montecarlo::thermal_amplitude(rng, nbar);
        let phi = a4.arg() - a1.arg();
        let (o1, o4) = semiclassical_trajectory(a1.norm(), a4.norm(), phi, t2, chi);
        // (n1 - n4) / (2 r^2 nbar) per sample
        if nbar > 0.0 {
            (o1 - o4) / (2.0 * r2 * nbar)
        } else {
            0.0
        }
    })?;
    let discrepancy = if steering.abs() > 0.0 {
        (mc.mean - steering).abs() / steering.abs()
    } else {
        mc.mean.abs()
    };
    Ok(ThermalEngineReport {
        n1_out: r2 * nbar * (1.0 + steering),
        n4_out: r2 * nbar * (1.0 - steering),
        steering,
        steering_gain: 1.0 + steering,
        mc_n1_out: r2 * nbar * (1.0 + mc.mean),
        mc_n4_out: r2 * nbar * (1.0 - mc.mean),
        mc_steering: mc,
        discrepancy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincarePoint {
    pub before: Stokes,
    pub after_nl: Stokes,
    pub output: Stokes,
}

/// Thermal coherent components propagated through the steering
/// interferometer; Stokes parameters of the reflected-arm pair before and
/// after the cross-Kerr stage and of the output pair.
pub fn poincare_cloud(cfg: &EngineConfig, samples: usize) -> Result<Vec<PoincarePoint>> {
    cfg.validate()?;
    let blocks = montecarlo::run_blocks(cfg.seed, samples, 1, |rng, n| {
        (0..n)
            .map(|_| {
                let a1 = montecarlo::thermal_amplitude(rng, cfg.nbar_hot);
                let a4 = montecarlo::thermal_amplitude(rng, cfg.nbar_hot);
                let f = propagate_fields(a1, a4, cfg.t2, cfg.chi);
                PoincarePoint {
                    before: classical_stokes(f.before_nl.0, f.before_nl.1),
                    after_nl: classical_stokes(f.after_nl.0, f.after_nl.1),
                    output: classical_stokes(f.output.0, f.output.1),
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(blocks.into_iter().flatten().collect())
}

/// Wiring of the four-mode quantum circuit.
#[derive(Clone, Debug, PartialEq)]
pub enum EngineCircuit {
    /// Splitters on (1,2) and (3,4), cross-Kerr on (2,3) and (1,4), then the
    /// inverse splitters.
    Reference,
    /// Quantum version of the steering interferometer used by
    /// [`propagate_fields`].
    Steering,
    Custom(Circuit),
}

impl EngineCircuit {
    pub fn build(&self, t2: f64, chi: f64) -> Circuit {
        match self {
            Self::Reference => Circuit::new(vec![
                CircuitElement::beam_splitter(t2, 0, 1),
                CircuitElement::beam_splitter(t2, 2, 3),
                CircuitElement::cross_kerr(chi, 1, 2),
                CircuitElement::cross_kerr(chi, 0, 3),
                CircuitElement::beam_splitter_inverse(t2, 0.0, 0, 1),
                CircuitElement::beam_splitter_inverse(t2, 0.0, 2, 3),
            ]),
            Self::Steering => Circuit::new(vec![
                CircuitElement::beam_splitter(t2, 0, 1),
                CircuitElement::beam_splitter(t2, 3, 2),
                CircuitElement::beam_splitter(0.5, 0, 3),
                CircuitElement::cross_kerr(chi, 0, 1),
                CircuitElement::cross_kerr(chi, 3, 2),
                CircuitElement::beam_splitter_with_phase(0.5, std::f64::consts::FRAC_PI_2, 1, 2),
            ]),
            Self::Custom(c) => c.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FullQuantumReport {
    pub cutoff: usize,
    pub means_before: Vec<f64>,
    pub means_after: Vec<f64>,
    pub entropies_before: Vec<f64>,
    pub entropies_after: Vec<f64>,
    pub joint_entropy_before: f64,
    pub joint_entropy_after: f64,
    pub mode1: ErgotropyReport,
    /// Ergotropy of the whole register with `H = sum_i n_i`.
    pub joint_ergotropy_before: f64,
    pub joint_ergotropy_after: f64,
    /// `n1_out / (r^2 nbar)` with `r^2` of the input splitters.
    pub steering_gain: f64,
    pub truncation_weight: f64,
    pub propagation: PropagationReport,
}

impl FullQuantumReport {
    pub fn marginal_sum_before(&self) -> f64 {
        self.entropies_before.iter().sum()
    }

    pub fn marginal_sum_after(&self) -> f64 {
        self.entropies_after.iter().sum()
    }
}

/// Propagate thermal ⊗ vacuum ⊗ vacuum ⊗ thermal through `circuit`.
///
/// `tolerance` bounds the discarded thermal tail per hot mode; small cutoffs
/// need it relaxed, and the discarded weight is reported.
pub fn full_quantum_engine(
    cfg: &EngineConfig,
    cutoff: usize,
    tolerance: f64,
    circuit: &EngineCircuit,
) -> Result<FullQuantumReport> {
    cfg.validate()?;
    let dims = vec![cutoff; 4];
    let dim = fock::joint_dim(&dims);
    if dim > fock::DEFAULT_DIMENSION_BUDGET {
        return Err(crate::Error::DimensionBudget {
            dim,
            budget: fock::DEFAULT_DIMENSION_BUDGET,
        });
    }
    let spec = ThermalSpec::new(cfg.nbar_hot)?;
    let basis = fock::TruncatedBasis::new(cutoff)?;
    let hot = fock::make_thermal_with_tolerance(spec, basis, tolerance)?;
    let p = hot.diagonal();

    let mut weights = Vec::new();
    let mut members = Vec::new();
    for (n1, &p1) in p.iter().enumerate() {
        for (n4, &p4) in p.iter().enumerate() {
            if p1 * p4 > 0.0 {
                let mut v = CVector::zeros(dim);
                v[fock::joint_index(&dims, &[n1, 0, 0, n4])] = ONE;
                weights.push(p1 * p4);
                members.push(v);
            }
        }
    }
    let trunc = 1.0 - (1.0 - hot.truncation_weight()).powi(2);
    let before = ModeRegister::Ensemble(Ensemble::new(dims, weights, members)?);

    let (after, propagation) = circuit.build(cfg.t2, cfg.chi).apply(&before)?;

    let means = |reg: &ModeRegister| -> Result<Vec<f64>> {
        (0..4).map(|m| fock::mean_number(reg, m)).collect()
    };
    let means_before = means(&before)?;
    let means_after = means(&after)?;
    let mode1 = thermo::ergotropy(&fock::partial_trace(&after, &[0])?)?;
    let r2 = cfg.r2();
    let steering_gain = if cfg.nbar_hot > 0.0 {
        means_after[0] / (r2 * cfg.nbar_hot)
    } else {
        1.0
    };
    Ok(FullQuantumReport {
        cutoff,
        entropies_before: thermo::marginal_entropies(&before)?,
        entropies_after: thermo::marginal_entropies(&after)?,
        joint_entropy_before: thermo::register_entropy(&before)?,
        joint_entropy_after: thermo::register_entropy(&after)?,
        joint_ergotropy_before: joint_ergotropy(&before, &means_before)?,
        joint_ergotropy_after: joint_ergotropy(&after, &means_after)?,
        means_before,
        means_after,
        mode1,
        steering_gain,
        truncation_weight: trunc,
        propagation,
    })
}

/// Ergotropy of a register with `H = sum_i n_i` on the truncated space.
fn joint_ergotropy(reg: &ModeRegister, means: &[f64]) -> Result<f64> {
    let dims = reg.dims();
    let mut energies: Vec<usize> = (0..fock::joint_dim(dims))
        .map(|i| fock::digits(dims, i).iter().sum())
        .collect();
    energies.sort_unstable();
    let spectrum = reg.spectrum()?;
    let passive: f64 = spectrum
        .iter()
        .zip(&energies)
        .map(|(l, &e)| l * e as f64)
        .sum();
    Ok(means.iter().sum::<f64>() - passive)
}

/// Entropy of a truncated, renormalized thermal distribution.
pub fn truncated_thermal_entropy(nbar: f64, cutoff: usize) -> f64 {
    let x = nbar / (1.0 + nbar);
    let p: Vec<f64> = (0..cutoff).map(|n| x.powi(n as i32)).collect();
    let total: f64 = p.iter().sum();
    linalg::entropy_of(p.iter().map(|x| x / total))
}
