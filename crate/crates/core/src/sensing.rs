//! Phase estimation with cross-Kerr-filtered probes, and k-photon noise
//! sensing from output-mode ergotropy.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::fock::{self, DensityOperator, ModeRegister, ThermalSpec, TruncatedBasis};
use crate::linalg::{self, CVector, C64, ONE};
use crate::optics::{self, Circuit, CircuitElement, ElementKind};
use crate::thermo;

/// Pairs of eigenvalues whose sum falls below this are dropped from the
/// spectral QFI sum.
const QFI_EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputKind {
    Thermal,
    Coherent,
    Fock,
}

impl InputKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Thermal => "T",
            Self::Coherent => "C",
            Self::Fock => "F",
        }
    }

    /// Closed-form Fisher information for a mean photon number `nbar`.
    pub fn predicted_qfi(self, nbar: f64) -> f64 {
        match self {
            Self::Thermal => nbar * nbar + nbar,
            Self::Fock => nbar * nbar,
            Self::Coherent => 0.5 * nbar * nbar + 2.0 * nbar,
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Thermal => "thermal",
            Self::Coherent => "coherent",
            Self::Fock => "fock",
        })
    }
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thermal" | "t" => Ok(Self::Thermal),
            "coherent" | "c" => Ok(Self::Coherent),
            "fock" | "f" => Ok(Self::Fock),
            other => Err(invalid(format!("unknown input kind '{other}'"))),
        }
    }
}

/// Probe circuit between the input and the phase-shift plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeLayout {
    /// Balanced splitter followed by the cross-Kerr element.
    MinimalStage,
    /// Balanced splitter, cross-Kerr element, inverse balanced splitter.
    NonlinearMzi,
}

impl ProbeLayout {
    pub fn elements(self, chi: f64) -> Vec<CircuitElement> {
        let mut v = vec![
            CircuitElement::beam_splitter(0.5, 0, 1),
            CircuitElement::cross_kerr(chi, 0, 1),
        ];
        if self == Self::NonlinearMzi {
            v.push(CircuitElement::beam_splitter_inverse(0.5, 0.0, 0, 1));
        }
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MinimalStage => "minimal",
            Self::NonlinearMzi => "mzi",
        }
    }
}

impl std::str::FromStr for ProbeLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimal" => Ok(Self::MinimalStage),
            "mzi" => Ok(Self::NonlinearMzi),
            other => Err(invalid(format!(
                "unknown probe layout '{other}' (minimal|mzi)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QfiResult {
    pub fisher_information: f64,
    /// `1 / sqrt(F_Q)`; infinite when `F_Q = 0`.
    pub phase_error_bound: f64,
    pub kind: InputKind,
    pub nbar: f64,
}

impl QfiResult {
    pub fn new(fisher_information: f64, kind: InputKind, nbar: f64) -> Self {
        Self {
            fisher_information,
            phase_error_bound: 1.0 / fisher_information.sqrt(),
            kind,
            nbar,
        }
    }
}

/// Spectral QFI for the generator `n` of `mode`:
/// `2 sum (l_i - l_j)^2 / (l_i + l_j) |<i|n|j>|^2`.
pub fn qfi_phase(rho: &DensityOperator, mode: usize) -> Result<f64> {
    let dims = rho.dims();
    if mode >= dims.len() {
        return Err(Error::ModeIndex {
            index: mode,
            arity: dims.len(),
        });
    }
    let herm = rho.hermiticity_deviation();
    if herm > fock::HERMITICITY_TOLERANCE {
        return Err(Error::InvalidState(format!("not Hermitian: {herm:.3e}")));
    }
    let (mut vals, vecs) = linalg::hermitian_eigen(rho.matrix());
    if vals.iter().any(|&l| l < -fock::NEGATIVITY_TOLERANCE) {
        return Err(Error::InvalidState("negative eigenvalue".into()));
    }
    for l in vals.iter_mut() {
        *l = l.max(0.0);
    }
    let st = fock::strides(dims);
    let d = rho.dim();
    let g: Vec<f64> = (0..d)
        .map(|i| ((i / st[mode]) % dims[mode]) as f64)
        .collect();
    // G in the eigenbasis: V† diag(g) V
    let gv = nalgebra::DMatrix::from_fn(d, d, |r, c| vecs[(r, c)] * g[r]);
    let gm = vecs.adjoint() * gv;
    let mut f = 0.0;
    for i in 0..d {
        for j in 0..d {
            let s = vals[i] + vals[j];
            if s > QFI_EIGEN_FLOOR {
                f += (vals[i] - vals[j]).powi(2) / s * gm[(i, j)].norm_sqr();
            }
        }
    }
    Ok(2.0 * f)
}

/// `4 Var(n_mode)` of a pure register.
pub fn qfi_pure(state: &fock::PureState, mode: usize) -> Result<f64> {
    let reg = ModeRegister::Pure(state.clone());
    let p = fock::number_distribution(&reg, mode)?;
    let m1 = thermo::mean_energy(&p);
    let m2: f64 = p.iter().enumerate().map(|(n, x)| (n * n) as f64 * x).sum();
    Ok(4.0 * (m2 - m1 * m1))
}

/// Input to the probe: thermal or coherent (mean `nbar`) or Fock (`n`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeInput {
    Thermal(f64),
    Coherent(C64),
    Fock(usize),
}

impl ProbeInput {
    pub fn kind(&self) -> InputKind {
        match self {
            Self::Thermal(_) => InputKind::Thermal,
            Self::Coherent(_) => InputKind::Coherent,
            Self::Fock(_) => InputKind::Fock,
        }
    }

    pub fn nbar(&self) -> f64 {
        match *self {
            Self::Thermal(n) => n,
            Self::Coherent(a) => a.norm_sqr(),
            Self::Fock(n) => n as f64,
        }
    }
}

/// Dense two-mode probe state `input ⊗ |0>` after the layout's circuit, at
/// a per-mode `cutoff`. Thermal tails up to `tolerance` are discarded.
pub fn ck_mzi_probe(
    input: ProbeInput,
    chi: f64,
    layout: ProbeLayout,
    cutoff: usize,
    tolerance: f64,
) -> Result<ModeRegister> {
    let dim = cutoff * cutoff;
    if dim > fock::DEFAULT_DIMENSION_BUDGET {
        return Err(Error::DimensionBudget {
            dim,
            budget: fock::DEFAULT_DIMENSION_BUDGET,
        });
    }
    let basis = TruncatedBasis::new(cutoff)?;
    let a = match input {
        ProbeInput::Thermal(n) => ModeRegister::Mixed(fock::make_thermal_with_tolerance(
            ThermalSpec::new(n)?,
            basis,
            tolerance,
        )?),
        ProbeInput::Coherent(alpha) => {
            ModeRegister::Pure(fock::make_coherent_with_tolerance(alpha, basis, tolerance)?)
        }
        ProbeInput::Fock(n) => ModeRegister::Pure(fock::make_fock(n, basis)?),
    };
    let vac = ModeRegister::Pure(fock::make_fock(0, basis)?);
    let joint = fock::tensor(&[a, vac])?;
    let (out, _) = Circuit::new(layout.elements(chi)).apply(&joint)?;
    Ok(out)
}

/// Per-sector first and second moments of `n_a` after the probe circuit
/// acting on `|N, 0>`, for `N = 0..=max_total`.
#[derive(Clone, Debug)]
pub struct SectorMoments {
    pub chi: f64,
    pub layout: ProbeLayout,
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
}

impl SectorMoments {
    pub fn compute(chi: f64, layout: ProbeLayout, max_total: usize) -> Result<Self> {
        let kinds: Vec<ElementKind> = layout.elements(chi).into_iter().map(|e| e.kind).collect();
        let mut mean = Vec::with_capacity(max_total + 1);
        let mut second = Vec::with_capacity(max_total + 1);
        for total in 0..=max_total {
            let mut v = CVector::zeros(total + 1);
            v[0] = ONE;
            for k in &kinds {
                v = optics::sector_apply(k, total, &v)?;
            }
            let (mut m1, mut m2) = (0.0, 0.0);
            for (j, a) in v.iter().enumerate() {
                let na = (total - j) as f64;
                let p = a.norm_sqr();
                m1 += na * p;
                m2 += na * na * p;
            }
            let norm = v.norm_squared();
            mean.push(m1 / norm);
            second.push(m2 / norm);
        }
        Ok(Self {
            chi,
            layout,
            mean,
            second,
        })
    }

    pub fn max_total(&self) -> usize {
        self.mean.len() - 1
    }

    fn variance(&self, total: usize) -> f64 {
        (self.second[total] - self.mean[total].powi(2)).max(0.0)
    }

    /// QFI of `input` built from the sector moments. A thermal input is a
    /// mixture over sectors (`F = sum p_N 4 Var_N`); a coherent input is a
    /// superposition across sectors (`F = 4 Var`).
    pub fn qfi(&self, input: ProbeInput) -> Result<QfiResult> {
        let top = self.max_total();
        let f = match input {
            ProbeInput::Fock(n) => {
                if n > top {
                    return Err(invalid(format!("Fock level {n} beyond sector range {top}")));
                }
                4.0 * self.variance(n)
            }
            ProbeInput::Thermal(nbar) => {
                let spec = ThermalSpec::new(nbar)?;
                let weights: Vec<f64> = (0..=top).map(|n| spec.probability(n)).collect();
                let total: f64 = weights.iter().sum();
                4.0 * weights
                    .iter()
                    .enumerate()
                    .map(|(n, w)| w * self.variance(n))
                    .sum::<f64>()
                    / total
            }
            ProbeInput::Coherent(alpha) => {
                let weights: Vec<f64> = fock::coherent_amplitudes(alpha, top + 1)
                    .iter()
                    .map(|a| a.norm_sqr())
                    .collect();
                let total: f64 = weights.iter().sum();
                let m1: f64 = weights
                    .iter()
                    .zip(&self.mean)
                    .map(|(w, m)| w * m)
                    .sum::<f64>()
                    / total;
                let m2: f64 = weights
                    .iter()
                    .zip(&self.second)
                    .map(|(w, m)| w * m)
                    .sum::<f64>()
                    / total;
                4.0 * (m2 - m1 * m1)
            }
        };
        Ok(QfiResult::new(f, input.kind(), input.nbar()))
    }
}

/// Largest photon-number sector needed so the discarded input weight stays
/// below `tolerance`.
pub fn sector_range(input: ProbeInput, tolerance: f64) -> usize {
    match input {
        ProbeInput::Fock(n) => n,
        ProbeInput::Thermal(nbar) => ThermalSpec::new(nbar.max(0.0))
            .map(|s| s.cutoff_for(tolerance))
            .unwrap_or(1),
        ProbeInput::Coherent(alpha) => {
            let mut c = fock::coherent_min_cutoff(alpha);
            loop {
                let kept: f64 = fock::coherent_amplitudes(alpha, c)
                    .iter()
                    .map(|a| a.norm_sqr())
                    .sum();
                if 1.0 - kept <= tolerance {
                    return c;
                }
                c += 8;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QfiRow {
    pub kind: InputKind,
    pub nbar: f64,
    pub chi: f64,
    pub fisher_information: f64,
    pub predicted: f64,
    pub rel_dev: f64,
    pub phase_error_bound: f64,
}

/// QFI for each input kind and mean photon number, with the closed-form
/// prediction and relative deviation. Fock inputs need integer `nbar`.
pub fn qfi_scan(
    kinds: &[InputKind],
    nbars: &[f64],
    chi: f64,
    layout: ProbeLayout,
    tolerance: f64,
) -> Result<Vec<QfiRow>> {
    let mut inputs = Vec::new();
    for &kind in kinds {
        for &nbar in nbars {
            if !(nbar >= 0.0 && nbar.is_finite()) {
                return Err(invalid(format!("invalid mean photon number {nbar}")));
            }
            let input = match kind {
                InputKind::Thermal => ProbeInput::Thermal(nbar),
                InputKind::Coherent => ProbeInput::Coherent(C64::from(nbar.sqrt())),
                InputKind::Fock => {
                    if nbar.fract() != 0.0 {
                        return Err(invalid(format!(
                            "Fock input needs an integer photon number, got {nbar}"
                        )));
                    }
                    ProbeInput::Fock(nbar as usize)
                }
            };
            inputs.push((input, nbar));
        }
    }
    let top = inputs
        .iter()
        .map(|&(i, _)| sector_range(i, tolerance))
        .max()
        .unwrap_or(0);
    let moments = SectorMoments::compute(chi, layout, top)?;
    inputs
        .into_iter()
        .map(|(input, nbar)| {
            let q = moments.qfi(input)?;
            let predicted = q.kind.predicted_qfi(nbar);
            Ok(QfiRow {
                kind: q.kind,
                nbar,
                chi,
                fisher_information: q.fisher_information,
                predicted,
                rel_dev: if predicted > 0.0 {
                    (q.fisher_information - predicted) / predicted
                } else {
                    q.fisher_information
                },
                phase_error_bound: q.phase_error_bound,
            })
        })
        .collect()
}

/// Default cross-Kerr phase per photon for the probes.
pub const OPTIMAL_CHI: f64 = FRAC_PI_2;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSensorTrace {
    pub times: Vec<f64>,
    pub ergotropy: Vec<f64>,
    pub k: usize,
    pub g: f64,
}

/// Thermal-input k-photon coupler resolved into photon-number sectors.
///
/// The input is diagonal and the coupler conserves `n_a + n_b`, so each
/// sector `|N, 0>` evolves on its own and the output mode stays diagonal.
/// The unit-strength sector Hamiltonians are diagonalized once; evolving to
/// any `g t` is then a phase rotation.
#[derive(Clone, Debug)]
pub struct CouplerSectors {
    k: usize,
    weights: Vec<f64>,
    sectors: Vec<(Vec<f64>, linalg::CMatrix)>,
}

impl CouplerSectors {
    pub fn new(nbar: f64, k: usize, tolerance: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k-photon coupler needs k >= 1"));
        }
        let spec = ThermalSpec::new(nbar)?;
        let top = spec.cutoff_for(tolerance).saturating_sub(1);
        let raw: Vec<f64> = (0..=top).map(|n| spec.probability(n)).collect();
        let total: f64 = raw.iter().sum();
        let unit = ElementKind::KPhotonCoupler {
            g: 1.0,
            tau: 1.0,
            k,
        };
        let sectors = (0..=top)
            .map(|n| {
                let d = n + 1;
                // H = i G, with G the anti-Hermitian unit generator
                let h = linalg::CMatrix::from_fn(d, d, |r, c| {
                    linalg::I * optics::generator_element(&unit, (n - r, r), (n - c, c))
                });
                linalg::hermitian_eigen(&h)
            })
            .collect();
        Ok(Self {
            k,
            weights: raw.iter().map(|w| w / total).collect(),
            sectors,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Output-mode photon distribution after coupling for `g t = s`.
    pub fn output_distribution(&self, s: f64) -> Vec<f64> {
        let mut pb = vec![0.0; self.sectors.len()];
        for (w, (vals, vecs)) in self.weights.iter().zip(&self.sectors) {
            let phases: Vec<C64> = vals
                .iter()
                .enumerate()
                .map(|(m, l)| C64::from_polar(1.0, -s * l) * vecs[(0, m)].conj())
                .collect();
            for (j, p) in pb.iter_mut().enumerate().take(vals.len()) {
                let amp: C64 = (0..vals.len()).map(|m| vecs[(j, m)] * phases[m]).sum();
                *p += w * amp.norm_sqr();
            }
        }
        let total: f64 = pb.iter().sum();
        pb.iter().map(|x| x / total).collect()
    }

    pub fn trace(&self, g: f64, times: &[f64]) -> Result<NoiseSensorTrace> {
        if !(g >= 0.0) {
            return Err(invalid("coupling g must be >= 0"));
        }
        let ergotropy = times
            .iter()
            .map(|&t| {
                if !(t >= 0.0) {
                    return Err(invalid("times must be >= 0"));
                }
                Ok(
                    thermo::ergotropy_of_diagonal(&self.output_distribution(g * t))?
                        .ergotropy
                        .max(0.0),
                )
            })
            .collect::<Result<_>>()?;
        Ok(NoiseSensorTrace {
            times: times.to_vec(),
            ergotropy,
            k: self.k,
            g,
        })
    }
}

/// Output-mode ergotropy after `exp[-i g t (a†^k b^k + h.c.)]` on
/// thermal(`nbar`) ⊗ vacuum, for each `t` in `times`.
pub fn noise_sensor_trace(
    nbar: f64,
    g: f64,
    k: usize,
    times: &[f64],
    tolerance: f64,
) -> Result<NoiseSensorTrace> {
    CouplerSectors::new(nbar, k, tolerance)?.trace(g, times)
}

/// Dense-register version of [`noise_sensor_trace`] at a fixed per-mode
/// cutoff, used to cross-check the sector evolution.
pub fn noise_sensor_trace_dense(
    nbar: f64,
    g: f64,
    k: usize,
    times: &[f64],
    cutoff: usize,
    tolerance: f64,
) -> Result<NoiseSensorTrace> {
    let basis = TruncatedBasis::new(cutoff)?;
    let th = ModeRegister::Mixed(fock::make_thermal_with_tolerance(
        ThermalSpec::new(nbar)?,
        basis,
        tolerance,
    )?);
    let vac = ModeRegister::Pure(fock::make_fock(0, basis)?);
    let joint = fock::tensor(&[th, vac])?;
    let mut ergotropy = Vec::with_capacity(times.len());
    for &t in times {
        let c = Circuit::new(vec![CircuitElement::k_photon_coupler(g, t, k, 0, 1)]);
        let (out, _) = c.apply(&joint)?;
        let rho_b = fock::partial_trace(&out, &[1])?;
        ergotropy.push(thermo::ergotropy(&rho_b)?.ergotropy.max(0.0));
    }
    Ok(NoiseSensorTrace {
        times: times.to_vec(),
        ergotropy,
        k,
        g,
    })
}

/// Traces whose ergotropy never exceeds this are taken as linear coupling.
pub const ZERO_TRACE_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GridFit {
    pub k: usize,
    pub g: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classification {
    /// No ergotropy anywhere: linear or Raman-type coupling.
    LinearOrRaman,
    Nonlinear {
        best: GridFit,
        /// Best fit for every candidate order.
        per_order: Vec<GridFit>,
    },
}

/// Logarithmic grid of coupling strengths.
pub fn log_grid(g_min: f64, g_max: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![g_min];
    }
    let (a, b) = (g_min.ln(), g_max.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Least-squares match of an observed ergotropy trace against simulated
/// traces on a `(k, g)` grid, refined once around each order's minimum.
pub fn classify_nonlinearity(
    times: &[f64],
    observed: &[f64],
    nbar: f64,
    candidates: &[usize],
    grid: &[f64],
    tolerance: f64,
) -> Result<Classification> {
    if times.len() != observed.len() || times.is_empty() {
        return Err(invalid("need one observation per time point"));
    }
    if candidates.is_empty() || grid.is_empty() {
        return Err(invalid("need candidate orders and a coupling grid"));
    }
    if observed.iter().all(|&e| e.abs() < ZERO_TRACE_THRESHOLD) {
        return Ok(Classification::LinearOrRaman);
    }
    let residual = |sectors: &CouplerSectors, g: f64| -> Result<f64> {
        let sim = sectors.trace(g, times)?;
        Ok(sim
            .ergotropy
            .iter()
            .zip(observed)
            .map(|(s, o)| (s - o).powi(2))
            .sum())
    };
    let mut per_order = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let sectors = CouplerSectors::new(nbar, k, tolerance)?;
        let coarse: Vec<f64> = grid
            .iter()
            .map(|&g| residual(&sectors, g))
            .collect::<Result<_>>()?;
        let i = coarse
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(grid.len() - 1)];
        let mut best = GridFit {
            k,
            g: grid[i],
            residual: coarse[i],
        };
        if hi > lo {
            for g in log_grid(lo, hi, 21) {
                let r = residual(&sectors, g)?;
                if r < best.residual {
                    best = GridFit { k, g, residual: r };
                }
            }
        }
        per_order.push(best);
    }
    let best = per_order
        .iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .cloned()
        .ok_or_else(|| invalid("no candidates"))?;
    Ok(Classification::Nonlinear { best, per_order })
}
