//! Truncated Fock-space states and their algebra.
//!
//! Multimode states use a fixed Kronecker ordering: the first mode varies
//! slowest, so the joint index of `|n_0, n_1, ..., n_{M-1}>` is
//! `sum_k n_k * prod_{l > k} d_l`.
//!
//! Every constructor renormalizes what it keeps and records the discarded
//! probability as `truncation_weight` instead of dropping it silently.
//! Units are `hbar * omega = 1` and `k_B = 1`, so temperature only enters
//! through the mean occupation `nbar`.

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64, ONE, ZERO};

pub const DEFAULT_TRUNCATION_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_DIMENSION_BUDGET: usize = 4096;

/// Max elementwise deviation from Hermiticity accepted for a density operator.
pub const HERMITICITY_TOLERANCE: f64 = 1e-12;
/// Eigenvalues in `(-NEGATIVITY_TOLERANCE, 0)` are roundoff and get clamped.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruncatedBasis {
    cutoff: usize,
}

impl TruncatedBasis {
    /// Keeps `|0>` through `|cutoff - 1>`.
    pub fn new(cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(invalid("cutoff must be at least 1"));
        }
        Ok(Self { cutoff })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.cutoff
    }
}

/// Thermal occupation of a single mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalSpec {
    nbar: f64,
}

impl ThermalSpec {
    pub fn new(nbar: f64) -> Result<Self> {
        if !(nbar.is_finite() && nbar >= 0.0) {
            return Err(invalid(format!(
                "mean photon number must be >= 0, got {nbar}"
            )));
        }
        Ok(Self { nbar })
    }

    pub fn nbar(&self) -> f64 {
        self.nbar
    }

    /// `exp(-1/T) = nbar / (1 + nbar)`.
    pub fn boltzmann_factor(&self) -> f64 {
        self.nbar / (1.0 + self.nbar)
    }

    /// Untruncated geometric weight `nbar^n / (1 + nbar)^(n+1)`.
    pub fn probability(&self, n: usize) -> f64 {
        self.boltzmann_factor().powi(n as i32) / (1.0 + self.nbar)
    }

    /// Probability mass above the first `cutoff` levels.
    pub fn tail_weight(&self, cutoff: usize) -> f64 {
        self.boltzmann_factor().powi(cutoff as i32)
    }

    /// Smallest cutoff whose discarded tail stays at or below `tolerance`.
    pub fn cutoff_for(&self, tolerance: f64) -> usize {
        let x = self.boltzmann_factor();
        if x == 0.0 {
            return 1;
        }
        let c = (tolerance.ln() / x.ln()).ceil().max(1.0) as usize;
        // guard against rounding on the boundary
        if self.tail_weight(c) > tolerance {
            c + 1
        } else {
            c
        }
    }
}

/// Normalized amplitude vector over a product of truncated modes.
#[derive(Clone, Debug)]
pub struct PureState {
    dims: Vec<usize>,
    amplitudes: CVector,
    truncation_weight: f64,
}

/// Density operator over a product of truncated modes.
#[derive(Clone, Debug)]
pub struct DensityOperator {
    dims: Vec<usize>,
    matrix: CMatrix,
    truncation_weight: f64,
}

/// Mixture `sum_i w_i |psi_i><psi_i|` of normalized pure states; the
/// compact form of a thermal input pushed through a unitary.
#[derive(Clone, Debug)]
pub struct Ensemble {
    dims: Vec<usize>,
    weights: Vec<f64>,
    members: Vec<CVector>,
    truncation_weight: f64,
}

/// Joint state of an ordered list of modes.
#[derive(Clone, Debug)]
pub enum ModeRegister {
    Pure(PureState),
    Mixed(DensityOperator),
    Ensemble(Ensemble),
}

pub(crate) fn joint_dim(dims: &[usize]) -> usize {
    dims.iter().product()
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Occupation numbers of joint index `idx`.
pub fn digits(dims: &[usize], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = idx % dims[k];
        idx /= dims[k];
    }
    out
}

pub fn joint_index(dims: &[usize], occupations: &[usize]) -> usize {
    strides(dims)
        .iter()
        .zip(occupations)
        .map(|(s, n)| s * n)
        .sum()
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(invalid(format!("invalid mode dimensions {dims:?}")));
    }
    Ok(())
}

fn combine_truncation(a: f64, b: f64) -> f64 {
    1.0 - (1.0 - a) * (1.0 - b)
}

impl PureState {
    /// Normalizes `amplitudes`, recording the missing norm as truncation weight.
    pub fn from_amplitudes(dims: Vec<usize>, amplitudes: CVector) -> Result<Self> {
        check_dims(&dims)?;
        if amplitudes.len() != joint_dim(&dims) {
            return Err(Error::ShapeMismatch {
                expected: joint_dim(&dims),
                got: amplitudes.len(),
            });
        }
        let norm2 = amplitudes.norm_squared();
        if !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(Error::InvalidState("zero or non-finite norm".into()));
        }
        let truncation_weight = (1.0 - norm2).max(0.0);
        Ok(Self {
            dims,
            amplitudes: amplitudes / C64::from(norm2.sqrt()),
            truncation_weight,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn truncation_weight(&self) -> f64 {
        self.truncation_weight
    }

    pub fn with_truncation_weight(mut self, w: f64) -> Self {
        self.truncation_weight = w;
        self
    }

    pub fn to_density(&self) -> DensityOperator {
        let v = &self.amplitudes;
        DensityOperator {
            dims: self.dims.clone(),
            matrix: v * v.adjoint(),
            truncation_weight: self.truncation_weight,
        }
    }

    pub fn overlap(&self, other: &PureState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }
}

impl DensityOperator {
    /// Validates Hermiticity and trace; a trace within `tolerance` below one
    /// is renormalized and the deficit recorded.
    pub fn from_matrix(dims: Vec<usize>, matrix: CMatrix, tolerance: f64) -> Result<Self> {
        check_dims(&dims)?;
        let d = joint_dim(&dims);
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: matrix.nrows(),
            });
        }
        let herm = linalg::hermiticity_deviation(&matrix);
        if herm > HERMITICITY_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "not Hermitian: max deviation {herm:.3e}"
            )));
        }
        let trace = matrix.trace().re;
        if !(trace > 0.0) || trace > 1.0 + 1e-10 || 1.0 - trace > tolerance {
            return Err(Error::InvalidState(format!("trace {trace} is not 1")));
        }
        Ok(Self {
            dims,
            matrix: matrix / C64::from(trace),
            truncation_weight: (1.0 - trace).max(0.0),
        })
    }

    /// Diagonal operator with the given populations (renormalized).
    pub fn from_diagonal(dims: Vec<usize>, probs: &[f64]) -> Result<Self> {
        check_dims(&dims)?;
        if probs.len() != joint_dim(&dims) {
            return Err(Error::ShapeMismatch {
                expected: joint_dim(&dims),
                got: probs.len(),
            });
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidState("negative population".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidState("empty distribution".into()));
        }
        let diag = CVector::from_iterator(probs.len(), probs.iter().map(|&p| C64::from(p / total)));
        Ok(Self {
            dims,
            matrix: CMatrix::from_diagonal(&diag),
            truncation_weight: (1.0 - total).max(0.0),
        })
    }

    pub(crate) fn from_parts_unchecked(
        dims: Vec<usize>,
        matrix: CMatrix,
        truncation_weight: f64,
    ) -> Self {
        Self {
            dims,
            matrix,
            truncation_weight,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn truncation_weight(&self) -> f64 {
        self.truncation_weight
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        linalg::hermiticity_deviation(&self.matrix)
    }

    /// Eigenvalues in descending order after clamping roundoff negativity.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        clamp_spectrum(linalg::hermitian_eigenvalues(&self.matrix))
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)].norm() <= tol))
    }
}

/// Sorts descending and clamps eigenvalues in `(-1e-10, 0)` to zero; larger
/// negativity means the input was not a state.
pub(crate) fn clamp_spectrum(mut values: Vec<f64>) -> Result<Vec<f64>> {
    if let Some(&min) = values.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -NEGATIVITY_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
    }
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

impl Ensemble {
    pub fn new(dims: Vec<usize>, weights: Vec<f64>, members: Vec<CVector>) -> Result<Self> {
        check_dims(&dims)?;
        if weights.len() != members.len() || weights.is_empty() {
            return Err(invalid("ensemble needs one weight per member"));
        }
        let d = joint_dim(&dims);
        let mut normed = Vec::with_capacity(members.len());
        for m in members {
            if m.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: m.len(),
                });
            }
            let n = m.norm();
            if !(n > 0.0) {
                return Err(Error::InvalidState("zero ensemble member".into()));
            }
            normed.push(m / C64::from(n));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidState("negative ensemble weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidState("ensemble weights sum to zero".into()));
        }
        Ok(Self {
            dims,
            weights: weights.iter().map(|w| w / total).collect(),
            members: normed,
            truncation_weight: (1.0 - total).max(0.0),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[CVector] {
        &self.members
    }

    pub fn truncation_weight(&self) -> f64 {
        self.truncation_weight
    }

    pub fn to_density(&self) -> DensityOperator {
        let d = joint_dim(&self.dims);
        let mut m = CMatrix::zeros(d, d);
        for (w, v) in self.weights.iter().zip(&self.members) {
            m += v * v.adjoint() * C64::from(*w);
        }
        DensityOperator::from_parts_unchecked(self.dims.clone(), m, self.truncation_weight)
    }

    /// Nonzero spectrum from the weighted Gram matrix, which shares the
    /// nonzero eigenvalues of the joint density operator.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let k = self.members.len();
        let sw: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let gram = CMatrix::from_fn(k, k, |i, j| {
            self.members[i].dotc(&self.members[j]) * C64::from(sw[i] * sw[j])
        });
        clamp_spectrum(linalg::hermitian_eigenvalues(&gram))
    }
}

impl ModeRegister {
    pub fn dims(&self) -> &[usize] {
        match self {
            Self::Pure(p) => p.dims(),
            Self::Mixed(m) => m.dims(),
            Self::Ensemble(e) => e.dims(),
        }
    }

    pub fn arity(&self) -> usize {
        self.dims().len()
    }

    pub fn joint_dim(&self) -> usize {
        joint_dim(self.dims())
    }

    pub fn truncation_weight(&self) -> f64 {
        match self {
            Self::Pure(p) => p.truncation_weight,
            Self::Mixed(m) => m.truncation_weight,
            Self::Ensemble(e) => e.truncation_weight,
        }
    }

    pub fn to_density(&self) -> DensityOperator {
        match self {
            Self::Pure(p) => p.to_density(),
            Self::Mixed(m) => m.clone(),
            Self::Ensemble(e) => e.to_density(),
        }
    }

    /// Joint spectrum, descending, roundoff-clamped.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        match self {
            Self::Pure(_) => Ok(vec![1.0]),
            Self::Mixed(m) => m.spectrum(),
            Self::Ensemble(e) => e.spectrum(),
        }
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.arity() {
            return Err(Error::ModeIndex {
                index: mode,
                arity: self.arity(),
            });
        }
        Ok(())
    }

    /// Apply `op`, acting on the listed modes (first listed slowest in the
    /// local index), to the whole register. The lost norm of a non-unitary
    /// `op` is folded into the truncation weight.
    pub fn apply_local(&self, op: &CMatrix, modes: &[usize]) -> Result<ModeRegister> {
        for &m in modes {
            self.check_mode(m)?;
        }
        for (i, a) in modes.iter().enumerate() {
            if modes[..i].contains(a) {
                return Err(invalid(format!("mode {a} listed twice")));
            }
        }
        let plan = LocalPlan::new(self.dims(), modes);
        if op.nrows() != plan.local_dim || op.ncols() != plan.local_dim {
            return Err(Error::ShapeMismatch {
                expected: plan.local_dim,
                got: op.nrows(),
            });
        }
        Ok(match self {
            Self::Pure(p) => {
                let v = plan.apply_vec(op, &p.amplitudes);
                let norm2 = v.norm_squared();
                Self::Pure(PureState {
                    dims: p.dims.clone(),
                    amplitudes: v / C64::from(norm2.sqrt()),
                    truncation_weight: combine_truncation(
                        p.truncation_weight,
                        (1.0 - norm2).max(0.0),
                    ),
                })
            }
            Self::Mixed(m) => {
                let a = plan.apply_columns(op, &m.matrix);
                let b = plan.apply_columns(op, &a.adjoint()).adjoint();
                let tr = b.trace().re;
                Self::Mixed(DensityOperator {
                    dims: m.dims.clone(),
                    matrix: b / C64::from(tr),
                    truncation_weight: combine_truncation(m.truncation_weight, (1.0 - tr).max(0.0)),
                })
            }
            Self::Ensemble(e) => {
                let mut lost = 0.0;
                let members = e
                    .members
                    .iter()
                    .zip(&e.weights)
                    .map(|(v, w)| {
                        let out = plan.apply_vec(op, v);
                        let n2 = out.norm_squared();
                        lost += w * (1.0 - n2).max(0.0);
                        out / C64::from(n2.sqrt())
                    })
                    .collect();
                Self::Ensemble(Ensemble {
                    dims: e.dims.clone(),
                    weights: e.weights.clone(),
                    members,
                    truncation_weight: combine_truncation(e.truncation_weight, lost),
                })
            }
        })
    }
}

/// Index bookkeeping for an operator acting on a subset of modes.
pub(crate) struct LocalPlan {
    pub(crate) local_dim: usize,
    local_offsets: Vec<usize>,
    env_offsets: Vec<usize>,
}

impl LocalPlan {
    pub(crate) fn new(dims: &[usize], modes: &[usize]) -> Self {
        let st = strides(dims);
        let local_dims: Vec<usize> = modes.iter().map(|&m| dims[m]).collect();
        let local_dim = joint_dim(&local_dims);
        let local_offsets = (0..local_dim)
            .map(|li| {
                digits(&local_dims, li)
                    .iter()
                    .zip(modes)
                    .map(|(n, &m)| n * st[m])
                    .sum()
            })
            .collect();
        let env_modes: Vec<usize> = (0..dims.len()).filter(|k| !modes.contains(k)).collect();
        let env_dims: Vec<usize> = env_modes.iter().map(|&m| dims[m]).collect();
        let env_dim = joint_dim(&env_dims);
        let env_offsets = (0..env_dim)
            .map(|ei| {
                digits(&env_dims, ei)
                    .iter()
                    .zip(&env_modes)
                    .map(|(n, &m)| n * st[m])
                    .sum()
            })
            .collect();
        Self {
            local_dim,
            local_offsets,
            env_offsets,
        }
    }

    fn apply_slice(&self, op: &CMatrix, input: &[C64], output: &mut [C64], scratch: &mut Vec<C64>) {
        for &base in &self.env_offsets {
            scratch.clear();
            scratch.extend(self.local_offsets.iter().map(|&o| input[base + o]));
            for (i, &oi) in self.local_offsets.iter().enumerate() {
                let mut acc = ZERO;
                for (j, &x) in scratch.iter().enumerate() {
                    if x != ZERO {
                        acc += op[(i, j)] * x;
                    }
                }
                output[base + oi] = acc;
            }
        }
    }

    fn apply_vec(&self, op: &CMatrix, v: &CVector) -> CVector {
        let mut out = CVector::zeros(v.len());
        let mut scratch = Vec::with_capacity(self.local_dim);
        self.apply_slice(op, v.as_slice(), out.as_mut_slice(), &mut scratch);
        out
    }

    pub(crate) fn apply_columns(&self, op: &CMatrix, m: &CMatrix) -> CMatrix {
        let n = m.nrows();
        let mut out = CMatrix::zeros(n, m.ncols());
        let mut scratch = Vec::with_capacity(self.local_dim);
        for c in 0..m.ncols() {
            let input = m.column(c);
            let mut output = out.column_mut(c);
            self.apply_slice(op, input.as_slice(), output.as_mut_slice(), &mut scratch);
        }
        out
    }
}

/// Thermal state with the default truncation tolerance.
pub fn make_thermal(spec: ThermalSpec, basis: TruncatedBasis) -> Result<DensityOperator> {
    make_thermal_with_tolerance(spec, basis, DEFAULT_TRUNCATION_TOLERANCE)
}

pub fn make_thermal_with_tolerance(
    spec: ThermalSpec,
    basis: TruncatedBasis,
    tolerance: f64,
) -> Result<DensityOperator> {
    let deficit = spec.tail_weight(basis.cutoff());
    if deficit > tolerance {
        return Err(Error::Truncation {
            deficit,
            tolerance,
            cutoff: basis.cutoff(),
        });
    }
    let probs: Vec<f64> = (0..basis.cutoff()).map(|n| spec.probability(n)).collect();
    let mut rho = DensityOperator::from_diagonal(vec![basis.cutoff()], &probs)?;
    rho.truncation_weight = deficit;
    Ok(rho)
}

/// Smallest cutoff accepted for a coherent amplitude.
pub fn coherent_min_cutoff(alpha: C64) -> usize {
    let m = alpha.norm_sqr();
    (m + 8.0 * m.sqrt() + 10.0).ceil() as usize
}

/// Coherent state with Poissonian amplitudes `e^{-|a|^2/2} a^n / sqrt(n!)`.
pub fn make_coherent(alpha: C64, basis: TruncatedBasis) -> Result<PureState> {
    make_coherent_with_tolerance(alpha, basis, DEFAULT_TRUNCATION_TOLERANCE)
}

pub fn make_coherent_with_tolerance(
    alpha: C64,
    basis: TruncatedBasis,
    tolerance: f64,
) -> Result<PureState> {
    let c = basis.cutoff();
    let amps = coherent_amplitudes(alpha, c);
    let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let deficit = (1.0 - kept).max(0.0);
    if c < coherent_min_cutoff(alpha) || deficit > tolerance {
        return Err(Error::Truncation {
            deficit,
            tolerance,
            cutoff: c,
        });
    }
    PureState::from_amplitudes(vec![c], CVector::from_vec(amps))
}

/// Raw (unnormalized after truncation) coherent amplitudes.
pub(crate) fn coherent_amplitudes(alpha: C64, cutoff: usize) -> Vec<C64> {
    let mut amps = Vec::with_capacity(cutoff);
    let mut a = C64::from((-0.5 * alpha.norm_sqr()).exp());
    for n in 0..cutoff {
        if n > 0 {
            a = a * alpha / (n as f64).sqrt();
        }
        amps.push(a);
    }
    amps
}

pub fn make_fock(n: usize, basis: TruncatedBasis) -> Result<PureState> {
    if n >= basis.cutoff() {
        return Err(invalid(format!(
            "Fock level {n} needs cutoff > {n}, have {}",
            basis.cutoff()
        )));
    }
    let mut v = CVector::zeros(basis.cutoff());
    v[n] = ONE;
    PureState::from_amplitudes(vec![basis.cutoff()], v)
}

/// Joint state of independent subsystems, first argument slowest.
pub fn tensor(states: &[ModeRegister]) -> Result<ModeRegister> {
    tensor_with_budget(states, DEFAULT_DIMENSION_BUDGET)
}

pub fn tensor_with_budget(states: &[ModeRegister], budget: usize) -> Result<ModeRegister> {
    let Some(first) = states.first() else {
        return Err(invalid("tensor of an empty list"));
    };
    let dims: Vec<usize> = states
        .iter()
        .flat_map(|s| s.dims().iter().copied())
        .collect();
    let dim = joint_dim(&dims);
    if dim > budget {
        return Err(Error::DimensionBudget { dim, budget });
    }
    let any_mixed = states.iter().any(|s| matches!(s, ModeRegister::Mixed(_)));
    let any_ensemble = states
        .iter()
        .any(|s| matches!(s, ModeRegister::Ensemble(_)));
    let trunc = states
        .iter()
        .fold(0.0, |acc, s| combine_truncation(acc, s.truncation_weight()));

    if any_mixed {
        let mut m = first.to_density().matrix;
        for s in &states[1..] {
            m = linalg::kron(&m, &s.to_density().matrix);
        }
        return Ok(ModeRegister::Mixed(DensityOperator {
            dims,
            matrix: m,
            truncation_weight: trunc,
        }));
    }
    if any_ensemble {
        let mut weights = vec![1.0];
        let mut members = vec![CVector::from_element(1, ONE)];
        for s in states {
            let (ws, vs): (Vec<f64>, Vec<CVector>) = match s {
                ModeRegister::Pure(p) => (vec![1.0], vec![p.amplitudes.clone()]),
                ModeRegister::Ensemble(e) => (e.weights.clone(), e.members.clone()),
                ModeRegister::Mixed(_) => unreachable!(),
            };
            let mut nw = Vec::with_capacity(weights.len() * ws.len());
            let mut nm = Vec::with_capacity(weights.len() * ws.len());
            for (w0, v0) in weights.iter().zip(&members) {
                for (w1, v1) in ws.iter().zip(&vs) {
                    if w0 * w1 > 0.0 {
                        nw.push(w0 * w1);
                        nm.push(linalg::kron_vec(v0, v1));
                    }
                }
            }
            weights = nw;
            members = nm;
        }
        return Ok(ModeRegister::Ensemble(Ensemble {
            dims,
            weights,
            members,
            truncation_weight: trunc,
        }));
    }
    let mut v = CVector::from_element(1, ONE);
    for s in states {
        if let ModeRegister::Pure(p) = s {
            v = linalg::kron_vec(&v, &p.amplitudes);
        }
    }
    Ok(ModeRegister::Pure(PureState {
        dims,
        amplitudes: v,
        truncation_weight: trunc,
    }))
}

/// Reduced density operator on `keep` (ascending, distinct).
pub fn partial_trace(reg: &ModeRegister, keep: &[usize]) -> Result<DensityOperator> {
    if keep.is_empty() {
        return Err(invalid("partial trace must keep at least one mode"));
    }
    for &k in keep {
        reg.check_mode(k)?;
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!(
            "kept modes {keep:?} must be ascending and distinct"
        )));
    }
    let kept_dims: Vec<usize> = keep.iter().map(|&k| reg.dims()[k]).collect();
    Ok(DensityOperator {
        dims: kept_dims,
        matrix: partial_trace_unordered(reg, keep)?,
        truncation_weight: reg.truncation_weight(),
    })
}

/// Reduced matrix on distinct `modes` taken in the given order (first
/// listed slowest).
pub(crate) fn partial_trace_unordered(reg: &ModeRegister, modes: &[usize]) -> Result<CMatrix> {
    for &k in modes {
        reg.check_mode(k)?;
    }
    for (i, a) in modes.iter().enumerate() {
        if modes[..i].contains(a) {
            return Err(invalid(format!("mode {a} listed twice")));
        }
    }
    let plan = LocalPlan::new(reg.dims(), modes);
    let kd = plan.local_dim;
    let ed = plan.env_offsets.len();

    // reshape |psi> into a (kept x env) matrix M so that rho_red = M M^dagger
    let reshape = |v: &CVector| {
        CMatrix::from_fn(kd, ed, |i, e| {
            v[plan.local_offsets[i] + plan.env_offsets[e]]
        })
    };
    Ok(match reg {
        ModeRegister::Pure(p) => {
            let m = reshape(&p.amplitudes);
            &m * m.adjoint()
        }
        ModeRegister::Ensemble(e) => {
            let mut acc = CMatrix::zeros(kd, kd);
            for (w, v) in e.weights.iter().zip(&e.members) {
                let m = reshape(v);
                acc += &m * m.adjoint() * C64::from(*w);
            }
            acc
        }
        ModeRegister::Mixed(d) => CMatrix::from_fn(kd, kd, |i, j| {
            let (oi, oj) = (plan.local_offsets[i], plan.local_offsets[j]);
            plan.env_offsets
                .iter()
                .map(|&e| d.matrix[(oi + e, oj + e)])
                .sum()
        }),
    })
}

/// `U rho U†` (or `U|psi>`) for a unitary on the full joint space.
pub fn apply_unitary(reg: &ModeRegister, u: &CMatrix) -> Result<ModeRegister> {
    let all: Vec<usize> = (0..reg.arity()).collect();
    reg.apply_local(u, &all)
}

/// Photon-number distribution of one mode.
pub fn number_distribution(reg: &ModeRegister, mode: usize) -> Result<Vec<f64>> {
    reg.check_mode(mode)?;
    let dims = reg.dims();
    let st = strides(dims);
    let c = dims[mode];
    let mut p = vec![0.0; c];
    let level = |idx: usize| (idx / st[mode]) % c;
    match reg {
        ModeRegister::Pure(s) => {
            for (idx, a) in s.amplitudes.iter().enumerate() {
                p[level(idx)] += a.norm_sqr();
            }
        }
        ModeRegister::Ensemble(e) => {
            for (w, v) in e.weights.iter().zip(&e.members) {
                for (idx, a) in v.iter().enumerate() {
                    p[level(idx)] += w * a.norm_sqr();
                }
            }
        }
        ModeRegister::Mixed(d) => {
            for idx in 0..d.dim() {
                p[level(idx)] += d.matrix[(idx, idx)].re;
            }
        }
    }
    for x in p.iter_mut() {
        if *x < 0.0 && *x > -NEGATIVITY_TOLERANCE {
            *x = 0.0;
        }
    }
    let total: f64 = p.iter().sum();
    Ok(p.into_iter().map(|x| x / total).collect())
}

pub fn mean_number(reg: &ModeRegister, mode: usize) -> Result<f64> {
    Ok(number_distribution(reg, mode)?
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum())
}

/// Single-mode annihilation operator on `cutoff` levels.
pub fn annihilation(cutoff: usize) -> CMatrix {
    let mut a = CMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        a[(n - 1, n)] = C64::from((n as f64).sqrt());
    }
    a
}

/// Displacement operator restricted to `cutoff` levels, computed on an
/// enlarged space so the kept block is free of edge artifacts.
pub fn displacement(alpha: C64, cutoff: usize) -> CMatrix {
    let m = alpha.norm();
    let work = cutoff + (m * m + 12.0 * m + 40.0).ceil() as usize;
    let a = annihilation(work);
    let gen = a.adjoint() * alpha - &a * alpha.conj();
    let d = linalg::expm(&gen);
    d.view((0, 0), (cutoff, cutoff)).into_owned()
}
