//! Linear and Kerr-class circuit elements compiled on truncated mode spaces.
//!
//! Beam splitters use `exp[theta (e^{i phi} a†b - e^{-i phi} a b†)]` with
//! `t = cos theta`. All two-mode generators conserve `n_a + n_b`, so they are
//! exponentiated one photon-number sector at a time. A sector that does not
//! fit under the cutoffs is still exponentiated (the result stays unitary)
//! but it no longer matches the untruncated gate, and it is flagged.

use crate::error::{invalid, Error, Result};
use crate::fock::{self, LocalPlan, ModeRegister, DEFAULT_DIMENSION_BUDGET};
use crate::linalg::{self, CMatrix, CVector, C64, I, ONE, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub enum ElementKind {
    /// `t2` is the intensity transmissivity; `phase` the coupling phase.
    BeamSplitter {
        t2: f64,
        phase: f64,
    },
    PhaseShifter {
        phi: f64,
    },
    CrossKerr {
        chi: f64,
    },
    /// `exp[-i g tau (a†^k b^k + a^k b†^k)]`.
    KPhotonCoupler {
        g: f64,
        tau: f64,
        k: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircuitElement {
    pub kind: ElementKind,
    pub modes: Vec<usize>,
}

impl CircuitElement {
    pub fn beam_splitter(t2: f64, a: usize, b: usize) -> Self {
        Self::beam_splitter_with_phase(t2, 0.0, a, b)
    }

    pub fn beam_splitter_with_phase(t2: f64, phase: f64, a: usize, b: usize) -> Self {
        Self {
            kind: ElementKind::BeamSplitter { t2, phase },
            modes: vec![a, b],
        }
    }

    /// The inverse of `beam_splitter_with_phase(t2, phase, a, b)`.
    pub fn beam_splitter_inverse(t2: f64, phase: f64, a: usize, b: usize) -> Self {
        Self::beam_splitter_with_phase(t2, phase + std::f64::consts::PI, a, b)
    }

    pub fn phase_shifter(phi: f64, mode: usize) -> Self {
        Self {
            kind: ElementKind::PhaseShifter { phi },
            modes: vec![mode],
        }
    }

    pub fn cross_kerr(chi: f64, a: usize, b: usize) -> Self {
        Self {
            kind: ElementKind::CrossKerr { chi },
            modes: vec![a, b],
        }
    }

    pub fn k_photon_coupler(g: f64, tau: f64, k: usize, a: usize, b: usize) -> Self {
        Self {
            kind: ElementKind::KPhotonCoupler { g, tau, k },
            modes: vec![a, b],
        }
    }

    pub fn validate(&self, arity: usize) -> Result<()> {
        let want = match self.kind {
            ElementKind::PhaseShifter { .. } => 1,
            _ => 2,
        };
        if self.modes.len() != want {
            return Err(invalid(format!("{:?} acts on {want} mode(s)", self.kind)));
        }
        for &m in &self.modes {
            if m >= arity {
                return Err(Error::ModeIndex { index: m, arity });
            }
        }
        if want == 2 && self.modes[0] == self.modes[1] {
            return Err(invalid("two-mode element needs distinct modes"));
        }
        match self.kind {
            ElementKind::BeamSplitter { t2, phase } => {
                if !(0.0..=1.0).contains(&t2) || !phase.is_finite() {
                    return Err(invalid(format!(
                        "beam splitter needs t2 in [0, 1], got {t2}"
                    )));
                }
            }
            ElementKind::PhaseShifter { phi } if !phi.is_finite() => {
                return Err(invalid("phase must be finite"));
            }
            ElementKind::CrossKerr { chi } if !chi.is_finite() => {
                return Err(invalid("cross-Kerr strength must be finite"));
            }
            ElementKind::KPhotonCoupler { g, tau, k } => {
                if k == 0 {
                    return Err(invalid("k-photon coupler needs k >= 1"));
                }
                if !(g >= 0.0 && tau >= 0.0) {
                    return Err(invalid("k-photon coupler needs g >= 0 and tau >= 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Gate matrix on the element's own modes, first listed mode slowest.
    pub fn compile_local(&self, dims: &[usize]) -> Result<CompiledGate> {
        self.validate(dims.len())?;
        let local: Vec<usize> = self.modes.iter().map(|&m| dims[m]).collect();
        let (matrix, truncated) = match self.kind {
            ElementKind::PhaseShifter { phi } => (phase_shifter_matrix(phi, local[0]), false),
            ElementKind::CrossKerr { chi } => (cross_kerr_matrix(chi, local[0], local[1]), false),
            ElementKind::BeamSplitter { .. } | ElementKind::KPhotonCoupler { .. } => {
                let gen = two_mode_generator(&self.kind, local[0], local[1]);
                exponentiate_by_sector(&gen, local[0], local[1])
            }
        };
        let unitarity_deviation = linalg::unitarity_deviation(&matrix);
        Ok(CompiledGate {
            modes: self.modes.clone(),
            matrix,
            unitarity_deviation,
            truncated,
        })
    }
}

/// Gate compiled on its own modes.
#[derive(Clone, Debug)]
pub struct CompiledGate {
    pub modes: Vec<usize>,
    pub matrix: CMatrix,
    pub unitarity_deviation: f64,
    /// Some photon-number sector was clipped by the cutoffs.
    pub truncated: bool,
}

/// Full-register matrix of a circuit.
#[derive(Clone, Debug)]
pub struct CompiledCircuit {
    pub matrix: CMatrix,
    pub unitarity_deviation: f64,
    pub truncated: bool,
}

/// Diagnostics from propagating a state through a circuit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropagationReport {
    /// Largest unitarity deviation among the compiled gates.
    pub unitarity_deviation: f64,
    /// Largest state population found in clipped sectors before any gate.
    pub boundary_population: f64,
}

/// Elements in application order: the first listed acts first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Circuit {
    pub elements: Vec<CircuitElement>,
}

impl Circuit {
    pub fn new(elements: Vec<CircuitElement>) -> Self {
        Self { elements }
    }

    pub fn push(&mut self, e: CircuitElement) -> &mut Self {
        self.elements.push(e);
        self
    }

    pub fn validate(&self, arity: usize) -> Result<()> {
        self.elements.iter().try_for_each(|e| e.validate(arity))
    }

    /// Propagate a register gate by gate without forming the joint matrix.
    pub fn apply(&self, reg: &ModeRegister) -> Result<(ModeRegister, PropagationReport)> {
        let dims = reg.dims().to_vec();
        self.validate(dims.len())?;
        let mut report = PropagationReport::default();
        let mut state = reg.clone();
        for e in &self.elements {
            let gate = e.compile_local(&dims)?;
            report.unitarity_deviation = report.unitarity_deviation.max(gate.unitarity_deviation);
            if gate.truncated {
                let b = boundary_population(&state, &gate.modes)?;
                report.boundary_population = report.boundary_population.max(b);
            }
            state = state.apply_local(&gate.matrix, &gate.modes)?;
        }
        Ok((state, report))
    }
}

/// Two-mode gate restricted to one photon-number sector.
///
/// Basis `|N - j, j>` for `j = 0..=N`, i.e. ordered by photons in the second
/// mode. Used where the state is tracked sector by sector with no cutoff.
pub fn sector_unitary(kind: &ElementKind, total: usize) -> Result<CMatrix> {
    let states: Vec<(usize, usize)> = (0..=total).map(|j| (total - j, j)).collect();
    Ok(match *kind {
        ElementKind::PhaseShifter { .. } => {
            return Err(invalid("phase shifter is a single-mode element"));
        }
        ElementKind::CrossKerr { chi } => {
            CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                states.len(),
                states
                    .iter()
                    .map(|&(a, b)| C64::from_polar(1.0, chi * (a * b) as f64)),
            ))
        }
        _ => {
            let d = states.len();
            let gen = CMatrix::from_fn(d, d, |r, c| generator_element(kind, states[r], states[c]));
            linalg::expm(&gen)
        }
    })
}

/// Apply a two-mode gate to a vector in one photon-number sector (basis as
/// in [`sector_unitary`]) without forming the sector matrix.
pub fn sector_apply(kind: &ElementKind, total: usize, v: &CVector) -> Result<CVector> {
    if v.len() != total + 1 {
        return Err(Error::ShapeMismatch {
            expected: total + 1,
            got: v.len(),
        });
    }
    let state = |j: usize| (total - j, j);
    match *kind {
        ElementKind::PhaseShifter { .. } => Err(invalid("phase shifter is a single-mode element")),
        ElementKind::CrossKerr { chi } => Ok(CVector::from_fn(total + 1, |j, _| {
            v[j] * C64::from_polar(1.0, chi * ((total - j) * j) as f64)
        })),
        ElementKind::BeamSplitter { .. } | ElementKind::KPhotonCoupler { .. } => {
            let k = match *kind {
                ElementKind::KPhotonCoupler { k, .. } => k,
                _ => 1,
            };
            // the generator only links j and j + k
            let links: Vec<(C64, C64)> = (0..=total)
                .map(|j| {
                    if j + k > total {
                        (ZERO, ZERO)
                    } else {
                        (
                            generator_element(kind, state(j + k), state(j)),
                            generator_element(kind, state(j), state(j + k)),
                        )
                    }
                })
                .collect();
            let norm = links
                .iter()
                .map(|(d, u)| d.norm().max(u.norm()))
                .fold(0.0, f64::max)
                * 2.0;
            if norm == 0.0 {
                return Ok(v.clone());
            }
            if norm > 8.0 * (total + 1) as f64 {
                return Ok(sector_unitary(kind, total)? * v);
            }
            let apply = |x: &CVector| {
                let mut out = CVector::zeros(x.len());
                for (j, (down, up)) in links.iter().enumerate() {
                    if j + k <= total {
                        out[j + k] += down * x[j];
                        out[j] += up * x[j + k];
                    }
                }
                out
            };
            Ok(linalg::expm_multiply(apply, v, norm))
        }
    }
}

fn phase_shifter_matrix(phi: f64, d: usize) -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        (0..d).map(|n| C64::from_polar(1.0, phi * n as f64)),
    ))
}

fn cross_kerr_matrix(chi: f64, da: usize, db: usize) -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        da * db,
        (0..da * db).map(|i| C64::from_polar(1.0, chi * ((i / db) * (i % db)) as f64)),
    ))
}

/// sqrt((n+1)(n+2)...(n+k))
fn raise_factor(n: usize, k: usize) -> f64 {
    (1..=k).map(|j| (n + j) as f64).product::<f64>().sqrt()
}

/// `<out| G |in>` for the anti-Hermitian generator `G` with `U = exp(G)`.
pub(crate) fn generator_element(
    kind: &ElementKind,
    out: (usize, usize),
    inp: (usize, usize),
) -> C64 {
    let (k, coupling_up, coupling_down) = match *kind {
        ElementKind::BeamSplitter { t2, phase } => {
            let theta = t2.clamp(0.0, 1.0).sqrt().acos();
            // theta e^{i phase} a†b - theta e^{-i phase} a b†
            (
                1,
                C64::from_polar(theta, phase),
                -C64::from_polar(theta, -phase),
            )
        }
        ElementKind::KPhotonCoupler { g, tau, k } => {
            let s = -I * (g * tau);
            (k, s, s)
        }
        _ => return ZERO,
    };
    let (ia, ib) = inp;
    let (oa, ob) = out;
    if oa == ia + k && ib >= k && ob == ib - k {
        // a†^k b^k moves k photons from b into a
        coupling_up * raise_factor(ia, k) * raise_factor(ob, k)
    } else if ob == ib + k && ia >= k && oa == ia - k {
        coupling_down * raise_factor(oa, k) * raise_factor(ib, k)
    } else {
        ZERO
    }
}

fn two_mode_generator(kind: &ElementKind, da: usize, db: usize) -> CMatrix {
    let d = da * db;
    CMatrix::from_fn(d, d, |r, c| {
        generator_element(kind, (r / db, r % db), (c / db, c % db))
    })
}

/// Exponentiate a number-conserving two-mode generator block by block.
/// Returns the matrix and whether any sector was clipped by the cutoffs.
fn exponentiate_by_sector(gen: &CMatrix, da: usize, db: usize) -> (CMatrix, bool) {
    let d = da * db;
    let mut u = CMatrix::zeros(d, d);
    let mut truncated = false;
    for total in 0..(da + db - 1) {
        let idx: Vec<usize> = (0..=total)
            .filter(|&a| a < da && total - a < db)
            .map(|a| a * db + (total - a))
            .collect();
        if idx.len() < total + 1 {
            truncated = true;
        }
        let block = CMatrix::from_fn(idx.len(), idx.len(), |r, c| gen[(idx[r], idx[c])]);
        let ub = if block.iter().all(|z| *z == ZERO) {
            CMatrix::identity(idx.len(), idx.len())
        } else {
            linalg::expm(&block)
        };
        for (r, &ir) in idx.iter().enumerate() {
            for (c, &ic) in idx.iter().enumerate() {
                u[(ir, ic)] = ub[(r, c)];
            }
        }
    }
    (u, truncated)
}

/// Population in photon-number sectors of `modes` that the cutoffs clip.
fn boundary_population(reg: &ModeRegister, modes: &[usize]) -> Result<f64> {
    if modes.len() != 2 {
        return Ok(0.0);
    }
    let dims = reg.dims();
    let (da, db) = (dims[modes[0]], dims[modes[1]]);
    let limit = da.min(db);
    let rho = fock::partial_trace_unordered(reg, modes)?;
    let mut p = 0.0;
    for a in 0..da {
        for b in 0..db {
            if a + b >= limit {
                p += rho[(a * db + b, a * db + b)].re;
            }
        }
    }
    Ok(p.max(0.0))
}

pub fn compile_beam_splitter(
    t2: f64,
    modes: (usize, usize),
    dims: &[usize],
) -> Result<CompiledCircuit> {
    compile_circuit(
        &Circuit::new(vec![CircuitElement::beam_splitter(t2, modes.0, modes.1)]),
        dims,
    )
}

pub fn compile_phase_shifter(phi: f64, mode: usize, dims: &[usize]) -> Result<CompiledCircuit> {
    compile_circuit(
        &Circuit::new(vec![CircuitElement::phase_shifter(phi, mode)]),
        dims,
    )
}

pub fn compile_cross_kerr(
    chi: f64,
    modes: (usize, usize),
    dims: &[usize],
) -> Result<CompiledCircuit> {
    compile_circuit(
        &Circuit::new(vec![CircuitElement::cross_kerr(chi, modes.0, modes.1)]),
        dims,
    )
}

pub fn compile_k_photon_coupler(
    g: f64,
    tau: f64,
    k: usize,
    modes: (usize, usize),
    dims: &[usize],
) -> Result<CompiledCircuit> {
    compile_circuit(
        &Circuit::new(vec![CircuitElement::k_photon_coupler(
            g, tau, k, modes.0, modes.1,
        )]),
        dims,
    )
}

/// Dense joint matrix `U_n ... U_2 U_1` for a circuit listed as `[U_1, ..., U_n]`.
pub fn compile_circuit(circuit: &Circuit, dims: &[usize]) -> Result<CompiledCircuit> {
    let d = fock::joint_dim(dims);
    if d > DEFAULT_DIMENSION_BUDGET {
        return Err(Error::DimensionBudget {
            dim: d,
            budget: DEFAULT_DIMENSION_BUDGET,
        });
    }
    circuit.validate(dims.len())?;
    let mut u = CMatrix::identity(d, d);
    let mut truncated = false;
    for e in &circuit.elements {
        let gate = e.compile_local(dims)?;
        truncated |= gate.truncated;
        u = LocalPlan::new(dims, &gate.modes).apply_columns(&gate.matrix, &u);
    }
    let unitarity_deviation = linalg::unitarity_deviation(&u);
    Ok(CompiledCircuit {
        matrix: u,
        unitarity_deviation,
        truncated,
    })
}

/// Unitarity deviation of `u` restricted to joint states where every mode
/// stays at least `margin` levels below its cutoff.
pub fn interior_unitarity_deviation(u: &CMatrix, dims: &[usize], margin: usize) -> f64 {
    let interior: Vec<usize> = (0..u.ncols())
        .filter(|&i| {
            fock::digits(dims, i)
                .iter()
                .zip(dims)
                .all(|(n, d)| n + margin < *d)
        })
        .collect();
    let mut dev: f64 = 0.0;
    for (x, &i) in interior.iter().enumerate() {
        for &j in &interior[x..] {
            let g: C64 = u.column(i).dotc(&u.column(j));
            let target = if i == j { ONE } else { ZERO };
            dev = dev.max((g - target).norm());
        }
    }
    dev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_fock, make_thermal, tensor, PureState, ThermalSpec, TruncatedBasis};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn fock2(a: usize, b: usize, d: usize) -> ModeRegister {
        let basis = TruncatedBasis::new(d).unwrap();
        tensor(&[
            ModeRegister::Pure(make_fock(a, basis).unwrap()),
            ModeRegister::Pure(make_fock(b, basis).unwrap()),
        ])
        .unwrap()
    }

    fn amplitudes(reg: &ModeRegister) -> CVector {
        match reg {
            ModeRegister::Pure(p) => p.amplitudes().clone(),
            _ => panic!("expected pure state"),
        }
    }

    #[test]
    fn unit_transmissivity_is_identity() {
        let u = compile_beam_splitter(1.0, (0, 1), &[5, 5]).unwrap();
        assert!(max_diff(&u.matrix, &CMatrix::identity(25, 25)) < 1e-15);
    }

    #[test]
    fn balanced_splitter_halves_single_photon() {
        let c = Circuit::new(vec![CircuitElement::beam_splitter(0.5, 0, 1)]);
        let (out, _) = c.apply(&fock2(1, 0, 4)).unwrap();
        let p0 = fock::number_distribution(&out, 0).unwrap();
        let p1 = fock::number_distribution(&out, 1).unwrap();
        assert_abs_diff_eq!(p0[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(p1[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn transmissivity_sets_amplitudes() {
        let c = Circuit::new(vec![CircuitElement::beam_splitter(0.3, 0, 1)]);
        let (out, _) = c.apply(&fock2(1, 0, 3)).unwrap();
        let v = amplitudes(&out);
        // |1,0> stays with amplitude t, moves to |0,1> with amplitude r
        assert_abs_diff_eq!(v[3].norm_sqr(), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(v[1].norm_sqr(), 0.7, epsilon = 1e-14);
    }

    #[test]
    fn beam_splitter_conserves_number() {
        let th = make_thermal(
            ThermalSpec::new(0.3).unwrap(),
            TruncatedBasis::new(24).unwrap(),
        )
        .unwrap();
        let co = fock::make_coherent(C64::new(0.8, 0.3), TruncatedBasis::new(24).unwrap()).unwrap();
        let reg = tensor(&[ModeRegister::Mixed(th), ModeRegister::Pure(co)]).unwrap();
        let before = fock::mean_number(&reg, 0).unwrap() + fock::mean_number(&reg, 1).unwrap();
        let c = Circuit::new(vec![CircuitElement::beam_splitter(0.37, 0, 1)]);
        let (out, report) = c.apply(&reg).unwrap();
        let after = fock::mean_number(&out, 0).unwrap() + fock::mean_number(&out, 1).unwrap();
        assert_abs_diff_eq!(before, after, epsilon = 1e-8);
        assert!(report.unitarity_deviation < 1e-10);
        assert!(report.boundary_population < 1e-8);
    }

    #[test]
    fn phase_shifter_examples() {
        let u = compile_phase_shifter(0.0, 0, &[6]).unwrap();
        assert!(max_diff(&u.matrix, &CMatrix::identity(6, 6)) < 1e-15);
        let u = compile_phase_shifter(PI, 0, &[3]).unwrap();
        assert_abs_diff_eq!(u.matrix[(1, 1)].re, -1.0, epsilon = 1e-15);

        let th = ModeRegister::Mixed(
            make_thermal(
                ThermalSpec::new(0.6).unwrap(),
                TruncatedBasis::new(40).unwrap(),
            )
            .unwrap(),
        );
        let c = Circuit::new(vec![CircuitElement::phase_shifter(1.234, 0)]);
        let (out, _) = c.apply(&th).unwrap();
        assert!(max_diff(out.to_density().matrix(), th.to_density().matrix()) < 1e-15);
    }

    #[test]
    fn cross_kerr_examples() {
        let c = Circuit::new(vec![CircuitElement::cross_kerr(0.77, 0, 1)]);
        let (out, _) = c.apply(&fock2(3, 0, 5)).unwrap();
        assert_eq!(amplitudes(&out), amplitudes(&fock2(3, 0, 5)));

        let c = Circuit::new(vec![CircuitElement::cross_kerr(PI, 0, 1)]);
        let (out, _) = c.apply(&fock2(1, 1, 3)).unwrap();
        assert_abs_diff_eq!(amplitudes(&out)[4].re, -1.0, epsilon = 1e-15);

        let u = compile_cross_kerr(0.3, (0, 1), &[7, 9]).unwrap();
        assert!(u.unitarity_deviation < 1e-14);
        assert!(!u.truncated);
    }

    #[test]
    fn k_photon_zero_time_is_identity() {
        let u = compile_k_photon_coupler(0.4, 0.0, 2, (0, 1), &[5, 5]).unwrap();
        assert!(max_diff(&u.matrix, &CMatrix::identity(25, 25)) < 1e-15);
    }

    #[test]
    fn k_photon_rejects_zero_order() {
        assert!(compile_k_photon_coupler(0.4, 1.0, 0, (0, 1), &[5, 5]).is_err());
    }

    #[test]
    fn single_photon_coupler_is_beam_splitter_class() {
        let theta = 0.41;
        let kp = compile_k_photon_coupler(theta, 1.0, 1, (0, 1), &[3, 3]).unwrap();
        let bs = compile_circuit(
            &Circuit::new(vec![CircuitElement::beam_splitter_with_phase(
                theta.cos().powi(2),
                -PI / 2.0,
                0,
                1,
            )]),
            &[3, 3],
        )
        .unwrap();
        // compare on the sectors with at most two photons
        let dims = [3, 3];
        for c in 0..9 {
            let d = fock::digits(&dims, c);
            if d[0] + d[1] <= 2 {
                for r in 0..9 {
                    assert_abs_diff_eq!(
                        (kp.matrix[(r, c)] - bs.matrix[(r, c)]).norm(),
                        0.0,
                        epsilon = 1e-13
                    );
                }
            }
        }
    }

    #[test]
    fn two_photon_coupler_rabi_oscillation() {
        let g = 0.3;
        for t in [0.0, 0.7, 1.9, 3.3] {
            let c = Circuit::new(vec![CircuitElement::k_photon_coupler(g, t, 2, 0, 1)]);
            let (out, _) = c.apply(&fock2(2, 0, 5)).unwrap();
            let v = amplitudes(&out);
            let i20 = fock::joint_index(&[5, 5], &[2, 0]);
            let i02 = fock::joint_index(&[5, 5], &[0, 2]);
            assert_abs_diff_eq!(
                v[i20].norm_sqr(),
                (2.0 * g * t).cos().powi(2),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                v[i02].norm_sqr(),
                (2.0 * g * t).sin().powi(2),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn empty_circuit_is_identity() {
        let u = compile_circuit(&Circuit::default(), &[3, 4]).unwrap();
        assert_eq!(u.matrix, CMatrix::identity(12, 12));
    }

    #[test]
    fn phase_shifters_compose() {
        let both = compile_circuit(
            &Circuit::new(vec![
                CircuitElement::phase_shifter(0.3, 1),
                CircuitElement::phase_shifter(0.9, 1),
            ]),
            &[3, 5],
        )
        .unwrap();
        let one = compile_phase_shifter(1.2, 1, &[3, 5]).unwrap();
        assert!(max_diff(&both.matrix, &one.matrix) < 1e-14);
    }

    #[test]
    fn beam_splitter_then_inverse_is_identity() {
        let u = compile_circuit(
            &Circuit::new(vec![
                CircuitElement::beam_splitter_with_phase(0.35, 0.2, 0, 1),
                CircuitElement::beam_splitter_inverse(0.35, 0.2, 0, 1),
            ]),
            &[6, 6],
        )
        .unwrap();
        assert!(max_diff(&u.matrix, &CMatrix::identity(36, 36)) < 1e-9);
    }

    #[test]
    fn circuit_order_is_first_listed_first() {
        // BS then CK differs from CK then BS; the compiled product must match
        // applying the elements one by one.
        let dims = [4, 4];
        let elems = vec![
            CircuitElement::beam_splitter(0.5, 0, 1),
            CircuitElement::cross_kerr(0.9, 0, 1),
            CircuitElement::phase_shifter(0.4, 0),
            CircuitElement::beam_splitter(0.2, 0, 1),
        ];
        let u = compile_circuit(&Circuit::new(elems.clone()), &dims).unwrap();
        let input = fock2(1, 1, 4);
        let (out, _) = Circuit::new(elems).apply(&input).unwrap();
        let direct = &u.matrix * amplitudes(&input);
        assert!((direct - amplitudes(&out)).norm() < 1e-13);
    }

    #[test]
    fn truncated_sectors_are_flagged() {
        let u = compile_beam_splitter(0.5, (0, 1), &[4, 4]).unwrap();
        assert!(u.truncated);
        assert!(u.unitarity_deviation < 1e-12);
        assert!(interior_unitarity_deviation(&u.matrix, &[4, 4], 0) < 1e-12);
    }

    #[test]
    fn sector_unitary_matches_truncated_gate_inside_cutoff() {
        let kind = ElementKind::BeamSplitter {
            t2: 0.5,
            phase: 0.0,
        };
        let s = sector_unitary(&kind, 3).unwrap();
        let g = CircuitElement::beam_splitter(0.5, 0, 1)
            .compile_local(&[6, 6])
            .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let ir = fock::joint_index(&[6, 6], &[3 - r, r]);
                let ic = fock::joint_index(&[6, 6], &[3 - c, c]);
                assert_abs_diff_eq!(
                    (s[(r, c)] - g.matrix[(ir, ic)]).norm(),
                    0.0,
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn sector_apply_matches_sector_unitary() {
        let kinds = [
            ElementKind::BeamSplitter {
                t2: 0.3,
                phase: 0.4,
            },
            ElementKind::KPhotonCoupler {
                g: 0.7,
                tau: 1.3,
                k: 2,
            },
            ElementKind::KPhotonCoupler {
                g: 0.2,
                tau: 2.0,
                k: 3,
            },
            ElementKind::CrossKerr { chi: 1.1 },
        ];
        for kind in &kinds {
            for total in [0usize, 1, 5, 17] {
                let v =
                    CVector::from_fn(total + 1, |j, _| C64::new(1.0 + j as f64, -0.5 * j as f64));
                let dense = sector_unitary(kind, total).unwrap() * &v;
                let fast = sector_apply(kind, total, &v).unwrap();
                assert!(
                    (dense - fast).norm() < 1e-11 * v.norm(),
                    "{kind:?} N={total}"
                );
            }
        }
    }

    #[test]
    fn invalid_elements_rejected() {
        assert!(compile_beam_splitter(1.5, (0, 1), &[3, 3]).is_err());
        assert!(compile_beam_splitter(0.5, (0, 0), &[3, 3]).is_err());
        assert!(matches!(
            compile_beam_splitter(0.5, (0, 2), &[3, 3]),
            Err(Error::ModeIndex { index: 2, arity: 2 })
        ));
    }

    #[test]
    fn diagonal_gates_preserve_number_distribution() {
        let v = CVector::from_fn(16, |i, _| {
            C64::new((i as f64).sin(), (i as f64 * 0.3).cos())
        });
        let reg = ModeRegister::Pure(PureState::from_amplitudes(vec![4, 4], v).unwrap());
        let c = Circuit::new(vec![
            CircuitElement::cross_kerr(1.1, 0, 1),
            CircuitElement::phase_shifter(0.5, 1),
        ]);
        let (out, _) = c.apply(&reg).unwrap();
        let (a, b) = (amplitudes(&reg), amplitudes(&out));
        for i in 0..16 {
            assert_abs_diff_eq!(a[i].norm(), b[i].norm(), epsilon = 1e-15);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn gates_conserve_total_number(
                t2 in 0.0f64..1.0, phase in -3.0f64..3.0, chi in -3.0f64..3.0,
                g in 0.0f64..1.0, k in 1usize..4,
                seed in proptest::collection::vec(-1.0f64..1.0, 32)
            ) {
                let d = 8;
                // random state supported well below the cutoff
                let v = CVector::from_fn(d * d, |i, _| {
                    let (a, b) = (i / d, i % d);
                    if a + b < 3 { C64::new(seed[i % 32], seed[(i * 7) % 32]) } else { ZERO }
                });
                prop_assume!(v.norm() > 1e-3);
                let reg = ModeRegister::Pure(PureState::from_amplitudes(vec![d, d], v).unwrap());
                let c = Circuit::new(vec![
                    CircuitElement::beam_splitter_with_phase(t2, phase, 0, 1),
                    CircuitElement::cross_kerr(chi, 0, 1),
                    CircuitElement::k_photon_coupler(g, 1.0, k, 1, 0),
                ]);
                let n = |r: &ModeRegister| fock::mean_number(r, 0).unwrap() + fock::mean_number(r, 1).unwrap();
                let (out, rep) = c.apply(&reg).unwrap();
                prop_assert!((n(&out) - n(&reg)).abs() < 1e-8);
                prop_assert!(rep.unitarity_deviation < 1e-10);
            }
        }
    }
}
