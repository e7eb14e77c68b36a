//! End-to-end acceptance checks, one per numbered criterion.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::time::Instant;

use num_complex::Complex64 as C64;

use crate::distiller::{self, ProtocolOptions, ScheduleSpec};
use crate::engine::{self, EngineCircuit, EngineConfig};
use crate::fock::{self, PureState, TruncatedBasis};
use crate::harness;
use crate::linalg::{self, CVector};
use crate::sensing::{self, Classification, InputKind, ProbeLayout};
use crate::spin_cat::{self, BathSpectrum};
use crate::{filters, thermo, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} ({:.1}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

type Check = fn() -> Result<(bool, String)>;

pub const CRITERIA: [(&str, Check); 14] = [
    ("g2 law", g2_law),
    ("conditional energy", conditional_energy),
    ("conditional passivity", conditional_passivity),
    ("nonselective passivity", nonselective_passivity),
    ("homodyne work scaling", homodyne_scaling),
    ("homodyne information", homodyne_information),
    ("engine thermal formula", engine_thermal),
    ("quantum steering damping", quantum_steering),
    ("second law", second_law),
    ("quantum Fisher information", fisher_information),
    ("noise sensor", noise_sensor),
    ("distiller", distiller_protocol),
    ("spin cat", spin_cat_checks),
    ("determinism", determinism),
];

/// Criteria that cannot hold for the model as stated: conditioned states
/// with `(k+1) t2 nbar/(1+nbar) <= 1` are passive, and the reference
/// circuit leaves mode 1 exactly passive.
pub const UNATTAINABLE: [usize; 2] = [3, 9];

/// Run criterion `id` (1-based). Errors count as failures.
pub fn run(id: usize) -> CriterionOutcome {
    let (name, check) = CRITERIA[id - 1];
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all() -> Vec<CriterionOutcome> {
    (1..=CRITERIA.len()).map(run).collect()
}

const G2_GRID_NBAR: [f64; 3] = [1.0, 5.0, 20.0];
const G2_GRID_T2: [f64; 3] = [0.5, 0.9, 0.99];
const G2_GRID_K: [usize; 4] = [0, 1, 5, 10];

fn grid() -> impl Iterator<Item = (f64, f64, usize)> {
    G2_GRID_NBAR.into_iter().flat_map(|n| {
        G2_GRID_T2
            .into_iter()
            .flat_map(move |t| G2_GRID_K.into_iter().map(move |k| (n, t, k)))
    })
}

fn g2_law() -> Result<(bool, String)> {
    let (mut worst_closed, mut worst_oracle, mut max_cutoff) = (0.0f64, 0.0f64, 0usize);
    for (nbar, t2, k) in grid() {
        let law = filters::g2_law(k);
        worst_closed = worst_closed.max((filters::g2_of_conditioned(nbar, t2, k)? - law).abs());
        let (p, reached) =
            filters::photocount_oracle(nbar, t2, k, filters::oracle_cutoff(nbar, k), 1e-12)?;
        max_cutoff = max_cutoff.max(reached);
        worst_oracle = worst_oracle.max((thermo::g2_zero(&p)? - law).abs());
    }
    Ok((
        worst_closed < 1e-6 && worst_oracle < 1e-4,
        format!(
            "max |g2 - (1 + 1/(1+k))|: closed {worst_closed:.2e}, Fock oracle {worst_oracle:.2e} (largest cutoff {max_cutoff})"
        ),
    ))
}

fn conditional_energy() -> Result<(bool, String)> {
    let closed = filters::conditional_energy(20.0, 0.9, 10);
    let o = filters::photocount_condition(20.0, 0.9, 10)?;
    let summed: f64 = thermo::mean_energy(&o.distribution);
    let ok = (closed - 66.0).abs() < 1e-6 && (summed - 66.0).abs() < 1e-6;
    Ok((ok, format!("E_10 closed {closed:.9}, summed {summed:.9}")))
}

fn conditional_passivity() -> Result<(bool, String)> {
    let mut wrong = Vec::new();
    let mut explained = true;
    for (nbar, t2, k) in grid() {
        let o = filters::photocount_condition(nbar, t2, k)?;
        let passive = thermo::is_passive(&o.distribution)?.passive;
        // negative binomial: largest neighbour ratio P(1|k)/P(0|k) = (k+1) q
        let q = t2 * nbar / (1.0 + nbar);
        explained &= passive == ((k + 1) as f64 * q <= 1.0);
        if passive != (k == 0) {
            wrong.push(format!("({nbar},{t2},{k})"));
        }
    }
    Ok((
        wrong.is_empty(),
        if wrong.is_empty() {
            "passive exactly for k = 0 on all 36 grid points".into()
        } else {
            format!(
                "passive despite k > 0 at {}; every point obeys passive <=> (k+1) t2 nbar/(1+nbar) <= 1: {explained}",
                wrong.join(" ")
            )
        },
    ))
}

fn nonselective_passivity() -> Result<(bool, String)> {
    let mut worst_pc = 0.0f64;
    for nbar in G2_GRID_NBAR {
        for t2 in G2_GRID_T2 {
            let rho = filters::nonselective_photocount(nbar, t2)?;
            worst_pc = worst_pc.max(thermo::ergotropy_of_diagonal(&rho.diagonal())?.ergotropy);
        }
    }
    let (t2, beta) = filters::homodyne_optimum(25.0)?;
    let h = filters::nonselective_homodyne(25.0, t2, beta, 100_000, 7, 4)?;
    let hom_ok = h.ergotropy <= 3.0 * h.std_error || h.ergotropy < 1e-12;
    Ok((
        worst_pc < 1e-9 && hom_ok,
        format!(
            "photocount max ergotropy {worst_pc:.2e}; homodyne (nbar 25, 1e5 samples) {:.2e} with std error {:.2e}",
            h.ergotropy, h.std_error
        ),
    ))
}

const HOMODYNE_NBARS: [f64; 4] = [25.0, 49.0, 100.0, 225.0];

fn homodyne_scaling() -> Result<(bool, String)> {
    let mut pts = Vec::new();
    for (i, &nbar) in HOMODYNE_NBARS.iter().enumerate() {
        let (t2, beta) = filters::homodyne_optimum(nbar)?;
        let w = filters::mean_work_homodyne(nbar, t2, beta, 100_000, 11 + i as u64, 4)?;
        pts.push((nbar, w.net));
    }
    let (a, c) = filters::fit_work_scaling(&pts)?;
    let values: Vec<String> = pts.iter().map(|(n, w)| format!("{n}:{w:.2}")).collect();
    Ok((
        (3.0..=5.0).contains(&a),
        format!(
            "fit a = {a:.3} (reference 4), c = {c:.3}; W_net {}",
            values.join(" ")
        ),
    ))
}

fn homodyne_information() -> Result<(bool, String)> {
    let (t2, beta) = filters::homodyne_optimum(100.0)?;
    let info = filters::mutual_information_homodyne(100.0, t2, beta)?;
    let w = filters::mean_work_homodyne(100.0, t2, beta, 100_000, 3, 4)?;
    let reference = 0.5 * 25f64.ln();
    let rel = (info - reference).abs() / reference;
    let ratio = info / w.net;
    Ok((
        rel < 0.25 && ratio < 0.05,
        format!(
            "I = {info:.4} nats ({:.1}% from {reference:.4}), I/W_net = {ratio:.4}",
            100.0 * rel
        ),
    ))
}

fn engine_thermal() -> Result<(bool, String)> {
    let cases = [
        (1.0, 0.5, 0.5),
        (2.0, 0.5, 0.5),
        (5.0, 0.5, 0.2),
        (2.0, 0.9, 0.25),
        (4.0, 0.25, 0.5),
    ];
    let (mut worst, mut energy_ok) = (0.0f64, true);
    for (i, &(nbar_hot, t2, chi)) in cases.iter().enumerate() {
        let cfg = EngineConfig {
            nbar_hot,
            t2,
            chi,
            samples: 1_000_000,
            seed: 100 + i as u64,
        };
        let r = engine::thermal_averaged_output(&cfg, 4)?;
        worst = worst.max(r.discrepancy);
        let total = 2.0 * cfg.r2() * nbar_hot;
        energy_ok &= (r.n1_out + r.n4_out - total).abs() <= 1e-12 * total;
        energy_ok &= (r.mc_n1_out + r.mc_n4_out - total).abs() <= 1e-12 * total;
    }
    Ok((
        worst < 0.05 && energy_ok,
        format!(
            "max relative steering discrepancy {:.2}% over {} cases (t2 chi nbar <= 0.5, 1e6 samples); energy sum {}",
            100.0 * worst,
            cases.len(),
            if energy_ok { "exact" } else { "violated" }
        ),
    ))
}

fn quantum_steering() -> Result<(bool, String)> {
    let mut strict = true;
    let mut cases = 0;
    for a in [0.5, 1.0, 1.5] {
        for t2 in [0.3, 0.5, 0.8] {
            for chi in [0.3, 1.0, FRAC_PI_2, 2.0, 3.0] {
                let (b, d) = engine::steering_factors(a, a, t2, chi, true);
                let classical = linalg::bessel_j1(b);
                strict &= classical * (-d).exp() < classical;
                let (q1, _) = engine::phase_averaged_coherent(a, a, t2, chi, true)?;
                let (c1, _) = engine::phase_averaged_coherent(a, a, t2, chi, false)?;
                strict &= q1 < c1;
                cases += 1;
            }
        }
    }
    let mut zero = true;
    for a in [0.5, 1.0, 1.5] {
        for quantum in [true, false] {
            let (n1, n4) = engine::phase_averaged_coherent(a, a, 0.5, 0.0, quantum)?;
            zero &= n1 == n4;
        }
    }
    Ok((
        strict && zero,
        format!(
            "damped < undamped in {}/{cases} cases; no steering at chi = 0: {zero}",
            if strict { cases } else { 0 }
        ),
    ))
}

fn second_law() -> Result<(bool, String)> {
    let cfg = EngineConfig {
        nbar_hot: 1.0,
        t2: 0.5,
        chi: FRAC_PI_2,
        samples: 1,
        seed: 0,
    };
    let r = engine::full_quantum_engine(&cfg, 6, 0.05, &EngineCircuit::Reference)?;
    let ds = (r.joint_entropy_after - r.joint_entropy_before).abs();
    let marginal = r.marginal_sum_after() - r.marginal_sum_before();
    let ergo = r.mode1.ergotropy;
    let ok = ds < 1e-9 && marginal >= -1e-12 && ergo > 0.0;
    Ok((
        ok,
        format!(
            "|dS_joint| {ds:.1e}; marginal sum change {marginal:+.4}; mode-1 ergotropy {ergo:.3e} (needs > 0); joint ergotropy {:.4}; discarded thermal weight {:.3}",
            r.joint_ergotropy_after, r.truncation_weight
        ),
    ))
}

fn noon(n: usize) -> Result<PureState> {
    let d = n + 1;
    let mut v = CVector::zeros(d * d);
    v[n * d] = C64::from(0.5f64.sqrt());
    v[n] = C64::from(0.5f64.sqrt());
    PureState::from_amplitudes(vec![d, d], v)
}

fn fisher_information() -> Result<(bool, String)> {
    let mut worst_exact = 0.0f64;
    for n in 1..=6 {
        let s = noon(n)?;
        worst_exact =
            worst_exact.max((sensing::qfi_phase(&s.to_density(), 0)? - (n * n) as f64).abs());
    }
    for alpha in [C64::new(0.7, 0.0), C64::new(1.1, -0.6), C64::new(0.0, 1.8)] {
        let s = fock::make_coherent(alpha, TruncatedBasis::new(40)?)?;
        worst_exact = worst_exact
            .max((sensing::qfi_phase(&s.to_density(), 0)? - 4.0 * alpha.norm_sqr()).abs());
    }
    let nbars = [4.0, 6.0, 8.0];
    let kinds = [InputKind::Thermal, InputKind::Fock, InputKind::Coherent];
    let rows = sensing::qfi_scan(
        &kinds,
        &nbars,
        sensing::OPTIMAL_CHI,
        ProbeLayout::NonlinearMzi,
        1e-12,
    )?;
    let mut ordered = true;
    for &nbar in &nbars {
        let f = |k: InputKind| {
            rows.iter()
                .find(|r| r.kind == k && r.nbar == nbar)
                .map_or(f64::NAN, |r| r.fisher_information)
        };
        ordered &= f(InputKind::Thermal) > f(InputKind::Fock)
            && f(InputKind::Fock) > f(InputKind::Coherent);
    }
    let worst_dev = rows.iter().map(|r| r.rel_dev).fold(0.0, f64::max);
    Ok((
        worst_exact < 1e-6 && ordered,
        format!(
            "N00N/coherent max error {worst_exact:.1e}; T > F > C at nbar 4, 6, 8: {ordered}; max relative deviation from closed forms {:.2}% (soft gate 25%: {})",
            100.0 * worst_dev,
            if worst_dev <= 0.25 { "met" } else { "missed" }
        ),
    ))
}

fn noise_sensor() -> Result<(bool, String)> {
    let times: Vec<f64> = (1..=10).map(|i| 0.3 * i as f64).collect();
    let linear = sensing::noise_sensor_trace(1.0, 0.7, 1, &times, 1e-12)?;
    let linear_max = linear.ergotropy.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let k2 = sensing::noise_sensor_trace(1.0, 1.0, 2, &[0.3], 1e-12)?.ergotropy[0];

    let grid = sensing::log_grid(0.05, 0.8, 13);
    let step = (grid[1] / grid[0]).ln();
    let probe: Vec<f64> = (1..=6).map(|i| 0.5 * i as f64).collect();
    let mut recovered = true;
    let mut notes = Vec::new();
    for k in [2, 3] {
        // off-grid truth, between two grid points
        let g = (grid[5] * grid[6]).sqrt();
        let obs = sensing::noise_sensor_trace(1.0, g, k, &probe, 1e-10)?.ergotropy;
        match sensing::classify_nonlinearity(&probe, &obs, 1.0, &[2, 3], &grid, 1e-10)? {
            Classification::Nonlinear { best, .. } => {
                let ok = best.k == k && (best.g / g).ln().abs() <= step;
                recovered &= ok;
                notes.push(format!(
                    "k={k}: got k={} g={:.4} (true {g:.4})",
                    best.k, best.g
                ));
            }
            Classification::LinearOrRaman => {
                recovered = false;
                notes.push(format!("k={k}: classified linear"));
            }
        }
    }
    Ok((
        linear_max < sensing::ZERO_TRACE_THRESHOLD && k2 > 0.0 && recovered,
        format!(
            "k=1 max |ergotropy| {linear_max:.1e}; k=2 at gt=0.3 {k2:.3e}; {}",
            notes.join("; ")
        ),
    ))
}

fn distiller_protocol() -> Result<(bool, String)> {
    let target = 3;
    let schedule = distiller::default_schedule(target, &ScheduleSpec::default())?;
    let tr = distiller::run_protocol(2.0, target, &schedule, &ProtocolOptions::default())?;
    let s0 = tr.initial().entropy;
    let s1 = tr.last().entropy;
    let (peak_n, peak_p) = tr.last().peak();

    // Fock |target> and every level trapped by a step stay bitwise unchanged
    let mut fixed = true;
    for step in schedule
        .iter()
        .filter(|s| s.kind == distiller::StepKind::Nsm)
    {
        let mut d = vec![0.0; 40];
        d[target] = 1.0;
        fixed &= distiller::nsm_step(&d, step.gtau)?.distribution == d;
    }
    let mut worst_trace = 0.0f64;
    let mut d = tr.initial().distribution.clone();
    for step in schedule
        .iter()
        .filter(|s| s.kind == distiller::StepKind::Nsm)
    {
        let next = distiller::nsm_step(&d, step.gtau)?;
        let raw: f64 = next.distribution.iter().sum();
        worst_trace = worst_trace.max((raw - 1.0).abs() + next.leakage);
        d = next.distribution;
    }
    Ok((
        s1 < 0.5 * s0 && peak_p > 0.5 && fixed && worst_trace < 1e-12,
        format!(
            "entropy {s0:.4} -> {s1:.4}; peak n={peak_n} with {peak_p:.4}; trapped level fixed: {fixed}; max NSM trace error {worst_trace:.1e}; cutoff {}",
            tr.cutoff
        ),
    ))
}

fn spin_cat_checks() -> Result<(bool, String)> {
    let mut worst_cat = 0.0f64;
    let mut worst_recur = 0.0f64;
    for atoms in (2..=20).step_by(2) {
        let css = spin_cat::coherent_spin_state(atoms, FRAC_PI_2, 0.0)?;
        let cat = spin_cat::twist_evolve(&css, FRAC_PI_2, 0.0)?;
        worst_cat = worst_cat.max(1.0 - spin_cat::cat_fidelity(&cat, FRAC_PI_2, 0.0)?.fidelity);
        let back = spin_cat::twist_pure(&css, 2.0 * PI);
        let overlap = css.amplitudes().dotc(back.amplitudes()).norm_sqr();
        worst_recur = worst_recur.max((1.0 - overlap).abs());
    }
    let bath = BathSpectrum::lorentzian(1.0, 10.0, 1.0, spin_cat::DEFAULT_GRID_POINTS)?;
    let tau = spin_cat::mqs_time(&bath, 1e4)?;
    let residual = (tau * spin_cat::lamb_shift(tau, &bath)? - FRAC_PI_2).abs();
    let taus: Vec<f64> = [2, 10, 20]
        .into_iter()
        .map(|n| spin_cat::cat_report(n, &bath, 0.0, 1e4).map(|r| r.tau))
        .collect::<Result<_>>()?;
    let same = taus.iter().all(|&t| t == taus[0]);
    Ok((
        worst_cat < 1e-9 && worst_recur < 1e-9 && residual < 1e-9 && same,
        format!(
            "max cat infidelity {worst_cat:.1e}; max recurrence error {worst_recur:.1e}; tau_MQS {tau:.6} with residual {residual:.1e}, equal for N = 2, 10, 20: {same}"
        ),
    ))
}

fn determinism() -> Result<(bool, String)> {
    let configs = [
        "[engine]\nnbar = 1, 2\nt2 = 0.5\nchi = 0.5\nsamples = 20000\n[run]\nseed = 5\nworkers = 3\n",
        "[homodyne]\nnbar = 25, 49\nsamples = 20000\n[run]\nseed = 2\nworkers = 4\n",
        "[photocount]\nnbar = 5\nt2 = 0.9\n",
        "[distiller]\nnbar = 2\ntarget = 3\n",
    ];
    let mut same = true;
    for text in configs {
        let render = || -> Result<String> {
            let cfg = harness::parse_config(text)
                .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            harness::run_experiment(&cfg)
                .map(|t| t.render_csv())
                .map_err(|e| crate::Error::InvalidArgument(e.to_string()))
        };
        same &= render()? == render()?;
    }
    Ok((
        same,
        format!(
            "{} experiments re-run byte-identical: {same}",
            configs.len()
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_line_format() {
        let o = CriterionOutcome {
            id: 3,
            name: "x",
            passed: false,
            detail: "d".into(),
            seconds: 0.25,
        };
        let s = o.to_string();
        assert!(s.starts_with("[FAIL]  3 x"));
        assert!(s.ends_with("(0.2s) d") || s.ends_with("(0.3s) d"));
    }

    #[test]
    fn fast_criteria_pass() {
        for id in [2, 8, 12, 14] {
            let o = run(id);
            assert!(o.passed, "{o}");
        }
        let o = run(3);
        assert!(!o.passed && o.detail.ends_with("<= 1: true"), "{o}");
    }
}
