//! Fock-state distillation of a thermal cavity field by resonant atoms.
//!
//! Atoms enter excited and interact for a time `tau`. Unread atoms
//! (nonselective measurements) pump photons in one at a time; atoms read
//! out in the excited state (conditional measurements) filter the
//! populations. Every map here is diagonal in the Fock basis.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::fock::ThermalSpec;
use crate::thermo;

pub const DEFAULT_LEAKAGE_TOLERANCE: f64 = 1e-9;

/// Smallest acceptance probability for a conditional measurement.
pub const MIN_SUCCESS_PROBABILITY: f64 = 1e-12;

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(invalid("empty distribution"));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidState("negative or NaN population".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("populations sum to {s}")));
    }
    Ok(())
}

fn check_gtau(gtau: f64) -> Result<()> {
    if !(gtau > 0.0 && gtau.is_finite()) {
        return Err(invalid(format!("g tau must be > 0, got {gtau}")));
    }
    Ok(())
}

/// `cos^2(g tau sqrt(n + 1))`: probability the atom stays excited.
fn stay(gtau: f64, n: usize) -> f64 {
    (gtau * ((n + 1) as f64).sqrt()).cos().powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NsmResult {
    pub distribution: Vec<f64>,
    /// Weight pushed past the top level, before renormalization.
    pub leakage: f64,
}

/// One unread atom:
/// `p_n -> p_n cos^2(g tau sqrt(n+1)) + p_{n-1} sin^2(g tau sqrt(n))`.
pub fn nsm_step(dist: &[f64], gtau: f64) -> Result<NsmResult> {
    nsm_step_with_tolerance(dist, gtau, DEFAULT_LEAKAGE_TOLERANCE)
}

pub fn nsm_step_with_tolerance(dist: &[f64], gtau: f64, tolerance: f64) -> Result<NsmResult> {
    check_distribution(dist)?;
    check_gtau(gtau)?;
    let c = dist.len();
    let mut out = vec![0.0; c];
    for (n, &p) in dist.iter().enumerate() {
        let s = stay(gtau, n);
        out[n] += p * s;
        if n + 1 < c {
            out[n + 1] += p * (1.0 - s);
        }
    }
    let leakage = dist[c - 1] * (1.0 - stay(gtau, c - 1));
    if leakage > tolerance {
        return Err(Error::Leakage { leakage, tolerance });
    }
    let total: f64 = out.iter().sum();
    Ok(NsmResult {
        distribution: out.into_iter().map(|x| x / total).collect(),
        leakage,
    })
}

/// `m pi / sqrt(n + 1)`: level `n` is frozen by unread atoms.
pub fn trapping_gtau(n: usize, m: u32) -> Result<f64> {
    if m == 0 {
        return Err(invalid("trapping needs m >= 1"));
    }
    Ok(m as f64 * PI / ((n + 1) as f64).sqrt())
}

/// `(m + 1/2) pi / sqrt(n + 1)`: level `n` is removed by a successful
/// conditional measurement.
pub fn erasure_gtau(n: usize, m: u32) -> f64 {
    (m as f64 + 0.5) * PI / ((n + 1) as f64).sqrt()
}

/// Atom detected excited: returns `P_e` and the filtered populations.
pub fn cm_step(dist: &[f64], gtau: f64) -> Result<(f64, Vec<f64>)> {
    filter(dist, gtau, true)
}

/// Atom detected in the ground state.
pub fn cm_failure(dist: &[f64], gtau: f64) -> Result<(f64, Vec<f64>)> {
    filter(dist, gtau, false)
}

fn filter(dist: &[f64], gtau: f64, excited: bool) -> Result<(f64, Vec<f64>)> {
    check_distribution(dist)?;
    check_gtau(gtau)?;
    let w: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let s = stay(gtau, n);
            p * if excited { s } else { 1.0 - s }
        })
        .collect();
    let prob: f64 = w.iter().sum();
    if !(prob > MIN_SUCCESS_PROBABILITY) {
        return Err(Error::VanishingProbability(prob));
    }
    Ok((prob, w.into_iter().map(|x| x / prob).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Nsm,
    Cm,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nsm => "NSM",
            Self::Cm => "CM",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolStep {
    pub kind: StepKind,
    pub gtau: f64,
}

impl ProtocolStep {
    pub fn nsm(gtau: f64) -> Self {
        Self {
            kind: StepKind::Nsm,
            gtau,
        }
    }

    pub fn cm(gtau: f64) -> Self {
        Self {
            kind: StepKind::Cm,
            gtau,
        }
    }
}

/// Counts and timing multipliers of the three-stage schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub first_count: usize,
    pub second_count: usize,
    pub second_factor: f64,
    pub cm_count: usize,
    /// Order `m` of the erasure condition used by the conditional atoms.
    pub erasure_order: u32,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            first_count: 100,
            second_count: 50,
            second_factor: 2.0,
            cm_count: 1,
            erasure_order: 0,
        }
    }
}

/// Level erased by the conditional atoms: the next level above `target`
/// trapped in the first stage, where population above `target` collects.
pub fn erased_level(target: usize) -> usize {
    4 * (target + 1) - 1
}

/// Trapping stage at `tau1`, a second stage at `factor * tau1`, then
/// conditional atoms erasing the next trapped level above `target`.
pub fn default_schedule(target: usize, spec: &ScheduleSpec) -> Result<Vec<ProtocolStep>> {
    if !(spec.second_factor > 0.0) {
        return Err(invalid("second-stage factor must be > 0"));
    }
    let tau1 = trapping_gtau(target, 1)?;
    let tau3 = erasure_gtau(erased_level(target), spec.erasure_order);
    let mut s = Vec::with_capacity(spec.first_count + spec.second_count + spec.cm_count);
    s.extend(std::iter::repeat_n(
        ProtocolStep::nsm(tau1),
        spec.first_count,
    ));
    s.extend(std::iter::repeat_n(
        ProtocolStep::nsm(spec.second_factor * tau1),
        spec.second_count,
    ));
    s.extend(std::iter::repeat_n(ProtocolStep::cm(tau3), spec.cm_count));
    Ok(s)
}

/// Cutoff large enough that `nsm_count` upward moves from the thermal
/// support never reach the top level.
pub fn protocol_cutoff(
    nbar: f64,
    target: usize,
    nsm_count: usize,
    tolerance: f64,
) -> Result<usize> {
    let support = ThermalSpec::new(nbar)?.cutoff_for(tolerance);
    let rule = (nbar + 12.0 * nbar.sqrt()).ceil() as usize + target + 10;
    Ok(rule.max(nsm_count + support + 1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmEvent {
    pub step: usize,
    pub success_probability: f64,
    /// Probability that a retry succeeds after a failed first attempt.
    pub retry_success_probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub kind: Option<StepKind>,
    pub gtau: f64,
    pub distribution: Vec<f64>,
    pub entropy: f64,
    pub success_probability: Option<f64>,
}

impl TrajectoryPoint {
    /// `(n, p_n)` of the most populated level.
    pub fn peak(&self) -> (usize, f64) {
        self.distribution
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::MIN), |a, (n, p)| if p > a.1 { (n, p) } else { a })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub cutoff: usize,
    pub points: Vec<TrajectoryPoint>,
    pub cm_events: Vec<CmEvent>,
    pub total_leakage: f64,
}

impl Trajectory {
    pub fn initial(&self) -> &TrajectoryPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory has an initial point")
    }

    /// Product of the first-attempt success probabilities.
    pub fn success_probability(&self) -> f64 {
        self.cm_events
            .iter()
            .map(|e| e.success_probability)
            .product()
    }

    /// Product of the per-step success probabilities with retries.
    pub fn success_probability_with_retries(&self) -> f64 {
        self.cm_events
            .iter()
            .map(|e| {
                let p = e.success_probability;
                p + (1.0 - p) * e.retry_success_probability.unwrap_or(0.0)
            })
            .product()
    }
}

/// Probability that one of `cap` retries succeeds, each acting on the state
/// left by the previous failure.
fn retry_success(dist: &[f64], gtau: f64, cap: usize) -> Option<f64> {
    let (mut state, mut fail, mut success) = (dist.to_vec(), 1.0, None);
    for _ in 0..cap {
        let Ok((_, failed)) = cm_failure(&state, gtau) else {
            break;
        };
        let Ok((p, _)) = cm_step(&failed, gtau) else {
            break;
        };
        success = Some(success.unwrap_or(0.0) + fail * p);
        fail *= 1.0 - p;
        state = failed;
    }
    success
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolOptions {
    /// Conditional-measurement retries after a failure.
    pub retry_cap: usize,
    pub leakage_tolerance: f64,
    pub support_tolerance: f64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            retry_cap: 1,
            leakage_tolerance: DEFAULT_LEAKAGE_TOLERANCE,
            support_tolerance: DEFAULT_LEAKAGE_TOLERANCE,
        }
    }
}

/// Run `schedule` on a thermal field of mean `nbar`, following the branch
/// where each conditional atom succeeds on its first attempt.
pub fn run_protocol(
    nbar: f64,
    target: usize,
    schedule: &[ProtocolStep],
    options: &ProtocolOptions,
) -> Result<Trajectory> {
    let spec = ThermalSpec::new(nbar)?;
    let nsm_count = schedule.iter().filter(|s| s.kind == StepKind::Nsm).count();
    let cutoff = protocol_cutoff(nbar, target, nsm_count, options.support_tolerance)?;
    let support = spec.cutoff_for(options.support_tolerance);
    let mut dist = vec![0.0; cutoff];
    for (n, p) in dist.iter_mut().enumerate().take(support) {
        *p = spec.probability(n);
    }
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|p| *p /= total);
    run_protocol_from(dist, schedule, options)
}

/// Run `schedule` on explicit initial populations.
pub fn run_protocol_from(
    initial: Vec<f64>,
    schedule: &[ProtocolStep],
    options: &ProtocolOptions,
) -> Result<Trajectory> {
    check_distribution(&initial)?;
    let cutoff = initial.len();
    let mut points = vec![TrajectoryPoint {
        step: 0,
        kind: None,
        gtau: 0.0,
        entropy: thermo::shannon_entropy(&initial)?,
        distribution: initial,
        success_probability: None,
    }];
    let mut cm_events = Vec::new();
    let mut total_leakage = 0.0;
    for (i, step) in schedule.iter().enumerate() {
        let dist = &points.last().expect("nonempty").distribution;
        let (next, prob) = match step.kind {
            StepKind::Nsm => {
                let r = nsm_step_with_tolerance(dist, step.gtau, options.leakage_tolerance)?;
                total_leakage += r.leakage;
                (r.distribution, None)
            }
            StepKind::Cm => {
                let (p, next) = cm_step(dist, step.gtau)?;
                let retry = if options.retry_cap > 0 && p < 1.0 {
                    retry_success(dist, step.gtau, options.retry_cap)
                } else {
                    None
                };
                cm_events.push(CmEvent {
                    step: i + 1,
                    success_probability: p,
                    retry_success_probability: retry,
                });
                (next, Some(p))
            }
        };
        points.push(TrajectoryPoint {
            step: i + 1,
            kind: Some(step.kind),
            gtau: step.gtau,
            entropy: thermo::shannon_entropy(&next)?,
            distribution: next,
            success_probability: prob,
        });
    }
    Ok(Trajectory {
        cutoff,
        points,
        cm_events,
        total_leakage,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyRow {
    pub step: usize,
    pub kind: String,
    pub gtau: f64,
    pub entropy: f64,
    pub peak_n: usize,
    pub peak_prob: f64,
    pub success_probability: Option<f64>,
}

/// Per-step entropy and peak population.
pub fn entropy_trace(trajectory: &Trajectory) -> Vec<EntropyRow> {
    trajectory
        .points
        .iter()
        .map(|p| {
            let (peak_n, peak_prob) = p.peak();
            EntropyRow {
                step: p.step,
                kind: p.kind.map_or_else(|| "init".to_string(), |k| k.to_string()),
                gtau: p.gtau,
                entropy: p.entropy,
                peak_n,
                peak_prob,
                success_probability: p.success_probability,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn delta(n: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        v[n] = 1.0;
        v
    }

    #[test]
    fn vacuum_half_pi_transfers_one_photon() {
        let r = nsm_step(&delta(0, 4), PI / 2.0).unwrap();
        assert_abs_diff_eq!(r.distribution[1], 1.0, epsilon = 1e-15);
        assert_eq!(r.leakage, 0.0);
    }

    #[test]
    fn trapping_values() {
        assert_abs_diff_eq!(trapping_gtau(10, 1).unwrap(), 0.9472, epsilon = 1e-4);
        assert_abs_diff_eq!(trapping_gtau(0, 1).unwrap(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(
            trapping_gtau(4, 2).unwrap(),
            2.0 * trapping_gtau(4, 1).unwrap(),
            epsilon = 1e-15
        );
        assert!(trapping_gtau(3, 0).is_err());
        assert_abs_diff_eq!(
            erasure_gtau(5, 0),
            PI / (2.0 * 6f64.sqrt()),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(erasure_gtau(0, 0), PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            erasure_gtau(2, 3),
            7.0 * erasure_gtau(2, 0),
            epsilon = 1e-14
        );
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn trapped_levels_are_fixed_points() {
        let g = trapping_gtau(3, 1).unwrap();
        let d = delta(3, 10);
        assert_close(&nsm_step(&d, g).unwrap().distribution, &d);
        // at g tau = pi the levels 0, 3, 8 are all trapped
        let mut d = vec![0.0; 10];
        d[0] = 0.5;
        d[3] = 0.25;
        d[8] = 0.25;
        assert_close(&nsm_step(&d, PI).unwrap().distribution, &d);
    }

    #[test]
    fn cm_examples() {
        let g = erasure_gtau(2, 0);
        assert!(matches!(
            cm_step(&delta(2, 5), g),
            Err(Error::VanishingProbability(_))
        ));

        let (p, out) = cm_step(&delta(3, 6), trapping_gtau(3, 1).unwrap()).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-15);
        assert_eq!(out, delta(3, 6));

        let uniform = [0.25; 4];
        let (p, out) = cm_step(&uniform, PI).unwrap();
        let w: Vec<f64> = (0..4)
            .map(|n| (PI * ((n + 1) as f64).sqrt()).cos().powi(2))
            .collect();
        let s: f64 = w.iter().sum();
        assert_abs_diff_eq!(p, 0.25 * s, epsilon = 1e-15);
        for (a, b) in out.iter().zip(&w) {
            assert_abs_diff_eq!(*a, b / s, epsilon = 1e-15);
        }
    }

    #[test]
    fn projective_cm_is_idempotent() {
        let mut d = vec![0.0; 10];
        d[0] = 0.2;
        d[3] = 0.5;
        d[8] = 0.3;
        let (p, once) = cm_step(&d, PI).unwrap();
        let (_, twice) = cm_step(&once, PI).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-14);
        assert_close(&once, &twice);
    }

    #[test]
    fn leakage_is_reported() {
        let d = delta(3, 4);
        assert!(matches!(nsm_step(&d, 0.3), Err(Error::Leakage { .. })));
        let r = nsm_step_with_tolerance(&d, 0.3, 1.0).unwrap();
        assert!(r.leakage > 0.0);
        assert_abs_diff_eq!(r.distribution.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vacuum_protocol_stays_pure() {
        let g = trapping_gtau(0, 1).unwrap();
        let sched = vec![ProtocolStep::nsm(g); 5];
        let tr = run_protocol(0.0, 0, &sched, &ProtocolOptions::default()).unwrap();
        assert!(tr.points.iter().all(|p| p.entropy == 0.0));
        assert_eq!(tr.success_probability(), 1.0);
    }

    #[test]
    fn more_retries_never_lower_success() {
        let sched = default_schedule(3, &ScheduleSpec::default()).unwrap();
        let mut last = 0.0;
        for cap in 0..4 {
            let opts = ProtocolOptions {
                retry_cap: cap,
                ..ProtocolOptions::default()
            };
            let p = run_protocol(2.0, 3, &sched, &opts)
                .unwrap()
                .success_probability_with_retries();
            assert!(p >= last - 1e-15 && p <= 1.0);
            last = p;
        }
    }

    #[test]
    fn default_schedule_distills_target() {
        let target = 3;
        let sched = default_schedule(target, &ScheduleSpec::default()).unwrap();
        assert_eq!(sched.len(), 151);
        let tr = run_protocol(2.0, target, &sched, &ProtocolOptions::default()).unwrap();
        let (first, last) = (tr.initial(), tr.last());
        assert!(last.entropy < 0.5 * first.entropy);
        let (n, p) = last.peak();
        assert_eq!(n, target);
        assert!(p > 0.5);
        assert_eq!(tr.cm_events.len(), 1);
        let before = &tr.points[tr.points.len() - 2];
        assert!(last.entropy < before.entropy);
        assert!(tr.total_leakage == 0.0);
        let rows = entropy_trace(&tr);
        assert_eq!(rows.len(), 152);
        assert_eq!(rows[151].kind, "CM");
        assert!(tr.success_probability_with_retries() >= tr.success_probability());
    }

    #[test]
    fn erased_level_is_trapped_by_both_stages() {
        assert_eq!(erased_level(3), 15);
        let t1 = trapping_gtau(3, 1).unwrap();
        for g in [t1, 2.0 * t1] {
            assert_abs_diff_eq!(stay(g, erased_level(3)), 1.0, epsilon = 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nsm_preserves_probability_and_raises_mean(
            raw in proptest::collection::vec(0.0f64..1.0, 2..30),
            gtau in 0.01f64..6.0,
        ) {
            let mut d = raw.clone();
            d.push(0.0);
            d.push(0.0);
            let s: f64 = d.iter().sum();
            prop_assume!(s > 1e-3);
            let d: Vec<f64> = d.iter().map(|x| x / s).collect();
            let r = nsm_step_with_tolerance(&d, gtau, 1.0).unwrap();
            prop_assert!((r.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if r.leakage == 0.0 {
                prop_assert!(thermo::mean_energy(&r.distribution) >= thermo::mean_energy(&d) - 1e-12);
            }
        }

        #[test]
        fn constant_distribution_keeps_entropy(p in 0.05f64..1.0) {
            let d = vec![p, 1.0 - p];
            let tr = run_protocol_from(d.clone(), &[], &ProtocolOptions::default()).unwrap();
            prop_assert_eq!(&tr.last().distribution, &d);
            prop_assert!(tr.last().entropy <= 2f64.ln() + 1e-15);
        }
    }
}
