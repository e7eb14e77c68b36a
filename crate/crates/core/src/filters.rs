//! Measurement-conditioned thermal light: photon counting and homodyning
//! on the reflected port of a beam splitter.
//!
//! A thermal beam of mean `nbar` meets a splitter of transmissivity `t2`.
//! The reflected beam is measured and the transmitted beam is conditioned
//! on the outcome.

use crate::error::{invalid, Error, Result};
use crate::fock::{self, DensityOperator, ThermalSpec, TruncatedBasis};
use crate::linalg::C64;
use crate::montecarlo::{self, Estimate, Rng};
use crate::thermo;

/// Default tail weight discarded from conditional distributions.
pub const DEFAULT_SUPPORT_TOLERANCE: f64 = 1e-14;

const MAX_SUPPORT: usize = 1 << 22;

fn check_split(nbar: f64, t2: f64) -> Result<()> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(invalid(format!(
            "mean photon number must be >= 0, got {nbar}"
        )));
    }
    if !(t2 > 0.0 && t2 < 1.0) {
        return Err(invalid(format!(
            "transmissivity must lie in (0, 1), got {t2}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhotocountOutcome {
    pub k: usize,
    /// Probability `P_k` of detecting `k` reflected photons.
    pub probability: f64,
    /// `P(n|k)` of the transmitted beam.
    pub distribution: Vec<f64>,
    /// Mean transmitted energy `E_k`.
    pub energy: f64,
    /// Ergotropy `W_k` of the transmitted beam.
    pub work: f64,
    /// Weight discarded before renormalizing `distribution`.
    pub truncation_weight: f64,
}

/// Ratio `q = t2 nbar / (1 + nbar)` of the conditional negative binomial.
fn conditional_ratio(nbar: f64, t2: f64) -> f64 {
    t2 * nbar / (1.0 + nbar)
}

/// Closed-form `E_k = (k + 1) t2 nbar / (1 + nbar (1 - t2))`.
pub fn conditional_energy(nbar: f64, t2: f64, k: usize) -> f64 {
    (k + 1) as f64 * t2 * nbar / (1.0 + nbar * (1.0 - t2))
}

/// `P_k`: the reflected beam is thermal with mean `(1 - t2) nbar`.
pub fn outcome_probability(nbar: f64, t2: f64, k: usize) -> f64 {
    let m = (1.0 - t2) * nbar;
    if m == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * (m / (1.0 + m)).ln() - (1.0 + m).ln()).exp()
}

/// `1 + 1/(1 + k)`.
pub fn g2_law(k: usize) -> f64 {
    1.0 + 1.0 / (1.0 + k as f64)
}

/// Conditional distribution `P(n|k) = C(n+k, k) q^n (1-q)^(k+1)` out to
/// a tail weight of `tolerance`.
pub fn conditional_distribution(
    nbar: f64,
    t2: f64,
    k: usize,
    tolerance: f64,
) -> Result<(Vec<f64>, f64)> {
    check_split(nbar, t2)?;
    let q = conditional_ratio(nbar, t2);
    if q == 0.0 {
        return Ok((vec![1.0], 0.0));
    }
    let mean = (k + 1) as f64 * q / (1.0 - q);
    let mut log_p = (k + 1) as f64 * (1.0 - q).ln();
    let mut p = vec![log_p.exp()];
    let mut kept = p[0];
    loop {
        let n = p.len();
        if n >= MAX_SUPPORT {
            return Err(Error::Truncation {
                deficit: 1.0 - kept,
                tolerance,
                cutoff: n,
            });
        }
        let ratio = q * (n + k) as f64 / n as f64;
        log_p += ratio.ln();
        let next = log_p.exp();
        p.push(next);
        kept += next;
        // ratios fall monotonically toward q beyond this point
        let r = q * (n + 1 + k) as f64 / (n + 1) as f64;
        if n as f64 > mean && r < 1.0 && next * r / (1.0 - r) <= tolerance * kept {
            break;
        }
    }
    let deficit = (1.0 - kept).max(0.0);
    let total: f64 = p.iter().sum();
    Ok((p.into_iter().map(|x| x / total).collect(), deficit))
}

/// Condition the transmitted beam on `k` reflected photons.
pub fn photocount_condition(nbar: f64, t2: f64, k: usize) -> Result<PhotocountOutcome> {
    photocount_condition_with_tolerance(nbar, t2, k, DEFAULT_SUPPORT_TOLERANCE)
}

pub fn photocount_condition_with_tolerance(
    nbar: f64,
    t2: f64,
    k: usize,
    tolerance: f64,
) -> Result<PhotocountOutcome> {
    check_split(nbar, t2)?;
    let probability = outcome_probability(nbar, t2, k);
    if !(probability > 0.0) {
        return Err(invalid(format!(
            "outcome k = {k} lies beyond the retained support"
        )));
    }
    let (distribution, truncation_weight) = conditional_distribution(nbar, t2, k, tolerance)?;
    let ergo = thermo::ergotropy_of_diagonal(&distribution)?;
    Ok(PhotocountOutcome {
        k,
        probability,
        energy: ergo.energy,
        work: ergo.ergotropy.max(0.0),
        distribution,
        truncation_weight,
    })
}

/// `g2(0)` of the `k`-conditioned transmitted beam.
pub fn g2_of_conditioned(nbar: f64, t2: f64, k: usize) -> Result<f64> {
    thermo::g2_zero(&photocount_condition(nbar, t2, k)?.distribution)
}

/// Per-mode cutoff used by the Fock-space oracle.
pub fn oracle_cutoff(nbar: f64, k: usize) -> usize {
    (nbar + 12.0 * nbar.sqrt()).ceil() as usize + k + 10
}

/// Conditional distribution from explicit two-mode Fock vectors.
///
/// Each input sector `|N, 0>` is mapped through the splitter by building
/// `(t a† + r b†)^N |0, 0> / sqrt(N!)` one creation operator at a time,
/// then projected onto `k` reflected photons. Sectors run up to `cutoff`
/// and continue while the remaining conditional weight exceeds
/// `tolerance`. Returns the distribution and the last sector used.
pub fn photocount_oracle(
    nbar: f64,
    t2: f64,
    k: usize,
    cutoff: usize,
    tolerance: f64,
) -> Result<(Vec<f64>, usize)> {
    check_split(nbar, t2)?;
    let spec = ThermalSpec::new(nbar)?;
    let (t, r) = (t2.sqrt(), (1.0 - t2).sqrt());
    // amplitudes over j = photons in the reflected mode
    let mut v = vec![1.0f64];
    let mut weights = Vec::new();
    let mut acc = 0.0;
    let mut prev = 0.0;
    let mut total = 0usize;
    loop {
        if total >= k {
            let w = spec.probability(total) * v[k] * v[k];
            weights.push(w);
            acc += w;
            let ratio = if prev > 0.0 { w / prev } else { f64::INFINITY };
            prev = w;
            if total + 1 >= cutoff
                && ratio < 1.0
                && acc > 0.0
                && w * ratio / (1.0 - ratio) <= tolerance * acc
            {
                break;
            }
        }
        if total >= MAX_SUPPORT {
            return Err(Error::Truncation {
                deficit: f64::NAN,
                tolerance,
                cutoff: total,
            });
        }
        let n = total + 1;
        let mut next = vec![0.0; n + 1];
        for (j, &a) in v.iter().enumerate() {
            // a† on |N-1-j, j> and b† on the same
            next[j] += t * ((n - j) as f64).sqrt() * a;
            next[j + 1] += r * ((j + 1) as f64).sqrt() * a;
        }
        let s = (n as f64).sqrt();
        v = next.into_iter().map(|x| x / s).collect();
        total = n;
    }
    if !(acc > 0.0) {
        return Err(Error::VanishingProbability(acc));
    }
    Ok((weights.into_iter().map(|w| w / acc).collect(), total))
}

/// Outcomes `k = 0, 1, ...` until the remaining reflected weight drops
/// below `tolerance`.
pub fn photocount_family(nbar: f64, t2: f64, tolerance: f64) -> Result<Vec<PhotocountOutcome>> {
    check_split(nbar, t2)?;
    let reflected = ThermalSpec::new((1.0 - t2) * nbar)?;
    let kmax = reflected.cutoff_for(tolerance);
    (0..kmax)
        .filter(|&k| outcome_probability(nbar, t2, k) > 0.0)
        .map(|k| photocount_condition(nbar, t2, k))
        .collect()
}

/// `sum_k P_k W_k`.
pub fn mean_work_photocount(nbar: f64, t2: f64) -> Result<f64> {
    let family = photocount_family(nbar, t2, DEFAULT_SUPPORT_TOLERANCE)?;
    Ok(family.iter().map(|o| o.probability * o.work).sum())
}

/// Outcome-weighted average of diagonal conditional states.
pub fn nonselective_average(family: &[(f64, &[f64])]) -> Result<DensityOperator> {
    if family.is_empty() {
        return Err(invalid("empty outcome family"));
    }
    let len = family.iter().map(|(_, p)| p.len()).max().unwrap_or(1);
    let mut avg = vec![0.0; len];
    let mut total = 0.0;
    for (w, p) in family {
        if !(*w >= 0.0) {
            return Err(invalid("outcome weights must be >= 0"));
        }
        total += w;
        for (a, x) in avg.iter_mut().zip(p.iter()) {
            *a += w * x;
        }
    }
    if !(total > 0.0) {
        return Err(Error::VanishingProbability(total));
    }
    for a in avg.iter_mut() {
        *a /= total;
    }
    DensityOperator::from_diagonal(vec![len], &avg)
}

/// Averaged photocount family as a single-mode state.
pub fn nonselective_photocount(nbar: f64, t2: f64) -> Result<DensityOperator> {
    let family = photocount_family(nbar, t2, DEFAULT_SUPPORT_TOLERANCE)?;
    let pairs: Vec<(f64, &[f64])> = family
        .iter()
        .map(|o| (o.probability, o.distribution.as_slice()))
        .collect();
    nonselective_average(&pairs)
}

/// Noise variance per real quadrature for a local oscillator of amplitude
/// `beta`: `1 + 1/(4 beta^2)`.
pub fn lo_noise_variance(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!(
            "local oscillator amplitude must be > 0, got {beta}"
        )));
    }
    Ok(1.0 + 1.0 / (4.0 * beta * beta))
}

/// Transmissivity and oscillator amplitude with `1 - t2 = 1/sqrt(nbar)` and
/// `2 beta^2 = sqrt(nbar)`.
pub fn homodyne_optimum(nbar: f64) -> Result<(f64, f64)> {
    if !(nbar > 1.0) {
        return Err(invalid("optimum needs nbar > 1"));
    }
    let s = nbar.sqrt();
    Ok((1.0 - 1.0 / s, (s / 2.0).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomodyneOutcome {
    pub gamma: C64,
    /// Posterior mean of the input amplitude.
    pub input_mean: C64,
    /// Posterior variance of the input amplitude, `E|alpha - m|^2`.
    pub posterior_variance: f64,
    /// Displacement `mu = t m` of the transmitted beam.
    pub displacement: C64,
    /// Thermal mean of the transmitted beam about `mu`.
    pub residual_thermal_mean: f64,
    /// `|mu|^2`.
    pub work: f64,
}

/// Gaussian update of the thermal P-function against
/// `gamma = sqrt(1 - t2) alpha + zeta`.
pub fn homodyne_condition(nbar: f64, t2: f64, beta: f64, gamma: C64) -> Result<HomodyneOutcome> {
    check_split(nbar, t2)?;
    let noise = 2.0 * lo_noise_variance(beta)?;
    let r2 = 1.0 - t2;
    let denom = r2 * nbar + noise;
    let input_mean = gamma * (r2.sqrt() * nbar / denom);
    let posterior_variance = nbar * noise / denom;
    let displacement = input_mean * t2.sqrt();
    Ok(HomodyneOutcome {
        gamma,
        input_mean,
        posterior_variance,
        displacement,
        residual_thermal_mean: t2 * posterior_variance,
        work: displacement.norm_sqr(),
    })
}

/// Draw an outcome from the measurement model.
pub fn sample_homodyne(rng: &mut Rng, nbar: f64, t2: f64, beta: f64) -> Result<HomodyneOutcome> {
    let noise = 2.0 * lo_noise_variance(beta)?;
    let alpha = montecarlo::thermal_amplitude(rng, nbar);
    let zeta = montecarlo::complex_gaussian(rng, noise);
    homodyne_condition(nbar, t2, beta, alpha * (1.0 - t2).sqrt() + zeta)
}

/// Exact outcome average of `|mu|^2`:
/// `t2 (1 - t2) nbar^2 / ((1 - t2) nbar + 2 sigma^2)`.
pub fn mean_work_homodyne_exact(nbar: f64, t2: f64, beta: f64) -> Result<f64> {
    check_split(nbar, t2)?;
    let noise = 2.0 * lo_noise_variance(beta)?;
    let r2 = 1.0 - t2;
    Ok(t2 * r2 * nbar * nbar / (r2 * nbar + noise))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomodyneWork {
    pub gross: Estimate,
    pub gross_exact: f64,
    /// `gross - 2 beta^2`.
    pub net: f64,
    pub lo_energy: f64,
}

/// Monte Carlo mean work over homodyne outcomes.
pub fn mean_work_homodyne(
    nbar: f64,
    t2: f64,
    beta: f64,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<HomodyneWork> {
    if samples < 10_000 {
        return Err(invalid(format!(
            "homodyne averages need at least 10^4 samples, got {samples}"
        )));
    }
    let gross_exact = mean_work_homodyne_exact(nbar, t2, beta)?;
    let blocks =
        montecarlo::run_blocks(seed, samples, workers, |rng, n| -> Result<(f64, usize)> {
            let mut s = 0.0;
            for _ in 0..n {
                s += sample_homodyne(rng, nbar, t2, beta)?.work;
            }
            Ok((s, n))
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let gross = montecarlo::estimate(&blocks);
    let lo_energy = 2.0 * beta * beta;
    Ok(HomodyneWork {
        gross,
        gross_exact,
        net: gross.mean - lo_energy,
        lo_energy,
    })
}

/// Least-squares fit of `W = nbar - a sqrt(nbar) + c`; returns `(a, c)`.
pub fn fit_work_scaling(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(invalid("scaling fit needs at least two points"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.sqrt()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1 - p.0).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("scaling fit needs distinct photon numbers"));
    }
    let slope = sxy / sxx;
    Ok((-slope, my - slope * mx))
}

/// Total information gain over both quadratures, in nats.
pub fn mutual_information_homodyne(nbar: f64, t2: f64, beta: f64) -> Result<f64> {
    check_split(nbar, t2)?;
    let noise = lo_noise_variance(beta)?;
    let signal = (1.0 - t2) * nbar / 2.0;
    Ok(2.0 * 0.5 * (1.0 + signal / noise).ln())
}

/// Transmitted-beam state for one homodyne outcome, built explicitly as a
/// displaced thermal state in a truncated basis.
pub fn homodyne_state(outcome: &HomodyneOutcome, cutoff: usize) -> Result<DensityOperator> {
    let basis = TruncatedBasis::new(cutoff)?;
    let th = fock::make_thermal_with_tolerance(
        ThermalSpec::new(outcome.residual_thermal_mean)?,
        basis,
        1e-6,
    )?;
    let d = fock::displacement(outcome.displacement, cutoff);
    let m = &d * th.matrix() * d.adjoint();
    let m = (&m + m.adjoint()) * C64::from(0.5);
    let trace: f64 = (0..cutoff).map(|i| m[(i, i)].re).sum();
    let deficit = 1.0 - trace;
    DensityOperator::from_matrix(
        vec![cutoff],
        m * C64::from(1.0 / trace),
        deficit.max(0.0) + 1e-6,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonselectiveEstimate {
    pub distribution: Vec<f64>,
    pub ergotropy: f64,
    /// Batch-means standard error of the ergotropy.
    pub std_error: f64,
}

/// Monte Carlo photon distribution of the outcome-averaged transmitted
/// beam, with the ergotropy of the estimate.
///
/// Each sample draws an outcome and then a coherent amplitude from the
/// conditioned P-function; its Poisson weights are accumulated.
pub fn nonselective_homodyne(
    nbar: f64,
    t2: f64,
    beta: f64,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<NonselectiveEstimate> {
    check_split(nbar, t2)?;
    let cutoff = ThermalSpec::new(t2 * nbar)?.cutoff_for(1e-12) + 20;
    let blocks = montecarlo::run_blocks(
        seed,
        samples,
        workers,
        |rng, n| -> Result<(Vec<f64>, usize)> {
            let mut acc = vec![0.0; cutoff];
            for _ in 0..n {
                let o = sample_homodyne(rng, nbar, t2, beta)?;
                let a = o.displacement + montecarlo::complex_gaussian(rng, o.residual_thermal_mean);
                for (x, w) in acc.iter_mut().zip(fock::coherent_amplitudes(a, cutoff)) {
                    *x += w.norm_sqr();
                }
            }
            Ok((acc, n))
        },
    )?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ergotropy_of = |sum: &[f64]| -> Result<f64> {
        let total: f64 = sum.iter().sum();
        let p: Vec<f64> = sum.iter().map(|x| x / total).collect();
        Ok(thermo::ergotropy_of_diagonal(&p)?.ergotropy.max(0.0))
    };
    let mut sum = vec![0.0; cutoff];
    for (b, _) in &blocks {
        for (s, x) in sum.iter_mut().zip(b) {
            *s += x;
        }
    }
    let per_block: Vec<(f64, usize)> = blocks
        .iter()
        .map(|(b, _)| Ok((ergotropy_of(b)?, 1)))
        .collect::<Result<_>>()?;
    let spread = montecarlo::estimate(&per_block);
    let total: f64 = sum.iter().sum();
    Ok(NonselectiveEstimate {
        ergotropy: ergotropy_of(&sum)?,
        distribution: sum.iter().map(|x| x / total).collect(),
        std_error: spread.std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{joint_index, make_fock, make_thermal_with_tolerance, tensor, ModeRegister};
    use crate::optics::{Circuit, CircuitElement};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_count_is_thermal_with_reduced_mean() {
        let (nbar, t2) = (3.0, 0.8);
        let o = photocount_condition(nbar, t2, 0).unwrap();
        let reduced = t2 * nbar / (1.0 + (1.0 - t2) * nbar);
        assert_abs_diff_eq!(o.energy, reduced, epsilon = 1e-10);
        let spec = ThermalSpec::new(reduced).unwrap();
        for (n, p) in o.distribution.iter().enumerate().take(30) {
            assert_abs_diff_eq!(*p, spec.probability(n), epsilon = 1e-12);
        }
        assert!(thermo::is_passive(&o.distribution).unwrap().passive);
        assert!(o.work < 1e-12);
    }

    #[test]
    fn conditional_energy_example() {
        let o = photocount_condition(20.0, 0.9, 10).unwrap();
        assert_abs_diff_eq!(conditional_energy(20.0, 0.9, 10), 66.0, epsilon = 1e-9);
        assert_abs_diff_eq!(o.energy, 66.0, epsilon = 1e-6);
        assert!(!thermo::is_passive(&o.distribution).unwrap().passive);
        assert!(o.work > 0.0);
    }

    #[test]
    fn g2_follows_law() {
        for nbar in [1.0, 5.0, 20.0] {
            for t2 in [0.5, 0.9, 0.99] {
                for k in [0usize, 1, 5, 10] {
                    let g = g2_of_conditioned(nbar, t2, k).unwrap();
                    assert_abs_diff_eq!(g, g2_law(k), epsilon = 1e-6);
                }
            }
        }
        assert!((g2_of_conditioned(5.0, 0.9, 64).unwrap() - 1.0).abs() < 1.0 / 65.0 + 1e-6);
    }

    fn dense_oracle(nbar: f64, t2: f64, k: usize, cutoff: usize) -> Vec<f64> {
        let basis = TruncatedBasis::new(cutoff).unwrap();
        let th = make_thermal_with_tolerance(ThermalSpec::new(nbar).unwrap(), basis, 1.0).unwrap();
        let vac = ModeRegister::Pure(make_fock(0, basis).unwrap());
        let joint = tensor(&[ModeRegister::Mixed(th), vac]).unwrap();
        let (out, _) = Circuit::new(vec![CircuitElement::beam_splitter(t2, 0, 1)])
            .apply(&joint)
            .unwrap();
        let rho = out.to_density();
        let dims = [cutoff, cutoff];
        let p: Vec<f64> = (0..cutoff - k)
            .map(|n| {
                let i = joint_index(&dims, &[n, k]);
                rho.matrix()[(i, i)].re
            })
            .collect();
        let s: f64 = p.iter().sum();
        p.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn ladder_oracle_matches_dense_splitter() {
        // sectors N < cutoff only, to match a thermal state truncated at cutoff
        let (nbar, t2, cutoff) = (0.8, 0.7, 14);
        for k in [0usize, 1, 3] {
            let dense = dense_oracle(nbar, t2, k, cutoff);
            let spec = ThermalSpec::new(nbar).unwrap();
            let (t, r) = (t2.sqrt(), (1.0 - t2).sqrt());
            let exact: Vec<f64> = (0..cutoff - k)
                .map(|n| {
                    let c = (1..=k).map(|i| (n + i) as f64 / i as f64).product::<f64>();
                    spec.probability(n + k) * c * t.powi(2 * n as i32) * r.powi(2 * k as i32)
                })
                .collect();
            let s: f64 = exact.iter().sum();
            for (a, b) in dense.iter().zip(&exact) {
                assert_abs_diff_eq!(*a, b / s, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_matches_oracle() {
        for (nbar, t2, k) in [
            (1.0, 0.5, 0usize),
            (5.0, 0.9, 5),
            (20.0, 0.99, 10),
            (20.0, 0.5, 1),
        ] {
            let (cf, _) = conditional_distribution(nbar, t2, k, 1e-15).unwrap();
            let (or, _) = photocount_oracle(nbar, t2, k, oracle_cutoff(nbar, k), 1e-15).unwrap();
            for n in 0..cf.len().min(or.len()) {
                assert_abs_diff_eq!(cf[n], or[n], epsilon = 1e-8);
            }
            let g = thermo::g2_zero(&or).unwrap();
            assert_abs_diff_eq!(g, g2_law(k), epsilon = 1e-4);
        }
    }

    #[test]
    fn outcome_probabilities_sum_to_one_and_energy_balances() {
        for (nbar, t2) in [(1.0, 0.5), (5.0, 0.9), (20.0, 0.99)] {
            let family = photocount_family(nbar, t2, 1e-14).unwrap();
            let total: f64 = family.iter().map(|o| o.probability).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            let transmitted: f64 = family.iter().map(|o| o.probability * o.energy).sum();
            assert_abs_diff_eq!(transmitted + (1.0 - t2) * nbar, nbar, epsilon = 1e-6);
        }
    }

    #[test]
    fn photocount_work_limits() {
        assert!(mean_work_photocount(20.0, 0.9).unwrap() > 0.0);
        assert_eq!(mean_work_photocount(0.0, 0.9).unwrap(), 0.0);
        let near_one = mean_work_photocount(5.0, 1.0 - 1e-7).unwrap();
        assert!(near_one < 1e-5, "{near_one}");
    }

    #[test]
    fn nonselective_photocount_is_passive() {
        for (nbar, t2) in [(1.0, 0.5), (20.0, 0.9), (5.0, 0.99)] {
            let rho = nonselective_photocount(nbar, t2).unwrap();
            let e = thermo::ergotropy(&rho).unwrap();
            assert!(e.ergotropy < 1e-9, "{}", e.ergotropy);
            assert_abs_diff_eq!(e.energy, t2 * nbar, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_outcome_family_is_identity() {
        let p = [0.1, 0.6, 0.3];
        let rho = nonselective_average(&[(0.4, &p[..])]).unwrap();
        for (a, b) in rho.diagonal().iter().zip(p) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_homodyne_outcome() {
        let o = homodyne_condition(4.0, 0.8, 1.0, C64::new(0.0, 0.0)).unwrap();
        assert_eq!(o.work, 0.0);
        assert!(o.posterior_variance > 0.0 && o.posterior_variance < 4.0);
        assert!(o.residual_thermal_mean < 0.8 * 4.0);
        assert!(homodyne_condition(4.0, 0.8, 0.0, C64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn large_nbar_follows_measurement() {
        let (t2, gamma) = (0.9, C64::new(1.3, -0.4));
        let o = homodyne_condition(1e9, t2, 50.0, gamma).unwrap();
        let target = gamma * (t2.sqrt() / (1.0 - t2).sqrt());
        assert!((o.displacement - target).norm() < 1e-6);
    }

    #[test]
    fn displaced_thermal_work_matches_fock_oracle() {
        let nbar = 4.0;
        let (t2, beta) = homodyne_optimum(nbar).unwrap();
        let o = homodyne_condition(nbar, t2, beta, C64::new(1.1, 0.7)).unwrap();
        let cutoff = (nbar + 10.0 * nbar.sqrt()).ceil() as usize + 10;
        let rho = homodyne_state(&o, cutoff).unwrap();
        let e = thermo::ergotropy(&rho).unwrap();
        assert_abs_diff_eq!(e.ergotropy, o.work, epsilon = 1e-3);
    }

    #[test]
    fn monte_carlo_work_matches_exact() {
        let (t2, beta) = homodyne_optimum(25.0).unwrap();
        let w = mean_work_homodyne(25.0, t2, beta, 40_000, 3, 1).unwrap();
        assert!((w.gross.mean - w.gross_exact).abs() < 4.0 * w.gross.std_error);
        assert!(mean_work_homodyne(25.0, t2, beta, 100, 3, 1).is_err());
    }

    #[test]
    fn weak_oscillator_limit() {
        // net work ~ 2 beta^2 (t2 r2 nbar^2 - 1) as beta -> 0
        let w = mean_work_homodyne(1.0, 0.5, 1e-3, 10_000, 1, 1).unwrap();
        assert!(w.net <= 0.0);
        let w = mean_work_homodyne(10.0, 0.5, 1e-3, 10_000, 1, 1).unwrap();
        assert!(w.net.abs() < 1e-3);
    }

    #[test]
    fn scaling_fit_recovers_coefficients() {
        let pts: Vec<(f64, f64)> = [25.0, 49.0, 100.0, 225.0]
            .iter()
            .map(|&n: &f64| (n, n - 4.0 * n.sqrt() + 6.0))
            .collect();
        let (a, c) = fit_work_scaling(&pts).unwrap();
        assert_abs_diff_eq!(a, 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c, 6.0, epsilon = 1e-10);
    }

    #[test]
    fn exact_work_scaling_constant() {
        let pts: Vec<(f64, f64)> = [25.0, 49.0, 100.0, 225.0]
            .iter()
            .map(|&n: &f64| {
                let (t2, beta) = homodyne_optimum(n).unwrap();
                (
                    n,
                    mean_work_homodyne_exact(n, t2, beta).unwrap() - 2.0 * beta * beta,
                )
            })
            .collect();
        let (a, _) = fit_work_scaling(&pts).unwrap();
        assert!((3.0..=5.0).contains(&a), "{a}");
    }

    #[test]
    fn mutual_information_examples() {
        let (t2, beta) = homodyne_optimum(100.0).unwrap();
        let i = mutual_information_homodyne(100.0, t2, beta).unwrap();
        assert!((i - 0.5 * 25f64.ln()).abs() < 0.25 * 0.5 * 25f64.ln());
        assert!(mutual_information_homodyne(100.0, 1.0 - 1e-12, 1e6).unwrap() < 1e-9);
        let mut last = 0.0;
        for n in [4.0, 9.0, 25.0, 100.0, 400.0] {
            let (t2, beta) = homodyne_optimum(n).unwrap();
            let i = mutual_information_homodyne(n, t2, beta).unwrap();
            assert!(i > last);
            last = i;
        }
    }

    #[test]
    fn nonselective_homodyne_is_passive_within_noise() {
        let (t2, beta) = homodyne_optimum(4.0).unwrap();
        let est = nonselective_homodyne(4.0, t2, beta, 20_000, 9, 1).unwrap();
        assert!(est.ergotropy <= 3.0 * est.std_error, "{est:?}");
        assert_abs_diff_eq!(
            thermo::mean_energy(&est.distribution),
            t2 * 4.0,
            epsilon = 0.1
        );
    }
}
