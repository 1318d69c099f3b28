//! Synchrony loss over grouped phase maps and the combined training objective.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::{CustomBackward, RealTensor, Tape, Var, AMPLITUDE_FLOOR};

/// Mask ids that enter the loss: background, target, distractor. Markers
/// (id 3) are left out.
pub const LOSS_GROUPS: [u8; 3] = [0, 1, 2];

/// Which splay harmonics to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Splay {
    /// Only `g = 1`, weighted `1 / (2k)`.
    #[default]
    Fundamental,
    /// `g = 1 ..= k/2`, weighted `1 / (2 g² k)`.
    AllHarmonics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynchronyConfig {
    pub groups: Vec<u8>,
    pub splay: Splay,
}

impl Default for SynchronyConfig {
    fn default() -> Self {
        Self { groups: LOSS_GROUPS.to_vec(), splay: Splay::Fundamental }
    }
}

/// `1 − R`, with `R` the mean resultant length of the unit phasors.
pub fn circular_variance(phases: &[f64]) -> Result<f64> {
    if phases.is_empty() {
        return Err(Error::Undefined("circular variance of an empty set".into()));
    }
    Ok(1.0 - resultant(phases.iter().copied()).r)
}

/// Circular mean of a nonempty phase set.
pub fn circular_mean(phases: &[f64]) -> Result<f64> {
    if phases.is_empty() {
        return Err(Error::Undefined("circular mean of an empty set".into()));
    }
    Ok(resultant(phases.iter().copied()).psi)
}

#[derive(Debug, Clone, Copy)]
struct Resultant {
    c: f64,
    s: f64,
    r: f64,
    psi: f64,
    n: usize,
}

fn resultant(it: impl Iterator<Item = f64>) -> Resultant {
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    for th in it {
        c += math::cos(th);
        s += math::sin(th);
        n += 1;
    }
    let nf = n.max(1) as f64;
    let (c, s) = (c / nf, s / nf);
    Resultant { c, s, r: math::hypot(c, s), psi: math::atan2(s, c), n }
}

/// Per-group resultants, `None` for groups with no pixels.
fn group_resultants(theta: &[f64], mask: &[u8], groups: &[u8]) -> Vec<Option<Resultant>> {
    groups
        .iter()
        .map(|&g| {
            let r = resultant(theta.iter().zip(mask).filter(|(_, &m)| m == g).map(|(&t, _)| t));
            (r.n > 0).then_some(r)
        })
        .collect()
}

fn harmonics(k: usize, splay: Splay) -> Vec<(f64, f64)> {
    match splay {
        Splay::Fundamental => vec![(1.0, 1.0 / (2.0 * k as f64))],
        Splay::AllHarmonics => {
            (1..=k / 2).map(|g| (g as f64, 1.0 / (2.0 * (g * g) as f64 * k as f64))).collect()
        }
    }
}

fn check_inputs(theta: &[f64], mask: &[u8]) -> Result<()> {
    if theta.len() != mask.len() {
        return Err(shape_err!("phase map has {} pixels, mask {}", theta.len(), mask.len()));
    }
    Ok(())
}

/// Number of configured groups that have no pixels in `mask`.
pub fn empty_groups(mask: &[u8], cfg: &SynchronyConfig) -> usize {
    cfg.groups.iter().filter(|g| !mask.contains(g)).count()
}

/// `½((1/k) Σ_l V_l + S)` over the nonempty groups, with `S` the splay term.
/// Empty groups are skipped; all groups empty is an error.
pub fn synchrony_value(theta: &[f64], mask: &[u8], cfg: &SynchronyConfig) -> Result<f64> {
    check_inputs(theta, mask)?;
    let rs: Vec<Resultant> = group_resultants(theta, mask, &cfg.groups).into_iter().flatten().collect();
    if rs.is_empty() {
        return Err(Error::Undefined("every synchrony group is empty".into()));
    }
    let k = rs.len();
    let var: f64 = rs.iter().map(|r| 1.0 - r.r).sum::<f64>() / k as f64;
    let mut splay = 0.0;
    for (g, wgt) in harmonics(k, cfg.splay) {
        let a: f64 = rs.iter().map(|r| math::cos(g * r.psi)).sum();
        let b: f64 = rs.iter().map(|r| math::sin(g * r.psi)).sum();
        splay += wgt * (a * a + b * b);
    }
    Ok(0.5 * (var + splay))
}

/// Analytic gradient of [`synchrony_value`] with respect to each phase.
pub fn synchrony_grad(theta: &[f64], mask: &[u8], cfg: &SynchronyConfig) -> Result<Vec<f64>> {
    check_inputs(theta, mask)?;
    let per_group = group_resultants(theta, mask, &cfg.groups);
    let present: Vec<(u8, Resultant)> =
        cfg.groups.iter().zip(&per_group).filter_map(|(&g, r)| r.map(|r| (g, r))).collect();
    if present.is_empty() {
        return Err(Error::Undefined("every synchrony group is empty".into()));
    }
    let k = present.len();
    let hs = harmonics(k, cfg.splay);
    let sums: Vec<(f64, f64)> = hs
        .iter()
        .map(|&(g, _)| {
            let a = present.iter().map(|(_, r)| math::cos(g * r.psi)).sum();
            let b = present.iter().map(|(_, r)| math::sin(g * r.psi)).sum();
            (a, b)
        })
        .collect();
    // dL/dψ_l for each group
    let dpsi: Vec<f64> = present
        .iter()
        .map(|(_, r)| {
            hs.iter()
                .zip(&sums)
                .map(|(&(g, w), &(a, b))| w * 2.0 * g * (-a * math::sin(g * r.psi) + b * math::cos(g * r.psi)))
                .sum()
        })
        .collect();

    let mut grad = vec![0.0; theta.len()];
    for (p, (&th, &m)) in theta.iter().zip(mask).enumerate() {
        let Some(l) = present.iter().position(|(g, _)| *g == m) else { continue };
        let r = present[l].1;
        if r.r < AMPLITUDE_FLOOR {
            continue;
        }
        let n = r.n as f64;
        let (c, s) = (math::cos(th), math::sin(th));
        let dr = (-r.c * s + r.s * c) / (n * r.r);
        let dp = (r.c * c + r.s * s) / (n * r.r * r.r);
        grad[p] = 0.5 * (-dr / k as f64 + dpsi[l] * dp);
    }
    Ok(grad)
}

struct SynchronyOp {
    inputs: [Var; 1],
    mask: Vec<u8>,
    cfg: SynchronyConfig,
}

impl CustomBackward for SynchronyOp {
    fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    fn backward(&self, inputs: &[&RealTensor], _output: &RealTensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let g = synchrony_grad(inputs[0].data(), &self.mask, &self.cfg).expect("validated in forward");
        vec![g.into_iter().map(|v| v * grad_out[0]).collect()]
    }
}

/// Records the synchrony loss of the phase map `theta` (any shape with one
/// value per mask pixel) on the tape.
pub fn synchrony_loss(tape: &mut Tape, theta: Var, mask: &[u8], cfg: &SynchronyConfig) -> Result<Var> {
    let value = synchrony_value(tape.value(theta).data(), mask, cfg)?;
    let op = SynchronyOp { inputs: [theta], mask: mask.to_vec(), cfg: cfg.clone() };
    Ok(tape.custom(RealTensor::scalar(value), Box::new(op)))
}

/// Handles to the parts of [`total_loss`].
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub bce: Var,
    pub synchrony: Vec<Var>,
}

/// `BCE(σ(logit), label) + Σ_t synchrony(θ[t], mask[t])`. Pass `None` for
/// circuits without a phase map, or to drop the synchrony term.
pub fn total_loss(
    tape: &mut Tape,
    logit: Var,
    label: f64,
    phases: Option<(&[Var], &[&[u8]])>,
    cfg: &SynchronyConfig,
) -> Result<LossTerms> {
    let bce = tape.bce_with_logits(logit, label)?;
    let mut total = bce;
    let mut synchrony = Vec::new();
    if let Some((thetas, masks)) = phases {
        if thetas.len() != masks.len() {
            return Err(shape_err!("{} phase maps but {} masks", thetas.len(), masks.len()));
        }
        for (&th, mask) in thetas.iter().zip(masks) {
            let l = synchrony_loss(tape, th, mask, cfg)?;
            total = tape.add(total, l)?;
            synchrony.push(l);
        }
    }
    Ok(LossTerms { total, bce, synchrony })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, FD_STEP};
    use crate::math::{PI, TAU};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_group_mask(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i % 3) as u8).collect()
    }

    #[test]
    fn circular_variance_examples() {
        assert!(circular_variance(&[0.7; 5]).unwrap().abs() < 1e-15);
        assert!((circular_variance(&[0.0, PI]).unwrap() - 1.0).abs() < 1e-15);
        let expect = 1.0 - core::f64::consts::SQRT_2 / 2.0;
        assert!((circular_variance(&[0.0, PI / 2.0]).unwrap() - expect).abs() < 1e-15);
        assert!(circular_variance(&[]).is_err());
    }

    #[test]
    fn splayed_synchronized_groups_give_zero() {
        let mask = three_group_mask(30);
        let theta: Vec<f64> = mask.iter().map(|&g| g as f64 * TAU / 3.0).collect();
        let l = synchrony_value(&theta, &mask, &SynchronyConfig::default()).unwrap();
        assert!(l.abs() < 1e-12, "{l}");
    }

    #[test]
    fn uniform_phase_gives_three_quarters() {
        // ½(0 + (1/6)·|3|²)
        let mask = three_group_mask(30);
        let l = synchrony_value(&[1.3; 30], &mask, &SynchronyConfig::default()).unwrap();
        assert!((l - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_groups_are_skipped() {
        // two synchronized groups in antiphase: V = 0, |1 + (−1)|² = 0
        let mask = [0u8, 0, 2, 2, 3];
        let theta = [0.0, 0.0, PI, PI, 0.4];
        let cfg = SynchronyConfig::default();
        assert!(synchrony_value(&theta, &mask, &cfg).unwrap().abs() < 1e-12);
        assert_eq!(empty_groups(&mask, &cfg), 1);
        assert!(synchrony_value(&[0.1, 0.2], &[3, 3], &cfg).is_err());
    }

    #[test]
    fn marker_pixels_are_ignored() {
        let mask = [0u8, 1, 2, 3, 3];
        let cfg = SynchronyConfig::default();
        let base = synchrony_value(&[0.0, 2.0, 4.0, 0.0, 0.0], &mask, &cfg).unwrap();
        let moved = synchrony_value(&[0.0, 2.0, 4.0, 1.0, -2.0], &mask, &cfg).unwrap();
        assert_eq!(base, moved);
        let g = synchrony_grad(&[0.0, 2.0, 4.0, 1.0, -2.0], &mask, &cfg).unwrap();
        assert_eq!(&g[3..], &[0.0, 0.0]);
    }

    #[test]
    fn harmonic_forms_agree_for_three_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = three_group_mask(24);
        let theta: Vec<f64> = (0..24).map(|_| rng.random_range(-PI..PI)).collect();
        let a = synchrony_value(&theta, &mask, &SynchronyConfig::default()).unwrap();
        let cfg = SynchronyConfig { splay: Splay::AllHarmonics, ..Default::default() };
        let b = synchrony_value(&theta, &mask, &cfg).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn all_harmonics_splay_vanishes_for_four_equidistant_groups() {
        let mask: Vec<u8> = (0..40).map(|i| (i % 4) as u8).collect();
        let theta: Vec<f64> = mask.iter().map(|&g| g as f64 * PI / 2.0).collect();
        let cfg = SynchronyConfig { groups: vec![0, 1, 2, 3], splay: Splay::AllHarmonics };
        assert!(synchrony_value(&theta, &mask, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for splay in [Splay::Fundamental, Splay::AllHarmonics] {
            for _ in 0..20 {
                let mask: Vec<u8> = (0..16).map(|_| rng.random_range(0..4u8)).collect();
                let cfg = SynchronyConfig { groups: vec![0, 1, 2, 3], splay };
                if cfg.groups.iter().all(|g| !mask.contains(g)) {
                    continue;
                }
                let theta = RealTensor::from_fn(&[1, 4, 4], |_| rng.random_range(-PI..PI));
                let r = gradcheck::check(&[theta], &[true], FD_STEP, |t, v| synchrony_loss(t, v[0], &mask, &cfg))
                    .unwrap();
                assert!(r.max_rel_err() < 1e-4, "{:?}", r);
            }
        }
    }

    #[test]
    fn gradient_descent_reaches_the_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = three_group_mask(48);
        let cfg = SynchronyConfig::default();
        let mut theta: Vec<f64> = (0..48).map(|_| rng.random_range(-PI..PI)).collect();
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            last = synchrony_value(&theta, &mask, &cfg).unwrap();
            if last < 1e-3 {
                break;
            }
            let g = synchrony_grad(&theta, &mask, &cfg).unwrap();
            for (t, gi) in theta.iter_mut().zip(g) {
                *t -= 20.0 * gi;
            }
        }
        assert!(last < 1e-3, "{last}");
    }

    #[test]
    fn total_is_bce_plus_each_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mask = three_group_mask(9);
        let masks: Vec<&[u8]> = vec![&mask; 4];
        let mut t = Tape::new();
        let logit = t.constant(RealTensor::scalar(0.3));
        let thetas: Vec<Var> =
            (0..4).map(|_| t.constant(RealTensor::from_fn(&[1, 3, 3], |_| rng.random_range(-PI..PI)))).collect();
        let cfg = SynchronyConfig::default();
        let terms = total_loss(&mut t, logit, 1.0, Some((&thetas, &masks)), &cfg).unwrap();
        let sum: f64 = t.item(terms.bce) + terms.synchrony.iter().map(|&s| t.item(s)).sum::<f64>();
        assert!((t.item(terms.total) - sum).abs() < 1e-12);
        for (th, s) in thetas.iter().zip(&terms.synchrony) {
            let direct = synchrony_value(t.value(*th).data(), &mask, &cfg).unwrap();
            assert_eq!(t.item(*s), direct);
        }
        let real_only = total_loss(&mut t, logit, 1.0, None, &cfg).unwrap();
        assert_eq!(t.item(real_only.total), t.item(real_only.bce));
        assert!(total_loss(&mut t, logit, 1.0, Some((&thetas[..2], &masks)), &cfg).is_err());
    }

    #[test]
    fn perfect_prediction_and_phases_give_near_zero_total() {
        let mask = three_group_mask(9);
        let mut t = Tape::new();
        let logit = t.constant(RealTensor::scalar(40.0));
        let th = t.constant(RealTensor::from_fn(&[1, 3, 3], |i| mask[i] as f64 * TAU / 3.0));
        let terms = total_loss(&mut t, logit, 1.0, Some((&[th], &[&mask[..]])), &SynchronyConfig::default()).unwrap();
        assert!(t.item(terms.total) < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn nonnegative_and_rotation_invariant(
            theta in proptest::collection::vec(-PI..PI, 12),
            mask in proptest::collection::vec(0u8..4, 12),
            shift in -10.0f64..10.0,
        ) {
            let cfg = SynchronyConfig::default();
            proptest::prop_assume!(cfg.groups.iter().any(|g| mask.contains(g)));
            let a = synchrony_value(&theta, &mask, &cfg).unwrap();
            let rotated: Vec<f64> = theta.iter().map(|t| t + shift).collect();
            let b = synchrony_value(&rotated, &mask, &cfg).unwrap();
            proptest::prop_assert!(a >= -1e-15);
            proptest::prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
