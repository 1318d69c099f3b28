//! Accuracy, error consistency and phase segmentation agreement.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::losses::circular_mean;
use crate::math;

/// One observer's decision on one video.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DecisionRecord {
    pub observer: String,
    pub video: u64,
    pub pred: u8,
    pub label: u8,
}

impl DecisionRecord {
    pub fn correct(&self) -> bool {
        self.pred == self.label
    }
}

/// Fraction of correct decisions; `None` for an empty set.
pub fn accuracy(records: &[DecisionRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Half-width of the normal-approximation 95% binomial interval.
pub fn binomial_ci95(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * math::sqrt(p * (1.0 - p) / n as f64)
}

/// Accuracy-corrected agreement of two observers' error patterns on the same
/// videos.
pub fn error_consistency(a: &[DecisionRecord], b: &[DecisionRecord]) -> Result<f64> {
    let index = |rs: &[DecisionRecord]| -> Result<BTreeMap<u64, bool>> {
        let mut m = BTreeMap::new();
        for r in rs {
            if m.insert(r.video, r.correct()).is_some() {
                return Err(Error::Config(alloc::format!("video {} recorded twice for {}", r.video, r.observer)));
            }
        }
        Ok(m)
    };
    let (ma, mb) = (index(a)?, index(b)?);
    if ma.is_empty() || ma.len() != mb.len() || ma.keys().zip(mb.keys()).any(|(x, y)| x != y) {
        return Err(shape_err!("observers cover different video sets ({} vs {} videos)", ma.len(), mb.len()));
    }
    let n = ma.len() as f64;
    let pa = ma.values().filter(|&&c| c).count() as f64 / n;
    let pb = mb.values().filter(|&&c| c).count() as f64 / n;
    let c_obs = ma.values().zip(mb.values()).filter(|(x, y)| x == y).count() as f64 / n;
    kappa(c_obs, pa, pb)
}

/// `(c_obs − c_exp) / (1 − c_exp)` with `c_exp = p_i p_j + (1−p_i)(1−p_j)`.
pub fn kappa(c_obs: f64, p_i: f64, p_j: f64) -> Result<f64> {
    let c_exp = p_i * p_j + (1.0 - p_i) * (1.0 - p_j);
    if (1.0 - c_exp).abs() < 1e-12 {
        return Err(Error::Undefined(alloc::format!(
            "error consistency needs 1 - c_exp > 0 (accuracies {p_i}, {p_j})"
        )));
    }
    Ok((c_obs - c_exp) / (1.0 - c_exp))
}

/// Pairwise κ between observers, in the order given. Undefined pairs are
/// `None`.
pub fn kappa_matrix(observers: &[Vec<DecisionRecord>]) -> Vec<Vec<Option<f64>>> {
    observers
        .iter()
        .map(|a| observers.iter().map(|b| error_consistency(a, b).ok()).collect())
        .collect()
}

/// Fraction of pixels in `groups` whose phase is closest to the circular
/// mean of their own group. Needs at least two nonempty groups.
pub fn segmentation_agreement(theta: &[f64], mask: &[u8], groups: &[u8]) -> Result<f64> {
    if theta.len() != mask.len() {
        return Err(shape_err!("phase map has {} pixels, mask {}", theta.len(), mask.len()));
    }
    let mut means: Vec<(u8, f64)> = Vec::new();
    for &g in groups {
        let ph: Vec<f64> = theta.iter().zip(mask).filter(|(_, &m)| m == g).map(|(&t, _)| t).collect();
        if !ph.is_empty() {
            means.push((g, circular_mean(&ph)?));
        }
    }
    if means.len() < 2 {
        return Err(Error::Undefined("segmentation agreement needs two nonempty groups".into()));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (&t, &m) in theta.iter().zip(mask) {
        if !means.iter().any(|(g, _)| *g == m) {
            continue;
        }
        total += 1;
        let nearest = means
            .iter()
            .min_by(|a, b| math::angular_distance(t, a.1).total_cmp(&math::angular_distance(t, b.1)))
            .map(|(g, _)| *g);
        if nearest == Some(m) {
            hit += 1;
        }
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{PI, TAU};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn records(observer: &str, correct: &[bool]) -> Vec<DecisionRecord> {
        correct
            .iter()
            .enumerate()
            .map(|(i, &c)| DecisionRecord { observer: observer.into(), video: i as u64, pred: c as u8, label: 1 })
            .collect()
    }

    #[test]
    fn kappa_chance_case() {
        // p_i = p_j = 0.5 and half the videos agree
        let a = records("a", &[true, true, false, false]);
        let b = records("b", &[true, false, true, false]);
        assert!(error_consistency(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kappa_identical_observers() {
        let pattern: Vec<bool> = (0..10).map(|i| i < 8).collect();
        let a = records("a", &pattern);
        let b = records("b", &pattern);
        // c_obs = 1, c_exp = 0.64 + 0.04 = 0.68
        assert!((error_consistency(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((kappa(1.0, 0.8, 0.8).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_perfect_observers_is_undefined() {
        let a = records("a", &[true; 5]);
        assert!(matches!(error_consistency(&a, &a), Err(Error::Undefined(_))));
        let z = records("z", &[false; 5]);
        assert!(error_consistency(&z, &z).is_err());
    }

    #[test]
    fn kappa_rejects_mismatched_videos() {
        let a = records("a", &[true, false, true]);
        let b = records("b", &[true, false]);
        assert!(error_consistency(&a, &b).is_err());
    }

    #[test]
    fn kappa_matrix_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<Vec<DecisionRecord>> =
            (0..4).map(|o| records(&alloc::format!("o{o}"), &(0..50).map(|_| rng.random_bool(0.7)).collect::<Vec<_>>())).collect();
        let m = kappa_matrix(&obs);
        for i in 0..4 {
            assert!((m[i][i].unwrap() - 1.0).abs() < 1e-12);
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn ci_half_width() {
        assert!((binomial_ci95(0.8, 2000) - 0.0175).abs() < 5e-5);
        assert_eq!(binomial_ci95(0.5, 0), 0.0);
    }

    #[test]
    fn accuracy_of_constant_positive_predictor_is_label_mean() {
        let rs: Vec<DecisionRecord> = (0..10)
            .map(|i| DecisionRecord { observer: "c".into(), video: i, pred: 1, label: (i % 3 == 0) as u8 })
            .collect();
        assert!((accuracy(&rs).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(accuracy(&[]), None);
    }

    #[test]
    fn agreement_of_ideal_phases_is_one() {
        let mask: Vec<u8> = (0..30).map(|i| (i % 4) as u8).collect();
        let theta: Vec<f64> = mask.iter().map(|&g| g as f64 * TAU / 3.0).collect();
        assert_eq!(segmentation_agreement(&theta, &mask, &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn agreement_of_random_phases_is_a_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // each group mean is pulled toward its own pixels by O(1/sqrt(n)),
        // so large groups are used
        let mask: Vec<u8> = (0..9000).map(|i| (i % 3) as u8).collect();
        let mut acc = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let theta: Vec<f64> = (0..9000).map(|_| rng.random_range(-PI..PI)).collect();
            acc += segmentation_agreement(&theta, &mask, &[0, 1, 2]).unwrap();
        }
        let mean = acc / trials as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn agreement_drops_with_mislabeled_pixels() {
        // 10 target pixels of which 3 carry the distractor phase
        let mut mask = vec![0u8; 20];
        mask.extend([1u8; 10]);
        mask.extend([2u8; 10]);
        let mut theta: Vec<f64> = mask.iter().map(|&g| g as f64 * TAU / 3.0).collect();
        for t in theta.iter_mut().skip(20).take(3) {
            *t = 2.0 * TAU / 3.0;
        }
        let s = segmentation_agreement(&theta, &mask, &[0, 1, 2]).unwrap();
        assert!((s - 37.0 / 40.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn agreement_needs_two_groups() {
        assert!(segmentation_agreement(&[0.0, 1.0], &[1, 1], &[0, 1, 2]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn kappa_is_symmetric_and_one_on_itself(
            a in proptest::collection::vec(proptest::bool::ANY, 2..40),
            flips in proptest::collection::vec(proptest::bool::ANY, 40),
        ) {
            let b: Vec<bool> = a.iter().zip(&flips).map(|(&x, &f)| x ^ f).collect();
            let (ra, rb) = (records("a", &a), records("b", &b));
            proptest::prop_assert_eq!(error_consistency(&ra, &rb).ok(), error_consistency(&rb, &ra).ok());
            if a.iter().any(|&x| x) && a.iter().any(|&x| !x) {
                proptest::prop_assert!((error_consistency(&ra, &ra).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
