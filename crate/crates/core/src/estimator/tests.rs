use super::*;
use crate::geometry::degeneracy_class;
use crate::synthetic::{RandomSeed, SweepGenerator};
use crate::{DipoleEmitter, EmitterSystem, OrientationLabel::*};
use proptest::prelude::*;
use std::sync::OnceLock;

fn optics() -> OpticalSystem {
    OpticalSystem::default()
}

fn estimator() -> &'static Estimator {
    static E: OnceLock<Estimator> = OnceLock::new();
    E.get_or_init(|| Estimator::new(&optics(), FitOptions::default()).unwrap())
}

fn pair(a: crate::OrientationLabel, b: crate::OrientationLabel) -> OrientationPair {
    OrientationPair::new(a, b)
}

fn noiseless(truth: &TruthParameters, angles: Option<Vec<f64>>) -> PolarizationSweep {
    let mut gen = SweepGenerator::new(optics()).unwrap();
    if let Some(a) = angles {
        gen = gen.with_angles_deg(a);
    }
    gen.expected(&truth.to_system(&optics()).unwrap(), 1000.0)
        .unwrap()
}

fn noisy(truth: &TruthParameters, t: f64, seed: u64) -> PolarizationSweep {
    SweepGenerator::new(optics())
        .unwrap()
        .generate(&truth.to_system(&optics()).unwrap(), t, RandomSeed(seed))
        .unwrap()
}

fn fig2() -> TruthParameters {
    TruthParameters::new(pair(A, C), 0.4, 0.05).unwrap()
}

fn is_mixed(class: &DegeneracyClass) -> bool {
    class.members.contains(&pair(A, C))
}

#[test]
fn chi_squared_basics() {
    let s = noiseless(&fig2(), None);
    assert!(chi_squared(&s, &s, 1.0).unwrap() < 1e-20);
    // identical rescaling of both curves
    let v = chi_squared(&s.scaled(3.0), &s.scaled(3.0), 1.0).unwrap();
    assert!(v < 1e-20);
    let other = noiseless(&TruthParameters::new(pair(A, A), 0.0, 0.05).unwrap(), None);
    let a = chi_squared(&s, &other, 1.0).unwrap();
    let b = chi_squared(&s.scaled(0.01), &other.scaled(50.0), 1.0).unwrap();
    assert!(a > 0.0);
    assert!((a - b).abs() <= 1e-12 * a);
    let shorter = noiseless(&fig2(), Some((0..10).map(|i| 10.0 * i as f64).collect()));
    assert!(matches!(
        chi_squared(&s, &shorter, 1.0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn noiseless_round_trip_true_pair() {
    let s = noiseless(&fig2(), None);
    let fit = estimator().fit_pair(&s, pair(A, C)).unwrap();
    assert!((fit.hypothesis.ratio - 0.4).abs() < 0.01, "{fit:?}");
    assert!((fit.hypothesis.background - 0.05).abs() < 0.01, "{fit:?}");
    assert!(fit.chi2 < 1e-8, "{fit:?}");
    assert!(fit.converged);

    let wrong = estimator().fit_pair(&s, pair(A, A)).unwrap();
    assert!(wrong.chi2 > 1e4 * fit.chi2.max(1e-12), "{wrong:?}");
}

#[test]
fn single_emitter_extinguishes_second() {
    let truth = TruthParameters::new(pair(A, A), 0.0, 0.1).unwrap();
    let s = noiseless(&truth, None);
    for p in [pair(A, C), pair(B, D)] {
        let fit = estimator().fit_pair(&s, p).unwrap();
        assert!(fit.hypothesis.ratio < 1e-3, "{fit:?}");
    }
    let result = estimator().fit_all(&s).unwrap();
    assert_eq!(result.verdict, Verdict::OneEmitter);
    assert!((result.recovered_background - 0.1).abs() < 1e-3);
}

#[test]
fn mixed_pairs_agree() {
    let s = noisy(&fig2(), 1000.0, 11);
    let result = estimator().fit_all(&s).unwrap();
    let mixed: Vec<f64> = result
        .per_pair
        .iter()
        .filter(|f| {
            !f.hypothesis.pair.is_aligned()
                && degeneracy_class(f.hypothesis.pair).members.len() == 4
        })
        .map(|f| f.chi2)
        .collect();
    assert_eq!(mixed.len(), 4);
    for c in &mixed {
        assert!((c - mixed[0]).abs() <= 1e-6 * mixed[0], "{mixed:?}");
    }
}

#[test]
fn fig2_scenario_selects_mixed_class() {
    let s = noisy(&fig2(), 1000.0, 2024);
    let result = estimator().fit_all(&s).unwrap();
    assert!(is_mixed(&result.best_class));
    assert_eq!(result.verdict, Verdict::TwoEmitters);
    assert!((result.recovered_ratio - 0.4).abs() < 0.03);
    assert!(result.best_fit.chi2 < 3e-4, "{}", result.best_fit.chi2);
    for c in result
        .classes
        .iter()
        .filter(|c| c.class.id != result.best_class.id)
    {
        assert!(c.chi2 > 100.0 * result.best_fit.chi2);
    }
}

#[test]
fn single_emitter_with_background_is_one_emitter() {
    for seed in 0..3 {
        let s = noisy(
            &TruthParameters::new(pair(C, C), 0.0, 0.05).unwrap(),
            1000.0,
            seed,
        );
        assert_eq!(
            estimator().fit_all(&s).unwrap().verdict,
            Verdict::OneEmitter
        );
    }
}

#[test]
fn aligned_classes_are_offset_equivalent() {
    let classes = degeneracy_classes();
    let e = estimator();
    let aligned: Vec<_> = classes.iter().filter(|c| !is_mixed(c)).collect();
    let mixed = classes.iter().find(|c| is_mixed(c)).unwrap();
    assert_eq!(aligned.len(), 2);
    assert!(e.offset_equivalent(aligned[0], aligned[1]));
    assert!(!e.offset_equivalent(aligned[0], mixed));
    assert!(e.offset_equivalent(mixed, mixed));
}

#[test]
fn round_trip_grid() {
    let e = estimator();
    for p in enumerate_pairs() {
        for &ratio in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &bg in &[0.0, 0.1, 0.2, 0.3] {
                let truth = TruthParameters::new(p, ratio, bg).unwrap();
                let r = e.fit_all(&noiseless(&truth, None)).unwrap();
                let truth_class = degeneracy_class(p);
                assert!(
                    r.best_class.id == truth_class.id
                        || e.offset_equivalent(&r.best_class, truth_class),
                    "{p} {ratio} {bg}: {:?}",
                    r.best_class
                );
                assert!(
                    (r.best_fit.hypothesis.ratio - ratio).abs() < 0.01,
                    "{p} {ratio} {bg}: {:?}",
                    r.best_fit
                );
                assert!(
                    (r.best_fit.hypothesis.background - bg).abs() < 0.01,
                    "{p} {ratio} {bg}: {:?}",
                    r.best_fit
                );
                assert_eq!(r.verdict, Verdict::TwoEmitters, "{p} {ratio} {bg}");
            }
        }
    }
}

#[test]
fn rejects_short_sweeps() {
    let narrow = noiseless(&fig2(), Some((0..9).map(|i| 10.0 * i as f64).collect()));
    assert!(matches!(
        estimator().fit_pair(&narrow, pair(A, C)),
        Err(Error::InvalidInput(_))
    ));
    let sparse = noiseless(&fig2(), Some((0..7).map(|i| 30.0 * i as f64).collect()));
    assert!(matches!(
        estimator().fit_all(&sparse),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn options_validation() {
    let bad = FitOptions {
        rel_margin: 0.0,
        ..Default::default()
    };
    assert!(Estimator::new(&optics(), bad).is_err());
    let bad = FitOptions {
        g2_weight: -1.0,
        ..Default::default()
    };
    assert!(Estimator::new(&optics(), bad).is_err());
}

#[test]
fn iteration_cap_is_reported() {
    let opts = FitOptions {
        nelder_mead: nelder_mead::NelderMeadOptions {
            max_iterations: 3,
            ..Default::default()
        },
        ..Default::default()
    };
    let e = Estimator::new(&optics(), opts).unwrap();
    let r = e.fit_all(&noisy(&fig2(), 1000.0, 5)).unwrap();
    assert!(!r.converged);
    assert!(r.per_pair.iter().all(|f| f.chi2.is_finite()));
}

#[test]
fn truth_parameters_from_system() {
    let sys = EmitterSystem::with_relative_background(
        vec![DipoleEmitter::new(C, 0.8), DipoleEmitter::new(A, 2.0)],
        0.07,
        &optics(),
    )
    .unwrap();
    let t = TruthParameters::from_system(&sys, &optics()).unwrap();
    assert_eq!(t.pair, pair(A, C));
    assert!((t.ratio - 0.4).abs() < 1e-12);
    assert!((t.background - 0.07).abs() < 1e-12);
}

#[test]
fn model_sweep_matches_hypothesis() {
    let h = FitHypothesis {
        pair: pair(A, C),
        ratio: 0.4,
        background: 0.05,
        scale: 7.0,
        theta_offset: 0.0,
    };
    let m = estimator()
        .model_sweep(&h, &crate::synthetic::default_angles_deg())
        .unwrap();
    let max = m.intensities.iter().copied().fold(0.0, f64::max);
    assert!((max - 7.0).abs() < 1e-12);
    let s = noiseless(&fig2(), None);
    assert!(chi_squared(&s, &m, 1.0).unwrap() < 1e-20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn verdict_is_scale_invariant(c in 1e-3..1e3_f64, seed in 0..1000u64) {
        let s = noisy(&fig2(), 1000.0, seed);
        let a = estimator().fit_all(&s).unwrap();
        let b = estimator().fit_all(&s.scaled(c)).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert_eq!(a.best_class.id, b.best_class.id);
        for (x, y) in a.per_pair.iter().zip(&b.per_pair) {
            prop_assert!((x.chi2 - y.chi2).abs() <= 1e-6 * x.chi2.max(1e-12));
            prop_assert!((x.hypothesis.ratio - y.hypothesis.ratio).abs() <= 1e-6);
            prop_assert!((x.hypothesis.background - y.hypothesis.background).abs() <= 1e-6);
        }
    }

    #[test]
    fn angle_offset_only_moves_theta_offset(delta in 0.0..180.0_f64, seed in 0..1000u64) {
        let gen = SweepGenerator::new(optics()).unwrap().with_angles_deg((0..18).map(|i| 10.0 * i as f64).collect());
        let s = gen.generate(&fig2().to_system(&optics()).unwrap(), 1000.0, RandomSeed(seed)).unwrap();
        let rotated = s.rotated(delta);
        for p in [pair(A, C), pair(A, A)] {
            let a = estimator().fit_pair(&s, p).unwrap();
            let b = estimator().fit_pair(&rotated, p).unwrap();
            prop_assert!((a.hypothesis.ratio - b.hypothesis.ratio).abs() <= 1e-6, "{:?} {:?}", a, b);
            prop_assert!((a.hypothesis.background - b.hypothesis.background).abs() <= 1e-6, "{:?} {:?}", a, b);
            prop_assert!((a.chi2 - b.chi2).abs() <= 1e-6 * a.chi2, "{:?} {:?}", a, b);
            let shift = (b.hypothesis.theta_offset - a.hypothesis.theta_offset - delta.to_radians()).rem_euclid(PI);
            prop_assert!(shift.min(PI - shift) <= 1e-5, "shift residual {}", shift);
        }
    }
}

mod monte_carlo_tests {
    use super::*;

    fn mc() -> MonteCarlo {
        MonteCarlo::new(
            SweepGenerator::new(optics()).unwrap(),
            FitOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn confidence_is_deterministic_and_centered() {
        let m = mc();
        let a = m.confidence(&fig2(), 1000.0, 30, RandomSeed(1)).unwrap();
        let b = m.confidence(&fig2(), 1000.0, 30, RandomSeed(1)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!((a.mean_ratio - 0.4).abs() < 0.02);
        assert!((a.mean_background - 0.05).abs() < 0.02);
        assert!(a.covariance[0][1] == a.covariance[1][0]);
        assert!(a.covariance[0][0] >= 0.0 && a.covariance[1][1] >= 0.0);
        assert!(a.covariance[0][0] * a.covariance[1][1] >= a.covariance[0][1].powi(2) - 1e-18);
    }

    #[test]
    fn noise_free_limit_has_vanishing_area() {
        let s = mc().confidence(&fig2(), 1e9, 5, RandomSeed(2)).unwrap();
        assert!(s.sigma1_area < 1e-6, "{}", s.sigma1_area);
    }

    #[test]
    fn area_shrinks_with_time() {
        let m = mc();
        let areas: Vec<f64> = [250.0, 1000.0, 4000.0]
            .iter()
            .map(|&t| {
                m.confidence(&fig2(), t, 40, RandomSeed(3))
                    .unwrap()
                    .sigma1_area
            })
            .collect();
        assert!(areas[0] > areas[1] && areas[1] > areas[2], "{areas:?}");
    }

    #[test]
    fn ellipse_area_formula() {
        // oracle: independent parameters with sd 0.1 and 0.2 give π·0.02·q
        let samples: Vec<[f64; 2]> = [[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]]
            .iter()
            .map(|s| {
                [
                    0.1 * s[0] * (0.75_f64).sqrt(),
                    0.2 * s[1] * (0.75_f64).sqrt(),
                ]
            })
            .collect();
        let c = ConfidenceSummary::from_samples(samples, 0).unwrap();
        assert!((c.covariance[0][0] - 0.01).abs() < 1e-15);
        assert!((c.covariance[1][1] - 0.04).abs() < 1e-15);
        let q = -2.0 * (1.0 - 0.682_689_492_137_086_f64).ln();
        assert!((SIGMA1_QUANTILE_2D - q).abs() < 1e-12);
        assert!((c.sigma1_area - PI * 0.02 * q).abs() < 1e-12);
        assert!(ConfidenceSummary::from_samples(vec![[0.0, 0.0]], 0).is_err());
    }

    #[test]
    fn min_time_map_properties() {
        let m = mc();
        let opts = MinTimeOptions {
            trials: 20,
            ..Default::default()
        };
        let ratios = [0.0, 0.5];
        let bgs = [0.0, 0.2];
        let a = m
            .min_acquisition_time_map(pair(A, C), &ratios, &bgs, &opts, RandomSeed(4))
            .unwrap();
        let b = m
            .min_acquisition_time_map(pair(A, C), &ratios, &bgs, &opts, RandomSeed(4))
            .unwrap();
        assert_eq!(a, b);
        let t = |i: usize, j: usize| a.t_min[i][j].unwrap();
        assert!(t(0, 0) <= t(0, 1) && t(0, 0) <= t(1, 1), "{:?}", a.t_min);
        let capped = MinTimeOptions { t_cap: 2.0, ..opts };
        assert_eq!(
            m.min_acquisition_time(&fig2(), &capped, RandomSeed(4))
                .unwrap(),
            None
        );
    }

    #[test]
    fn background_error_sweep_trends() {
        let m = mc();
        let bgs = [0.0, 0.5];
        let sweep = m
            .background_error_sweep(pair(A, C), &bgs, &[0.4], 1e6, 3, RandomSeed(5))
            .unwrap();
        assert!(sweep.ratio_error[0][0] < 1e-3, "{:?}", sweep.ratio_error);
        let noisy = m
            .background_error_sweep(pair(A, C), &bgs, &[0.4], 1000.0, 10, RandomSeed(5))
            .unwrap();
        assert!(
            noisy.ratio_error[1][0] > noisy.ratio_error[0][0],
            "{:?}",
            noisy.ratio_error
        );
        assert!(noisy.chi2.iter().flatten().all(|&c| c >= 0.0));
    }

    #[test]
    fn free_function_uses_given_system() {
        let sys = fig2().to_system(&optics()).unwrap();
        let s = confidence_monte_carlo(&sys, &optics(), 1000.0, 10, RandomSeed(6)).unwrap();
        assert_eq!(s.n_trials, 10);
        assert!((s.mean_ratio - 0.4).abs() < 0.05);
    }
}
