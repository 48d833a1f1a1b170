//! Checks against closed forms and brute-force computations that do not go
//! through the library's own machinery.

use zoomtower::contraction::ZoomingContraction;
use zoomtower::dynamics::maps::*;
use zoomtower::measures::*;
use zoomtower::nested::build_nested_ball;
use zoomtower::preballs::{Admissibility, TimeSource};
use zoomtower::region::Interval as Iv;
use zoomtower::tower::*;
use zoomtower::zooming::{compute_ell, ell_scan, ell_series};
use zoomtower::Interval;

fn arcsine_cdf(x: f64) -> f64 {
    2.0 / std::f64::consts::PI * x.sqrt().asin()
}

#[test]
fn logistic_density_is_arcsine() {
    let l = logistic::<f64>(4.0);
    let adm = Admissibility { alpha: ZoomingContraction::power(0.6), radius: 0.25, times: TimeSource::All };
    let caps = TowerCaps { r_max: 40, mass_target: 1e-6, ..Default::default() };
    let tw = build_local_tower(&l, &Interval::new(0.25, 0.75), &adm, &caps).unwrap();
    let tm = invariant_density(&l, &tw, &ReferenceMeasure::Lebesgue, &DensityOptions::default()).unwrap();
    let pm = project(&l, &tw, &tm, 1 << 14).unwrap();
    let bins = 50;
    let h = pm.histogram(bins);
    let l1: f64 = (0..bins)
        .map(|k| {
            let (a, b) = (k as f64 / bins as f64, (k + 1) as f64 / bins as f64);
            (h[k] - (arcsine_cdf(b) - arcsine_cdf(a)) * bins as f64).abs()
        })
        .sum::<f64>()
        / bins as f64;
    assert!(l1 < 0.01, "L1 {l1}");
    // first moment of the arcsine law is 1/2, second 3/8
    assert!((pm.moment(1) - 0.5).abs() < 2e-3);
    assert!((pm.moment(2) - 0.375).abs() < 2e-3);
}

#[test]
fn tent_density_is_uniform() {
    let t = tent::<f64>();
    let r = 0.1;
    let alpha = ZoomingContraction::power(0.5);
    let ell = ell_scan(&alpha, &[r, 4.0 * r], 200).unwrap();
    let adm = Admissibility { alpha, radius: r, times: TimeSource::Multiples { ell } };
    let nb = build_nested_ball(&t, 0.45, r, &adm, None).unwrap();
    let caps = TowerCaps { r_max: 24, mass_target: 1e-6, ..Default::default() };
    let tw = build_local_tower(&t, &nb.core, &adm, &caps).unwrap();
    let tm = invariant_density(&t, &tw, &ReferenceMeasure::Lebesgue, &DensityOptions::default()).unwrap();
    for k in 0..=100 {
        let x = nb.core.lo + nb.core.len() * k as f64 / 100.0;
        assert!((tm.relative_density(x) - 1.0).abs() < 1e-6, "{x}: {}", tm.relative_density(x));
    }
}

#[test]
fn logistic_lyapunov_is_log2() {
    let l = logistic::<f64>(4.0);
    let e = lyapunov(&l, &Uniform::default(), 100_000, &McOptions::new(256, 3)).unwrap();
    assert!(e.ci95 < 0.01);
    assert!((e.mean - std::f64::consts::LN_2).abs() < 2.0 * e.ci95, "{} +- {}", e.mean, e.ci95);
}

#[test]
fn doubling_mean_return_matches_projection() {
    let d = doubling::<f64>();
    let adm = Admissibility { alpha: ZoomingContraction::power(0.5), radius: 0.25, times: TimeSource::All };
    let caps = TowerCaps { r_max: 24, mass_target: 1e-7, ..Default::default() };
    let tw = build_local_tower(&d, &Interval::new(1.0 / 3.0, 2.0 / 3.0), &adm, &caps).unwrap();
    // Lebesgue is F-invariant here, so int R dnu is the Lebesgue mean of R
    let direct: f64 = tw.atoms.iter().map(|a| a.ret as f64 * a.interval.len()).sum::<f64>() / tw.covered_mass();
    let tm = invariant_density(&d, &tw, &ReferenceMeasure::Lebesgue, &DensityOptions::default()).unwrap();
    assert!((tm.mean_return - direct).abs() < 1e-6 * direct, "{} vs {direct}", tm.mean_return);
}

#[test]
fn ell_matches_its_definition() {
    let target = 16.0 * 3f64.ln();
    for lambda in [0.05, 0.1, 0.3, 0.5, 1.0, 2.0, 4.0, 16.0 * 3f64.ln() / 7.0] {
        let ell = compute_ell(lambda);
        // smallest integer with ell * lambda >= 16 log 3, by scanning
        let scan = (1..10_000).find(|&k| k as f64 * lambda >= target * (1.0 - 1e-15)).unwrap();
        assert_eq!(ell, scan, "lambda {lambda}");
        let direct: f64 = (1..2000).map(|n| (-lambda * ell as f64 * n as f64 / 8.0).exp()).sum();
        assert!((ell_series(lambda, ell) - direct).abs() < 1e-12);
        assert!(ell_series(lambda, ell) <= 1.0 / 8.0 + 1e-12);
    }
}

#[test]
fn tripling_fixed_points() {
    let t = tripling::<f64>();
    let o = find_periodic_repeller(&t, Iv::new(0.3, 0.7), &RepellerSearch::period(1)).unwrap();
    assert!((o.points[0] - 0.5).abs() < 1e-15);
    assert_eq!(o.multiplier, 3.0);
}

#[test]
fn neutral_period_two_orbit() {
    // (sqrt 3 - 1)/2 and (3 - sqrt 3)/2 swap under the map
    let m = neutral_circle::<f64>();
    let o = find_periodic_repeller(&m, Iv::new(0.0, 1.0), &RepellerSearch::period(2)).unwrap();
    let mut p = o.points.clone();
    p.sort_by(f64::total_cmp);
    assert!((p[0] - (3f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
    assert!((p[1] - (3.0 - 3f64.sqrt()) / 2.0).abs() < 1e-12);
}

#[test]
fn lebesgue_correlations_vanish_for_doubling() {
    // int cos(2 pi x) cos(2 pi 2^n x) dx = 0 for n >= 1
    let d = doubling::<f64>();
    let c = correlation(&d, &Uniform::default(), &Observable::cos2pi(), &Observable::cos2pi(), 6, &McOptions::new(200_000, 11))
        .unwrap();
    assert!((c.values[0] - 0.5).abs() < 5.0 * c.std_errors[0]);
    for n in 1..=6 {
        assert!(c.values[n].abs() < 5.0 * c.std_errors[n], "n {n}: {} +- {}", c.values[n], c.std_errors[n]);
    }
}

#[test]
fn half_weights_reproduce_lebesgue_on_doubling() {
    // every atom of return R has length 2^-R |Delta|, so z = 1/2 gives nu = Leb
    let d = doubling::<f64>();
    let adm = Admissibility { alpha: ZoomingContraction::power(0.5), radius: 0.25, times: TimeSource::All };
    let caps = TowerCaps { r_max: 24, mass_target: 1e-7, ..Default::default() };
    let tw = build_local_tower(&d, &Interval::new(1.0 / 3.0, 2.0 / 3.0), &adm, &caps).unwrap();
    let nu = bernoulli_tower_measure(&d, &tw, &WeightRule::Exponential { z: 0.5 }).unwrap();
    let total = tw.covered_mass();
    for (a, w) in tw.atoms.iter().zip(&nu.weights) {
        assert!((w - a.interval.len() / total).abs() < 1e-12);
    }
}

#[test]
fn corrupted_tower_fails_verification() {
    let d = doubling::<f64>();
    let adm = Admissibility { alpha: ZoomingContraction::power(0.5), radius: 0.25, times: TimeSource::All };
    let caps = TowerCaps { r_max: 16, ..Default::default() };
    let mut tw = build_local_tower(&d, &Interval::new(1.0 / 3.0, 2.0 / 3.0), &adm, &caps).unwrap();
    assert!(verify_markov(&d, &tw, 1e-9).all_pass());
    let k = tw.atoms.len() / 2;
    tw.atoms[k].interval.hi += 1e-6;
    let rep = verify_markov(&d, &tw, 1e-9);
    assert!(rep.failed().contains(&2), "{:?}", rep.failed());
}
