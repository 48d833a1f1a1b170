//! Property tests for the structural invariants of each layer.

use std::sync::OnceLock;

use proptest::prelude::*;
use zoomtower::contraction::{axiom_violation, ZoomingContraction};
use zoomtower::dynamics::maps::*;
use zoomtower::dynamics::{iterate, truncate, DomainKind};
use zoomtower::measures::*;
use zoomtower::nested::{build_nested_ball, enumerate_chain_closure, verify_nested};
use zoomtower::preballs::{build_preball, distortion_estimate, preimages, Admissibility, TimeSource};
use zoomtower::region::Interval as Iv;
use zoomtower::symbolic::shift_identity_sides;
use zoomtower::tower::*;
use zoomtower::zooming::{detect_zooming_times, expansion_stat};
use zoomtower::{Interval, Map, Rational};

fn shipped() -> Vec<Map> {
    vec![doubling(), tripling(), tent(), logistic(4.0), logistic(3.8), neutral_circle()]
}

fn doubling_tower() -> &'static (Map, InducedMarkovMap) {
    static T: OnceLock<(Map, InducedMarkovMap)> = OnceLock::new();
    T.get_or_init(|| {
        let d = doubling();
        let adm = Admissibility { alpha: ZoomingContraction::power(0.5), radius: 0.25, times: TimeSource::All };
        let caps = TowerCaps { r_max: 20, mass_target: 1e-6, ..Default::default() };
        let t = build_local_tower(&d, &Interval::new(1.0 / 3.0, 2.0 / 3.0), &adm, &caps).unwrap();
        (d, t)
    })
}

fn logistic_tower() -> &'static (Map, InducedMarkovMap) {
    static T: OnceLock<(Map, InducedMarkovMap)> = OnceLock::new();
    T.get_or_init(|| {
        let l = logistic(4.0);
        let adm = Admissibility { alpha: ZoomingContraction::power(0.6), radius: 0.25, times: TimeSource::All };
        let caps = TowerCaps { r_max: 30, mass_target: 1e-5, ..Default::default() };
        let t = build_local_tower(&l, &Interval::new(0.25, 0.75), &adm, &caps).unwrap();
        (l, t)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn branches_are_monotone(t in prop::collection::vec(0.0f64..1.0, 2..40)) {
        for m in shipped() {
            for b in &m.branches {
                let mut xs: Vec<f64> = t.iter().map(|s| b.left + (b.right - b.left) * s).collect();
                xs.sort_by(f64::total_cmp);
                let sign = b.slope((b.left + b.right) / 2.0).signum();
                for w in xs.windows(2) {
                    let (a, c) = (b.value(w[0]), b.value(w[1]));
                    prop_assert!(if sign > 0.0 { a <= c } else { a >= c }, "{}: not monotone", m.name);
                }
                for &x in &xs {
                    if x > b.left && x < b.right {
                        let s = b.slope(x);
                        prop_assert!(s == 0.0 || s.signum() == sign, "{}: slope changes sign", m.name);
                    }
                }
            }
        }
    }

    #[test]
    fn logistic_derivative_bounds(x in 0.0f64..1.0) {
        // beta = 1, B = 8 for a = 4
        let l = logistic::<f64>(4.0);
        let d = l.crit_dist(x);
        prop_assume!(d > 0.0);
        let fp = l.derivative(x).abs();
        prop_assert!(d / 8.0 <= fp * (1.0 + 1e-12));
        prop_assert!(fp <= 8.0 / d * (1.0 + 1e-12));
    }

    #[test]
    fn truncation_is_monotone(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0, delta in 0.001f64..0.5) {
        let (a, b) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (ta, tb) = (truncate(a, delta), truncate(b, delta));
        prop_assert!(ta <= tb);
        for t in [ta, tb] {
            prop_assert!(t == 1.0 || (t >= 0.0 && t <= delta));
        }
    }

    #[test]
    fn polynomial_shift_identity(
        prefix in prop::collection::vec(0u8..4, 0..12),
        tail_x in prop::collection::vec(0u8..4, 1..8),
        tail_y in prop::collection::vec(0u8..4, 1..8),
        j_frac in 0.0f64..=1.0,
    ) {
        let len = tail_x.len().min(tail_y.len());
        let x: Vec<u8> = prefix.iter().chain(&tail_x[..len]).copied().collect();
        let y: Vec<u8> = prefix.iter().chain(&tail_y[..len]).copied().collect();
        let n = prefix.len();
        let j = (j_frac * n as f64).floor() as usize;
        let (l, r) = shift_identity_sides::<Rational>(&x, &y, n, j).unwrap();
        prop_assert_eq!(l, r);
    }

    #[test]
    fn polynomial_contraction_composes(r in 1e-6f64..1.0, n in 0usize..200, m in 0usize..200) {
        let a = ZoomingContraction::<f64>::polynomial();
        let lhs = a.eval(n, a.eval(m, r));
        let rhs = a.eval(n + m, r);
        prop_assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * rhs);
    }

    #[test]
    fn doubling_expansion_is_log2(x in 0.0f64..1.0) {
        let o = iterate(&doubling::<f64>(), x, 200).unwrap();
        let e = expansion_stat(&o).unwrap();
        prop_assert!(e.iter().all(|&v| v == std::f64::consts::LN_2));
    }

    #[test]
    fn zooming_times_concatenate_and_shift(x in 0.01f64..0.99) {
        let l = logistic::<f64>(4.0);
        let alpha = ZoomingContraction::power(0.6);
        let delta = 0.1;
        let n_max = 24;
        let Ok(fx) = detect_zooming_times(&l, x, &alpha, delta, n_max) else { return Ok(()) };
        for n in 1..=12 {
            if !fx.is_set(n) {
                continue;
            }
            let y = iterate(&l, x, n).unwrap().points[n];
            let Ok(fy) = detect_zooming_times(&l, y, &alpha, delta, n_max - n) else { continue };
            for m in 1..=n_max - n {
                if fy.is_set(m) {
                    prop_assert!(fx.is_set(n + m), "n {n} m {m} at x {x}");
                }
            }
            for k in 1..n {
                let z = iterate(&l, x, k).unwrap().points[k];
                let fz = detect_zooming_times(&l, z, &alpha, delta, n - k).unwrap();
                prop_assert!(fz.is_set(n - k), "shift by {k} of n {n} at x {x}");
            }
        }
    }

    #[test]
    fn preball_maps_onto_its_ball(x in 0.0f64..1.0, n in 1usize..14) {
        let d = doubling::<f64>();
        let pb = build_preball(&d, x, n, 0.1, &ZoomingContraction::power(0.5)).unwrap();
        let end = |x: f64| iterate(&d, x.rem_euclid(1.0), n).unwrap().points[n];
        let (a, b) = (end(pb.interval.lo), end(pb.interval.hi));
        let ends = [pb.image.lo.rem_euclid(1.0), pb.image.hi.rem_euclid(1.0)];
        for e in [a, b] {
            prop_assert!(ends.iter().any(|&t| d.dist(e, t) < 1e-10), "endpoint {e} vs {ends:?}");
        }
        // restricting by k steps gives the pre-ball of order n - k at f^k(x)
        for k in 1..n {
            let z = iterate(&d, x, k).unwrap().points[k];
            let q = build_preball(&d, z, n - k, 0.1, &ZoomingContraction::power(0.5)).unwrap();
            let img = iterate(&d, pb.interval.center().rem_euclid(1.0), k).unwrap().points[k];
            prop_assert!(q.interval.contains(DomainKind::Circle, img));
        }
    }

    #[test]
    fn tower_returns_precede_flagged_returns(x in 1.0f64 / 3.0..2.0 / 3.0) {
        let (d, tw) = doubling_tower();
        let adm = &tw.admissibility;
        let Ok(ret) = first_return_time(d, x, &tw.base, adm, tw.r_max) else { return Ok(()) };
        let flags = detect_zooming_times(d, x, &adm.alpha, 2.0 * adm.radius, tw.r_max).unwrap();
        let o = iterate(d, x, tw.r_max).unwrap();
        if let Some(n) = (1..=tw.r_max).find(|&n| flags.is_set(n) && tw.base.contains_interior(d.domain, o.points[n], 1e-12)) {
            prop_assert!(ret.ret <= n);
        }
    }

    #[test]
    fn tower_distortion_is_bounded(i_frac in 0.0f64..1.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let (l, tw) = logistic_tower();
        let i = ((i_frac * tw.atoms.len() as f64) as usize).min(tw.atoms.len() - 1);
        let atom = &tw.atoms[i];
        let img = tw.images[atom.image];
        // rho from the pre-ball at the seed whose ball covers the image
        let fz = iterate(l, atom.seed, atom.ret).unwrap().points[atom.ret];
        let reach = (fz - img.lo).max(img.hi - fz) * 1.001;
        let pb = build_preball(l, atom.seed, atom.ret, reach, &tw.admissibility.alpha);
        prop_assume!(pb.is_ok());
        let rho = distortion_estimate(l, &pb.unwrap(), 2049).unwrap();
        let ys = [img.lo + img.len() * (0.01 + 0.98 * s), img.lo + img.len() * (0.01 + 0.98 * t)];
        let pts = tw.inverse_branch(l, i, &ys).unwrap();
        let log_jac = |mut z: f64| {
            let mut s = 0.0;
            for _ in 0..atom.ret {
                s += l.derivative(z).abs().ln();
                z = l.apply(z);
            }
            s
        };
        let logj: Vec<f64> = pts.iter().map(|&(x, _)| log_jac(x)).collect();
        let dy = (ys[0] - ys[1]).abs();
        prop_assume!(dy > 1e-9);
        // the estimate is a sampled sup, so allow a little headroom
        prop_assert!((logj[0] - logj[1]).abs() <= 1.05 * rho * dy + 1e-9, "rho {rho} ratio {}", (logj[0] - logj[1]).abs() / dy);
    }

    #[test]
    fn bernoulli_cylinders_multiply(seq in prop::collection::vec(0usize..1000, 1..6), z in 0.2f64..0.6) {
        let (d, tw) = doubling_tower();
        let nu = bernoulli_tower_measure(d, tw, &WeightRule::Geometric { z }).unwrap();
        let seq: Vec<usize> = seq.iter().map(|&k| k % nu.weights.len()).collect();
        let prod: f64 = seq.iter().map(|&i| nu.weights[i]).product();
        prop_assert_eq!(nu.cylinder(&seq), prod);
        prop_assert!((nu.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(nu.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn liftability_identity_holds(x in 1.0f64 / 3.0..2.0 / 3.0, n in 1usize..300) {
        let (d, tw) = doubling_tower();
        prop_assume!(tw.atom_at(x).is_some());
        let r = liftability_frequency(d, tw, x, n).unwrap();
        prop_assert!(r.identity_holds);
        prop_assert!((0.0..=1.0).contains(&r.frequency));
    }

    #[test]
    fn counting_inequality_holds(seed in any::<u64>(), n in 2usize..60, pg in 0.05f64..0.9, pb in 0.1f64..0.9) {
        let mut rng = zoomtower::rng::stream(seed, 0);
        let s = random_scenario(&mut rng, n, pg, pb);
        prop_assert!(counting_inequality_check(&s, n).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn nested_balls_are_unlinked(p in 0.05f64..0.95, r in 0.02f64..0.1) {
        let d = doubling::<f64>();
        let adm = Admissibility { alpha: ZoomingContraction::power(0.5), radius: r, times: TimeSource::Multiples { ell: 4 } };
        let nb = build_nested_ball(&d, p, r, &adm, None).unwrap();
        prop_assert!(nb.contains_half_ball);
        let rep = verify_nested(&d, &nb.core, 12, Some(&adm)).unwrap();
        prop_assert!(rep.linked.is_empty(), "{:?}", rep.linked);
        // every logged chain is no longer than the contraction sum allows
        let a = Iv::ball(d.domain, p, r);
        let cl = enumerate_chain_closure(&d, &[a], 0, &adm, nb.order_cap).unwrap();
        for ch in cl.chains() {
            let lo = ch.elements.iter().map(|e| e.interval.lo).fold(f64::INFINITY, f64::min);
            let hi = ch.elements.iter().map(|e| e.interval.hi).fold(f64::NEG_INFINITY, f64::max);
            let bound: f64 = ch.elements.iter().map(|e| adm.alpha.eval(e.order, 2.0 * r)).sum();
            prop_assert!(hi - lo <= bound + 1e-12);
        }
    }

    #[test]
    fn refinement_only_adds_atoms(extra in 1usize..6) {
        let (d, tw) = doubling_tower();
        let caps = TowerCaps { r_max: tw.r_max + extra, mass_target: 1e-6, ..Default::default() };
        let bigger = build_local_tower(d, &tw.base, &tw.admissibility, &caps).unwrap();
        for a in &tw.atoms {
            prop_assert!(bigger.atoms.iter().any(|b| b.interval == a.interval && b.ret == a.ret));
        }
    }
}

#[test]
fn contraction_axioms_hold_for_shipped_kinds() {
    for a in [
        ZoomingContraction::<f64>::power(0.5),
        ZoomingContraction::exponential(1.0),
        ZoomingContraction::polynomial(),
        ZoomingContraction::tabulated(vec![0.5, 0.25, 0.125], 0.5),
    ] {
        assert_eq!(axiom_violation(&a, 200, 30), 0.0, "{}", a.label());
    }
}

#[test]
fn same_order_preimages_are_disjoint() {
    for m in [doubling::<f64>(), tent()] {
        let mut layer = vec![Interval::new(0.3, 0.4)];
        for n in 1..=10 {
            layer = layer.iter().flat_map(|t| preimages(&m, t)).collect();
            let mut sorted = layer.clone();
            sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
            for w in sorted.windows(2) {
                assert!(w[0].hi <= w[1].lo + 1e-15, "{} order {n}: {:?} meets {:?}", m.name, w[0], w[1]);
            }
        }
    }
}

#[test]
fn markov_conditions_hold_on_built_towers() {
    for (m, tw) in [doubling_tower(), logistic_tower()] {
        let rep = verify_markov(m, tw, 1e-9);
        assert!(rep.all_pass(), "{}: {:?}", m.name, rep.failed());
        // atoms sorted by left end, overlapping at most by endpoint rounding
        for w in tw.atoms.windows(2) {
            assert!(w[0].interval.hi <= w[1].interval.lo + ENDPOINT_TOL);
        }
    }
}

#[test]
fn projected_mass_matches_mean_return() {
    for (m, tw) in [doubling_tower(), logistic_tower()] {
        let tm = invariant_density(m, tw, &ReferenceMeasure::Lebesgue, &DensityOptions::default()).unwrap();
        assert!(tm.residual < 1e-9, "{}: residual {}", m.name, tm.residual);
        let pm = project(m, tw, &tm, 1024).unwrap();
        assert!(pm.mass_defect() < 1e-8, "{}: {}", m.name, pm.mass_defect());
    }
}
