//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Built without the libtest harness so the lines show up in `cargo test`.
//! Items marked `(reported)` print their status but do not fail the run.

use std::time::{Duration, Instant};

use zoomtower::contraction::ZoomingContraction;
use zoomtower::dynamics::maps::*;
use zoomtower::dynamics::iterate;
use zoomtower::measures::*;
use zoomtower::nested::{build_global_partition, build_nested_ball, verify_nested};
use zoomtower::preballs::{Admissibility, TimeSource};
use zoomtower::rng::{stream, uniform};
use zoomtower::symbolic::shift_identity_sides;
use zoomtower::tower::*;
use zoomtower::zooming::{check_transport_inequality, ell_scan};
use zoomtower::{Interval, Map, Rational};

struct Check {
    label: String,
    pass: bool,
    enforced: bool,
}

#[derive(Default)]
struct Report {
    checks: Vec<Check>,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.checks.push(Check { label: id.into(), pass, enforced: true });
    }

    fn reported(&mut self, id: &str, pass: bool, detail: String) {
        println!("criterion {id}: {} (reported) {detail}", if pass { "PASS" } else { "FAIL" });
        self.checks.push(Check { label: id.into(), pass, enforced: false });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn doubling_tower(map: &Map) -> InducedMarkovMap {
    let adm = Admissibility { alpha: ZoomingContraction::power(0.5), radius: 0.25, times: TimeSource::All };
    // beyond 24 returns the f64 endpoints of an atom are no longer exact
    // enough to map onto Delta within 1e-9
    let caps = TowerCaps { r_max: 24, mass_target: 1e-7, ..Default::default() };
    build_local_tower(map, &Interval::new(1.0 / 3.0, 2.0 / 3.0), &adm, &caps).unwrap()
}

fn doubling_exactness(rep: &mut Report) {
    let t0 = Instant::now();
    let d = doubling::<f64>();
    let tw = doubling_tower(&d);
    let markov = verify_markov(&d, &tw, 1e-9);
    let tm = invariant_density(&d, &tw, &ReferenceMeasure::Lebesgue, &DensityOptions::default()).unwrap();
    let sup = (0..=3000)
        .map(|k| (tm.relative_density(1.0 / 3.0 + k as f64 / 9000.0) - 1.0).abs())
        .fold(0.0, f64::max);
    let pm = project(&d, &tw, &tm, 4096).unwrap();
    let (m1, m2) = (pm.moment(1), pm.moment(2));
    let el = t0.elapsed();
    let pass = markov.all_pass()
        && sup < 1e-6
        && (m1 - 0.5).abs() < 1e-4
        && (m2 - 1.0 / 3.0).abs() < 1e-4
        && el < Duration::from_secs(30);
    rep.line(
        "1",
        pass,
        format!(
            "atoms {} markov failed {:?} sup|h-1| {sup:.1e} moments ({m1:.7}, {m2:.7}) {}",
            tw.atoms.len(),
            markov.failed(),
            secs(el)
        ),
    );
}

fn global_doubling(rep: &mut Report) {
    let t0 = Instant::now();
    let d = doubling::<f64>();
    let r = 0.1;
    let alpha = ZoomingContraction::power(0.5);
    let ell = ell_scan(&alpha, &[r, 4.0 * r], 200).unwrap();
    let adm = Admissibility { alpha, radius: r, times: TimeSource::Multiples { ell } };
    let p0 = build_global_partition(&d, r, &adm, None).unwrap();
    let mut counts = Vec::new();
    let mut last = None;
    for r_max in [2 * ell, 3 * ell, 4 * ell, 5 * ell] {
        let caps = TowerCaps { r_max, mass_target: 1e-4, ..Default::default() };
        let tw = build_global_tower(&d, &p0, &adm, &caps).unwrap();
        counts.push(tw.atoms.len());
        last = Some(tw);
    }
    let tw = last.unwrap();
    let n = counts.len();
    let stable = counts[n - 1] == counts[n - 2];
    // pairs inside each atom, away from the closed ends
    let mut rng = stream(2, 0);
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    let mut pairs = 0;
    for a in &tw.atoms {
        let iv = a.interval;
        for _ in 0..20 {
            let x = iv.lo + iv.len() * (0.001 + 0.998 * uniform(&mut rng));
            let y = iv.lo + iv.len() * (0.001 + 0.998 * uniform(&mut rng));
            let (Some((_, fx)), Some((_, fy))) = (tw.apply(&d, x), tw.apply(&d, y)) else { continue };
            let (dxy, dfy) = (d.dist(x, y), d.dist(fx, fy));
            pairs += 1;
            if dfy < 8.0 * dxy - 1e-9 {
                bad += 1;
            }
            if dxy > 1e-12 {
                worst = worst.min(dfy / dxy);
            }
        }
    }
    let el = t0.elapsed();
    let pass = stable && bad == 0 && pairs > 0 && el < Duration::from_secs(120);
    rep.line(
        "2",
        pass,
        format!("ell {ell} atoms by r_max {counts:?} pairs {pairs} below 8x {bad} min ratio {worst:.2} {}", secs(el)),
    );
}

fn nested_guarantee(rep: &mut Report) {
    let t0 = Instant::now();
    let p2 = (3f64.sqrt() - 1.0) / 2.0;
    let combos: Vec<(&str, Map, f64, f64, ZoomingContraction<f64>)> = vec![
        ("doubling", doubling(), 0.5, 0.05, ZoomingContraction::power(0.5)),
        ("doubling", doubling(), 0.3, 0.1, ZoomingContraction::power(0.5)),
        ("tripling", tripling(), 0.4, 0.05, ZoomingContraction::power(1.0 / 3.0)),
        ("tent", tent(), 0.6, 0.05, ZoomingContraction::power(0.5)),
        ("logistic", logistic(4.0), 0.3, 0.05, ZoomingContraction::power(0.6)),
        ("neutral_circle", neutral_circle(), p2, 0.02, ZoomingContraction::power((-0.8f64).exp())),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, map, p, r, alpha) in combos {
        let ell = ell_scan(&alpha, &[r, 4.0 * r], 200).unwrap();
        let adm = Admissibility { alpha, radius: r, times: TimeSource::Multiples { ell } };
        match build_nested_ball(&map, p, r, &adm, None) {
            Ok(nb) => {
                let v = verify_nested(&map, &nb.core, 15, Some(&adm)).unwrap();
                let ok = nb.contains_half_ball && v.linked.is_empty();
                pass &= ok;
                notes.push(format!("{name}@{p:.3}(ell {ell}):{}", if ok { "ok" } else { "bad" }));
            }
            // an uncertified combination is outside the guarantee
            Err(e @ zoomtower::Error::HypothesisFail(_)) => notes.push(format!("{name}:skipped ({e})")),
            Err(e) => {
                pass = false;
                notes.push(format!("{name}:error ({e})"));
            }
        }
    }
    let certified = notes.iter().filter(|n| !n.contains("skipped")).count();
    rep.line("3", pass && certified > 0, format!("{} {}", notes.join(" "), secs(t0.elapsed())));
}

fn logistic_tails(rep: &mut Report) {
    let t0 = Instant::now();
    let l = logistic::<f64>(4.0);
    let r = 0.05;
    let alpha = ZoomingContraction::power(0.6);
    let ell = ell_scan(&alpha, &[r, 4.0 * r], 200).unwrap();
    let adm = Admissibility { alpha, radius: r, times: TimeSource::Multiples { ell } };
    let p0 = build_global_partition(&l, r, &adm, None).unwrap();
    let caps = TowerCaps { r_max: 8, ..Default::default() };
    let tw = build_global_tower(&l, &p0, &adm, &caps).unwrap();
    let mut rng = stream(4, 0);
    let xs: Vec<f64> = (0..10_000).map(|_| uniform(&mut rng)).collect();
    let ts = tail_statistics(&l, &tw, Some(&p0), &xs, 40, None).unwrap();
    let el = t0.elapsed();
    let pass = ts.violations.is_empty() && el < Duration::from_secs(300);
    rep.line("4", pass, format!("ell {ell} samples {} violations {} {}", ts.samples, ts.violations.len(), secs(el)));
}

/// Every pair of binary words of length `len` sharing the first `n` symbols,
/// up to relabelling: the identity only sees the first difference, so one
/// word per difference position (plus equality) covers all pairs.
fn shift_identity(rep: &mut Report) {
    let t0 = Instant::now();
    let mut cases = 0usize;
    let mut bad = 0usize;
    for len in 1..=20usize {
        for n in 0..=len {
            for phi in (n + 1..=len).map(Some).chain([None]) {
                let x = vec![0u8; len];
                let mut y = x.clone();
                if let Some(k) = phi {
                    y[k - 1] = 1;
                }
                for j in 0..=n {
                    cases += 1;
                    match shift_identity_sides::<Rational>(&x, &y, n, j) {
                        Some((l, r)) if l == r => {}
                        _ => bad += 1,
                    }
                }
            }
        }
    }
    // exhaustive over all binary pairs for short words, in f64 (a few ulps)
    for len in 1..=7usize {
        for a in 0u32..1 << len {
            for b in 0u32..1 << len {
                let x: Vec<u8> = (0..len).map(|i| ((a >> i) & 1) as u8).collect();
                let y: Vec<u8> = (0..len).map(|i| ((b >> i) & 1) as u8).collect();
                let common = x.iter().zip(&y).take_while(|(p, q)| p == q).count();
                for n in 0..=common {
                    for j in 0..=n {
                        cases += 1;
                        match shift_identity_sides::<f64>(&x, &y, n, j) {
                            Some((l, r)) if (l - r).abs() <= 4.0 * f64::EPSILON * l.abs() => {}
                            _ => bad += 1,
                        }
                    }
                }
            }
        }
    }
    rep.line("5", bad == 0, format!("cases {cases} mismatches {bad} {}", secs(t0.elapsed())));
}

fn liftability(rep: &mut Report) {
    let t0 = Instant::now();
    let d = doubling::<f64>();
    let tw = doubling_tower(&d);
    let mut rng = stream(6, 0);
    let (mut orbits, mut bad) = (0, 0);
    while orbits < 1000 {
        let x = tw.base.lo + tw.base.len() * uniform(&mut rng);
        if tw.atom_at(x).is_none() {
            continue;
        }
        let lr = liftability_frequency(&d, &tw, x, 200).unwrap();
        orbits += 1;
        bad += usize::from(!lr.identity_holds);
    }
    let mut scen_bad = 0;
    for k in 0..1000 {
        let mut rng = stream(7, k);
        let n = 5 + (k as usize % 36);
        let s = random_scenario(&mut rng, n, 0.3, 0.5);
        if !counting_inequality_check(&s, n).unwrap() {
            scen_bad += 1;
        }
    }
    rep.line(
        "6",
        bad == 0 && scen_bad == 0,
        format!("orbits 1000 identity failures {bad}; scenarios 1000 counting failures {scen_bad} {}", secs(t0.elapsed())),
    );
}

fn logistic_density(rep: &mut Report) {
    let t0 = Instant::now();
    let l = logistic::<f64>(4.0);
    let adm = Admissibility { alpha: ZoomingContraction::power(0.6), radius: 0.25, times: TimeSource::All };
    let caps = TowerCaps { r_max: 40, mass_target: 1e-6, ..Default::default() };
    let tw = build_local_tower(&l, &Interval::new(0.25, 0.75), &adm, &caps).unwrap();
    let tm = invariant_density(&l, &tw, &ReferenceMeasure::Lebesgue, &DensityOptions::default()).unwrap();
    let pm = project(&l, &tw, &tm, 1 << 14).unwrap();
    let bins = 100;
    let tower_hist = pm.histogram(bins);
    // Birkhoff oracle: plain iteration with a rounding-sized kick so the
    // orbit does not collapse onto 0 in finite precision
    let n = 10_000_000;
    let mut rng = stream(7, 0);
    let mut x = 0.123_456_7;
    let mut hist = vec![0.0; bins];
    for _ in 0..n {
        x = (4.0 * x * (1.0 - x) + (uniform(&mut rng) - 0.5) * 1e-15).clamp(0.0, 1.0);
        hist[((x * bins as f64) as usize).min(bins - 1)] += bins as f64 / n as f64;
    }
    let l1 = tower_hist.iter().zip(&hist).map(|(a, b)| (a - b).abs()).sum::<f64>() / bins as f64;
    let el = t0.elapsed();
    rep.line("7", l1 < 0.02 && el < Duration::from_secs(600), format!("atoms {} L1 {l1:.5} {}", tw.atoms.len(), secs(el)));
}

fn neutral_dichotomy(rep: &mut Report) {
    let t0 = Instant::now();
    let m = neutral_circle::<f64>();
    let e = lyapunov(&m, &Uniform::default(), 1_000_000, &McOptions::new(16, 5)).unwrap();
    rep.reported("8a", e.mean.abs() < 0.01, format!("Lebesgue e_n = {:.4} +- {:.4}", e.mean, e.ci95));

    let p = (3f64.sqrt() - 1.0) / 2.0;
    let ell = 10;
    let adm = Admissibility {
        alpha: ZoomingContraction::power((-0.8f64).exp()),
        radius: 0.02,
        times: TimeSource::Multiples { ell },
    };
    let nb = build_nested_ball(&m, p, 0.02, &adm, None).unwrap();
    let tw = build_local_tower(&m, &nb.core, &adm, &TowerCaps { r_max: 40, ..Default::default() }).unwrap();
    let nu = bernoulli_tower_measure(&m, &tw, &WeightRule::Uniform).unwrap();
    let mut rng = stream(1, 0);
    let (mut tot, mut worst) = (0.0, f64::INFINITY);
    let draws = 1000;
    for _ in 0..draws {
        let s = nu.sample(&m, &tw, &mut rng).unwrap();
        let logs: f64 = s.block_logs.iter().sum();
        let steps: usize = s.atoms.iter().map(|&i| nu.returns[i]).sum();
        let avg = logs / (steps as f64 / ell as f64);
        tot += avg;
        worst = worst.min(avg);
    }
    let avg = tot / draws as f64;
    rep.line("8b", avg >= 8.0 * 0.95, format!("block expansion average {avg:.3} (worst {worst:.3})"));

    let o = find_periodic_repeller(&m, Interval::new(0.0, 1.0), &RepellerSearch::period(2)).unwrap();
    rep.line(
        "8c",
        o.period == 2 && o.multiplier > 1.0,
        format!("orbit {:?} multiplier {:.3} {}", o.points, o.multiplier, secs(t0.elapsed())),
    );
}

fn correlation_decay(rep: &mut Report) {
    let t0 = Instant::now();
    let d = doubling::<f64>();
    let tw = doubling_tower(&d);
    let z = 0.3;
    let nu = bernoulli_tower_measure(&d, &tw, &WeightRule::Geometric { z }).unwrap();
    let s = ProjectedBernoulli { map: &d, tower: &tw, measure: &nu };
    let c = correlation(&d, &s, &Observable::cos2pi(), &Observable::cos2pi(), 12, &McOptions::new(400_000, 1)).unwrap();
    let fit = c.fit(FitKind::Exponential).unwrap();
    // below the shortest return the tail is still 1
    let n0 = tw.atoms.iter().map(|a| a.ret).min().unwrap();
    let ratios: Vec<f64> = (n0..n0 + 10).map(|n| nu.tail(n + 1) / nu.tail(n)).collect();
    let tail_ok = ratios.iter().all(|q| (q / z - 1.0).abs() < 0.1);
    rep.line(
        "9",
        fit.r2 > 0.9 && tail_ok,
        format!(
            "exp fit rate {:.3} R2 {:.3}; tail ratios {:.4}..{:.4} vs {z} {}",
            fit.rate,
            fit.r2,
            ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            ratios.iter().cloned().fold(0.0, f64::max),
            secs(t0.elapsed())
        ),
    );
}

fn transport(rep: &mut Report) {
    let t0 = Instant::now();
    let l = logistic::<f64>(4.0);
    let k = l.max_derivative();
    let delta = 0.05;
    let mut rng = stream(10, 0);
    let (mut bad, mut orbits) = (0, 0);
    while orbits < 100 {
        let x = uniform(&mut rng);
        let Ok(o) = iterate(&l, x, 2000) else { continue };
        orbits += 1;
        if !check_transport_inequality(&l, &o, 2, delta, k).unwrap().holds {
            bad += 1;
        }
    }
    rep.line("10", bad == 0, format!("orbits {orbits} violations {bad} {}", secs(t0.elapsed())));
}

fn main() {
    let mut rep = Report::default();
    doubling_exactness(&mut rep);
    global_doubling(&mut rep);
    nested_guarantee(&mut rep);
    logistic_tails(&mut rep);
    shift_identity(&mut rep);
    liftability(&mut rep);
    logistic_density(&mut rep);
    neutral_dichotomy(&mut rep);
    correlation_decay(&mut rep);
    transport(&mut rep);
    let failed: Vec<&str> = rep.checks.iter().filter(|c| c.enforced && !c.pass).map(|c| c.label.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
