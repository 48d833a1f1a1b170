//! The pipeline behind each subcommand: times -> nested -> tower -> measures.

use std::path::Path;

use serde_json::{json, Value};
use zoomtower::dynamics::iterate;
use zoomtower::measures::{
    bernoulli_tower_measure, correlation, find_periodic_repeller, invariant_density, project, DensityOptions, Histogram,
    McOptions, PointSampler, ProjectedBernoulli, ReferenceMeasure, RepellerSearch, Uniform,
};
use zoomtower::nested::{build_global_partition, build_nested_ball, verify_nested, GlobalPartition, NestedBall};
use zoomtower::preballs::{Admissibility, TimeSource};
use zoomtower::rng::{par_draw, uniform};
use zoomtower::tower::{self, build_global_tower, build_local_tower, verify_markov, InducedMarkovMap, TowerAtom};
use zoomtower::zooming::{detect_hyperbolic_times, detect_zooming_times_at, frequency_stats};
use zoomtower::{Interval, Map};

use crate::output::{Cell, Sink};
use crate::settings::{BaseKind, RunConfig, SamplerKind};
use crate::{RunError, Stage};

/// What a command reports back for the manifest.
pub struct Outcome {
    pub summary: Value,
    pub failures: Vec<String>,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Self { summary, failures: Vec::new() }
    }
}

pub struct Built {
    pub adm: Admissibility<f64>,
    pub tower: InducedMarkovMap,
    pub partition: Option<GlobalPartition>,
    pub nested: Option<NestedBall>,
}

fn ell_of(adm: &Admissibility<f64>) -> usize {
    match adm.times {
        TimeSource::Multiples { ell } => ell,
        _ => 1,
    }
}

/// Radius against which an automatic `ell` is chosen.
fn scale_r(cfg: &RunConfig) -> Result<f64, RunError> {
    match (cfg.base.r, cfg.base.interval) {
        (Some(r), _) => Ok(r),
        (None, Some((lo, hi))) => Ok((hi - lo) / 2.0),
        (None, None) => Ok(cfg.radius),
    }
}

fn local_base(cfg: &RunConfig, map: &Map, adm: &Admissibility<f64>) -> Result<(Interval, Option<NestedBall>), RunError> {
    if let Some((lo, hi)) = cfg.base.interval {
        return Ok((Interval::new(lo, hi), None));
    }
    let nb = build_nested_ball(map, cfg.base_center()?, cfg.base_r()?, adm, cfg.caps.order_cap).stage("nested")?;
    Ok((nb.core, Some(nb)))
}

pub fn build(cfg: &RunConfig, map: &Map) -> Result<Built, RunError> {
    let adm = cfg.admissibility(scale_r(cfg)?)?;
    let caps = cfg.tower_caps();
    match cfg.base.kind {
        BaseKind::Local => {
            let (base, nested) = local_base(cfg, map, &adm)?;
            let tower = build_local_tower(map, &base, &adm, &caps).stage("tower")?;
            Ok(Built { adm, tower, partition: None, nested })
        }
        BaseKind::Global => {
            let p0 = build_global_partition(map, cfg.base_r()?, &adm, cfg.caps.order_cap).stage("nested")?;
            let tower = build_global_tower(map, &p0, &adm, &caps).stage("tower")?;
            Ok(Built { adm, tower, partition: Some(p0), nested: None })
        }
    }
}

fn tower_summary(b: &Built) -> Value {
    let t = &b.tower;
    json!({
        "kind": t.kind,
        "ell": t.ell,
        "delta": 2.0 * b.adm.radius,
        "radius": b.adm.radius,
        "r_max": t.r_max,
        "base": [t.base.lo, t.base.hi],
        "atoms": t.atoms.len(),
        "images": t.images.len(),
        "max_return": t.max_return(),
        "mean_return_lebesgue": t.mean_return_lebesgue(),
        "unresolved_mass": t.unresolved_mass,
        "conflicts": t.conflicts,
        "straddles": t.straddles,
        "seeds_tried": t.seeds_tried,
        "nested_core": b.nested.as_ref().map(|n| json!({
            "center": n.center, "radius": n.radius, "core": [n.core.lo, n.core.hi],
            "order_cap": n.order_cap, "tail_bound": n.tail_bound, "contraction_sum": n.contraction_sum,
        })),
        "partition_atoms": b.partition.as_ref().map(|p| p.atoms.len()),
    })
}

fn write_tower(sink: &mut Sink, t: &InducedMarkovMap) -> Result<(), RunError> {
    sink.csv(
        "atoms.csv",
        "tower atoms: open interval, return time, image index, anchor point",
        &["left", "right", "ret", "image", "seed"],
        t.atoms.iter().map(|a| {
            vec![a.interval.lo.into(), a.interval.hi.into(), a.ret.into(), a.image.into(), a.seed.into()]
        }),
    )?;
    sink.csv(
        "images.csv",
        "possible images F(P)",
        &["image", "left", "right"],
        t.images.iter().enumerate().map(|(i, q)| vec![i.into(), q.lo.into(), q.hi.into()]),
    )
}

pub fn times(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    let x = match cfg.orbit_x {
        Some(x) => x,
        None => uniform(&mut zoomtower::rng::stream(cfg.require_seed("times")?, 0)),
    };
    let n = cfg.orbit_n;
    let adm = cfg.admissibility(scale_r(cfg)?)?;
    let zoom = detect_zooming_times_at(map, x, &adm.alpha, 2.0 * adm.radius, n, |k| adm.order_allowed(k)).stage("zooming")?;
    let hyp = match &cfg.hyperbolic {
        Some(p) => {
            let orbit = iterate(map, x, n).map_err(zoomtower::Error::from).stage("dynamics")?;
            Some(detect_hyperbolic_times(&orbit, p).stage("zooming")?)
        }
        None => None,
    };
    sink.csv(
        "times.csv",
        "per-step zooming and hyperbolic flags with running counts",
        &["n", "zooming", "zooming_count", "hyperbolic", "hyperbolic_count"],
        (0..=n).map(|k| {
            let (h, hc) = match &hyp {
                Some(f) => (Cell::B(f.is_set(k)), Cell::U(f.counts[k])),
                None => (Cell::S(String::new()), Cell::S(String::new())),
            };
            vec![k.into(), zoom.is_set(k).into(), zoom.counts[k].into(), h, hc]
        }),
    )?;
    Ok(Outcome::ok(json!({
        "x": x,
        "n": n,
        "ell": ell_of(&adm),
        "zooming": frequency_stats(&zoom, cfg.theta),
        "first_zooming_time": zoom.first(),
        "hyperbolic": hyp.as_ref().map(|h| frequency_stats(h, cfg.theta)),
    })))
}

pub fn nested(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    let adm = cfg.admissibility(scale_r(cfg)?)?;
    match cfg.base.kind {
        BaseKind::Local => {
            let nb = build_nested_ball(map, cfg.base_center()?, cfg.base_r()?, &adm, cfg.caps.order_cap).stage("nested")?;
            let rep = verify_nested(map, &nb.core, cfg.caps.check_order, Some(&adm)).stage("nested")?;
            sink.csv(
                "nested.csv",
                "nested ball: centre, radius, core interval and checks",
                &["center", "radius", "core_left", "core_right", "contains_half_ball", "linked_preimages"],
                [vec![
                    nb.center.into(),
                    nb.radius.into(),
                    nb.core.lo.into(),
                    nb.core.hi.into(),
                    nb.contains_half_ball.into(),
                    rep.linked.len().into(),
                ]],
            )?;
            let mut failures = Vec::new();
            if !nb.contains_half_ball {
                failures.push("core does not contain the half ball".to_string());
            }
            if !rep.nested {
                failures.push(format!("{} linked pre-images up to order {}", rep.linked.len(), cfg.caps.check_order));
            }
            Ok(Outcome {
                summary: json!({
                    "ell": ell_of(&adm), "core": [nb.core.lo, nb.core.hi], "order_cap": nb.order_cap,
                    "tail_bound": nb.tail_bound, "contraction_sum": nb.contraction_sum,
                    "chain_elements": nb.chain_elements, "preimages_checked": rep.preimages_checked,
                    "linked": rep.linked.len(),
                }),
                failures,
            })
        }
        BaseKind::Global => {
            let p0 = build_global_partition(map, cfg.base_r()?, &adm, cfg.caps.order_cap).stage("nested")?;
            sink.csv(
                "cover.csv",
                "nested cover: centre and component containing it",
                &["center", "left", "right"],
                p0.centers.iter().zip(&p0.cover).map(|(&c, iv)| vec![c.into(), iv.lo.into(), iv.hi.into()]),
            )?;
            sink.csv(
                "partition.csv",
                "finite partition: open atoms and the cover elements containing them",
                &["left", "right", "members"],
                p0.atoms.iter().map(|a| {
                    let m: Vec<String> = a.members.iter().map(|i| i.to_string()).collect();
                    vec![a.interval.lo.into(), a.interval.hi.into(), m.join(";").into()]
                }),
            )?;
            Ok(Outcome::ok(json!({
                "ell": p0.ell, "r": p0.r, "centers": p0.centers.len(), "atoms": p0.atoms.len(),
                "order_cap": p0.order_cap, "tail_bound": p0.tail_bound, "split_sets": p0.split_sets,
            })))
        }
    }
}

pub fn tower(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    let b = build(cfg, map)?;
    write_tower(sink, &b.tower)?;
    Ok(Outcome::ok(tower_summary(&b)))
}

fn read_table(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
        out.push((k + 2, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, RunError> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| RunError::Input(format!("{} line {line}: bad or missing '{name}'", path.display())))
}

/// Tower rebuilt from an atom file and the `images.csv` next to it.
pub fn load_tower(cfg: &RunConfig, map: &Map, atoms_path: &Path) -> Result<InducedMarkovMap, RunError> {
    let images_path = atoms_path.with_file_name("images.csv");
    let images: Vec<Interval> = read_table(&images_path)?
        .iter()
        .map(|(l, r)| Ok(Interval::new(field(&images_path, *l, r, 1, "left")?, field(&images_path, *l, r, 2, "right")?)))
        .collect::<Result<_, RunError>>()?;
    if images.is_empty() {
        return Err(RunError::Input(format!("{}: no images", images_path.display())));
    }
    let mut atoms = Vec::new();
    for (l, r) in read_table(atoms_path)? {
        let lo: f64 = field(atoms_path, l, &r, 0, "left")?;
        let hi: f64 = field(atoms_path, l, &r, 1, "right")?;
        let ret: usize = field(atoms_path, l, &r, 2, "ret")?;
        let image: usize = field(atoms_path, l, &r, 3, "image")?;
        let seed: f64 = field(atoms_path, l, &r, 4, "seed")?;
        if image >= images.len() || ret == 0 || !(lo < hi) {
            return Err(RunError::Input(format!("{} line {l}: atom is not well formed", atoms_path.display())));
        }
        let mut itinerary = Vec::with_capacity(ret);
        let mut z = seed;
        for _ in 0..ret {
            itinerary.push(map.locate(map.normalize(z)));
            z = map.apply(z);
        }
        atoms.push(TowerAtom { interval: Interval::new(lo, hi), ret, image, itinerary, seed });
    }
    let adm = cfg.admissibility(scale_r(cfg)?)?;
    let (kind, base) = match cfg.base.kind {
        BaseKind::Local => (tower::BaseKind::Local, images[0]),
        BaseKind::Global => (tower::BaseKind::Global, Interval::new(0.0, 1.0)),
    };
    let covered: f64 = atoms.iter().map(|a| a.interval.len()).sum();
    Ok(InducedMarkovMap {
        kind,
        domain: map.domain,
        base,
        images,
        atoms,
        ell: ell_of(&adm),
        r_max: cfg.caps.r_max,
        admissibility: adm,
        unresolved_mass: (base.len() - covered).max(0.0),
        conflicts: 0,
        straddles: 0,
        seeds_tried: 0,
    })
}

pub fn verify(cfg: &RunConfig, map: &Map, atoms_path: &Path, sink: &mut Sink) -> Result<Outcome, RunError> {
    let t = load_tower(cfg, map, atoms_path)?;
    let rep = verify_markov(map, &t, cfg.caps.tol);
    sink.csv(
        "markov.csv",
        "Markov-partition conditions with worst-case residuals",
        &["condition", "name", "pass", "residual", "detail"],
        rep.conditions
            .iter()
            .enumerate()
            .map(|(i, c)| vec![(i + 1).into(), c.name.as_str().into(), c.pass.into(), c.residual.into(), c.detail.as_str().into()]),
    )?;
    let failures = rep
        .failed()
        .iter()
        .map(|&i| {
            let c = &rep.conditions[i - 1];
            format!("condition {i} ({}) failed: residual {:e}; {}", c.name, c.residual, c.detail)
        })
        .collect();
    Ok(Outcome {
        summary: json!({
            "atoms_file": atoms_path.display().to_string(),
            "atoms": t.atoms.len(),
            "tol": cfg.caps.tol,
            "conditions": rep.conditions,
            "cylinder_diameters": rep.cylinder_diameters,
        }),
        failures,
    })
}

/// Uniform points of the tower's base.
fn lebesgue_points(base: Interval, seed: u64, count: usize) -> Vec<f64> {
    par_draw(seed, count, |r, _| base.lo + base.len() * uniform(r))
}

pub fn tails(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    let seed = cfg.require_seed("tails")?;
    let b = build(cfg, map)?;
    let xs = lebesgue_points(b.tower.base, seed, cfg.caps.samples);
    let n_max = cfg.caps.n_max;
    let ts = tower::tail_statistics(map, &b.tower, b.partition.as_ref(), &xs, n_max, cfg.hyperbolic.as_ref()).stage("tower")?;
    sink.csv(
        "tails.csv",
        "fractions with R > n, with no flagged time <= n, and with first hyperbolic time > n",
        &["n", "return_tail", "zoom_tail", "hyperbolic_tail"],
        (0..=n_max).map(|n| {
            let h = ts.h_tail.as_ref().map_or(Cell::S(String::new()), |h| Cell::F(h[n]));
            vec![n.into(), ts.counts[n].into(), ts.zoom_tail[n].into(), h]
        }),
    )?;
    sink.csv(
        "violations.csv",
        "samples with R larger than their first flagged time",
        &["x", "ret", "first_flag"],
        ts.violations.iter().map(|v| {
            let r = v.ret.map_or(Cell::S(String::new()), Cell::U);
            vec![v.x.into(), r, v.first_flag.into()]
        }),
    )?;
    let failures = if ts.violations.is_empty() {
        Vec::new()
    } else {
        vec![format!("{} tail-inclusion violations", ts.violations.len())]
    };
    let mut summary = tower_summary(&b);
    summary["samples"] = json!(ts.samples);
    summary["n_max"] = json!(n_max);
    summary["violations"] = json!(ts.violations.len());
    Ok(Outcome { summary, failures })
}

pub fn density(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    if cfg.base.kind != BaseKind::Local {
        return Err(RunError::Config(zoomtower::config::ConfigError::field("kind", None, "density needs a local base")));
    }
    let b = build(cfg, map)?;
    let opts = DensityOptions { degree: cfg.caps.degree, ..Default::default() };
    let tm = invariant_density(map, &b.tower, &ReferenceMeasure::Lebesgue, &opts).stage("measures")?;
    let pm = project(map, &b.tower, &tm, cfg.caps.resolution).stage("measures")?;
    let base = tm.base;
    let pts = 2 * cfg.caps.degree + 1;
    sink.csv(
        "base_density.csv",
        "invariant density of the induced map on the base",
        &["x", "density"],
        (0..pts).map(|k| {
            let x = base.lo + base.len() * k as f64 / (pts - 1) as f64;
            vec![x.into(), tm.density(x).into()]
        }),
    )?;
    let hist = pm.histogram(cfg.caps.bins);
    let nb = hist.len();
    sink.csv(
        "projected.csv",
        "density of the projected invariant measure on equal bins",
        &["left", "right", "density"],
        hist.iter().enumerate().map(|(k, &d)| vec![(k as f64 / nb as f64).into(), ((k + 1) as f64 / nb as f64).into(), d.into()]),
    )?;
    let mut summary = tower_summary(&b);
    summary["density"] = json!({
        "degree": opts.degree, "iterations": tm.iterations, "residual": tm.residual, "defect": tm.defect,
        "mean_return": tm.mean_return, "distortion": tm.distortion, "distortion_bound": tm.distortion_bound,
        "mass_defect": pm.mass_defect(), "moments": [pm.moment(1), pm.moment(2)],
    });
    Ok(Outcome::ok(summary))
}

pub fn corr(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    let seed = cfg.require_seed("corr")?;
    let mc = McOptions::new(cfg.caps.samples, seed);
    let n_max = cfg.caps.n_max;
    let mut summary = json!({});
    let built = match cfg.measure.sampler {
        SamplerKind::Lebesgue => None,
        _ => Some(build(cfg, map)?),
    };
    let series = match (cfg.measure.sampler, &built) {
        (SamplerKind::Bernoulli, Some(b)) => {
            let nu = bernoulli_tower_measure(map, &b.tower, &cfg.measure.weights).stage("measures")?;
            sink.csv(
                "tail.csv",
                "tail of the return time under the product measure",
                &["n", "tail"],
                (0..=n_max).map(|n| vec![n.into(), nu.tail(n).into()]),
            )?;
            summary = tower_summary(b);
            summary["measure"] = json!({ "weights": cfg.measure.weights, "mean_return": nu.mean_return, "depth": nu.depth });
            let s = ProjectedBernoulli { map, tower: &b.tower, measure: &nu };
            correlation(map, &s, &cfg.phi, &cfg.psi, n_max, &mc).stage("measures")?
        }
        (SamplerKind::Density, Some(b)) => {
            let opts = DensityOptions { degree: cfg.caps.degree, ..Default::default() };
            let tm = invariant_density(map, &b.tower, &ReferenceMeasure::Lebesgue, &opts).stage("measures")?;
            let pm = project(map, &b.tower, &tm, cfg.caps.resolution).stage("measures")?;
            let h = Histogram::new(&pm.histogram(cfg.caps.bins)).stage("measures")?;
            summary = tower_summary(b);
            correlation(map, &h, &cfg.phi, &cfg.psi, n_max, &mc).stage("measures")?
        }
        _ => {
            let u = Uniform::default();
            correlation(map, &u as &dyn PointSampler, &cfg.phi, &cfg.psi, n_max, &mc).stage("measures")?
        }
    };
    sink.csv(
        "corr.csv",
        "correlation estimates with standard errors",
        &["n", "correlation", "std_error"],
        series.values.iter().zip(&series.std_errors).enumerate().map(|(n, (&v, &e))| vec![n.into(), v.into(), e.into()]),
    )?;
    sink.json("fits.json", "decay fits on the upper three quarters of the lags", &json!({
        "phi": series.phi, "psi": series.psi, "fits": series.fits, "best": series.best_fit(),
    }))?;
    summary["samples"] = json!(mc.samples);
    summary["best_fit"] = json!(series.best_fit());
    Ok(Outcome::ok(summary))
}

pub fn repeller(cfg: &RunConfig, map: &Map, sink: &mut Sink) -> Result<Outcome, RunError> {
    let (lo, hi) = cfg.repeller.region.unwrap_or((0.0, 1.0));
    let region = Interval::new(lo, hi);
    let search = RepellerSearch {
        min_period: cfg.repeller.min_period,
        max_period: cfg.repeller.max_period,
        eps_dense: cfg.repeller.eps_dense,
        reference: Vec::new(),
    };
    let o = find_periodic_repeller(map, region, &search).stage("measures")?;
    sink.csv(
        "repeller.csv",
        "periodic orbit points with their branches",
        &["k", "point", "branch"],
        o.points.iter().zip(&o.itinerary).enumerate().map(|(k, (&p, &b))| vec![k.into(), p.into(), b.into()]),
    )?;
    Ok(Outcome::ok(json!({
        "period": o.period, "multiplier": o.multiplier, "self_mapped": o.self_mapped, "points": o.points,
    })))
}
