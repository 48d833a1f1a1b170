//! Run configuration read from a `key = value` file.
//!
//! ```text
//! [run]        seed, output
//! [map]        name (shipped) | file (map definition) | inline [branch.i] sections
//! [zooming]    contraction = power|exponential|polynomial|hyperbolic, c, lambda, sigma,
//!              radius, times = all|multiples|hyperbolic, ell = <n>|auto, theta
//! [hyperbolic] sigma, epsilon, b, lambda, delta, theta
//! [base]       kind = local|global, center, r, lo, hi
//! [caps]       order_cap, check_order, r_max, seeds, mass_target, max_atoms, max_rounds,
//!              n_max, samples, degree, resolution, bins, tol
//! [measure]    sampler = bernoulli|density|lebesgue, weights = uniform|geometric|exponential, z
//! [observables] phi, psi  (cos(k), bump(c, w), const(c), cob(<observable>))
//! [orbit]      x, n
//! [repeller]   period, min_period, max_period, lo, hi, eps_dense
//! ```

use std::path::{Path, PathBuf};

use serde::Serialize;
use zoomtower::config::{parse_number, ConfigError, Document, Section};
use zoomtower::contraction::ZoomingContraction;
use zoomtower::dynamics::maps;
use zoomtower::measures::{Observable, WeightRule};
use zoomtower::preballs::{Admissibility, TimeSource};
use zoomtower::zooming::{ell_scan, HyperbolicParams};
use zoomtower::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Local,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaseSpec {
    pub kind: BaseKind,
    pub center: Option<f64>,
    pub r: Option<f64>,
    /// Explicit base interval, used as is.
    pub interval: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "source")]
pub enum TimesSpec {
    All,
    /// `None`: the smallest `ell` whose contraction sums stay below `r/8`.
    Multiples { ell: Option<usize> },
    Hyperbolic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Caps {
    pub order_cap: Option<usize>,
    pub check_order: usize,
    pub r_max: usize,
    pub seeds: usize,
    pub mass_target: f64,
    pub max_atoms: usize,
    pub max_rounds: usize,
    pub n_max: usize,
    pub samples: usize,
    pub degree: usize,
    pub resolution: usize,
    pub bins: usize,
    pub tol: f64,
}

impl Default for Caps {
    fn default() -> Self {
        let t = zoomtower::tower::TowerCaps::default();
        Self {
            order_cap: None,
            check_order: 15,
            r_max: t.r_max,
            seeds: t.seeds,
            mass_target: t.mass_target,
            max_atoms: t.max_atoms,
            max_rounds: t.max_rounds,
            n_max: 40,
            samples: 10_000,
            degree: 64,
            resolution: 256,
            bins: 64,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Bernoulli,
    Density,
    Lebesgue,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureSpec {
    pub sampler: SamplerKind,
    pub weights: WeightRule,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepellerSpec {
    pub min_period: usize,
    pub max_period: usize,
    pub region: Option<(f64, f64)>,
    pub eps_dense: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub map_name: String,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub contraction: ZoomingContraction<f64>,
    pub radius: f64,
    pub times: TimesSpec,
    pub theta: f64,
    pub hyperbolic: Option<HyperbolicParams<f64>>,
    pub base: BaseSpec,
    pub caps: Caps,
    pub measure: MeasureSpec,
    pub phi: Observable,
    pub psi: Observable,
    pub orbit_x: Option<f64>,
    pub orbit_n: usize,
    pub repeller: RepellerSpec,
    /// Line of the `[run]` header, for diagnostics about missing keys.
    #[serde(skip)]
    pub run_line: Option<usize>,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("run", &["seed", "output"]),
    ("map", &[]),
    ("critical", &["points"]),
    ("zooming", &["contraction", "c", "lambda", "sigma", "radius", "times", "ell", "theta"]),
    ("hyperbolic", &["sigma", "epsilon", "b", "lambda", "delta", "theta"]),
    ("base", &["kind", "center", "r", "lo", "hi"]),
    (
        "caps",
        &[
            "order_cap", "check_order", "r_max", "seeds", "mass_target", "max_atoms", "max_rounds", "n_max", "samples", "degree",
            "resolution", "bins", "tol",
        ],
    ),
    ("measure", &["sampler", "weights", "z"]),
    ("observables", &["phi", "psi"]),
    ("orbit", &["x", "n"]),
    ("repeller", &["period", "min_period", "max_period", "lo", "hi", "eps_dense"]),
];

fn check_keys(doc: &Document) -> Result<(), ConfigError> {
    for s in &doc.sections {
        if s.name.starts_with("branch.") {
            continue;
        }
        let Some((_, keys)) = KNOWN.iter().find(|(n, _)| *n == s.name) else {
            return Err(ConfigError::at(s.line, format!("unknown section [{}]", s.name)));
        };
        // [map] doubles as the header of inline map definitions
        if s.name == "map" {
            continue;
        }
        if let Some(e) = s.entries.iter().find(|e| !keys.contains(&e.key.as_str())) {
            return Err(ConfigError::field(&e.key, Some(e.line), format!("unknown key in [{}]", s.name)));
        }
    }
    Ok(())
}

fn usize_of(s: &Section, key: &str) -> Result<Option<usize>, ConfigError> {
    s.u64(key)?
        .map(|v| usize::try_from(v).map_err(|_| ConfigError::field(key, s.get(key).map(|e| e.line), "too large")))
        .transpose()
}

fn in_range(s: &Section, key: &str, v: f64, lo: f64, hi: f64, open_lo: bool) -> Result<f64, ConfigError> {
    let ok = if open_lo { v > lo && v <= hi } else { v >= lo && v <= hi };
    if ok && v.is_finite() {
        Ok(v)
    } else {
        let l = if open_lo { "(" } else { "[" };
        Err(ConfigError::field(key, s.get(key).map(|e| e.line), format!("{v} outside {l}{lo}, {hi}]")))
    }
}

fn positive(s: &Section, key: &str) -> Result<Option<f64>, ConfigError> {
    s.f64(key)?.map(|v| in_range(s, key, v, 0.0, f64::MAX, true)).transpose()
}

fn unit(s: &Section, key: &str) -> Result<Option<f64>, ConfigError> {
    s.f64(key)?.map(|v| in_range(s, key, v, 0.0, 1.0, false)).transpose()
}

fn require_f64(s: &Section, key: &str) -> Result<f64, ConfigError> {
    let e = s.require(key)?;
    parse_number(&e.value).map_err(|m| ConfigError::field(key, Some(e.line), m))
}

/// `cos(k)`, `bump(c, w)`, `const(c)` or `cob(<observable>)`.
pub fn parse_observable(text: &str) -> Result<Observable, String> {
    let t = text.trim();
    let open = t.find('(').ok_or_else(|| format!("expected name(args), got '{t}'"))?;
    let inner = t[open + 1..].strip_suffix(')').ok_or_else(|| format!("missing ')' in '{t}'"))?;
    let name = t[..open].trim();
    if name == "cob" {
        return Ok(Observable::Coboundary { inner: Box::new(parse_observable(inner)?) });
    }
    let args: Vec<f64> = inner.split(',').map(parse_number).collect::<Result<_, _>>()?;
    match (name, args.as_slice()) {
        ("cos", [k]) => Ok(Observable::Cos { k: *k }),
        ("bump", [c, w]) if *w > 0.0 => Ok(Observable::Bump { center: *c, width: *w }),
        ("const", [c]) => Ok(Observable::Constant { c: *c }),
        _ => Err(format!("unknown observable '{t}'")),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, Map), ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::field("config", None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&src, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses a config; `dir` resolves relative map files.
    pub fn parse(src: &str, dir: &Path) -> Result<(Self, Map), ConfigError> {
        let doc = Document::parse(src)?;
        check_keys(&doc)?;
        let empty = Section { name: String::new(), line: 0, entries: Vec::new() };
        let sec = |n: &str| doc.section(n).unwrap_or(&empty);

        let map = load_map(&doc, dir)?;
        let run = sec("run");
        let seed = run.u64("seed")?;
        let output = run.str("output").map(PathBuf::from);

        let z = sec("zooming");
        let contraction = match z.str("contraction").unwrap_or("power") {
            "power" => {
                let c = unit(z, "c")?.unwrap_or(0.5);
                in_range(z, "c", c, 0.0, 1.0 - f64::EPSILON, true)?;
                ZoomingContraction::power(c)
            }
            "exponential" => ZoomingContraction::exponential(positive(z, "lambda")?.unwrap_or(1.0)),
            "polynomial" => ZoomingContraction::polynomial(),
            "hyperbolic" => {
                let s = unit(z, "sigma")?.unwrap_or(0.5);
                in_range(z, "sigma", s, 0.0, 1.0 - f64::EPSILON, true)?;
                ZoomingContraction::hyperbolic(s)
            }
            other => {
                return Err(ConfigError::field(
                    "contraction",
                    z.get("contraction").map(|e| e.line),
                    format!("expected power, exponential, polynomial or hyperbolic, got '{other}'"),
                ))
            }
        };
        let radius = z.f64("radius")?.unwrap_or(0.25);
        in_range(z, "radius", radius, 0.0, 0.5, true)?;
        let times = match z.str("times").unwrap_or("all") {
            "all" => TimesSpec::All,
            "multiples" => match z.str("ell") {
                None | Some("auto") => TimesSpec::Multiples { ell: None },
                Some(_) => {
                    let ell = usize_of(z, "ell")?.filter(|&l| l >= 1);
                    let ell = ell.ok_or_else(|| ConfigError::field("ell", z.get("ell").map(|e| e.line), "must be at least 1"))?;
                    TimesSpec::Multiples { ell: Some(ell) }
                }
            },
            "hyperbolic" => TimesSpec::Hyperbolic,
            other => {
                return Err(ConfigError::field(
                    "times",
                    z.get("times").map(|e| e.line),
                    format!("expected all, multiples or hyperbolic, got '{other}'"),
                ))
            }
        };
        let theta = unit(z, "theta")?.unwrap_or(0.1);

        let hyperbolic = match doc.section("hyperbolic") {
            Some(h) => {
                let sigma = unit(h, "sigma")?.unwrap_or(0.5);
                let eps = positive(h, "epsilon")?.unwrap_or(1.0);
                let mut p = HyperbolicParams::new(sigma, eps, map.beta);
                if let Some(b) = positive(h, "b")? {
                    p.b = b;
                }
                p.lambda = h.f64("lambda")?.unwrap_or(0.0);
                p.delta = positive(h, "delta")?.unwrap_or(p.delta);
                p.theta = unit(h, "theta")?.unwrap_or(p.theta);
                p.validate(map.beta).map_err(|e| ConfigError::field("hyperbolic", Some(h.line), e.to_string()))?;
                Some(p)
            }
            None if times == TimesSpec::Hyperbolic => {
                return Err(ConfigError::field("hyperbolic", z.get("times").map(|e| e.line), "times = hyperbolic needs a [hyperbolic] section"))
            }
            None => None,
        };

        let b = sec("base");
        let kind = match b.str("kind").unwrap_or("local") {
            "local" => BaseKind::Local,
            "global" => BaseKind::Global,
            other => {
                return Err(ConfigError::field("kind", b.get("kind").map(|e| e.line), format!("expected local or global, got '{other}'")))
            }
        };
        let center = unit(b, "center")?;
        let r = b.f64("r")?.map(|v| in_range(b, "r", v, 0.0, 0.5, true)).transpose()?;
        let interval = match (unit(b, "lo")?, unit(b, "hi")?) {
            (Some(lo), Some(hi)) if lo < hi => Some((lo, hi)),
            (None, None) => None,
            _ => return Err(ConfigError::field("lo", Some(b.line), "base needs both lo < hi")),
        };
        let base = BaseSpec { kind, center, r, interval };

        let c = sec("caps");
        let d = Caps::default();
        let caps = Caps {
            order_cap: usize_of(c, "order_cap")?,
            check_order: usize_of(c, "check_order")?.unwrap_or(d.check_order),
            r_max: usize_of(c, "r_max")?.unwrap_or(d.r_max).max(1),
            seeds: usize_of(c, "seeds")?.unwrap_or(d.seeds).max(1),
            mass_target: positive(c, "mass_target")?.unwrap_or(d.mass_target),
            max_atoms: usize_of(c, "max_atoms")?.unwrap_or(d.max_atoms),
            max_rounds: usize_of(c, "max_rounds")?.unwrap_or(d.max_rounds),
            n_max: usize_of(c, "n_max")?.unwrap_or(d.n_max).max(1),
            samples: usize_of(c, "samples")?.unwrap_or(d.samples).max(1),
            degree: usize_of(c, "degree")?.unwrap_or(d.degree).max(2),
            resolution: usize_of(c, "resolution")?.unwrap_or(d.resolution).max(1),
            bins: usize_of(c, "bins")?.unwrap_or(d.bins).max(1),
            tol: positive(c, "tol")?.unwrap_or(d.tol),
        };

        let m = sec("measure");
        let sampler = match m.str("sampler").unwrap_or("bernoulli") {
            "bernoulli" => SamplerKind::Bernoulli,
            "density" => SamplerKind::Density,
            "lebesgue" => SamplerKind::Lebesgue,
            other => {
                return Err(ConfigError::field(
                    "sampler",
                    m.get("sampler").map(|e| e.line),
                    format!("expected bernoulli, density or lebesgue, got '{other}'"),
                ))
            }
        };
        let z_of = || -> Result<f64, ConfigError> {
            let v = require_f64(m, "z")?;
            in_range(m, "z", v, 0.0, 1.0 - f64::EPSILON, true)
        };
        let weights = match m.str("weights").unwrap_or("uniform") {
            "uniform" => WeightRule::Uniform,
            "geometric" => WeightRule::Geometric { z: z_of()? },
            "exponential" => WeightRule::Exponential { z: z_of()? },
            other => {
                return Err(ConfigError::field(
                    "weights",
                    m.get("weights").map(|e| e.line),
                    format!("expected uniform, geometric or exponential, got '{other}'"),
                ))
            }
        };

        let o = sec("observables");
        let obs = |key: &str| -> Result<Observable, ConfigError> {
            match o.get(key) {
                Some(e) => parse_observable(&e.value).map_err(|m| ConfigError::field(key, Some(e.line), m)),
                None => Ok(Observable::cos2pi()),
            }
        };
        let (phi, psi) = (obs("phi")?, obs("psi")?);

        let ob = sec("orbit");
        let orbit_x = unit(ob, "x")?;
        let orbit_n = usize_of(ob, "n")?.unwrap_or(1000).max(1);

        let rp = sec("repeller");
        let period = usize_of(rp, "period")?;
        let min_period = usize_of(rp, "min_period")?.or(period).unwrap_or(1).max(1);
        let max_period = usize_of(rp, "max_period")?.or(period).unwrap_or(min_period);
        if max_period < min_period {
            return Err(ConfigError::field("max_period", rp.get("max_period").map(|e| e.line), "below min_period"));
        }
        let region = match (unit(rp, "lo")?, unit(rp, "hi")?) {
            (Some(lo), Some(hi)) if lo < hi => Some((lo, hi)),
            (None, None) => None,
            _ => return Err(ConfigError::field("lo", Some(rp.line), "region needs both lo < hi")),
        };
        let repeller = RepellerSpec { min_period, max_period, region, eps_dense: positive(rp, "eps_dense")? };

        let cfg = RunConfig {
            map_name: map.name.clone(),
            seed,
            output,
            contraction,
            radius,
            times,
            theta,
            hyperbolic,
            base,
            caps,
            measure: MeasureSpec { sampler, weights },
            phi,
            psi,
            orbit_x,
            orbit_n,
            repeller,
            run_line: doc.section("run").map(|s| s.line),
        };
        Ok((cfg, map))
    }

    /// The seed, or a diagnostic naming the command that needs it.
    pub fn require_seed(&self, command: &str) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| ConfigError::field("seed", self.run_line, format!("[run] seed is required by `{command}`")))
    }

    pub fn base_r(&self) -> Result<f64, ConfigError> {
        self.base.r.ok_or_else(|| ConfigError::field("r", None, "[base] r is required"))
    }

    pub fn base_center(&self) -> Result<f64, ConfigError> {
        self.base.center.ok_or_else(|| ConfigError::field("center", None, "[base] center is required"))
    }

    /// Admissibility with `ell` resolved against the radii `r, 4r`.
    pub fn admissibility(&self, r: f64) -> Result<Admissibility<f64>, ConfigError> {
        let times = match &self.times {
            TimesSpec::All => TimeSource::All,
            TimesSpec::Multiples { ell: Some(ell) } => TimeSource::Multiples { ell: *ell },
            TimesSpec::Multiples { ell: None } => {
                let ell = ell_scan(&self.contraction, &[r, 4.0 * r], 200)
                    .ok_or_else(|| ConfigError::field("ell", None, "no ell up to 200 makes the contraction sums small enough"))?;
                TimeSource::Multiples { ell }
            }
            TimesSpec::Hyperbolic => TimeSource::Hyperbolic { params: self.hyperbolic.clone().expect("checked at parse") },
        };
        Ok(Admissibility { alpha: self.contraction.clone(), radius: self.radius, times })
    }

    pub fn tower_caps(&self) -> zoomtower::tower::TowerCaps {
        zoomtower::tower::TowerCaps {
            r_max: self.caps.r_max,
            seeds: self.caps.seeds,
            mass_target: self.caps.mass_target,
            max_atoms: self.caps.max_atoms,
            max_rounds: self.caps.max_rounds,
        }
    }
}

fn load_map(doc: &Document, dir: &Path) -> Result<Map, ConfigError> {
    let inline = doc.sections.iter().any(|s| s.name.starts_with("branch."));
    if inline {
        return Map::from_document(doc);
    }
    let sec = doc.section("map").ok_or_else(|| ConfigError::field("map", None, "missing [map] section"))?;
    if let Some(e) = sec.get("file") {
        let path = dir.join(&e.value);
        let src = std::fs::read_to_string(&path)
            .map_err(|err| ConfigError::field("file", Some(e.line), format!("cannot read {}: {err}", path.display())))?;
        return Map::from_config_str(&src).map_err(|inner| {
            ConfigError::field("file", Some(e.line), format!("{}: {inner}", path.display()))
        });
    }
    let e = sec.require("name")?;
    maps::by_name(&e.value).ok_or_else(|| ConfigError::field("name", Some(e.line), format!("no shipped map called '{}'", e.value)))
}
