//! Flat `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [model]
//! gamma = 0.5
//! lambda = 0.01
//! map = identity
//! alpha = 10
//!
//! [io]
//! observed = observed.png
//! output = out
//!
//! [forcing]
//! total_mass = 0.1
//! source = 26,4
//! sink = 5,44,0.333333
//! sink = 46,44,0.666667
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use niot_core::elliptic::SolverSettings;
use niot_core::imageio::{load_float_field, load_grayscale, ForcingEntry, ForcingSpec};
use niot_core::inpaint::{InitialGuess, NiotConfig, WeightKind};
use niot_core::porous::{pm_exponents, PmParams};
use niot_core::CellField;

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "gamma",
            "lambda",
            "map",
            "alpha",
            "pm_p",
            "pm_kappa",
            "pm_m",
            "pm_t_star",
            "pm_substeps",
            "pm_step_ratio",
            "pm_newton_tol",
            "pm_newton_max",
        ],
    ),
    ("fitting", &["weight"]),
    (
        "optimization",
        &[
            "mu0",
            "mu_plus_rel",
            "dt0",
            "dt_min",
            "dt_max",
            "dt_grow",
            "stop_tol",
            "k_max",
            "rtol",
            "mu_min",
            "max_iterations",
            "preconditioner",
            "face_mean",
        ],
    ),
    ("io", &["observed", "mask", "output", "forcing"]),
    (
        "forcing",
        &["total_mass", "source", "sink", "source_region", "sink_region"],
    ),
];

const REPEATABLE: &[&str] = &["source", "sink", "source_region", "sink_region"];

/// Parsed but uninterpreted document: `(section, key) → [(value, line)]`.
#[derive(Debug, Clone, Default)]
pub struct Document {
    entries: BTreeMap<(String, String), Vec<(String, usize)>>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::default();
        let mut section: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    bail!("line {line_no}: unknown section [{name}]");
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`"))?;
            let sec = section
                .clone()
                .ok_or_else(|| anyhow!("line {line_no}: key outside of any section"))?;
            doc.insert(&sec, key.trim(), value.trim(), line_no)?;
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn insert(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        let known = SECTIONS
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        if !known.contains(&key) {
            bail!("line {line}: unknown key '{key}' in [{section}]");
        }
        let slot = self.entries.entry((section.to_string(), key.to_string())).or_default();
        if !slot.is_empty() && !REPEATABLE.contains(&key) {
            bail!("line {line}: duplicate key '{key}' in [{section}]");
        }
        slot.push((value.to_string(), line));
        Ok(())
    }

    /// Replaces every value of `key` (either `section.key` or a bare key
    /// that names exactly one section).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, key) = resolve_key(key)?;
        self.entries.insert((section, key), vec![(value.to_string(), 0)]);
        Ok(())
    }

    fn values(&self, section: &str, key: &str) -> &[(String, usize)] {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map_or(&[], |v| v.as_slice())
    }

    fn get(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.values(section, key).first()
    }

    fn parse_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| anyhow!("line {line}: cannot parse {section}.{key} = '{v}'")),
        }
    }

    fn string_or(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).map_or(default.to_string(), |(v, _)| v.clone())
    }

    /// Canonical text form, used to echo the effective configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (section, _) in SECTIONS {
            let mut first = true;
            for ((s, k), vals) in &self.entries {
                if s != section {
                    continue;
                }
                if first {
                    let _ = writeln!(out, "[{section}]");
                    first = false;
                }
                for (v, _) in vals {
                    let _ = writeln!(out, "{k} = {v}");
                }
            }
        }
        out
    }
}

/// Maps `section.key` or a bare key to its section.
pub fn resolve_key(key: &str) -> Result<(String, String)> {
    if let Some((s, k)) = key.split_once('.') {
        let known = SECTIONS
            .iter()
            .find(|(name, _)| *name == s)
            .ok_or_else(|| anyhow!("unknown section '{s}' in key '{key}'"))?;
        if !known.1.contains(&k) {
            bail!("unknown key '{k}' in [{s}]");
        }
        return Ok((s.to_string(), k.to_string()));
    }
    let hits: Vec<&str> = SECTIONS
        .iter()
        .filter(|(_, keys)| keys.contains(&key))
        .map(|(s, _)| *s)
        .collect();
    match hits.as_slice() {
        [s] => Ok((s.to_string(), key.to_string())),
        [] => bail!("unknown key '{key}'"),
        _ => bail!("key '{key}' is ambiguous; qualify it with a section"),
    }
}

/// A fully interpreted run: solver configuration plus inputs on disk.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub niot: NiotConfig,
    pub observed: PathBuf,
    pub mask: Option<PathBuf>,
    pub output: PathBuf,
    pub forcing: ForcingSource,
    pub total_mass: f64,
    pub text: String,
}

#[derive(Debug, Clone)]
pub enum ForcingSource {
    Inline(Vec<ForcingLine>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingLine {
    Point { sink: bool, i: usize, j: usize, mass: f64 },
    Region { sink: bool, path: PathBuf, mass: f64 },
}

fn parse_forcing_lines(doc: &Document, base: &Path) -> Result<Vec<ForcingLine>> {
    let mut out = Vec::new();
    for (key, sink) in [("source", false), ("sink", true)] {
        for (v, line) in doc.values("forcing", key) {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| anyhow!("line {line}: bad number '{s}'")) };
            let idx =
                |s: &str| -> Result<usize> { s.parse().map_err(|_| anyhow!("line {line}: bad cell index '{s}'")) };
            let (i, j, mass) = match parts.as_slice() {
                [i, j] => (idx(i)?, idx(j)?, 1.0),
                [i, j, m] => (idx(i)?, idx(j)?, num(m)?),
                _ => bail!("line {line}: {key} expects `i,j` or `i,j,mass`"),
            };
            out.push(ForcingLine::Point { sink, i, j, mass });
        }
        let rkey = if sink { "sink_region" } else { "source_region" };
        for (v, line) in doc.values("forcing", rkey) {
            let (p, mass) = match v.rsplit_once(',') {
                Some((p, m)) => (
                    p.trim(),
                    m.trim().parse().map_err(|_| anyhow!("line {line}: bad mass '{m}'"))?,
                ),
                None => (v.as_str(), 1.0),
            };
            out.push(ForcingLine::Region {
                sink,
                path: base.join(p),
                mass,
            });
        }
    }
    Ok(out)
}

impl RunSpec {
    pub fn from_document(doc: &Document, base: &Path) -> Result<Self> {
        let gamma = doc.parse_or("model", "gamma", 0.5)?;
        let lambda = doc.parse_or("model", "lambda", 0.0)?;
        let map_kind = doc.string_or("model", "map", "identity");
        let alpha = doc.parse_or("model", "alpha", 1.0)?;
        let p = doc.parse_or("model", "pm_p", 3.0)?;
        let kappa = doc.parse_or("model", "pm_kappa", 5e2)?;
        let calibrated = pm_exponents(p, kappa, 2).context("calibrating the porous-media map")?;
        let pm = PmParams {
            m: doc.parse_or("model", "pm_m", calibrated.m)?,
            t_star: doc.parse_or("model", "pm_t_star", calibrated.t_star)?,
            substeps: doc.parse_or("model", "pm_substeps", PmParams::default().substeps)?,
            step_ratio: doc.parse_or("model", "pm_step_ratio", PmParams::default().step_ratio)?,
            alpha,
            newton_tol: doc.parse_or("model", "pm_newton_tol", PmParams::default().newton_tol)?,
            newton_max: doc.parse_or("model", "pm_newton_max", PmParams::default().newton_max)?,
            ..PmParams::default()
        };
        let weight_kind = match doc.string_or("fitting", "weight", "mask").as_str() {
            "mask" => WeightKind::Mask,
            "one" => WeightKind::One,
            other => bail!("fitting.weight must be 'mask' or 'one', got '{other}'"),
        };
        let mu0 = match doc.string_or("optimization", "mu0", "1").as_str() {
            "observation" | "from_observation" => InitialGuess::FromObservation,
            v => InitialGuess::Uniform(
                v.strip_prefix("uniform:")
                    .unwrap_or(v)
                    .parse()
                    .map_err(|_| anyhow!("optimization.mu0 must be a number or 'from_observation', got '{v}'"))?,
            ),
        };
        let d = NiotConfig::default();
        let elliptic = SolverSettings {
            rtol: doc.parse_or("optimization", "rtol", d.elliptic.rtol)?,
            mu_min: doc.parse_or("optimization", "mu_min", d.elliptic.mu_min)?,
            max_iterations: match doc.get("optimization", "max_iterations") {
                None => None,
                Some(_) => Some(doc.parse_or("optimization", "max_iterations", 0usize)?),
            },
            preconditioner: doc.string_or("optimization", "preconditioner", &d.elliptic.preconditioner),
            face_mean: doc.string_or("optimization", "face_mean", &d.elliptic.face_mean),
        };
        let niot = NiotConfig {
            gamma,
            lambda,
            map_kind,
            alpha,
            pm,
            weight_kind,
            mu0,
            mu_plus_rel: doc.parse_or("optimization", "mu_plus_rel", d.mu_plus_rel)?,
            dt0: doc.parse_or("optimization", "dt0", d.dt0)?,
            dt_min: doc.parse_or("optimization", "dt_min", d.dt_min)?,
            dt_max: doc.parse_or("optimization", "dt_max", d.dt_max)?,
            dt_grow: doc.parse_or("optimization", "dt_grow", d.dt_grow)?,
            stop_tol: doc.parse_or("optimization", "stop_tol", d.stop_tol)?,
            k_max: doc.parse_or("optimization", "k_max", d.k_max)?,
            elliptic,
        };
        niot.validate().context("invalid model parameters")?;

        let observed = doc
            .get("io", "observed")
            .map(|(v, _)| base.join(v))
            .ok_or_else(|| anyhow!("io.observed is required"))?;
        let mask = doc.get("io", "mask").map(|(v, _)| base.join(v));
        let output = base.join(doc.string_or("io", "output", "out"));
        let forcing = match doc.get("io", "forcing") {
            Some((v, _)) => ForcingSource::File(base.join(v)),
            None => ForcingSource::Inline(parse_forcing_lines(doc, base)?),
        };
        let total_mass = doc.parse_or("forcing", "total_mass", 1.0)?;
        Ok(Self {
            niot,
            observed,
            mask,
            output,
            forcing,
            total_mass,
            text: doc.render(),
        })
    }

    /// Fails if any referenced input file is missing.
    pub fn check_inputs(&self) -> Result<()> {
        let mut paths = vec![&self.observed];
        paths.extend(self.mask.iter());
        if let ForcingSource::File(p) = &self.forcing {
            paths.push(p);
        }
        if let ForcingSource::Inline(lines) = &self.forcing {
            for l in lines {
                if let ForcingLine::Region { path, .. } = l {
                    paths.push(path);
                }
            }
        }
        for p in paths {
            if !p.is_file() {
                bail!("input file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// Builds the forcing spec, reading region images and forcing files.
    pub fn forcing_spec(&self) -> Result<(ForcingSpec, f64)> {
        let (lines, total) = match &self.forcing {
            ForcingSource::Inline(lines) => (lines.clone(), self.total_mass),
            ForcingSource::File(p) => {
                let doc = Document::load(p)?;
                let base = p.parent().unwrap_or(Path::new("."));
                (
                    parse_forcing_lines(&doc, base)?,
                    doc.parse_or("forcing", "total_mass", self.total_mass)?,
                )
            }
        };
        let mut spec = ForcingSpec::default();
        for l in lines {
            let (sink, entry) = match l {
                ForcingLine::Point { sink, i, j, mass } => (sink, ForcingEntry::point(i, j, mass)),
                ForcingLine::Region { sink, path, mass } => (sink, ForcingEntry::region(load_field(&path)?, mass)),
            };
            if sink {
                spec.sinks.push(entry);
            } else {
                spec.sources.push(entry);
            }
        }
        Ok((spec, total))
    }
}

/// Loads an image (`.pgm`, `.png`) or a raw float field (`.niotf`).
pub fn load_field(path: &Path) -> Result<CellField> {
    let is_float = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("niotf"));
    let field = if is_float {
        load_float_field(path)
    } else {
        load_grayscale(path)
    };
    field.with_context(|| format!("loading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "
[model]
gamma = 0.8   # comment
lambda = 0.1
map = pm
[io]
observed = obs.png
output = results
[forcing]
source = 1,2
sink = 3,4,0.25
sink = 5,6,0.75
";

    #[test]
    fn parses_and_interprets() {
        let doc = Document::parse(BASIC).unwrap();
        let spec = RunSpec::from_document(&doc, Path::new("/data")).unwrap();
        assert_eq!(spec.niot.gamma, 0.8);
        assert_eq!(spec.niot.map_kind, "pm");
        assert_eq!(spec.niot.pm.m, 2.0);
        assert_eq!(spec.observed, PathBuf::from("/data/obs.png"));
        assert_eq!(spec.output, PathBuf::from("/data/results"));
        match &spec.forcing {
            ForcingSource::Inline(l) => {
                assert_eq!(l.len(), 3);
                assert_eq!(
                    l[2],
                    ForcingLine::Point {
                        sink: true,
                        i: 5,
                        j: 6,
                        mass: 0.75
                    }
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(Document::parse("[model]\nbeta = 1\n").is_err());
        assert!(Document::parse("[model]\ngamma = 1\ngamma = 2\n").is_err());
        assert!(Document::parse("[plot]\n").is_err());
        assert!(Document::parse("gamma = 1\n").is_err());
        assert!(Document::parse("[model]\ngamma\n").is_err());
    }

    #[test]
    fn invalid_values_are_reported() {
        let doc = Document::parse("[model]\ngamma = 1.5\n[io]\nobserved = a.png\n").unwrap();
        assert!(RunSpec::from_document(&doc, Path::new(".")).is_err());
        let doc = Document::parse("[model]\ngamma = x\n[io]\nobserved = a.png\n").unwrap();
        assert!(RunSpec::from_document(&doc, Path::new(".")).is_err());
    }

    #[test]
    fn overrides() {
        let mut doc = Document::parse(BASIC).unwrap();
        doc.set("lambda", "0.5").unwrap();
        doc.set("model.map", "identity").unwrap();
        assert!(doc.set("nonsense", "1").is_err());
        let spec = RunSpec::from_document(&doc, Path::new(".")).unwrap();
        assert_eq!(spec.niot.lambda, 0.5);
        assert_eq!(spec.niot.map_kind, "identity");
        assert!(spec.text.contains("lambda = 0.5"));
    }

    #[test]
    fn initial_guess_forms() {
        for (v, want) in [
            ("0.3", InitialGuess::Uniform(0.3)),
            ("uniform:2", InitialGuess::Uniform(2.0)),
            ("from_observation", InitialGuess::FromObservation),
        ] {
            let doc = Document::parse(&format!("[optimization]\nmu0 = {v}\n[io]\nobserved = a.png\n")).unwrap();
            assert_eq!(RunSpec::from_document(&doc, Path::new(".")).unwrap().niot.mu0, want);
        }
    }
}
