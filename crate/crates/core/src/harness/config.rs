//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma separated. Every key
//! except `seed` and `experiment` has a default; `replicates` defaults per subcommand and profile.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::smoluchowski::InitialLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    SimulateCoalescent,
    SolvePde,
    McWeak,
    CppMark,
    UpsilonBank,
    ProfileOde,
    Dust,
    SpeedCdi,
    Acceptance,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::SimulateCoalescent,
        Subcommand::SolvePde,
        Subcommand::McWeak,
        Subcommand::CppMark,
        Subcommand::UpsilonBank,
        Subcommand::ProfileOde,
        Subcommand::Dust,
        Subcommand::SpeedCdi,
        Subcommand::Acceptance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::SimulateCoalescent => "simulate-coalescent",
            Subcommand::SolvePde => "solve-pde",
            Subcommand::McWeak => "mc-weak",
            Subcommand::CppMark => "cpp-mark",
            Subcommand::UpsilonBank => "upsilon-bank",
            Subcommand::ProfileOde => "profile-ode",
            Subcommand::Dust => "dust",
            Subcommand::SpeedCdi => "speed-cdi",
            Subcommand::Acceptance => "acceptance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Quick,
    Full,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Quick => "quick",
            Profile::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Profile::Quick),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(format!("profile must be `quick` or `full`, got `{s}`"))),
        }
    }
}

/// Gene content of the species at the start of a coalescent run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// One gene per species.
    Minimal,
    /// `K_cap` genes per species, standing in for infinitely many.
    Kcap,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Minimal => "minimal",
            InitMode::Kcap => "kcap",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "minimal" => Ok(InitMode::Minimal),
            "kcap" => Ok(InitMode::Kcap),
            _ => Err(Error::Config(format!("coalescent.init must be `minimal` or `kcap`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Subcommand,
    pub seed: u64,
    pub out: PathBuf,
    pub profile: Profile,
    /// `psi(x) = rate x^gamma` for the PDE, tree and CPP routes.
    pub mechanism_rate: f64,
    pub mechanism_gamma: f64,
    /// Gene-pair merger rate `c` of the coalescent.
    pub gene_rate: f64,
    /// Rescaling unit of the coalescent: species counts are divided by `n`, times multiplied.
    pub n: u64,
    pub init: InitMode,
    /// Marking level or coagulation offset; `0` selects the infinite-population solution where
    /// that is meaningful.
    pub delta: f64,
    /// Decreasing levels for the dust construction.
    pub deltas: Vec<f64>,
    pub times: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub replicates: Option<usize>,
    pub initial: InitialLaw,
    /// Picard iterations; `0` skips the McKean-Vlasov comparison in `cpp-mark`.
    pub iterations: usize,
    pub threshold: f64,
    /// Level-to-level agreement required by the maximal marking.
    pub tol: f64,
    pub ode_tol: f64,
    pub x_max: f64,
}

const KEYS: [&str; 20] = [
    "experiment",
    "seed",
    "out",
    "profile",
    "mechanism.rate",
    "mechanism.gamma",
    "coalescent.gene_rate",
    "coalescent.n",
    "coalescent.init",
    "delta",
    "deltas",
    "times",
    "lambdas",
    "replicates",
    "initial",
    "iterations",
    "threshold",
    "tol",
    "ode_tol",
    "x_max",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key} = {value}`: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, what))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| num(key, s.trim(), "a comma-separated list of numbers")).collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_law(v: &str) -> Result<InitialLaw> {
    let (kind, args) = v.split_once(':').ok_or_else(|| bad("initial", v, "`kind:params`"))?;
    let args = list("initial", args)?;
    let law = match (kind, args.as_slice()) {
        ("point", [at]) => InitialLaw::PointMass { at: *at },
        ("exponential", [mean]) => InitialLaw::Exponential { mean: *mean },
        ("gamma", [shape, scale]) => InitialLaw::Gamma { shape: *shape, scale: *scale },
        _ => return Err(bad("initial", v, "point:<at>, exponential:<mean> or gamma:<shape>,<scale>")),
    };
    law.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(law)
}

fn format_law(law: &InitialLaw) -> String {
    match *law {
        InitialLaw::PointMass { at } => format!("point:{at}"),
        InitialLaw::Exponential { mean } => format!("exponential:{mean}"),
        InitialLaw::Gamma { shape, scale } => format!("gamma:{shape},{scale}"),
    }
}

/// Reads `key = value` lines into a map, rejecting unknown and repeated keys.
fn read_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key `{k}` given twice", i + 1)));
        }
    }
    Ok(map)
}

impl ExperimentConfig {
    /// Parses `text` and then applies `overrides` (command-line flags win over the file).
    pub fn parse(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut map = read_pairs(text)?;
        for (k, v) in overrides {
            if !KEYS.contains(k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            map.insert(k.to_string(), v.clone());
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let experiment = Subcommand::parse(get("experiment").ok_or_else(|| {
            Error::Config("no experiment given: name a subcommand or set `experiment`".into())
        })?)?;
        let seed = num(
            "seed",
            get("seed").ok_or_else(|| Error::Config("a seed is mandatory: set `seed` or pass --seed".into()))?,
            "an unsigned 64-bit integer",
        )?;
        let f = |k: &str, d: f64| -> Result<f64> { get(k).map_or(Ok(d), |v| num(k, v, "a number")) };
        let l = |k: &str, d: &[f64]| -> Result<Vec<f64>> { get(k).map_or(Ok(d.to_vec()), |v| list(k, v)) };
        let cfg = ExperimentConfig {
            experiment,
            seed,
            out: PathBuf::from(get("out").unwrap_or("out")),
            profile: get("profile").map_or(Ok(Profile::Quick), Profile::parse)?,
            mechanism_rate: f("mechanism.rate", 0.5)?,
            mechanism_gamma: f("mechanism.gamma", 2.0)?,
            gene_rate: f("coalescent.gene_rate", 1.0)?,
            n: get("coalescent.n").map_or(Ok(10_000), |v| num("coalescent.n", v, "a positive integer"))?,
            init: get("coalescent.init").map_or(Ok(InitMode::Kcap), InitMode::parse)?,
            delta: f("delta", 1.0)?,
            deltas: l("deltas", &[1e-2, 2.5e-3, 1e-3])?,
            times: l("times", &[0.5, 1.0, 2.0])?,
            lambdas: l("lambdas", &[0.2, 1.0, 5.0])?,
            replicates: get("replicates")
                .map(|v| num("replicates", v, "a positive integer"))
                .transpose()?,
            initial: get("initial").map_or(Ok(InitialLaw::PointMass { at: 1.0 }), parse_law)?,
            iterations: get("iterations").map_or(Ok(30), |v| num("iterations", v, "an integer"))?,
            threshold: f("threshold", 0.1)?,
            tol: f("tol", 1e-3)?,
            ode_tol: f("ode_tol", 1e-8)?,
            x_max: f("x_max", 20.0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
            }
        };
        positive("mechanism.rate", self.mechanism_rate)?;
        positive("coalescent.gene_rate", self.gene_rate)?;
        positive("threshold", self.threshold)?;
        positive("tol", self.tol)?;
        positive("ode_tol", self.ode_tol)?;
        positive("x_max", self.x_max)?;
        if !(self.mechanism_gamma > 1.0) || !self.mechanism_gamma.is_finite() {
            return Err(Error::Config(format!("mechanism.gamma must exceed 1, got {}", self.mechanism_gamma)));
        }
        if self.n == 0 {
            return Err(Error::Config("coalescent.n must be positive".into()));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("delta must be finite and non-negative, got {}", self.delta)));
        }
        let sorted_positive = |name: &str, xs: &[f64]| {
            if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-empty list of positive numbers")));
            }
            Ok(())
        };
        sorted_positive("times", &self.times)?;
        sorted_positive("deltas", &self.deltas)?;
        sorted_positive("lambdas", &self.lambdas)?;
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("times must be strictly increasing".into()));
        }
        if self.deltas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("deltas must be strictly decreasing".into()));
        }
        if self.replicates == Some(0) {
            return Err(Error::Config("replicates must be positive".into()));
        }
        Ok(())
    }

    /// Every key in a fixed order; parsing the output gives back the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("experiment", self.experiment.name().into());
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("profile", self.profile.name().into());
        put("mechanism.rate", self.mechanism_rate.to_string());
        put("mechanism.gamma", self.mechanism_gamma.to_string());
        put("coalescent.gene_rate", self.gene_rate.to_string());
        put("coalescent.n", self.n.to_string());
        put("coalescent.init", self.init.name().into());
        put("delta", self.delta.to_string());
        put("deltas", join(&self.deltas));
        put("times", join(&self.times));
        put("lambdas", join(&self.lambdas));
        if let Some(r) = self.replicates {
            put("replicates", r.to_string());
        }
        put("initial", format_law(&self.initial));
        put("iterations", self.iterations.to_string());
        put("threshold", self.threshold.to_string());
        put("tol", self.tol.to_string());
        put("ode_tol", self.ode_tol.to_string());
        put("x_max", self.x_max.to_string());
        s
    }

    pub fn mechanism(&self) -> Result<BranchingMechanism> {
        BranchingMechanism::stable(self.mechanism_rate, self.mechanism_gamma)
    }

    /// Mechanism matching the coalescent: gene pairs merging at rate `c` give `psi(x) = (c/2) x^2`.
    pub fn coalescent_mechanism(&self) -> Result<BranchingMechanism> {
        BranchingMechanism::quadratic(self.gene_rate / 2.0)
    }

    pub fn replicates_or(&self, quick: usize, full: usize) -> usize {
        self.replicates.unwrap_or(match self.profile {
            Profile::Quick => quick,
            Profile::Full => full,
        })
    }
}
