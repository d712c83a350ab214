//! Run configuration: TOML schema, validation and conversion into solver
//! objects.
//!
//! ```toml
//! [geometry]
//! kind = "disk"          # "circle" | "torus" | "disk"
//! n = 64                 # circle nodes (circle, disk)
//! nr = 32                # radial cells (disk)
//! # nx, ny, lx, ly       # torus
//! # omega_measure = 3.14 # |Ω| for reduced runs
//!
//! [params]
//! diffusivity = 1.0
//! delta = 1.0
//! [params.potential]
//! kind = "logarithmic"   # "polynomial" | "regularized" (needs kappa)
//! theta = 1.0
//! theta0 = 2.0
//! [params.exchange]
//! kind = "equilibrium"   # "reaction" | "cutoff_reaction"
//! [params.exchange.coefficient]
//! form = "constant"      # or "power" with c, alpha
//! a0 = 1.0
//!
//! [stepper]              # see StepperConfig
//! dt = 0.01
//!
//! [initial]
//! kind = "random"        # "constant" | "cosine" | "file"
//! seed = 1
//! amplitude = 0.01
//!
//! [schedule]
//! t_final = 1.0
//!
//! [experiment]
//! kind = "run"           # "absorbing" | "large_d" | "kappa" | "converge_eq" | "steady" | "continuity"
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every violation (unknown key, wrong type, invalid value) is collected and
//! reported together, with the line of the offending key when known.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::bulk::DiskGrid;
use crate::error::{ConfigIssue, Error, Result};
use crate::model::{ACoefficient, ExchangeLaw, Params};
use crate::potential::PotentialSpec;
use crate::stepper::{Schedule, StepperConfig};
use crate::surface::SurfaceGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Circle { n: usize },
    Torus { nx: usize, ny: usize, lx: f64, ly: f64 },
    Disk { nr: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    #[serde(flatten)]
    pub shape: Geometry,
    /// `|Ω|` used by reduced runs; defaults to `π` for circles and `lx·ly`
    /// for tori.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_measure: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialName {
    Logarithmic,
    Polynomial,
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub kind: PotentialName,
    pub theta: f64,
    pub theta0: f64,
    pub r0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExchangeConfig {
    Equilibrium { coefficient: ACoefficient },
    Reaction { b1: f64, b2: f64 },
    CutoffReaction {
        b1: f64,
        b2: f64,
        /// Defaults to `2M/|Ω|` with `M` the initial total mass.
        #[serde(skip_serializing_if = "Option::is_none")]
        h0: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsConfig {
    pub diffusivity: f64,
    pub delta: f64,
    pub potential: PotentialConfig,
    pub exchange: ExchangeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Constant,
    Random,
    Cosine,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConfig {
    pub kind: InitialKind,
    /// Mean of `φ₀`.
    pub phi: f64,
    /// Mean of `v₀`.
    pub v: f64,
    /// Mean of `u₀`.
    pub u: f64,
    /// Sup norm of the `φ₀` fluctuation (random, cosine).
    pub amplitude: f64,
    /// Sup norm of the mean-zero `v₀` fluctuation (random).
    pub v_amplitude: f64,
    /// Amplitude `a` of the mean-preserving bulk profile `a(r² − ½)`.
    pub u_perturbation: f64,
    /// Angular / x wave number (cosine).
    pub mode: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            kind: InitialKind::Constant,
            phi: 0.0,
            v: 0.5,
            u: 0.0,
            amplitude: 0.0,
            v_amplitude: 0.0,
            u_perturbation: 0.0,
            mode: 1,
            seed: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Run,
    Absorbing,
    LargeD,
    Kappa,
    ConvergeEq,
    Steady,
    /// Distance growth of perturbed runs; `amplitudes` are the perturbation
    /// sizes.
    Continuity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Full,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub system: SystemKind,
    pub d_list: Vec<f64>,
    pub kappa_list: Vec<f64>,
    /// Scale factors applied to the initial fluctuations (absorbing sweep).
    pub amplitudes: Vec<f64>,
    /// Start of the window over which the absorbing-set norm is taken.
    pub t_star: f64,
    pub steady_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: String,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub params: ParamsConfig,
    pub stepper: StepperConfig,
    pub initial: InitialConfig,
    pub schedule: Schedule,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(text, &[])
}

/// As [`parse_config`], with `key=value` overrides (dotted keys, TOML values;
/// bare words are taken as strings) applied before validation.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| {
        Error::Config(vec![ConfigIssue {
            key: String::new(),
            line: e.span().map(|s| line_of(text, s.start)),
            message: format!("syntax error: {}", e.message()),
        }])
    })?;
    let lines = key_lines(text);
    let mut issues = Vec::new();
    for o in overrides {
        if let Err(msg) = apply_override(&mut table, o) {
            issues.push(ConfigIssue {
                key: o.clone(),
                line: None,
                message: msg,
            });
        }
    }
    let mut ctx = Ctx { issues, lines };
    let cfg = read_config(&mut ctx, &table);
    if ctx.issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(ctx.issues))
    }
}

impl RunConfig {
    /// TOML text that [`parse_config`] maps back to `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    pub fn surface_grid(&self) -> Result<Arc<SurfaceGrid>> {
        match self.geometry.shape {
            Geometry::Circle { n } | Geometry::Disk { n, .. } => SurfaceGrid::circle(n),
            Geometry::Torus { nx, ny, lx, ly } => SurfaceGrid::torus(nx, ny, lx, ly),
        }
    }

    pub fn disk_grid(&self) -> Result<Arc<DiskGrid>> {
        match self.geometry.shape {
            Geometry::Disk { nr, .. } => DiskGrid::new(nr, self.surface_grid()?),
            _ => Err(Error::Precondition("the full system needs disk geometry".into())),
        }
    }

    /// `|Ω|` for reduced runs.
    pub fn omega_measure(&self) -> f64 {
        self.geometry.omega_measure.unwrap_or(match self.geometry.shape {
            Geometry::Circle { .. } | Geometry::Disk { .. } => PI,
            Geometry::Torus { lx, ly, .. } => lx * ly,
        })
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        let p = &self.params.potential;
        let base = match p.kind {
            PotentialName::Polynomial => return Ok(PotentialSpec::polynomial()),
            _ => PotentialSpec::logarithmic(p.theta, p.theta0)?.with_r0(p.r0)?,
        };
        match p.kind {
            PotentialName::Regularized => base.into_regularized(p.kappa.unwrap_or(1e-3)),
            _ => Ok(base),
        }
    }

    /// Model parameters; `total_mass` resolves the default cutoff level.
    pub fn model_params(&self, total_mass: f64) -> Result<Params> {
        let exchange = match self.params.exchange {
            ExchangeConfig::Equilibrium { coefficient } => ExchangeLaw::Equilibrium { coefficient },
            ExchangeConfig::Reaction { b1, b2 } => ExchangeLaw::Reaction { b1, b2 },
            ExchangeConfig::CutoffReaction { b1, b2, h0 } => ExchangeLaw::CutoffReaction {
                b1,
                b2,
                h0: h0.unwrap_or(2.0 * total_mass / self.omega_measure()),
            },
        };
        Params::new(
            self.params.diffusivity,
            self.params.delta,
            self.potential()?,
            exchange,
        )
    }
}

/// Default configuration for a given geometry, used by tests and docs.
pub fn default_config(shape: Geometry) -> RunConfig {
    let system = match shape {
        Geometry::Disk { .. } => SystemKind::Full,
        _ => SystemKind::Reduced,
    };
    RunConfig {
        geometry: GeometryConfig {
            shape,
            omega_measure: None,
        },
        params: ParamsConfig {
            diffusivity: 1.0,
            delta: 1.0,
            potential: PotentialConfig {
                kind: PotentialName::Logarithmic,
                theta: crate::potential::DEFAULT_THETA,
                theta0: crate::potential::DEFAULT_THETA0,
                r0: crate::potential::DEFAULT_R0,
                kappa: None,
            },
            exchange: ExchangeConfig::Equilibrium {
                coefficient: ACoefficient::Constant { a0: 1.0 },
            },
        },
        stepper: StepperConfig::default(),
        initial: InitialConfig::default(),
        schedule: Schedule::default(),
        experiment: ExperimentConfig {
            kind: ExperimentKind::Run,
            system,
            d_list: Vec::new(),
            kappa_list: Vec::new(),
            amplitudes: Vec::new(),
            t_star: 0.0,
            steady_tol: 1e-8,
        },
        output: OutputConfig { dir: "out".into() },
    }
}

// ---------------------------------------------------------------------------
// validation machinery

struct Ctx {
    issues: Vec<ConfigIssue>,
    lines: HashMap<String, usize>,
}

impl Ctx {
    fn issue(&mut self, key: &str, message: impl Into<String>) {
        let line = self.lines.get(key).copied().or_else(|| {
            // fall back to the enclosing table
            let mut k = key;
            while let Some((head, _)) = k.rsplit_once('.') {
                if let Some(&l) = self.lines.get(head) {
                    return Some(l);
                }
                k = head;
            }
            None
        });
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            line,
            message: message.into(),
        });
    }
}

struct Section<'a> {
    path: String,
    table: Option<&'a Table>,
    used: BTreeSet<&'static str>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl<'a> Section<'a> {
    fn root(table: &'a Table) -> Self {
        Self {
            path: String::new(),
            table: Some(table),
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn key(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn sub(&mut self, ctx: &mut Ctx, key: &'static str) -> Section<'a> {
        let path = self.key(key);
        let table = match self.raw(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                ctx.issue(&path, "expected a table");
                None
            }
        };
        Section {
            path,
            table,
            used: BTreeSet::new(),
        }
    }

    fn opt_f64(&mut self, ctx: &mut Ctx, key: &'static str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                ctx.issue(&self.key(key), "expected a number");
                None
            }
        }
    }

    fn f64(&mut self, ctx: &mut Ctx, key: &'static str, default: f64) -> f64 {
        self.opt_f64(ctx, key).unwrap_or(default)
    }

    fn req_f64(&mut self, ctx: &mut Ctx, key: &'static str) -> f64 {
        match self.opt_f64(ctx, key) {
            Some(x) => x,
            None => {
                if self.table.is_some_and(|t| !t.contains_key(key)) || self.table.is_none() {
                    ctx.issue(&self.key(key), "required key is missing");
                }
                f64::NAN
            }
        }
    }

    fn opt_u64(&mut self, ctx: &mut Ctx, key: &'static str) -> Option<u64> {
        match self.raw(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                ctx.issue(&self.key(key), "expected a nonnegative integer");
                None
            }
        }
    }

    fn u64(&mut self, ctx: &mut Ctx, key: &'static str, default: u64) -> u64 {
        self.opt_u64(ctx, key).unwrap_or(default)
    }

    fn req_usize(&mut self, ctx: &mut Ctx, key: &'static str) -> usize {
        if self.table.is_none_or(|t| !t.contains_key(key)) {
            ctx.issue(&self.key(key), "required key is missing");
            self.used.insert(key);
            return 0;
        }
        self.opt_u64(ctx, key).unwrap_or(0) as usize
    }

    fn bool(&mut self, ctx: &mut Ctx, key: &'static str, default: bool) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                ctx.issue(&self.key(key), "expected a boolean");
                default
            }
        }
    }

    fn opt_str(&mut self, ctx: &mut Ctx, key: &'static str) -> Option<&'a str> {
        match self.raw(key)? {
            Value::String(s) => Some(s.as_str()),
            _ => {
                ctx.issue(&self.key(key), "expected a string");
                None
            }
        }
    }

    fn choice<T: Copy>(
        &mut self,
        ctx: &mut Ctx,
        key: &'static str,
        options: &[(&str, T)],
        default: Option<T>,
    ) -> Option<T> {
        let present = self.table.is_some_and(|t| t.contains_key(key));
        match self.opt_str(ctx, key) {
            Some(s) => match options.iter().find(|(name, _)| *name == s) {
                Some((_, v)) => Some(*v),
                None => {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    ctx.issue(&self.key(key), format!("unknown value {s:?}; expected one of {names:?}"));
                    None
                }
            },
            None if !present && default.is_none() => {
                ctx.issue(&self.key(key), "required key is missing");
                None
            }
            None => default,
        }
    }

    fn f64_list(&mut self, ctx: &mut Ctx, key: &'static str) -> Vec<f64> {
        match self.raw(key) {
            None => Vec::new(),
            Some(Value::Array(a)) => {
                let mut out = Vec::with_capacity(a.len());
                for v in a {
                    match v {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(i) => out.push(*i as f64),
                        _ => {
                            ctx.issue(&self.key(key), "expected an array of numbers");
                            return Vec::new();
                        }
                    }
                }
                out
            }
            Some(_) => {
                ctx.issue(&self.key(key), "expected an array of numbers");
                Vec::new()
            }
        }
    }

    /// Report keys that were never read.
    fn finish(self, ctx: &mut Ctx) {
        if let Some(t) = self.table {
            for k in t.keys() {
                if !self.used.contains(k.as_str()) {
                    ctx.issue(&join(&self.path, k), "unknown key");
                }
            }
        }
    }
}

fn positive(ctx: &mut Ctx, key: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) && !x.is_nan() {
        ctx.issue(key, format!("must be positive and finite, got {x}"));
    }
}

fn read_geometry(ctx: &mut Ctx, s: &mut Section) -> GeometryConfig {
    let kind = s.choice(
        ctx,
        "kind",
        &[("circle", 0u8), ("torus", 1), ("disk", 2)],
        None,
    );
    let node_count = |ctx: &mut Ctx, s: &mut Section, key: &'static str| {
        let n = s.req_usize(ctx, key);
        if n != 0 && (n < crate::surface::MIN_NODES || n % 2 != 0) {
            ctx.issue(
                &s.key(key),
                format!("must be even and at least {}, got {n}", crate::surface::MIN_NODES),
            );
        }
        n
    };
    let shape = match kind {
        Some(0) => Geometry::Circle {
            n: node_count(ctx, s, "n"),
        },
        Some(1) => {
            let nx = node_count(ctx, s, "nx");
            let ny = node_count(ctx, s, "ny");
            let lx = s.req_f64(ctx, "lx");
            let ly = s.req_f64(ctx, "ly");
            positive(ctx, &s.key("lx"), lx);
            positive(ctx, &s.key("ly"), ly);
            Geometry::Torus { nx, ny, lx, ly }
        }
        Some(_) => {
            let n = node_count(ctx, s, "n");
            let nr = s.req_usize(ctx, "nr");
            if nr != 0 && nr < crate::bulk::MIN_RADIAL_CELLS {
                ctx.issue(
                    &s.key("nr"),
                    format!("must be at least {}, got {nr}", crate::bulk::MIN_RADIAL_CELLS),
                );
            }
            Geometry::Disk { nr, n }
        }
        None => Geometry::Circle { n: 0 },
    };
    let omega_measure = s.opt_f64(ctx, "omega_measure");
    if let Some(o) = omega_measure {
        positive(ctx, &s.key("omega_measure"), o);
    }
    GeometryConfig {
        shape,
        omega_measure,
    }
}

fn read_potential(ctx: &mut Ctx, s: &mut Section) -> PotentialConfig {
    let kind = s
        .choice(
            ctx,
            "kind",
            &[
                ("logarithmic", PotentialName::Logarithmic),
                ("polynomial", PotentialName::Polynomial),
                ("regularized", PotentialName::Regularized),
            ],
            Some(PotentialName::Logarithmic),
        )
        .unwrap_or(PotentialName::Logarithmic);
    let theta = s.f64(ctx, "theta", crate::potential::DEFAULT_THETA);
    let theta0 = s.f64(ctx, "theta0", crate::potential::DEFAULT_THETA0);
    let r0 = s.f64(ctx, "r0", crate::potential::DEFAULT_R0);
    let kappa = s.opt_f64(ctx, "kappa");
    if kind != PotentialName::Polynomial {
        if !(theta > 0.0 && theta < theta0) {
            ctx.issue(
                &s.key("theta"),
                format!("need 0 < theta < theta0, got theta = {theta}, theta0 = {theta0}"),
            );
        }
        if !(r0 > 0.0 && r0 < 1.0) {
            ctx.issue(&s.key("r0"), format!("must lie in (0, 1), got {r0}"));
        }
    }
    match (kind, kappa) {
        (PotentialName::Regularized, None) => ctx.issue(&s.key("kappa"), "required for the regularized potential"),
        (PotentialName::Regularized, Some(k)) if !(k > 0.0 && k < r0) => {
            ctx.issue(&s.key("kappa"), format!("must lie in (0, r0), got {k}"))
        }
        (PotentialName::Regularized, _) => {}
        (_, Some(_)) => ctx.issue(&s.key("kappa"), "only meaningful for the regularized potential"),
        _ => {}
    }
    PotentialConfig {
        kind,
        theta,
        theta0,
        r0,
        kappa,
    }
}

fn read_exchange(ctx: &mut Ctx, s: &mut Section) -> ExchangeConfig {
    let kind = s.choice(
        ctx,
        "kind",
        &[("equilibrium", 0u8), ("reaction", 1), ("cutoff_reaction", 2)],
        None,
    );
    match kind {
        Some(0) | None => {
            let mut c = s.sub(ctx, "coefficient");
            let form = c.choice(ctx, "form", &[("constant", false), ("power", true)], Some(false));
            let coefficient = if form == Some(true) {
                let cc = c.f64(ctx, "c", 1.0);
                let alpha = c.req_f64(ctx, "alpha");
                if !(cc >= 0.0) {
                    ctx.issue(&c.key("c"), format!("must be nonnegative, got {cc}"));
                }
                if !(alpha > 0.0) && !alpha.is_nan() {
                    ctx.issue(&c.key("alpha"), format!("must be positive, got {alpha}"));
                }
                ACoefficient::Power { c: cc, alpha }
            } else {
                let a0 = c.f64(ctx, "a0", 1.0);
                if !(a0 >= 0.0) {
                    ctx.issue(&c.key("a0"), format!("must be nonnegative, got {a0}"));
                }
                ACoefficient::Constant { a0 }
            };
            c.finish(ctx);
            ExchangeConfig::Equilibrium { coefficient }
        }
        Some(k) => {
            let b1 = s.req_f64(ctx, "b1");
            let b2 = s.req_f64(ctx, "b2");
            positive(ctx, &s.key("b1"), b1);
            positive(ctx, &s.key("b2"), b2);
            if k == 1 {
                ExchangeConfig::Reaction { b1, b2 }
            } else {
                let h0 = s.opt_f64(ctx, "h0");
                if let Some(h) = h0 {
                    positive(ctx, &s.key("h0"), h);
                }
                ExchangeConfig::CutoffReaction { b1, b2, h0 }
            }
        }
    }
}

fn read_params(ctx: &mut Ctx, s: &mut Section) -> ParamsConfig {
    let diffusivity = s.f64(ctx, "diffusivity", 1.0);
    positive(ctx, &s.key("diffusivity"), diffusivity);
    let delta = s.f64(ctx, "delta", 1.0);
    positive(ctx, &s.key("delta"), delta);
    let mut p = s.sub(ctx, "potential");
    let potential = read_potential(ctx, &mut p);
    p.finish(ctx);
    let mut e = s.sub(ctx, "exchange");
    let exchange = if e.table.is_none() {
        ExchangeConfig::Equilibrium {
            coefficient: ACoefficient::Constant { a0: 1.0 },
        }
    } else {
        read_exchange(ctx, &mut e)
    };
    e.finish(ctx);
    ParamsConfig {
        diffusivity,
        delta,
        potential,
        exchange,
    }
}

fn read_stepper(ctx: &mut Ctx, s: &mut Section) -> StepperConfig {
    let d = StepperConfig::default();
    let cfg = StepperConfig {
        dt: s.f64(ctx, "dt", d.dt),
        newton_tol: s.f64(ctx, "newton_tol", d.newton_tol),
        newton_max_iters: s.u64(ctx, "newton_max_iters", d.newton_max_iters as u64) as usize,
        dt_min: s.opt_f64(ctx, "dt_min"),
        damping: s.f64(ctx, "damping", d.damping),
        dealias: s.bool(ctx, "dealias", d.dealias),
        kappa_fallback: s.f64(ctx, "kappa_fallback", d.kappa_fallback),
    };
    if let Err(Error::Precondition(msg)) = cfg.validate() {
        let key = msg.split_whitespace().next().unwrap_or("dt").to_string();
        ctx.issue(&s.key(&key), msg);
    }
    cfg
}

fn read_initial(ctx: &mut Ctx, s: &mut Section) -> InitialConfig {
    let d = InitialConfig::default();
    let kind = s
        .choice(
            ctx,
            "kind",
            &[
                ("constant", InitialKind::Constant),
                ("random", InitialKind::Random),
                ("cosine", InitialKind::Cosine),
                ("file", InitialKind::File),
            ],
            Some(InitialKind::Constant),
        )
        .unwrap_or(InitialKind::Constant);
    let cfg = InitialConfig {
        kind,
        phi: s.f64(ctx, "phi", d.phi),
        v: s.f64(ctx, "v", d.v),
        u: s.f64(ctx, "u", d.u),
        amplitude: s.f64(ctx, "amplitude", d.amplitude),
        v_amplitude: s.f64(ctx, "v_amplitude", d.v_amplitude),
        u_perturbation: s.f64(ctx, "u_perturbation", d.u_perturbation),
        mode: s.u64(ctx, "mode", d.mode as u64) as usize,
        seed: s.opt_u64(ctx, "seed"),
        path: s.opt_str(ctx, "path").map(str::to_string),
    };
    if kind == InitialKind::Random && cfg.seed.is_none() {
        ctx.issue(&s.key("seed"), "random initial data requires a seed");
    }
    if kind == InitialKind::File && cfg.path.is_none() {
        ctx.issue(&s.key("path"), "file initial data requires a path");
    }
    if !(cfg.phi.abs() < 1.0) {
        ctx.issue(&s.key("phi"), format!("mean of phi must lie in (-1, 1), got {}", cfg.phi));
    }
    if matches!(kind, InitialKind::Random | InitialKind::Cosine)
        && !(cfg.phi.abs() + cfg.amplitude.abs() < 1.0)
    {
        ctx.issue(
            &s.key("amplitude"),
            "|phi| + amplitude must stay below 1",
        );
    }
    cfg
}

fn read_schedule(ctx: &mut Ctx, s: &mut Section) -> Schedule {
    let d = Schedule::default();
    let cfg = Schedule {
        t_final: s.f64(ctx, "t_final", d.t_final),
        sample_stride: s.u64(ctx, "sample_stride", d.sample_stride),
        checkpoint_stride: s.u64(ctx, "checkpoint_stride", d.checkpoint_stride),
    };
    if !(cfg.t_final >= 0.0 && cfg.t_final.is_finite()) {
        ctx.issue(&s.key("t_final"), format!("must be nonnegative, got {}", cfg.t_final));
    }
    if cfg.sample_stride == 0 {
        ctx.issue(&s.key("sample_stride"), "must be at least 1");
    }
    cfg
}

fn read_experiment(ctx: &mut Ctx, s: &mut Section, geometry: &GeometryConfig) -> ExperimentConfig {
    let kind = s
        .choice(
            ctx,
            "kind",
            &[
                ("run", ExperimentKind::Run),
                ("absorbing", ExperimentKind::Absorbing),
                ("large_d", ExperimentKind::LargeD),
                ("kappa", ExperimentKind::Kappa),
                ("converge_eq", ExperimentKind::ConvergeEq),
                ("steady", ExperimentKind::Steady),
                ("continuity", ExperimentKind::Continuity),
            ],
            Some(ExperimentKind::Run),
        )
        .unwrap_or(ExperimentKind::Run);
    let default_system = match geometry.shape {
        Geometry::Disk { .. } => SystemKind::Full,
        _ => SystemKind::Reduced,
    };
    let system = s
        .choice(
            ctx,
            "system",
            &[("full", SystemKind::Full), ("reduced", SystemKind::Reduced)],
            Some(default_system),
        )
        .unwrap_or(default_system);
    if system == SystemKind::Full && !matches!(geometry.shape, Geometry::Disk { .. }) {
        ctx.issue(&s.key("system"), "the full system requires disk geometry");
    }
    let cfg = ExperimentConfig {
        kind,
        system,
        d_list: s.f64_list(ctx, "d_list"),
        kappa_list: s.f64_list(ctx, "kappa_list"),
        amplitudes: s.f64_list(ctx, "amplitudes"),
        t_star: s.f64(ctx, "t_star", 0.0),
        steady_tol: s.f64(ctx, "steady_tol", 1e-8),
    };
    for (key, list) in [("d_list", &cfg.d_list), ("kappa_list", &cfg.kappa_list), ("amplitudes", &cfg.amplitudes)] {
        if list.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            ctx.issue(&s.key(key), "entries must be positive");
        }
    }
    positive(ctx, &s.key("steady_tol"), cfg.steady_tol);
    cfg
}

fn read_config(ctx: &mut Ctx, table: &Table) -> RunConfig {
    let mut root = Section::root(table);

    let mut g = root.sub(ctx, "geometry");
    if g.table.is_none() {
        ctx.issue("geometry", "required section is missing");
    }
    let geometry = read_geometry(ctx, &mut g);
    g.finish(ctx);

    let mut p = root.sub(ctx, "params");
    let params = read_params(ctx, &mut p);
    p.finish(ctx);

    let mut st = root.sub(ctx, "stepper");
    let stepper = read_stepper(ctx, &mut st);
    st.finish(ctx);

    let mut i = root.sub(ctx, "initial");
    let initial = read_initial(ctx, &mut i);
    i.finish(ctx);

    let mut sc = root.sub(ctx, "schedule");
    let schedule = read_schedule(ctx, &mut sc);
    sc.finish(ctx);

    let mut e = root.sub(ctx, "experiment");
    let experiment = read_experiment(ctx, &mut e, &geometry);
    e.finish(ctx);

    let mut o = root.sub(ctx, "output");
    let dir = o.opt_str(ctx, "dir").unwrap_or("out").to_string();
    o.finish(ctx);

    root.finish(ctx);
    RunConfig {
        geometry,
        params,
        stepper,
        initial,
        schedule,
        experiment,
        output: OutputConfig { dir },
    }
}

// ---------------------------------------------------------------------------
// overrides and line lookup

fn apply_override(table: &mut Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| "override must have the form KEY=VALUE".to_string())?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key {key:?}"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(format!("{part:?} is not a table")),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Map every dotted key path to the line where it is defined.
fn key_lines(text: &str) -> HashMap<String, usize> {
    use toml::de::{DeTable, DeValue};
    fn walk(text: &str, prefix: &str, table: &DeTable<'_>, out: &mut HashMap<String, usize>) {
        for (k, v) in table.iter() {
            let path = join(prefix, k.get_ref());
            out.entry(path.clone())
                .or_insert_with(|| line_of(text, k.span().start));
            if let DeValue::Table(t) = v.get_ref() {
                walk(text, &path, t, out);
            }
        }
    }
    let mut out = HashMap::new();
    if let Ok(doc) = DeTable::parse(text) {
        walk(text, "", doc.get_ref(), &mut out);
    }
    out
}
