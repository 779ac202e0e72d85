//! Run configuration: TOML parsing with every problem reported at once
//! (unknown keys get a nearest-key suggestion), defaults filled in, and a
//! fully-resolved echo for reports.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{build_grid, GridConfig};
use crate::solver::{
    BoundaryData, Forcing, MarchParams, ObstacleProblemSpec, PenaltyFunction, PenaltyVariant,
    ProjectedParams, SolverKind,
};

#[derive(Clone, Debug, Serialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub cfl: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
    pub relax_omega: f64,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let march = MarchParams::default();
        let proj = ProjectedParams::default();
        Self {
            kind: SolverKind::Penalized,
            cfl: march.cfl,
            max_newton: march.max_newton,
            newton_tol: march.newton_tol,
            relax_omega: proj.relax_omega,
            sweep_tol: proj.sweep_tol,
            max_sweeps: proj.max_sweeps,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub grid: GridConfig,
    pub penalty: PenaltyFunction,
    pub solver: SolverConfig,
    /// Boundary preset, e.g. `zero`, `half_space(-1)`, `polynomial(-0.5,0.25)`,
    /// `thick_obstacle`, `thin_obstacle`, `file:<path>`.
    pub boundary_preset: String,
    pub forcing_constant: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            grid: GridConfig::unit(1, 64, 32, 64),
            penalty: PenaltyFunction { eps: 1e-3, variant: PenaltyVariant::PiecewiseLinear },
            solver: SolverConfig::default(),
            boundary_preset: "zero".to_string(),
            forcing_constant: 1.0,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "threads",
    "grid.n",
    "grid.t_lo",
    "grid.t_hi",
    "grid.x_extent",
    "grid.v_extent",
    "grid.nt",
    "grid.nx",
    "grid.nv",
    "penalty.eps",
    "penalty.variant",
    "solver.kind",
    "solver.cfl",
    "solver.max_newton",
    "solver.newton_tol",
    "solver.relax_omega",
    "solver.sweep_tol",
    "solver.max_sweeps",
    "boundary.preset",
    "forcing.constant",
];

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn nearest_key(key: &str) -> &'static str {
    KNOWN_KEYS
        .iter()
        .min_by_key(|k| edit_distance(key, k))
        .copied()
        .unwrap_or("")
}

struct Walker<'a> {
    doc: &'a toml::Value,
    errors: Vec<String>,
}

impl<'a> Walker<'a> {
    fn check_unknown(&mut self) {
        let Some(table) = self.doc.as_table() else {
            self.errors.push("configuration root must be a table".to_string());
            return;
        };
        for (key, value) in table {
            match value {
                toml::Value::Table(inner) => {
                    for sub in inner.keys() {
                        let dotted = format!("{key}.{sub}");
                        if !KNOWN_KEYS.contains(&dotted.as_str()) {
                            self.errors.push(format!(
                                "unknown key `{dotted}` (nearest valid key: `{}`)",
                                nearest_key(&dotted)
                            ));
                        }
                    }
                }
                _ => {
                    if !KNOWN_KEYS.contains(&key.as_str()) {
                        self.errors.push(format!(
                            "unknown key `{key}` (nearest valid key: `{}`)",
                            nearest_key(key)
                        ));
                    }
                }
            }
        }
    }

    fn lookup(&self, dotted: &str) -> Option<&'a toml::Value> {
        let mut node = self.doc;
        for part in dotted.split('.') {
            node = node.as_table()?.get(part)?;
        }
        Some(node)
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        match self.lookup(key) {
            None => default,
            Some(toml::Value::Float(f)) => *f,
            Some(toml::Value::Integer(i)) => *i as f64,
            Some(other) => {
                self.errors.push(format!("key `{key}` must be a number, got {other}"));
                default
            }
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        match self.lookup(key) {
            None => default,
            Some(toml::Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(other) => {
                self.errors.push(format!("key `{key}` must be a nonnegative integer, got {other}"));
                default
            }
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> u64 {
        match self.lookup(key) {
            None => default,
            Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(other) => {
                self.errors.push(format!("key `{key}` must be a nonnegative integer, got {other}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        match self.lookup(key) {
            None => default.to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => {
                self.errors.push(format!("key `{key}` must be a string, got {other}"));
                default.to_string()
            }
        }
    }
}

/// Parses and validates a configuration file, reporting every problem found
/// rather than stopping at the first.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let doc: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(vec![format!("TOML parse error: {e}")]))?;
    let defaults = RunConfig::default();
    let mut w = Walker { doc: &doc, errors: Vec::new() };
    w.check_unknown();

    let grid = GridConfig {
        n: w.usize("grid.n", defaults.grid.n),
        t_lo: w.f64("grid.t_lo", defaults.grid.t_lo),
        t_hi: w.f64("grid.t_hi", defaults.grid.t_hi),
        x_extent: w.f64("grid.x_extent", defaults.grid.x_extent),
        v_extent: w.f64("grid.v_extent", defaults.grid.v_extent),
        nt: w.usize("grid.nt", defaults.grid.nt),
        nx: w.usize("grid.nx", defaults.grid.nx),
        nv: w.usize("grid.nv", defaults.grid.nv),
    };
    let variant_raw = w.string("penalty.variant", "piecewise_linear");
    let variant = match variant_raw.as_str() {
        "piecewise_linear" => PenaltyVariant::PiecewiseLinear,
        "cubic_bridge" => PenaltyVariant::CubicBridge,
        other => {
            w.errors.push(format!(
                "penalty.variant must be `piecewise_linear` or `cubic_bridge`, got `{other}`"
            ));
            PenaltyVariant::PiecewiseLinear
        }
    };
    let kind_raw = w.string("solver.kind", "penalized");
    let kind = match kind_raw.as_str() {
        "penalized" => SolverKind::Penalized,
        "projected" => SolverKind::Projected,
        other => {
            w.errors
                .push(format!("solver.kind must be `penalized` or `projected`, got `{other}`"));
            SolverKind::Penalized
        }
    };
    let config = RunConfig {
        seed: w.u64("seed", defaults.seed),
        threads: w.lookup("threads").is_some().then(|| w.usize("threads", 1)),
        grid,
        penalty: PenaltyFunction { eps: w.f64("penalty.eps", defaults.penalty.eps), variant },
        solver: SolverConfig {
            kind,
            cfl: w.f64("solver.cfl", defaults.solver.cfl),
            max_newton: w.usize("solver.max_newton", defaults.solver.max_newton),
            newton_tol: w.f64("solver.newton_tol", defaults.solver.newton_tol),
            relax_omega: w.f64("solver.relax_omega", defaults.solver.relax_omega),
            sweep_tol: w.f64("solver.sweep_tol", defaults.solver.sweep_tol),
            max_sweeps: w.usize("solver.max_sweeps", defaults.solver.max_sweeps),
        },
        boundary_preset: w.string("boundary.preset", &defaults.boundary_preset),
        forcing_constant: w.f64("forcing.constant", defaults.forcing_constant),
    };
    if let Err(e) = parse_boundary_preset(&config.boundary_preset) {
        w.errors.push(e.to_string());
    }
    if !w.errors.is_empty() {
        return Err(Error::Config(w.errors));
    }
    Ok(config)
}

/// Parsed form of a `boundary.preset` string.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryPreset {
    Zero,
    HalfSpace { e: f64 },
    Polynomial { m: f64, a: f64 },
    ThickObstacle { gamma: f64 },
    ThinObstacle { gamma: f64 },
    File(PathBuf),
}

pub fn parse_boundary_preset(text: &str) -> Result<BoundaryPreset> {
    let trimmed = text.trim();
    let args = |s: &str| -> Result<Vec<f64>> {
        let open = s.find('(').unwrap();
        let inner = s[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| Error::usage(format!("unbalanced parentheses in preset `{s}`")))?;
        inner
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::usage(format!("bad numeric argument in preset `{s}`")))
            })
            .collect()
    };
    match trimmed {
        "zero" => Ok(BoundaryPreset::Zero),
        "half_space" => Ok(BoundaryPreset::HalfSpace { e: 1.0 }),
        "polynomial" => Ok(BoundaryPreset::Polynomial { m: -0.5, a: 0.25 }),
        "thick_obstacle" => Ok(BoundaryPreset::ThickObstacle { gamma: 0.25 }),
        "thin_obstacle" => Ok(BoundaryPreset::ThinObstacle { gamma: 0.2 }),
        other => {
            if let Some(path) = other.strip_prefix("file:") {
                return Ok(BoundaryPreset::File(PathBuf::from(path)));
            }
            if other.starts_with("half_space(") {
                let a = args(other)?;
                if a.len() != 1 || (a[0] != 1.0 && a[0] != -1.0) {
                    return Err(Error::usage("half_space takes one argument, e = 1 or -1"));
                }
                return Ok(BoundaryPreset::HalfSpace { e: a[0] });
            }
            if other.starts_with("polynomial(") {
                let a = args(other)?;
                if a.len() != 2 {
                    return Err(Error::usage("polynomial takes two arguments (m, a)"));
                }
                return Ok(BoundaryPreset::Polynomial { m: a[0], a: a[1] });
            }
            if other.starts_with("thick_obstacle(") {
                let a = args(other)?;
                if a.len() != 1 {
                    return Err(Error::usage("thick_obstacle takes one argument (gamma)"));
                }
                return Ok(BoundaryPreset::ThickObstacle { gamma: a[0] });
            }
            if other.starts_with("thin_obstacle(") {
                let a = args(other)?;
                if a.len() != 1 {
                    return Err(Error::usage("thin_obstacle takes one argument (gamma)"));
                }
                return Ok(BoundaryPreset::ThinObstacle { gamma: a[0] });
            }
            Err(Error::usage(format!(
                "unknown boundary preset `{other}`; expected zero, half_space(e), polynomial(m,a), \
                 thick_obstacle, thin_obstacle or file:<path>"
            )))
        }
    }
}

impl RunConfig {
    pub fn boundary_data(&self) -> Result<BoundaryData> {
        Ok(match parse_boundary_preset(&self.boundary_preset)? {
            BoundaryPreset::Zero => BoundaryData::Zero,
            BoundaryPreset::HalfSpace { e } => BoundaryData::HalfSpace { e },
            BoundaryPreset::Polynomial { m, a } => BoundaryData::Polynomial { m, a },
            BoundaryPreset::ThickObstacle { gamma } => BoundaryData::ThickSlab { gamma },
            BoundaryPreset::ThinObstacle { gamma } => BoundaryData::ThinParabola { gamma },
            BoundaryPreset::File(path) => BoundaryData::FromField(crate::grid::load_field(&path)?),
        })
    }

    pub fn to_problem_spec(&self) -> Result<ObstacleProblemSpec> {
        let grid = build_grid(&self.grid)?;
        let spec = ObstacleProblemSpec {
            grid,
            forcing: Forcing::Constant(self.forcing_constant),
            boundary: self.boundary_data()?,
            penalty: self.penalty,
            march: MarchParams {
                cfl: self.solver.cfl,
                max_newton: self.solver.max_newton,
                newton_tol: self.solver.newton_tol,
            },
            projected: ProjectedParams {
                relax_omega: self.solver.relax_omega,
                sweep_tol: self.solver.sweep_tol,
                max_sweeps: self.solver.max_sweeps,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The resolved configuration (defaults included) for report echoes.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
