//! Umbrella CLI: solve the kinetic obstacle problem and run every diagnostic
//! against stored fields.
//!
//! Exit codes: 0 on success, 1 on usage/configuration errors, 2 when an
//! assertion-style check fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use kobs::blowup::{classify_point, DEFAULT_REFERENCE_NODES};
use kobs::config::{parse_config, RunConfig};
use kobs::estimators::{
    growth_report, lipschitz_report, nondegeneracy_constant, parabolic_nondegeneracy,
    porosity_report,
};
use kobs::free_boundary::{classify, extract_graph, nearest_gamma, thickness_delta};
use kobs::geometry::{KineticCylinder, KineticPoint};
use kobs::grid::{load_field, save_field, Field};
use kobs::report::Report;
use kobs::solver::{complementarity_report, solve};
use kobs::stopping::{
    lsmc_value, pde_cross_check, simulate, CrossCheckParams, CrossCheckQuery, Payoff, SimQuery,
};
use kobs::weiss::{monotonicity_scan, EnergyConfig};

#[derive(Parser)]
#[command(name = "kobs", version, about = "Obstacle problem laboratory for the Kolmogorov operator")]
struct Cli {
    /// Cap the rayon worker pool used by all modules.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// March the obstacle problem from a TOML configuration.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output field file (binary).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sample a closed-form preset onto a grid and store it as a field.
    Sample {
        /// Preset: zero, half_space(e), polynomial(m,a), thick_obstacle, thin_obstacle.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 32)]
        nt: usize,
        #[arg(long, default_value_t = 32)]
        nx: usize,
        #[arg(long, default_value_t = 32)]
        nv: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale-indexed energy scan at a point.
    Energy {
        #[arg(long)]
        field: PathBuf,
        /// Centre point as t,x,v.
        #[arg(long)]
        at: String,
        /// Comma-separated increasing radii.
        #[arg(long)]
        radii: String,
        #[arg(long)]
        report: PathBuf,
        /// Move the centre to the nearest detected free-boundary node first.
        #[arg(long)]
        snap_gamma: bool,
        #[arg(long, default_value_t = 0.0)]
        tol_zero: f64,
    },
    /// Blow-up rescaling diagnostics and point classification.
    Blowup {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        at: String,
        /// Comma-separated decreasing radii.
        #[arg(long)]
        radii: String,
        #[arg(long)]
        out: PathBuf,
        /// Move the centre to the nearest detected free-boundary node first.
        #[arg(long)]
        snap_gamma: bool,
        #[arg(long, default_value_t = 0.0)]
        tol_zero: f64,
    },
    /// Thickness of the contact set at a point and scale.
    Thickness {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        at: String,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 0.0)]
        tol_zero: f64,
    },
    /// Extract the free boundary as a graph over (t, x, v') columns.
    Graph {
        #[arg(long)]
        field: PathBuf,
        /// Velocity axis carrying the graph direction, e.g. `vn` or an index.
        #[arg(long, default_value = "vn")]
        axis: String,
        /// CSV output with columns t,x,vprime,f,mask.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tol_zero: f64,
    },
    /// Verification suites over a stored field.
    Verify {
        #[arg(long)]
        field: Option<PathBuf>,
        /// One of lipschitz, growth, nondegen, porosity, all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        tol_zero: f64,
        /// List the registered closed-form references and exit.
        #[arg(long)]
        list_references: bool,
    },
    /// Longstaff–Schwartz value of the stopping problem, optionally checked
    /// against a PDE solve.
    Price {
        /// Payoff preset: constant(c), vsquared, smooth_quad(alpha,a,b).
        #[arg(long)]
        payoff: String,
        /// Query point as t,x,v.
        #[arg(long)]
        at: String,
        #[arg(long, short = 'T')]
        horizon: f64,
        #[arg(long, default_value_t = 16_000)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.5e-3)]
        dt: f64,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        /// Solve the time-reversed obstacle problem from this config and
        /// compare; exits 2 when the values disagree beyond 3·SE + slack.
        #[arg(long)]
        compare_pde: Option<PathBuf>,
    },
}

fn parse_point(text: &str) -> anyhow::Result<KineticPoint> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow::anyhow!("point must be numeric t,x,v — got `{text}`"))?;
    if parts.len() != 3 {
        anyhow::bail!("point must have exactly three components t,x,v — got `{text}`");
    }
    Ok(KineticPoint::new1(parts[0], parts[1], parts[2]))
}

fn parse_radii(text: &str) -> anyhow::Result<Vec<f64>> {
    let radii: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow::anyhow!("radii must be comma-separated numbers — got `{text}`"))?;
    if radii.is_empty() {
        anyhow::bail!("need at least one radius");
    }
    Ok(radii)
}

fn parse_payoff(text: &str) -> anyhow::Result<Payoff> {
    let t = text.trim();
    if t == "vsquared" {
        return Ok(Payoff::SquareV);
    }
    let args = |s: &str, name: &str| -> anyhow::Result<Vec<f64>> {
        let inner = s
            .strip_prefix(name)
            .and_then(|rest| rest.strip_prefix('('))
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| anyhow::anyhow!("malformed payoff `{s}`"))?;
        inner
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("{e}")))
            .collect()
    };
    if t.starts_with("constant") {
        let a = args(t, "constant")?;
        anyhow::ensure!(a.len() == 1, "constant takes one argument");
        return Ok(Payoff::Constant(a[0]));
    }
    if t.starts_with("smooth_quad") {
        let a = args(t, "smooth_quad")?;
        anyhow::ensure!(a.len() == 3, "smooth_quad takes (alpha, a, b)");
        return Ok(Payoff::SmoothQuad { alpha: a[0], a: a[1], b: a[2] });
    }
    anyhow::bail!("unknown payoff `{t}`; expected constant(c), vsquared or smooth_quad(alpha,a,b)")
}

/// 0 = success, 1 = usage error, 2 = failed check.
fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    match cli.command {
        Command::Solve { config, out, report } => {
            let cfg = parse_config(&config)?;
            if let Some(threads) = cfg.threads {
                rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
            }
            let spec = cfg.to_problem_spec()?;
            let start = Instant::now();
            let result = solve(&spec, cfg.solver.kind)?;
            let comp = complementarity_report(&result.u, &spec.forcing, 1e-6)?;
            save_field(&result.u, &out)?;
            let payload = json!({
                "solver": cfg.solver.kind,
                "boundary_policy": "Dirichlet on incoming and v-faces; outgoing x-faces extrapolated first-order",
                "sup_u": result.u.sup_norm(),
                "min_u": result.min_value,
                "penalized_lower_bound": result.penalized_lower_bound,
                "step_residual": result.stats.step_residual,
                "complementarity": comp,
                "iterations_per_step_max": result.stats.iterations_per_step.iter().max(),
                "field": out.display().to_string(),
            });
            let rep = Report::new(cfg.resolved_json(), payload)
                .with_timing("solve", start.elapsed().as_secs_f64());
            match report {
                Some(path) => rep.save(&path)?,
                None => println!("{}", rep.to_json()?),
            }
            Ok(0)
        }
        Command::Sample { preset, nt, nx, nv, out } => {
            let cfg = RunConfig {
                grid: kobs::grid::GridConfig::unit(1, nt, nx, nv),
                boundary_preset: preset,
                ..RunConfig::default()
            };
            let data = cfg.boundary_data()?;
            let grid = kobs::grid::build_grid(&cfg.grid)?;
            let field = Field::sample(&grid, |z| data.eval(&grid, z.t(), z.x()[0], z.v()[0]));
            save_field(&field, &out)?;
            Ok(0)
        }
        Command::Energy { field, at, radii, report, snap_gamma, tol_zero } => {
            let u = load_field(&field)?;
            let mut z0 = parse_point(&at)?;
            if snap_gamma {
                z0 = snap_to_gamma(&u, &z0, tol_zero)?;
            }
            let radii = parse_radii(&radii)?;
            let start = Instant::now();
            let scan = monotonicity_scan(&u, &z0, &radii, &EnergyConfig::default())?;
            let rep = Report::new(
                json!({
                    "field": field.display().to_string(),
                    "at": [z0.t(), z0.x()[0], z0.v()[0]],
                    "radii": radii,
                }),
                scan,
            )
            .with_timing("energy", start.elapsed().as_secs_f64());
            rep.save(&report)?;
            Ok(0)
        }
        Command::Blowup { field, at, radii, out, snap_gamma, tol_zero } => {
            let u = load_field(&field)?;
            let mut z0 = parse_point(&at)?;
            if snap_gamma {
                z0 = snap_to_gamma(&u, &z0, tol_zero)?;
            }
            let radii = parse_radii(&radii)?;
            let start = Instant::now();
            let rep = classify_point(
                &u,
                &z0,
                &radii,
                DEFAULT_REFERENCE_NODES,
                0.05,
                &EnergyConfig::default(),
            )?;
            Report::new(
                json!({
                    "field": field.display().to_string(),
                    "at": [z0.t(), z0.x()[0], z0.v()[0]],
                }),
                rep,
            )
            .with_timing("blowup", start.elapsed().as_secs_f64())
            .save(&out)?;
            Ok(0)
        }
        Command::Thickness { field, at, r, tol_zero } => {
            let u = load_field(&field)?;
            let z0 = parse_point(&at)?;
            let cls = classify(&u, tol_zero, tol_zero)?;
            let rep = thickness_delta(u.grid(), &cls, &z0, r)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(0)
        }
        Command::Graph { field, axis, out, tol_zero } => {
            let u = load_field(&field)?;
            let axis_idx = match axis.as_str() {
                "vn" => u.grid().n() - 1,
                other => other
                    .parse::<usize>()
                    .map_err(|_| anyhow::anyhow!("axis must be `vn` or a v-axis index"))?,
            };
            let cls = classify(&u, tol_zero, tol_zero)?;
            let graph = extract_graph(&u, &cls, axis_idx)?;
            let mut csv = String::from("t,x,vprime,f,mask\n");
            for s in &graph.samples {
                let x = s.x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
                let vp = s.vprime.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
                csv.push_str(&format!("{},{},{},{},{}\n", s.t, x, vp, s.f, s.valid as u8));
            }
            std::fs::write(&out, csv)?;
            eprintln!(
                "graph: {} columns, {:.2}% single crossings",
                graph.samples.len(),
                100.0 * graph.valid_fraction()
            );
            Ok(0)
        }
        Command::Verify { field, suite, report, tol_zero, list_references } => {
            if list_references {
                for (name, _) in kobs::reference::MANUFACTURED_IDS {
                    println!("{name}");
                }
                println!("half_space(e)");
                println!("polynomial(m,a)");
                println!("barrier(r)");
                return Ok(0);
            }
            let field = field.ok_or_else(|| anyhow::anyhow!("verify needs --field"))?;
            let u = load_field(&field)?;
            run_verify(&u, &suite, tol_zero, report.as_deref())
        }
        Command::Price { payoff, at, horizon, paths, seed, dt, degree, compare_pde } => {
            let payoff = parse_payoff(&payoff)?;
            let z = parse_point(&at)?;
            let query = SimQuery {
                t0: z.t(),
                x0: z.x()[0],
                v0: z.v()[0],
                horizon,
                dt,
                paths,
                seed,
                antithetic: false,
            };
            let batch = simulate(&query)?;
            let est = lsmc_value(&batch, &payoff, degree)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
            if let Some(cfg_path) = compare_pde {
                let cfg = parse_config(&cfg_path)?;
                anyhow::ensure!(
                    z.t() == 0.0,
                    "the PDE comparison is wired for queries at t0 = 0"
                );
                let params = CrossCheckParams {
                    horizon,
                    x_extent: cfg.grid.x_extent,
                    v_extent: cfg.grid.v_extent,
                    cells: cfg.grid.nx,
                    mc_paths: paths,
                    mc_dt: dt,
                    seed,
                    basis_degree: degree,
                };
                let check = pde_cross_check(
                    &payoff,
                    &[CrossCheckQuery { x0: z.x()[0], v0: z.v()[0] }],
                    &params,
                )?;
                println!("{}", serde_json::to_string_pretty(&check)?);
                if !check.all_agree {
                    return Ok(2);
                }
            }
            Ok(0)
        }
    }
}

fn snap_to_gamma(u: &Field, z0: &KineticPoint, tol_zero: f64) -> anyhow::Result<KineticPoint> {
    let cls = classify(u, tol_zero, tol_zero)?;
    let flat = nearest_gamma(u.grid(), &cls, z0)
        .ok_or_else(|| anyhow::anyhow!("no free-boundary node detected at tol_zero = {tol_zero}"))?;
    let mut idx = vec![0usize; u.grid().axes()];
    u.grid().unflat(flat, &mut idx);
    Ok(u.grid().point_at(&idx))
}

fn run_verify(
    u: &Field,
    suite: &str,
    tol_zero: f64,
    report_path: Option<&std::path::Path>,
) -> anyhow::Result<u8> {
    let grid = u.grid().clone();
    let start = Instant::now();
    let mut payload = serde_json::Map::new();
    let mut passed = true;
    let want = |name: &str| suite == "all" || suite == name;
    if !["all", "lipschitz", "growth", "nondegen", "porosity"].contains(&suite) {
        anyhow::bail!("unknown suite `{suite}`");
    }

    let cls = classify(u, tol_zero, tol_zero)?;
    // a representative free-boundary point near the cylinder centre
    let target = KineticPoint::new1(-0.25, 0.0, 0.0);
    let gamma = nearest_gamma(&grid, &cls, &target);
    let gamma_point = gamma.map(|flat| {
        let mut idx = vec![0usize; grid.axes()];
        grid.unflat(flat, &mut idx);
        grid.point_at(&idx)
    });

    if want("lipschitz") {
        let rep = lipschitz_report(u)?;
        let ok = rep.sup_grad_x.is_finite() && rep.sup_dt.is_finite() && rep.sup_d2v.is_finite();
        passed &= ok;
        payload.insert("lipschitz".into(), serde_json::to_value(&rep)?);
    }
    if want("growth") {
        if let Some(z0) = &gamma_point {
            let radii: Vec<f64> = [0.0625, 0.125, 0.25, 0.5]
                .into_iter()
                .filter(|r| grid.contains_cylinder(&KineticCylinder::new(*z0, *r).unwrap()))
                .collect();
            if !radii.is_empty() {
                let rep = growth_report(u, z0, &radii)?;
                let slack = 1.5 * grid.dv();
                let ok = rep.iter().all(|s| s.margin + slack * s.r >= 0.0);
                passed &= ok;
                payload.insert("growth".into(), serde_json::to_value(&rep)?);
                payload.insert("growth_pass".into(), json!(ok));
            }
        } else {
            payload.insert("growth".into(), json!("no free-boundary point detected"));
        }
    }
    if want("nondegen") {
        if let Some(z0) = &gamma_point {
            let deltas: Vec<f64> = [0.125, 0.25]
                .into_iter()
                .filter(|d| z0.t() - d * d >= grid.t_lo() && z0.v()[0].abs() + d <= grid.v_extent())
                .collect();
            if !deltas.is_empty() {
                let rep = parabolic_nondegeneracy(u, z0, &deltas)?;
                let slack = 1.5 * grid.dv();
                let ok = rep.iter().all(|s| s.margin + slack * s.scale >= 0.0);
                passed &= ok;
                payload.insert("parabolic_nondegeneracy".into(), serde_json::to_value(&rep)?);
                payload.insert(
                    "nondegeneracy_constant".into(),
                    json!(nondegeneracy_constant(grid.n())),
                );
            }
        } else {
            payload.insert("nondegen".into(), json!("no free-boundary point detected"));
        }
    }
    if want("porosity") {
        if let Some(z0) = &gamma_point {
            let radii: Vec<f64> = [0.25, 0.5]
                .into_iter()
                .filter(|r| grid.contains_cylinder(&KineticCylinder::new(*z0, *r).unwrap()))
                .collect();
            if !radii.is_empty() {
                let rep = porosity_report(u, &cls, z0, &radii, &[0.05, 0.1, 0.2])?;
                let ok = rep.iter().all(|s| s.positive_fraction > 0.0);
                passed &= ok;
                payload.insert("porosity".into(), serde_json::to_value(&rep)?);
            }
        }
    }

    let rep = Report::new(json!({"suite": suite, "tol_zero": tol_zero}), payload)
        .with_timing("verify", start.elapsed().as_secs_f64());
    match report_path {
        Some(path) => rep.save(path)?,
        None => println!("{}", rep.to_json()?),
    }
    Ok(if passed { 0 } else { 2 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
