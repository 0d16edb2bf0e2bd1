//! The five workflows behind the subcommands.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Once;

use gridtune::netdyn::NetworkSystem;
use gridtune::odesolve::{find_steady_state, format_full, integrate, IntegratorOptions, Method, OdeSystem, Signal, Time};
use gridtune::powerlib::NetworkDescription;
use gridtune::probetune::{
    behavioral_distance, sample_scenarios, tune_with, uniform_gains, InnerOptions, ProblemSettings, Scenario,
    StopReason, TuneOptions, TuneProblem,
};
use serde::{Deserialize, Serialize};

use crate::config::{CompareSection, Config, Disturbance, GainDraw, SolverMethod};
use crate::output::{csv_table, slug, write_atomic};
use crate::plot::{LinePlot, Series, PALETTE};
use crate::{CliError, Common};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);
static HANDLER: Once = Once::new();

/// A loaded configuration plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    /// Directory that relative network paths resolve against.
    pub base: PathBuf,
    pub out: PathBuf,
    pub scenario: Option<usize>,
}

impl Context {
    pub fn load(common: &Common) -> Result<Context, CliError> {
        let mut config = Config::load(&common.config)?;
        if let Some(seed) = common.seed {
            config.scenarios.seed = seed;
        }
        let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
        Ok(Context { config, base, out, scenario: common.scenario })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base.join(p)
        }
    }

    fn description(&self, p: &Path) -> Result<NetworkDescription, CliError> {
        let path = self.resolve(p);
        let src = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read network {}: {e}", path.display())))?;
        NetworkDescription::from_toml(&src).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn sample_times(horizon: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n).map(|k| if k + 1 == n { horizon } else { horizon * k as f64 / last }).collect()
}

fn apply_draw(desc: &mut NetworkDescription, key: &str, draw: Option<GainDraw>) {
    if let Some(d) = draw {
        let gains = uniform_gains(d.seed, desc.node.len(), d.low, d.high);
        for (node, g) in desc.node.iter_mut().zip(gains) {
            node.params.insert(key.to_owned(), g);
        }
    }
}

/// Networks, scenarios and starting gains of a tuning experiment.
pub struct Tuning {
    pub problem: TuneProblem,
    pub p0: Vec<f64>,
    pub s0: Vec<f64>,
}

pub fn tuning(ctx: &Context) -> Result<Tuning, CliError> {
    let c = &ctx.config;
    let net = c
        .network
        .as_ref()
        .ok_or_else(|| CliError::Config("network: section is required for this command".into()))?;
    let mut sys = ctx.description(&net.system)?;
    let mut spec = ctx.description(&net.specification)?;
    let key = &c.simulation.tunable;
    if let Some(g) = c.initial_gains {
        apply_draw(&mut sys, key, g.system);
        apply_draw(&mut spec, key, g.specification);
    }
    let n = sys.node.len();
    let buses: Vec<usize> = if c.scenarios.buses.is_empty() { (1..=n).collect() } else { c.scenarios.buses.clone() };
    if let Some(b) = buses.iter().find(|&&b| b > n) {
        return Err(CliError::Config(format!("scenarios.buses: bus {b} does not exist (the system has {n} buses)")));
    }
    let scenarios = sample_scenarios(c.scenarios.seed, c.scenarios.count, &buses, c.scenarios.sigma)?;
    let problem = TuneProblem::new(sys.build()?, spec.build()?, scenarios, c.simulation.settings())?;
    let p0 = problem.system_gains();
    let s0 = problem.spec_gains();
    Ok(Tuning { problem, p0, s0 })
}

fn targets(ctx: &Context) -> Result<Vec<(String, NetworkDescription)>, CliError> {
    let c = &ctx.config;
    if let Some(sim) = &c.simulate {
        return sim.networks.iter().map(|n| Ok((n.label.clone(), ctx.description(&n.file)?))).collect();
    }
    match &c.network {
        Some(net) => {
            let key = &c.simulation.tunable;
            let (mut sys, mut spec) = (ctx.description(&net.system)?, ctx.description(&net.specification)?);
            if let Some(g) = c.initial_gains {
                apply_draw(&mut sys, key, g.system);
                apply_draw(&mut spec, key, g.specification);
            }
            Ok(vec![("system".into(), sys), ("specification".into(), spec)])
        }
        None => Err(CliError::Config("either a simulate or a network section is required".into())),
    }
}

/// The configured step, or the sampled scenario `--scenario` when the
/// configuration has no `[simulate]` section.
fn disturbance(ctx: &Context, buses: usize) -> Result<Option<Disturbance>, CliError> {
    let c = &ctx.config;
    let d = match &c.simulate {
        Some(sim) => sim.disturbance,
        None => {
            let all: Vec<usize> = if c.scenarios.buses.is_empty() { (1..=buses).collect() } else { c.scenarios.buses.clone() };
            let sc = sample_scenarios(c.scenarios.seed, c.scenarios.count, &all, c.scenarios.sigma)?;
            let j = ctx.scenario.unwrap_or(0);
            let s = sc.get(j).ok_or_else(|| {
                CliError::Config(format!("--scenario {j} out of range ({} scenarios)", sc.len()))
            })?;
            Some(Disturbance { bus: s.bus, delta_p: s.delta_p, time: 0.0 })
        }
    };
    if let Some(d) = d {
        if d.bus == 0 || d.bus > buses {
            return Err(CliError::Config(format!("disturbance bus {} does not exist ({buses} buses)", d.bus)));
        }
    }
    Ok(d)
}

fn operating_point(net: &NetworkSystem) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let p = net.default_params().map_err(|e| CliError::Config(e.to_string()))?;
    let x0 = find_steady_state(net, &vec![0.0; net.dim()], &p, 0.0, &IntegratorOptions::default())?;
    Ok((x0, p))
}

fn solver(ctx: &Context) -> IntegratorOptions {
    let step = ctx.config.simulation.step;
    match &ctx.config.simulate {
        Some(sim) => {
            let method = match sim.method {
                SolverMethod::Rk4 => Method::Rk4 { h: step },
                SolverMethod::Dopri45 => Method::Dopri45,
                SolverMethod::Trapezoid => Method::Trapezoid { h: step },
            };
            IntegratorOptions { method, rel_tol: sim.rel_tol, abs_tol: sim.abs_tol, ..Default::default() }
        }
        None => IntegratorOptions { rel_tol: 1e-8, abs_tol: 1e-10, ..Default::default() },
    }
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let nets = targets(ctx)?;
    let s = &ctx.config.simulation;
    let times = sample_times(s.horizon, s.samples);
    let opts = solver(ctx);
    let dir = ctx.out.join("simulate");
    let mut header = vec!["t".to_owned()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut plot = LinePlot {
        title: "Frequency after a load step".into(),
        x_label: "t [s]".into(),
        y_label: format!("{} [rad/s]", s.output),
        series: Vec::new(),
    };
    for (ni, (label, desc)) in nets.iter().enumerate() {
        let mut net = desc.build()?;
        let buses = net.topology().node_count();
        let (x0, p) = operating_point(&net)?;
        if let Some(d) = disturbance(ctx, buses)? {
            net.set_signal(d.bus, "P_dist", Signal::step(0.0, d.time, d.delta_p))?;
        }
        let traj = integrate(&net, &x0, &p, (0.0, s.horizon), &opts)?;
        let mut csv = Vec::new();
        traj.write_csv(&mut csv, &times).map_err(|e| CliError::Integration(e.to_string()))?;
        write_atomic(&dir.join(format!("{}.csv", slug(label))), &csv)?;
        let rows = traj.sample(&times)?;
        for id in 1..=buses {
            let k = net.find_state(id, &s.output)?;
            let y: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            println!("{label}: bus {id} {}(T) = {}", s.output, format_full(*y.last().unwrap()));
            header.push(format!("{label}.bus{id}.{}", s.output));
            plot.series.push(Series {
                label: if buses == 1 { label.clone() } else { format!("{label} bus {id}") },
                x: times.clone(),
                y: y.clone(),
                color: PALETTE[(ni * buses + id - 1) % PALETTE.len()].into(),
                dashed: ni % 2 == 1 && buses > 1,
            });
            columns.push(y);
        }
    }
    let rows = (0..times.len()).map(|i| std::iter::once(times[i]).chain(columns.iter().map(|c| c[i])).collect());
    write_atomic(&dir.join("frequency.csv"), &csv_table(&header, rows))?;
    write_atomic(&dir.join("frequency.svg"), plot.to_svg().as_bytes())?;
    Ok(())
}

pub fn steady_state(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.out.join("steady-state");
    for (label, desc) in targets(ctx)? {
        let net = desc.build()?;
        let (x0, p) = operating_point(&net)?;
        let mut f = vec![0.0; net.dim()];
        net.rhs(&x0, &p, Time::at(0.0), &mut f, &mut Default::default())
            .map_err(|e| CliError::Integration(e.to_string()))?;
        let residual = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("{label}: max |f| = {residual:.3e}");
        let mut out = String::from("state,value\n");
        for (name, v) in net.state_names().iter().zip(&x0) {
            out.push_str(&format!("{name},{}\n", format_full(*v)));
        }
        write_atomic(&dir.join(format!("{}.csv", slug(&label))), out.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DistanceReport<'a> {
    seed: u64,
    scenarios: &'a [Scenario],
    system_gains: &'a [f64],
    specification_start: &'a [f64],
    distance: f64,
    per_scenario: &'a [f64],
    specification_gains: &'a [Vec<f64>],
    iterations: &'a [usize],
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("reports always serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn distance(ctx: &Context) -> Result<(), CliError> {
    let t = tuning(ctx)?;
    let n = t.problem.scenarios().len();
    let d = behavioral_distance(&t.problem, &t.p0, &vec![t.s0.clone(); n], &ctx.config.distance.options())?;
    println!("behavioral distance: {}", format_full(d.distance));
    let report = DistanceReport {
        seed: ctx.config.scenarios.seed,
        scenarios: t.problem.scenarios(),
        system_gains: &t.p0,
        specification_start: &t.s0,
        distance: d.distance,
        per_scenario: &d.per_scenario,
        specification_gains: &d.q,
        iterations: &d.iterations,
    };
    write_atomic(&ctx.out.join("distance.json"), &json(&report))
}

/// Gains written by `tune` and read by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TunedParams {
    pub system: Vec<f64>,
    pub specification: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a Config,
    seed: u64,
    scenarios: &'a [Scenario],
    simulation: ProblemSettings,
    tuning: TuneOptions,
    distance: InnerOptions,
    initial_system_gains: &'a [f64],
    initial_specification_gains: &'a [f64],
    initial_distance: f64,
    final_distance: Option<f64>,
    reduction_factor: Option<f64>,
    iterations: usize,
    stop: StopReason,
    loss_history: &'a [f64],
    system_gains: &'a [f64],
    specification_gains: &'a [Vec<f64>],
}

pub fn tune(ctx: &Context) -> Result<(), CliError> {
    HANDLER.call_once(|| {
        let _ = ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::SeqCst));
    });
    let t = tuning(ctx)?;
    let c = &ctx.config;
    let n = t.problem.scenarios().len();
    let inner = c.distance.options();
    let opts = c.tuning.options();
    let d0 = behavioral_distance(&t.problem, &t.p0, &vec![t.s0.clone(); n], &inner)?;
    eprintln!("initial behavioral distance: {}", format_full(d0.distance));
    let r = tune_with(&t.problem, &t.p0, &d0.q, &opts, |k, loss| {
        if k % 100 == 0 {
            eprintln!("iteration {k}: loss {}", format_full(loss));
        }
        !INTERRUPTED.load(Ordering::SeqCst)
    })?;
    let final_d = if r.stop == StopReason::Interrupted {
        None
    } else {
        Some(behavioral_distance(&t.problem, &r.p, &r.q, &inner)?)
    };
    let (q, final_distance) = match &final_d {
        Some(d) => (d.q.clone(), Some(d.distance)),
        None => (r.q.clone(), None),
    };
    let manifest = Manifest {
        config: c,
        seed: c.scenarios.seed,
        scenarios: t.problem.scenarios(),
        simulation: c.simulation.settings(),
        tuning: opts,
        distance: inner,
        initial_system_gains: &t.p0,
        initial_specification_gains: &t.s0,
        initial_distance: d0.distance,
        final_distance,
        reduction_factor: final_distance.map(|d| d0.distance / d),
        iterations: r.iterations,
        stop: r.stop,
        loss_history: &r.history,
        system_gains: &r.p,
        specification_gains: &q,
    };
    let mut hist = String::from("iteration,loss\n");
    for (k, l) in r.history.iter().enumerate() {
        hist.push_str(&format!("{k},{}\n", format_full(*l)));
    }
    let tuned = TunedParams { system: r.p.clone(), specification: q.clone() };
    let tuned = toml::to_string(&tuned).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(&ctx.out.join("loss_history.csv"), hist.as_bytes())?;
    write_atomic(&ctx.out.join("tuned_params.toml"), tuned.as_bytes())?;
    write_atomic(&ctx.out.join("manifest.json"), &json(&manifest))?;
    match final_distance {
        Some(d) => println!(
            "behavioral distance {} -> {} (reduction factor {:.1}, {} iterations)",
            format_full(d0.distance),
            format_full(d),
            d0.distance / d,
            r.iterations
        ),
        None => println!("interrupted after {} iterations; partial results written", r.iterations),
    }
    Ok(())
}

pub fn compare(ctx: &Context, tuned: Option<&Path>) -> Result<(), CliError> {
    let t = tuning(ctx)?;
    let n = t.problem.scenarios().len();
    let (p, q) = match tuned {
        Some(path) => {
            let src = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let tp: TunedParams =
                toml::from_str(&src).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if tp.specification.len() != n {
                return Err(CliError::Config(format!(
                    "{}: {} specification copies for {n} scenarios",
                    path.display(),
                    tp.specification.len()
                )));
            }
            (tp.system, tp.specification)
        }
        None => (t.p0.clone(), vec![t.s0.clone(); n]),
    };
    let (problem, j, qj, name) = match ctx.config.compare {
        Some(CompareSection { disturbance: Some(d) }) => {
            let buses = t.problem.bus_count();
            if d.bus == 0 || d.bus > buses {
                return Err(CliError::Config(format!("compare.disturbance.bus: bus {} does not exist", d.bus)));
            }
            let mean: Vec<f64> =
                (0..buses).map(|i| q.iter().map(|qj| qj[i]).sum::<f64>() / q.len() as f64).collect();
            let single = TuneProblem::new(
                t.problem.system_network().clone(),
                t.problem.spec_network().clone(),
                vec![Scenario { bus: d.bus, delta_p: d.delta_p, seed: 0 }],
                ctx.config.simulation.settings(),
            )?;
            (single, 0, mean, "custom".to_owned())
        }
        _ => {
            let j = ctx.scenario.unwrap_or(0);
            if j >= n {
                return Err(CliError::Config(format!("--scenario {j} out of range ({n} scenarios)")));
            }
            let qj = q[j].clone();
            (t.problem, j, qj, format!("scenario-{j}"))
        }
    };
    let (sys, spec) = problem.scenario_trajectories(j, &p, &qj)?;
    let times = problem.sample_times().to_vec();
    let (si, pi) = problem.output_indices();
    let (rs, rp) = (sys.sample(&times)?, spec.sample(&times)?);
    let out = &ctx.config.simulation.output;
    let mut header = vec!["t".to_owned()];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut plot = LinePlot {
        title: format!("System (solid) and specification (dashed), {name}"),
        x_label: "t [s]".into(),
        y_label: format!("{out} [rad/s]"),
        series: Vec::new(),
    };
    for (side, rows, idx, dashed) in [("system", &rs, si, false), ("specification", &rp, pi, true)] {
        for (b, &k) in idx.iter().enumerate() {
            let y: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            header.push(format!("{side}.bus{}.{out}", b + 1));
            plot.series.push(Series {
                label: format!("{side} bus {}", b + 1),
                x: times.clone(),
                y: y.clone(),
                color: PALETTE[b % PALETTE.len()].into(),
                dashed,
            });
            cols.push(y);
        }
    }
    let buses = si.len();
    let gap_end = (0..buses).map(|b| (cols[b].last().unwrap() - cols[buses + b].last().unwrap()).abs()).fold(0.0, f64::max);
    let gap_max = (0..buses)
        .flat_map(|b| cols[b].iter().zip(&cols[buses + b]).map(|(a, c)| (a - c).abs()))
        .fold(0.0, f64::max);
    println!("{name}: max gap at T = {}, max gap overall = {}", format_full(gap_end), format_full(gap_max));
    let rows = (0..times.len()).map(|i| std::iter::once(times[i]).chain(cols.iter().map(|c| c[i])).collect());
    let dir = ctx.out.join("compare");
    write_atomic(&dir.join(format!("{name}.csv")), &csv_table(&header, rows))?;
    write_atomic(&dir.join(format!("{name}.svg")), plot.to_svg().as_bytes())?;
    Ok(())
}
