//! The `ddnn` command-line tool.
//!
//! Exit codes: 0 success, 1 numerical or run failure, 2 usage or config error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::datagen::{toy_rhs, TOY_HISTORY, TOY_TAU};
use crate::error::Error;
use crate::field::Combine;
use crate::gradcheck::{gradcheck, GradcheckConfig};
use crate::io::{read_text, sweep_to_csv, to_json, write_text, ModelFile, Table, TrajectoryCsv};
use crate::plot::{line_chart, Series};
use crate::solver::{solve_dde, solve_fixed_rk4, FnRhs, History, SolverConfig, Trajectory};
use crate::trainer::{delay_sweep, load_dataset, predict_series, run, Dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ddnn", version, about = "Delay differential neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a built-in delay system and write its trajectory as CSV.
    Solve(SolveArgs),
    /// Train one model from a JSON config.
    Train(TrainArgs),
    /// Train one model per tau candidate and tabulate the losses.
    Sweep(SweepArgs),
    /// Compare adjoint gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Render CSV columns as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum System {
    DelayLogistic,
    #[value(name = "toy-2d")]
    Toy2d,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    system: System,
    /// Growth rate of the delay logistic equation.
    #[arg(long, default_value_t = 1.4)]
    a: f64,
    #[arg(long)]
    t_end: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-6, conflicts_with = "fixed_h")]
    rtol: f64,
    #[arg(long, default_value_t = 1e-6, conflicts_with = "fixed_h")]
    atol: f64,
    /// Use classical RK4 with this step instead of adaptive RK12.
    #[arg(long)]
    fixed_h: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: u16,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Concat,
    Convex,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Input CSV; may be given twice to overlay two files.
    #[arg(long, required = true, num_args = 1)]
    csv: Vec<PathBuf>,
    #[arg(long)]
    x: Option<String>,
    /// One or more comma-separated column names.
    #[arg(long, value_delimiter = ',')]
    y: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Plot `z0` against `z1`.
    #[arg(long)]
    phase: bool,
}

/// Failure of a command, carrying its exit code.
struct Fail {
    code: i32,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Fail {
    Fail { code: EXIT_USAGE, msg: msg.into() }
}

fn failure(e: impl std::fmt::Display) -> Fail {
    Fail { code: EXIT_FAILURE, msg: e.to_string() }
}

/// Config and I/O problems are usage errors, everything else is a run failure.
fn classify(e: Error) -> Fail {
    match e {
        Error::InvalidConfig(_) | Error::EmptySplit(_) => usage(e.to_string()),
        other => failure(other),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn trajectory_csv(traj: &Trajectory) -> TrajectoryCsv {
    TrajectoryCsv {
        times: traj.times().to_vec(),
        values: traj.states().map(<[f64]>::to_vec).collect(),
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<i32, Fail> {
    if !(a.t_end > 0.0 && a.t_end.is_finite()) {
        return Err(usage(format!("--t-end {} must be > 0", a.t_end)));
    }
    if let Some(h) = a.fixed_h {
        if !(h > 0.0) {
            return Err(usage(format!("--fixed-h {h} must be > 0")));
        }
    }
    if !(a.a > 0.0 && a.a.is_finite()) {
        return Err(usage(format!("--a {} must be > 0", a.a)));
    }
    let traj = match (a.system, a.fixed_h) {
        (System::DelayLogistic, None) => {
            let rate = a.a;
            let rhs = FnRhs::new(1, 1.0, move |_t, z: &[f64], v: &[f64], out: &mut [f64]| {
                out[0] = rate * z[0] * (1.0 - v[0]);
            });
            let cfg = SolverConfig::with_tolerances(a.rtol, a.atol);
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            solve_dde(&rhs, History::constant(vec![0.1]), 0.0, a.t_end, &cfg, &[])
        }
        (System::DelayLogistic, Some(h)) => {
            let rate = a.a;
            let rhs = FnRhs::new(1, 1.0, move |_t, z: &[f64], v: &[f64], out: &mut [f64]| {
                out[0] = rate * z[0] * (1.0 - v[0]);
            });
            solve_fixed_rk4(&rhs, History::constant(vec![0.1]), 0.0, a.t_end, h)
        }
        (System::Toy2d, None) => {
            let cfg = SolverConfig::with_tolerances(a.rtol, a.atol);
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let rhs = FnRhs::new(2, TOY_TAU, toy_rhs);
            solve_dde(&rhs, History::constant(TOY_HISTORY.to_vec()), 0.0, a.t_end, &cfg, &[])
        }
        (System::Toy2d, Some(h)) => {
            let rhs = FnRhs::new(2, TOY_TAU, toy_rhs);
            solve_fixed_rk4(&rhs, History::constant(TOY_HISTORY.to_vec()), 0.0, a.t_end, h)
        }
    }
    .map_err(failure)?;
    write_text(&a.out, &trajectory_csv(&traj).to_csv()).map_err(classify)?;
    println!("wrote {} knots to {}", traj.len(), a.out.display());
    Ok(EXIT_OK)
}

fn load_config(path: &Path) -> Result<RunConfig, Fail> {
    let mut cfg = RunConfig::load(path).map_err(|e| usage(e.to_string()))?;
    if let Ok(s) = std::env::var("DDNN_SEED") {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| usage(format!("DDNN_SEED={s:?} is not an unsigned integer")))?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Fail> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
}

fn cmd_train(a: &TrainArgs) -> Result<i32, Fail> {
    let cfg = load_config(&a.config)?;
    let data = load_dataset(&cfg.dataset).map_err(classify)?;
    create_dir(&a.out_dir)?;
    let report = run(&cfg, &data).map_err(classify)?;
    let out = |name: &str| a.out_dir.join(name);

    let model = ModelFile {
        spec: cfg.field.clone(),
        theta: report.theta.clone(),
    };
    write_text(&out("model.json"), &to_json(&model)).map_err(classify)?;
    write_text(&out("report.json"), &to_json(&report)).map_err(classify)?;
    let timing = Timing {
        wall_clock_seconds: report.wall_clock_seconds,
    };
    write_text(&out("timing.json"), &to_json(&timing)).map_err(classify)?;

    if let (Dataset::Series(series), false) = (&data, report.diverged) {
        let truth = TrajectoryCsv::new(series.times.clone(), series.values.clone()).map_err(failure)?;
        write_text(&out("true.csv"), &truth.to_csv()).map_err(classify)?;
        let pred = predict_series(&cfg, series, &report.theta).map_err(failure)?;
        let pred = TrajectoryCsv::new(series.times.clone(), pred).map_err(failure)?;
        write_text(&out("pred.csv"), &pred.to_csv()).map_err(classify)?;
    }

    if report.diverged {
        eprintln!("run diverged: {}", report.failure.as_deref().unwrap_or("unknown"));
        return Ok(EXIT_FAILURE);
    }
    let show = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
    match report.train_accuracy {
        Some(acc) => println!(
            "train loss {} accuracy {acc:.4}",
            show(report.final_train_loss)
        ),
        None => println!(
            "train mse {} val mse {} test mse {}",
            show(report.final_train_loss),
            show(report.final_val_mse),
            show(report.final_test_mse)
        ),
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32, Fail> {
    let cfg = load_config(&a.config)?;
    let series = match load_dataset(&cfg.dataset).map_err(classify)? {
        Dataset::Series(s) => s,
        Dataset::Points(_) => return Err(usage("sweep needs a trajectory dataset")),
    };
    create_dir(&a.out_dir)?;
    let table = delay_sweep(&cfg, &series, usize::from(a.parallel)).map_err(classify)?;
    write_text(&a.out_dir.join("sweep.csv"), &sweep_to_csv(&table)).map_err(classify)?;
    let svg = line_chart(
        "validation MSE by delay",
        "tau",
        "val_mse",
        &[Series {
            label: "val_mse".into(),
            points: table.rows.iter().map(|r| (r.tau, r.val_mse)).collect(),
        }],
    );
    match svg {
        Ok(svg) => write_text(&a.out_dir.join("sweep.svg"), &svg).map_err(classify)?,
        Err(_) => eprintln!("no finite rows; sweep.svg not written"),
    }
    for r in table.rows.iter().filter(|r| !r.val_mse.is_finite()) {
        eprintln!("tau {} failed", r.tau);
    }
    match table.best_tau {
        Some(tau) => {
            println!("best tau {tau}");
            Ok(EXIT_OK)
        }
        None => Err(failure("every sweep run failed")),
    }
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32, Fail> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    if !(a.h > 0.0 && a.h < 1.0) {
        return Err(usage(format!("--h {} must lie in (0, 1)", a.h)));
    }
    let combine = match a.mode {
        Mode::Concat => Combine::Concat,
        Mode::Convex => Combine::Convex,
    };
    let cfg = GradcheckConfig::new(combine, a.h);
    let mut worst = 0.0f64;
    let mut medians = Vec::new();
    for seed in 0..a.seeds {
        let r = gradcheck(&cfg, seed).map_err(failure)?;
        eprintln!("seed {seed}: max rel err {:.3e}, median {:.3e}", r.max_rel, r.median_rel);
        worst = worst.max(r.max_rel);
        medians.push(r.median_rel);
    }
    medians.sort_by(f64::total_cmp);
    let median = medians[medians.len() / 2];
    println!("max rel err {worst:.3e} median {median:.3e} over {} seeds", a.seeds);
    Ok(if worst < 1e-3 { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_plot(a: &PlotArgs) -> Result<i32, Fail> {
    if a.csv.len() > 2 {
        return Err(usage("at most two --csv inputs"));
    }
    let (x_col, y_cols): (String, Vec<String>) = if a.phase {
        ("z0".into(), vec!["z1".into()])
    } else {
        let x = a.x.clone().ok_or_else(|| usage("--x is required unless --phase is given"))?;
        if a.y.is_empty() {
            return Err(usage("--y is required unless --phase is given"));
        }
        (x, a.y.clone())
    };
    let mut series = Vec::new();
    for path in &a.csv {
        let table = Table::parse(&read_text(path).map_err(classify)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if table.rows.is_empty() {
            return Err(usage(format!("{}: no data rows", path.display())));
        }
        let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let missing = |c: &str| usage(format!("{}: no column {c:?}", path.display()));
        let xs = table.column(&x_col).ok_or_else(|| missing(&x_col))?;
        for y in &y_cols {
            let ys = table.column(y).ok_or_else(|| missing(y))?;
            series.push(Series {
                label: format!("{name}:{y}"),
                points: xs.iter().copied().zip(ys).collect(),
            });
        }
    }
    let y_label = y_cols.join(",");
    let title = if a.phase { "phase portrait" } else { "" };
    let svg = line_chart(title, &x_col, &y_label, &series).map_err(|e| usage(e.to_string()))?;
    write_text(&a.out, &svg).map_err(classify)?;
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}
