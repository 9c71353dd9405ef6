use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fkchain::ident::{fit, Dataset, FitSpec};
use fkchain::scenario::{exit_code, load_scenario, load_summary, report, run_to_dir, scenario_files, RunOutput, Scenario};
use fkchain::Error;

#[derive(Parser)]
#[command(name = "fkchain", version, about = "Pendulum chain experiments: simulate, control, identify")]
struct Cli {
    /// Where CSV logs, summaries and reports are written.
    #[arg(long, global = true, env = "FKCHAIN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or every *.scenario file in a directory with --all.
    Run {
        path: PathBuf,
        #[arg(long)]
        all: bool,
        /// Override the physics step (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Override the feedback latency (s).
        #[arg(long)]
        td: Option<f64>,
    },
    /// Fit k, b and gamma to a dataset CSV (or a directory of them).
    Identify {
        dataset: PathBuf,
        fitspec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate run summaries.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e) as u8)
}

fn prepare(path: &Path, dt: Option<f64>, td: Option<f64>) -> Result<Scenario, Error> {
    let mut s = load_scenario(path)?;
    if let Some(dt) = dt {
        s.integrator.dt = dt;
    }
    if let Some(td) = td {
        s.sensor.latency = Some(td);
    }
    s.validate()?;
    Ok(s)
}

fn print_run(out: &RunOutput) {
    println!("{}: wrote {} and {}", out.run.name, out.csv.display(), out.summary.display());
    print!("{}", report(std::slice::from_ref(&out.run)));
}

fn run_cmd(out_dir: &Path, path: &Path, all: bool, dt: Option<f64>, td: Option<f64>) -> Result<(), Error> {
    if !all {
        let s = prepare(path, dt, td)?;
        let out = run_to_dir(&s, out_dir)?;
        print_run(&out);
        return Ok(());
    }
    let files = scenario_files(path)?;
    if files.is_empty() {
        return Err(Error::InvalidParameter(format!("no .scenario files in {}", path.display())));
    }
    let scenarios = files.iter().map(|f| prepare(f, dt, td)).collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<RunOutput, Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios.iter().map(|s| scope.spawn(move || run_to_dir(s, out_dir))).collect();
        handles.into_iter().map(|h| h.join().expect("scenario worker panicked")).collect()
    });
    let mut first_err = None;
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(out) => print_run(&out),
            Err(e) => {
                eprintln!("{}: {e}", f.display());
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn identify_cmd(out_dir: &Path, dataset: &Path, fitspec: &Path, seed: Option<u64>) -> Result<(), Error> {
    let text = std::fs::read_to_string(fitspec)
        .map_err(|e| Error::InvalidParameter(format!("{}: {e}", fitspec.display())))?;
    let mut spec = FitSpec::from_toml(&text)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let paths: Vec<PathBuf> = if dataset.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(dataset)
            .map_err(|e| Error::Data(format!("{}: {e}", dataset.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![dataset.to_path_buf()]
    };
    if paths.is_empty() {
        return Err(Error::Data(format!("no csv files in {}", dataset.display())));
    }
    let data = paths.iter().map(|p| Dataset::from_csv(p)).collect::<Result<Vec<_>, _>>()?;
    let result = fit(&data, &spec)?;
    print!("{}", result.report());
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Data(format!("{}: {e}", out_dir.display())))?;
    let txt = out_dir.join("fit.txt");
    let csv = out_dir.join("fit.csv");
    std::fs::write(&txt, result.report()).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&csv, format!("{}\n{}\n", result.csv_header(), result.csv_row()))
        .map_err(|e| Error::Data(e.to_string()))?;
    println!("wrote {} and {}", txt.display(), csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { path, all, dt, td } => run_cmd(&cli.out_dir, path, *all, *dt, *td),
        Command::Identify { dataset, fitspec, seed } => identify_cmd(&cli.out_dir, dataset, fitspec, *seed),
        Command::Report { summaries } => summaries
            .iter()
            .map(|p| load_summary(p))
            .collect::<Result<Vec<_>, _>>()
            .map(|s| print!("{}", report(&s))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
