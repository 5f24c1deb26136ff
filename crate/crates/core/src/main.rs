use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shadow_energy::harness::{
    self, parse_rational, ExperimentConfig, ProblemSpec, Rational,
};
use shadow_energy::xnum::{Precision, MIN_DIGITS};
use shadow_energy::{OrderPolicy, SchemeId};

/// Track the modified energy of splitting integrators.
#[derive(Parser, Debug)]
#[command(name = "shadow-energy", version)]
struct Cli {
    /// Run the built-in structural checks and exit.
    #[arg(long, global = true)]
    seed_check: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Splitting scheme: sv, yoshida4 or bm4.
    #[arg(long, default_value = "sv")]
    scheme: SchemeId,
    /// Step size as decimal or a/b; repeat for several.
    #[arg(long = "h", required = true)]
    h: Vec<String>,
    /// Time horizon, a whole number of steps for every h.
    #[arg(long = "T", default_value = "100")]
    t_end: String,
    /// Working precision in decimal digits.
    #[arg(long, default_value_t = 120, value_parser = parse_digits)]
    digits: u32,
    /// Order policy: window:CAP[:W], scan:CAP or fixed:M.
    #[arg(long, default_value = "window:200")]
    policy: OrderPolicy,
    /// Evaluate the shadow energy every STRIDE steps.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Record wall time per step size.
    #[arg(long)]
    timing: bool,
    /// Clamp the order near the ends instead of padding the trajectory.
    #[arg(long)]
    no_pad: bool,
    /// Also write the trajectory of every step size.
    #[arg(long)]
    trajectory: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pendulum, H = p²/2 - cos q.
    Pendulum {
        /// Initial momentum; repeat to sweep.
        #[arg(long, default_value = "1")]
        p0: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Kepler problem started at pericentre.
    Kepler {
        /// Eccentricity in [0, 1); repeat to sweep.
        #[arg(long, default_value = "0.6")]
        ecc: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Hénon–Heiles started at the origin.
    HenonHeiles {
        /// Initial p1; repeat to sweep.
        #[arg(long, default_value = "0.1")]
        p1: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Free particle, U = 0.
    Free {
        #[arg(long, default_value = "1")]
        p0: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Harmonic oscillator, U = q²/2.
    Harmonic {
        #[arg(long, default_value = "1")]
        p0: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare schemes on one problem.
    Compare {
        /// pendulum, kepler, henon-heiles, free or harmonic.
        #[arg(long, default_value = "kepler")]
        problem: ProblemSpec,
        /// Initial-data parameter (problem default if omitted).
        #[arg(long)]
        param: Option<String>,
        /// Schemes to compare.
        #[arg(long = "schemes", value_delimiter = ',', default_value = "sv,yoshida4,bm4")]
        schemes: Vec<SchemeId>,
        /// Scale h by force evaluations per step so all schemes do equal work.
        #[arg(long)]
        equal_cost: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Per-step modified-energy trace at a single h.
    Trace {
        #[arg(long, default_value = "pendulum")]
        problem: ProblemSpec,
        /// Initial-data parameter (problem default if omitted).
        #[arg(long)]
        param: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_digits(s: &str) -> Result<u32, String> {
    let d: u32 = s.parse().map_err(|e| format!("{e}"))?;
    if d < MIN_DIGITS {
        return Err(format!("at least {MIN_DIGITS} digits required, got {d}"));
    }
    Ok(d)
}

fn config(problem: ProblemSpec, c: &Common) -> Result<ExperimentConfig> {
    let step_sizes = c
        .h
        .iter()
        .map(|s| parse_rational(s))
        .collect::<Result<Vec<Rational>, _>>()?;
    let cfg = ExperimentConfig {
        problem,
        scheme: c.scheme,
        t_end: parse_rational(&c.t_end)?,
        step_sizes,
        digits: c.digits,
        policy: c.policy,
        stride: c.stride,
        pad: !c.no_pad,
        timing: c.timing,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn report_faults(faults: &[harness::Fault]) -> bool {
    for f in faults {
        eprintln!("fault: {f}");
    }
    faults.is_empty()
}

fn run_single(problem: ProblemSpec, params: &[String], c: &Common) -> Result<bool> {
    if params.len() > 1 {
        let cfg = config(problem, c)?;
        let grid: Vec<&str> = params.iter().map(String::as_str).collect();
        let sweep = harness::sweep_parameter(&cfg, &grid)?;
        std::fs::create_dir_all(&c.out)?;
        let path = c.out.join("sweep.csv");
        sweep.write_csv(std::fs::File::create(&path)?)?;
        println!("{}", path.display());
        return Ok(report_faults(&sweep.faults));
    }
    let cfg = config(problem.with_parameter(&params[0]), c)?;
    let result = harness::run_experiment(&cfg)?;
    for path in harness::write_experiment(&c.out, &result)? {
        println!("{}", path.display());
    }
    if c.trajectory {
        let prec = cfg.precision()?;
        for h in &cfg.step_sizes {
            if let Ok(traj) = harness::integrate_cell(&cfg, &prec, h, (cfg.t_end / h).to_integer() as usize) {
                println!("{}", harness::write_trajectory(&c.out, h, &traj)?.display());
            }
        }
    }
    Ok(report_faults(&result.faults))
}

fn run(cli: Cli) -> Result<bool> {
    if cli.seed_check {
        let prec = Precision::new(60)?;
        let mut ok = true;
        for check in harness::self_check(&prec) {
            println!(
                "{} {}: {}",
                if check.passed { "PASS" } else { "FAIL" },
                check.name,
                check.detail
            );
            ok &= check.passed;
        }
        return Ok(ok);
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::Pendulum { p0, common } => {
            run_single(ProblemSpec::Pendulum { p0: p0[0].clone() }, &p0, &common)
        }
        Command::Kepler { ecc, common } => {
            run_single(ProblemSpec::Kepler { ecc: ecc[0].clone() }, &ecc, &common)
        }
        Command::HenonHeiles { p1, common } => {
            run_single(ProblemSpec::HenonHeiles { p1: p1[0].clone() }, &p1, &common)
        }
        Command::Free { p0, common } => {
            run_single(ProblemSpec::Free { p0: p0[0].clone() }, &p0, &common)
        }
        Command::Harmonic { p0, common } => {
            run_single(ProblemSpec::Harmonic { p0: p0[0].clone() }, &p0, &common)
        }
        Command::Compare {
            problem,
            param,
            schemes,
            equal_cost,
            common,
        } => {
            let problem = match param {
                Some(p) => problem.with_parameter(&p),
                None => problem,
            };
            let mut cfg = config(problem.clone(), &common).or_else(|e| {
                // equal-cost runs may use h that do not divide T
                if equal_cost {
                    let mut c = ExperimentConfig::new(problem, common.scheme);
                    c.t_end = parse_rational(&common.t_end)?;
                    Ok(c)
                } else {
                    Err(e)
                }
            })?;
            cfg.step_sizes = common
                .h
                .iter()
                .map(|s| parse_rational(s))
                .collect::<Result<_, _>>()?;
            cfg.digits = common.digits;
            cfg.policy = common.policy;
            cfg.stride = common.stride;
            cfg.pad = !common.no_pad;
            let cmp = harness::compare_methods(&cfg, &schemes, equal_cost)?;
            std::fs::create_dir_all(&common.out)?;
            let drifts = common.out.join("compare.csv");
            let rates = common.out.join("rates.csv");
            cmp.write_drifts(std::fs::File::create(&drifts)?)?;
            cmp.write_rates(std::fs::File::create(&rates)?)?;
            println!("{}\n{}", drifts.display(), rates.display());
            Ok(report_faults(&cmp.faults))
        }
        Command::Trace {
            problem,
            param,
            common,
        } => {
            let problem = match param {
                Some(p) => problem.with_parameter(&p),
                None => problem,
            };
            if common.h.len() != 1 {
                bail!("trace takes exactly one --h");
            }
            let cfg = config(problem, &common)?;
            let trace = harness::trace_energy(&cfg, &cfg.step_sizes[0])?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("trace.csv");
            trace
                .write_csv(std::fs::File::create(&path)?)
                .context("writing trace")?;
            println!("{}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
