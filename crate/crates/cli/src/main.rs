use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlsg::campaign::{run_campaign, trial_field};
use nlsg::config::{Config, InstanceId};
use nlsg::engine::{Family, Instance, LevyControlProblem, MCConfig, Propagator};
use nlsg::generator::{
    comparison_rows, estimate_generator, hjb_generator_levy, isaacs_generator_ou, relative_sup_error,
    single_step_operator, write_comparison_csv,
};
use nlsg::oracle::{hopf_cole_oracle, hopf_lax_oracle, line_grid};
use nlsg::pde::{solve_hjb_levy_1d, solve_isaacs_ou_1d, GridSolverSpec};
use nlsg::viscosity::verify_theorem;
use nlsg::{Error, Result};

#[derive(Parser)]
#[command(name = "nlsg", version, about = "Verification campaigns for monotone control semigroups")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "txt",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the property campaign.
    Verify,
    /// Compare the extrapolated difference quotient with the analytic generator.
    Generator,
    /// Check the viscosity inequalities along `u(t) = S(t)u₀`.
    Viscosity,
    /// Evaluate an independent oracle on the sample plan next to the engine.
    Oracle {
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Spatial step of the finite-difference solver.
        #[arg(long, default_value_t = 0.01)]
        dx: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    HopfLax,
    HopfCole,
    Pde,
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(common: &Common, stem: &str, body: &str) -> Result<()> {
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path: PathBuf = Path::new(dir).join(format!("{stem}.{}", common.format.ext()));
            std::fs::write(path, body)?;
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn verify(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let rep = run_campaign(&cfg)?;
    let body = match common.format {
        Format::Json => rep.to_json() + "\n",
        Format::Csv => rep.to_csv(),
        Format::Text => rep.to_text(),
    };
    emit(common, "report", &body)?;
    Ok(rep.passed())
}

fn generator(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let plan = cfg.plan()?;
    let field = trial_field(cfg.run.u0_seed, cfg.run.dim)?;
    let mc = MCConfig { n_paths: cfg.generator.n_paths, steps: 1, ..cfg.mc_config() };
    let h_seq = cfg.generator_h_seq();
    let (numeric, analytic) = match cfg.instance()? {
        Instance::Levy(p) => {
            let prob = LevyControlProblem::new(p.triplet().clone(), p.cost().clone(), field.grad_bound())?;
            let prop = Propagator::new(Instance::Levy(prob.clone()), mc, &cfg.grid_config())?;
            let est = estimate_generator(&single_step_operator(&prop, Family::S), &field, &h_seq, &plan)?;
            let an = plan.points().iter().map(|x| hjb_generator_levy(&prob, &field, x)).collect::<Result<Vec<_>>>()?;
            (est.extrapolated, an)
        }
        Instance::Ou(p) => {
            let an = plan.points().iter().map(|x| isaacs_generator_ou(&p, &field, x)).collect::<Result<Vec<_>>>()?;
            let prop = Propagator::new(Instance::Ou(p), mc, &cfg.grid_config())?;
            let est = estimate_generator(&single_step_operator(&prop, Family::S), &field, &h_seq, &plan)?;
            (est.extrapolated, an)
        }
    };
    let rel = relative_sup_error(&numeric, &analytic);
    let rows = comparison_rows(&plan, &numeric, &analytic);
    let body = match common.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_comparison_csv(&rows, &mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        Format::Json => serde_json::json!({ "h_seq": h_seq, "rel_error": rel, "rows": rows }).to_string() + "\n",
        Format::Text => format!(
            "generator {:?} field seed {} h_seq {:?}\nrelative sup error {:.4e} tolerance {:.2e}\n",
            cfg.run.instance, cfg.run.u0_seed, h_seq, rel, cfg.tolerances.generator_match
        ),
    };
    emit(common, "generator", &body)?;
    Ok(rel <= cfg.tolerances.generator_match)
}

fn viscosity(common: &Common) -> Result<bool> {
    let cfg = load(common)?;
    let prop = Propagator::new(cfg.instance()?, MCConfig { n_paths: cfg.viscosity.n_paths, ..cfg.mc_config() }, &cfg.grid_config())?;
    let u0 = cfg.initial_value()?;
    let mut vcfg = cfg.viscosity.clone();
    vcfg.seed = cfg.run.seed;
    let rep = verify_theorem(&prop, Family::S, &u0, &vcfg, &cfg.plan()?)?;
    let body = match common.format {
        Format::Json => serde_json::to_string_pretty(&rep).expect("report serializes") + "\n",
        Format::Csv => {
            let mut s = String::from("t,x,direction,lhs,rhs,margin,kappa,verdict\n");
            for r in &rep.records {
                let xs: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
                s += &format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.t,
                    xs.join(" "),
                    r.direction.name(),
                    r.lhs,
                    r.rhs,
                    r.margin,
                    r.kappa,
                    if r.passed { "pass" } else { "fail" }
                );
            }
            s
        }
        Format::Text => rep.to_text(),
    };
    emit(common, "viscosity", &body)?;
    Ok(rep.violations() == 0)
}

fn oracle(common: &Common, kind: OracleKind, t: f64, dx: f64) -> Result<bool> {
    let cfg = load(common)?;
    let plan = cfg.plan()?;
    let u0 = cfg.initial_value()?;
    let instance = match kind {
        OracleKind::Pde => cfg.instance()?,
        _ => cfg.instance_for(InstanceId::Levy)?,
    };
    let prop = Propagator::new(instance.clone(), cfg.mc_config(), &cfg.grid_config())?;
    let engine = prop.apply(Family::S, t, &u0)?.eval_plan(&plan)?;
    let oracle: Vec<f64> = match kind {
        OracleKind::HopfLax => {
            let Instance::Levy(p) = &instance else { unreachable!() };
            if cfg.run.dim != 1 {
                return Err(Error::Argument("the Hopf-Lax oracle is one-dimensional".into()));
            }
            let tr = p.triplet();
            if tr.cov().abs().max() > 0.0 || tr.jump_rate() > 0.0 {
                return Err(Error::Argument("the Hopf-Lax oracle needs levy.cov = 0 and levy.jump_rate = 0".into()));
            }
            // A pure drift only translates the deterministic problem.
            let shift = tr.gamma()[0] * t;
            plan.points()
                .iter()
                .map(|x| {
                    let y = x[0] + shift;
                    hopf_lax_oracle(&u0, p.cost(), t, &[y], &line_grid(y, 8.0, 1e-3))
                })
                .collect::<Result<Vec<_>>>()?
        }
        OracleKind::HopfCole => {
            let mc = MCConfig { seed: cfg.run.seed ^ 0x9e37_79b9, ..cfg.mc_config() };
            plan.points().iter().map(|x| hopf_cole_oracle(&u0, t, x, &mc).map(|e| e.value)).collect::<Result<Vec<_>>>()?
        }
        OracleKind::Pde => {
            let spec = GridSolverSpec::for_plan(&plan, dx, t);
            let init: Vec<f64> = spec.nodes().iter().map(|&x| u0.eval(&[x])).collect();
            let sol = match &instance {
                Instance::Levy(p) => solve_hjb_levy_1d(&init, p.cost(), p.triplet(), &spec)?,
                Instance::Ou(p) => solve_isaacs_ou_1d(&init, &p.model, &spec)?,
            };
            plan.points().iter().map(|x| sol.interp(sol.times.len() - 1, x[0])).collect()
        }
    };
    let rel = relative_sup_error(&engine, &oracle);
    let body = match common.format {
        Format::Csv | Format::Text => {
            let mut s = String::from("x,engine,oracle,abs_error\n");
            for ((x, e), o) in plan.points().iter().zip(&engine).zip(&oracle) {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                s += &format!("{},{},{},{}\n", xs.join(" "), e, o, (e - o).abs());
            }
            if common.format == Format::Text {
                s += &format!("# relative sup error {rel:.4e}\n");
            }
            s
        }
        Format::Json => serde_json::json!({ "t": t, "engine": engine, "oracle": oracle, "rel_error": rel }).to_string() + "\n",
    };
    emit(common, "oracle", &body)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Verify => verify(&cli.common),
        Command::Generator => generator(&cli.common),
        Command::Viscosity => viscosity(&cli.common),
        Command::Oracle { kind, t, dx } => oracle(&cli.common, kind, t, dx),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
