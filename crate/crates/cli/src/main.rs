use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use rephmm::baselines::run_baseline;
use rephmm::io::{read_json, read_paired_table, to_json_string, write_baseline_tsv, write_results_tsv, InputTable, ReadOptions};
use rephmm::sim::{evaluate, Method, Scenario, SimConfig};
use rephmm::{fit, oracle_test, step_up, BaselineMethod, EmConfig, Error, HmmParams, Result};

#[derive(Parser, Debug)]
#[command(name = "rephmm", version, about = "Replicability analysis of paired p-values with a hidden Markov model")]
struct Cli {
    /// Seed for simulations.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Simulation size preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// m = 2,000 with 20 replications.
    Desk,
    /// m = 10,000 with 100 replications.
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model and write its parameters as JSON.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        em: EmArgs,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model and test every feature.
    Test {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        q: f64,
        /// Output directory for results.tsv, params.json and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Test with known parameters read from JSON.
    OracleTest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        q: f64,
        /// Output directory for results.tsv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run baseline procedures on the same input, one TSV per method.
    Compare {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        em: EmArgs,
        #[arg(long)]
        q: f64,
        /// Comma-separated methods: rlis, adhoc_bh, maxp, radjust, jump, stareg.
        #[arg(long, value_delimiter = ',', default_value = "adhoc_bh,maxp,radjust,jump,stareg")]
        methods: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo comparison of empirical FDR and power.
    Simulate {
        /// TOML file with simulation settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated methods: rlis, oracle, adhoc_bh, maxp, radjust, jump, stareg.
        #[arg(long, value_delimiter = ',', default_value = "rlis,oracle,adhoc_bh,maxp,radjust,jump,stareg")]
        methods: Vec<String>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        /// Signal mean in both studies.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        mu1: Option<f64>,
        #[arg(long)]
        mu2: Option<f64>,
        /// Comma-separated nominal levels.
        #[arg(long, value_delimiter = ',')]
        q_grid: Option<Vec<f64>>,
        /// Transition matrix of the hidden chain.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_enum, default_value = "curves")]
        format: CsvFormat,
        /// Output CSV file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CsvFormat {
    /// One row per method and level.
    Curves,
    /// One row per method, level and metric.
    Long,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// TSV or CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "id")]
    id_column: String,
    #[arg(long, default_value = "p1")]
    p1_column: String,
    #[arg(long, default_value = "p2")]
    p2_column: String,
    /// Replacement for p-values equal to zero.
    #[arg(long, default_value_t = rephmm::model::DEFAULT_P_FLOOR)]
    zero_floor: f64,
    /// Reorder rows by chrom and pos columns before fitting.
    #[arg(long)]
    sort_by_position: bool,
}

#[derive(Args, Debug)]
struct EmArgs {
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Relative log-likelihood change that stops EM.
    #[arg(long)]
    tol: Option<f64>,
}

impl EmArgs {
    fn config(&self) -> EmConfig {
        let mut cfg = EmConfig::default();
        if let Some(n) = self.max_iterations {
            cfg.max_iterations = n;
        }
        if let Some(t) = self.tol {
            cfg.rel_tol = t;
        }
        cfg
    }
}

fn load_input(args: &InputArgs) -> Result<InputTable> {
    let opts = ReadOptions {
        id_column: args.id_column.clone(),
        p1_column: args.p1_column.clone(),
        p2_column: args.p2_column.clone(),
        delimiter: None,
        zero_floor: args.zero_floor,
        sort_by_position: args.sort_by_position,
    };
    let table = read_paired_table(&args.input, &opts)?;
    for d in &table.skipped {
        eprintln!("warning: {}:{}: {}", table.source.display(), d.line, d.message);
    }
    if table.clamped_zeros > 0 {
        eprintln!("warning: {} p-values equal to 0 set to {:e}", table.clamped_zeros, args.zero_floor);
    }
    if table.clamped_ones > 0 {
        eprintln!("warning: {} p-values equal to 1 moved just below 1", table.clamped_ones);
    }
    if let Some(w) = &table.unsorted_warning {
        eprintln!("warning: {w}");
    }
    Ok(table)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn parse_methods<T: FromStr<Err = Error>>(names: &[String]) -> Result<Vec<T>> {
    names.iter().map(|n| n.trim().parse()).collect()
}

/// Overlays `over` onto `base`, descending into nested tables.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn sim_config(cli: &Cli, command: &Command) -> Result<SimConfig> {
    let Command::Simulate { config, m, replications, mu, mu1, mu2, q_grid, scenario, .. } = command else {
        unreachable!("called for simulate only")
    };
    let mut cfg = match cli.preset {
        Some(Preset::Desk) => SimConfig::desk(),
        Some(Preset::Full) => SimConfig::full(),
        None => SimConfig::default(),
    };
    if let Some(path) = config {
        let text = fs::read_to_string(path)?;
        let over: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut base = toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut base, over);
        cfg = base.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(s) = scenario {
        cfg = cfg.with_scenario(Scenario::from_str(s)?);
    }
    if let Some(v) = m {
        cfg.m = *v;
    }
    if let Some(v) = replications {
        cfg.replications = *v;
    }
    if let Some(v) = mu {
        cfg.mu1 = *v;
        cfg.mu2 = *v;
    }
    if let Some(v) = mu1 {
        cfg.mu1 = *v;
    }
    if let Some(v) = mu2 {
        cfg.mu2 = *v;
    }
    if let Some(v) = q_grid {
        cfg.q_grid = v.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate { input, em, out } => {
            let table = load_input(input)?;
            let f = fit(&table.data, &em.config())?;
            if !f.converged {
                eprintln!("warning: EM stopped after {} iterations without converging", f.iterations_used);
            }
            write_text(out, &to_json_string(&f)?)?;
            eprintln!("fitted {} features in {} iterations; pi = {:?}", table.len(), f.iterations_used, f.params.pi.probs());
        }
        Command::Test { input, em, q, out } => {
            let table = load_input(input)?;
            let (f, outcome) = rephmm::test_replicability(&table.data, *q, &em.config())?;
            if !f.converged {
                eprintln!("warning: EM stopped after {} iterations without converging", f.iterations_used);
            }
            fs::create_dir_all(out)?;
            let mut w = create(&out.join("results.tsv"))?;
            write_results_tsv(&mut w, &table.data, &outcome)?;
            w.flush()?;
            write_text(&out.join("params.json"), &to_json_string(&f)?)?;
            write_text(&out.join("summary.json"), &to_json_string(&outcome.summary())?)?;
            eprintln!("rejected {} of {} features at q = {q}", outcome.num_rejected(), table.len());
        }
        Command::OracleTest { input, params, q, out } => {
            let table = load_input(input)?;
            let p: HmmParams = read_json(params)?;
            let outcome = oracle_test(&p, &table.data, *q)?;
            fs::create_dir_all(out)?;
            let mut w = create(&out.join("results.tsv"))?;
            write_results_tsv(&mut w, &table.data, &outcome)?;
            w.flush()?;
            write_text(&out.join("summary.json"), &to_json_string(&outcome.summary())?)?;
            eprintln!("rejected {} of {} features at q = {q}", outcome.num_rejected(), table.len());
        }
        Command::Compare { input, em, q, methods, out } => {
            let table = load_input(input)?;
            let with_rlis = methods.iter().any(|m| m.trim() == "rlis");
            let others: Vec<String> = methods.iter().filter(|m| m.trim() != "rlis").cloned().collect();
            let baselines: Vec<BaselineMethod> = parse_methods(&others)?;
            let em_cfg = em.config();
            if !(*q > 0.0 && *q < 1.0) {
                return Err(Error::InvalidLevel(*q));
            }
            let outcomes: Vec<_> = baselines
                .par_iter()
                .map(|&b| {
                    if b == BaselineMethod::Stareg {
                        rephmm::baselines::stareg_with(&table.data, *q, &em_cfg)
                    } else {
                        run_baseline(b, &table.data, *q)
                    }
                })
                .collect::<Result<_>>()?;
            fs::create_dir_all(out)?;
            if with_rlis {
                let f = fit(&table.data, &em_cfg)?;
                let rlis = rephmm::compute_rlis(&f.params, &table.data)?;
                let outcome = step_up(&rlis, *q);
                let mut w = create(&out.join("rlis.tsv"))?;
                write_results_tsv(&mut w, &table.data, &outcome)?;
                w.flush()?;
                eprintln!("rlis: {} rejections", outcome.num_rejected());
            }
            for o in &outcomes {
                let mut w = create(&out.join(format!("{}.tsv", o.method)))?;
                write_baseline_tsv(&mut w, &table.data, o)?;
                w.flush()?;
                eprintln!("{}: {} rejections", o.method, o.rejected.len());
            }
        }
        command @ Command::Simulate { methods, format, out, .. } => {
            let cfg = sim_config(cli, command)?;
            let methods: Vec<Method> = parse_methods(methods)?;
            let report = evaluate(&cfg, &methods)?;
            let text = match format {
                CsvFormat::Curves => report.to_curves_csv(),
                CsvFormat::Long => report.to_long_csv(),
            };
            match out {
                Some(path) => write_text(path, &text)?,
                None => io::stdout().lock().write_all(text.as_bytes())?,
            }
            let failures: usize = report.cells.iter().map(|c| c.failures).sum();
            if failures > 0 {
                eprintln!("warning: {failures} method-level fits failed and were excluded");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
