//! Command-line surface.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use gfc_core::dgp::{trajectories, Dgp};
use gfc_core::estimate::{estimate_att, AnalysisConfig, ControlConvention, Design, EstimateReport, Method};
use gfc_core::exposure::{estimate_aee, forecast_aee_f, marginal_erf, ExposurePolicy};
use gfc_core::forecast::{forecast_att_f, selection_set, ForecastReport, ScenarioSpec};
use gfc_core::oracle::{oracle_aee, oracle_att, oracle_future, FutureContrast, FutureSet, OracleConfig, OracleResult};
use gfc_core::panel::{Panel, Schema};
use gfc_core::presets;
use gfc_core::window::Var;

use crate::error::{CliError, OK};
use crate::manifest::{hash_file, Manifest, Outputs};
use crate::suite::{self, SuiteOptions};

#[derive(Parser, Debug)]
#[command(name = "gfc", version, about = "Counterfactual estimation and forecasting on discrete panels")]
pub struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "GFC_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a panel from a bundled or JSON data-generating process.
    Simulate(SimulateArgs),
    /// ATT over the observed treated anchors.
    Estimate(AnalysisArgs),
    /// ATT on a future treatment window.
    Forecast(ForecastArgs),
    /// Average exposure effect of a hypothetical exposure policy.
    Expose(ExposeArgs),
    /// Run the acceptance suite.
    Validate(ValidateArgs),
    /// Summarize a run directory and optionally re-run it from its manifest.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Bundled name or path to a JSON process.
    #[arg(long)]
    pub dgp: String,
    #[arg(long)]
    pub units: usize,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Adjustment,
    Gformula,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Convention {
    Canonical,
    Weighted,
}

#[derive(Args, Debug)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Analysis config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Process that generated the panel; adds the oracle to the plot data.
    #[arg(long)]
    pub dgp: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub control_convention: Option<Convention>,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExposeArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long)]
    pub policy: PathBuf,
    /// Future-window scenario; without it the observed anchors are used.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, default_value = "validation")]
    pub out: PathBuf,
    /// Comma-separated criterion numbers.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<usize>>,
    /// Directory of bundled configs.
    #[arg(long)]
    pub configs: Option<PathBuf>,
    /// Path cap of the enumeration oracle.
    #[arg(long)]
    pub oracle_cap: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Re-run from the manifest and compare output hashes.
    #[arg(long)]
    pub verify: bool,
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::CONFIG } else { OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("gfc: config: {e}");
            return crate::error::CONFIG;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => OK,
        Err(e) => {
            eprintln!("gfc: {e}");
            e.code()
        }
    }
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Forecast(a) => forecast(a),
        Command::Expose(a) => expose(a),
        Command::Validate(a) => validate(a),
        Command::Report(a) => report(a),
    }
}

fn abs(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// Bundled process by name, or a JSON file.
fn load_dgp(spec: &str) -> Result<(Dgp, Option<PathBuf>), CliError> {
    if presets::NAMES.contains(&spec) {
        return Ok((presets::named(spec)?, None));
    }
    let path = PathBuf::from(spec);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "unknown process {spec:?}: not a bundled name ({}) or an existing file",
            presets::NAMES.join(", ")
        )));
    }
    Ok((Dgp::load(&path)?, Some(path)))
}

fn dgp_arg(spec: &str) -> String {
    if presets::NAMES.contains(&spec) {
        spec.into()
    } else {
        abs(Path::new(spec))
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let (dgp, file) = load_dgp(&a.dgp)?;
    if a.units == 0 || a.horizon == 0 {
        return Err(CliError::Config("units and horizon must be positive".into()));
    }
    let panel = dgp.simulate(a.units, a.horizon, a.seed)?;
    let mut out = Outputs::default();
    out.add("panel.csv", panel.to_csv());
    out.json("schema.json", panel.schema())?;
    out.json("dgp.json", &dgp)?;
    let replay = vec![
        "--dgp".into(),
        dgp_arg(&a.dgp),
        "--units".into(),
        a.units.to_string(),
        "--horizon".into(),
        a.horizon.to_string(),
        "--seed".into(),
        a.seed.to_string(),
    ];
    Manifest::new("simulate", a.seed, replay, &file.into_iter().collect::<Vec<_>>())?.write(&a.out, &out)
}

struct Loaded {
    panel: Panel,
    cfg: AnalysisConfig,
    dgp: Option<Dgp>,
    inputs: Vec<PathBuf>,
    replay: Vec<String>,
}

fn load_analysis(a: &AnalysisArgs) -> Result<Loaded, CliError> {
    let schema = Schema::load(&a.schema)?;
    let panel = Panel::read_csv(&a.panel, schema)?;
    let mut cfg = AnalysisConfig::load(&a.config)?;
    cfg.seed = a.seed;
    if let Some(m) = a.mode {
        cfg.method = Some(match m {
            Mode::Adjustment => Method::Adjustment,
            Mode::Gformula => Method::Gformula,
        });
    }
    if let Some(c) = a.control_convention {
        cfg.control_convention = match c {
            Convention::Canonical => ControlConvention::Canonical,
            Convention::Weighted => ControlConvention::Weighted,
        };
    }
    let mut inputs = vec![a.panel.clone(), a.schema.clone(), a.config.clone()];
    let mut replay = vec![
        "--panel".into(),
        abs(&a.panel),
        "--schema".into(),
        abs(&a.schema),
        "--config".into(),
        abs(&a.config),
        "--seed".into(),
        a.seed.to_string(),
    ];
    let dgp = match &a.dgp {
        Some(d) => {
            let (dgp, file) = load_dgp(d)?;
            inputs.extend(file);
            replay.extend(["--dgp".into(), dgp_arg(d)]);
            Some(dgp)
        }
        None => None,
    };
    if let Some(m) = a.mode {
        replay.extend(["--mode".into(), format!("{m:?}").to_lowercase()]);
    }
    if let Some(c) = a.control_convention {
        replay.extend(["--control-convention".into(), format!("{c:?}").to_lowercase()]);
    }
    Ok(Loaded { panel, cfg, dgp, inputs, replay })
}

fn oracle_config(cfg: &AnalysisConfig) -> OracleConfig {
    OracleConfig { seed: cfg.seed, ..OracleConfig::default() }
}

/// Indices of the units and times a report retained.
pub fn retained(panel: &Panel, rep: &EstimateReport) -> Vec<(usize, usize)> {
    rep.contributions
        .iter()
        .filter_map(|c| panel.units().iter().position(|u| *u == c.unit).map(|i| (i, c.time)))
        .collect()
}

fn plot_csv(value: f64, se: f64, oracle: Option<Result<OracleResult, gfc_core::Error>>) -> String {
    let mut s = String::from("series,value,lower,upper\n");
    let _ = writeln!(s, "estimate,{value},{},{}", value - 1.96 * se, value + 1.96 * se);
    match oracle {
        Some(Ok(o)) => {
            let half = 1.96 * o.mc_standard_error;
            let _ = writeln!(s, "oracle,{},{},{}", o.value, o.value - half, o.value + half);
        }
        Some(Err(e)) => eprintln!("gfc: oracle unavailable: {e}"),
        None => {}
    }
    s
}

fn draws_csv(rep: &ForecastReport) -> String {
    let mut s = String::from("draw,value,selected,dropped,aborted\n");
    for d in &rep.draws {
        let v = d.value.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{v},{},{},{}", d.draw, d.selected, d.dropped, d.aborted.is_some());
    }
    s
}

fn finish(cmd: &str, l: Loaded, extra: &[(&str, &Path)], out_dir: &Path, out: Outputs) -> Result<(), CliError> {
    let mut inputs = l.inputs;
    let mut replay = l.replay;
    for (flag, p) in extra {
        inputs.push(p.to_path_buf());
        replay.extend([flag.to_string(), abs(p)]);
    }
    Manifest::new(cmd, l.cfg.seed, replay, &inputs)?.write(out_dir, &out)
}

fn estimate(a: &AnalysisArgs) -> Result<(), CliError> {
    let l = load_analysis(a)?;
    let rep = estimate_att(&l.panel, &l.cfg)?;
    let oracle = match &l.dgp {
        Some(d) => Some(trajectories(&l.panel).and_then(|tr| {
            let anchors = retained(&l.panel, &rep);
            oracle_att(d, &tr, &anchors, &l.cfg.mapper(), &l.cfg.window, l.cfg.control_convention, &oracle_config(&l.cfg))
        })),
        None => None,
    };
    let mut out = Outputs::default();
    out.json("report.json", &rep)?;
    out.add("contributions.csv", rep.contributions_csv());
    out.add("plot.csv", plot_csv(rep.value, rep.se, oracle));
    finish("estimate", l, &[], &a.out, out)
}

fn future_oracle(
    l: &Loaded,
    scen: &ScenarioSpec,
    rep: &ForecastReport,
    contrast: &FutureContrast,
    driver: Var,
) -> Option<Result<OracleResult, gfc_core::Error>> {
    let d = l.dgp.as_ref()?;
    if scen.backtest_origin.is_some() {
        return None;
    }
    Some((|| {
        let tr = trajectories(&l.panel)?;
        let mapper = l.cfg.mapper();
        let design = Design::new(&l.panel, &l.cfg.window, driver, (driver == Var::Z).then_some(&mapper))?;
        let select: Option<BTreeSet<Vec<u32>>> = match (&scen.selection, driver) {
            (gfc_core::forecast::Selection::MatchPastR, Var::S) => Some(design.anchors.iter().map(|a| a.r.clone()).collect()),
            (sel, _) => selection_set(sel, &design),
        };
        let set = FutureSet { origin: rep.origin, anchors: &rep.anchors, select: select.as_ref(), gap: None };
        let gap: Option<Vec<Vec<u8>>> = scen.gap_schedule.as_ref().map(|g| vec![g.clone(); tr.len()]);
        let set = FutureSet { gap: gap.as_deref(), ..set };
        oracle_future(d, &tr, &l.cfg.window, &set, contrast, &oracle_config(&l.cfg))
    })())
}

fn forecast(a: &ForecastArgs) -> Result<(), CliError> {
    let l = load_analysis(&a.analysis)?;
    let scen = ScenarioSpec::load(&a.scenario)?;
    let rep = forecast_att_f(&l.panel, &l.cfg, &scen)?;
    let mapper = l.cfg.mapper();
    let oracle = future_oracle(&l, &scen, &rep, &FutureContrast::Treatment(&mapper), Var::Z);
    let mut out = Outputs::default();
    out.json("report.json", &rep)?;
    out.add("draws.csv", draws_csv(&rep));
    out.add("plot.csv", plot_csv(rep.estimate.value, rep.estimate.se, oracle));
    finish("forecast", l, &[("--scenario", &a.scenario)], &a.analysis.out, out)
}

fn expose(a: &ExposeArgs) -> Result<(), CliError> {
    let l = load_analysis(&a.analysis)?;
    let policy = ExposurePolicy::load(&a.policy)?;
    let mut out = Outputs::default();
    let mut extra: Vec<(&str, &Path)> = vec![("--policy", &a.policy)];
    match &a.scenario {
        Some(path) => {
            let scen = ScenarioSpec::load(path)?;
            let rep = forecast_aee_f(&l.panel, &l.cfg, &scen, &policy)?;
            let oracle = policy
                .to_oracle()
                .and_then(|op| future_oracle(&l, &scen, &rep, &FutureContrast::Exposure(&op), Var::S));
            out.json("report.json", &rep)?;
            out.add("draws.csv", draws_csv(&rep));
            out.add("plot.csv", plot_csv(rep.estimate.value, rep.estimate.se, oracle));
            extra.push(("--scenario", path));
        }
        None => {
            let rep = estimate_aee(&l.panel, &l.cfg, &policy)?;
            let oracle = match (&l.dgp, policy.to_oracle()) {
                (Some(d), Some(op)) => Some(trajectories(&l.panel).and_then(|tr| {
                    oracle_aee(d, &tr, &retained(&l.panel, &rep), &l.cfg.window, &op, &oracle_config(&l.cfg))
                })),
                _ => None,
            };
            out.json("report.json", &rep)?;
            out.add("contributions.csv", rep.contributions_csv());
            match marginal_erf(&l.panel, &l.cfg) {
                Ok(m) => {
                    let mut s = String::from("s,value,se,contrast,contrast_se\n");
                    for lv in &m.levels {
                        let key: Vec<String> = lv.s.iter().map(|v| v.to_string()).collect();
                        let _ = writeln!(s, "{},{},{},{},{}", key.join(" "), lv.value, lv.se, lv.contrast, lv.contrast_se);
                    }
                    out.add("erf.csv", s);
                }
                Err(e) => eprintln!("gfc: exposure-response summary unavailable: {e}"),
            }
            out.add("plot.csv", plot_csv(rep.value, rep.se, oracle));
        }
    }
    finish("expose", l, &extra, &a.analysis.out, out)
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let mut opts = SuiteOptions::bundled(a.seed);
    if let Some(c) = &a.configs {
        opts.configs = c.clone();
    }
    if let Some(cap) = a.oracle_cap {
        opts.oracle_cap = cap;
    }
    opts.only = a.only.as_ref().map(|v| v.iter().copied().collect());
    let results = suite::run_suite(&opts)?;
    let mut out = Outputs::default();
    out.add("junit.xml", suite::junit(&results));
    let summary = suite::summary(&results);
    print!("{summary}");
    out.add("summary.txt", summary);
    for (name, bytes) in &out.files {
        crate::manifest::write_atomic(&a.out, name, bytes)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} of {} criteria failed", results.len())));
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let m = Manifest::load(&a.run)?;
    println!("command  {}", m.command);
    println!("seed     {}", m.seed);
    println!("config   {}", m.config_hash);
    for o in &m.outputs {
        println!("output   {}  {}", o.sha256, o.path);
    }
    if !a.verify {
        return Ok(());
    }
    let mut problems = Vec::new();
    for i in &m.inputs {
        match hash_file(Path::new(&i.path)) {
            Ok(h) if h == i.sha256 => {}
            Ok(_) => problems.push(format!("input {} changed", i.path)),
            Err(e) => problems.push(e.to_string()),
        }
    }
    let tmp = std::env::temp_dir().join(format!("gfc-verify-{}-{}", std::process::id(), m.config_hash));
    let mut args: Vec<String> = vec!["gfc".into(), m.command.clone()];
    args.extend(m.replay.iter().cloned());
    args.extend(["--out".into(), tmp.display().to_string()]);
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::Config(format!("manifest replay: {e}")))?;
    let rerun = dispatch(&cli.command);
    if let Err(e) = rerun {
        let _ = std::fs::remove_dir_all(&tmp);
        return Err(CliError::Validation(format!("re-run failed: {e}")));
    }
    for o in &m.outputs {
        match hash_file(&a.run.join(&o.path)) {
            Ok(h) if h == o.sha256 => {}
            Ok(_) => problems.push(format!("output {} was modified", o.path)),
            Err(e) => problems.push(e.to_string()),
        }
        match hash_file(&tmp.join(&o.path)) {
            Ok(h) if h == o.sha256 => {}
            Ok(_) => problems.push(format!("output {} differs on re-run", o.path)),
            Err(e) => problems.push(e.to_string()),
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    if problems.is_empty() {
        println!("verified {} outputs", m.outputs.len());
        Ok(())
    } else {
        for p in &problems {
            eprintln!("gfc: {p}");
        }
        Err(CliError::Validation(format!("{} mismatches", problems.len())))
    }
}
