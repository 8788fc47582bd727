//! `tvode`: simulate, fit, forecast, evaluate, sweep and bound from one
//! JSON run configuration.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tvode_core::bounds::sir_bound_check;
use tvode_core::config::{DataSource, RunConfig};
use tvode_core::evaluation::{
    fit_pipeline, prepare, score_baseline, score_grid, EvaluationReport, FittedPipeline, Labels,
    Mode, PreparedData, TrainingRow,
};
use tvode_core::simulate::{ModelKind, SimulationSpec};
use tvode_core::{DiscoveryConfig, Error, ModelFile, ParameterPredictor, Result, SplitPlan};

#[derive(Parser)]
#[command(
    name = "tvode",
    version,
    about = "ODE discovery with time-varying coefficients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset to dataset.csv.
    Simulate(Common),
    /// Fit one (w, N) model; writes model.json, predictor.json, training.csv.
    Fit(Common),
    /// Forecast every held-out block from a fitted model directory.
    Forecast {
        #[command(flatten)]
        common: Common,
        /// Directory holding model.json and predictor.json; defaults to --out.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Cross-validated selection over the grid against the fixed baseline.
    Evaluate(Common),
    /// Cross-validated and optimal selections over the grid.
    Sweep(Common),
    /// Grönwall bound check of step and constant transmission models.
    Bound(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Simulate this model instead of the configured source.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Window length; restricts the grid for evaluate and sweep.
    #[arg(long)]
    w: Option<usize>,
    /// Time-varying term count; restricts the grid for evaluate and sweep.
    #[arg(long)]
    n_varying: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

impl Common {
    fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json(&fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(model) = self.model {
            match &mut cfg.data {
                DataSource::Simulate(s) => s.model = model,
                DataSource::Csv(_) => {
                    cfg.data = DataSource::Simulate(SimulationSpec::new(model, 0.0));
                }
            }
        }
        if let Some(sigma) = self.sigma {
            match &mut cfg.data {
                DataSource::Simulate(s) => s.sigma = sigma,
                DataSource::Csv(_) => {
                    return Err(Error::Config(
                        "--sigma needs a simulated data source".into(),
                    ));
                }
            }
        }
        if let Some(w) = self.w {
            cfg.model.window = w;
            cfg.grid.windows = vec![w];
        }
        if let Some(n) = self.n_varying {
            cfg.model.n_varying = n;
            cfg.grid.n_varying = Some(vec![n]);
        }
        if let Some(trees) = self.trees {
            cfg.forest.trees = trees;
        }
        if self.jobs == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let mut f = create(dir, name)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Dataset, fold plan and preprocessed training data for a configuration.
fn prepared(cfg: &RunConfig) -> Result<(PreparedData, SplitPlan)> {
    let raw = cfg.load()?;
    let plan = SplitPlan::tail(raw.rows(), &cfg.folds)?;
    let data = prepare(&raw, &cfg.preprocess, plan.train.end)?;
    Ok((data, plan))
}

fn denormalize(data: &PreparedData, k: usize, v: f64) -> f64 {
    data.scaling
        .as_ref()
        .map_or(v, |s| s.denormalize_state(k, v))
}

fn write_training(dir: &Path, rows: &[TrainingRow]) -> Result<()> {
    let mut w = create(dir, "training.csv")?;
    writeln!(w, "dataset,noise,variable,model,w,N,MAE,diverged")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            r.noise,
            r.variable,
            r.model.label(),
            r.w.map_or(String::new(), |v| v.to_string()),
            r.n.map_or(String::new(), |v| v.to_string()),
            r.mae,
            r.diverged
        )?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let table = cfg.load()?;
    let mut w = create(out, "dataset.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "wrote {} rows to {}",
        table.rows(),
        out.join("dataset.csv").display()
    );
    Ok(())
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (data, plan) = prepared(cfg)?;
    let settings = cfg.settings();
    let global = data.global_fits(&settings.strr)?;
    let fitted = fit_pipeline(
        &data,
        &global,
        cfg.model.window,
        cfg.model.n_varying,
        &settings,
    )?;
    let file = ModelFile {
        config: DiscoveryConfig {
            window: fitted.window,
            n_varying: fitted.n_varying,
            strr: settings.strr,
        },
        library_degree: cfg.preprocess.library_degree,
        dt: data.table.dt(),
        train_rows: data.train_rows,
        model: fitted.model.clone(),
        track: fitted.track.clone(),
        scaling: data.scaling.clone(),
    };
    write_text(out, "model.json", &file.to_json()?)?;
    if let Some(p) = &fitted.predictor {
        write_text(out, "predictor.json", &p.to_json()?)?;
    }

    let (tv, tv_div) = fitted.training_mae(&data)?;
    let base = score_baseline(&data, &global, &plan)?;
    let labels = cfg.labels();
    let mut rows = Vec::new();
    for (v, name) in data.table.state_names.iter().enumerate() {
        for (model, w, n, mae, diverged) in [
            (
                Mode::Tv,
                Some(fitted.window),
                Some(fitted.n_varying),
                tv[v],
                tv_div,
            ),
            (
                Mode::Fixed,
                None,
                None,
                base.training_mae[v],
                base.training_diverged,
            ),
        ] {
            rows.push(TrainingRow {
                dataset: labels.dataset.clone(),
                noise: labels.noise.clone(),
                variable: name.clone(),
                model,
                w,
                n,
                mae,
                diverged,
            });
        }
    }
    write_training(out, &rows)?;
    for r in &rows {
        println!(
            "training MAE {} {}: {:.4}%",
            r.variable,
            r.model.label(),
            r.mae
        );
    }
    Ok(())
}

fn forecast(cfg: &RunConfig, out: &Path, model_dir: &Path) -> Result<()> {
    let file = ModelFile::from_json(&fs::read_to_string(model_dir.join("model.json"))?)?;
    let predictor_path = model_dir.join("predictor.json");
    if !predictor_path.exists() {
        return Err(Error::Config(format!(
            "{} is missing; forecasting needs covariates",
            predictor_path.display()
        )));
    }
    let predictor = ParameterPredictor::from_json(&fs::read_to_string(predictor_path)?)?;
    let (data, plan) = prepared(cfg)?;
    if data.train_rows != file.train_rows || data.scaling != file.scaling {
        return Err(Error::Config(
            "model was fitted on a different dataset or preprocessing".into(),
        ));
    }
    let fitted = FittedPipeline {
        window: file.config.window,
        n_varying: file.config.n_varying,
        model: file.model,
        track: file.track,
        predictor: Some(predictor),
    };
    let from = plan.train.end - 1;
    let predicted = fitted.predicted_track(&data, from)?;
    let names = &data.table.state_names;

    let mut w = create(out, "forecast.csv")?;
    let mut header = vec!["block".to_string(), "time".to_string()];
    for n in names {
        header.push(format!("{n}_observed"));
        header.push(format!("{n}_forecast"));
    }
    writeln!(w, "{}", header.join(","))?;
    let mut s = create(out, "forecast_mae.csv")?;
    writeln!(s, "block,variable,MAE,diverged")?;
    for (b, rows) in plan.blocks.iter().enumerate() {
        let off = rows.start - 1 - from;
        let track = predicted.slice(off, off + rows.len());
        let (run, score) = data.forecast_block(&fitted.model, &track, rows)?;
        for (i, x) in run.states.iter().enumerate() {
            let row = rows.start + i;
            let mut rec = vec![(b + 1).to_string(), data.table.times[row].to_string()];
            for (k, v) in x.iter().enumerate() {
                rec.push(denormalize(&data, k, data.table.states[(row, k)]).to_string());
                rec.push(denormalize(&data, k, *v).to_string());
            }
            writeln!(w, "{}", rec.join(","))?;
        }
        for (k, n) in names.iter().enumerate() {
            writeln!(s, "{},{},{},{}", b + 1, n, score.mae[k], score.diverged)?;
        }
    }
    w.flush()?;
    s.flush()?;
    println!(
        "forecast {} blocks to {}",
        plan.blocks.len(),
        out.join("forecast.csv").display()
    );
    Ok(())
}

fn report(cfg: &RunConfig, out: &Path, optimal: bool) -> Result<()> {
    let (data, plan) = prepared(cfg)?;
    let scores = score_grid(&data, &cfg.grid, &plan, &cfg.settings())?;
    let labels: Labels = cfg.labels();
    let rep = if optimal {
        EvaluationReport::sweep(&scores, &labels)
    } else {
        EvaluationReport::evaluate(&scores, &labels)
    };
    let mut w = create(out, "report.csv")?;
    rep.write_csv(&mut w)?;
    w.flush()?;
    write_text(out, "report.json", &rep.to_json()?)?;
    write_training(out, &rep.training)?;
    let modes: &[Mode] = if optimal {
        &[Mode::Cv, Mode::Oc, Mode::Fixed]
    } else {
        &[Mode::Cv, Mode::Fixed]
    };
    for v in &scores.state_names {
        let parts: Vec<String> = modes
            .iter()
            .map(|m| format!("{} {:.3}", m.label(), rep.mean_test(*m, v)))
            .collect();
        println!("{v}: mean test MAE {}", parts.join(", "));
    }
    Ok(())
}

fn bound(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rep = sir_bound_check(&cfg.bound)?;
    let mut w = create(out, "bound.csv")?;
    writeln!(w, "t,error_tv,bound_tv,error_const,bound_const")?;
    for (a, b) in rep.time_varying.rows.iter().zip(&rep.constant.rows) {
        writeln!(w, "{},{},{},{},{}", a.t, a.error, a.bound, b.error, b.bound)?;
    }
    w.flush()?;
    write_text(out, "bound.json", &serde_json::to_string_pretty(&rep)?)?;
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>6}",
        "model", "L", "delta", "max error", "holds"
    );
    for (name, c) in [("step", &rep.time_varying), ("const", &rep.constant)] {
        println!(
            "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>6}",
            name, c.lipschitz, c.delta, c.max_error, c.holds
        );
    }
    println!(
        "E_const {:.6e}  E_tv({}) {:.6e}",
        rep.e_const, rep.pieces, rep.e_tv
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (common, model_dir) = match &cli.command {
        Command::Simulate(c)
        | Command::Fit(c)
        | Command::Evaluate(c)
        | Command::Sweep(c)
        | Command::Bound(c) => (c.clone(), None),
        Command::Forecast { common, model_dir } => (common.clone(), model_dir.clone()),
    };
    let cfg = common.load_config()?;
    let out = &common.out;
    fs::create_dir_all(out)?;
    write_text(out, "effective_config.json", &cfg.to_json()?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Simulate(_) => simulate(&cfg, out),
        Command::Fit(_) => fit(&cfg, out),
        Command::Forecast { .. } => forecast(&cfg, out, model_dir.as_deref().unwrap_or(out)),
        Command::Evaluate(_) => report(&cfg, out, false),
        Command::Sweep(_) => report(&cfg, out, true),
        Command::Bound(_) => bound(&cfg, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
