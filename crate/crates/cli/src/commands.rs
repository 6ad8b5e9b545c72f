use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use rand::seq::SliceRandom;

use outage_detect::coordinator::{run_stream, write_reports, StreamConfig};
use outage_detect::eval::{
    choose_threshold, export_plot_data, rng_for, run_experiment_in_memory, write_artifacts, write_metrics, Artifact,
    EvalError, ExperimentConfig, ExportRequest, STREAM_SPLIT, STREAM_TRAIN, STREAM_ZONES,
};
use outage_detect::feeder::{load_topology, FeederGraph, BUNDLED_FEEDER};
use outage_detect::gan::{load_model, save_model, train, GanError, GanModel};
use outage_detect::par::Exec;
use outage_detect::sim::{read_measurements, write_measurements, Label, MeasurementSeries, ScenarioConfig};
use outage_detect::window::{window_stream, MeasurementWindow};
use outage_detect::zones::{select_zones, ZoneSet, ZoneSetExport};

use crate::{Cli, Command, DataArgs, HyperArgs};

/// Why a command failed, which decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn invalid(self, what: &str) -> Outcome<T>;
    fn runtime(self, what: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Validation(e.into().context(what.to_string())))
    }
    fn runtime(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into().context(what.to_string())))
    }
}

fn gan_failure(e: GanError, what: &str) -> Failure {
    let input_problem = matches!(
        e,
        GanError::InvalidHyper(_)
            | GanError::InsufficientData { .. }
            | GanError::ContaminatedLabels { .. }
            | GanError::WindowShape { .. }
            | GanError::NonFiniteInput
            | GanError::VersionMismatch { .. }
            | GanError::CorruptFile(_)
    );
    let e = anyhow::Error::from(e).context(what.to_string());
    if input_problem {
        Failure::Validation(e)
    } else {
        Failure::Runtime(e)
    }
}

fn eval_failure(e: EvalError) -> Failure {
    if e.is_validation() {
        Failure::Validation(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

pub fn run(cli: &Cli) -> Outcome<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match &cli.command {
        Command::Zones { topology } => zones(cli, topology.as_deref()),
        Command::Simulate { topology } => simulate(cli, topology.as_deref()),
        Command::Train { data, hyper } => train_zones(cli, data, hyper, exec),
        Command::Detect { data, models, hyper } => detect(cli, data, models, hyper, exec),
        Command::Eval { hyper } => evaluate(cli, hyper, exec),
        Command::Export {
            artifact,
            workspace,
            zone,
            case,
            bins,
            output,
        } => {
            let artifact: Artifact = artifact.parse().map_err(eval_failure)?;
            let req = ExportRequest {
                artifact,
                zone: *zone,
                case: case.clone(),
                bins: *bins,
            };
            let workspace = workspace.clone().unwrap_or_else(|| cli.out_dir.clone());
            let name = match artifact {
                Artifact::Histogram => "histogram",
                Artifact::LossCurve => "losscurve",
                Artifact::DeltaZeta => "delta-zeta",
            };
            let output = output
                .clone()
                .unwrap_or_else(|| cli.out_dir.join(format!("{name}.csv")));
            if let Some(parent) = output.parent() {
                fs::create_dir_all(parent).runtime("creating output directory")?;
            }
            export_plot_data(&workspace, &req, &output).map_err(|e| match e {
                EvalError::MissingArtifact(_) => Failure::Validation(e.into()),
                other => eval_failure(other),
            })?;
            log::info!("wrote {}", output.display());
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).invalid(&format!("reading {}", path.display()))
}

fn load_feeder(path: Option<&Path>) -> Outcome<FeederGraph> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => BUNDLED_FEEDER.to_string(),
    };
    load_topology(&text).invalid("loading topology")
}

fn create(path: &Path) -> Outcome<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).runtime(&format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).runtime(&format!("creating {}", path.display()))?,
    ))
}

fn zones(cli: &Cli, topology: Option<&Path>) -> Outcome<()> {
    let g = load_feeder(topology)?;
    let seed = cli.seed.unwrap_or(ExperimentConfig::default().seed);
    let zs = select_zones(&g, &mut rng_for(seed, STREAM_ZONES)).invalid("selecting zones")?;
    let export = ZoneSetExport::new(&g, &zs).runtime("building zone export")?;
    let path = cli.out_dir.join("zones.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &export)
        .map_err(anyhow::Error::from)
        .and_then(|_| w.flush().map_err(Into::into))
        .runtime("writing zones")?;
    for z in &export.zones {
        println!(
            "zone {}: nodes {} -> {}, {} branches",
            z.index,
            z.upstream,
            z.downstream,
            z.branches.len()
        );
    }
    println!(
        "entropy {:.6} over {} branches in {} classes",
        export.entropy,
        export.branch_count,
        export.partition.len()
    );
    log::info!("wrote {}", path.display());
    Ok(())
}

fn simulate(cli: &Cli, topology: Option<&Path>) -> Outcome<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Validation(anyhow!("simulate needs --config <scenario.toml>")))?;
    let mut scenario = ScenarioConfig::from_toml(&read_text(path)?).invalid("parsing scenario")?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let topo: Option<PathBuf> = topology
        .map(Path::to_path_buf)
        .or_else(|| scenario.topology.as_ref().map(|p| base.join(p)));
    let g = load_feeder(topo.as_deref())?;
    let ms = scenario.generate(&g).invalid("generating measurements")?;
    let out = cli.out_dir.join("measurements.csv");
    let mut w = create(&out)?;
    write_measurements(&ms, &mut w).runtime("writing measurements")?;
    w.flush().runtime("writing measurements")?;
    let outage_steps = ms.labels.iter().filter(|l| l.is_outage()).count();
    println!(
        "{} steps, {} observable nodes, {} outage steps",
        ms.len(),
        ms.nodes.len(),
        outage_steps
    );
    log::info!("wrote {}", out.display());
    Ok(())
}

/// Experiment config from `--config` (or defaults) with flag overrides.
fn experiment_config(cli: &Cli, hyper: &HyperArgs) -> Outcome<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (
            ExperimentConfig::from_toml(&read_text(p)?).map_err(eval_failure)?,
            p.parent().unwrap_or(Path::new(".")).to_path_buf(),
        ),
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.gan.seed = s;
    }
    if let Some(v) = hyper.window {
        cfg.window = v;
    }
    if let Some(v) = hyper.lambda {
        cfg.gan.lambda = v;
    }
    if let Some(v) = hyper.h {
        cfg.detection.h = Some(v);
    }
    if let Some(v) = hyper.learning_rate {
        cfg.gan.learning_rate = v;
    }
    if let Some(v) = hyper.batch_size {
        cfg.gan.batch_size = v;
    }
    if let Some(v) = hyper.n_d {
        cfg.gan.n_d = v;
    }
    if let Some(v) = hyper.latent_dim {
        cfg.gan.latent_dim = v;
    }
    if let Some(v) = hyper.max_iterations {
        cfg.gan.max_iterations = v;
    }
    if let Some(v) = hyper.min_iterations {
        cfg.gan.min_iterations = v;
    }
    cfg.validate().map_err(eval_failure)?;
    Ok((cfg, base))
}

fn load_data(data: &DataArgs) -> Outcome<(MeasurementSeries, ZoneSet)> {
    let file = fs::File::open(&data.measurements).invalid(&format!("opening {}", data.measurements.display()))?;
    let ms = read_measurements(file).invalid("reading measurements")?;
    let export: ZoneSetExport = serde_json::from_str(&read_text(&data.zones)?).invalid("parsing zone file")?;
    let zs = export.to_zone_set().invalid("loading zones")?;
    Ok((ms, zs))
}

fn zone_windows(ms: &MeasurementSeries, zs: &ZoneSet, t: usize) -> Outcome<Vec<Vec<MeasurementWindow>>> {
    zs.iter()
        .map(|z| window_stream(ms, z, t).invalid(&format!("windowing zone {}", z.index)))
        .collect()
}

fn model_path(dir: &Path, zone: usize, season: impl std::fmt::Display) -> PathBuf {
    dir.join(format!("zone{zone}-{season}.json"))
}

fn train_zones(cli: &Cli, data: &DataArgs, hyper: &HyperArgs, exec: Exec) -> Outcome<()> {
    let (cfg, _) = experiment_config(cli, hyper)?;
    let (ms, zs) = load_data(data)?;
    let windows = zone_windows(&ms, &zs, cfg.window)?;

    // Only windows that are normal in every zone are used, and every zone
    // shares one random train/validation assignment.
    let normal: Vec<usize> = (0..windows[0].len())
        .filter(|&k| windows.iter().all(|w| w[k].label == Label::Normal))
        .collect();
    let dropped = windows[0].len() - normal.len();
    if dropped > 0 {
        log::warn!("skipping {dropped} windows that overlap labeled events");
    }
    let mut order = normal;
    order.shuffle(&mut rng_for(cfg.seed, STREAM_SPLIT));
    let cut =
        (cfg.split[0] / (cfg.split[0] + cfg.split[1]).max(f64::MIN_POSITIVE) * order.len() as f64).round() as usize;
    let (mut fit, mut val) = (order[..cut].to_vec(), order[cut..].to_vec());
    fit.sort_unstable();
    val.sort_unstable();

    log::info!("training {} zones on {} windows each", zs.len(), fit.len());
    let results = exec.map_range(zs.len(), |i| {
        let train_w: Vec<MeasurementWindow> = fit.iter().map(|&k| windows[i][k].clone()).collect();
        let mut rng = rng_for(cfg.seed, STREAM_TRAIN + i as u64);
        train(&train_w, &cfg.gan, &cfg.inversion, &mut rng, exec)
    });

    let dir = cli.out_dir.join("models");
    fs::create_dir_all(&dir).runtime("creating model directory")?;
    for (i, r) in results.into_iter().enumerate() {
        let (mut model, log) = r.map_err(|e| gan_failure(e, &format!("training zone {i}")))?;
        model.training_meta.seed = cfg.seed;
        let cal = model.calibration.expect("train calibrates");
        let h = match cfg.detection.h {
            Some(h) => h,
            None => {
                let scores = exec
                    .map(&val, |&k| model.score(&windows[i][k], &cfg.inversion).map(|s| s.total))
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| gan_failure(e, "scoring validation windows"))?;
                choose_threshold(&scores, &cal, cfg.detection.h_min, cfg.detection.target_fpr)
            }
        };
        model.threshold = Some(h);
        save_model(&model, &model_path(&dir, i, model.season)).map_err(|e| gan_failure(e, "saving model"))?;
        let mut w = create(&cli.out_dir.join(format!("losscurve-zone{i}.csv")))?;
        log.write_csv(&mut w)
            .and_then(|_| w.flush())
            .runtime("writing loss curve")?;
        let (d, g) = log.trailing_mean(500).unwrap_or((f64::NAN, f64::NAN));
        println!(
            "zone {i}: {} iterations, converged {}, delta_D {d:.3}, delta_G {g:.3}, mu {:.4}, sigma {:.4}, h {h:.3}",
            log.records.len(),
            log.converged,
            cal.mean,
            cal.std
        );
    }
    Ok(())
}

fn detect(cli: &Cli, data: &DataArgs, models_dir: &Path, hyper: &HyperArgs, exec: Exec) -> Outcome<()> {
    let (cfg, _) = experiment_config(cli, hyper)?;
    let (ms, zs) = load_data(data)?;
    let mut models: BTreeMap<usize, GanModel> = BTreeMap::new();
    for z in zs.iter() {
        let path = model_path(models_dir, z.index, ms.season);
        if !path.exists() {
            return Err(Failure::Validation(anyhow!(
                "no {} model for zone {} ({})",
                ms.season,
                z.index,
                path.display()
            )));
        }
        let m = load_model(&path).map_err(|e| gan_failure(e, &format!("loading {}", path.display())))?;
        models.insert(z.index, m);
    }
    let window = models.values().next().map(|m| m.window).unwrap_or(cfg.window);
    let windows = zone_windows(&ms, &zs, window)?;
    let stream = StreamConfig {
        h: cfg.detection.h,
        inversion: cfg.inversion.clone(),
        gate: cfg.detection.gate,
    };
    let reports = run_stream(&zs, &models, &windows, &stream, exec).map_err(|e| {
        let e = anyhow::Error::from(e).context("scoring stream");
        Failure::Runtime(e)
    })?;
    let path = cli.out_dir.join("reports.jsonl");
    let mut w = create(&path)?;
    write_reports(&reports, &mut w)
        .and_then(|_| w.flush())
        .runtime("writing reports")?;
    let detections = reports.iter().filter(|r| r.is_detection()).count();
    let dismissed = reports.iter().filter(|r| r.dismissed_as_bad_data).count();
    println!(
        "{} reports, {detections} detections, {dismissed} dismissed as bad data",
        reports.len()
    );
    log::info!("wrote {}", path.display());
    Ok(())
}

fn evaluate(cli: &Cli, hyper: &HyperArgs, exec: Exec) -> Outcome<()> {
    let (cfg, base) = experiment_config(cli, hyper)?;
    let out = run_experiment_in_memory(&cfg, &base, exec).map_err(eval_failure)?;
    write_artifacts(&out, &cli.out_dir).map_err(eval_failure)?;
    let mut table = Vec::new();
    write_metrics(&out, &mut table).runtime("formatting metrics")?;
    print!("{}", String::from_utf8_lossy(&table));
    log::info!("wrote artifacts to {}", cli.out_dir.display());
    Ok(())
}
