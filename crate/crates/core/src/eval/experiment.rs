use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsRow, METRIC_NAMES};
use super::{EvalError, Stage};
use crate::coordinator::{
    reports_from_verdicts, score_streams, write_reports, DetectionReport, GateConfig, StreamConfig, ZoneVerdict,
};
use crate::feeder::{load_topology, BranchId, FeederGraph, BUNDLED_FEEDER};
use crate::gan::{train, Calibration, GanHyper, GanModel, InversionConfig, TrainingLog};
use crate::par::Exec;
use crate::sim::{generate_series, LoadProfileModel, MeasurementSeries, OutageEvent, ProfileOverrides, Season};
use crate::window::{window_stream, MeasurementWindow};
use crate::zones::{select_zones, ZoneSet, ZoneSetExport};

pub const METRICS_FORMAT: &str = "# outage-metrics v1";
pub const SCORES_FORMAT: &str = "# outage-scores v1";
pub const DELTA_ZETA_FORMAT: &str = "# outage-delta-zeta v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Topology document, relative to the config file. The bundled
    /// 164-node feeder is used when absent.
    pub topology: Option<PathBuf>,
    pub season: Season,
    /// Window length `T` in hourly steps.
    pub window: usize,
    /// Length of the outage-free history, split into train/validation/test.
    pub history_days: usize,
    pub split: [f64; 3],
    /// Length of each outage test series.
    pub test_days: usize,
    pub profile: ProfileOverrides,
    pub gan: GanHyper,
    pub inversion: InversionConfig,
    pub detection: DetectionConfig,
    pub outage: OutageSchedule,
    pub cases: Vec<CaseSpec>,
    /// Branch for the outage used to measure score shifts in zones that do
    /// not contain it.
    pub outside_branch: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Fixed threshold factor for every zone; otherwise chosen per zone.
    pub h: Option<f64>,
    /// Lower bound on the per-zone threshold factor.
    pub h_min: f64,
    /// Largest false-positive rate allowed on validation windows.
    pub target_fpr: f64,
    pub gate: GateConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            h: None,
            h_min: 0.0,
            target_fpr: 0.01,
            gate: GateConfig::default(),
        }
    }
}

/// One outage per test day on the case branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutageSchedule {
    pub start_hour: usize,
    pub duration: usize,
}

impl Default for OutageSchedule {
    fn default() -> Self {
        OutageSchedule {
            start_hour: 8,
            duration: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: String,
    pub branch: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            topology: None,
            season: Season::Summer,
            window: crate::window::DEFAULT_WINDOW,
            history_days: 60,
            split: [0.70, 0.15, 0.15],
            test_days: 14,
            profile: ProfileOverrides::default(),
            gan: GanHyper::default(),
            inversion: InversionConfig::default(),
            detection: DetectionConfig::default(),
            outage: OutageSchedule::default(),
            cases: vec![
                CaseSpec {
                    name: "small".into(),
                    branch: 159,
                },
                CaseSpec {
                    name: "medium".into(),
                    branch: 149,
                },
                CaseSpec {
                    name: "large".into(),
                    branch: 142,
                },
            ],
            outside_branch: Some(33),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.split.iter().any(|&s| !(0.0..=1.0).contains(&s)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("split {:?} must be non-negative and sum to 1", self.split));
        }
        if self.test_days == 0 || self.history_days == 0 {
            return bad("history_days and test_days must be positive".into());
        }
        if self.outage.duration == 0 || self.outage.start_hour + self.outage.duration > 24 {
            return bad("outage must fit inside one day".into());
        }
        if !(0.0..1.0).contains(&self.detection.target_fpr) {
            return bad("target_fpr must lie in [0, 1)".into());
        }
        let mut names: Vec<&str> = self.cases.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("case names must be unique".into());
        }
        if let Some(c) = self.cases.iter().find(|c| {
            c.name.is_empty()
                || !c
                    .name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_')
        }) {
            return bad(format!(
                "case name {:?} must be non-empty and use [A-Za-z0-9_-]",
                c.name
            ));
        }
        self.gan.validate().map_err(|e| EvalError::Config(e.to_string()))
    }
}

/// Scores of one test series, per timestep, with per-zone ground truth.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub branch: BranchId,
    pub lost_demand_kw: f64,
    pub events: Vec<OutageEvent>,
    /// Timestamps (window end) of each row.
    pub timestamps: Vec<usize>,
    /// Window overlaps an outage.
    pub outage_window: Vec<bool>,
    /// Zones whose branch set contains the faulted branch.
    pub affected_zones: Vec<usize>,
    pub rows: Vec<Vec<ZoneVerdict>>,
    pub reports: Vec<DetectionReport>,
}

impl CaseResult {
    /// Ground truth for zone `z` at row `i`.
    pub fn truth(&self, z: usize, i: usize) -> bool {
        self.outage_window[i] && self.affected_zones.contains(&z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaZeta {
    pub zone: usize,
    pub timestamp: usize,
    /// Normal-condition score minus the score with the outage present.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutsideZoneStats {
    pub zone: usize,
    pub windows: usize,
    pub mean_delta: f64,
    pub normal_sigma: f64,
    /// Abnormal verdicts in outage-overlapping windows.
    pub abnormal: usize,
    /// Of those, verdicts that are normal for the same window without the
    /// outage.
    pub induced: usize,
}

#[derive(Debug, Clone)]
pub struct OutsideResult {
    pub branch: BranchId,
    pub deltas: Vec<DeltaZeta>,
    pub zones: Vec<OutsideZoneStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub zone: usize,
    pub upstream: u32,
    pub downstream: u32,
    pub iterations: usize,
    pub converged: bool,
    pub score_mean: f64,
    pub score_std: f64,
    pub h: f64,
    pub validation_fpr: f64,
    pub holdout_fpr: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub feeder: FeederGraph,
    pub zones: ZoneSet,
    pub models: BTreeMap<usize, GanModel>,
    pub logs: Vec<TrainingLog>,
    pub summaries: Vec<ZoneSummary>,
    /// Normal-only test series scored with the same noise as every case.
    pub baseline: Vec<Vec<ZoneVerdict>>,
    pub cases: Vec<CaseResult>,
    pub outside: Option<OutsideResult>,
    pub metrics: Vec<MetricsRow>,
}

impl ExperimentOutput {
    pub fn case(&self, name: &str) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.name == name)
    }
}

/// Independent random stream `stream` derived from the experiment seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub const STREAM_ZONES: u64 = 1;
const STREAM_HISTORY: u64 = 2;
const STREAM_TEST: u64 = 3;
pub const STREAM_SPLIT: u64 = 4;
/// Zone `i` trains on stream `STREAM_TRAIN + i`.
pub const STREAM_TRAIN: u64 = 100;

/// Smallest `h >= h_min` such that at most `target_fpr` of `scores` exceed
/// `mean + h * std`.
pub fn choose_threshold(scores: &[f64], cal: &Calibration, h_min: f64, target_fpr: f64) -> f64 {
    if scores.is_empty() || cal.std <= 0.0 {
        return h_min;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let allowed = (target_fpr * scores.len() as f64).floor() as usize;
    if allowed >= sorted.len() {
        return h_min;
    }
    let h = (sorted[allowed] - cal.mean) / cal.std;
    h.max(h_min)
}

fn windows_for(ms: &MeasurementSeries, zs: &ZoneSet, t: usize) -> Result<Vec<Vec<MeasurementWindow>>, EvalError> {
    zs.iter()
        .map(|z| window_stream(ms, z, t).map_err(|e| Stage::Simulate.wrap(e)))
        .collect()
}

fn load_feeder(cfg: &ExperimentConfig, base: &Path) -> Result<FeederGraph, EvalError> {
    let text = match &cfg.topology {
        Some(p) => {
            let path = base.join(p);
            fs::read_to_string(&path).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?
        }
        None => BUNDLED_FEEDER.to_string(),
    };
    load_topology(&text).map_err(|e| EvalError::Config(e.to_string()))
}

/// Run generate → zones → train → detect → evaluate without touching disk.
/// `base` resolves relative paths in the config.
pub fn run_experiment_in_memory(
    cfg: &ExperimentConfig,
    base: &Path,
    exec: Exec,
) -> Result<ExperimentOutput, EvalError> {
    cfg.validate()?;
    let g = load_feeder(cfg, base)?;
    let zs = select_zones(&g, &mut rng_for(cfg.seed, STREAM_ZONES)).map_err(|e| Stage::Zones.wrap(e))?;
    let lp: LoadProfileModel = cfg.profile.apply(LoadProfileModel::default());
    let t_len = cfg.window;

    let hours = cfg.history_days * 24;
    let history = generate_series(
        &g,
        &lp,
        cfg.season,
        hours,
        &[],
        &[],
        &mut rng_for(cfg.seed, STREAM_HISTORY),
    )
    .map_err(|e| Stage::Simulate.wrap(e))?;
    let hist_windows = windows_for(&history, &zs, t_len)?;
    // Random train/validation/test assignment of window positions, shared by
    // every zone so the subsets line up in time.
    let n_hist = hist_windows[0].len();
    let mut order: Vec<usize> = (0..n_hist).collect();
    order.shuffle(&mut rng_for(cfg.seed, STREAM_SPLIT));
    let cut1 = (cfg.split[0] * n_hist as f64).round() as usize;
    let cut2 = ((cfg.split[0] + cfg.split[1]) * n_hist as f64).round() as usize;
    let mut parts = [
        order[..cut1].to_vec(),
        order[cut1..cut2].to_vec(),
        order[cut2..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    let segment = |zone: usize, part: usize| -> Vec<MeasurementWindow> {
        parts[part].iter().map(|&k| hist_windows[zone][k].clone()).collect()
    };

    log::info!("training {} zone models", zs.len());
    let trained = exec.map_range(zs.len(), |i| {
        let train_w = segment(i, 0);
        let mut rng = rng_for(cfg.seed, STREAM_TRAIN + i as u64);
        train(&train_w, &cfg.gan, &cfg.inversion, &mut rng, exec)
    });
    let mut models = BTreeMap::new();
    let mut logs = Vec::new();
    let mut summaries = Vec::new();
    for (i, r) in trained.into_iter().enumerate() {
        let (mut model, log) = r.map_err(|e| Stage::Train.wrap(e))?;
        model.training_meta.seed = cfg.seed;
        let cal = model.calibration.expect("train calibrates");
        let score_all = |ws: Vec<MeasurementWindow>| -> Result<Vec<f64>, EvalError> {
            exec.map(&ws, |w| model.score(w, &cfg.inversion).map(|s| s.total))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Stage::Detect.wrap(e))
        };
        let val = score_all(segment(i, 1))?;
        let hold = score_all(segment(i, 2))?;
        let h = match cfg.detection.h {
            Some(h) => h,
            None => choose_threshold(&val, &cal, cfg.detection.h_min, cfg.detection.target_fpr),
        };
        model.threshold = Some(h);
        let fpr = |s: &[f64]| {
            if s.is_empty() {
                0.0
            } else {
                s.iter().filter(|&&v| v > cal.mean + h * cal.std).count() as f64 / s.len() as f64
            }
        };
        let z = zs.get(i).expect("zone index");
        summaries.push(ZoneSummary {
            zone: i,
            upstream: z.upstream.0,
            downstream: z.downstream.0,
            iterations: log.records.len(),
            converged: log.converged,
            score_mean: cal.mean,
            score_std: cal.std,
            h,
            validation_fpr: fpr(&val),
            holdout_fpr: fpr(&hold),
        });
        models.insert(i, model);
        logs.push(log);
    }

    let stream_cfg = StreamConfig {
        h: cfg.detection.h,
        inversion: cfg.inversion.clone(),
        gate: cfg.detection.gate,
    };
    let horizon = cfg.test_days * 24;
    let simulate = |events: &[OutageEvent]| {
        generate_series(
            &g,
            &lp,
            cfg.season,
            horizon,
            events,
            &[],
            &mut rng_for(cfg.seed, STREAM_TEST),
        )
        .map_err(|e| Stage::Simulate.wrap(e))
    };
    let score_series = |ms: &MeasurementSeries| -> Result<Vec<Vec<ZoneVerdict>>, EvalError> {
        let ws = windows_for(ms, &zs, t_len)?;
        score_streams(&zs, &models, &ws, &stream_cfg, exec).map_err(|e| Stage::Detect.wrap(e))
    };
    let daily = |branch: BranchId| -> Result<Vec<OutageEvent>, EvalError> {
        (0..cfg.test_days)
            .map(|d| OutageEvent::new(&g, branch, d * 24 + cfg.outage.start_hour, cfg.outage.duration))
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::Config(e.to_string()))
    };
    let overlaps = |events: &[OutageEvent], end: usize| {
        let start = end + 1 - t_len;
        events.iter().any(|e| e.start <= end && start < e.end())
    };

    log::info!("scoring normal baseline");
    let baseline = score_series(&simulate(&[])?)?;

    let mut cases = Vec::new();
    for spec in &cfg.cases {
        log::info!("scoring case {}", spec.name);
        let branch = BranchId(spec.branch);
        let events = daily(branch)?;
        let rows = score_series(&simulate(&events)?)?;
        let reports = reports_from_verdicts(&zs, &rows, cfg.detection.gate).map_err(|e| Stage::Detect.wrap(e))?;
        let timestamps: Vec<usize> = rows.iter().map(|r| r[0].timestamp).collect();
        cases.push(CaseResult {
            name: spec.name.clone(),
            branch,
            lost_demand_kw: events[0].lost_demand,
            outage_window: timestamps.iter().map(|&t| overlaps(&events, t)).collect(),
            timestamps,
            affected_zones: zs.covering(branch),
            events,
            rows,
            reports,
        });
    }

    let outside = match cfg.outside_branch {
        None => None,
        Some(b) => {
            log::info!("scoring outside-zone outage on branch {b}");
            let branch = BranchId(b);
            let events = daily(branch)?;
            let rows = score_series(&simulate(&events)?)?;
            let inside = zs.covering(branch);
            let mut deltas = Vec::new();
            let mut stats = Vec::new();
            for z in (0..zs.len()).filter(|z| !inside.contains(z)) {
                let mut d = Vec::new();
                let (mut abnormal, mut induced) = (0, 0);
                for (row, base) in rows.iter().zip(&baseline) {
                    if overlaps(&events, row[z].timestamp) {
                        let delta = base[z].score.total - row[z].score.total;
                        d.push(delta);
                        abnormal += usize::from(row[z].abnormal);
                        induced += usize::from(row[z].abnormal && !base[z].abnormal);
                        deltas.push(DeltaZeta {
                            zone: z,
                            timestamp: row[z].timestamp,
                            delta,
                        });
                    }
                }
                stats.push(OutsideZoneStats {
                    zone: z,
                    windows: d.len(),
                    mean_delta: if d.is_empty() {
                        0.0
                    } else {
                        d.iter().sum::<f64>() / d.len() as f64
                    },
                    normal_sigma: models[&z].score_std().unwrap_or(0.0),
                    abnormal,
                    induced,
                });
            }
            Some(OutsideResult {
                branch,
                deltas,
                zones: stats,
            })
        }
    };

    let mut metrics = Vec::new();
    for c in &cases {
        for &z in &c.affected_zones {
            let labels: Vec<bool> = (0..c.rows.len()).map(|i| c.truth(z, i)).collect();
            let scores: Vec<f64> = c.rows.iter().map(|r| r[z].score.total).collect();
            let model = &models[&z];
            let cal = model.calibration.expect("calibrated");
            let threshold = cal.mean + stream_cfg.h_for(model) * cal.std;
            let m = compute_metrics(&labels, &scores, threshold).map_err(|e| Stage::Evaluate.wrap(e))?;
            metrics.push(MetricsRow {
                case: c.name.clone(),
                zone: z,
                metrics: m,
            });
        }
    }

    Ok(ExperimentOutput {
        feeder: g,
        zones: zs,
        models,
        logs,
        summaries,
        baseline,
        cases,
        outside,
        metrics,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, EvalError> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Stage::Write.wrap(e))?,
    ))
}

pub fn write_metrics<W: Write>(out: &ExperimentOutput, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_FORMAT}")?;
    writeln!(w, "case,branch,lost_kw,zone,tp,fp,tn,fn,{}", METRIC_NAMES.join(","))?;
    for row in &out.metrics {
        let c = out.case(&row.case).expect("metrics rows reference cases");
        let m = &row.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.case,
            c.branch.0,
            c.lost_demand_kw,
            row.zone,
            m.counts.tp,
            m.counts.fp,
            m.counts.tn,
            m.counts.fn_,
            m.accuracy,
            m.recall,
            m.precision,
            m.f1,
            m.auc
        )?;
    }
    Ok(())
}

fn write_scores<W: Write>(c: &CaseResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SCORES_FORMAT}")?;
    writeln!(w, "zone,timestamp,outage,residual,discr,total,abnormal")?;
    for (i, row) in c.rows.iter().enumerate() {
        for v in row {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                v.zone,
                v.timestamp,
                u8::from(c.truth(v.zone, i)),
                v.score.residual,
                v.score.discr,
                v.score.total,
                u8::from(v.abnormal)
            )?;
        }
    }
    Ok(())
}

/// Run the experiment and write every artifact under `out_dir`.
pub fn run_experiment(config_path: &Path, out_dir: &Path, exec: Exec) -> Result<ExperimentOutput, EvalError> {
    let text =
        fs::read_to_string(config_path).map_err(|e| EvalError::Config(format!("{}: {e}", config_path.display())))?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out = run_experiment_in_memory(&cfg, base, exec)?;
    write_artifacts(&out, out_dir)?;
    Ok(out)
}

pub fn write_artifacts(out: &ExperimentOutput, dir: &Path) -> Result<(), EvalError> {
    let io = |e: std::io::Error| Stage::Write.wrap(e);
    fs::create_dir_all(dir.join("models")).map_err(io)?;

    let zones = ZoneSetExport::new(&out.feeder, &out.zones).map_err(|e| Stage::Write.wrap(e))?;
    fs::write(
        dir.join("zones.json"),
        serde_json::to_string_pretty(&zones).expect("serializable"),
    )
    .map_err(io)?;
    for (i, m) in &out.models {
        crate::gan::save_model(m, &dir.join("models").join(format!("zone{i}-{}.json", m.season)))
            .map_err(|e| Stage::Write.wrap(e))?;
    }
    for (i, log) in out.logs.iter().enumerate() {
        let mut w = create(&dir.join(format!("losscurve-zone{i}.csv")))?;
        log.write_csv(&mut w).and_then(|_| w.flush()).map_err(io)?;
    }
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&out.summaries).expect("serializable"),
    )
    .map_err(io)?;

    let mut w = create(&dir.join("metrics.csv"))?;
    write_metrics(out, &mut w).and_then(|_| w.flush()).map_err(io)?;
    for c in &out.cases {
        let mut w = create(&dir.join(format!("reports-{}.jsonl", c.name)))?;
        write_reports(&c.reports, &mut w).and_then(|_| w.flush()).map_err(io)?;
        let mut w = create(&dir.join(format!("scores-{}.csv", c.name)))?;
        write_scores(c, &mut w).and_then(|_| w.flush()).map_err(io)?;
    }
    if let Some(o) = &out.outside {
        let mut w = create(&dir.join("delta-zeta.csv"))?;
        (|| -> std::io::Result<()> {
            writeln!(w, "{DELTA_ZETA_FORMAT} branch={}", o.branch.0)?;
            writeln!(w, "zone,timestamp,delta_zeta,normal_sigma")?;
            for d in &o.deltas {
                let sigma = o
                    .zones
                    .iter()
                    .find(|s| s.zone == d.zone)
                    .map(|s| s.normal_sigma)
                    .unwrap_or(0.0);
                writeln!(w, "{},{},{},{}", d.zone, d.timestamp, d.delta, sigma)?;
            }
            w.flush()
        })()
        .map_err(io)?;
    }
    Ok(())
}
