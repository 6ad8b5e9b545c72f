//! Combines per-zone verdicts into outage reports: pick the most specific
//! abnormal zone, subtract the zones nested inside it, and dismiss detections
//! that the enclosing zones do not corroborate.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::BranchId;
use crate::gan::{AnomalyScore, GanError, GanModel, InversionConfig};
use crate::par::Exec;
use crate::sim::Season;
use crate::window::MeasurementWindow;
use crate::zones::ZoneSet;

/// Threshold factor used when neither the configuration nor the model
/// supplies one.
pub const DEFAULT_H: f64 = 3.0;

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("expected one verdict per zone ({expected}), got {found}")]
    VerdictCountMismatch { expected: usize, found: usize },
    #[error("verdict {position} belongs to zone {found}, expected zone {expected}")]
    VerdictOrder {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("no model for zone {zone}")]
    MissingModel { zone: usize },
    #[error("model for zone {zone} was trained on {model} data, window is {window}")]
    SeasonMismatch { zone: usize, model: Season, window: Season },
    #[error("zone {zone} window stream has {found} windows, expected {expected}")]
    StreamLength { zone: usize, expected: usize, found: usize },
    #[error(transparent)]
    Gan(#[from] GanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneVerdict {
    pub zone: usize,
    pub score: AnomalyScore,
    pub abnormal: bool,
    pub timestamp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub timestamp: usize,
    pub selected_zone: Option<usize>,
    pub candidate_branches: BTreeSet<BranchId>,
    pub dismissed_as_bad_data: bool,
    /// Enclosing zones consulted by the bad-data gate, nearest first.
    pub redundancy_used: Vec<usize>,
    /// Set when the selected zone has no enclosing zone to consult.
    pub gate_skipped: bool,
    pub verdicts: Vec<ZoneVerdict>,
}

impl DetectionReport {
    fn empty(timestamp: usize, verdicts: &[ZoneVerdict]) -> Self {
        DetectionReport {
            timestamp,
            selected_zone: None,
            candidate_branches: BTreeSet::new(),
            dismissed_as_bad_data: false,
            redundancy_used: Vec::new(),
            gate_skipped: false,
            verdicts: verdicts.to_vec(),
        }
    }

    /// True when the report localizes an outage.
    pub fn is_detection(&self) -> bool {
        self.selected_zone.is_some() && !self.dismissed_as_bad_data
    }
}

fn check_verdicts(zs: &ZoneSet, verdicts: &[ZoneVerdict]) -> Result<(), CoordError> {
    if verdicts.len() != zs.len() {
        return Err(CoordError::VerdictCountMismatch {
            expected: zs.len(),
            found: verdicts.len(),
        });
    }
    for (i, (v, z)) in verdicts.iter().zip(zs.iter()).enumerate() {
        if v.zone != z.index {
            return Err(CoordError::VerdictOrder {
                position: i,
                expected: z.index,
                found: v.zone,
            });
        }
    }
    Ok(())
}

/// Branches of zone `a` not covered by any later zone.
pub fn candidate_branches(zs: &ZoneSet, a: usize) -> BTreeSet<BranchId> {
    let later: BTreeSet<BranchId> = zs.zones()[a + 1..]
        .iter()
        .flat_map(|z| z.branches.iter().copied())
        .collect();
    zs.zones()[a].branches.difference(&later).copied().collect()
}

fn report_for(zs: &ZoneSet, a: usize, verdicts: &[ZoneVerdict]) -> DetectionReport {
    let mut r = DetectionReport::empty(verdicts[a].timestamp, verdicts);
    r.selected_zone = Some(a);
    r.candidate_branches = candidate_branches(zs, a);
    r
}

fn timestamp_of(verdicts: &[ZoneVerdict]) -> usize {
    verdicts.first().map(|v| v.timestamp).unwrap_or(0)
}

/// Select the highest-ordered abnormal zone and its candidate branches.
pub fn coordinate(zs: &ZoneSet, verdicts: &[ZoneVerdict]) -> Result<DetectionReport, CoordError> {
    check_verdicts(zs, verdicts)?;
    Ok(match verdicts.iter().rposition(|v| v.abnormal) {
        Some(a) => report_for(zs, a, verdicts),
        None => DetectionReport::empty(timestamp_of(verdicts), verdicts),
    })
}

/// One report per disjoint abnormal chain: every abnormal zone that encloses
/// no other abnormal zone is selected. Reports are ordered by descending zone
/// index, so the first one matches [`coordinate`]. Returns a single empty
/// report when nothing is abnormal.
pub fn coordinate_all(zs: &ZoneSet, verdicts: &[ZoneVerdict]) -> Result<Vec<DetectionReport>, CoordError> {
    check_verdicts(zs, verdicts)?;
    let abnormal: Vec<usize> = (0..zs.len()).filter(|&i| verdicts[i].abnormal).collect();
    let deepest: Vec<usize> = abnormal
        .iter()
        .rev()
        .copied()
        .filter(|&a| {
            !abnormal
                .iter()
                .any(|&j| j > a && zs.zones()[a].encloses(&zs.zones()[j]))
        })
        .collect();
    if deepest.is_empty() {
        return Ok(vec![DetectionReport::empty(timestamp_of(verdicts), verdicts)]);
    }
    Ok(deepest.into_iter().map(|a| report_for(zs, a, verdicts)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Upper bound on enclosing zones consulted; `None` consults all of them.
    pub max_redundancy: Option<usize>,
}

/// Dismiss the detection if any consulted enclosing zone is normal.
pub fn bad_data_gate(
    zs: &ZoneSet,
    mut report: DetectionReport,
    verdicts: &[ZoneVerdict],
    cfg: GateConfig,
) -> DetectionReport {
    let Some(a) = report.selected_zone else {
        return report;
    };
    let mut enclosing = zs.enclosing(a);
    if let Some(cap) = cfg.max_redundancy {
        enclosing.truncate(cap);
    }
    if enclosing.is_empty() {
        log::warn!(
            "zone {a} has no enclosing zone; bad-data gate skipped at t={}",
            report.timestamp
        );
        report.gate_skipped = true;
        return report;
    }
    if enclosing.iter().any(|&r| !verdicts[r].abnormal) {
        report.dismissed_as_bad_data = true;
        report.candidate_branches.clear();
    }
    report.redundancy_used = enclosing;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Threshold factor; falls back to each model's own, then [`DEFAULT_H`].
    pub h: Option<f64>,
    pub inversion: InversionConfig,
    pub gate: GateConfig,
}

impl StreamConfig {
    pub fn h_for(&self, model: &GanModel) -> f64 {
        self.h.or(model.threshold).unwrap_or(DEFAULT_H)
    }
}

/// Score every zone's windows, then coordinate and gate per timestep.
/// `windows[i]` is zone `i`'s stream; all streams must be aligned.
pub fn score_streams(
    zs: &ZoneSet,
    models: &BTreeMap<usize, GanModel>,
    windows: &[Vec<MeasurementWindow>],
    cfg: &StreamConfig,
    exec: Exec,
) -> Result<Vec<Vec<ZoneVerdict>>, CoordError> {
    if windows.len() != zs.len() {
        return Err(CoordError::VerdictCountMismatch {
            expected: zs.len(),
            found: windows.len(),
        });
    }
    let steps = windows.first().map(|w| w.len()).unwrap_or(0);
    let mut jobs = Vec::with_capacity(zs.len() * steps);
    for (i, stream) in windows.iter().enumerate() {
        let model = models.get(&i).ok_or(CoordError::MissingModel { zone: i })?;
        if stream.len() != steps {
            return Err(CoordError::StreamLength {
                zone: i,
                expected: steps,
                found: stream.len(),
            });
        }
        for w in stream {
            if w.season != model.season {
                return Err(CoordError::SeasonMismatch {
                    zone: i,
                    model: model.season,
                    window: w.season,
                });
            }
            jobs.push((i, w));
        }
    }
    let scored = exec.map(&jobs, |&(i, w)| {
        let model = &models[&i];
        let s = model.score(w, &cfg.inversion)?;
        let abnormal = model.is_abnormal(&s, cfg.h_for(model))?;
        Ok::<_, GanError>(ZoneVerdict {
            zone: i,
            score: s,
            abnormal,
            timestamp: w.timestamp,
        })
    });
    let mut per_zone: Vec<Vec<ZoneVerdict>> = vec![Vec::with_capacity(steps); zs.len()];
    for (v, &(i, _)) in scored.into_iter().zip(&jobs) {
        per_zone[i].push(v?);
    }
    Ok((0..steps)
        .map(|t| per_zone.iter().map(|z| z[t].clone()).collect())
        .collect())
}

/// Reports for already-scored verdict rows, one timestep at a time.
pub fn reports_from_verdicts(
    zs: &ZoneSet,
    rows: &[Vec<ZoneVerdict>],
    gate: GateConfig,
) -> Result<Vec<DetectionReport>, CoordError> {
    let mut out = Vec::with_capacity(rows.len());
    for verdicts in rows {
        for r in coordinate_all(zs, verdicts)? {
            out.push(bad_data_gate(zs, r, verdicts, gate));
        }
    }
    Ok(out)
}

pub fn run_stream(
    zs: &ZoneSet,
    models: &BTreeMap<usize, GanModel>,
    windows: &[Vec<MeasurementWindow>],
    cfg: &StreamConfig,
    exec: Exec,
) -> Result<Vec<DetectionReport>, CoordError> {
    let rows = score_streams(zs, models, windows, cfg, exec)?;
    reports_from_verdicts(zs, &rows, cfg.gate)
}

/// First line of every report stream.
pub const REPORT_FORMAT: &str = "# outage-reports v1";

/// Flat record written per report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub timestamp: usize,
    pub zone: Option<usize>,
    pub candidate_branches: Vec<u32>,
    pub dismissed_as_bad_data: bool,
    pub gate_skipped: bool,
    pub redundancy_used: Vec<usize>,
    pub scores: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub zone: usize,
    pub residual: f64,
    pub discr: f64,
    pub total: f64,
    pub abnormal: bool,
}

impl From<&DetectionReport> for ReportRecord {
    fn from(r: &DetectionReport) -> Self {
        ReportRecord {
            timestamp: r.timestamp,
            zone: r.selected_zone,
            candidate_branches: r.candidate_branches.iter().map(|b| b.0).collect(),
            dismissed_as_bad_data: r.dismissed_as_bad_data,
            gate_skipped: r.gate_skipped,
            redundancy_used: r.redundancy_used.clone(),
            scores: r
                .verdicts
                .iter()
                .map(|v| ScoreRecord {
                    zone: v.zone,
                    residual: v.score.residual,
                    discr: v.score.discr,
                    total: v.score.total,
                    abnormal: v.abnormal,
                })
                .collect(),
        }
    }
}

/// Line-delimited JSON, one record per report, after a schema line.
pub fn write_reports<W: Write>(reports: &[DetectionReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_FORMAT}")?;
    for r in reports {
        serde_json::to_writer(&mut out, &ReportRecord::from(r))?;
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOutcome {
    pub trials: usize,
    pub misclassified: usize,
}

impl MonteCarloOutcome {
    pub fn rate(&self) -> f64 {
        self.misclassified as f64 / self.trials as f64
    }
}

/// Inject bad data that always trips `target`, let every other zone raise an
/// independent false alarm with probability `eta`, and count how often the
/// coordinator still reports an outage.
pub fn bad_data_monte_carlo(
    zs: &ZoneSet,
    target: usize,
    eta: f64,
    trials: usize,
    gate: GateConfig,
    seed: u64,
    exec: Exec,
) -> Result<MonteCarloOutcome, CoordError> {
    if target >= zs.len() {
        return Err(CoordError::VerdictCountMismatch {
            expected: zs.len(),
            found: target + 1,
        });
    }
    let dummy = AnomalyScore {
        residual: 0.0,
        discr: 0.0,
        total: 0.0,
        z_star: Vec::new(),
    };
    let misclassified = exec.map_reduce(
        trials,
        0usize,
        |trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let verdicts: Vec<ZoneVerdict> = zs
                .iter()
                .map(|z| ZoneVerdict {
                    zone: z.index,
                    score: dummy.clone(),
                    abnormal: z.index == target || rng.random_bool(eta),
                    timestamp: trial,
                })
                .collect();
            let report = coordinate(zs, &verdicts).expect("verdicts are built from the zone set");
            let report = bad_data_gate(zs, report, &verdicts, gate);
            usize::from(report.selected_zone == Some(target) && !report.dismissed_as_bad_data)
        },
        |a, b| a + b,
    );
    Ok(MonteCarloOutcome { trials, misclassified })
}
