use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::experiment::{DELTA_ZETA_FORMAT, SCORES_FORMAT};
use super::{EvalError, Stage};
use crate::gan::LOSS_CURVE_FORMAT;

pub const HISTOGRAM_FORMAT: &str = "# outage-histogram v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Histogram,
    LossCurve,
    DeltaZeta,
}

impl FromStr for Artifact {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "histogram" => Ok(Artifact::Histogram),
            "losscurve" => Ok(Artifact::LossCurve),
            "delta-zeta" => Ok(Artifact::DeltaZeta),
            other => Err(EvalError::Config(format!("unknown artifact {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRequest {
    pub artifact: Artifact,
    pub zone: usize,
    /// Case whose scores feed a histogram.
    pub case: String,
    pub bins: usize,
}

impl ExportRequest {
    pub fn new(artifact: Artifact) -> Self {
        ExportRequest {
            artifact,
            zone: 0,
            case: "medium".into(),
            bins: 30,
        }
    }
}

fn read_artifact(path: &Path, header: &str) -> Result<Vec<Vec<String>>, EvalError> {
    let text = fs::read_to_string(path).map_err(|_| EvalError::MissingArtifact(path.display().to_string()))?;
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.starts_with(header)) {
        return Err(EvalError::MissingArtifact(format!(
            "{} lacks a {header:?} header",
            path.display()
        )));
    }
    lines.next();
    Ok(lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn num<T: FromStr>(s: &str, path: &Path) -> Result<T, EvalError> {
    s.parse()
        .map_err(|_| EvalError::MissingArtifact(format!("{}: bad value {s:?}", path.display())))
}

/// Normal and outage score counts over equal-width bins spanning the
/// observed range of the zone's scores.
pub fn histogram(normal: &[f64], outage: &[f64], bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let all = normal.iter().chain(outage);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || bins == 0 {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut rows: Vec<(f64, f64, usize, usize)> = (0..bins)
        .map(|i| {
            (
                lo + i as f64 * width,
                if i + 1 == bins {
                    hi.max(lo + width)
                } else {
                    lo + (i + 1) as f64 * width
                },
                0,
                0,
            )
        })
        .collect();
    let bin = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in normal {
        rows[bin(v)].2 += 1;
    }
    for &v in outage {
        rows[bin(v)].3 += 1;
    }
    rows
}

/// Turn an artifact from an experiment directory into a plot-ready file.
pub fn export_plot_data(workspace: &Path, req: &ExportRequest, out: &Path) -> Result<(), EvalError> {
    let mut text = String::new();
    match req.artifact {
        Artifact::LossCurve => {
            let src = workspace.join(format!("losscurve-zone{}.csv", req.zone));
            read_artifact(&src, LOSS_CURVE_FORMAT)?;
            text = fs::read_to_string(&src).map_err(|e| Stage::Write.wrap(e))?;
        }
        Artifact::Histogram => {
            let src = workspace.join(format!("scores-{}.csv", req.case));
            let (mut normal, mut outage) = (Vec::new(), Vec::new());
            for row in read_artifact(&src, SCORES_FORMAT)? {
                if row.len() != 7 {
                    return Err(EvalError::MissingArtifact(format!("{}: malformed row", src.display())));
                }
                if num::<usize>(&row[0], &src)? != req.zone {
                    continue;
                }
                let total: f64 = num(&row[5], &src)?;
                if row[2] == "1" {
                    outage.push(total);
                } else {
                    normal.push(total);
                }
            }
            if normal.is_empty() && outage.is_empty() {
                return Err(EvalError::MissingArtifact(format!(
                    "no scores for zone {} in {}",
                    req.zone,
                    src.display()
                )));
            }
            text.push_str(&format!("{HISTOGRAM_FORMAT} case={} zone={}\n", req.case, req.zone));
            text.push_str("bin_lo,bin_hi,normal,outage\n");
            for (lo, hi, n, o) in histogram(&normal, &outage, req.bins) {
                text.push_str(&format!("{lo},{hi},{n},{o}\n"));
            }
        }
        Artifact::DeltaZeta => {
            let src = workspace.join("delta-zeta.csv");
            read_artifact(&src, DELTA_ZETA_FORMAT)?;
            text = fs::read_to_string(&src).map_err(|e| Stage::Write.wrap(e))?;
        }
    }
    let mut f = fs::File::create(out).map_err(|e| Stage::Write.wrap(e))?;
    f.write_all(text.as_bytes()).map_err(|e| Stage::Write.wrap(e))?;
    Ok(())
}
