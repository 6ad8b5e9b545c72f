use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use super::{Label, MeasurementSeries, Season, SimError};
use crate::feeder::NodeId;

/// First line of every measurement file.
pub const MEASUREMENT_FORMAT: &str = "# outage-measurements v1";

/// Write a series as delimited text: a schema line, a header, then one row per
/// (timestamp, node) in timestamp-major order.
pub fn write_measurements<W: Write>(ms: &MeasurementSeries, mut out: W) -> Result<(), SimError> {
    writeln!(out, "{MEASUREMENT_FORMAT} season={}", ms.season)?;
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::MalformedFile(e.to_string());
    w.write_record(["timestamp", "node_id", "kwh", "voltage_pu", "label"])
        .map_err(err)?;
    for t in 0..ms.len() {
        let label = ms.labels[t].to_string();
        for (i, n) in ms.nodes.iter().enumerate() {
            w.write_record([
                t.to_string(),
                n.0.to_string(),
                ms.demand[i][t].to_string(),
                ms.voltage[i][t].to_string(),
                label.clone(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements<R: Read>(input: R) -> Result<MeasurementSeries, SimError> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let season = first
        .trim_end()
        .strip_prefix(MEASUREMENT_FORMAT)
        .and_then(|rest| rest.trim().strip_prefix("season="))
        .ok_or_else(|| SimError::MalformedFile(format!("missing schema line, found {:?}", first.trim_end())))?
        .parse::<Season>()?;

    // timestamp -> (label, node -> (kwh, voltage))
    type Row = (Label, BTreeMap<u32, (f64, f64)>);
    let mut rows: BTreeMap<usize, Row> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(input);
    let bad = |m: String| SimError::MalformedFile(m);
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(format!("row {} has {} fields", line + 1, rec.len())));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("row {}: {e}", line + 1)));
        let t: usize = rec[0].parse().map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let node: u32 = rec[1].parse().map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let label: Label = rec[4].parse()?;
        let entry = rows.entry(t).or_insert_with(|| (label, BTreeMap::new()));
        if entry.0 != label {
            return Err(bad(format!("timestamp {t} carries conflicting labels")));
        }
        if entry.1.insert(node, (num(2)?, num(3)?)).is_some() {
            return Err(bad(format!("duplicate reading for node {node} at {t}")));
        }
    }
    let nodes: Vec<u32> = rows
        .values()
        .next()
        .map(|(_, m)| m.keys().copied().collect())
        .unwrap_or_default();
    let mut voltage = vec![Vec::with_capacity(rows.len()); nodes.len()];
    let mut demand = vec![Vec::with_capacity(rows.len()); nodes.len()];
    let mut labels = Vec::with_capacity(rows.len());
    for (expect, (t, (label, readings))) in rows.into_iter().enumerate() {
        if t != expect {
            return Err(bad(format!("timestamps are not contiguous at {expect}")));
        }
        if readings.keys().ne(nodes.iter()) {
            return Err(bad(format!("timestamp {t} does not cover the same nodes")));
        }
        for (i, (kwh, v)) in readings.into_values().enumerate() {
            demand[i].push(kwh);
            voltage[i].push(v);
        }
        labels.push(label);
    }
    Ok(MeasurementSeries {
        season,
        nodes: nodes.into_iter().map(NodeId).collect(),
        voltage,
        demand,
        labels,
    })
}
