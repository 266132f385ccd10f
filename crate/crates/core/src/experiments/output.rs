use super::{ExperimentError, SweepKind, SweepResult};
use std::fs;
use std::path::{Path, PathBuf};

/// Provenance line written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunHeader {
    pub config_hash: String,
    pub seed: u64,
}

impl RunHeader {
    fn comment(&self, kind: SweepKind) -> String {
        format!(
            "# config_hash={}, seed={}, sweep={}, axis={}, measured={}\n",
            self.config_hash,
            self.seed,
            kind.name(),
            kind.axis_label(),
            kind.measured_label()
        )
    }
}

fn finish(header: String, writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ExperimentError> {
    let body = writer.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
    let mut out = header.into_bytes();
    out.extend(body);
    Ok(out)
}

/// One row per scenario.
pub fn records_csv(result: &SweepResult, header: &RunHeader) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = result.records.first().map_or(0, |r| r.theta.len());
    let n = result.records.first().map_or(0, |r| r.x0.len());
    let mut columns = vec!["level_epsilon".to_string(), "axis_value".into(), "scenario_id".into(), "theta_seed".into()];
    columns.extend((0..p).map(|i| format!("theta_{i}")));
    columns.extend((0..n).map(|i| format!("x0_{i}")));
    columns.extend(["measured_value", "failed", "group_max", "group_min"].map(String::from));
    w.write_record(&columns)?;
    for r in &result.records {
        let agg = result.aggregates.iter().find(|a| a.level == r.level && a.axis_value == r.axis_value);
        let is = |v: Option<f64>| !r.failed && v == Some(r.value);
        let mut row = vec![r.level.to_string(), r.axis_value.to_string(), r.scenario.to_string(), r.theta_seed.to_string()];
        row.extend(r.theta.iter().map(f64::to_string));
        row.extend(r.x0.iter().map(f64::to_string));
        row.push(r.value.to_string());
        row.push(u8::from(r.failed).to_string());
        row.push(u8::from(is(agg.map(|a| a.max))).to_string());
        row.push(u8::from(is(agg.map(|a| a.min))).to_string());
        w.write_record(&row)?;
    }
    finish(header.comment(result.kind), w)
}

/// One row per (level, axis value).
pub fn aggregates_csv(result: &SweepResult, header: &RunHeader) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "level_epsilon",
        "axis_value",
        "count",
        "failures",
        "mean",
        "var",
        "min",
        "max",
        "theoretical_overlay",
    ])?;
    for a in &result.aggregates {
        w.write_record([
            a.level.to_string(),
            a.axis_value.to_string(),
            a.count.to_string(),
            a.failures.to_string(),
            a.mean.to_string(),
            a.variance.to_string(),
            a.min.to_string(),
            a.max.to_string(),
            a.theoretical.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    finish(header.comment(result.kind), w)
}

/// Matplotlib script plotting the aggregates file of a sweep.
///
/// Run with `python3 <stem>_plot.py` from the output directory.
pub fn plot_script(kind: SweepKind) -> String {
    let stem = kind.file_stem();
    let (x, group) = match kind {
        SweepKind::InputPerturb | SweepKind::Ratio => ("level_epsilon", None),
        SweepKind::Scalable => ("product", Some("level_epsilon")),
        SweepKind::Horizon => ("axis_value", Some("level_epsilon")),
    };
    format!(
        r##"# Plots {stem}_aggregates.csv: mean, mean +/- variance, min and max.
# Usage: python3 {stem}_plot.py  (needs matplotlib)
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

with open("{stem}_aggregates.csv") as f:
    rows = [r for r in csv.DictReader(line for line in f if not line.startswith("#"))]

for r in rows:
    for k in ("level_epsilon", "axis_value", "mean", "var", "min", "max"):
        r[k] = float(r[k])
    r["product"] = r["level_epsilon"] * r["axis_value"]

groups = defaultdict(list)
for r in rows:
    groups[{group_key}].append(r)

fig, ax = plt.subplots()
for key, rs in sorted(groups.items()):
    rs.sort(key=lambda r: r["{x}"])
    xs = [r["{x}"] for r in rs]
    label = "" if key is None else f"eps={{key:g}} "
    ax.plot(xs, [r["mean"] for r in rs], "-", label=label + "mean")
    ax.plot(xs, [r["mean"] + r["var"] for r in rs], "--", color="gray")
    ax.plot(xs, [r["mean"] - r["var"] for r in rs], "--", color="gray")
    ax.plot(xs, [r["max"] for r in rs], ":", label=label + "max")
    ax.plot(xs, [r["min"] for r in rs], ":", label=label + "min")
    overlay = [(r["{x}"], float(r["theoretical_overlay"])) for r in rs if r["theoretical_overlay"]]
    if overlay:
        ax.plot(*zip(*overlay), "k-", label=label + "bound")
ax.set_xlabel("{x}")
ax.set_ylabel("{measured}")
ax.legend()
fig.savefig("{stem}.png", dpi=150)
"##,
        stem = stem,
        x = x,
        measured = kind.measured_label(),
        group_key = group.map_or("None".to_string(), |g| format!("r[\"{g}\"]")),
    )
}

/// Writes `<stem>.csv`, `<stem>_aggregates.csv` and `<stem>_plot.py` into `dir`.
pub fn write_sweep(result: &SweepResult, dir: &Path, header: &RunHeader) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let stem = result.kind.file_stem();
    let files = [
        (format!("{stem}.csv"), records_csv(result, header)?),
        (format!("{stem}_aggregates.csv"), aggregates_csv(result, header)?),
        (format!("{stem}_plot.py"), plot_script(result.kind).into_bytes()),
    ];
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            fs::write(&path, bytes)?;
            Ok(path)
        })
        .collect()
}
