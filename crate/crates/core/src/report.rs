//! Metric reports: one row per (image, method) plus per-method mean ± std.
//!
//! Missing metrics are `null` in JSON and empty cells in CSV. Rows are
//! sorted by image id then method, and aggregates are accumulated in that
//! order, so two runs over the same inputs give identical bytes apart from
//! `meta.generated_at`.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::CorrectnessScores;
use crate::plausibility::PlausibilityScores;

/// CSV column order of [`MetricReport::write_csv`].
pub const CSV_COLUMNS: [&str; 14] = [
    "image_id", "method", "sim", "pcc", "nss", "auc_judd", "iauc", "dauc", "delta_a_f", "ad", "ai", "ag", "lip",
    "lss",
];

/// Metric names in report order (the CSV columns after `method`).
pub const METRICS: [&str; 12] = [
    "sim", "pcc", "nss", "auc_judd", "iauc", "dauc", "delta_a_f", "ad", "ai", "ag", "lip", "lss",
];

/// JSON schema every serialized report satisfies.
pub const REPORT_SCHEMA: &str = include_str!("../schema/metric_report.schema.json");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    pub method: String,
    pub sim: Option<f64>,
    pub pcc: Option<f64>,
    pub nss: Option<f64>,
    pub auc_judd: Option<f64>,
    pub iauc: Option<f64>,
    pub dauc: Option<f64>,
    pub delta_a_f: Option<f64>,
    pub ad: Option<f64>,
    pub ai: Option<f64>,
    pub ag: Option<f64>,
    pub lip: Option<f64>,
    pub lss: Option<f64>,
}

impl MetricRow {
    pub fn new(image_id: impl Into<String>, method: impl Into<String>) -> Self {
        MetricRow {
            image_id: image_id.into(),
            method: method.into(),
            ..Default::default()
        }
    }

    pub fn set_plausibility(&mut self, p: &PlausibilityScores) {
        self.sim = Some(p.sim);
        self.pcc = Some(p.pcc);
        self.nss = Some(p.nss);
        self.auc_judd = Some(p.auc_judd);
    }

    pub fn set_correctness(&mut self, c: &CorrectnessScores) {
        self.iauc = Some(c.iauc);
        self.dauc = Some(c.dauc);
        self.delta_a_f = Some(c.delta_a_f);
        self.ad = c.ad();
        self.ai = Some(c.ai());
        self.ag = c.ag();
    }

    /// Values in [`METRICS`] order.
    pub fn values(&self) -> [Option<f64>; 12] {
        [
            self.sim,
            self.pcc,
            self.nss,
            self.auc_judd,
            self.iauc,
            self.dauc,
            self.delta_a_f,
            self.ad,
            self.ai,
            self.ag,
            self.lip,
            self.lss,
        ]
    }
}

/// Mean and population standard deviation over the images that have a value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub images: usize,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    /// seconds since the Unix epoch
    pub generated_at: u64,
}

impl ReportMeta {
    pub fn now() -> Self {
        ReportMeta {
            tool: "attnfilter".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    pub rows: Vec<MetricRow>,
    pub aggregate: Vec<MethodSummary>,
}

fn summarize(metric: &str, values: &[f64]) -> MetricSummary {
    if values.is_empty() {
        return MetricSummary {
            metric: metric.into(),
            count: 0,
            mean: None,
            std: None,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary {
        metric: metric.into(),
        count: values.len(),
        mean: Some(mean),
        std: Some(var.sqrt()),
    }
}

impl MetricReport {
    /// Sorts the rows and computes the per-method aggregates.
    pub fn new(mut rows: Vec<MetricRow>, meta: ReportMeta) -> Self {
        rows.sort_by(|a, b| (&a.image_id, &a.method).cmp(&(&b.image_id, &b.method)));
        let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        methods.sort_unstable();
        methods.dedup();
        let aggregate = methods
            .iter()
            .map(|&m| {
                let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.method == m).collect();
                let metrics = METRICS
                    .iter()
                    .enumerate()
                    .map(|(i, name)| {
                        let vals: Vec<f64> = mine.iter().filter_map(|r| r.values()[i]).collect();
                        summarize(name, &vals)
                    })
                    .collect();
                MethodSummary {
                    method: m.to_string(),
                    images: mine.len(),
                    metrics,
                }
            })
            .collect();
        MetricReport { meta, rows, aggregate }
    }

    pub fn summary(&self, method: &str, metric: &str) -> Option<&MetricSummary> {
        self.aggregate
            .iter()
            .find(|s| s.method == method)?
            .metrics
            .iter()
            .find(|m| m.metric == metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("metric report: {e}")))
    }

    /// Per-image rows in [`CSV_COLUMNS`] order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.image_id.clone(), r.method.clone()];
            rec.extend(r.values().iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One line per method: `method,images,<metric>_mean,<metric>_std,...`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["method".to_string(), "images".to_string()];
        for m in METRICS {
            head.push(format!("{m}_mean"));
            head.push(format!("{m}_std"));
        }
        out.write_record(&head).map_err(csv_err)?;
        for s in &self.aggregate {
            let mut rec = vec![s.method.clone(), s.images.to_string()];
            for m in &s.metrics {
                rec.push(m.mean.map(|x| x.to_string()).unwrap_or_default());
                rec.push(m.std.map(|x| x.to_string()).unwrap_or_default());
            }
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>_summary.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json())?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        self.write_summary_csv(std::fs::File::create(dir.join(format!("{stem}_summary.csv")))?)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
