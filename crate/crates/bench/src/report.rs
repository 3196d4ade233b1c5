//! Normalized timing rows, geometric means and the sweep CSV.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Large,
}

impl SizeClass {
    pub fn of_depth(depth: usize) -> Self {
        if depth <= 10 {
            SizeClass::Small
        } else {
            SizeClass::Large
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    /// Strategy abbreviation, or the baseline name for self rows.
    pub strategy: String,
    pub k: usize,
    pub dataset: String,
    /// Baseline the row is normalized to: `native` or `ifelse`.
    pub baseline: String,
    pub size_class: SizeClass,
    pub median_ns: f64,
    pub baseline_median_ns: f64,
    pub normalized_time: f64,
    /// Sample variance of per-repetition normalized times.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeoMean {
    pub strategy: String,
    pub baseline: String,
    pub size_class: SizeClass,
    pub value: f64,
    pub rows: usize,
}

/// Baseline measured against itself: by construction 1.0, plus the ratio of
/// two independent copies of the baseline timed in the same run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub baseline: String,
    pub dataset: String,
    pub self_normalized: f64,
    pub rerun_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Directional {
    pub strategy: String,
    pub baseline: String,
    pub geomean: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<Row>,
    pub geomeans: Vec<GeoMean>,
    pub self_checks: Vec<SelfCheck>,
    /// Hybrid node vs native baseline below 1.0, reported but not enforced.
    pub directional: Option<Directional>,
    /// Configurations that were not measured, with the reason.
    pub skipped: Vec<String>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn geomean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Geometric means per (strategy, baseline, size class), in first-seen order.
pub fn geomeans(rows: &[Row]) -> Vec<GeoMean> {
    let mut keys: Vec<(String, String, SizeClass)> = Vec::new();
    for r in rows {
        let key = (r.strategy.clone(), r.baseline.clone(), r.size_class);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(strategy, baseline, size_class)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.baseline == baseline && r.size_class == size_class)
                .map(|r| r.normalized_time)
                .collect();
            GeoMean {
                value: geomean(&vals),
                rows: vals.len(),
                strategy,
                baseline,
                size_class,
            }
        })
        .collect()
}

/// Row from raw repetition times of a variant and its baseline.
pub fn normalize(
    strategy: &str,
    k: usize,
    dataset: &str,
    baseline: &str,
    size_class: SizeClass,
    times: &[f64],
    baseline_times: &[f64],
) -> Row {
    let base = median(baseline_times);
    let per_rep: Vec<f64> = times.iter().map(|t| t / base).collect();
    let m = median(times);
    Row {
        strategy: strategy.into(),
        k,
        dataset: dataset.into(),
        baseline: baseline.into(),
        size_class,
        median_ns: m,
        baseline_median_ns: base,
        normalized_time: m / base,
        variance: variance(&per_rep),
    }
}

/// `strategy,k,dataset,normalized_time,variance,baseline`.
pub fn sweep_csv(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "k", "dataset", "normalized_time", "variance", "baseline"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.k.to_string(),
            r.dataset.clone(),
            format!("{:.6}", r.normalized_time),
            format!("{:.6e}", r.variance),
            r.baseline.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
