use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::run::METRICS_HEADER;
use super::speedup;
use crate::error::{domain, Result};
use crate::AcrlError;

/// Columns of the summary produced by [`compare_report`].
pub const REPORT_HEADER: [&str; 9] = [
    "kind",
    "run",
    "name",
    "mode",
    "episodes",
    "final_window_median_return",
    "oracle_queries",
    "model_queries",
    "speedup",
];

/// Final-window statistics of one metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run: String,
    pub name: String,
    pub mode: String,
    pub episodes: usize,
    pub final_window_median: f64,
    pub oracle_queries: u64,
    pub model_queries: u64,
}

impl RunSummary {
    pub fn speedup(&self) -> Option<f64> {
        speedup(self.oracle_queries, self.model_queries).ok()
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return domain("median of an empty set");
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Number of trailing episodes in the final window: 10%, at least one.
pub fn final_window(episodes: usize) -> usize {
    episodes.div_ceil(10).max(1)
}

fn metrics_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join("metrics.csv")
    } else {
        input.to_path_buf()
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> AcrlError {
    AcrlError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads one run's metrics file; the run's name and mode come from the
/// `config.json` beside it when present.
pub fn summarize(input: &Path) -> Result<RunSummary> {
    let path = metrics_path(input);
    let mut reader = csv::Reader::from_path(&path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        let missing: Vec<&str> = METRICS_HEADER.iter().copied().filter(|c| !header.iter().any(|h| h == c)).collect();
        let extra: Vec<&str> = header.iter().map(String::as_str).filter(|h| !METRICS_HEADER.contains(h)).collect();
        return Err(format_err(
            &path,
            format!("unexpected columns: missing {missing:?}, unknown {extra:?}, found {header:?}"),
        ));
    }
    let mut returns = Vec::new();
    let mut last = None;
    for record in reader.records() {
        let record = record?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| format_err(&path, format!("column {}: {e}", METRICS_HEADER[i])))
        };
        returns.push(num(1)?);
        last = Some((num(5)? as u64, num(6)? as u64));
    }
    let (oracle_queries, model_queries) = last.ok_or_else(|| format_err(&path, "no episodes recorded"))?;
    let window = final_window(returns.len());
    let (name, mode) = match path.parent().map(|d| d.join("config.json")) {
        Some(cfg) if cfg.exists() => {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg)?)?;
            let field = |k: &str| v.get(k).and_then(|x| x.as_str()).unwrap_or("").to_string();
            (field("name"), field("mode"))
        }
        _ => (String::new(), String::new()),
    };
    Ok(RunSummary {
        run: input.display().to_string(),
        name,
        mode,
        episodes: returns.len(),
        final_window_median: median(&returns[returns.len() - window..])?,
        oracle_queries,
        model_queries,
    })
}

/// Summaries per input followed by one aggregate row per (name, mode)
/// holding the median of the per-run medians and query counts.
pub fn compare_report(inputs: &[PathBuf], out: &Path) -> Result<Vec<RunSummary>> {
    if inputs.is_empty() {
        return domain("report needs at least one run");
    }
    let runs = inputs.iter().map(|p| summarize(p)).collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(REPORT_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &runs {
        w.write_record([
            "run".to_string(),
            r.run.clone(),
            r.name.clone(),
            r.mode.clone(),
            r.episodes.to_string(),
            r.final_window_median.to_string(),
            r.oracle_queries.to_string(),
            r.model_queries.to_string(),
            opt(r.speedup()),
        ])?;
    }
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in &runs {
        groups.entry((r.name.clone(), r.mode.clone())).or_default().push(r);
    }
    for ((name, mode), group) in groups {
        let med = |f: &dyn Fn(&RunSummary) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
        let oracle = med(&|r| r.oracle_queries as f64)?;
        let model = med(&|r| r.model_queries as f64)?;
        w.write_record([
            "aggregate".to_string(),
            group.len().to_string(),
            name,
            mode,
            med(&|r| r.episodes as f64)?.to_string(),
            med(&|r| r.final_window_median)?.to_string(),
            oracle.to_string(),
            model.to_string(),
            if oracle > 0.0 { (model / oracle).to_string() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn window_sizes() {
        assert_eq!(final_window(1), 1);
        assert_eq!(final_window(10), 1);
        assert_eq!(final_window(11), 2);
        assert_eq!(final_window(2000), 200);
    }

    #[test]
    fn schema_errors_name_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        std::fs::write(&p, "episode,return\n1,2\n").unwrap();
        let err = summarize(&p).unwrap_err().to_string();
        assert!(err.contains("episode_return") && err.contains("return"), "{err}");
    }

    #[test]
    fn single_run_gives_one_row_plus_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let mut text = METRICS_HEADER.join(",") + "\n";
        for e in 1..=20 {
            text += &format!("{e},{},,,{},{},{},0,0\n", e as f64, 0.5, 10, 10 * e);
        }
        std::fs::write(&p, text).unwrap();
        let out = dir.path().join("report.csv");
        let runs = compare_report(std::slice::from_ref(&p), &out).unwrap();
        assert_eq!(runs.len(), 1);
        // Last 2 of 20 episodes: returns 19 and 20.
        assert_eq!(runs[0].final_window_median, 19.5);
        assert_eq!(runs[0].speedup(), Some(20.0));
        let lines: Vec<String> = std::fs::read_to_string(&out).unwrap().lines().map(String::from).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("run,"));
        assert!(lines[2].starts_with("aggregate,1,"));
    }
}
