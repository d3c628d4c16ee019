use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::{RunRecord, RunReport, Stat};
use crate::classify::{Strategy, TaskMode};
use crate::error::{Error, Result};

fn cell(stat: Option<Stat>) -> String {
    match stat {
        Some(s) => format!("{:.1}±{:.1}", s.mean, s.std),
        None => "-".into(),
    }
}

fn pad(out: &mut String, cells: &[String], widths: &[usize]) {
    let line: Vec<String> = cells
        .iter()
        .zip(widths)
        .enumerate()
        .map(|(i, (c, w))| {
            if i == 0 {
                format!("{c:<w$}")
            } else {
                format!("{c:>w$}")
            }
        })
        .collect();
    out.push_str(line.join("  ").trim_end());
    out.push('\n');
}

fn render(rows: Vec<Vec<String>>) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in &rows {
        pad(&mut out, r, &widths);
    }
    out
}

/// Strategy rows by shot columns: `S N H` under GFSL, `N` under FSL, each
/// cell `mean±std` over runs. A synthesis-quality block follows when any
/// report carries it.
pub fn results_table(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let modes: BTreeSet<TaskMode> = reports.iter().map(|r| r.mode).collect();
    for mode in modes {
        let of_mode: Vec<&RunReport> = reports.iter().filter(|r| r.mode == mode).collect();
        let shots: BTreeSet<usize> = of_mode.iter().map(|r| r.k).collect();
        let mut strategies: Vec<Strategy> = Vec::new();
        for r in &of_mode {
            if !strategies.contains(&r.strategy) {
                strategies.push(r.strategy);
            }
        }
        let metrics: &[&str] = match mode {
            TaskMode::Gfsl => &["S", "N", "H"],
            TaskMode::Fsl => &["N"],
        };
        let runs = of_mode.first().map_or(0, |r| r.runs.len());
        let _ = writeln!(out, "{} accuracy (%), mean±std over {runs} runs", mode.to_string().to_uppercase());
        let mut rows = Vec::new();
        let mut head = vec!["strategy".to_string()];
        for k in &shots {
            for m in metrics {
                head.push(format!("{k}-shot {m}"));
            }
        }
        rows.push(head);
        for s in &strategies {
            let mut row = vec![s.title().to_string()];
            for &k in &shots {
                let rep = of_mode.iter().find(|r| r.strategy == *s && r.k == k);
                for m in metrics {
                    row.push(cell(rep.and_then(|r| match *m {
                        "S" => r.aggregate.seen,
                        "N" => Some(r.aggregate.novel),
                        _ => r.aggregate.harmonic,
                    })));
                }
            }
            rows.push(row);
        }
        out.push_str(&render(rows));

        if of_mode.iter().any(|r| r.aggregate.synth_quality.is_some()) {
            let _ = writeln!(out, "\nsynthetic vs real class-mean cosine distance");
            let mut rows = vec![std::iter::once("strategy".to_string())
                .chain(shots.iter().map(|k| format!("{k}-shot")))
                .collect::<Vec<_>>()];
            for s in strategies.iter().filter(|s| s.synthesizes()) {
                let mut row = vec![s.title().to_string()];
                for &k in &shots {
                    let q = of_mode
                        .iter()
                        .find(|r| r.strategy == *s && r.k == k)
                        .and_then(|r| r.aggregate.synth_quality);
                    row.push(q.map_or("-".into(), |q| format!("{:.3}±{:.3}", q.mean, q.std)));
                }
                rows.push(row);
            }
            out.push_str(&render(rows));
        }
        out.push('\n');
    }
    out
}

/// One ablation arm: a label and the reports it produced.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub name: String,
    pub reports: Vec<RunReport>,
}

/// One row per arm and report with `S`, `N`, `H` as `mean±std`.
pub fn ablation_table(arms: &[AblationArm]) -> String {
    let mut rows = vec![vec![
        "arm".to_string(),
        "strategy".into(),
        "shots".into(),
        "S".into(),
        "N".into(),
        "H".into(),
    ]];
    for arm in arms {
        for r in &arm.reports {
            rows.push(vec![
                arm.name.clone(),
                r.strategy.title().into(),
                r.k.to_string(),
                cell(r.aggregate.seen),
                cell(Some(r.aggregate.novel)),
                cell(r.aggregate.harmonic),
            ]);
        }
    }
    render(rows)
}

/// One JSON object per run record.
pub fn write_runs_jsonl<W: Write>(reports: &[RunReport], w: &mut W) -> Result<()> {
    for rep in reports {
        for r in &rep.runs {
            let line = serde_json::to_string(r).map_err(|e| Error::Format {
                what: "run record",
                message: e.to_string(),
            })?;
            writeln!(w, "{line}").map_err(|e| Error::Format {
                what: "run records",
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

pub fn read_runs_jsonl<R: BufRead>(r: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            what: "run records",
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Ingestion {
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat CSV, one row per run.
pub fn write_runs_csv<W: Write>(reports: &[RunReport], w: &mut W) -> Result<()> {
    let err = |e: csv::Error| Error::Format {
        what: "run CSV",
        message: e.to_string(),
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "mode",
        "strategy",
        "k",
        "run",
        "seed",
        "seen",
        "novel",
        "harmonic",
        "synth_quality",
    ])
    .map_err(err)?;
    for rep in reports {
        for r in &rep.runs {
            out.write_record([
                r.mode.to_string(),
                r.strategy.to_string(),
                r.k.to_string(),
                r.run.to_string(),
                r.seed.to_string(),
                opt(r.seen_accuracy),
                r.novel_accuracy.to_string(),
                opt(r.harmonic),
                opt(r.synth_quality),
            ])
            .map_err(err)?;
        }
    }
    out.flush().map_err(|e| Error::Format {
        what: "run CSV",
        message: e.to_string(),
    })
}

fn per_class_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::Format {
        what: "per-class CSV",
        message: e.to_string(),
    };
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["mode", "strategy", "k", "class", "novel_recall"])
        .map_err(err)?;
    for rep in reports {
        for (c, v) in &rep.per_class {
            out.write_record([
                rep.mode.to_string(),
                rep.strategy.to_string(),
                rep.k.to_string(),
                c.to_string(),
                v.to_string(),
            ])
            .map_err(err)?;
        }
    }
    out.into_inner().map_err(|e| Error::Format {
        what: "per-class CSV",
        message: e.to_string(),
    })
}

/// Writes `<stem>.txt` (table), `<stem>.csv` (runs), `<stem>_runs.jsonl`,
/// `<stem>_per_class.csv` and `<stem>.json` (full reports) under `dir`.
/// Returns the paths written.
pub fn write_report_files(dir: &Path, stem: &str, reports: &[RunReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    put(format!("{stem}.txt"), results_table(reports).into_bytes())?;
    let mut csv = Vec::new();
    write_runs_csv(reports, &mut csv)?;
    put(format!("{stem}.csv"), csv)?;
    let mut jsonl = Vec::new();
    write_runs_jsonl(reports, &mut jsonl)?;
    put(format!("{stem}_runs.jsonl"), jsonl)?;
    put(format!("{stem}_per_class.csv"), per_class_csv(reports)?)?;
    let json = serde_json::to_vec_pretty(reports).map_err(|e| Error::Format {
        what: "report JSON",
        message: e.to_string(),
    })?;
    put(format!("{stem}.json"), json)?;
    Ok(written)
}
