use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use semgen::finetune::Comparison;
use semgen::pretrain::{read_log, EpochRecord, Stage};
use semgen::{Error, Result};

const W: f64 = 360.0;
const H: f64 = 220.0;
const PAD: f64 = 40.0;

fn run_name(dir: &Path, i: usize) -> String {
    let base = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    format!("{i:02}_{base}")
}

fn chart(out: &mut String, x0: f64, title: &str, values: &[f64], joint_start: Option<usize>) {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = values.len().max(2) - 1;
    let px = |i: usize| x0 + PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let py = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        x0 + PAD,
        PAD,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(out, r##"<text x="{}" y="{}" font-size="13">{title}</text>"##, x0 + PAD, PAD - 12.0);
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="10" text-anchor="end">{hi:.3}</text>"##,
        x0 + PAD - 4.0,
        PAD + 4.0
    );
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo:.3}</text>"##,
        x0 + PAD - 4.0,
        H - PAD
    );
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="10" text-anchor="middle">epoch</text>"##,
        x0 + W / 2.0,
        H - 12.0
    );
    if let Some(j) = joint_start.filter(|&j| j > 0 && j < values.len()) {
        let x = px(j);
        let _ = writeln!(
            out,
            r##"<line x1="{x}" y1="{PAD}" x2="{x}" y2="{}" stroke="#c33" stroke-dasharray="4 3"/>"##,
            H - PAD
        );
    }
    let pts: Vec<String> = values.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v))).collect();
    let _ = writeln!(out, r##"<polyline fill="none" stroke="#246" stroke-width="1.5" points="{}"/>"##, pts.join(" "));
}

/// SVG with the classification and restoration loss curves side by side; a
/// dashed line marks the first joint epoch.
pub fn loss_svg(log: &[EpochRecord]) -> String {
    let joint = log.iter().position(|r| r.stage == Stage::Joint);
    let mut s = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif">"##,
        2.0 * W
    );
    s.push('\n');
    chart(&mut s, 0.0, "loss_cls", &log.iter().map(|r| r.loss_cls).collect::<Vec<_>>(), joint);
    chart(&mut s, W, "loss_rec", &log.iter().map(|r| r.loss_rec).collect::<Vec<_>>(), joint);
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, contents: String) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    Ok(path)
}

/// Renders every run directory: `<run>_loss.svg` plus a combined `losses.csv`
/// for pretraining runs, and `metrics.csv` / `tests.csv` tables for
/// evaluation runs.
pub fn write_report(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    let mut losses = String::from("run,epoch,stage,loss_cls,loss_rec,loss_total\n");
    let mut metrics = String::from("run,init,metric,n,mean,sd\n");
    let mut tests = String::from("run,a,b,mean_difference,t,df,p_value\n");
    let (mut any_log, mut any_cmp) = (false, false);
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (i, dir) in runs.iter().enumerate() {
        let name = run_name(dir, i);
        let mut found = false;
        let log_path = dir.join("log.csv");
        if log_path.is_file() {
            let log = read_log(&log_path)?;
            for r in &log {
                let _ =
                    writeln!(losses, "{name},{},{},{},{},{}", r.epoch, r.stage, r.loss_cls, r.loss_rec, r.loss_total);
            }
            artifacts.push(write(out.join(format!("{name}_loss.svg")), loss_svg(&log))?);
            any_log = true;
            found = true;
        }
        let summary = dir.join("summary.json");
        if summary.is_file() {
            let bytes = fs::read(&summary).map_err(|e| Error::Io { path: summary.clone(), source: e })?;
            let cmp: Comparison = serde_json::from_slice(&bytes)?;
            for s in &cmp.inits {
                let _ = writeln!(
                    metrics,
                    "{name},{},{},{},{},{}",
                    s.init, cmp.metric, s.summary.n, s.summary.mean, s.summary.sd
                );
            }
            for t in &cmp.tests {
                let _ = writeln!(
                    tests,
                    "{name},{},{},{},{},{},{}",
                    t.a,
                    t.b,
                    t.test.mean_difference,
                    opt(t.test.t),
                    t.test.df,
                    opt(t.test.p_value)
                );
            }
            any_cmp = true;
            found = true;
        }
        if !found {
            return Err(Error::Invalid(format!("{}: no log.csv or summary.json to report", dir.display())));
        }
    }
    if any_log {
        artifacts.push(write(out.join("losses.csv"), losses)?);
    }
    if any_cmp {
        artifacts.push(write(out.join("metrics.csv"), metrics)?);
        artifacts.push(write(out.join("tests.csv"), tests)?);
    }
    Ok(artifacts)
}
