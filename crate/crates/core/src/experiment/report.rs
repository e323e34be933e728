use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::artifacts::{
    mean_curve, read_curve_csv, read_evaluation_csv, CompareTable, CurvePoint, MetricsRow, RunKind, RunManifest,
    CURVES_FILE, CURVE_FILE, EVALUATION_FILE, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
};
use crate::error::{Error, Result};

pub const REWARD_FIGURE: &str = "rewards.svg";
pub const COST_FIGURE: &str = "cost.svg";
pub const CONSUMPTION_FIGURE: &str = "consumption.svg";
pub const TRADED_FIGURE: &str = "traded.svg";
pub const REPORT_TABLE: &str = "report.md";

const SIZE: (u32, u32) = (900, 520);

type Series = (String, Vec<f64>);

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(format!("cannot draw: {e}")))
}

fn line_chart(path: &Path, title: &str, y_desc: &str, series: &[(String, Vec<(usize, f64)>)]) -> Result<()> {
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_max, mut y_min, mut y_max) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (-1.0, 1.0);
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-3);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max as f64, (y_min - pad)..(y_max + pad))
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_desc)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().map(|&(x, y)| (x as f64, y)), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// Bars grouped by cluster, one colour per series.
fn bar_chart(path: &Path, title: &str, y_desc: &str, series: &[Series]) -> Result<()> {
    let clusters = series.first().map_or(0, |(_, v)| v.len());
    let y_max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let y_min = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0f64, f64::min) * 1.1;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..clusters.max(1) as f64, y_min..y_max)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(clusters.max(1))
        .x_label_formatter(&|x| format!("cluster {}", x.floor() as usize + 1))
        .x_desc("cluster")
        .y_desc(y_desc)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    let width = 0.8 / series.len().max(1) as f64;
    for (i, (name, values)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(values.iter().enumerate().map(|(c, &v)| {
                let x0 = c as f64 + 0.1 + i as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width, v)], color.filled())
            }))
            .map_err(|e| plot_err(path, e))?
            .label(name.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

fn missing(dir: &Path, expected: &[&str]) -> Result<()> {
    let absent: Vec<String> = expected
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if absent.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            missing: absent,
        })
    }
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

/// Draws the figures and tables of a run or compare directory into it and
/// returns the written paths.
pub fn emit_report(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(Error::MissingArtifacts {
            dir: dir.to_path_buf(),
            missing: vec![
                MANIFEST_FILE.into(),
                format!("{EVALUATION_FILE} (run)"),
                format!("{SUMMARY_FILE}, {METRICS_FILE}, {CURVES_FILE} (compare)"),
            ],
        });
    }
    let manifest = RunManifest::read(dir)?;
    if manifest.kind == RunKind::Compare {
        report_compare(dir)
    } else {
        report_run(dir, &manifest)
    }
}

fn report_run(dir: &Path, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    let learning = manifest.method != "baseline";
    let mut expected = vec![EVALUATION_FILE.to_string()];
    if learning {
        expected.extend(manifest.seeds.iter().map(|s| format!("seed-{s}/{CURVE_FILE}")));
    }
    missing(dir, &expected.iter().map(String::as_str).collect::<Vec<_>>())?;
    let ev = read_evaluation_csv(&dir.join(EVALUATION_FILE))?;
    let mut out = Vec::new();
    let name = manifest.method.clone();

    if learning {
        let curves: Vec<_> = manifest
            .seeds
            .iter()
            .map(|s| read_curve_csv(&dir.join(format!("seed-{s}/{CURVE_FILE}"))))
            .collect::<Result<_>>()?;
        let p = dir.join(REWARD_FIGURE);
        line_chart(&p, "Average reward per epoch", "average reward", &[(name.clone(), mean_curve(&curves))])?;
        out.push(p);
    }
    let cost_series = if learning {
        vec![("baseline".to_string(), ev.baseline_cost.clone()), (name.clone(), ev.cost.clone())]
    } else {
        vec![(name.clone(), ev.cost.clone())]
    };
    let p = dir.join(COST_FIGURE);
    bar_chart(&p, "Total cluster electricity cost", "cost ($)", &cost_series)?;
    out.push(p);
    let p = dir.join(CONSUMPTION_FIGURE);
    bar_chart(&p, "Total cluster power consumption", "energy (kWh)", &[(name.clone(), ev.consumption_kwh.clone())])?;
    out.push(p);
    if learning {
        let traded: Vec<f64> = ev.bought_kwh.iter().zip(&ev.sold_kwh).map(|(b, s)| b + s).collect();
        let p = dir.join(TRADED_FIGURE);
        bar_chart(&p, "Traded power of nanogrid clusters", "energy (kWh)", &[(name.clone(), traded)])?;
        out.push(p);
    }

    let header: Vec<String> = ["cluster", "cost ($)", "baseline cost ($)", "saving (%)", "consumption (kWh)", "traded (kWh)"]
        .map(String::from)
        .to_vec();
    let savings = ev.saving_percent();
    let rows: Vec<Vec<String>> = (0..ev.clusters())
        .map(|c| {
            vec![
                (c + 1).to_string(),
                format!("{:.1}", ev.cost[c]),
                format!("{:.1}", ev.baseline_cost[c]),
                format!("{:.2}", savings[c]),
                format!("{:.1}", ev.consumption_kwh[c]),
                format!("{:.1}", ev.bought_kwh[c] + ev.sold_kwh[c]),
            ]
        })
        .collect();
    let text = format!(
        "# {name}\n\nSeeds {:?}, evaluated days {}..{}.\n\n{}",
        manifest.seeds,
        manifest.days[0],
        manifest.days[1],
        markdown_table(&header, &rows)
    );
    let p = dir.join(REPORT_TABLE);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    out.push(p);
    Ok(out)
}

fn report_compare(dir: &Path) -> Result<Vec<PathBuf>> {
    missing(dir, &[SUMMARY_FILE, METRICS_FILE, CURVES_FILE])?;
    let table = CompareTable::read_csv(&dir.join(SUMMARY_FILE))?;
    let metrics: Vec<MetricsRow> = csv::Reader::from_path(dir.join(METRICS_FILE))?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let points: Vec<CurvePoint> = csv::Reader::from_path(dir.join(CURVES_FILE))?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;

    let mut methods: Vec<String> = Vec::new();
    for m in &metrics {
        if !methods.contains(&m.method) {
            methods.push(m.method.clone());
        }
    }
    let per_method = |f: fn(&MetricsRow) -> f64| -> Vec<Series> {
        methods
            .iter()
            .map(|name| {
                let mut rows: Vec<&MetricsRow> = metrics.iter().filter(|r| &r.method == name).collect();
                rows.sort_by_key(|r| r.cluster_id);
                (name.clone(), rows.into_iter().map(f).collect())
            })
            .collect()
    };
    let mut out = Vec::new();
    for (file, title, unit, f) in [
        (COST_FIGURE, "Total cluster electricity cost", "cost ($)", (|r: &MetricsRow| r.cost_usd) as fn(&MetricsRow) -> f64),
        (CONSUMPTION_FIGURE, "Total cluster power consumption", "energy (kWh)", |r| r.consumption_kwh),
        (TRADED_FIGURE, "Traded power of nanogrid clusters", "energy (kWh)", |r| r.bought_kwh + r.sold_kwh),
    ] {
        let p = dir.join(file);
        bar_chart(&p, title, unit, &per_method(f))?;
        out.push(p);
    }
    let mut curves: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for pt in points {
        match curves.iter_mut().find(|(n, _)| *n == pt.method) {
            Some((_, v)) => v.push((pt.epoch, pt.avg_reward)),
            None => curves.push((pt.method, vec![(pt.epoch, pt.avg_reward)])),
        }
    }
    if !curves.is_empty() {
        let p = dir.join(REWARD_FIGURE);
        line_chart(&p, "Average reward per epoch", "average reward", &curves)?;
        out.push(p);
    }

    let mut header = vec!["cluster".to_string(), "metric".into(), "baseline".into()];
    header.extend(table.variants.iter().map(|(n, _)| n.clone()));
    let savings = table.savings();
    let mut rows = Vec::new();
    for c in 0..table.clusters() {
        let mut cost = vec![format!("cluster {}", c + 1), "cost ($)".into(), format!("{:.1}", table.baseline[c])];
        cost.extend(table.variants.iter().map(|(_, v)| format!("{:.1}", v[c])));
        rows.push(cost);
        let mut save = vec![String::new(), "saving (%)".into(), "-".into()];
        save.extend(savings.iter().map(|s| format!("{:.2}", s[c])));
        rows.push(save);
    }
    let mut mean = vec!["all".to_string(), "arithmetic mean saving (%)".into(), "-".into()];
    mean.extend(table.mean_saving().iter().map(|m| format!("{m:.2}")));
    rows.push(mean);
    let text = format!("# Simulation results summary\n\n{}", markdown_table(&header, &rows));
    let p = dir.join(REPORT_TABLE);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    out.push(p);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_compare, run_train, ExperimentConfig, RunKind};

    fn names(paths: &[PathBuf]) -> Vec<String> {
        paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    }

    /// A finished run directory with the given per-cluster costs.
    fn fake_run(root: &Path, method: &str, costs: &[f64]) -> PathBuf {
        use crate::experiment::{write_curve_csv, write_evaluation_csv, CurveRow, Evaluation};
        let dir = root.join(method);
        fs::create_dir_all(dir.join("seed-0")).unwrap();
        let mut ev = Evaluation::new(costs.len());
        ev.cost = costs.to_vec();
        ev.baseline_cost = costs.to_vec();
        ev.consumption_kwh = vec![10.0; costs.len()];
        write_evaluation_csv(&ev, fs::File::create(dir.join(EVALUATION_FILE)).unwrap()).unwrap();
        let curve: Vec<CurveRow> = (0..3)
            .map(|e| CurveRow {
                epoch: e,
                agent_id: 0,
                avg_reward: e as f64 / 3.0,
                epsilon: 0.1,
                loss: None,
            })
            .collect();
        if method != "baseline" {
            write_curve_csv(&curve, fs::File::create(dir.join("seed-0").join(CURVE_FILE)).unwrap()).unwrap();
        }
        RunManifest {
            kind: RunKind::Train,
            method: method.into(),
            config_hash: String::new(),
            scenario_hash: "s".into(),
            seeds: vec![0],
            days: [30, 37],
            code_version: String::new(),
            started: String::new(),
            finished: String::new(),
            files: vec![],
        }
        .write_atomic(&dir)
        .unwrap();
        dir
    }

    #[test]
    fn empty_dir_lists_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(dir.path()).unwrap_err();
        let text = err.to_string();
        for f in [MANIFEST_FILE, EVALUATION_FILE, SUMMARY_FILE] {
            assert!(text.contains(f), "{text}");
        }
    }

    #[test]
    fn baseline_run_has_no_reward_curve() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            eval_days: 1,
            train_days: 1,
            horizon: 12,
            output: dir.path().join("base"),
            ..ExperimentConfig::default()
        };
        cfg.scenario.clusters = 3;
        run_train(&cfg).unwrap();
        let files = names(&emit_report(&cfg.output).unwrap());
        assert_eq!(files, [COST_FIGURE, CONSUMPTION_FIGURE, REPORT_TABLE]);
        let svg = fs::read_to_string(cfg.output.join(COST_FIGURE)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("cluster 3"));
    }

    #[test]
    fn learning_run_has_all_figures() {
        let dir = tempfile::tempdir().unwrap();
        let run = fake_run(dir.path(), "n_dqn", &[1.0, 2.0]);
        let files = names(&emit_report(&run).unwrap());
        assert_eq!(files, [REWARD_FIGURE, COST_FIGURE, CONSUMPTION_FIGURE, TRADED_FIGURE, REPORT_TABLE]);
        fs::remove_file(run.join("seed-0").join(CURVE_FILE)).unwrap();
        assert!(emit_report(&run).unwrap_err().to_string().contains("seed-0/curve.csv"));
    }

    #[test]
    fn compare_of_nine_methods() {
        let dir = tempfile::tempdir().unwrap();
        let methods = ["baseline", "dqn", "drqn", "bi_drqn", "ppo", "n_dqn", "n_drqn", "n_bi_drqn", "n_ppo"];
        let runs: Vec<PathBuf> = methods
            .iter()
            .enumerate()
            .map(|(i, m)| fake_run(dir.path(), m, &[700.0 - i as f64, 800.0 - 20.0 * i as f64, 760.0 - 60.0 * i as f64]))
            .collect();
        let out = dir.path().join("compare");
        run_compare(&runs, &out).unwrap();
        let files = names(&emit_report(&out).unwrap());
        assert_eq!(files, [COST_FIGURE, CONSUMPTION_FIGURE, TRADED_FIGURE, REWARD_FIGURE, REPORT_TABLE]);
        let svg = fs::read_to_string(out.join(REWARD_FIGURE)).unwrap();
        for m in &methods[1..] {
            assert!(svg.contains(&format!("\n{m}\n</text>")), "{m}");
        }
        assert!(!svg.contains("\nbaseline\n</text>"));
        let md = fs::read_to_string(out.join(REPORT_TABLE)).unwrap();
        assert!(md.contains("arithmetic mean saving"));
        assert!(md.contains("| cluster 3 | cost ($) | 760.0 |"));
    }
}
