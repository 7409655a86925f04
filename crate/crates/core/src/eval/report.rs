use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::external::EvalReport;
use super::scorecam::SaliencyMap;
use super::sweep::{Arm, SweepResult};
use crate::artifact::Artifact;
use crate::bias::CorrelationReport;
use crate::error::{Error, Result};
use crate::training::Method;

/// One image with its saliency map and the model's verdict.
#[derive(Debug, Clone)]
pub struct SaliencyItem {
    pub id: String,
    pub method: String,
    pub image: RgbImage,
    pub map: SaliencyMap,
    pub label: bool,
    pub probability: f32,
}

impl SaliencyItem {
    pub fn correct(&self) -> bool {
        (self.probability >= 0.5) == self.label
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub sweep: Option<SweepResult>,
    pub correlations: Vec<CorrelationReport>,
    pub external: Vec<(String, EvalReport)>,
    pub saliency: Vec<SaliencyItem>,
}

impl ReportInputs {
    pub fn is_empty(&self) -> bool {
        self.sweep.is_none() && self.correlations.is_empty() && self.external.is_empty() && self.saliency.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub index: PathBuf,
    pub files: Vec<PathBuf>,
}

fn method_color(method: Method) -> RGBColor {
    match method {
        Method::Erm => RGBColor(200, 60, 40),
        Method::GroupDro => RGBColor(40, 90, 200),
        Method::Rsc => RGBColor(40, 150, 70),
    }
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("plot rendering failed: {e}")))
}

/// Mean trap-test AUC against bias factor for the arms of one regime, with
/// a band of one standard error. Factors without a value leave a gap.
fn sweep_plot(sweep: &SweepResult, noisecrop: bool, path: &Path) -> Result<()> {
    let arms: Vec<Arm> = sweep
        .config
        .arms
        .iter()
        .copied()
        .filter(|a| a.noisecrop == noisecrop)
        .collect();
    let mut factors = sweep.config.factors.clone();
    factors.sort_by(f64::total_cmp);
    let (lo, hi) = sweep
        .aggregates
        .iter()
        .filter_map(|a| Some((a.mean? - a.stderr?, a.mean? + a.stderr?)))
        .fold((0.5f64, 1.0f64), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    let (lo, hi) = ((lo - 0.05).max(0.0), (hi + 0.05).min(1.0));
    let title = if noisecrop {
        "Trap test, NoiseCrop"
    } else {
        "Trap test, original images"
    };

    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(-0.02f64..1.02f64, lo..hi)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("bias factor")
        .y_desc("ROC AUC")
        .draw()
        .map_err(plot_error)?;

    for arm in arms {
        let color = method_color(arm.method);
        let points: Vec<Option<(f64, f64, f64)>> = factors
            .iter()
            .map(|&f| {
                let a = sweep.aggregate(f, arm)?;
                Some((f, a.mean?, a.stderr?))
            })
            .collect();
        let mut labelled = false;
        for run in points.split(|p| p.is_none()).filter(|r| !r.is_empty()) {
            let run: Vec<(f64, f64, f64)> = run.iter().flatten().copied().collect();
            let mut band: Vec<(f64, f64)> = run.iter().map(|&(x, m, s)| (x, m + s)).collect();
            band.extend(run.iter().rev().map(|&(x, m, s)| (x, m - s)));
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
                .map_err(plot_error)?;
            let series = chart
                .draw_series(LineSeries::new(
                    run.iter().map(|&(x, m, _)| (x, m)),
                    color.stroke_width(2),
                ))
                .map_err(plot_error)?;
            if !labelled {
                series
                    .label(arm.to_string())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
                labelled = true;
            }
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

fn correlation_cell_color(v: f64) -> String {
    let t = v.abs().min(1.0);
    let fade = |c: f64| (255.0 - (255.0 - c) * t).round() as u8;
    let (r, g, b) = if v >= 0.0 {
        (70.0, 110.0, 220.0)
    } else {
        (220.0, 70.0, 60.0)
    };
    format!("#{:02x}{:02x}{:02x}", fade(r), fade(g), fade(b))
}

/// HTML table of a correlation report with cells shaded by sign and size.
pub fn correlation_html(report: &CorrelationReport) -> String {
    let mut out = String::from("<table class=\"corr\">\n<tr><th>set</th><th>n</th>");
    for a in Artifact::ALL {
        let _ = write!(out, "<th>{}</th>", a.title());
    }
    out.push_str("</tr>\n");
    for row in &report.rows {
        let _ = write!(out, "<tr><td>{}</td><td>{}</td>", html_escape(&row.set), row.n);
        for a in Artifact::ALL {
            match row.values.get(&a).copied().flatten() {
                Some(v) => {
                    let _ = write!(
                        out,
                        "<td style=\"background:{}\">{v:.3}</td>",
                        correlation_cell_color(v)
                    );
                }
                None => out.push_str("<td>-</td>"),
            }
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
    out
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Wide AUC table: one row per factor, one `mean ± stderr` column per arm.
pub fn sweep_auc_csv(sweep: &SweepResult) -> String {
    let mut factors = sweep.config.factors.clone();
    factors.sort_by(f64::total_cmp);
    let mut out = String::from("factor");
    for arm in &sweep.config.arms {
        let _ = write!(out, ",{arm},{arm}_stderr");
    }
    out.push('\n');
    for f in factors {
        let _ = write!(out, "{f}");
        for &arm in &sweep.config.arms {
            match sweep.aggregate(f, arm).and_then(|a| Some((a.mean?, a.stderr?))) {
                Some((m, s)) => {
                    let _ = write!(out, ",{m:.4},{s:.4}");
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

fn sweep_auc_html(sweep: &SweepResult) -> String {
    let mut factors = sweep.config.factors.clone();
    factors.sort_by(f64::total_cmp);
    let mut out = String::from("<table>\n<tr><th>factor</th>");
    for arm in &sweep.config.arms {
        let _ = write!(out, "<th>{arm}</th>");
    }
    out.push_str("</tr>\n");
    for f in factors {
        let _ = write!(out, "<tr><td>{f}</td>");
        for &arm in &sweep.config.arms {
            match sweep
                .aggregate(f, arm)
                .and_then(|a| Some((a.mean?, a.stderr?, a.n_seeds)))
            {
                Some((m, s, n)) => {
                    let _ = write!(out, "<td>{m:.3} &plusmn; {s:.3} (n={n})</td>");
                }
                None => out.push_str("<td>-</td>"),
            }
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
    out
}

fn heat(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r * 255.0, g * 255.0, b * 255.0]
}

/// Saliency blended over the image, framed blue and solid when the
/// prediction is correct, red and dashed when it is wrong.
pub fn saliency_overlay(item: &SaliencyItem) -> Result<RgbImage> {
    let (w, h) = (item.image.width() as usize, item.image.height() as usize);
    if (item.map.width, item.map.height) != (w, h) {
        return Err(Error::Dimension(format!(
            "saliency map is {}x{}, image is {w}x{h}",
            item.map.width, item.map.height
        )));
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let src = item.image.get_pixel(x, y).0;
        let hc = heat(item.map.get(x as usize, y as usize));
        *px = Rgb(std::array::from_fn(|k| {
            (0.5 * f32::from(src[k]) + 0.5 * hc[k]).round() as u8
        }));
    }
    let correct = item.correct();
    let color = if correct {
        Rgb([30, 80, 230])
    } else {
        Rgb([230, 30, 30])
    };
    let thickness = (w.min(h) / 32).max(1) as u32;
    let dash = (w.min(h) / 8).max(2) as u32;
    let (w, h) = (w as u32, h as u32);
    for (x, y) in (0..w).flat_map(|x| (0..h).map(move |y| (x, y))) {
        let on_border = x < thickness || y < thickness || x >= w - thickness || y >= h - thickness;
        if !on_border {
            continue;
        }
        let along = if y < thickness || y >= h - thickness { x } else { y };
        if correct || (along / dash).is_multiple_of(2) {
            out.put_pixel(x, y, color);
        }
    }
    Ok(out)
}

/// Writes plots, tables and overlays under `out_dir` and links them from
/// `index.html`. Sections without inputs are omitted.
pub fn render_report(inputs: &ReportInputs, out_dir: &Path) -> Result<ReportFiles> {
    if inputs.is_empty() {
        return Err(Error::Config("nothing to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>debias-lab report</title>\n\
         <style>body{font-family:sans-serif} table{border-collapse:collapse} \
         td,th{border:1px solid #999;padding:3px 6px;text-align:right} \
         .sal{display:inline-block;margin:4px;text-align:center;font-size:small}</style>\n</head><body>\n",
    );

    if let Some(sweep) = &inputs.sweep {
        let _ = writeln!(html, "<h1>Sweep `{}`</h1>", html_escape(&sweep.sweep_id));
        for noisecrop in [false, true] {
            if !sweep.config.arms.iter().any(|a| a.noisecrop == noisecrop) {
                continue;
            }
            let name = if noisecrop {
                "sweep_noisecrop.svg"
            } else {
                "sweep_original.svg"
            };
            let path = out_dir.join(name);
            sweep_plot(sweep, noisecrop, &path)?;
            files.push(path);
            let _ = writeln!(html, "<img src=\"{name}\" alt=\"{name}\">");
        }
        let path = out_dir.join("sweep_auc.csv");
        fs::write(&path, sweep_auc_csv(sweep))?;
        files.push(path);
        html.push_str("<h2>Trap-test AUC (mean &plusmn; standard error over seeds)</h2>\n");
        html.push_str(&sweep_auc_html(sweep));
        let failed: usize = sweep.aggregates.iter().map(|a| a.n_failed).sum();
        if failed > 0 {
            let _ = writeln!(
                html,
                "<p>{failed} cell(s) failed and are drawn as gaps; see cells.csv.</p>"
            );
        }
    }

    if !inputs.correlations.is_empty() {
        html.push_str("<h1>Artifact/label correlations</h1>\n");
        for (i, report) in inputs.correlations.iter().enumerate() {
            let path = out_dir.join(format!("correlations_{i}.csv"));
            fs::write(&path, report.to_csv())?;
            files.push(path);
            let _ = writeln!(html, "<h2>{}</h2>", html_escape(&report.manifest));
            html.push_str(&correlation_html(report));
        }
    }

    if !inputs.external.is_empty() {
        html.push_str("<h1>External evaluation</h1>\n<table>\n<tr><th>name</th><th>dataset</th><th>NoiseCrop</th><th>AUC</th><th>stderr</th><th>models</th></tr>\n");
        let mut csv = String::from("name,dataset,noisecrop,mean_auc,stderr,n_models\n");
        for (name, r) in &inputs.external {
            let _ = writeln!(
                csv,
                "{name},{},{},{:.4},{:.4},{}",
                r.dataset,
                r.noisecrop,
                r.mean_auc,
                r.stderr,
                r.models.len()
            );
            let _ = writeln!(
                html,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{:.3}</td><td>{:.3}</td><td>{}</td></tr>",
                html_escape(name),
                html_escape(&r.dataset),
                r.noisecrop,
                r.mean_auc,
                r.stderr,
                r.models.len()
            );
        }
        html.push_str("</table>\n");
        let path = out_dir.join("external_auc.csv");
        fs::write(&path, csv)?;
        files.push(path);
        for (name, r) in &inputs.external {
            let _ = writeln!(html, "<h2>Artifact prevalence: {}</h2>\n<table>\n<tr><th>artifact</th><th>overall</th><th>benign</th><th>melanoma</th></tr>", html_escape(name));
            for p in &r.prevalence {
                let _ = writeln!(
                    html,
                    "<tr><td>{}</td><td>{:.3}</td><td>{:.3}</td><td>{:.3}</td></tr>",
                    p.artifact.title(),
                    p.overall,
                    p.benign,
                    p.melanoma
                );
            }
            html.push_str("</table>\n");
        }
    }

    if !inputs.saliency.is_empty() {
        fs::create_dir_all(out_dir.join("saliency"))?;
        html.push_str(
            "<h1>Saliency</h1>\n<p>Blue solid borders mark correct predictions, red dashed borders wrong ones.</p>\n",
        );
        for item in &inputs.saliency {
            let rel = format!("saliency/{}_{}.png", item.id, item.method);
            let path = out_dir.join(&rel);
            saliency_overlay(item)?.save(&path)?;
            files.push(path);
            let _ = writeln!(
                html,
                "<div class=\"sal\"><img src=\"{rel}\" width=\"128\"><br>{} / {}<br>p={:.2} y={}</div>",
                html_escape(&item.id),
                html_escape(&item.method),
                item.probability,
                u8::from(item.label)
            );
        }
    }

    html.push_str("</body></html>\n");
    let index = out_dir.join("index.html");
    fs::write(&index, html)?;
    Ok(ReportFiles { index, files })
}
