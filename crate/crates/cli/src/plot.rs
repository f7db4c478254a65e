use std::collections::BTreeMap;

use anyhow::{bail, Result};
use bhc_core::cluster::ClusterResult;
use bhc_core::features::{FeatureRow, FeatureTable, CSV_HEADER};
use bhc_core::ingest::SleepStage;
use bhc_core::lmm::{Diagnostics, Histogram};

use crate::clusters::load_result;
use crate::features::load_table;
use crate::fit::{load_model, model_specs};
use crate::run::Run;
use crate::svg::{color, tick_label, Scale, Svg};

pub const PLOT_DIR: &str = "plots";

const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

/// Plot area in pixels.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

fn frame(svg: &mut Svg, title: &str, x_label: &str, y_label: &str) -> Frame {
    let f = Frame {
        x0: MARGIN_L,
        x1: svg.width - MARGIN_R,
        y0: svg.height - MARGIN_B,
        y1: MARGIN_T,
    };
    svg.text(svg.width / 2.0, 24.0, 15.0, "middle", title);
    if !x_label.is_empty() {
        svg.text((f.x0 + f.x1) / 2.0, svg.height - 15.0, 12.0, "middle", x_label);
    }
    if !y_label.is_empty() {
        svg.vtext(18.0, (f.y0 + f.y1) / 2.0, 12.0, y_label);
    }
    svg.line(f.x0, f.y0, f.x1, f.y0, "black");
    svg.line(f.x0, f.y0, f.x0, f.y1, "black");
    f
}

fn y_ticks(svg: &mut Svg, f: &Frame, ys: &Scale) {
    let (lo, hi) = ys.domain();
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = ys.map(v);
        svg.line(f.x0 - 4.0, y, f.x0, y, "black");
        svg.text(f.x0 - 6.0, y + 4.0, 10.0, "end", &tick_label(v));
    }
}

fn x_ticks(svg: &mut Svg, f: &Frame, xs: &Scale) {
    let (lo, hi) = xs.domain();
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let x = xs.map(v);
        svg.line(x, f.y0, x, f.y0 + 4.0, "black");
        svg.text(x, f.y0 + 16.0, 10.0, "middle", &tick_label(v));
    }
}

/// Labelled bars; each bar carries a `<title>` with its exact value.
fn bar_chart(width: u32, height: u32, title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut svg = Svg::new(width, height);
    let f = frame(&mut svg, title, "", y_label);
    let top = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let ys = Scale::new(0.0, if top > 0.0 { top * 1.05 } else { 1.0 }, f.y0, f.y1);
    y_ticks(&mut svg, &f, &ys);
    let slot = (f.x1 - f.x0) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = f.x0 + slot * (i as f64 + 0.15);
        svg.titled_rect(x, ys.map(*v), slot * 0.7, f.y0 - ys.map(*v), color(i), &format!("{label}: {v}"));
        svg.text(x + slot * 0.35, f.y0 + 16.0, 11.0, "middle", label);
    }
    svg.finish()
}

/// Scored epochs per stage in the feature table.
pub fn stage_counts(rows: &[FeatureRow]) -> [usize; 5] {
    let mut c = [0; 5];
    for r in rows {
        if let Some(i) = r.stage.code() {
            c[i as usize] += 1;
        }
    }
    c
}

pub fn stage_count_plot(rows: &[FeatureRow], width: u32, height: u32) -> String {
    let counts = stage_counts(rows);
    let bars: Vec<(String, f64)> = SleepStage::SCORED
        .iter()
        .zip(counts)
        .map(|(s, n)| (s.label().to_string(), n as f64))
        .collect();
    bar_chart(width, height, "Analyzable epochs per stage", "epochs", &bars)
}

pub fn histogram_plot(h: &Histogram, title: &str, x_label: &str, width: u32, height: u32) -> String {
    let mut svg = Svg::new(width, height);
    let f = frame(&mut svg, title, x_label, "count");
    let lo = h.edges.first().copied().unwrap_or(0.0);
    let hi = h.edges.last().copied().unwrap_or(1.0);
    let xs = Scale::new(lo, hi, f.x0, f.x1);
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let ys = Scale::new(0.0, top * 1.05, f.y0, f.y1);
    y_ticks(&mut svg, &f, &ys);
    x_ticks(&mut svg, &f, &xs);
    for (i, &n) in h.counts.iter().enumerate() {
        let (a, b) = (xs.map(h.edges[i]), xs.map(h.edges[i + 1]));
        let y = ys.map(n as f64);
        svg.titled_rect(
            a,
            y,
            b - a,
            f.y0 - y,
            color(0),
            &format!("[{}, {}): {n}", h.edges[i], h.edges[i + 1]),
        );
    }
    svg.finish()
}

pub fn scatter_plot(
    points: &[(f64, f64)],
    groups: &[usize],
    title: &str,
    labels: (&str, &str),
    diagonal: bool,
    width: u32,
    height: u32,
) -> String {
    let mut svg = Svg::new(width, height);
    let f = frame(&mut svg, title, labels.0, labels.1);
    let xs = Scale::padded(points.iter().map(|p| p.0), f.x0, f.x1);
    let ys = Scale::padded(points.iter().map(|p| p.1), f.y0, f.y1);
    y_ticks(&mut svg, &f, &ys);
    x_ticks(&mut svg, &f, &xs);
    if diagonal {
        let (a, b) = xs.domain();
        let (c, d) = ys.domain();
        let (lo, hi) = (a.max(c), b.min(d));
        if hi > lo {
            svg.line(xs.map(lo), ys.map(lo), xs.map(hi), ys.map(hi), "#999999");
        }
    }
    for (i, &(x, y)) in points.iter().enumerate() {
        svg.circle(xs.map(x), ys.map(y), 2.5, color(groups.get(i).copied().unwrap_or(0)));
    }
    let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
    if n_groups > 1 {
        for g in 0..n_groups {
            let y = f.y1 + 14.0 * g as f64;
            svg.circle(f.x1 - 70.0, y, 4.0, color(g));
            svg.text(f.x1 - 62.0, y + 4.0, 10.0, "start", &format!("cluster {g}"));
        }
    }
    svg.finish()
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Five-number summary. A single value collapses every statistic onto it.
pub fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some([v[0], quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75), v[v.len() - 1]])
}

pub fn column(row: &FeatureRow, name: &str) -> Option<f64> {
    let i = CSV_HEADER.iter().position(|h| *h == name)?;
    match i {
        0..=2 => None,
        3..=12 => Some(row.eeg[(i - 3) / 5][(i - 3) % 5]),
        13 => Some(row.hf_abs),
        14 => Some(row.hf_norm),
        _ => Some(row.hf_yj),
    }
}

/// Per-stage subject means of one feature-table column.
pub fn subject_means(table: &FeatureTable, name: &str) -> Option<[Vec<f64>; 5]> {
    column(table.rows.first()?, name)?;
    let mut acc: BTreeMap<(&str, u8), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        if let (Some(c), Some(v)) = (r.stage.code(), column(r, name)) {
            let e = acc.entry((r.subject_id.as_str(), c)).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut out: [Vec<f64>; 5] = Default::default();
    for ((_, c), (sum, n)) in acc {
        out[c as usize].push(sum / n as f64);
    }
    Some(out)
}

pub fn boxplot(groups: &[Vec<f64>; 5], name: &str, width: u32, height: u32) -> String {
    let mut svg = Svg::new(width, height);
    let f = frame(&mut svg, &format!("Subject means of {name} by stage"), "", name);
    let ys = Scale::padded(groups.iter().flatten().copied(), f.y0, f.y1);
    y_ticks(&mut svg, &f, &ys);
    let slot = (f.x1 - f.x0) / 5.0;
    for (i, stage) in SleepStage::SCORED.iter().enumerate() {
        let cx = f.x0 + slot * (i as f64 + 0.5);
        let g = &groups[i];
        svg.text(cx, f.y0 + 16.0, 11.0, "middle", stage.label());
        svg.text(cx, f.y0 + 30.0, 9.0, "middle", &format!("n={}", g.len()));
        let Some([min, q1, med, q3, max]) = five_numbers(g) else {
            continue;
        };
        let half = slot * 0.25;
        svg.line(cx, ys.map(min), cx, ys.map(q1), "black");
        svg.line(cx, ys.map(q3), cx, ys.map(max), "black");
        svg.line(cx - half / 2.0, ys.map(min), cx + half / 2.0, ys.map(min), "black");
        svg.line(cx - half / 2.0, ys.map(max), cx + half / 2.0, ys.map(max), "black");
        svg.titled_rect(
            cx - half,
            ys.map(q3),
            2.0 * half,
            ys.map(q1) - ys.map(q3),
            "#cfe2f3",
            &format!("{}: median {med}", stage.label()),
        );
        svg.line(cx - half, ys.map(med), cx + half, ys.map(med), "#d62728");
        for &v in g {
            svg.circle(cx, ys.map(v), 2.0, "#333333");
        }
    }
    svg.finish()
}

pub fn distribution_plot(r: &ClusterResult, width: u32, height: u32) -> String {
    let mut svg = Svg::new(width, height);
    let f = frame(
        &mut svg,
        &format!("{} cluster proportions per subject", r.stage.label()),
        "",
        "proportion",
    );
    let ys = Scale::new(0.0, 1.0, f.y0, f.y1);
    y_ticks(&mut svg, &f, &ys);
    let slot = (f.x1 - f.x0) / r.distribution.len().max(1) as f64;
    for (i, (subject, props)) in r.distribution.iter().enumerate() {
        let x = f.x0 + slot * (i as f64 + 0.1);
        let mut acc = 0.0;
        for (c, p) in props.iter().enumerate() {
            let (top, bottom) = (ys.map(acc + p), ys.map(acc));
            svg.titled_rect(x, top, slot * 0.8, bottom - top, color(c), &format!("{subject} cluster {c}: {p}"));
            acc += p;
        }
        svg.text(x + slot * 0.4, f.y0 + 16.0, 10.0, "middle", subject);
    }
    svg.finish()
}

fn residual_plots(run: &mut Run, tag: &str, d: &Diagnostics) -> Result<()> {
    let (w, h) = (run.config.plot.width, run.config.plot.height);
    let hist = histogram_plot(&d.histogram, &format!("{tag} conditional residuals"), "residual", w, h);
    run.write(&format!("{PLOT_DIR}/{tag}_residual_hist.svg"), hist.as_bytes())?;
    let qq = scatter_plot(
        &d.qq,
        &[],
        &format!("{tag} normal QQ (r = {:.4})", d.qq_correlation),
        ("theoretical quantile", "standardized residual"),
        true,
        w,
        h,
    );
    run.write(&format!("{PLOT_DIR}/{tag}_qq.svg"), qq.as_bytes())?;
    Ok(())
}

fn cluster_plots(run: &mut Run, r: &ClusterResult) -> Result<()> {
    let (w, h) = (run.config.plot.width, run.config.plot.height);
    let stage = r.stage.label().to_ascii_lowercase();
    let points: Vec<(f64, f64)> = r
        .pca
        .coords
        .iter()
        .map(|c| (c[0], c.get(1).copied().unwrap_or(0.0)))
        .collect();
    let ratio = |i: usize| r.pca.explained_ratio.get(i).copied().unwrap_or(0.0) * 100.0;
    let pca = scatter_plot(
        &points,
        &r.labels,
        &format!("{} epochs, k = {}", r.stage.label(), r.k),
        (&format!("PC1 ({:.1}%)", ratio(0)), &format!("PC2 ({:.1}%)", ratio(1))),
        false,
        w,
        h,
    );
    run.write(&format!("{PLOT_DIR}/{stage}_pca.svg"), pca.as_bytes())?;
    let dist = distribution_plot(r, w, h);
    run.write(&format!("{PLOT_DIR}/{stage}_distribution.svg"), dist.as_bytes())?;
    Ok(())
}

/// Render every figure from the artifacts of earlier steps.
pub fn plot(run: &mut Run) -> Result<()> {
    let table = load_table(&run.out_dir)?;
    let (w, h) = (run.config.plot.width, run.config.plot.height);
    run.write(
        &format!("{PLOT_DIR}/stage_counts.svg"),
        stage_count_plot(&table.rows, w, h).as_bytes(),
    )?;
    for name in run.config.plot.boxplot_features.clone() {
        let Some(groups) = subject_means(&table, &name) else {
            bail!("plot.boxplot_features: unknown column {name:?}");
        };
        run.write(&format!("{PLOT_DIR}/box_{name}.svg"), boxplot(&groups, &name, w, h).as_bytes())?;
    }
    for (tag, _) in model_specs(run) {
        let (_, diag) = load_model(&run.out_dir, &tag)?;
        residual_plots(run, &tag, &diag)?;
    }
    let stages: Vec<SleepStage> = run.config.cluster.stages.iter().map(|s| s.stage).collect();
    let mut drawn = 0;
    for stage in &stages {
        match load_result(&run.out_dir, *stage) {
            Ok(r) => {
                cluster_plots(run, &r)?;
                drawn += 1;
            }
            Err(e) => run.warn(format!("{e:#}")),
        }
    }
    if drawn == 0 && !stages.is_empty() {
        bail!("no cluster results found; run `bhc cluster` first");
    }
    Ok(())
}
