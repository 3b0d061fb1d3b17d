//! Self-contained SVG plots and a markdown summary built from pipeline
//! outputs.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::rngs::mock::StepRng;

use crate::corpus::SceneItem;
use crate::dpo::DpoCurveRow;
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Pose, Vec2};
use crate::io::{read_csv, read_json, write_atomic};
use crate::kinematics::Trajectory;
use crate::pipeline::{EvalReport, Pipeline, Policy, PreferenceSummary, Split};
use crate::planner::DecodeMode;
use crate::train::CurveRow;

/// Test scenes rendered top-down.
pub const RENDERED_SCENES: usize = 4;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One named polyline of a chart.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points: points.into_iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// A line chart with axes, five ticks per axis and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let (x0, x1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            "<line x1=\"{0:.1}\" y1=\"{1}\" x2=\"{0:.1}\" y2=\"{2}\" stroke=\"#ddd\"/><text x=\"{0:.1}\" y=\"{3}\" text-anchor=\"middle\">{4:.3}</text>",
            sx(xv),
            top,
            top + ph,
            top + ph + 16.0,
            xv
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{1}\" y1=\"{0:.1}\" x2=\"{2}\" y2=\"{0:.1}\" stroke=\"#ddd\"/><text x=\"{3}\" y=\"{0:.1}\" text-anchor=\"end\" dy=\"4\">{4:.3}</text>",
            sy(yv),
            left,
            left + pw,
            left - 6.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if pts.len() == 1 {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(s.points[0].0), sy(s.points[0].1));
        } else {
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                pts.join(" ")
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn points_attr(points: &[Vec2]) -> String {
    points.iter().map(|p| format!("{:.2},{:.2}", p.x, p.y)).collect::<Vec<_>>().join(" ")
}

fn box_polygon(b: &OrientedBox, fill: &str, opacity: f64) -> String {
    format!(
        r#"<polygon points="{}" fill="{fill}" fill-opacity="{opacity}" stroke="{fill}" stroke-width="0.15"/>"#,
        points_attr(&b.corners())
    )
}

/// Top-down view of a scene: drivable corridor, route, agents over the
/// horizon, the expert trajectory and each planned trajectory (ego frame).
pub fn render_scene(item: &SceneItem, plans: &[(&str, &Trajectory)], ego_length: f64, ego_width: f64) -> String {
    let scene = &item.scene;
    let to_world = |t: &Trajectory| -> Vec<Pose> { scene.world_poses(t) };
    let expert = to_world(&item.expert);
    let planned: Vec<(&str, Vec<Pose>)> = plans.iter().map(|(n, t)| (*n, to_world(t))).collect();
    let mut focus: Vec<Vec2> = expert.iter().map(|p| Vec2::new(p.x, p.y)).collect();
    for (_, ps) in &planned {
        focus.extend(ps.iter().map(|p| Vec2::new(p.x, p.y)));
    }
    let margin = 15.0;
    let (x0, x1) = padded_range(focus.iter().map(|p| p.x));
    let (y0, y1) = padded_range(focus.iter().map(|p| p.y));
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let half = ((x1 - x0).max(y1 - y0) / 2.0 + margin).max(20.0);
    let size = 560.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" viewBox="0 0 {size} {}" font-family="sans-serif" font-size="12">"#,
        size + 30.0,
        size + 30.0
    );
    let _ = writeln!(svg, r#"<rect width="{size}" height="{}" fill="white"/>"#, size + 30.0);
    let _ = writeln!(
        svg,
        r#"<text x="8" y="18">{} {} ({})</text>"#,
        escape(&item.id),
        scene.kind,
        escape(&format!("{:?}", scene.command))
    );
    let s = size / (2.0 * half);
    let _ = writeln!(
        svg,
        r#"<g transform="translate(0 30) scale({s:.5} {:.5}) translate({:.3} {:.3})">"#,
        -s,
        half - cx,
        -(cy + half)
    );
    let _ = writeln!(
        svg,
        "<polygon points=\"{}\" fill=\"#eeeeee\" stroke=\"#888\" stroke-width=\"0.2\"/>",
        points_attr(&scene.corridor)
    );
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#bbb\" stroke-width=\"0.15\" stroke-dasharray=\"1 1\"/>",
        points_attr(&scene.centerline)
    );
    for agent in &scene.agents {
        for k in (0..agent.poses.len()).rev() {
            let opacity = if k == 0 { 0.8 } else { 0.12 };
            svg.push_str(&box_polygon(&agent.footprint(k), "#555555", opacity));
            svg.push('\n');
        }
    }
    let mut draw = |poses: &[Pose], color: &str| {
        let pts: Vec<Vec2> = poses.iter().map(|p| Vec2::new(p.x, p.y)).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.35"/>"#,
            points_attr(&pts)
        );
        for p in poses {
            let b = OrientedBox::at(p, ego_length, ego_width);
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="none" stroke="{color}" stroke-width="0.1" stroke-opacity="0.6"/>"#,
                points_attr(&b.corners())
            );
        }
    };
    draw(&expert, PALETTE[2]);
    for (i, (_, poses)) in planned.iter().enumerate() {
        draw(poses, PALETTE[(i + 3) % PALETTE.len()]);
    }
    svg.push_str("</g>\n");
    let mut legend = vec![("expert", PALETTE[2])];
    legend.extend(planned.iter().enumerate().map(|(i, (n, _))| (*n, PALETTE[(i + 3) % PALETTE.len()])));
    for (i, (name, color)) in legend.iter().enumerate() {
        let x = size - 130.0;
        let y = 16.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            x + 16.0,
            x + 22.0,
            y + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingInput { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn fmt_row(name: &str, r: &EvalReport) -> String {
    let p = &r.percent;
    format!(
        "| {name} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} |\n",
        p.nc, p.dac, p.ttc, p.comfort, p.ep, p.pdms
    )
}

fn save(out: &mut Vec<PathBuf>, path: PathBuf, text: &str) -> Result<()> {
    write_atomic(&path, text.as_bytes())?;
    out.push(path);
    Ok(())
}

/// Writes every plot the available inputs allow. The manifest and the
/// pre-training curve are required; DPO curves, evaluation summaries and
/// checkpoints are used when present.
pub fn write_report(p: &Pipeline) -> Result<Vec<PathBuf>> {
    p.load_manifest()?;
    let pre: Vec<CurveRow> = read_csv(&p.path("pretrain/curve.csv"))?;
    let dir = p.path("report");
    let mut written = Vec::new();

    let epochs = |f: fn(&CurveRow) -> f64| pre.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    save(
        &mut written,
        dir.join("pretrain_loss.svg"),
        &line_chart(
            "Imitation pre-training",
            "epoch",
            "loss",
            &[Series::new("action CE", epochs(|r| r.ce)), Series::new("map aux CE", epochs(|r| r.aux))],
        ),
    )?;
    save(
        &mut written,
        dir.join("pretrain_accuracy.svg"),
        &line_chart("Action accuracy", "epoch", "accuracy", &[Series::new("train", epochs(|r| r.acc))]),
    )?;

    let mut dpo_curves = Vec::new();
    for (name, rel) in [("DPO multi-pair", "dpo/curve.csv"), ("DPO naive", "dpo-naive/curve.csv")] {
        if let Some(rows) = optional(read_csv::<DpoCurveRow>(&p.path(rel)))? {
            dpo_curves.push((name, rows));
        }
    }
    if !dpo_curves.is_empty() {
        let loss: Vec<Series> = dpo_curves
            .iter()
            .map(|(n, rows)| Series::new(*n, rows.iter().filter_map(|r| Some((r.iter as f64, r.loss?))).collect()))
            .collect();
        save(&mut written, dir.join("dpo_loss.svg"), &line_chart("DPO loss", "iteration", "loss", &loss))?;
        let pdms: Vec<Series> = dpo_curves
            .iter()
            .map(|(n, rows)| {
                Series::new(*n, rows.iter().filter_map(|r| Some((r.iter as f64, r.heldout_pdms?))).collect())
            })
            .collect();
        save(
            &mut written,
            dir.join("dpo_pdms.svg"),
            &line_chart("Held-out PDMS during fine-tuning", "iteration", "PDMS", &pdms),
        )?;
    }

    let planners: Vec<(Policy, crate::planner::Planner)> = [Policy::Pretrained, Policy::Dpo, Policy::DpoNaive]
        .into_iter()
        .filter_map(|pol| {
            let path = p.checkpoint_path(pol)?;
            Some(optional(p.load_planner(&path)).map(|o| o.map(|pl| (pol, pl))))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let test = p.load_corpus(Some(Split::Test))?;
    for item in test.iter().take(RENDERED_SCENES) {
        let mut plans = Vec::new();
        for (pol, planner) in &planners {
            let plan = planner.plan(
                &item.tokens,
                &item.initial(),
                DecodeMode::Greedy,
                item.scene.horizon,
                item.scene.dt,
                &mut StepRng::new(0, 0),
            )?;
            plans.push((pol.name(), plan.trajectory));
        }
        let refs: Vec<(&str, &Trajectory)> = plans.iter().map(|(n, t)| (*n, t)).collect();
        let m = &p.config.metrics;
        save(
            &mut written,
            dir.join(format!("scene_{}.svg", item.id)),
            &render_scene(item, &refs, m.ego_length, m.ego_width),
        )?;
    }

    let mut md = String::from("# Run summary\n\n");
    md.push_str("Held-out means on a 0–100 scale.\n\n");
    md.push_str("| policy | NC | DAC | TTC | Comfort | EP | PDMS |\n|---|---|---|---|---|---|---|\n");
    let mut any = false;
    for pol in Policy::ALL {
        if let Some(r) = optional(read_json::<EvalReport>(&p.path(&format!("eval/{pol}.json"))))? {
            md.push_str(&fmt_row(pol.name(), &r));
            any = true;
        }
    }
    if !any {
        md.push_str("| (no evaluations found) | | | | | | |\n");
    }
    if let Some(last) = pre.last() {
        let _ = write!(
            md,
            "\nPre-training: {} epochs, final CE {:.4}, accuracy {:.3}.\n",
            last.epoch, last.ce, last.acc
        );
    }
    if let Some(s) = optional(read_json::<PreferenceSummary>(&p.path("prefs/summary.json")))? {
        let _ = write!(
            md,
            "\nPreferences: {} records from {} scenes ({} skipped), {} naive pairs; losers {:?}.\n",
            s.records, s.scenes, s.skipped, s.naive_records, s.losers
        );
    }
    for (name, rows) in &dpo_curves {
        if let (Some(first), Some(last)) = (
            rows.iter().find_map(|r| r.heldout_pdms),
            rows.iter().rev().find_map(|r| r.heldout_pdms),
        ) {
            let _ = write!(md, "\n{name}: held-out PDMS {first:.4} → {last:.4} over {} iterations.\n", rows.len() - 1);
        }
    }
    save(&mut written, dir.join("summary.md"), &md)?;
    Ok(written)
}
