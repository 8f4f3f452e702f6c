//! Training curves and closed-loop overlays as SVG, with the plotted points as CSV.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use serde::Deserialize;
use trajscore::evalrun::EpisodeResult;
use trajscore::geom::{Point2, Pose2};
use trajscore::vocab::Vocabulary;
use trajscore::world::{read_dataset, Dataset, TICKS_PER_REPLAN};

use crate::manifest::Usage;

#[derive(Deserialize)]
struct Episodes {
    episodes: Vec<EpisodeResult>,
}

struct Row {
    epoch: usize,
    split: String,
    epdms: f64,
    ec: f64,
}

fn parse_metrics(text: &str) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            bail!("metrics line {}: expected at least 4 fields", i + 1);
        }
        rows.push(Row {
            epoch: f[0].parse().with_context(|| format!("metrics line {}", i + 1))?,
            split: f[1].to_string(),
            epdms: f[2].parse().with_context(|| format!("metrics line {}", i + 1))?,
            ec: f[3].parse().with_context(|| format!("metrics line {}", i + 1))?,
        });
    }
    Ok(rows)
}

fn svg_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("drawing failed: {e:?}")
}

fn curves(metrics: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(metrics).with_context(|| format!("reading {}", metrics.display()))?;
    let rows = parse_metrics(&text)?;
    let last = rows.iter().map(|r| r.epoch).max().unwrap_or(1).max(1);
    let svg = out.join("epdms.svg");
    {
        let root = SVGBackend::new(&svg, (720, 440)).into_drawing_area();
        root.fill(&WHITE).map_err(svg_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("mean EPDMS by epoch", ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0f64..last as f64, 0f64..1f64)
            .map_err(svg_err)?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .y_desc("EPDMS")
            .draw()
            .map_err(svg_err)?;
        for (split, color) in [("train", BLUE), ("heldout", RED)] {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.split == split)
                .map(|r| (r.epoch as f64, r.epdms))
                .collect();
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                .map_err(svg_err)?
                .label(split)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(svg_err)?;
        root.present().map_err(svg_err)?;
    }
    let mut csv = String::from("epoch,split,mean_epdms,mean_ec\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.epoch, r.split, r.epdms, r.ec);
    }
    std::fs::write(out.join("epdms.csv"), csv)?;
    Ok(())
}

fn xy(p: Point2) -> (f64, f64) {
    (p.x, p.y)
}

/// Planned paths in world coordinates, one per replan.
fn planned(ep: &EpisodeResult, vocab: &Vocabulary) -> Vec<Vec<(f64, f64)>> {
    ep.actions
        .iter()
        .enumerate()
        .filter_map(|(k, &a)| {
            let origin: &Pose2 = ep.poses.get(k * TICKS_PER_REPLAN)?;
            (a < vocab.len()).then(|| vocab.get(a).waypoints().iter().map(|w| xy(origin.compose(w).position())).collect())
        })
        .collect()
}

fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn overlay(ep: &EpisodeResult, ds: &Dataset, vocab: Option<&Vocabulary>, out: &Path) -> Result<()> {
    let clip = ds
        .clips
        .iter()
        .find(|c| c.id == ep.clip_id)
        .with_context(|| format!("episode clip {} is not in the dataset", ep.clip_id))?;
    let ring: Vec<(f64, f64)> = clip.map.drivable.ring().iter().map(|p| xy(*p)).collect();
    let realized: Vec<(f64, f64)> = ep.poses.iter().map(|p| (p.x, p.y)).collect();
    let plans = vocab.map(|v| planned(ep, v)).unwrap_or_default();
    let all = ring.iter().chain(&realized).chain(plans.iter().flatten());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // equal scale on both axes
    let span = (x1 - x0).max(y1 - y0) * 0.55 + 1.0;
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let name = safe_name(&ep.clip_id);
    let svg = out.join(format!("rollout_{name}.svg"));
    {
        let root = SVGBackend::new(&svg, (640, 640)).into_drawing_area();
        root.fill(&WHITE).map_err(svg_err)?;
        let caption = format!("{} {:?} rc {:.2} HD {:.2}", ep.clip_id, ep.termination, ep.route_completion, ep.hd_score);
        let mut chart = ChartBuilder::on(&root)
            .caption(caption, ("sans-serif", 16))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(cx - span..cx + span, cy - span..cy + span)
            .map_err(svg_err)?;
        chart.configure_mesh().disable_mesh().draw().map_err(svg_err)?;
        let mut closed = ring.clone();
        closed.extend(ring.first().copied());
        chart.draw_series(LineSeries::new(closed, BLACK)).map_err(svg_err)?;
        for lane in &clip.map.lanes {
            let pts: Vec<(f64, f64)> = lane.centerline.points().iter().map(|p| xy(*p)).collect();
            chart.draw_series(LineSeries::new(pts, RGBColor(170, 170, 170))).map_err(svg_err)?;
        }
        for plan in &plans {
            chart.draw_series(LineSeries::new(plan.clone(), RED.mix(0.5))).map_err(svg_err)?;
        }
        chart.draw_series(LineSeries::new(realized.clone(), BLUE.stroke_width(2))).map_err(svg_err)?;
        root.present().map_err(svg_err)?;
    }
    let mut csv = String::from("kind,index,x,y\n");
    for (i, (x, y)) in realized.iter().enumerate() {
        let _ = writeln!(csv, "realized,{i},{x},{y}");
    }
    for (k, plan) in plans.iter().enumerate() {
        for (x, y) in plan {
            let _ = writeln!(csv, "planned,{k},{x},{y}");
        }
    }
    std::fs::write(out.join(format!("rollout_{name}.csv")), csv)?;
    Ok(())
}

pub fn run(
    metrics: Option<&Path>,
    episodes: Option<&Path>,
    dataset: Option<&Path>,
    vocab: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if metrics.is_none() && episodes.is_none() {
        return Err(Usage("plot needs --metrics or --episodes".into()).into());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = 0;
    if let Some(m) = metrics {
        curves(m, out)?;
        written += 1;
    }
    if let Some(e) = episodes {
        let Some(d) = dataset else {
            return Err(Usage("rollout overlays need --dataset".into()).into());
        };
        let text = std::fs::read_to_string(e).with_context(|| format!("reading {}", e.display()))?;
        let eps: Episodes = serde_json::from_str(&text).with_context(|| format!("parsing {}", e.display()))?;
        let f = std::fs::File::open(d).with_context(|| format!("opening {}", d.display()))?;
        let ds = read_dataset(std::io::BufReader::new(f))?;
        let vocab = vocab.map(Vocabulary::load).transpose()?;
        for ep in &eps.episodes {
            overlay(ep, &ds, vocab.as_ref(), out)?;
            written += 1;
        }
    }
    println!("{written} plots -> {}", out.display());
    Ok(())
}
