//! Static SVG charts of the summary table.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::SummaryRow;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Invalid(format!("plotting failed: {e}"))
}

const EXPERT_COLORS: [RGBColor; 3] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14), RGBColor(44, 160, 44)];

/// Distinct values in first-seen order.
fn distinct<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// One bar chart of mean (w1, w2, w3) per test split, per variant and training ratio.
pub fn plot_weight_bars(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    let groups = distinct(rows.iter().map(|r| (r.model_variant.clone(), r.train_ir.to_bits())));
    for (variant, ir_bits) in groups {
        let ir = f64::from_bits(ir_bits);
        let sel: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| r.model_variant == variant && r.train_ir.to_bits() == ir_bits)
            .collect();
        let path = dir.join(format!("weights_{variant}_ir{ir}.svg"));
        let root = SVGBackend::new(&path, (640, 400)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let n = sel.len();
        let mut chart = ChartBuilder::on(&root)
            .caption(
                format!("aggregation weights, {variant}, train IR {ir}"),
                ("sans-serif", 18),
            )
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(40)
            .build_cartesian_2d(0f64..n as f64, 0f64..1f64)
            .map_err(plot_err)?;
        let labels: Vec<String> = sel.iter().map(|r| r.test_spec.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n.max(1) * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - i as f64 - 0.5).abs() < 1e-9 && i < labels.len() {
                    labels[i].clone()
                } else {
                    String::new()
                }
            })
            .y_desc("weight")
            .draw()
            .map_err(plot_err)?;
        for j in 0..3 {
            let color = EXPERT_COLORS[j];
            chart
                .draw_series(sel.iter().enumerate().map(|(i, r)| {
                    let w = [r.w1_mean, r.w2_mean, r.w3_mean][j];
                    let x0 = i as f64 + 0.15 + 0.233 * j as f64;
                    Rectangle::new([(x0, 0.0), (x0 + 0.2, w)], color.filled())
                }))
                .map_err(plot_err)?
                .label(format!("w{}", j + 1))
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(())
}

/// Macro-F1 across test splits, one line per variant, one chart per training ratio.
pub fn plot_f1_lines(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    for ir_bits in distinct(rows.iter().map(|r| r.train_ir.to_bits())) {
        let ir = f64::from_bits(ir_bits);
        let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.train_ir.to_bits() == ir_bits).collect();
        let splits = distinct(sel.iter().map(|r| r.test_spec.clone()));
        let variants = distinct(sel.iter().map(|r| r.model_variant.clone()));
        let path = dir.join(format!("f1_ir{ir}.svg"));
        let root = SVGBackend::new(&path, (640, 400)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("macro F1 by test split, train IR {ir}"), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(-0.5f64..splits.len() as f64 - 0.5, 0f64..1f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_labels(splits.len().max(1))
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < splits.len() {
                    splits[i as usize].clone()
                } else {
                    String::new()
                }
            })
            .y_desc("macro F1")
            .draw()
            .map_err(plot_err)?;
        for (vi, variant) in variants.iter().enumerate() {
            let color = Palette99::pick(vi).to_rgba();
            let points: Vec<(f64, f64)> = splits
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    sel.iter()
                        .find(|r| &r.model_variant == variant && &r.test_spec == s)
                        .map(|r| (i as f64, r.macro_f1_mean))
                })
                .collect();
            chart
                .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(variant.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart
                .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(())
}
