//! Summaries and plots from evaluation outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::dataset::{statistics_of, AttributeStat, DatasetManifest};
use crate::eval::{EvalSummary, ImageScore, ATTRIBUTES_FILE, FIXATION_DIR, SCORES_FILE, SUMMARY_FILE};
use crate::infer::AttributeRecord;
use crate::raster;
use crate::taxonomy::{AttributeTaxonomy, Category};
use crate::{Error, Result};

/// Files written by [`report`].
#[derive(Debug, Default)]
pub struct ReportFiles {
    pub written: Vec<PathBuf>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_text(path: &Path, text: &str, files: &mut ReportFiles) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    files.written.push(path.to_path_buf());
    Ok(())
}

pub fn summary_markdown(summary: &EvalSummary, scores: &[ImageScore]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation summary\n");
    let _ = writeln!(s, "Images evaluated: {}, skipped (no ground truth): {}\n", summary.evaluated, summary.skipped);
    let _ = writeln!(s, "| S_alpha | E_phi | F_beta_w | MAE |");
    let _ = writeln!(s, "|---|---|---|---|");
    let _ = writeln!(s, "| {:.4} | {:.4} | {:.4} | {:.4} |\n", summary.s_alpha, summary.e_phi, summary.f_beta_w, summary.mae);
    let _ = writeln!(s, "## Per image\n");
    let _ = writeln!(s, "| image | S_alpha | E_phi | F_beta_w | MAE |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for r in scores {
        let _ = writeln!(s, "| {} | {:.4} | {:.4} | {:.4} | {:.4} |", r.image, r.s_alpha, r.e_phi, r.f_beta_w, r.mae);
    }
    s
}

pub fn scores_csv(summary: &EvalSummary, scores: &[ImageScore]) -> String {
    let mut s = String::from("image,s_alpha,e_phi,f_beta_w,mae\n");
    for r in scores {
        let _ = writeln!(s, "{},{},{},{},{}", csv_field(&r.image), r.s_alpha, r.e_phi, r.f_beta_w, r.mae);
    }
    let _ = writeln!(s, "mean,{},{},{},{}", summary.s_alpha, summary.e_phi, summary.f_beta_w, summary.mae);
    s
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

/// Horizontal bar chart of attribute means (bars) and maxima (ticks),
/// coloured by category.
pub fn attribute_chart_svg(title: &str, stats: &[AttributeStat]) -> String {
    let row = 22.0;
    let label_w = 230.0;
    let bar_w = 420.0;
    let top = 40.0;
    let height = top + row * stats.len() as f64 + 50.0;
    let width = label_w + bar_w + 80.0;
    let scale = stats.iter().map(|s| s.max).fold(0.0, f64::max).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="15">{}</text>"#, xml_escape(title));
    for (i, st) in stats.iter().enumerate() {
        let y = top + row * i as f64;
        let colour = st.category.parse::<Category>().map(Category::color).unwrap_or("#777777");
        let w = bar_w * st.mean / scale;
        let mx = label_w + bar_w * st.max / scale;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, label_w - 6.0, y + 14.0, xml_escape(&st.name));
        let _ = writeln!(s, r#"<rect x="{label_w}" y="{}" width="{w:.2}" height="{}" fill="{colour}"/>"#, y + 3.0, row - 6.0);
        let _ = writeln!(s, r##"<line x1="{mx:.2}" x2="{mx:.2}" y1="{}" y2="{}" stroke="#222" stroke-width="2"/>"##, y + 2.0, y + row - 2.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}">{:.3}</text>"#, mx + 4.0, y + 14.0, st.mean);
    }
    let ly = top + row * stats.len() as f64 + 25.0;
    for (k, c) in Category::ALL.iter().enumerate() {
        let x = label_w + 110.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#, ly - 10.0, c.color());
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{c}</text>"#, x + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{ly}">bar = mean, tick = max</text>"#, label_w + 340.0);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(v: &str) -> String {
    v.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blends a `[0, 1]` heatmap over an image in red, with opacity following
/// the heat.
pub fn overlay(img: &RgbImage, heat: &ndarray::Array2<f64>) -> RgbImage {
    let (h, w) = heat.dim();
    let base = if (img.width() as usize, img.height() as usize) == (w, h) {
        img.clone()
    } else {
        raster::resize_rgb(img, h, w)
    };
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let a = 0.65 * heat[[y as usize, x as usize]].clamp(0.0, 1.0);
        let p = base.get_pixel(x, y);
        let mix = |c: u8, t: f64| ((1.0 - a) * c as f64 + a * t).round() as u8;
        Rgb([mix(p[0], 255.0), mix(p[1], 0.0), mix(p[2], 0.0)])
    })
}

fn taxonomy_of(record: &AttributeRecord) -> Result<AttributeTaxonomy> {
    AttributeTaxonomy::new(
        record
            .attributes
            .iter()
            .map(|a| Ok((a.name.clone(), a.category.parse()?)))
            .collect::<Result<_>>()?,
    )
}

/// Builds the report from an evaluation directory.
///
/// Always writes `summary.md` and `scores.csv`. With predicted attributes
/// present it adds `attribute_stats.json` and `attributes.svg`; with
/// fixation heatmaps, `overlays/*.png`. A manifest adds the ground-truth
/// attribute statistics `dataset_attribute_stats.json` and
/// `dataset_attributes.svg`.
pub fn report(scores_dir: &Path, out_dir: &Path, dataset: Option<(&DatasetManifest, &AttributeTaxonomy)>) -> Result<ReportFiles> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = ReportFiles::default();
    let summary_path = scores_dir.join(SUMMARY_FILE);
    let summary: EvalSummary = serde_json::from_str(&std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?)?;
    let scores: Vec<ImageScore> = read_jsonl(&scores_dir.join(SCORES_FILE))?;
    write_text(&out_dir.join("summary.md"), &summary_markdown(&summary, &scores), &mut files)?;
    write_text(&out_dir.join("scores.csv"), &scores_csv(&summary, &scores), &mut files)?;

    let attr_path = scores_dir.join(ATTRIBUTES_FILE);
    if attr_path.is_file() {
        let records: Vec<AttributeRecord> = read_jsonl(&attr_path)?;
        if let Some(first) = records.first() {
            let tax = taxonomy_of(first)?;
            let rows: Vec<Vec<f64>> = records.iter().map(|r| r.attributes.iter().map(|a| a.proportion).collect()).collect();
            let stats = statistics_of(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>(), &tax)?;
            write_text(&out_dir.join("attribute_stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"), &mut files)?;
            write_text(&out_dir.join("attributes.svg"), &attribute_chart_svg("Predicted attribute contributions", &stats), &mut files)?;
        }
    }

    for score in &scores {
        let Some(name) = &score.fixation else { continue };
        let heat = raster::read_gray(&scores_dir.join(FIXATION_DIR).join(name))?;
        let img = raster::read_rgb(Path::new(&score.image))?;
        let path = out_dir.join("overlays").join(name);
        raster::write_rgb(&path, &overlay(&img, &heat))?;
        files.written.push(path);
    }

    if let Some((manifest, tax)) = dataset {
        let stats = crate::dataset::attribute_statistics(manifest, tax)?;
        write_text(&out_dir.join("dataset_attribute_stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"), &mut files)?;
        write_text(&out_dir.join("dataset_attributes.svg"), &attribute_chart_svg("Annotated attribute contributions", &stats), &mut files)?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_bar_per_attribute() {
        let tax = AttributeTaxonomy::default();
        let p = vec![1.0 / 17.0; 17];
        let stats = statistics_of(&[&p], &tax).unwrap();
        let svg = attribute_chart_svg("t", &stats);
        assert_eq!(svg.matches("<rect").count(), 17 + 3);
        assert!(svg.contains(Category::IQF.color()));
    }

    #[test]
    fn overlay_leaves_cold_pixels_alone() {
        let img = RgbImage::from_pixel(2, 1, Rgb([10, 20, 30]));
        let heat = ndarray::array![[0.0, 1.0]];
        let o = overlay(&img, &heat);
        assert_eq!(o.get_pixel(0, 0), &Rgb([10, 20, 30]));
        assert!(o.get_pixel(1, 0)[0] > 150);
    }

    #[test]
    fn csv_quotes_commas() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("ab"), "ab");
    }
}
