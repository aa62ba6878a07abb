//! Single-image inference with overlay and confidence-heatmap outputs,
//! plus optional attention and graph dumps.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ctxseg_core::Scalar;
use ctxseg_data::netpbm::{self, GrayImage, RgbImage};

use crate::checkpoint::Checkpoint;
use crate::pipeline::{predict, Prediction};
use crate::trainer::restore_model;

/// Fixed palette: background black, foreground classes on a golden-angle
/// hue wheel. Deterministic by construction.
pub fn class_color(mask_value: u8) -> [u8; 3] {
    if mask_value == 0 {
        return [0, 0, 0];
    }
    let hue = ((mask_value as f64 - 1.0) * 137.508) % 360.0;
    hsv_to_rgb(hue, 0.85, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

/// 50/50 alpha blend of the input image with per-class colors,
/// round-half-up per channel.
pub fn overlay_image(image: &RgbImage, mask: &ctxseg_data::Mask) -> RgbImage {
    let mut out = RgbImage::new(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let base = image.get(x, y);
            let color = class_color(mask.get(x, y));
            let mut px = [0u8; 3];
            for c in 0..3 {
                px[c] = ((base[c] as u16 + color[c] as u16 + 1) / 2) as u8;
            }
            out.set(x, y, px);
        }
    }
    out
}

/// Per-pixel max-softmax probability scaled to 0-255.
pub fn heatmap_image(confidence: &[f64], w: u32, h: u32) -> GrayImage {
    let mut out = GrayImage::new(w, h);
    for (o, &c) in out.data.iter_mut().zip(confidence) {
        *o = (255.0 * c).round().clamp(0.0, 255.0) as u8;
    }
    out
}

#[derive(Serialize)]
struct GraphDumpNode {
    id: usize,
    class: String,
    centroid: [f64; 2],
    area: usize,
}

#[derive(Serialize)]
struct GraphDump {
    nodes: Vec<GraphDumpNode>,
    edges: Vec<[usize; 2]>,
}

pub fn attention_csv(attn: &ctxseg_model::AttentionWeights, labels: &[String]) -> String {
    let mut out = String::from("row,col,head,label,weight\n");
    for row in 0..attn.h {
        for col in 0..attn.w {
            for head in 0..attn.heads {
                for (l, label) in labels.iter().enumerate() {
                    out.push_str(&format!(
                        "{row},{col},{head},{label},{:.6}\n",
                        attn.get(row, col, head, l)
                    ));
                }
            }
        }
    }
    out
}

pub struct InferOptions {
    pub dump_attention: bool,
    pub dump_graph: bool,
}

pub fn infer_image<F: Scalar>(
    ckpt: &Checkpoint<F>,
    image_path: &Path,
    out_dir: &Path,
    opts: &InferOptions,
) -> Result<Prediction> {
    let image = netpbm::load_ppm(image_path)?;
    let (built, _) = restore_model::<F>(ckpt)?;
    let prediction = predict(built.variant.as_ref(), &built.store, &image)?;
    if (prediction.label_h as u32, prediction.label_w as u32) != (image.height, image.width) {
        bail!(
            "label grid {}x{} does not match image {}x{}",
            prediction.label_w,
            prediction.label_h,
            image.width,
            image.height
        );
    }

    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    netpbm::save_ppm(&out_dir.join("overlay.ppm"), &overlay_image(&image, &prediction.mask))?;
    netpbm::save_pgm(
        &out_dir.join("heatmap.pgm"),
        &heatmap_image(&prediction.confidence, image.width, image.height),
    )?;

    if opts.dump_attention {
        let attn = prediction
            .attention
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("variant {:?} exposes no attention weights", ckpt.meta.config.variant))?;
        fs::write(out_dir.join("attention.csv"), attention_csv(attn, &ckpt.meta.classes))?;
    }
    if opts.dump_graph {
        let graph = prediction
            .graph
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("variant {:?} builds no scene graph", ckpt.meta.config.variant))?;
        let dump = GraphDump {
            nodes: graph
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| GraphDumpNode {
                    id,
                    class: ckpt.meta.classes[n.class_index].clone(),
                    centroid: [n.centroid.0, n.centroid.1],
                    area: n.area,
                })
                .collect(),
            edges: graph.edges.iter().map(|&(i, j)| [i, j]).collect(),
        };
        fs::write(
            out_dir.join("graph.json"),
            serde_json::to_string_pretty(&dump)? + "\n",
        )?;
    }
    Ok(prediction)
}
