//! Browser demo bindings.
//!
//! The page works on procedurally generated 32x32 content/style pairs so it
//! needs no uploads: pick seeds, move the sliders, run one of three
//! operations (single transfer, five-variant ablation grid, alpha sweep).
//! All heavy lifting stays in the core crate; this layer only builds demo
//! images, massages configs, and serializes results as JSON for the page.

use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use stylediff::config::parse_blocks;
use stylediff::metrics::{recon_error, style_moment_distance};
use stylediff::pipeline::{ablation_suite, transfer, StyleTransferConfig};
use stylediff::tensor::{SeededRng, Tensor};

/// Demo image edge length.
pub const DEMO_SIZE: usize = 32;

/// Smoothly colored content scene: a seeded mix of radial blobs over a
/// two-corner gradient.
pub fn demo_content_image(seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed.wrapping_mul(0x9E37_79B9).wrapping_add(1));
    let n = DEMO_SIZE;
    let mut blobs = Vec::new();
    for _ in 0..4 {
        let cx = rng.next_uniform() * n as f64;
        let cy = rng.next_uniform() * n as f64;
        let radius = 4.0 + rng.next_uniform() * 8.0;
        let color = [rng.next_uniform(), rng.next_uniform(), rng.next_uniform()];
        blobs.push((cx, cy, radius, color));
    }
    let base_a = [rng.next_uniform(), rng.next_uniform(), rng.next_uniform()];
    let base_b = [rng.next_uniform(), rng.next_uniform(), rng.next_uniform()];
    let mut data = vec![0.0f64; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let t = (x + y) as f64 / (2 * n - 2) as f64;
            let mut px = [
                base_a[0] * (1.0 - t) + base_b[0] * t,
                base_a[1] * (1.0 - t) + base_b[1] * t,
                base_a[2] * (1.0 - t) + base_b[2] * t,
            ];
            for (cx, cy, radius, color) in &blobs {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let w = (-d2 / (radius * radius)).exp();
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - w) + color[c] * w;
                }
            }
            for c in 0..3 {
                data[c * n * n + y * n + x] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(vec![3, n, n], data).expect("finite demo image")
}

/// Strongly textured style swatch: seeded angled waves blending two palette
/// colors, plus a grain term.
pub fn demo_style_image(seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed.wrapping_mul(0x85EB_CA6B).wrapping_add(2));
    let n = DEMO_SIZE;
    let angle = rng.next_uniform() * std::f64::consts::PI;
    let freq = 0.4 + rng.next_uniform() * 1.2;
    let warp = rng.next_uniform() * 2.0;
    let pal_a = [rng.next_uniform(), rng.next_uniform(), rng.next_uniform()];
    let pal_b = [rng.next_uniform(), rng.next_uniform(), rng.next_uniform()];
    let grain = 0.06 + rng.next_uniform() * 0.08;
    let (sin_a, cos_a) = angle.sin_cos();
    let mut data = vec![0.0f64; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let u = x as f64 * cos_a + y as f64 * sin_a;
            let v = x as f64 * sin_a - y as f64 * cos_a;
            let phase = freq * u + warp * (0.35 * v).sin();
            let t = 0.5 + 0.5 * phase.sin();
            let g = grain * (rng.next_uniform() - 0.5);
            for c in 0..3 {
                let val = pal_a[c] * (1.0 - t) + pal_b[c] * t + g;
                data[c * n * n + y * n + x] = val.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(vec![3, n, n], data).expect("finite demo image")
}

/// `3 x H x W` tensor in [0, 1] to tightly packed RGBA bytes.
pub fn tensor_to_rgba(img: &Tensor) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((img.at3(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    alpha_c: f64,
    guidance: f64,
    blocks: &str,
    sgsa: bool,
    spi: bool,
    ca_adain: bool,
    dfca: bool,
) -> Result<StyleTransferConfig, String> {
    let mut cfg = StyleTransferConfig::with_master_seed(master_seed);
    cfg.steps = steps;
    cfg.spi_resample = spi_n;
    cfg.alpha_c = alpha_c;
    cfg.alpha_s = 1.0 - alpha_c;
    cfg.guidance_scale = guidance;
    cfg.injection_up_blocks = parse_blocks(blocks).map_err(|e| e.to_string())?;
    cfg.ablation.sgsa = sgsa;
    cfg.ablation.spi = spi;
    cfg.ablation.ca_adain = ca_adain;
    cfg.ablation.dfca = dfca;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn report_json(
    label: &str,
    stylized: &Tensor,
    content: &Tensor,
    style: &Tensor,
) -> Result<serde_json::Value, String> {
    Ok(json!({
        "label": label,
        "rgba": tensor_to_rgba(stylized),
        "recon_error": recon_error(stylized, content).map_err(|e| e.to_string())?,
        "style_moment_distance": style_moment_distance(stylized, style).map_err(|e| e.to_string())?,
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn transfer_json(
    content_seed: u64,
    style_seed: u64,
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    alpha_c: f64,
    guidance: f64,
    blocks: &str,
    sgsa: bool,
    spi: bool,
    ca_adain: bool,
    dfca: bool,
) -> Result<String, String> {
    let cfg = build_config(
        master_seed,
        steps,
        spi_n,
        alpha_c,
        guidance,
        blocks,
        sgsa,
        spi,
        ca_adain,
        dfca,
    )?;
    let content = demo_content_image(content_seed);
    let style = demo_style_image(style_seed);
    let report = transfer(&content, &style, &cfg).map_err(|e| e.to_string())?;
    let mut value = report_json("stylized", &report.stylized, &content, &style)?;
    value["total_ms"] = json!(report.timings.total_ms);
    Ok(value.to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn ablation_json(
    content_seed: u64,
    style_seed: u64,
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    alpha_c: f64,
    guidance: f64,
    blocks: &str,
) -> Result<String, String> {
    let cfg = build_config(
        master_seed,
        steps,
        spi_n,
        alpha_c,
        guidance,
        blocks,
        true,
        true,
        true,
        true,
    )?;
    let content = demo_content_image(content_seed);
    let style = demo_style_image(style_seed);
    let results = ablation_suite(&content, &style, &cfg).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for (label, report) in &results {
        rows.push(report_json(label, &report.stylized, &content, &style)?);
    }
    Ok(json!(rows).to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn alpha_sweep_json(
    content_seed: u64,
    style_seed: u64,
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    guidance: f64,
    blocks: &str,
    points: usize,
) -> Result<String, String> {
    if !(2..=21).contains(&points) {
        return Err("sweep needs between 2 and 21 points".into());
    }
    let content = demo_content_image(content_seed);
    let style = demo_style_image(style_seed);
    let mut rows = Vec::new();
    for i in 0..points {
        let alpha_c = i as f64 / (points - 1) as f64;
        let cfg = build_config(
            master_seed,
            steps,
            spi_n,
            alpha_c,
            guidance,
            blocks,
            true,
            true,
            true,
            true,
        )?;
        let report = transfer(&content, &style, &cfg).map_err(|e| e.to_string())?;
        rows.push(json!({
            "alpha_c": alpha_c,
            "recon_error": recon_error(&report.stylized, &content).map_err(|e| e.to_string())?,
            "style_moment_distance":
                style_moment_distance(&report.stylized, &style).map_err(|e| e.to_string())?,
        }));
    }
    Ok(json!(rows).to_string())
}

// ---- wasm exports -------------------------------------------------------

#[wasm_bindgen]
pub fn content_rgba(seed: u64) -> Vec<u8> {
    tensor_to_rgba(&demo_content_image(seed))
}

#[wasm_bindgen]
pub fn style_rgba(seed: u64) -> Vec<u8> {
    tensor_to_rgba(&demo_style_image(seed))
}

#[wasm_bindgen]
pub fn demo_size() -> usize {
    DEMO_SIZE
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn run_transfer(
    content_seed: u64,
    style_seed: u64,
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    alpha_c: f64,
    guidance: f64,
    blocks: String,
    sgsa: bool,
    spi: bool,
    ca_adain: bool,
    dfca: bool,
) -> Result<String, String> {
    transfer_json(
        content_seed,
        style_seed,
        master_seed,
        steps,
        spi_n,
        alpha_c,
        guidance,
        &blocks,
        sgsa,
        spi,
        ca_adain,
        dfca,
    )
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    content_seed: u64,
    style_seed: u64,
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    alpha_c: f64,
    guidance: f64,
    blocks: String,
) -> Result<String, String> {
    ablation_json(
        content_seed,
        style_seed,
        master_seed,
        steps,
        spi_n,
        alpha_c,
        guidance,
        &blocks,
    )
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn run_alpha_sweep(
    content_seed: u64,
    style_seed: u64,
    master_seed: u64,
    steps: usize,
    spi_n: usize,
    guidance: f64,
    blocks: String,
    points: usize,
) -> Result<String, String> {
    alpha_sweep_json(
        content_seed,
        style_seed,
        master_seed,
        steps,
        spi_n,
        guidance,
        &blocks,
        points,
    )
}
