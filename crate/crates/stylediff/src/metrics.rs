//! Evaluation metrics and the CSV row schema.
//!
//! Heavyweight perceptual metrics stay external: FID and LPIPS values are
//! accepted as numbers and only their composition into ArtFID is computed
//! here. The built-in proxies are a pixel RMS for content fidelity and a
//! channel-moment distance for style fidelity.

use crate::error::{Error, Result};
use crate::pipeline::TransferReport;
use crate::tensor::Tensor;

/// Composite metric `(1 + lpips) * (1 + fid)`; strictly increasing in each
/// argument.
pub fn artfid(fid: f64, lpips: f64) -> Result<f64> {
    if fid < 0.0 || lpips < 0.0 {
        return Err(Error::Parameter(format!(
            "artfid inputs must be nonnegative, got fid={fid} lpips={lpips}"
        )));
    }
    Ok((1.0 + lpips) * (1.0 + fid))
}

/// Root-mean-square pixel difference between two equally shaped images.
pub fn recon_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("recon_error", a.shape(), b.shape()));
    }
    Ok(a.rms_dist(b))
}

/// L2 distance between the concatenated per-channel (mean, std) vectors of
/// two images. Channel counts must agree; spatial sizes may differ.
pub fn style_moment_distance(stylized: &Tensor, style: &Tensor) -> Result<f64> {
    let (mu_a, sd_a) = stylized.channel_moments()?;
    let (mu_b, sd_b) = style.channel_moments()?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::dim(
            "style_moment_distance channels",
            stylized.shape(),
            style.shape(),
        ));
    }
    let mut acc = 0.0f64;
    for i in 0..mu_a.len() {
        let dm = mu_a.data()[i] - mu_b.data()[i];
        let ds = sd_a.data()[i] - sd_b.data()[i];
        acc += dm * dm + ds * ds;
    }
    Ok(acc.sqrt())
}

/// Fixed CSV column set shared by every command that emits metrics.
pub const CSV_HEADER: &str =
    "variant,alpha_c,alpha_s,spi_n,blocks,guidance,recon_error,style_moment_distance,fid,lpips,artfid";

/// One metrics record; `artfid` is present exactly when both externals are.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub variant: String,
    pub alpha_c: f64,
    pub alpha_s: f64,
    pub spi_n: usize,
    pub blocks: String,
    pub guidance: f64,
    pub recon_error: f64,
    pub style_moment_distance: f64,
    pub fid: Option<f64>,
    pub lpips: Option<f64>,
    pub artfid: Option<f64>,
}

impl MetricsRow {
    /// Builds a row from a finished transfer: content fidelity against the
    /// content image, style fidelity against the style image, externals
    /// folded in when both are supplied.
    pub fn from_report(
        variant: impl Into<String>,
        report: &TransferReport,
        content_img: &Tensor,
        style_img: &Tensor,
        fid: Option<f64>,
        lpips: Option<f64>,
    ) -> Result<Self> {
        let art = match (fid, lpips) {
            (Some(f), Some(l)) => Some(artfid(f, l)?),
            _ => None,
        };
        let cfg = &report.config;
        Ok(MetricsRow {
            variant: variant.into(),
            alpha_c: cfg.alpha_c,
            alpha_s: cfg.alpha_s,
            spi_n: if cfg.ablation.spi {
                cfg.spi_resample
            } else {
                0
            },
            blocks: blocks_label(&cfg.injection_up_blocks),
            guidance: cfg.guidance_scale,
            recon_error: recon_error(&report.stylized, content_img)?,
            style_moment_distance: style_moment_distance(&report.stylized, style_img)?,
            fid,
            lpips,
            artfid: art,
        })
    }

    fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.alpha_c,
            self.alpha_s,
            self.spi_n,
            self.blocks,
            self.guidance,
            self.recon_error,
            self.style_moment_distance,
            opt(self.fid),
            opt(self.lpips),
            opt(self.artfid),
        )
    }
}

/// Serializes rows under the fixed header; LF line endings, no quoting, so
/// every label must stay comma-free.
pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

/// Dash-joined block label, e.g. `5-6`; keeps CSV cells comma- and
/// bracket-free.
pub fn blocks_label(blocks: &[usize]) -> String {
    blocks
        .iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join("-")
}
