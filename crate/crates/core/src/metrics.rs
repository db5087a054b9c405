//! Per-frame quality metrics and their aggregation into a JSON report.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::palette::{dist2, kmeans_extract, Palette};
use crate::scalar::Scalar;
use crate::vidio::{luma, Frame, Video};

/// PSNR reported for identical frames, and the ceiling for all others.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// K-means seed used when re-extracting a palette from predicted frames.
pub const ADHERENCE_SEED: u64 = 0;

/// Hasler and Süsstrunk colorfulness of an RGB frame on the 0–255 scale.
pub fn colorfulness<T: Scalar>(frame: &Frame<T>) -> Result<f64> {
    if frame.channels() != 3 {
        return Err(Error::InvalidArgument("colorfulness needs an RGB frame".into()));
    }
    let n = frame.pixel_count() as f64;
    let (mut s_rg, mut s_yb) = (0.0, 0.0);
    let opp: Vec<(f64, f64)> = frame
        .rgb_pixels()
        .map(|[r, g, b]| {
            let (r, g, b) = (255.0 * r, 255.0 * g, 255.0 * b);
            let rg = r - g;
            let yb = 0.5 * (r + g) - b;
            s_rg += rg;
            s_yb += yb;
            (rg, yb)
        })
        .collect();
    let (m_rg, m_yb) = (s_rg / n, s_yb / n);
    let var_rg = opp.iter().map(|(rg, _)| (rg - m_rg).powi(2)).sum::<f64>() / n;
    let var_yb = opp.iter().map(|(_, yb)| (yb - m_yb).powi(2)).sum::<f64>() / n;
    Ok((var_rg + var_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt())
}

fn same_geometry<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(pred: &Frame<T>, reference: &Frame<T>) -> Result<f64> {
    same_geometry(pred, reference)?;
    let n = pred.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn luma_plane<T: Scalar>(frame: &Frame<T>) -> Vec<f64> {
    if frame.channels() == 1 {
        frame.data().iter().map(|v| v.as_f64()).collect()
    } else {
        frame.rgb_pixels().map(|[r, g, b]| luma(r, g, b)).collect()
    }
}

/// Mean structural similarity of the luma planes over every position where
/// the 11×11 Gaussian window fits entirely inside the frame.
pub fn ssim<T: Scalar>(pred: &Frame<T>, reference: &Frame<T>) -> Result<f64> {
    same_geometry(pred, reference)?;
    let (w, h) = (pred.width(), pred.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let x = luma_plane(pred);
    let y = luma_plane(reference);
    let kernel = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - SSIM_WINDOW {
        for ox in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                let row = (oy + ky) * w + ox;
                for kx in 0..SSIM_WINDOW {
                    let k = kernel[ky * SSIM_WINDOW + kx];
                    let (a, b) = (x[row + kx], y[row + kx]);
                    mx += k * a;
                    my += k * b;
                    xx += k * a * a;
                    yy += k * b * b;
                    xy += k * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn nearest(from: &[[f64; 3]; 5], to: &[[f64; 3]; 5]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| dist2(a, b)).fold(f64::INFINITY, f64::min).sqrt())
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric mean nearest-neighbour RGB distance between two palettes.
pub fn palette_distance(a: &Palette, b: &Palette) -> f64 {
    0.5 * (nearest(a.colors(), b.colors()) + nearest(b.colors(), a.colors()))
}

/// Distance between the target palette and the K-means palette of `frame`.
pub fn frame_palette_adherence<T: Scalar>(frame: &Frame<T>, target: &Palette) -> Result<f64> {
    let extracted = kmeans_extract(std::slice::from_ref(frame), ADHERENCE_SEED, 100)?;
    Ok(palette_distance(&extracted, target))
}

/// Mean of [`frame_palette_adherence`] over the frames of `video`. Lower is closer.
pub fn palette_adherence<T: Scalar>(video: &Video<T>, target: &Palette) -> Result<f64> {
    let mut total = 0.0;
    for frame in video.frames() {
        total += frame_palette_adherence(frame, target)?;
    }
    Ok(total / video.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Colorful,
    Psnr,
    Ssim,
    PaletteAdherence,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Colorful, Metric::Psnr, Metric::Ssim, Metric::PaletteAdherence];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Colorful => "colorful",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::PaletteAdherence => "palette-adherence",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_frame: Vec<f64>,
    pub aggregate: f64,
}

/// Every requested metric plus placeholders for learned metrics that this
/// crate does not compute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    pub metrics: Vec<MetricReport>,
    pub fid: Option<f64>,
    pub fvd: Option<f64>,
    pub lpips: Option<f64>,
}

impl EvalReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.metric == metric.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores `pred` frame by frame. Reference metrics need `reference` with the
/// same frame count and geometry; adherence needs `palette`.
pub fn evaluate<T: Scalar>(
    pred: &Video<T>,
    reference: Option<&Video<T>>,
    palette: Option<&Palette>,
    metrics: &[Metric],
) -> Result<EvalReport> {
    if let Some(r) = reference {
        if r.len() != pred.len() {
            return Err(Error::DimensionMismatch(format!(
                "prediction has {} frames, reference {}",
                pred.len(),
                r.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let per_frame = pred
            .frames()
            .iter()
            .enumerate()
            .map(|(i, frame)| {
                let reference = || {
                    reference
                        .map(|r| &r.frames()[i])
                        .ok_or_else(|| Error::MissingInput(format!("{metric} needs a reference video")))
                };
                match metric {
                    Metric::Colorful => colorfulness(frame),
                    Metric::Psnr => psnr(frame, reference()?),
                    Metric::Ssim => ssim(frame, reference()?),
                    Metric::PaletteAdherence => {
                        let p = palette.ok_or_else(|| {
                            Error::MissingInput(format!("{metric} needs a target palette"))
                        })?;
                        frame_palette_adherence(frame, p)
                    }
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let aggregate = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
        out.push(MetricReport {
            metric: metric.name().to_string(),
            per_frame,
            aggregate,
        });
    }
    Ok(EvalReport {
        frames: pred.len(),
        metrics: out,
        fid: None,
        fvd: None,
        lpips: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f64) -> Frame<f64> {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Frame::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn colorfulness_of_gray_and_flat_red() {
        let gray = Frame::<f64>::filled(8, 8, &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(colorfulness(&gray).unwrap(), 0.0);
        // rg = 255, yb = 127.5, no spread
        let red = Frame::<f64>::filled(4, 4, &[1.0, 0.0, 0.0]).unwrap();
        let want = 0.3 * (255.0f64.powi(2) + 127.5f64.powi(2)).sqrt();
        assert!((colorfulness(&red).unwrap() - want).abs() < 1e-9);
        assert!((colorfulness(&red).unwrap() - 85.53).abs() < 0.01);
        let one = Frame::<f64>::filled(4, 4, &[0.3]).unwrap();
        assert!(colorfulness(&one).is_err());
    }

    #[test]
    fn colorfulness_red_blue_pair() {
        let f = Frame::<f64>::new(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        // population stats: rg = {255, 0}, yb = {127.5, -255}
        let (s_rg, s_yb) = (127.5f64, 191.25f64);
        let (m_rg, m_yb) = (127.5f64, -63.75f64);
        let want = s_rg.hypot(s_yb) + 0.3 * m_rg.hypot(m_yb);
        assert!((colorfulness(&f).unwrap() - want).abs() < 1e-9);
        assert!((colorfulness(&f).unwrap() - 272.63).abs() < 0.05);
    }

    #[test]
    fn colorfulness_half_split() {
        // left half red, right half green: rg = ±255 with mean 0, yb = 127.5
        let f = frame(4, 2, |x, _, c| match (x < 2, c) {
            (true, 0) | (false, 1) => 1.0,
            _ => 0.0,
        });
        let want = 255.0 + 0.3 * 127.5;
        assert!((colorfulness(&f).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn psnr_values() {
        let a = Frame::<f64>::filled(4, 4, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Frame::<f64>::filled(4, 4, &[0.6, 0.6, 0.6]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = Frame::<f64>::filled(4, 4, &[0.5, 0.5, 0.5 + 1e-6]).unwrap();
        assert_eq!(psnr(&a, &c).unwrap(), PSNR_CAP);
        let small = Frame::<f64>::filled(3, 4, &[0.5, 0.5, 0.5]).unwrap();
        assert!(psnr(&a, &small).is_err());
        let zero = Frame::<f64>::filled(4, 4, &[0.0, 0.0, 0.0]).unwrap();
        let one = Frame::<f64>::filled(4, 4, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let base = frame(16, 16, |x, y, c| 0.3 + 0.02 * ((x + 2 * y + c) % 10) as f64);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.1] {
            let noisy = frame(16, 16, |x, y, c| {
                let sign = if (x * 31 + y * 17 + c * 7) % 2 == 0 { 1.0 } else { -1.0 };
                0.3 + 0.02 * ((x + 2 * y + c) % 10) as f64 + sign * amp
            });
            let p = psnr(&noisy, &base).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_constant_frames() {
        let zero = Frame::<f64>::filled(12, 12, &[0.0, 0.0, 0.0]).unwrap();
        let one = Frame::<f64>::filled(12, 12, &[1.0, 1.0, 1.0]).unwrap();
        let want = 1e-4 / (1.0 + 1e-4);
        assert!((ssim(&zero, &one).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn ssim_brute_force_oracle() {
        let a = frame(13, 12, |x, y, c| ((x * 7 + y * 3 + c * 5) % 11) as f64 / 10.0);
        let b = frame(13, 12, |x, y, c| ((x * 2 + y * 5 + c) % 13) as f64 / 12.0);
        // separate implementation: direct sample means with the normalized 2-D kernel
        let s = SSIM_SIGMA;
        let mut g = [[0.0; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let r2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
                *v = (-r2 / (2.0 * s * s)).exp();
                norm += *v;
            }
        }
        let la: Vec<f64> = a.rgb_pixels().map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b).collect();
        let lb: Vec<f64> = b.rgb_pixels().map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b).collect();
        let mut sum = 0.0;
        let mut n = 0.0;
        for oy in 0..2 {
            for ox in 0..3 {
                let at = |p: &[f64], i: usize, j: usize| p[(oy + i) * 13 + ox + j];
                let mut m = [0.0; 2];
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / norm;
                        m[0] += wgt * at(&la, i, j);
                        m[1] += wgt * at(&lb, i, j);
                    }
                }
                let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / norm;
                        let (da, db) = (at(&la, i, j) - m[0], at(&lb, i, j) - m[1]);
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cab += wgt * da * db;
                    }
                }
                sum += ((2.0 * m[0] * m[1] + 1e-4) * (2.0 * cab + 9e-4))
                    / ((m[0] * m[0] + m[1] * m[1] + 1e-4) * (va + vb + 9e-4));
                n += 1.0;
            }
        }
        assert!((ssim(&a, &b).unwrap() - sum / n).abs() < 1e-9);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Frame::<f64>::filled(10, 16, &[0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn adherence_of_exact_palette_frame() {
        let colors = [[0.9, 0.1, 0.1], [0.1, 0.8, 0.2], [0.1, 0.2, 0.9], [0.9, 0.9, 0.1], [0.5, 0.1, 0.6]];
        let f = frame(10, 10, |x, _, c| colors[x % 5][c]);
        let p = Palette::new(colors).unwrap();
        let v = Video::new(vec![f.clone(); 3], 24.0).unwrap();
        assert!(palette_adherence(&v, &p).unwrap() < 1e-9);
        let other = Palette::uniform([0.0, 0.0, 0.0]).unwrap();
        assert!(frame_palette_adherence(&f, &other).unwrap() > 0.3);
        assert_eq!(palette_distance(&p, &p), 0.0);
        assert_eq!(palette_distance(&p, &other), palette_distance(&other, &p));

        let white = Video::new(vec![Frame::<f64>::filled(6, 6, &[1.0, 1.0, 1.0]).unwrap(); 2], 24.0).unwrap();
        assert!((palette_adherence(&white, &Palette::null()).unwrap() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_report_shape() {
        let a = Frame::<f64>::filled(12, 12, &[0.5, 0.4, 0.3]).unwrap();
        let v = Video::new(vec![a.clone(), a], 24.0).unwrap();
        let r = evaluate(&v, Some(&v), None, &[Metric::Psnr, Metric::Colorful]).unwrap();
        assert_eq!(r.get(Metric::Psnr).unwrap().per_frame, vec![PSNR_CAP; 2]);
        let same = evaluate(&v, Some(&v), None, &[Metric::Ssim]).unwrap();
        assert!((same.get(Metric::Ssim).unwrap().aggregate - 1.0).abs() < 1e-12);
        let gray = Frame::<f64>::filled(12, 12, &[0.4, 0.4, 0.4]).unwrap();
        let gv = Video::new(vec![gray; 3], 24.0).unwrap();
        let col = evaluate(&gv, None, None, &[Metric::Colorful]).unwrap();
        assert_eq!(col.metrics[0].aggregate, 0.0);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(json["fid"].is_null() && json["fvd"].is_null() && json["lpips"].is_null());
        assert_eq!(json["metrics"][1]["metric"], "colorful");
        assert!(matches!(
            evaluate(&v, None, None, &[Metric::Ssim]),
            Err(Error::MissingInput(_))
        ));
        assert!(matches!(
            evaluate(&v, None, None, &[Metric::PaletteAdherence]),
            Err(Error::MissingInput(_))
        ));
        assert_eq!("palette-adherence".parse::<Metric>().unwrap(), Metric::PaletteAdherence);
        assert!("lpips".parse::<Metric>().is_err());
    }

    fn frame_strategy() -> impl Strategy<Value = Frame<f64>> {
        (11usize..15, 11usize..15).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f64..=1.0, w * h * 3).prop_map(move |d| Frame::new(w, h, 3, d).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ssim_symmetric_and_bounded((a, b) in frame_strategy().prop_flat_map(|a| {
            let (w, h) = (a.width(), a.height());
            (Just(a), prop::collection::vec(0.0f64..=1.0, w * h * 3)
                .prop_map(move |d| Frame::new(w, h, 3, d).unwrap()))
        })) {
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn metrics_are_finite(f in frame_strategy()) {
            let c = colorfulness(&f).unwrap();
            prop_assert!(c >= 0.0 && c.is_finite());
            let mut px: Vec<f64> = f.data().to_vec();
            let n = px.len() / 3;
            for i in 0..n / 2 {
                for ch in 0..3 {
                    px.swap(3 * i + ch, 3 * (n - 1 - i) + ch);
                }
            }
            let flipped = Frame::new(f.width(), f.height(), 3, px).unwrap();
            prop_assert!((colorfulness(&flipped).unwrap() - c).abs() < 1e-9);
            let p = psnr(&f, &f.clone()).unwrap();
            prop_assert_eq!(p, PSNR_CAP);
        }
    }
}
