//! Five-color palettes and K-means extraction of dominant colors.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vidio::{luma, Frame};

pub const PALETTE_SIZE: usize = 5;
pub const PALETTE_DIM: usize = PALETTE_SIZE * 3;

/// Pixel budget above which extraction works on a seeded uniform subsample.
pub const KMEANS_MAX_PIXELS: usize = 100_000;

pub type Rgb = [f64; 3];

/// Exactly five RGB colors in `[0, 1]`, kept in canonical order
/// (ascending luma, ties broken lexicographically on `(r, g, b)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Palette {
    colors: [Rgb; PALETTE_SIZE],
}

#[derive(Deserialize)]
struct PaletteFile {
    colors: Vec<Vec<f64>>,
}

impl Palette {
    /// Validates the colors and canonicalizes their order.
    pub fn new(colors: [Rgb; PALETTE_SIZE]) -> Result<Self> {
        for c in colors.iter().flatten() {
            if !(0.0..=1.0).contains(c) {
                return Err(Error::InvalidArgument(format!(
                    "palette channel {c} outside [0, 1]"
                )));
            }
        }
        Ok(Palette { colors }.canonicalize())
    }

    /// Clamps every channel into `[0, 1]` first.
    pub fn clamped(colors: [Rgb; PALETTE_SIZE]) -> Self {
        let colors = colors.map(|c| c.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }));
        Palette { colors }.canonicalize()
    }

    pub fn from_bytes(colors: [[u8; 3]; PALETTE_SIZE]) -> Self {
        Palette::clamped(colors.map(|c| c.map(|v| v as f64 / 255.0)))
    }

    pub fn uniform(color: Rgb) -> Result<Self> {
        Palette::new([color; PALETTE_SIZE])
    }

    /// The all-black palette; projects to the zero embedding.
    pub fn null() -> Self {
        Palette {
            colors: [[0.0; 3]; PALETTE_SIZE],
        }
    }

    /// A frame of five horizontal bands, one per color in canonical order.
    pub fn swatch<T: Scalar>(&self, width: usize, height: usize) -> Result<Frame<T>> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let color = self.colors[y * PALETTE_SIZE / height.max(1)];
            for _ in 0..width {
                data.extend(color.map(T::of));
            }
        }
        Frame::new(width, height, 3, data)
    }

    pub fn colors(&self) -> &[Rgb; PALETTE_SIZE] {
        &self.colors
    }

    /// Sorts by ascending luma with an `(r, g, b)` tiebreak. Idempotent.
    pub fn canonicalize(mut self) -> Self {
        self.colors.sort_by(canonical_cmp);
        self
    }

    /// Color-major 15-vector `r1, g1, b1, ..., r5, g5, b5`.
    pub fn flatten(&self) -> [f64; PALETTE_DIM] {
        let mut out = [0.0; PALETTE_DIM];
        for (i, c) in self.colors.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(c);
        }
        out
    }

    pub fn unflatten(v: &[f64; PALETTE_DIM]) -> Result<Self> {
        let mut colors = [[0.0; 3]; PALETTE_SIZE];
        for (i, c) in colors.iter_mut().enumerate() {
            c.copy_from_slice(&v[3 * i..3 * i + 3]);
        }
        Palette::new(colors)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("palette serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PaletteFile = serde_json::from_str(text).map_err(|e| Error::MalformedFile {
            path: "palette.json".into(),
            reason: e.to_string(),
        })?;
        if file.colors.len() != PALETTE_SIZE || file.colors.iter().any(|c| c.len() != 3) {
            return Err(Error::MalformedFile {
                path: "palette.json".into(),
                reason: "expected 5 colors of 3 channels".into(),
            });
        }
        let mut colors = [[0.0; 3]; PALETTE_SIZE];
        for (dst, src) in colors.iter_mut().zip(&file.colors) {
            dst.copy_from_slice(src);
        }
        Palette::new(colors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Palette::from_json(&text).map_err(|e| match e {
            Error::MalformedFile { reason, .. } => Error::MalformedFile {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

fn canonical_cmp(a: &Rgb, b: &Rgb) -> Ordering {
    luma(a[0], a[1], a[2])
        .total_cmp(&luma(b[0], b[1], b[2]))
        .then_with(|| a[0].total_cmp(&b[0]))
        .then_with(|| a[1].total_cmp(&b[1]))
        .then_with(|| a[2].total_cmp(&b[2]))
}

#[inline]
pub fn dist2(a: &Rgb, b: &Rgb) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Outcome of a K-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Rgb>,
    pub assignments: Vec<usize>,
    /// Objective (sum of squared distances) after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

/// Chooses `k` initial centroids by k-means++ (D² sampling).
pub fn kmeans_plus_plus<R: Rng>(points: &[Rgb], k: usize, rng: &mut R) -> Vec<Rgb> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // fall back to the last positive-weight point on rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Rgb], centroids: &[Rgb], assignments: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (p, a) in points.iter().zip(assignments.iter_mut()) {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(j, c)| (j, dist2(p, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        *a = best;
        objective += d;
    }
    objective
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Runs until the assignment is a fixpoint or `max_iters` is reached. A cluster
/// left empty is reseeded to the point farthest from its assigned centroid.
pub fn kmeans(points: &[Rgb], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to cluster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut objective = vec![assign(points, &centroids, &mut assignments)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        // offsets from each cluster's first member keep identical points exact
        let mut anchors: Vec<Option<Rgb>> = vec![None; k];
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            let anchor = *anchors[a].get_or_insert(*p);
            for c in 0..3 {
                sums[a][c] += p[c] - anchor[c];
            }
            counts[a] += 1;
        }
        for j in 0..k {
            if let Some(anchor) = anchors[j] {
                centroids[j] = [0, 1, 2].map(|c| anchor[c] + sums[j][c] / counts[j] as f64);
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let (far, _) = points
                .iter()
                .zip(&assignments)
                .enumerate()
                .map(|(i, (p, &a))| (i, dist2(p, &centroids[a])))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            let old = assignments[far];
            counts[old] -= 1;
            counts[j] = 1;
            centroids[j] = points[far];
            assignments[far] = j;
        }
        let previous = assignments.clone();
        objective.push(assign(points, &centroids, &mut assignments));
        if assignments == previous {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        objective,
        iterations,
    })
}

/// Collects RGB pixels from one or more frames, uniformly subsampling above the budget.
pub fn gather_pixels<T: Scalar>(frames: &[Frame<T>], seed: u64) -> Result<Vec<Rgb>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames given".into()));
    }
    if frames.iter().any(|f| f.channels() != 3) {
        return Err(Error::InvalidArgument(
            "palette extraction needs RGB frames".into(),
        ));
    }
    let pixels: Vec<Rgb> = frames.iter().flat_map(|f| f.rgb_pixels()).collect();
    if pixels.len() <= KMEANS_MAX_PIXELS {
        return Ok(pixels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let mut idx = sample(&mut rng, pixels.len(), KMEANS_MAX_PIXELS).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pixels[i]).collect())
}

/// Extracts a canonical 5-color palette from the pixels of `frames`.
pub fn kmeans_extract<T: Scalar>(frames: &[Frame<T>], seed: u64, max_iters: usize) -> Result<Palette> {
    let pixels = gather_pixels(frames, seed)?;
    let result = kmeans(&pixels, PALETTE_SIZE, seed, max_iters)?;
    let mut colors = [[0.0; 3]; PALETTE_SIZE];
    colors.copy_from_slice(&result.centroids);
    Ok(Palette::clamped(colors))
}
