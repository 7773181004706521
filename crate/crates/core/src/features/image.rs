use ndarray::Array2;

use super::SubFeatures;
use crate::events::{label_components, otsu_binarize, Connectivity};

pub const NAMES: [&str; 18] = [
    "img_m00",
    "img_m10",
    "img_m01",
    "img_centroid_row",
    "img_centroid_col",
    "img_mu20",
    "img_mu02",
    "img_mu11",
    "img_area",
    "img_perimeter_moment",
    "img_compactness_moment",
    "img_perimeter_boundary",
    "img_height",
    "img_width",
    "lbp_mean",
    "lbp_variance",
    "lbp_skewness",
    "lbp_kurtosis",
];

/// Moments of a binary segment given by its member pixels `(row, col)`.
/// Row indices play the role of `m` (frequency) and columns of `n` (time).
#[derive(Debug, Clone)]
pub struct SegmentMoments<'a> {
    pixels: &'a [(usize, usize)],
    centroid: (f64, f64),
}

impl<'a> SegmentMoments<'a> {
    pub fn new(pixels: &'a [(usize, usize)]) -> Self {
        let n = pixels.len() as f64;
        let (sr, sc) = pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        let centroid = if n > 0.0 {
            (sr / n, sc / n)
        } else {
            (0.0, 0.0)
        };
        Self { pixels, centroid }
    }

    /// `sum m^p n^q` over the segment.
    pub fn raw(&self, p: i32, q: i32) -> f64 {
        self.pixels
            .iter()
            .map(|&(r, c)| (r as f64).powi(p) * (c as f64).powi(q))
            .sum()
    }

    /// `sum (m - m_bar)^p (n - n_bar)^q` over the segment.
    pub fn central(&self, p: i32, q: i32) -> f64 {
        let (mr, mc) = self.centroid;
        self.pixels
            .iter()
            .map(|&(r, c)| (r as f64 - mr).powi(p) * (c as f64 - mc).powi(q))
            .sum()
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }
}

/// Moments needed by the image features, accumulated in one sweep.
struct Geometry {
    m00: f64,
    m10: f64,
    m01: f64,
    m30: f64,
    m03: f64,
    m12: f64,
    m21: f64,
    mu20: f64,
    mu02: f64,
    mu11: f64,
}

fn geometry(pixels: &[(usize, usize)]) -> Geometry {
    let mut g = Geometry {
        m00: 0.0,
        m10: 0.0,
        m01: 0.0,
        m30: 0.0,
        m03: 0.0,
        m12: 0.0,
        m21: 0.0,
        mu20: 0.0,
        mu02: 0.0,
        mu11: 0.0,
    };
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for &(r, c) in pixels {
        let (m, n) = (r as f64, c as f64);
        let (m2, n2) = (m * m, n * n);
        g.m00 += 1.0;
        g.m10 += m;
        g.m01 += n;
        m20 += m2;
        m02 += n2;
        m11 += m * n;
        g.m30 += m2 * m;
        g.m03 += n2 * n;
        g.m12 += m * n2;
        g.m21 += m2 * n;
    }
    // central second moments from raw sums
    let (cr, cc) = (g.m10 / g.m00, g.m01 / g.m00);
    g.mu20 = m20 - cr * g.m10;
    g.mu02 = m02 - cc * g.m01;
    g.mu11 = m11 - cr * g.m01;
    g
}

/// Cells of the segment with a 4-neighbour outside it (or on the patch edge).
fn boundary_pixels(pixels: &[(usize, usize)], dims: (usize, usize)) -> usize {
    let mut mask = Array2::from_elem(dims, false);
    for &(r, c) in pixels {
        mask[[r, c]] = true;
    }
    pixels
        .iter()
        .filter(|&&(r, c)| {
            r == 0
                || c == 0
                || r + 1 == dims.0
                || c + 1 == dims.1
                || !mask[[r - 1, c]]
                || !mask[[r + 1, c]]
                || !mask[[r, c - 1]]
                || !mask[[r, c + 1]]
        })
        .count()
}

const LBP_NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

/// 256-bin histogram of 8-neighbour local binary pattern codes over the
/// interior cells; bit `i` is set when neighbour `i` is at least the centre.
pub fn lbp_histogram(patch: &Array2<f64>) -> [u64; 256] {
    let mut hist = [0u64; 256];
    let (rows, cols) = patch.dim();
    if rows < 3 || cols < 3 {
        return hist;
    }
    let owned;
    let flat: &[f64] = match patch.as_slice() {
        Some(v) => v,
        None => {
            owned = patch.iter().copied().collect::<Vec<_>>();
            &owned
        }
    };
    let offsets: Vec<isize> = LBP_NEIGHBOURS
        .iter()
        .map(|&(dr, dc)| dr * cols as isize + dc)
        .collect();
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let i = r * cols + c;
            let centre = flat[i];
            let mut code = 0usize;
            for (bit, &off) in offsets.iter().enumerate() {
                code |= usize::from(flat[(i as isize + off) as usize] >= centre) << bit;
            }
            hist[code] += 1;
        }
    }
    hist
}

/// Mean, variance, skewness and kurtosis of the LBP code distribution.
fn lbp_stats(hist: &[u64; 256]) -> [f64; 4] {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return [0.0; 4];
    }
    let t = total as f64;
    let mean = hist
        .iter()
        .enumerate()
        .map(|(k, &c)| k as f64 * c as f64)
        .sum::<f64>()
        / t;
    let central = |p: i32| {
        hist.iter()
            .enumerate()
            .map(|(k, &c)| (k as f64 - mean).powi(p) * c as f64)
            .sum::<f64>()
            / t
    };
    let var = central(2);
    if var <= 0.0 {
        return [mean, 0.0, 0.0, 0.0];
    }
    [
        mean,
        var,
        central(3) / var.powf(1.5),
        central(4) / (var * var),
    ]
}

/// Geometric features of the largest Otsu segment of the patch plus LBP
/// texture statistics of the grayscale patch.
pub fn image_features(patch: &Array2<f64>) -> SubFeatures {
    let zeros = || SubFeatures {
        values: vec![0.0; NAMES.len()],
        degenerate: true,
    };
    if patch.is_empty() {
        return zeros();
    }
    let (threshold, binary) = otsu_binarize(patch);
    if threshold.degenerate {
        return zeros();
    }
    let regions = label_components(&binary, Connectivity::Eight, 1);
    let Some(largest) = regions.iter().reduce(|best, r| {
        if r.pixel_count > best.pixel_count {
            r
        } else {
            best
        }
    }) else {
        return zeros();
    };
    let g = geometry(&largest.pixels);
    let perimeter = (g.m30 + g.m12).powi(2) + (g.m03 + g.m21).powi(2);
    let (r0, r1, c0, c1) = largest.pixel_bbox;
    let lbp = lbp_stats(&lbp_histogram(patch));
    SubFeatures {
        values: vec![
            g.m00,
            g.m10,
            g.m01,
            g.m10 / g.m00,
            g.m01 / g.m00,
            g.mu20,
            g.mu02,
            g.mu11,
            g.m00,
            perimeter,
            perimeter / g.m00,
            boundary_pixels(&largest.pixels, patch.dim()) as f64,
            (r1 - r0 + 1) as f64,
            (c1 - c0 + 1) as f64,
            lbp[0],
            lbp[1],
            lbp[2],
            lbp[3],
        ],
        degenerate: false,
    }
}
