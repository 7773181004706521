//! Acceptance suite. Each test checks one criterion and prints a single
//! `criterion N: PASS|FAIL ...` line to stderr, even when output is captured.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use tfec::clustering::Ward;
use tfec::events::{self, label_components, otsu_threshold, BlobRegion, Connectivity, Event};
use tfec::features::{self, catalog, Psd, CATALOG_LEN};
use tfec::io::{self, DetectionRow, Manifest, RunConfig};
use tfec::metrics::{
    match_events, permutation_test, rate_ratio, score_band, scores, Detection, MatchCounts,
    RateTable, RatioOutcome,
};
use tfec::pipeline::{self, DetectionOutput};
use tfec::report::{self, ScoreRow};
use tfec::selection::{sffs, FScore, LabeledCost, StepAction};
use tfec::signal::{tkeo, FrequencyBand};
use tfec::stockwell::StockwellPlan;
use tfec::synth::{build_benchmark, Benchmark};
use tfec::{Annotation, Band, EventKind};

/// Serializes the criteria so timed ones run on an otherwise idle machine.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| <= tol * max(1, |b|)`.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// oracles

/// Stockwell row by direct summation over the periodized Gaussian window.
fn stockwell_direct(x: &[f64], k: usize) -> Vec<Complex64> {
    let n = x.len();
    let nf = n as f64;
    let kf = k as f64;
    let g: Vec<f64> = (0..n)
        .map(|d| {
            (-4i64..=4)
                .map(|p| {
                    let u = (d as f64 + p as f64 * nf) * kf / nf;
                    (-u * u / 2.0).exp()
                })
                .sum::<f64>()
                * kf
                / (nf * (2.0 * PI).sqrt())
        })
        .collect();
    let shifted: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(m, &v)| Complex64::from_polar(v, -2.0 * PI * kf * m as f64 / nf))
        .collect();
    (0..n)
        .map(|j| {
            shifted
                .iter()
                .enumerate()
                .map(|(m, z)| z * g[(j + n - m) % n])
                .sum()
        })
        .collect()
}

fn dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(m, &v)| Complex64::from_polar(v, -2.0 * PI * (k * m % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// 256-level quantization over the matrix's own range.
fn levels_of(values: &[f64]) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = 256.0 / (hi - lo);
    values
        .iter()
        .map(|&v| (((v - lo) * scale).floor() as usize).min(255))
        .collect()
}

/// Level maximizing the between-class variance over every cut, first on ties.
fn otsu_exhaustive(values: &[f64]) -> usize {
    let levels = levels_of(values);
    let n = levels.len() as f64;
    let mut best = (0, -1.0);
    for t in 0..255 {
        let (lo, hi): (Vec<usize>, Vec<usize>) = levels.iter().partition(|&&l| l <= t);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let mean = |c: &[usize]| c.iter().sum::<usize>() as f64 / c.len() as f64;
        let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
        let between = w0 * w1 * (mean(&lo) - mean(&hi)).powi(2);
        if between > best.1 * (1.0 + 1e-12) {
            best = (t, between);
        }
    }
    best.0
}

/// Connected components by breadth-first flood fill, each as a sorted
/// pixel list, ordered by first pixel in raster order.
fn flood_fill(mask: &Array2<bool>, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (rows, cols) = mask.dim();
    let mut seen = Array2::from_elem((rows, cols), false);
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !mask[[r, c]] || seen[[r, c]] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(r, c)]);
            seen[[r, c]] = true;
            while let Some((y, x)) = queue.pop_front() {
                comp.push((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= rows as i64 || nx >= cols as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] && !seen[[ny, nx]] {
                            seen[[ny, nx]] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
    }
    out
}

/// Maximum bipartite matching size by exhaustive search over reference subsets.
fn max_matching(dets: &[f64], refs: &[f64], half: f64) -> usize {
    fn go(
        i: usize,
        mask: usize,
        dets: &[f64],
        refs: &[f64],
        half: f64,
        memo: &mut [Vec<Option<usize>>],
    ) -> usize {
        if i == dets.len() {
            return 0;
        }
        if let Some(v) = memo[i][mask] {
            return v;
        }
        let mut best = go(i + 1, mask, dets, refs, half, memo);
        for (j, &r) in refs.iter().enumerate() {
            if mask & (1 << j) == 0 && r - half <= dets[i] && dets[i] <= r + half {
                best = best.max(1 + go(i + 1, mask | (1 << j), dets, refs, half, memo));
            }
        }
        memo[i][mask] = Some(best);
        best
    }
    let mut memo = vec![vec![None; 1 << refs.len()]; dets.len()];
    go(0, 0, dets, refs, half, &mut memo)
}

fn raw_moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let c = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let var = c(2);
    (mean, var, c(3) / var.powf(1.5), c(4) / (var * var))
}

fn fractal_oracle(x: &[f64]) -> f64 {
    let n = x.len();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = x
        .iter()
        .map(|v| (v - lo) / (hi - lo) * (n - 1) as f64)
        .collect();
    let (mut sx, mut sy, mut sxx, mut sxy, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut s = 1;
    while s <= 64 && 2 * s < n {
        let mut count = 0.0;
        for start in (0..n - 1).step_by(s) {
            let seg = &y[start..=(start + s).min(n - 1)];
            let a = seg.iter().copied().fold(f64::INFINITY, f64::min);
            let b = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            count += (b / s as f64).floor() - (a / s as f64).floor() + 1.0;
        }
        let (u, v) = (-(s as f64).ln(), f64::ln(count));
        sx += u;
        sy += v;
        sxx += u * u;
        sxy += u * v;
        k += 1.0;
        s *= 2;
    }
    (k * sxy - sx * sy) / (k * sxx - sx * sx)
}

fn time_oracle(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let (mean, var, skew, kurt) = raw_moments(x);
    let power: f64 = x.iter().map(|v| v * v).sum();
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let ac: f64 = (0..n - 1)
        .map(|i| (x[i] - mean) * (x[i + 1] - mean))
        .sum::<f64>()
        / ss;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    vec![
        mean,
        var,
        skew,
        kurt,
        var.sqrt() / mean,
        (power / n as f64).sqrt(),
        power,
        (1..n).map(|i| (x[i] - x[i - 1]).abs()).sum(),
        ac,
        (1..n - 1).map(|i| x[i] * x[i] - x[i - 1] * x[i + 1]).sum(),
        fractal_oracle(x),
        hi - lo,
    ]
}

/// Welch density (Hamming, non-overlapping, one-second segments capped at
/// the crop) by direct DFT; returns `(power, f)` over bins `1..=seg/2`.
fn welch_oracle(x: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let seg = ((fs.round() as usize).min(x.len())).max(1);
    let n_seg = x.len() / seg;
    let w: Vec<f64> = (0..seg)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (seg - 1) as f64).cos())
        .collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let bins = seg / 2;
    let mut p = vec![0.0; bins];
    for s in 0..n_seg {
        let chunk = &x[s * seg..(s + 1) * seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        let y: Vec<f64> = chunk.iter().zip(&w).map(|(v, w)| (v - mean) * w).collect();
        let spec = dft(&y);
        for k in 1..=bins {
            let c = if 2 * k == seg { 1.0 } else { 2.0 };
            p[k - 1] += c * spec[k].norm_sqr() / (fs * u) / n_seg as f64;
        }
    }
    (p, (1..=bins).map(|k| k as f64 * fs / seg as f64).collect())
}

fn freq_oracle(x: &[f64], fs: f64) -> Vec<f64> {
    let (p, f) = welch_oracle(x, fs);
    let h = x.len() / 2;
    let (a, _) = welch_oracle(&x[..h], fs);
    let (b, _) = welch_oracle(&x[h..2 * h], fs);
    let total: f64 = p.iter().sum();
    let m = p.len() as f64;
    let q: Vec<f64> = p.iter().map(|v| v / total).collect();
    let iwmf: f64 = q.iter().zip(&f).map(|(w, f)| w * f).sum();
    vec![
        a.iter().zip(&b).map(|(a, b)| (a - b).abs()).sum(),
        (p.iter().map(|v| v.ln()).sum::<f64>() / m).exp() / (total / m),
        -q.iter().map(|v| v * v.log2()).sum::<f64>(),
        iwmf,
        q.iter()
            .zip(&f)
            .map(|(w, f)| w * (f - iwmf).powi(2))
            .sum::<f64>()
            .sqrt(),
        p.iter().copied().fold(0.0, f64::max),
    ]
}

fn tf_oracle(patch: &Array2<f64>) -> Vec<f64> {
    let v: Vec<f64> = patch.iter().copied().collect();
    let cells = v.len() as f64;
    let (mean, var, skew, kurt) = raw_moments(&v);
    let total: f64 = v.iter().sum();
    let p: Vec<f64> = v.iter().map(|x| x / total).collect();
    let (rows, cols) = patch.dim();
    let mut flux = 0.0;
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            flux += (patch[[r + 1, c + 1]] - patch[[r, c]]).abs();
        }
    }
    vec![
        mean,
        var,
        skew,
        kurt,
        var.sqrt() / mean,
        -p.iter()
            .filter(|x| **x > 0.0)
            .map(|x| x * x.log2())
            .sum::<f64>(),
        p.iter().map(|x| x.powi(3)).sum::<f64>().log2() / -2.0,
        (v.iter().map(|x| x.ln()).sum::<f64>() / cells).exp() / mean,
        flux / cells,
        v.iter().map(|x| x.sqrt()).sum::<f64>().powi(2),
    ]
}

fn image_oracle(patch: &Array2<f64>) -> Vec<f64> {
    let (rows, cols) = patch.dim();
    let values: Vec<f64> = patch.iter().copied().collect();
    let t = otsu_exhaustive(&values);
    let levels = levels_of(&values);
    let mask =
        Array2::from_shape_vec((rows, cols), levels.iter().map(|&l| l > t).collect()).unwrap();
    let comps = flood_fill(&mask, true);
    let mut seg = &comps[0];
    for c in &comps {
        if c.len() > seg.len() {
            seg = c;
        }
    }
    let sum =
        |f: &dyn Fn(f64, f64) -> f64| seg.iter().map(|&(r, c)| f(r as f64, c as f64)).sum::<f64>();
    let m00 = seg.len() as f64;
    let (m10, m01) = (sum(&|r, _| r), sum(&|_, c| c));
    let (cr, cc) = (m10 / m00, m01 / m00);
    let perimeter = (sum(&|r, _| r.powi(3)) + sum(&|r, c| r * c * c)).powi(2)
        + (sum(&|_, c| c.powi(3)) + sum(&|r, c| r * r * c)).powi(2);
    let inside =
        |r: i64, c: i64| r >= 0 && c >= 0 && seg.binary_search(&(r as usize, c as usize)).is_ok();
    let boundary = seg
        .iter()
        .filter(|&&(r, c)| {
            let (r, c) = (r as i64, c as i64);
            r == 0
                || c == 0
                || r as usize + 1 == rows
                || c as usize + 1 == cols
                || [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dr, dc)| !inside(r + dr, c + dc))
        })
        .count() as f64;
    let rmin = seg.iter().map(|p| p.0).min().unwrap();
    let rmax = seg.iter().map(|p| p.0).max().unwrap();
    let cmin = seg.iter().map(|p| p.1).min().unwrap();
    let cmax = seg.iter().map(|p| p.1).max().unwrap();

    let mut codes = Vec::new();
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let centre = patch[[r, c]];
            let ring = [
                patch[[r - 1, c - 1]],
                patch[[r - 1, c]],
                patch[[r - 1, c + 1]],
                patch[[r, c + 1]],
                patch[[r + 1, c + 1]],
                patch[[r + 1, c]],
                patch[[r + 1, c - 1]],
                patch[[r, c - 1]],
            ];
            let code: u32 = ring
                .iter()
                .enumerate()
                .map(|(bit, &v)| u32::from(v >= centre) << bit)
                .sum();
            codes.push(code as f64);
        }
    }
    let (lm, lv, ls, lk) = raw_moments(&codes);
    vec![
        m00,
        m10,
        m01,
        cr,
        cc,
        sum(&|r, _| (r - cr).powi(2)),
        sum(&|_, c| (c - cc).powi(2)),
        sum(&|r, c| (r - cr) * (c - cc)),
        m00,
        perimeter,
        perimeter / m00,
        boundary,
        (rmax - rmin + 1) as f64,
        (cmax - cmin + 1) as f64,
        lm,
        lv,
        ls,
        lk,
    ]
}

// ---------------------------------------------------------------------------
// random inputs

fn random_matrix(r: &mut ChaCha8Rng) -> Array2<f64> {
    let (rows, cols) = (r.random_range(4..40), r.random_range(4..60));
    let style = r.random_range(0..3);
    Array2::from_shape_fn((rows, cols), |_| match style {
        0 => r.random::<f64>(),
        1 => -r.random::<f64>().ln(),
        _ => r.random_range(0..6) as f64 + if r.random_bool(0.5) { 0.0 } else { 10.0 },
    })
}

fn random_mask(r: &mut ChaCha8Rng) -> Array2<bool> {
    let (rows, cols) = (r.random_range(1..30), r.random_range(1..30));
    let density = r.random_range(0.1..0.8);
    Array2::from_shape_fn((rows, cols), |_| r.random_bool(density))
}

/// Non-negative patch with a few Gaussian bumps over a noise floor.
fn random_patch(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bumps: Vec<(f64, f64, f64, f64, f64)> = (0..r.random_range(1..4))
        .map(|_| {
            (
                r.random_range(0.5..3.0),
                r.random_range(0.0..rows as f64),
                r.random_range(0.0..cols as f64),
                r.random_range(1.0..4.0),
                r.random_range(2.0..12.0),
            )
        })
        .collect();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let s: f64 = bumps
            .iter()
            .map(|&(a, r0, c0, sr, sc)| {
                a * (-((i as f64 - r0).powi(2) / (2.0 * sr * sr)
                    + (j as f64 - c0).powi(2) / (2.0 * sc * sc)))
                    .exp()
            })
            .sum();
        s + 0.05 + 0.2 * r.random::<f64>()
    })
}

fn random_crop(r: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let f0 = r.random_range(90.0..450.0);
    let amp = r.random_range(0.5..5.0);
    let offset = r.random_range(0.2..2.0);
    (0..n)
        .map(|i| {
            let t = (i as f64 - n as f64 / 2.0) / fs;
            offset + amp * (-t * t / 2e-4).exp() * (2.0 * PI * f0 * t).cos() + 0.3 * noise.sample(r)
        })
        .collect()
}

fn dummy_region() -> BlobRegion {
    label_components(&Array2::from_elem((1, 1), true), Connectivity::Eight, 1).remove(0)
}

// ---------------------------------------------------------------------------
// criterion 1

#[test]
fn criterion_1_oracle_equivalences() {
    let _g = serial();
    let mut failures = Vec::new();

    // Stockwell transform against direct summation
    let (n, fs) = (256, 2048.0);
    let band = FrequencyBand::new(80.0, 500.0).unwrap();
    let t0 = Instant::now();
    let plan = StockwellPlan::new(n, fs, band).unwrap();
    let f_axis = plan.f_axis();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let s = plan.transform_complex(&x).unwrap();
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for (row, &f) in f_axis.iter().enumerate() {
            let k = (f * n as f64 / fs).round() as usize;
            for (j, z) in stockwell_direct(&x, k).into_iter().enumerate() {
                err = err.max((s[[row, j]] - z).norm());
                scale = scale.max(z.norm());
            }
        }
        worst = worst.max(err / scale);
    }
    let st_s = t0.elapsed().as_secs_f64();
    if !(worst <= 1e-9 && st_s < 10.0) {
        failures.push(format!("stockwell rel err {worst:.2e} in {st_s:.1} s"));
    }

    // Otsu against exhaustive search
    let mut r = rng(101);
    let mut otsu_bad = 0;
    for _ in 0..100 {
        let m = random_matrix(&mut r);
        let v: Vec<f64> = m.iter().copied().collect();
        let want = otsu_exhaustive(&v);
        let got = otsu_threshold(&m);
        let levels = levels_of(&v);
        let mask_ok = m
            .iter()
            .zip(&levels)
            .all(|(x, &l)| got.is_foreground(*x) == (l > want));
        if got.level != want || !mask_ok {
            otsu_bad += 1;
        }
    }
    if otsu_bad > 0 {
        failures.push(format!("otsu mismatches {otsu_bad}/100"));
    }

    // connected components against flood fill
    let mut r = rng(202);
    let mut ccl_bad = 0;
    for _ in 0..100 {
        let mask = random_mask(&mut r);
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let want = flood_fill(&mask, eight);
            let got: Vec<Vec<(usize, usize)>> = label_components(&mask, conn, 1)
                .into_iter()
                .map(|b| {
                    let mut p = b.pixels;
                    p.sort_unstable();
                    p
                })
                .collect();
            if got != want {
                ccl_bad += 1;
            }
        }
    }
    if ccl_bad > 0 {
        failures.push(format!("labeling mismatches {ccl_bad}/200"));
    }

    // the full feature catalog against direct summation
    let names = catalog();
    let fs = 2048.0;
    let mut r = rng(303);
    let mut feat_bad = Vec::new();
    for _ in 0..25 {
        let crop = random_crop(&mut r, 410, fs);
        let (rows, cols) = (r.random_range(12..40), r.random_range(30..80));
        let patch = random_patch(&mut r, rows, cols);
        let event = Event {
            channel: 0,
            center_s: 1.0,
            crop: crop.clone(),
            band: Band::Ripple,
            tfd_patch: patch.clone(),
            region: dummy_region(),
            source_epoch: 0,
        };
        let got = features::assemble(&event, fs).unwrap();
        let mut want = time_oracle(&crop);
        want.extend(freq_oracle(&crop, fs));
        want.extend(tf_oracle(&patch));
        want.extend(image_oracle(&patch));
        assert_eq!(want.len(), CATALOG_LEN);
        for (i, (g, w)) in got.values.iter().zip(&want).enumerate() {
            if !close(*g, *w, 1e-10) && !feat_bad.contains(&names[i]) {
                feat_bad.push(names[i]);
            }
        }
    }
    if !feat_bad.is_empty() {
        failures.push(format!("features off: {feat_bad:?}"));
    }

    // event matching against exhaustive bipartite matching
    let mut r = rng(404);
    let mut match_bad = 0;
    for _ in 0..1000 {
        let ci = r.random_range(0.02..0.3);
        let span = r.random_range(0.2..2.0);
        let dets: Vec<f64> = (0..r.random_range(0..=10))
            .map(|_| r.random_range(0.0..span))
            .collect();
        let refs: Vec<f64> = (0..r.random_range(0..=10))
            .map(|_| r.random_range(0.0..span))
            .collect();
        let tp = max_matching(&dets, &refs, ci / 2.0);
        let want = MatchCounts {
            tp,
            fp: dets.len() - tp,
            fn_: refs.len() - tp,
        };
        if match_events(&dets, &refs, ci).counts != want {
            match_bad += 1;
        }
    }
    if match_bad > 0 {
        failures.push(format!("matching mismatches {match_bad}/1000"));
    }

    let detail = if failures.is_empty() {
        format!(
            "(stockwell rel err {worst:.1e} in {st_s:.2} s; otsu 100, labeling 200, features 25x{CATALOG_LEN}, matching 1000 agree)"
        )
    } else {
        failures.join("; ")
    };
    report(1, failures.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// criterion 2

fn rate_outcome(resected: &[bool], counts: &[usize]) -> RatioOutcome {
    let dets: Vec<Detection> = counts
        .iter()
        .enumerate()
        .flat_map(|(ch, &n)| {
            (0..n).map(move |i| Detection {
                channel: ch,
                center_s: 0.5 + i as f64 * 0.25,
                band: Band::Ripple,
            })
        })
        .collect();
    rate_ratio(
        &RateTable::from_detections(&dets, resected, 120.0).unwrap(),
        Band::Ripple,
    )
}

#[test]
fn criterion_2_analytic_identities() {
    let _g = serial();
    let mut failures = Vec::new();

    // TKEO
    let flat = tkeo(&[3.7; 64]).unwrap();
    if flat.iter().any(|v| *v != 0.0) {
        failures.push("tkeo of a constant is not zero".to_string());
    }
    for &(a, omega, phi) in &[(1.0, 0.3, 0.0), (2.5, 1.1, 0.7), (0.2, 2.9, -1.3)] {
        let x: Vec<f64> = (0..100)
            .map(|n| a * (omega * n as f64 + phi).cos())
            .collect();
        let psi = tkeo(&x).unwrap();
        let want = a * a * omega.sin().powi(2);
        if psi[1..99].iter().any(|v| !close(*v, want, 1e-9)) {
            failures.push(format!("tkeo law fails at A={a} omega={omega}"));
        }
    }

    // frequency marginal of the transform equals the DFT
    let (n, fs) = (512, 2048.0);
    let plan = StockwellPlan::new(n, fs, FrequencyBand::new(80.0, 500.0).unwrap()).unwrap();
    let mut r = rng(7);
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let s = plan.transform_complex(&x).unwrap();
    let spec = dft(&x);
    let peak = spec.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut marginal_err = 0.0f64;
    for (row, f) in plan.f_axis().iter().enumerate() {
        let k = (f * n as f64 / fs).round() as usize;
        let sum: Complex64 = s.row(row).iter().sum();
        marginal_err = marginal_err.max((sum - spec[k]).norm() / peak);
    }
    if marginal_err > 1e-6 {
        failures.push(format!("frequency marginal off by {marginal_err:.1e}"));
    }

    // entropies: uniform gives log2 of the support, a point mass gives 0
    let tf_u = features::tf_features(&Array2::from_elem((8, 16), 0.3));
    let mut point = Array2::zeros((8, 16));
    point[[3, 5]] = 2.0;
    let tf_p = features::tf_features(&point);
    let psd = |power: Vec<f64>| Psd {
        f_axis: (1..=power.len()).map(|k| k as f64 * 5.0).collect(),
        power,
    };
    let fu = features::freq_features(
        &psd(vec![1.5; 32]),
        (&psd(vec![1.0; 32]), &psd(vec![1.0; 32])),
    );
    let mut spike = vec![0.0; 32];
    spike[7] = 4.0;
    let fp = features::freq_features(&psd(spike), (&psd(vec![1.0; 32]), &psd(vec![1.0; 32])));
    let entropies_ok = close(tf_u.values[5], 7.0, 1e-12)
        && close(tf_u.values[6], 7.0, 1e-12)
        && tf_p.values[5] == 0.0
        && tf_p.values[6] == 0.0
        && close(fu.values[2], 5.0, 1e-12)
        && fp.values[2] == 0.0;
    if !entropies_ok {
        failures.push("entropy identities".to_string());
    }

    // score conventions
    let sc = |tp, fp, fn_| scores(MatchCounts { tp, fp, fn_ });
    let zero = sc(0, 0, 0);
    let miss = sc(0, 4, 3);
    let perfect = sc(5, 0, 0);
    let mixed = sc(6, 2, 4);
    let scores_ok = [zero.sensitivity, zero.precision, zero.f_score] == [0.0; 3]
        && [miss.sensitivity, miss.precision, miss.f_score] == [0.0; 3]
        && [perfect.sensitivity, perfect.precision, perfect.f_score] == [1.0; 3]
        && close(mixed.f_score, 2.0 * 0.75 * 0.6 / 1.35, 1e-15);
    if !scores_ok {
        failures.push("score conventions".to_string());
    }

    // rate ratio endpoints
    let resected = [true, true, false, false];
    let ratio_ok = rate_outcome(&resected, &[3, 2, 0, 0]) == RatioOutcome::Value(1.0)
        && rate_outcome(&resected, &[0, 0, 1, 6]) == RatioOutcome::Value(-1.0)
        && rate_outcome(&resected, &[2, 3, 4, 1]) == RatioOutcome::Value(0.0)
        && rate_outcome(&resected, &[0, 0, 0, 0]) == RatioOutcome::NoEvents;
    if !ratio_ok {
        failures.push("rate ratio endpoints".to_string());
    }

    let detail = if failures.is_empty() {
        format!("(tkeo, marginal err {marginal_err:.1e}, entropies, score and ratio conventions)")
    } else {
        failures.join("; ")
    };
    report(2, failures.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// criteria 3 and 4: SNR sweep on the default benchmark

const SWEEP_SNR: [f64; 4] = [0.0, 5.0, 10.0, 15.0];
const SWEEP_BACKGROUNDS: usize = 5;

struct SweepRun {
    snr_db: f64,
    f_score: [f64; 2],
    spikes: usize,
    spike_hits: usize,
}

struct Sweep {
    runs: Vec<SweepRun>,
    elapsed_s: f64,
}

/// Detections lying within the matching window of an injected spike.
fn spike_hits(dets: &[Detection], refs: &[Annotation], ci_s: f64) -> usize {
    dets.iter()
        .filter(|d| {
            refs.iter().any(|a| {
                a.kind == EventKind::Spike
                    && a.channel == d.channel
                    && (a.center_s - d.center_s).abs() <= ci_s / 2.0
            })
        })
        .count()
}

fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let t0 = Instant::now();
        let mut runs = Vec::new();
        for &snr_db in &SWEEP_SNR {
            for bg in 0..SWEEP_BACKGROUNDS {
                let mut cfg = RunConfig::default();
                cfg.synth.snr_db = snr_db;
                cfg.synth.background_id = bg;
                let bench = build_benchmark(&cfg.synth).unwrap();
                let out = pipeline::detect(&bench.record, &cfg.detector).unwrap();
                let dets = out.detections();
                let ci = cfg.metrics.ci_s;
                let f = |band| {
                    scores(score_band(
                        &dets,
                        &bench.annotations,
                        band,
                        EventKind::of_band(band),
                        ci,
                    ))
                    .f_score
                };
                runs.push(SweepRun {
                    snr_db,
                    f_score: [f(Band::Ripple), f(Band::FastRipple)],
                    spikes: bench
                        .annotations
                        .iter()
                        .filter(|a| a.kind == EventKind::Spike)
                        .count(),
                    spike_hits: spike_hits(&dets, &bench.annotations, ci),
                });
            }
        }
        Sweep {
            runs,
            elapsed_s: t0.elapsed().as_secs_f64(),
        }
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn criterion_3_snr_sweep() {
    let _g = serial();
    let sw = sweep();
    let mut pass = sw.elapsed_s <= 600.0;
    let mut parts = Vec::new();
    for (b, name) in ["ripple", "fast_ripple"].iter().enumerate() {
        let med: Vec<f64> = SWEEP_SNR
            .iter()
            .map(|&snr| {
                median(
                    sw.runs
                        .iter()
                        .filter(|r| r.snr_db == snr)
                        .map(|r| r.f_score[b])
                        .collect(),
                )
            })
            .collect();
        let monotone = med.windows(2).all(|w| w[1] >= w[0]);
        pass &= monotone && med[1] >= 0.6 && med[2] >= 0.9 && med[3] >= 0.9;
        parts.push(format!(
            "{name} median F {}",
            med.iter()
                .zip(SWEEP_SNR)
                .map(|(m, s)| format!("{s}dB={m:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    parts.push(format!(
        "{:.0} s for {} recordings",
        sw.elapsed_s,
        sw.runs.len()
    ));
    report(3, pass, &format!("({})", parts.join("; ")));
}

#[test]
fn criterion_4_spike_rejection() {
    let _g = serial();
    let sw = sweep();
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [10.0, 15.0] {
        let (hits, spikes) = sw
            .runs
            .iter()
            .filter(|r| r.snr_db == snr)
            .fold((0, 0), |(h, s), r| (h + r.spike_hits, s + r.spikes));
        let rate = hits as f64 / spikes as f64;
        pass &= rate <= 0.10;
        parts.push(format!("{snr}dB {hits}/{spikes} = {:.1}%", 100.0 * rate));
    }
    report(
        4,
        pass,
        &format!("(spike false positives {})", parts.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// criterion 5

/// References with i.i.d. kinds and uniform times on `channels` x `duration`.
fn random_references(
    r: &mut ChaCha8Rng,
    channels: usize,
    per_channel: usize,
    duration: f64,
) -> Vec<Annotation> {
    (0..channels)
        .flat_map(|ch| (0..per_channel).map(move |_| ch))
        .map(|channel| Annotation {
            channel,
            center_s: r.random_range(0.0..duration),
            kind: EventKind::ALL[r.random_range(0..3)],
            amplitude: 1.0,
        })
        .collect()
}

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_5_permutation_calibration() {
    let _g = serial();
    let (channels, duration, n_perm, ci) = (8, 60.0, 499, 0.1);
    let mut r = rng(5);
    let mut p_values = Vec::new();
    for run in 0..200u64 {
        let refs = random_references(&mut r, channels, 450, duration);
        let dets: Vec<Detection> = (0..channels)
            .flat_map(|ch| (0..150).map(move |_| ch))
            .map(|channel| Detection {
                channel,
                center_s: r.random_range(0.0..duration),
                band: Band::Ripple,
            })
            .collect();
        p_values.push(
            permutation_test(&dets, &refs, Band::Ripple, n_perm, ci, run)
                .unwrap()
                .p_value,
        );
    }
    let ks = ks_uniform(p_values);

    let refs = random_references(&mut r, channels, 450, duration);
    let perfect: Vec<Detection> = refs
        .iter()
        .filter(|a| a.kind == EventKind::Ripple)
        .map(|a| Detection {
            channel: a.channel,
            center_s: a.center_s,
            band: Band::Ripple,
        })
        .collect();
    let p_perfect = permutation_test(&perfect, &refs, Band::Ripple, n_perm, ci, 1)
        .unwrap()
        .p_value;
    report(
        5,
        ks < 0.1 && p_perfect <= 0.01,
        &format!("(KS {ks:.3} over 200 random runs; perfect detections p = {p_perfect:.4})"),
    );
}

// ---------------------------------------------------------------------------
// criterion 6

/// Detections spread over channels with the given per-channel counts.
fn layout(r: &mut ChaCha8Rng, counts: &[usize]) -> Vec<Detection> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(channel, &n)| std::iter::repeat_n(channel, n))
        .map(|channel| Detection {
            channel,
            center_s: r.random_range(0.0..120.0),
            band: Band::Ripple,
        })
        .collect()
}

fn ratio_of(dets: &[Detection], resected: &[bool]) -> f64 {
    rate_ratio(
        &RateTable::from_detections(dets, resected, 120.0).unwrap(),
        Band::Ripple,
    )
    .value()
    .unwrap()
}

#[test]
fn criterion_6_rate_ratio_scenarios() {
    let _g = serial();
    let mut r = rng(6);
    let resected: Vec<bool> = (0..10).map(|c| c < 4).collect();
    let ninety = ratio_of(
        &layout(&mut r, &[25, 20, 25, 20, 2, 2, 2, 2, 1, 1]),
        &resected,
    );
    let flipped: Vec<bool> = resected.iter().map(|x| !x).collect();
    let reversed = ratio_of(
        &layout(&mut r, &[25, 20, 25, 20, 2, 2, 2, 2, 1, 1]),
        &flipped,
    );
    // resected 60 + 70 + 43 = 173 events, others 10 + 9 + 8 = 27, two minutes each:
    // (86.5 - 13.5) / (86.5 + 13.5) = 0.73
    let res3 = [true, true, true, false, false, false];
    let mid = ratio_of(&layout(&mut r, &[60, 70, 43, 10, 9, 8]), &res3);
    let hand = (173.0 / 2.0 - 27.0 / 2.0) / (173.0 / 2.0 + 27.0 / 2.0);
    let fast = rate_ratio(
        &RateTable::from_detections(&layout(&mut r, &[60, 70, 43, 10, 9, 8]), &res3, 120.0)
            .unwrap(),
        Band::FastRipple,
    );
    report(
        6,
        ninety >= 0.8
            && reversed <= -0.8
            && mid == hand
            && mid == 0.73
            && fast == RatioOutcome::NoEvents,
        &format!(
            "(90% resected {ninety:.3}, reversed {reversed:.3}, intermediate {mid} vs hand {hand})"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 7

#[test]
fn criterion_7_sffs_sanity() {
    let _g = serial();
    let (n_rows, n_feat, n_seeds, shift) = (600, 40, 100, 2.5);
    let names: Vec<String> = (0..n_feat).map(|i| format!("f{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut hits = 0;
    let mut deterministic = true;
    for seed in 0..n_seeds {
        let mut r = rng(70_000 + seed);
        let mut cols: Vec<usize> = (0..n_feat).collect();
        cols.shuffle(&mut r);
        let informative = &cols[..3];
        let labels: Vec<bool> = (0..n_rows).map(|i| i < n_rows / 2).collect();
        let m = Array2::from_shape_fn((n_rows, n_feat), |(i, j)| {
            let offset = if informative.contains(&j) && labels[i] {
                shift
            } else {
                0.0
            };
            noise.sample(&mut r) + offset
        });
        let cost = LabeledCost::new(&m, &labels, &Ward, &FScore).unwrap();
        let trace = sffs(&cost, &name_refs, 5).unwrap();
        if seed < 10 {
            deterministic &= sffs(&cost, &name_refs, 5).unwrap() == trace;
        }
        let first_adds: Vec<&str> = trace
            .steps
            .iter()
            .filter(|s| s.action == StepAction::Add)
            .take(5)
            .map(|s| s.feature.as_str())
            .collect();
        if informative
            .iter()
            .all(|&j| first_adds.contains(&name_refs[j]))
        {
            hits += 1;
        }
    }
    let share = hits as f64 / n_seeds as f64;
    report(
        7,
        share >= 0.95 && deterministic,
        &format!("(all informative features within 5 additions for {hits}/{n_seeds} seeds; traces repeat on 10 seeds: {deterministic})"),
    );
}

// ---------------------------------------------------------------------------
// criteria 8 and 9

fn detection_rows(out: &DetectionOutput) -> Vec<DetectionRow> {
    out.events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_hfo)
        .map(|(i, e)| DetectionRow {
            channel: e.channel,
            center_s: e.center_s,
            band: e.band,
            cluster: e.cluster.unwrap_or(0),
            feature_row: i,
        })
        .collect()
}

const PIPELINE_FILES: [&str; 10] = [
    "recording.json",
    "recording.bin",
    "annotations.csv",
    "detections.csv",
    "features.csv",
    "merge_tree.csv",
    "scores.csv",
    "eval.json",
    "ratio.csv",
    "manifest.json",
];

/// Simulate, detect, evaluate and compute the rate ratio into `dir`.
fn full_run(dir: &Path) {
    let mut cfg = RunConfig::default();
    cfg.synth.resected_channels = vec![0, 1, 2];
    cfg.metrics.n_perm = 200;
    let Benchmark {
        mut record,
        annotations,
        ..
    } = build_benchmark(&cfg.synth).unwrap();
    record
        .set_resected((0..8).map(|c| c < 3).collect())
        .unwrap();
    io::write_container(&record, &dir.join("recording.json")).unwrap();
    io::write_annotations(&dir.join("annotations.csv"), &annotations).unwrap();

    let record = io::read_container(&dir.join("recording.json")).unwrap();
    let out = pipeline::detect(&record, &cfg.detector).unwrap();
    io::write_detections(&dir.join("detections.csv"), &detection_rows(&out)).unwrap();
    io::write_features(&dir.join("features.csv"), &out.events).unwrap();
    io::write_merge_tree(
        &dir.join("merge_tree.csv"),
        out.clusters
            .iter()
            .map(|(b, c)| (*b, c.merge_tree.as_slice())),
    )
    .unwrap();

    let dets = out.detections();
    let mut rows = Vec::new();
    let mut eval = serde_json::Map::new();
    for band in Band::ALL {
        let p = permutation_test(
            &dets,
            &annotations,
            band,
            cfg.metrics.n_perm,
            cfg.metrics.ci_s,
            cfg.seed,
        )
        .unwrap();
        rows.push(ScoreRow {
            snr_db: Some(cfg.synth.snr_db),
            background: Some(cfg.synth.background_id),
            band,
            counts: p.counts,
            scores: p.scores,
            p_value: Some(p.p_value),
        });
        eval.insert(band.as_str().to_string(), serde_json::to_value(&p).unwrap());
    }
    report::write_scores(&dir.join("scores.csv"), &rows).unwrap();
    std::fs::write(
        dir.join("eval.json"),
        serde_json::to_vec_pretty(&eval).unwrap(),
    )
    .unwrap();

    let rates = RateTable::from_detections(&dets, record.resected(), record.duration_s()).unwrap();
    let ratios: Vec<report::RatioRow> = Band::ALL
        .iter()
        .map(|&band| report::RatioRow {
            label: "synthetic".into(),
            band,
            outcome: rate_ratio(&rates, band),
        })
        .collect();
    report::write_ratios(&dir.join("ratio.csv"), &ratios).unwrap();

    let mut manifest = Manifest::new("acceptance", &cfg.to_toml().unwrap());
    for f in &PIPELINE_FILES[..PIPELINE_FILES.len() - 1] {
        manifest
            .outputs
            .push(io::FileDigest::of(&dir.join(f)).unwrap());
    }
    manifest.write(&dir.join("manifest.json")).unwrap();
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_run(a.path());
    full_run(b.path());
    let differing: Vec<&str> = PIPELINE_FILES
        .iter()
        .copied()
        .filter(|f| {
            std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap()
        })
        .collect();
    report(
        8,
        differing.is_empty(),
        &format!(
            "({} files compared, differing: {differing:?})",
            PIPELINE_FILES.len()
        ),
    );
}

#[test]
fn criterion_9_throughput() {
    let _g = serial();
    let cfg = RunConfig::default();
    let bench = build_benchmark(&cfg.synth).unwrap();
    let t0 = Instant::now();
    let out = pipeline::detect(&bench.record, &cfg.detector).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    report(
        9,
        elapsed <= 60.0,
        &format!(
            "(detect of {} ch x {} s in {elapsed:.1} s on {cores} core(s), {} events)",
            bench.record.n_channels(),
            bench.record.duration_s(),
            out.events.len()
        ),
    );
}

#[test]
fn otsu_oracle_self_check() {
    // a two-level matrix splits between the levels
    let v = [0.0, 0.0, 1.0, 1.0];
    assert!(otsu_exhaustive(&v) < 255);
    let levels = levels_of(&v);
    assert_eq!(levels, vec![0, 0, 255, 255]);
    let _ = events::OTSU_LEVELS;
}
