//! Synthetic benchmark: pink-noise backgrounds with injected ripples, fast
//! ripples and spikes at a controlled in-band SNR, plus ground truth.
//!
//! All randomness derives from `BenchmarkConfig::seed`. Each (channel,
//! background) pair and each channel's event plan draw from their own
//! ChaCha8 stream, so channels can be generated in any order.

use std::f64::consts::{LN_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, EventKind};
use crate::error::{param, Result};
use crate::signal::{FrequencyBand, SignalRecord};

/// Band used to measure spike SNR.
pub const SPIKE_BAND: FrequencyBand = FrequencyBand { lo: 1.0, hi: 80.0 };
/// Below this frequency the background spectrum is flat instead of 1/f.
pub const PINK_CORNER_HZ: f64 = 2.0;
/// Decay constant of the spike's sharp peak.
pub const SPIKE_TAU_S: f64 = 0.004;
/// Half-extent of a spike, used as its SNR support.
pub const SPIKE_HALF_WIDTH_S: f64 = 0.035;

const TAG_BACKGROUND: u64 = 1 << 60;
const TAG_PLAN: u64 = 2 << 60;

/// One injected event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub center_s: f64,
    /// Carrier frequency; unused for spikes.
    pub f0: f64,
    /// Cycles inside the half-power width; unused for spikes.
    pub n_cycles: f64,
    /// Peak absolute amplitude in microvolts.
    pub amplitude: f64,
    /// Event injected at the same instant (a fast ripple riding on a ripple).
    pub co_occurring: Option<Box<EventSpec>>,
}

impl EventSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            EventKind::Ripple => (80.0..250.0).contains(&self.f0) && self.n_cycles >= 6.0,
            EventKind::FastRipple => (250.0..500.0).contains(&self.f0) && self.n_cycles >= 6.0,
            EventKind::Spike => true,
        };
        if !ok || !(self.amplitude >= 0.0) || !self.center_s.is_finite() {
            return param(format!("invalid event spec {self:?}"));
        }
        if let Some(c) = &self.co_occurring {
            c.validate()?;
        }
        Ok(())
    }

    /// Gaussian envelope width of an oscillatory event.
    pub fn sigma_s(&self) -> f64 {
        self.n_cycles / (2.0 * self.f0 * LN_2.sqrt())
    }

    /// Half-length of the window over which the event's SNR is defined.
    pub fn support_half_s(&self) -> f64 {
        match self.kind {
            EventKind::Spike => SPIKE_HALF_WIDTH_S,
            _ => self.n_cycles / self.f0,
        }
    }

    pub fn snr_band(&self) -> FrequencyBand {
        match self.kind {
            EventKind::Ripple => FrequencyBand::RIPPLE,
            EventKind::FastRipple => FrequencyBand::FAST_RIPPLE,
            EventKind::Spike => SPIKE_BAND,
        }
    }
}

/// Benchmark shape. Defaults: 8 channels of 120 s at 2048 Hz, 10 events
/// of each kind per channel, at least 0.5 s apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n_channels: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub snr_db: f64,
    pub n_backgrounds: usize,
    /// Which of the `n_backgrounds` backgrounds to render.
    pub background_id: usize,
    pub seed: u64,
    pub events_per_kind: usize,
    /// Per-channel override of `events_per_kind`.
    pub channel_events: Option<Vec<usize>>,
    /// Extra ripple plus fast-ripple pairs per channel sharing one centre.
    pub co_occurring_pairs: usize,
    pub min_spacing_s: f64,
    /// Events stay this far from the recording edges.
    pub edge_margin_s: f64,
    pub ripple_f0: (f64, f64),
    pub fast_ripple_f0: (f64, f64),
    pub n_cycles: (f64, f64),
    /// Optional white-noise floor added after normalization.
    pub white_noise_rms: f64,
    pub resected_channels: Vec<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_channels: 8,
            duration_s: 120.0,
            fs: 2048.0,
            snr_db: 15.0,
            n_backgrounds: 30,
            background_id: 0,
            seed: 0,
            events_per_kind: 10,
            channel_events: None,
            co_occurring_pairs: 0,
            min_spacing_s: 0.5,
            edge_margin_s: 0.5,
            ripple_f0: (90.0, 200.0),
            fast_ripple_f0: (300.0, 450.0),
            n_cycles: (6.0, 10.0),
            white_noise_rms: 0.0,
            resected_channels: Vec::new(),
        }
    }
}

impl BenchmarkConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return param("benchmark needs at least one channel");
        }
        if !(self.fs > 2.0 * FrequencyBand::FAST_RIPPLE.hi) {
            return param(format!(
                "fs {} Hz cannot represent the fast-ripple band",
                self.fs
            ));
        }
        if !(self.duration_s > 0.0) || !self.snr_db.is_finite() {
            return param("duration must be positive and snr finite");
        }
        if self.background_id >= self.n_backgrounds {
            return param(format!(
                "background_id {} out of range for {} backgrounds",
                self.background_id, self.n_backgrounds
            ));
        }
        let in_band = |(lo, hi): (f64, f64), b: FrequencyBand| lo >= b.lo && hi < b.hi && lo <= hi;
        if !in_band(self.ripple_f0, FrequencyBand::RIPPLE)
            || !in_band(self.fast_ripple_f0, FrequencyBand::FAST_RIPPLE)
        {
            return param("carrier frequency ranges must lie inside their bands");
        }
        if self.n_cycles.0 < 6.0 || self.n_cycles.1 < self.n_cycles.0 {
            return param("oscillatory events need at least six cycles");
        }
        if let Some(ce) = &self.channel_events {
            if ce.len() != self.n_channels {
                return param("channel_events must list every channel");
            }
        }
        if self.resected_channels.iter().any(|&c| c >= self.n_channels) {
            return param("resected channel index out of range");
        }
        if !(self.white_noise_rms >= 0.0)
            || !(self.min_spacing_s >= 0.0)
            || !(self.edge_margin_s >= 0.0)
        {
            return param("noise floor, spacing and margin must be non-negative");
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stream_id(tag: u64, channel: usize, background_id: usize) -> u64 {
    tag | ((background_id as u64) << 24) | channel as u64
}

/// Pink (1/f power) noise with unit RMS, flat below [`PINK_CORNER_HZ`].
pub fn generate_background(
    config: &BenchmarkConfig,
    channel: usize,
    background_id: usize,
) -> Vec<f64> {
    let n = config.n_samples();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = stream_rng(
        config.seed,
        stream_id(TAG_BACKGROUND, channel, background_id),
    );
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = config.fs / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        *v *= if kk == 0 {
            0.0
        } else {
            1.0 / (kk as f64 * df).max(PINK_CORNER_HZ).sqrt()
        };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Event waveform on the sample grid of a recording at `fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedEvent {
    /// Recording index of `samples[0]`; may be negative near the start.
    pub start_sample: i64,
    pub samples: Vec<f64>,
}

impl RenderedEvent {
    /// Adds the waveform into `target`, clipping at the edges.
    pub fn add_to(&self, target: &mut [f64]) {
        for (i, v) in self.samples.iter().enumerate() {
            let idx = self.start_sample + i as i64;
            if idx >= 0 && (idx as usize) < target.len() {
                target[idx as usize] += v;
            }
        }
    }
}

fn spike_shape(t: f64) -> f64 {
    // sharp peak followed by a slower opposite-polarity wave
    (-t.abs() / SPIKE_TAU_S).exp() - 0.35 * (-((t - 0.018) / 0.009).powi(2) / 2.0).exp()
}

/// Gabor atom or biphasic spike scaled so that its largest absolute sample
/// equals `spec.amplitude`. Co-occurring events are not included.
pub fn render_event(spec: &EventSpec, fs: f64) -> RenderedEvent {
    let half = match spec.kind {
        EventKind::Spike => SPIKE_HALF_WIDTH_S,
        _ => 5.0 * spec.sigma_s(),
    };
    let first = ((spec.center_s - half) * fs).ceil() as i64;
    let last = ((spec.center_s + half) * fs).floor() as i64;
    let mut samples: Vec<f64> = (first..=last)
        .map(|i| {
            let t = i as f64 / fs - spec.center_s;
            match spec.kind {
                EventKind::Spike => spike_shape(t),
                _ => {
                    let s = spec.sigma_s();
                    (-t * t / (2.0 * s * s)).exp() * (2.0 * PI * spec.f0 * t).cos()
                }
            }
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = spec.amplitude / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    RenderedEvent {
        start_sample: first,
        samples,
    }
}

/// Sum of one-sided periodogram bins of `segment` inside `band`.
pub fn band_power(segment: &[f64], fs: f64, band: FrequencyBand) -> f64 {
    let n = segment.len();
    if n == 0 {
        return 0.0;
    }
    let mut buf: Vec<Complex64> = segment.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = fs / n as f64;
    (1..=n / 2)
        .filter(|&k| {
            let f = k as f64 * df;
            f >= band.lo && f <= band.hi
        })
        .map(|k| buf[k].norm_sqr())
        .sum::<f64>()
        / n as f64
}

/// Sample range `[start, end)` of an event's SNR support, clipped to `n`.
pub fn support_range(spec: &EventSpec, fs: f64, n: usize) -> (usize, usize) {
    let h = spec.support_half_s();
    let start = ((spec.center_s - h) * fs).round().max(0.0) as usize;
    let end = (((spec.center_s + h) * fs).round() as usize + 1).min(n);
    (start.min(end), end)
}

/// In-band SNR in dB of `event` over its support against `background`.
pub fn measure_snr_db(spec: &EventSpec, event: &[f64], background: &[f64], fs: f64) -> f64 {
    let (a, b) = support_range(spec, fs, background.len());
    let band = spec.snr_band();
    10.0 * (band_power(&event[a..b], fs, band) / band_power(&background[a..b], fs, band)).log10()
}

/// Generated recording with its ground truth.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub record: SignalRecord,
    pub annotations: Vec<Annotation>,
    /// Injected events per channel, with final amplitudes.
    pub events: Vec<Vec<EventSpec>>,
}

/// Sorted event centres: `n` points at least `spacing` apart, uniformly
/// distributed over such configurations inside `[lo, hi]`.
fn spaced_centres(
    rng: &mut ChaCha8Rng,
    n: usize,
    lo: f64,
    hi: f64,
    spacing: f64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let slack = hi - lo - (n - 1) as f64 * spacing;
    if slack < 0.0 {
        return param(format!(
            "{n} events at {spacing} s spacing do not fit in {:.3} s",
            hi - lo
        ));
    }
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * slack).collect();
    u.sort_by(f64::total_cmp);
    Ok(u.iter()
        .enumerate()
        .map(|(i, v)| lo + v + i as f64 * spacing)
        .collect())
}

fn plan_channel(config: &BenchmarkConfig, channel: usize) -> Result<Vec<EventSpec>> {
    let per_kind = config
        .channel_events
        .as_ref()
        .map_or(config.events_per_kind, |c| c[channel]);
    let mut rng = stream_rng(
        config.seed,
        stream_id(TAG_PLAN, channel, config.background_id),
    );
    let mut slots: Vec<Option<EventKind>> = EventKind::ALL
        .iter()
        .flat_map(|k| std::iter::repeat_n(Some(*k), per_kind))
        .collect();
    slots.extend(std::iter::repeat_n(None, config.co_occurring_pairs));
    let centres = spaced_centres(
        &mut rng,
        slots.len(),
        config.edge_margin_s,
        config.duration_s - config.edge_margin_s,
        config.min_spacing_s,
    )?;
    slots.shuffle(&mut rng);

    let oscillation = |kind: EventKind, center_s: f64, rng: &mut ChaCha8Rng| {
        let (lo, hi) = if kind == EventKind::Ripple {
            config.ripple_f0
        } else {
            config.fast_ripple_f0
        };
        EventSpec {
            kind,
            center_s,
            f0: rng.random_range(lo..=hi),
            n_cycles: rng.random_range(config.n_cycles.0..=config.n_cycles.1),
            amplitude: 1.0,
            co_occurring: None,
        }
    };
    let mut specs = Vec::with_capacity(slots.len());
    for (slot, c) in slots.into_iter().zip(centres) {
        specs.push(match slot {
            Some(EventKind::Spike) => EventSpec {
                kind: EventKind::Spike,
                center_s: c,
                f0: 0.0,
                n_cycles: 0.0,
                amplitude: 1.0,
                co_occurring: None,
            },
            Some(kind) => oscillation(kind, c, &mut rng),
            None => {
                let mut r = oscillation(EventKind::Ripple, c, &mut rng);
                r.co_occurring = Some(Box::new(oscillation(EventKind::FastRipple, c, &mut rng)));
                r
            }
        });
    }
    Ok(specs)
}

/// Scales `spec` so that its in-band power over the support sits
/// `snr_db` above the background's, and adds it to `signal`.
fn inject(spec: &mut EventSpec, background: &[f64], signal: &mut [f64], fs: f64, snr_db: f64) {
    spec.amplitude = 1.0;
    let unit = render_event(spec, fs);
    let (a, b) = support_range(spec, fs, background.len());
    let mut unit_full = vec![0.0; b - a];
    for (i, v) in unit.samples.iter().enumerate() {
        let idx = unit.start_sample + i as i64 - a as i64;
        if idx >= 0 && (idx as usize) < unit_full.len() {
            unit_full[idx as usize] = *v;
        }
    }
    let band = spec.snr_band();
    let p_event = band_power(&unit_full, fs, band);
    let p_bg = band_power(&background[a..b], fs, band);
    let gain = if p_event > 0.0 {
        (10f64.powf(snr_db / 10.0) * p_bg / p_event).sqrt()
    } else {
        0.0
    };
    spec.amplitude = gain;
    let mut scaled = unit;
    scaled.samples.iter_mut().for_each(|v| *v *= gain);
    scaled.add_to(signal);
}

/// Renders one benchmark recording with annotations.
pub fn build_benchmark(config: &BenchmarkConfig) -> Result<Benchmark> {
    config.validate()?;
    let fs = config.fs;
    let channels: Vec<(Vec<f64>, Vec<EventSpec>)> = (0..config.n_channels)
        .into_par_iter()
        .map(|ch| {
            let mut specs = plan_channel(config, ch)?;
            let mut background = generate_background(config, ch, config.background_id);
            if config.white_noise_rms > 0.0 {
                let mut rng = stream_rng(
                    config.seed,
                    stream_id(TAG_BACKGROUND | (1 << 59), ch, config.background_id),
                );
                for v in &mut background {
                    *v += config.white_noise_rms * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let mut signal = background.clone();
            for spec in &mut specs {
                inject(spec, &background, &mut signal, fs, config.snr_db);
                if let Some(co) = spec.co_occurring.as_mut() {
                    inject(co, &background, &mut signal, fs, config.snr_db);
                }
            }
            Ok((signal, specs))
        })
        .collect::<Result<_>>()?;

    let mut annotations = Vec::new();
    for (ch, (_, specs)) in channels.iter().enumerate() {
        for s in specs {
            for e in std::iter::once(s).chain(s.co_occurring.as_deref()) {
                annotations.push(Annotation {
                    channel: ch,
                    center_s: e.center_s,
                    kind: e.kind,
                    amplitude: e.amplitude,
                });
            }
        }
    }
    annotations.sort_by(|a, b| {
        a.channel
            .cmp(&b.channel)
            .then(a.center_s.total_cmp(&b.center_s))
            .then(a.kind.cmp(&b.kind))
    });

    let mut resected = vec![false; config.n_channels];
    for &c in &config.resected_channels {
        resected[c] = true;
    }
    let (samples, events): (Vec<_>, Vec<_>) = channels.into_iter().unzip();
    let names = (0..config.n_channels)
        .map(|i| format!("ch{i:02}"))
        .collect();
    Ok(Benchmark {
        record: SignalRecord::new(samples, fs, names, resected)?,
        annotations,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            n_channels: 2,
            duration_s: 20.0,
            events_per_kind: 4,
            ..Default::default()
        }
    }

    fn gabor(f0: f64, n_cycles: f64, amplitude: f64) -> EventSpec {
        EventSpec {
            kind: EventKind::Ripple,
            center_s: 1.0,
            f0,
            n_cycles,
            amplitude,
            co_occurring: None,
        }
    }

    #[test]
    fn background_is_reproducible_and_unit_rms() {
        let c = small();
        let a = generate_background(&c, 1, 3);
        assert_eq!(a, generate_background(&c, 1, 3));
        assert_ne!(a, generate_background(&c, 1, 4));
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn background_slope_is_pink() {
        let c = BenchmarkConfig::default();
        let x = generate_background(&c, 0, 0);
        let psd = crate::features::welch_psd(&x, c.fs);
        let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (f, p) in psd.f_axis.iter().zip(&psd.power) {
            if (10.0..=500.0).contains(f) {
                let (lx, ly) = (f.log10(), p.log10());
                sx += lx;
                sy += ly;
                sxx += lx * lx;
                sxy += lx * ly;
                n += 1.0;
            }
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope + 1.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn gabor_peak_and_frequency() {
        let e = render_event(&gabor(140.0, 8.0, 7.5), 2048.0);
        let peak = e.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 7.5).abs() < 1e-9);
        let n = e.samples.len();
        let mut buf: Vec<Complex64> = e.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let df = 2048.0 / n as f64;
        let k = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        assert!((k as f64 * df - 140.0).abs() <= df);
    }

    #[test]
    fn gabor_half_power_width_holds_n_cycles() {
        let s = gabor(200.0, 8.0, 1.0);
        // envelope power exp(-t^2/sigma^2) reaches 1/2 at sigma * sqrt(ln 2)
        let width = 2.0 * s.sigma_s() * LN_2.sqrt();
        assert!((width * s.f0 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn spike_energy_is_low_frequency() {
        let spec = EventSpec {
            kind: EventKind::Spike,
            center_s: 1.0,
            f0: 0.0,
            n_cycles: 0.0,
            amplitude: 3.0,
            co_occurring: None,
        };
        let fs = 2048.0;
        let e = render_event(&spec, fs);
        let peak = e.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 3.0).abs() < 1e-9);
        let mut padded = e.samples.clone();
        padded.resize(2048, 0.0);
        let low = band_power(&padded, fs, FrequencyBand { lo: 0.0, hi: 80.0 });
        let all = band_power(
            &padded,
            fs,
            FrequencyBand {
                lo: 0.0,
                hi: fs / 2.0,
            },
        );
        assert!(low / all > 0.8, "fraction {}", low / all);
        let ripple = band_power(&padded, fs, FrequencyBand::RIPPLE);
        assert!(ripple > 1e-4 * all);
    }

    #[test]
    fn benchmark_counts_and_snr() {
        let c = small();
        let b = build_benchmark(&c).unwrap();
        assert_eq!(b.annotations.len(), 2 * 3 * 4);
        assert_eq!(b.record.n_samples(), 40960);
        for (ch, specs) in b.events.iter().enumerate() {
            let bg = generate_background(&c, ch, 0);
            let evt: Vec<f64> = b
                .record
                .channel(ch)
                .iter()
                .zip(&bg)
                .map(|(s, g)| s - g)
                .collect();
            for s in specs {
                assert!((measure_snr_db(s, &evt, &bg, c.fs) - c.snr_db).abs() < 1.0);
            }
            let mut t: Vec<f64> = specs.iter().map(|s| s.center_s).collect();
            t.sort_by(f64::total_cmp);
            assert!(t.windows(2).all(|w| w[1] - w[0] >= c.min_spacing_s - 1e-12));
        }
    }

    #[test]
    fn benchmark_is_deterministic() {
        let c = small();
        let a = build_benchmark(&c).unwrap();
        let b = build_benchmark(&c).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.annotations, b.annotations);
    }

    #[test]
    fn zero_events_and_density_error() {
        let c = BenchmarkConfig {
            events_per_kind: 0,
            ..small()
        };
        let b = build_benchmark(&c).unwrap();
        assert!(b.annotations.is_empty());
        assert_eq!(
            b.record.channel(0),
            generate_background(&c, 0, 0).as_slice()
        );
        let dense = BenchmarkConfig {
            events_per_kind: 20,
            ..small()
        };
        assert!(build_benchmark(&dense).is_err());
    }

    #[test]
    fn co_occurring_pairs_share_centres() {
        let c = BenchmarkConfig {
            co_occurring_pairs: 2,
            ..small()
        };
        let b = build_benchmark(&c).unwrap();
        assert_eq!(b.annotations.len(), 2 * (12 + 4));
        let pairs = b.events[0]
            .iter()
            .filter(|s| s.co_occurring.is_some())
            .count();
        assert_eq!(pairs, 2);
    }
}
