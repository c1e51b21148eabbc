//! Monte-Carlo wave-function trajectories and the detection chain that turns
//! emissions into time tags.
//!
//! Each pulse is an independent trajectory started in the ground state. The
//! unnormalized state evolves under the effective Hamiltonian until its norm
//! drops to a uniform random threshold; a jump is then applied through one of
//! the collapse channels, chosen with probability proportional to
//! `|C psi|^2`. Forward clicks use the displaced operator `alpha(t) + M_fwd`,
//! so they carry the laser-emitter interference seen by the detectors.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlate::output_operator_with_phase;
use crate::correlate::Direction;
use crate::error::{Error, Result};
use crate::model::{dagger, hamiltonian_parts, jump_operators, Channel, DetectionParams, SystemConfig};
use crate::noise::Scheme;
use crate::C64;

/// Jump-time resolution (ns).
pub const TIME_RESOLUTION: f64 = 1e-4;
/// Pulses sharing one draw of spectral-diffusion offsets and background phase.
pub const BLOCK_PULSES: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub pulse_index: u64,
    pub channel: Channel,
    /// Time within the pulse frame (ns), zero at the pulse peak.
    pub time: f64,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pulse_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed, stream), index))
}

const STREAM_PULSE: u64 = 1;
const STREAM_BLOCK: u64 = 2;
const STREAM_DETECT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryOptions {
    /// Initial state of every pulse; the ground state when `None`.
    pub initial: Option<Vec<C64>>,
    /// Phase of the backward background field.
    pub background_phase: f64,
    /// Index given to the first pulse.
    pub first_pulse: u64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            initial: None,
            background_phase: 0.0,
            first_pulse: 0,
        }
    }
}

struct JumpChannel {
    channel: Channel,
    op: Vec<C64>,
    displacement: Option<Direction>,
}

/// Precomputed matrices of one pulse configuration.
struct Engine {
    d: usize,
    k0: Vec<C64>,
    kd: Vec<C64>,
    kb: Vec<C64>,
    jumps: Vec<JumpChannel>,
    alpha0: f64,
    background: C64,
    config: SystemConfig,
    h: f64,
}

fn flat(a: &Array2<C64>) -> Vec<C64> {
    a.iter().copied().collect()
}

#[inline]
fn matvec_add(a: &[C64], x: &[C64], s: C64, out: &mut [C64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * d..(i + 1) * d];
        let mut acc = C64::new(0.0, 0.0);
        for (r, v) in row.iter().zip(x) {
            acc += r * v;
        }
        *o += s * acc;
    }
}

fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

impl Engine {
    fn new(config: &SystemConfig, offsets: &[f64], background_phase: f64) -> Result<Self> {
        let parts = hamiltonian_parts(&config.emitters, offsets)?;
        let d = config.dim();
        let mi = C64::new(0.0, -1.0);
        let fwd = output_operator_with_phase(config, Direction::Forward, 0.0).matrix;
        let bwd_out = output_operator_with_phase(config, Direction::Backward, background_phase);
        let mut k0 = parts.fixed.mapv(|x| x * mi);
        let mut jumps = Vec::new();
        for j in jump_operators(&config.emitters) {
            let (op, displacement) = match j.channel {
                Channel::Forward => (fwd.clone(), Some(Direction::Forward)),
                Channel::Backward => (bwd_out.matrix.clone(), Some(Direction::Backward)),
                _ => (j.op, None),
            };
            k0.scaled_add(C64::from(-0.5), &dagger(&op).dot(&op));
            jumps.push(JumpChannel {
                channel: j.channel,
                op: flat(&op),
                displacement,
            });
        }
        // -i H_drive - M_fwd per unit real drive amplitude, and -M_bwd per
        // unit conjugate background amplitude.
        let kd = parts.drive.mapv(|x| x * mi) - &fwd;
        let kb = bwd_out.matrix.mapv(|x| -x);
        let h = (0.02f64).min(1.0 / (20.0 * config.fastest_rate().max(1e-12)));
        Ok(Engine {
            d,
            k0: flat(&k0),
            kd: flat(&kd),
            kb: flat(&kb),
            jumps,
            alpha0: config.drive.alpha0,
            background: bwd_out.amplitude,
            config: config.clone(),
            h,
        })
    }

    #[inline]
    fn amplitudes(&self, t: f64) -> (f64, C64) {
        let p = self.config.drive.profile(t);
        (self.alpha0 * p, self.background * p)
    }

    fn deriv(&self, t: f64, x: &[C64], out: &mut [C64]) {
        let (a, b) = self.amplitudes(t);
        let damp = -0.5 * (a * a + b.norm_sqr());
        for (o, v) in out.iter_mut().zip(x) {
            *o = v * damp;
        }
        matvec_add(&self.k0, x, C64::from(1.0), out);
        if a != 0.0 {
            matvec_add(&self.kd, x, C64::from(a), out);
        }
        if b != C64::new(0.0, 0.0) {
            matvec_add(&self.kb, x, b.conj(), out);
        }
    }

    fn rk4(&self, x: &[C64], t: f64, h: f64, out: &mut Vec<C64>) {
        let d = self.d;
        let mut k1 = vec![C64::new(0.0, 0.0); d];
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        let mut tmp = k1.clone();
        self.deriv(t, x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] + k1[i] * (h / 2.0);
        }
        self.deriv(t + h / 2.0, &tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + k2[i] * (h / 2.0);
        }
        self.deriv(t + h / 2.0, &tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + k3[i] * h;
        }
        self.deriv(t + h, &tmp, &mut k4);
        out.clear();
        out.extend((0..d).map(|i| x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0)));
    }

    fn apply_jump(&self, j: &JumpChannel, t: f64, x: &[C64], out: &mut Vec<C64>) {
        out.clear();
        out.extend(std::iter::repeat(C64::new(0.0, 0.0)).take(self.d));
        matvec_add(&j.op, x, C64::from(1.0), out);
        let (a, b) = self.amplitudes(t);
        let s = match j.displacement {
            Some(Direction::Forward) => C64::from(a),
            Some(Direction::Backward) => b,
            None => return,
        };
        for (o, v) in out.iter_mut().zip(x) {
            *o += s * v;
        }
    }

    fn pulse(&self, initial: &[C64], pulse_index: u64, rng: &mut ChaCha8Rng, records: &mut Vec<EmissionRecord>) -> Result<()> {
        let (t0, t1) = (self.config.time_grid.t_min, self.config.time_grid.t_max);
        let mut psi = initial.to_vec();
        let n0 = norm2(&psi).sqrt();
        psi.iter_mut().for_each(|v| *v /= n0);
        let mut threshold = 1.0 - rng.gen::<f64>();
        let mut next = Vec::with_capacity(self.d);
        let mut t = t0;
        while t < t1 {
            let h = self.h.min(t1 - t);
            self.rk4(&psi, t, h, &mut next);
            let n = norm2(&next);
            if !n.is_finite() {
                return Err(Error::NormUnderflow { t });
            }
            if n > threshold {
                std::mem::swap(&mut psi, &mut next);
                t += h;
                continue;
            }
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > TIME_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                self.rk4(&psi, t, mid, &mut next);
                if norm2(&next) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            self.rk4(&psi, t, hi, &mut next);
            t += hi;
            std::mem::swap(&mut psi, &mut next);
            let mut weights = Vec::with_capacity(self.jumps.len());
            let mut candidates = Vec::with_capacity(self.jumps.len());
            for j in &self.jumps {
                let mut v = Vec::new();
                self.apply_jump(j, t, &psi, &mut v);
                weights.push(norm2(&v));
                candidates.push(v);
            }
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::NormUnderflow { t });
            }
            let mut u = rng.gen::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = k;
                    break;
                }
                u -= w;
            }
            let nv = weights[pick].sqrt();
            psi = candidates.swap_remove(pick).into_iter().map(|v| v / nv).collect();
            records.push(EmissionRecord {
                pulse_index,
                channel: self.jumps[pick].channel,
                time: t,
            });
            threshold = 1.0 - rng.gen::<f64>();
        }
        Ok(())
    }
}

/// Emission records of `n_pulses` trajectories at fixed detunings.
pub fn run_batch(config: &SystemConfig, offsets: &[f64], n_pulses: u64, seed: u64) -> Result<Vec<EmissionRecord>> {
    run_batch_with(config, offsets, n_pulses, seed, &TrajectoryOptions::default())
}

pub fn run_batch_with(
    config: &SystemConfig,
    offsets: &[f64],
    n_pulses: u64,
    seed: u64,
    options: &TrajectoryOptions,
) -> Result<Vec<EmissionRecord>> {
    if n_pulses == 0 {
        return Err(Error::invalid("n_pulses", "must be at least 1"));
    }
    let engine = Engine::new(config, offsets, options.background_phase)?;
    let initial = initial_state(config, options)?;
    let per: Vec<Result<Vec<EmissionRecord>>> = (0..n_pulses)
        .into_par_iter()
        .map(|k| {
            let p = options.first_pulse + k;
            let mut rng = pulse_rng(seed, STREAM_PULSE, p);
            let mut out = Vec::new();
            engine.pulse(&initial, p, &mut rng, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

fn initial_state(config: &SystemConfig, options: &TrajectoryOptions) -> Result<Vec<C64>> {
    let d = config.dim();
    match &options.initial {
        Some(v) if v.len() != d => Err(Error::DimensionMismatch {
            expected: d,
            found: v.len(),
        }),
        Some(v) if norm2(v) == 0.0 => Err(Error::invalid("initial", "state has zero norm")),
        Some(v) => Ok(v.clone()),
        None => {
            let mut g = vec![C64::new(0.0, 0.0); d];
            g[d - 1] = C64::new(1.0, 0.0);
            Ok(g)
        }
    }
}

/// Detunings and background phase of one block of pulses.
fn block_draw(config: &SystemConfig, seed: u64, block: u64) -> (Vec<f64>, f64) {
    let mut rng = pulse_rng(seed, STREAM_BLOCK, block);
    let offsets = match config.diffusion.scheme {
        Scheme::None => vec![0.0; config.m()],
        _ => config
            .emitters
            .iter()
            .map(|e| {
                if e.sigma_sd > 0.0 {
                    Normal::new(0.0, e.sigma_sd).expect("positive width").sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let theta = if config.detection.background_amp_backward != 0.0 && config.detection.background_phase_nodes > 1 {
        rng.gen::<f64>() * std::f64::consts::TAU
    } else {
        0.0
    };
    (offsets, theta)
}

/// Emissions of `n_pulses` pulses with spectral diffusion and background
/// phase redrawn every [`BLOCK_PULSES`] pulses.
pub fn simulate_emissions(config: &SystemConfig, n_pulses: u64, seed: u64) -> Result<Vec<EmissionRecord>> {
    config.validate()?;
    if n_pulses == 0 {
        return Err(Error::invalid("n_pulses", "must be at least 1"));
    }
    let blocks = n_pulses.div_ceil(BLOCK_PULSES);
    let initial = initial_state(config, &TrajectoryOptions::default())?;
    let per: Vec<Result<Vec<EmissionRecord>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let (offsets, theta) = block_draw(config, seed, b);
            let engine = Engine::new(config, &offsets, theta)?;
            let mut out = Vec::new();
            let end = ((b + 1) * BLOCK_PULSES).min(n_pulses);
            for p in b * BLOCK_PULSES..end {
                let mut rng = pulse_rng(seed, STREAM_PULSE, p);
                engine.pulse(&initial, p, &mut rng, &mut out)?;
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// One detector click: pulse, detector id (0-2 forward, 3-5 backward) and
/// time in ps relative to the pulse peak.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagRecord {
    pub pulse_index: u64,
    pub time_ps: i64,
    pub channel: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TagStream {
    pub header: BTreeMap<String, String>,
    pub records: Vec<TagRecord>,
}

pub const CHANNEL_MAP: &str = "0-2:forward,3-5:backward";

impl TagStream {
    pub fn new() -> Self {
        let mut header = BTreeMap::new();
        header.insert("channel_map".into(), CHANNEL_MAP.into());
        TagStream {
            header,
            records: Vec::new(),
        }
    }

    /// Sorts records by pulse, then time, then detector.
    pub fn canonicalize(&mut self) {
        self.records.sort_by_key(|r| (r.pulse_index, r.time_ps, r.channel));
    }

    pub fn n_pulses(&self) -> Option<u64> {
        self.header.get("n_pulses").and_then(|v| v.parse().ok())
    }

    /// Clicks of one direction with detector ids reduced to 0-2.
    pub fn direction(&self, dir: Direction) -> Vec<TagRecord> {
        let range = match dir {
            Direction::Forward => 0..3,
            Direction::Backward => 3..6,
        };
        let base = range.start;
        self.records
            .iter()
            .filter(|r| range.contains(&r.channel))
            .map(|r| TagRecord {
                channel: r.channel - base,
                ..*r
            })
            .collect()
    }
}

/// Detection chain: routing to detectors, efficiency thinning, Gaussian
/// jitter and rounding to whole ps. Loss and dephasing records are dropped.
pub fn detect(records: &[EmissionRecord], detection: &DetectionParams, seed: u64) -> TagStream {
    let mut stream = TagStream::new();
    stream.header.insert("detect_seed".into(), seed.to_string());
    let jitter = (detection.sigma_irf_ps > 0.0).then(|| Normal::new(0.0, detection.sigma_irf_ps).expect("finite jitter"));
    let mut i = 0;
    while i < records.len() {
        let p = records[i].pulse_index;
        let mut rng = pulse_rng(seed, STREAM_DETECT, p);
        while i < records.len() && records[i].pulse_index == p {
            let r = records[i];
            i += 1;
            let base = match r.channel {
                Channel::Forward => 0u8,
                Channel::Backward => 3u8,
                _ => continue,
            };
            if rng.gen::<f64>() >= detection.efficiency {
                continue;
            }
            let mut u = rng.gen::<f64>();
            let mut k = detection.split_probs.len() - 1;
            for (j, q) in detection.split_probs.iter().enumerate() {
                if u < *q {
                    k = j;
                    break;
                }
                u -= q;
            }
            let dt = jitter.as_ref().map_or(0.0, |n| n.sample(&mut rng));
            stream.records.push(TagRecord {
                pulse_index: p,
                channel: base + k as u8,
                time_ps: (r.time * 1000.0 + dt).round() as i64,
            });
        }
    }
    stream.canonicalize();
    stream
}

/// Simulated and detected time tags with a descriptive header.
pub fn simulate_tags(config: &SystemConfig, n_pulses: u64, seed: u64) -> Result<TagStream> {
    let records = simulate_emissions(config, n_pulses, seed)?;
    let mut stream = detect(&records, &config.detection, splitmix(seed, 0xD7));
    stream.header.insert("seed".into(), seed.to_string());
    stream.header.insert("n_pulses".into(), n_pulses.to_string());
    stream.header.insert("rep_period_ns".into(), config.drive.rep_period.to_string());
    Ok(stream)
}

/// Per-pulse click statistics on uniform time bins: first moments of the
/// counts and of ordered click pairs, with their sample variances.
#[derive(Clone, Debug)]
pub struct ClickMoments {
    pub t_min: f64,
    pub width: f64,
    pub n_bins: usize,
    pub n_pulses: u64,
    sum1: Vec<f64>,
    sq1: Vec<f64>,
    sum2: Vec<f64>,
    sq2: Vec<f64>,
}

impl ClickMoments {
    pub fn new(t_min: f64, t_max: f64, n_bins: usize) -> Self {
        ClickMoments {
            t_min,
            width: (t_max - t_min) / n_bins as f64,
            n_bins,
            n_pulses: 0,
            sum1: vec![0.0; n_bins],
            sq1: vec![0.0; n_bins],
            sum2: vec![0.0; n_bins * n_bins],
            sq2: vec![0.0; n_bins * n_bins],
        }
    }

    /// Adds `n_pulses` pulses whose records of `channel` are given, sorted by
    /// pulse; pulses without records count as empty.
    pub fn accumulate(&mut self, records: &[EmissionRecord], channel: Channel, n_pulses: u64) {
        self.n_pulses += n_pulses;
        let nb = self.n_bins;
        let mut counts = vec![0.0; nb];
        let mut touched = Vec::new();
        let mut i = 0;
        while i < records.len() {
            let p = records[i].pulse_index;
            touched.clear();
            while i < records.len() && records[i].pulse_index == p {
                let r = &records[i];
                i += 1;
                if r.channel != channel {
                    continue;
                }
                let b = ((r.time - self.t_min) / self.width).floor();
                if b >= 0.0 && (b as usize) < nb {
                    let b = b as usize;
                    if counts[b] == 0.0 {
                        touched.push(b);
                    }
                    counts[b] += 1.0;
                }
            }
            for &a in &touched {
                self.sum1[a] += counts[a];
                self.sq1[a] += counts[a] * counts[a];
                for &b in &touched {
                    let pairs = if a == b { counts[a] * (counts[a] - 1.0) } else { counts[a] * counts[b] };
                    self.sum2[a * nb + b] += pairs;
                    self.sq2[a * nb + b] += pairs * pairs;
                }
            }
            for &a in &touched {
                counts[a] = 0.0;
            }
        }
    }

    fn mean_se(&self, s: f64, q: f64) -> (f64, f64) {
        let n = self.n_pulses as f64;
        let mean = s / n;
        let var = (q / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    /// Mean clicks per pulse in bin `b` and its standard error.
    pub fn counts(&self, b: usize) -> (f64, f64) {
        self.mean_se(self.sum1[b], self.sq1[b])
    }

    /// Mean ordered click pairs per pulse in bins `(a, b)` and its standard
    /// error.
    pub fn pairs(&self, a: usize, b: usize) -> (f64, f64) {
        let k = a * self.n_bins + b;
        self.mean_se(self.sum2[k], self.sq2[k])
    }

    pub fn centres(&self) -> Vec<f64> {
        (0..self.n_bins).map(|b| self.t_min + (b as f64 + 0.5) * self.width).collect()
    }
}
