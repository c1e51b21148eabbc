//! Jacobi projection, cumulant decomposition, window normalization,
//! zero-delay statistics, and the phase and emitter-number studies.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlate::{
    background_phases, correlation_gn_node, equal_time_moments, output_operator_with_phase, write_binary_grid,
    CorrelationGrid, Direction, GridSpec,
};
use crate::error::{Error, Result};
use crate::model::{SystemConfig, TimeGrid};
use crate::noise::{self, diffusion_nodes, AveragedCorrelations, Averager, AveragingMode, NodeCorrelations};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// `(j1, j2)` of three detection times; the centre of mass is dropped.
pub fn jacobi_coords(t1: f64, t2: f64, t3: f64) -> (f64, f64) {
    ((2.0 * t1 - t2 - t3) / 6f64.sqrt(), (t2 - t3) / SQRT2)
}

/// Values on a regular `(j1, j2)` lattice of bins with edges at multiples of
/// the bin widths.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobiMap {
    /// Bin centres (ns).
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub w1: f64,
    pub w2: f64,
    pub values: Array2<f64>,
}

impl JacobiMap {
    fn empty(w1: f64, w2: f64, k1: i64, k2: i64) -> Self {
        let j1 = (-k1..k1).map(|k| (k as f64 + 0.5) * w1).collect::<Vec<_>>();
        let j2 = (-k2..k2).map(|k| (k as f64 + 0.5) * w2).collect::<Vec<_>>();
        let values = Array2::zeros((j1.len(), j2.len()));
        JacobiMap { j1, j2, w1, w2, values }
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn same_layout(&self, other: &JacobiMap) -> Result<()> {
        if self.values.dim() != other.values.dim() || self.w1 != other.w1 || self.w2 != other.w2 {
            return Err(Error::GridMismatch("Jacobi maps differ in bin layout".into()));
        }
        Ok(())
    }

    pub fn map2(&self, other: &JacobiMap, f: impl Fn(f64, f64) -> f64) -> Result<JacobiMap> {
        self.same_layout(other)?;
        let mut out = self.clone();
        out.values.zip_mut_with(&other.values, |a, b| *a = f(*a, *b));
        Ok(out)
    }

    /// Overlap-weighted mean over the central window `w1 x w2` (ns), and the
    /// total weight.
    pub fn window_mean(&self, window: (f64, f64)) -> Result<(f64, f64)> {
        let wa = overlap_weights(&self.j1, self.w1, window.0);
        let wb = overlap_weights(&self.j2, self.w2, window.1);
        let mut acc = 0.0;
        let mut norm = 0.0;
        for (i, a) in wa.iter().enumerate() {
            for (j, b) in wb.iter().enumerate() {
                let w = a * b;
                if w > 0.0 {
                    acc += w * self.values[[i, j]];
                    norm += w;
                }
            }
        }
        if norm == 0.0 {
            return Err(Error::EmptyWindow);
        }
        Ok((acc / norm, norm))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("j1_ns,j2_ns,value\n");
        for (i, a) in self.j1.iter().enumerate() {
            for (j, b) in self.j2.iter().enumerate() {
                s.push_str(&format!("{a},{b},{:e}\n", self.values[[i, j]]));
            }
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_binary_grid(path, &[self.j1.clone(), self.j2.clone()], self.values.as_slice().unwrap())
    }
}

/// Fraction of each bin (centres `c`, width `w`) inside `[-width/2, width/2]`.
fn overlap_weights(centres: &[f64], w: f64, width: f64) -> Vec<f64> {
    let h = width / 2.0;
    centres
        .iter()
        .map(|c| {
            let lo = (c - w / 2.0).max(-h);
            let hi = (c + w / 2.0).min(h);
            ((hi - lo) / w).max(0.0)
        })
        .collect()
}

/// Default Jacobi bin widths for a time-bin width `dt`: four `j1` bins span
/// `8 dt / sqrt(6)` and two `j2` bins span `2 sqrt(2) dt`.
pub fn default_jacobi_bins(dt: f64) -> (f64, f64) {
    (4.0 * dt / 6f64.sqrt(), SQRT2 * dt)
}

fn check_uniform(axis: &[f64]) -> Result<f64> {
    if axis.len() < 2 {
        return Err(Error::invalid("grid", "needs at least two points"));
    }
    let dt = axis[1] - axis[0];
    if axis.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0)) {
        return Err(Error::invalid("grid", "axis is not uniform"));
    }
    Ok(dt)
}

/// Adds `v` to the bins containing coordinate `x`; a point on a bin edge is
/// split evenly between the two neighbours.
fn bin_split(x: f64, w: f64, k: i64) -> [(i64, f64); 2] {
    let u = x / w;
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        let b = r as i64;
        [(b - 1 + k, 0.5), (b + k, 0.5)]
    } else {
        [(u.floor() as i64 + k, 1.0), (0, 0.0)]
    }
}

/// Projects a cubic third-order grid onto `(j1, j2)`, summing over the centre
/// of mass, with the default bin widths.
pub fn jacobi_project(g3: &CorrelationGrid) -> Result<JacobiMap> {
    let dt = check_uniform(g3.axis())?;
    let (w1, w2) = default_jacobi_bins(dt);
    jacobi_project_with(g3, w1, w2)
}

pub fn jacobi_project_with(g3: &CorrelationGrid, w1: f64, w2: f64) -> Result<JacobiMap> {
    if g3.order() != 3 {
        return Err(Error::invalid("grid", "Jacobi projection needs a third-order grid"));
    }
    let dt = check_uniform(g3.axis())?;
    let span = match g3.band() {
        Some(b) => b as f64 * dt,
        None => (g3.axis().len() - 1) as f64 * dt,
    };
    let k1 = (2.0 * span / 6f64.sqrt() / w1).ceil() as i64 + 1;
    let k2 = (span / SQRT2 / w2).ceil() as i64 + 1;
    let mut map = JacobiMap::empty(w1, w2, k1, k2);
    // Only relative indices matter, so work with index differences.
    for (idx, v) in g3.indexed_values() {
        if v == 0.0 {
            continue;
        }
        let (a, b) = jacobi_coords(idx[0] as f64 * dt, idx[1] as f64 * dt, idx[2] as f64 * dt);
        for (i, wi) in bin_split(a, w1, k1) {
            if wi == 0.0 {
                continue;
            }
            for (j, wj) in bin_split(b, w2, k2) {
                if wj == 0.0 {
                    continue;
                }
                map.values[[i as usize, j as usize]] += v * wi * wj;
            }
        }
    }
    Ok(map)
}

/// Correlations binned by delay `tau = t2 - t1`, bins centred on multiples of
/// the time step.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayProfile {
    pub tau: Vec<f64>,
    pub width: f64,
    pub values: Vec<f64>,
}

impl DelayProfile {
    pub fn window_mean(&self, window: f64) -> Result<(f64, f64)> {
        let w = overlap_weights(&self.tau, self.width, window);
        let norm: f64 = w.iter().sum();
        if norm == 0.0 {
            return Err(Error::EmptyWindow);
        }
        Ok((w.iter().zip(&self.values).map(|(a, b)| a * b).sum::<f64>() / norm, norm))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("tau_ns,value\n");
        for (t, v) in self.tau.iter().zip(&self.values) {
            s.push_str(&format!("{t},{v:e}\n"));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn project_delay(g2: &CorrelationGrid) -> Result<DelayProfile> {
    if g2.order() != 2 {
        return Err(Error::invalid("grid", "delay projection needs a second-order grid"));
    }
    let dt = check_uniform(g2.axis())?;
    let k = g2.band().unwrap_or(g2.axis().len() - 1) as i64;
    let mut values = vec![0.0; (2 * k + 1) as usize];
    for (idx, v) in g2.indexed_values() {
        values[(idx[1] as i64 - idx[0] as i64 + k) as usize] += v;
    }
    Ok(DelayProfile {
        tau: (-k..=k).map(|i| i as f64 * dt).collect(),
        width: dt,
        values,
    })
}

/// A map normalized by the central-window mean of its uncorrelated
/// reference, and the zero-delay value read from the same window.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized<M> {
    pub map: M,
    pub zero_delay: f64,
    pub denominator: f64,
    /// Window actually covered, in bin units of area (or length).
    pub window_weight: f64,
}

pub fn normalize(corr: &JacobiMap, uncorrelated: &JacobiMap, window: (f64, f64)) -> Result<Normalized<JacobiMap>> {
    corr.same_layout(uncorrelated)?;
    let (den, weight) = uncorrelated.window_mean(window)?;
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let mut map = corr.clone();
    map.values.mapv_inplace(|v| v / den);
    let (zero_delay, _) = map.window_mean(window)?;
    Ok(Normalized {
        map,
        zero_delay,
        denominator: den,
        window_weight: weight,
    })
}

pub fn normalize_delay(corr: &DelayProfile, uncorrelated: &DelayProfile, window: f64) -> Result<Normalized<DelayProfile>> {
    if corr.values.len() != uncorrelated.values.len() {
        return Err(Error::GridMismatch("delay profiles differ in length".into()));
    }
    let (den, weight) = uncorrelated.window_mean(window)?;
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let mut map = corr.clone();
    map.values.iter_mut().for_each(|v| *v /= den);
    let (zero_delay, _) = map.window_mean(window)?;
    Ok(Normalized {
        map,
        zero_delay,
        denominator: den,
        window_weight: weight,
    })
}

/// Third-order correlations split into connected and disconnected parts.
#[derive(Clone, Debug)]
pub struct CumulantSet {
    pub g3: CorrelationGrid,
    pub connected: CorrelationGrid,
    pub disconnected: CorrelationGrid,
}

/// `G3_c = G3 - sum of the three G2 G1 pairings + 2 G1 G1 G1`.
pub fn connected_component(
    g3: &CorrelationGrid,
    partial: [&CorrelationGrid; 3],
    g1_cube: &CorrelationGrid,
) -> Result<CumulantSet> {
    for p in partial {
        g3.same_layout(p)?;
    }
    g3.same_layout(g1_cube)?;
    let mut connected = g3.clone();
    {
        let c = connected.values_mut();
        for p in partial {
            for (a, b) in c.iter_mut().zip(p.values()) {
                *a -= b;
            }
        }
        for (a, b) in c.iter_mut().zip(g1_cube.values()) {
            *a += 2.0 * b;
        }
    }
    let mut disconnected = g3.clone();
    for (a, b) in disconnected.values_mut().iter_mut().zip(connected.values()) {
        *a -= b;
    }
    Ok(CumulantSet {
        g3: g3.clone(),
        connected,
        disconnected,
    })
}

/// All set partitions of `{0, ..., n-1}`.
pub fn set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![Vec::<Vec<usize>>::new()];
    for x in 0..n {
        let mut next = Vec::new();
        for p in &out {
            for b in 0..p.len() {
                let mut q = p.clone();
                q[b].push(x);
                next.push(q);
            }
            let mut q = p.clone();
            q.push(vec![x]);
            next.push(q);
        }
        out = next;
    }
    out
}

/// Joint cumulant from moments of subsets: `sum over partitions of
/// (-1)^(|p|-1) (|p|-1)! prod_B moment(B)`.
pub fn joint_cumulant(n: usize, moment: impl Fn(&[usize]) -> f64) -> f64 {
    set_partitions(n)
        .iter()
        .map(|p| {
            let k = p.len();
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            let fact: f64 = (1..k).map(|i| i as f64).product();
            sign * fact * p.iter().map(|b| moment(b)).product::<f64>()
        })
        .sum()
}

/// Equal-time joint cumulant of order `n` when every subset moment depends
/// only on its size: `g[k-1]` is `G^(k)(t,...,t)`.
pub fn equal_time_cumulant(g: &[f64], n: usize) -> f64 {
    joint_cumulant(n, |b| g[b.len() - 1])
}

/// Pulse-integrated zero-delay statistics, `g[n-1] = int G^(n)(t..t) dt /
/// int G1(t)^n dt` and the connected counterpart `gc[n-1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroDelay {
    pub g: Vec<f64>,
    pub gc: Vec<f64>,
}

struct MomentSums {
    n_max: usize,
    mode: AveragingMode,
    total: f64,
    // Within-sample accumulators of the time integrals.
    num: Vec<f64>,
    den: Vec<f64>,
    conn: Vec<f64>,
    // Across-sample accumulators of the time series.
    series: Vec<Vec<f64>>,
}

impl MomentSums {
    fn new(n_max: usize, mode: AveragingMode, len: usize) -> Self {
        MomentSums {
            n_max,
            mode,
            total: 0.0,
            num: vec![0.0; n_max],
            den: vec![0.0; n_max],
            conn: vec![0.0; n_max],
            series: vec![vec![0.0; len]; n_max],
        }
    }

    fn integrals(mom: &[Vec<f64>], n_max: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let len = mom[0].len();
        let mut num = vec![0.0; n_max];
        let mut den = vec![0.0; n_max];
        let mut conn = vec![0.0; n_max];
        let mut g = vec![0.0; n_max];
        for t in 0..len {
            for k in 0..n_max {
                g[k] = mom[k][t];
            }
            for n in 1..=n_max {
                num[n - 1] += g[n - 1];
                den[n - 1] += g[0].powi(n as i32);
                conn[n - 1] += equal_time_cumulant(&g, n);
            }
        }
        (num, den, conn)
    }

    fn add(&mut self, mom: &[Vec<f64>], w: f64) {
        self.total += w;
        match self.mode {
            AveragingMode::WithinSample => {
                let (num, den, conn) = Self::integrals(mom, self.n_max);
                for k in 0..self.n_max {
                    self.num[k] += w * num[k];
                    self.den[k] += w * den[k];
                    self.conn[k] += w * conn[k];
                }
            }
            AveragingMode::AcrossSamples => {
                for (acc, s) in self.series.iter_mut().zip(mom) {
                    for (a, v) in acc.iter_mut().zip(s) {
                        *a += w * v;
                    }
                }
            }
        }
    }

    fn finish(mut self) -> ZeroDelay {
        if self.mode == AveragingMode::AcrossSamples {
            for s in &mut self.series {
                s.iter_mut().for_each(|v| *v /= self.total);
            }
            let (num, den, conn) = Self::integrals(&self.series, self.n_max);
            self.num = num;
            self.den = den;
            self.conn = conn;
        }
        ZeroDelay {
            g: self.num.iter().zip(&self.den).map(|(a, b)| a / b).collect(),
            gc: self.conn.iter().zip(&self.den).map(|(a, b)| a / b).collect(),
        }
    }
}

/// Zero-delay statistics up to order `n_max`, averaged over the configured
/// diffusion ensemble and background phases.
pub fn zero_delay(config: &SystemConfig, direction: Direction, n_max: usize, mode: AveragingMode) -> Result<ZeroDelay> {
    let axis = config.time_grid.points();
    let jobs = node_jobs(config, direction);
    let moments: Vec<Result<Vec<Vec<f64>>>> = jobs
        .par_iter()
        .map(|(offsets, _, th)| {
            let out = output_operator_with_phase(config, direction, *th);
            equal_time_moments(config, offsets, &out, &axis, n_max)
        })
        .collect();
    let mut sums = MomentSums::new(n_max, mode, axis.len());
    for ((_, w, _), mom) in jobs.iter().zip(moments) {
        sums.add(&mom?, *w);
    }
    Ok(sums.finish())
}

/// Phase-scan series for two emitters; `phi` is the phase of the second
/// emitter relative to the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub phi: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    pub g3c: Vec<f64>,
}

impl PhaseScan {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("phi_pi,g2_zero,g3_zero,g3c_zero\n");
        for i in 0..self.phi.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                self.phi[i] / std::f64::consts::PI,
                self.g2[i],
                self.g3[i],
                self.g3c[i]
            ));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn phase_scan(config: &SystemConfig, phi_grid: &[f64], direction: Direction) -> Result<PhaseScan> {
    if config.m() != 2 {
        return Err(Error::invalid("emitters", "phase scan needs exactly two emitters"));
    }
    let rows: Vec<Result<ZeroDelay>> = phi_grid
        .par_iter()
        .map(|phi| {
            let mut c = config.clone();
            c.emitters[1].phi = c.emitters[0].phi + phi;
            zero_delay(&c, direction, 3, c.diffusion.mode)
        })
        .collect();
    let mut scan = PhaseScan {
        phi: phi_grid.to_vec(),
        g2: Vec::new(),
        g3: Vec::new(),
        g3c: Vec::new(),
    };
    for r in rows {
        let z = r?;
        scan.g2.push(z.g[1]);
        scan.g3.push(z.g[2]);
        scan.g3c.push(z.gc[2]);
    }
    Ok(scan)
}

/// Connected zero-delay correlations versus emitter number, normalized per
/// order to the largest value over the emitter numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    /// `raw[i][k]` is `g_c^(n[k])` for `m[i]` emitters.
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
}

impl ScalingTable {
    /// Order with the largest normalized value for each emitter number; the
    /// lowest order wins a tie.
    pub fn argmax_n(&self) -> Vec<usize> {
        self.normalized
            .iter()
            .map(|row| {
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let k = row
                    .iter()
                    .position(|v| (v - best).abs() <= 1e-12 * best.abs())
                    .unwrap_or(0);
                self.n[k]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("m,n,gc,gc_normalized\n");
        for (i, m) in self.m.iter().enumerate() {
            for (k, n) in self.n.iter().enumerate() {
                s.push_str(&format!("{m},{n},{:e},{:e}\n", self.raw[i][k], self.normalized[i][k]));
            }
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Replicates the first template emitter `m` times with equal phase steps
/// taken from the template's second emitter (zero if absent).
pub fn replicate_emitters(template: &SystemConfig, m: usize) -> SystemConfig {
    let mut c = template.clone();
    let base = template.emitters[0].clone();
    let step = template.emitters.get(1).map_or(0.0, |e| e.phi - base.phi);
    c.emitters = (0..m)
        .map(|j| {
            let mut e = base.clone();
            e.phi = base.phi + j as f64 * step;
            e
        })
        .collect();
    c
}

pub fn scaling_table(template: &SystemConfig, m_list: &[usize], n_max: usize, direction: Direction) -> Result<ScalingTable> {
    if template.emitters.is_empty() {
        return Err(Error::invalid("emitters", "template needs at least one emitter"));
    }
    if n_max < 2 || n_max > 5 || m_list.iter().any(|m| *m == 0 || *m > 5) {
        return Err(Error::invalid("scaling", "need 1 <= m <= 5 and 2 <= n_max <= 5"));
    }
    let n: Vec<usize> = (2..=n_max).collect();
    let mut raw = Vec::new();
    for &m in m_list {
        let c = replicate_emitters(template, m);
        let z = zero_delay(&c, direction, n_max, c.diffusion.mode)?;
        raw.push(n.iter().map(|k| z.gc[k - 1]).collect::<Vec<f64>>());
    }
    let mut normalized = raw.clone();
    for k in 0..n.len() {
        let peak = raw.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        for row in normalized.iter_mut() {
            row[k] /= peak;
        }
    }
    Ok(ScalingTable {
        m: m_list.to_vec(),
        n,
        raw,
        normalized,
    })
}

/// Settings of the experiment-style estimator chain for simulated grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    /// Rebinning factor applied to the third-order grid.
    pub rebin: usize,
    /// Largest pairwise time separation kept in the third-order grid (ns).
    pub band_ns: f64,
    /// Central `(j1, j2)` window in ns.
    pub window: (f64, f64),
    /// Time step of the second-order grid (ns).
    pub g2_dt: f64,
    pub g2_band_ns: f64,
    /// Central delay window for second order (ns).
    pub g2_window: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            rebin: 4,
            band_ns: 1.3,
            window: (0.417, 0.362),
            g2_dt: 0.016,
            g2_band_ns: 1.0,
            g2_window: 0.256,
        }
    }
}

/// Normalized third-order maps from the experiment-style chain.
#[derive(Clone, Debug)]
pub struct ThirdOrderMaps {
    pub irf: bool,
    pub mode: AveragingMode,
    pub g3: Normalized<JacobiMap>,
    pub g3c: Normalized<JacobiMap>,
}

fn node_jobs(config: &SystemConfig, direction: Direction) -> Vec<(Vec<f64>, f64, f64)> {
    let nodes = diffusion_nodes(&config.emitters, &config.diffusion.scheme);
    let phases = background_phases(config, direction);
    let k = phases.len() as f64;
    let mut jobs = Vec::with_capacity(nodes.len() * phases.len());
    for n in &nodes {
        for th in &phases {
            jobs.push((n.offsets.clone(), n.weight / k, *th));
        }
    }
    jobs
}

/// Averaged first- to third-order correlations on the configured time grid
/// for every requested averaging mode.
pub fn averaged_third_order(
    config: &SystemConfig,
    direction: Direction,
    settings: &PipelineSettings,
    modes: &[AveragingMode],
) -> Result<Vec<AveragedCorrelations>> {
    let axis = config.time_grid.points();
    let dt = config.time_grid.dt;
    let band = (settings.band_ns / dt).round() as usize;
    let spec = GridSpec::banded(axis.clone(), band);
    let mut avgs: Vec<Averager> = modes.iter().map(|m| Averager::new(*m)).collect();
    for (offsets, w, th) in node_jobs(config, direction) {
        let out = output_operator_with_phase(config, direction, th);
        let g1 = equal_time_moments(config, &offsets, &out, &axis, 1)?.remove(0);
        let node = NodeCorrelations {
            g1,
            g2: Some(correlation_gn_node(config, &offsets, &out, &spec, 2)?),
            g3: Some(correlation_gn_node(config, &offsets, &out, &spec, 3)?),
        };
        for a in &mut avgs {
            a.add(&node, w)?;
        }
    }
    avgs.into_iter().map(Averager::finish).collect()
}

/// IRF convolution (optional), rebinning, Jacobi projection and window
/// normalization of averaged third-order correlations.
pub fn third_order_maps(
    avg: &AveragedCorrelations,
    sigma_irf_ns: f64,
    settings: &PipelineSettings,
) -> Result<ThirdOrderMaps> {
    let missing = || Error::invalid("correlations", "third-order terms are missing");
    let g3 = avg.g3.as_ref().ok_or_else(missing)?;
    let pairs = avg.g2g1.as_ref().ok_or_else(missing)?;
    let cube = avg.g1g1g1.as_ref().ok_or_else(missing)?;
    let prep = |g: &CorrelationGrid| -> Result<JacobiMap> {
        let c = noise::convolve_irf(g, sigma_irf_ns);
        jacobi_project(&noise::rebin(&c, settings.rebin)?)
    };
    let cum = connected_component(g3, [&pairs[0], &pairs[1], &pairs[2]], cube)?;
    let j_cube = prep(cube)?;
    Ok(ThirdOrderMaps {
        irf: sigma_irf_ns > 0.0,
        mode: avg.mode,
        g3: normalize(&prep(g3)?, &j_cube, settings.window)?,
        g3c: normalize(&prep(&cum.connected)?, &j_cube, settings.window)?,
    })
}

/// Averaged first- and second-order correlations on the second-order grid
/// (`settings.g2_dt` spacing over the configured time span).
pub fn averaged_second_order(
    config: &SystemConfig,
    direction: Direction,
    settings: &PipelineSettings,
    mode: AveragingMode,
) -> Result<AveragedCorrelations> {
    let grid = TimeGrid::new(config.time_grid.t_min, config.time_grid.t_max, settings.g2_dt);
    let axis = grid.points();
    let band = (settings.g2_band_ns / settings.g2_dt).round() as usize;
    let spec = GridSpec::banded(axis.clone(), band);
    let jobs = node_jobs(config, direction);
    let nodes: Vec<Result<NodeCorrelations>> = jobs
        .par_iter()
        .map(|(offsets, _, th)| {
            let out = output_operator_with_phase(config, direction, *th);
            Ok(NodeCorrelations {
                g1: equal_time_moments(config, offsets, &out, &axis, 1)?.remove(0),
                g2: Some(correlation_gn_node(config, offsets, &out, &spec, 2)?),
                g3: None,
            })
        })
        .collect();
    let mut acc = Averager::new(mode);
    for ((_, w, _), n) in jobs.iter().zip(nodes) {
        acc.add(&n?, *w)?;
    }
    acc.finish()
}

/// Delay profile of averaged second-order correlations after IRF
/// convolution, normalized by the uncorrelated product.
pub fn second_order_from(
    avg: &AveragedCorrelations,
    sigma_irf_ns: f64,
    settings: &PipelineSettings,
) -> Result<Normalized<DelayProfile>> {
    let missing = || Error::invalid("correlations", "second-order terms are missing");
    let g2 = noise::convolve_irf(avg.g2.as_ref().ok_or_else(missing)?, sigma_irf_ns);
    let g11 = noise::convolve_irf(avg.g1g1.as_ref().ok_or_else(missing)?, sigma_irf_ns);
    normalize_delay(&project_delay(&g2)?, &project_delay(&g11)?, settings.g2_window)
}

/// Normalized delay profile of the second-order correlation.
pub fn second_order_profile(
    config: &SystemConfig,
    direction: Direction,
    settings: &PipelineSettings,
    sigma_irf_ns: f64,
    mode: AveragingMode,
) -> Result<Normalized<DelayProfile>> {
    let avg = averaged_second_order(config, direction, settings, mode)?;
    second_order_from(&avg, sigma_irf_ns, settings)
}
