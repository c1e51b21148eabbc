//! Output-field operators, exact multi-time normally-ordered correlation
//! functions by quantum regression, and CW transmission.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{self, Generator, PropagatorSettings};
use crate::linalg;
use crate::model::{self, guided_operators, OperatorMatrix, PulseShape, SystemConfig};
use crate::noise::{diffusion_nodes, DiffusionDescriptor};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "fwd" => Ok(Direction::Forward),
            "backward" | "bwd" => Ok(Direction::Backward),
            other => Err(Error::invalid("direction", format!("unknown direction `{other}`"))),
        }
    }
}

/// Output field `a(t) = scalar(t) I + matrix`.
#[derive(Clone, Debug)]
pub struct OutputOperator {
    pub direction: Direction,
    /// Complex amplitude of the displacement at the envelope peak.
    pub amplitude: C64,
    pub drive: model::DriveParams,
    pub matrix: OperatorMatrix,
}

impl OutputOperator {
    #[inline]
    pub fn scalar(&self, t: f64) -> C64 {
        if self.amplitude == ZERO {
            ZERO
        } else {
            self.amplitude * self.drive.profile(t)
        }
    }

    pub fn at(&self, t: f64) -> OperatorMatrix {
        let d = self.matrix.nrows();
        &self.matrix + &Array2::<C64>::eye(d).mapv(|x| x * self.scalar(t))
    }
}

/// Output operator with the backward background at phase `theta`.
pub fn output_operator_with_phase(config: &SystemConfig, direction: Direction, theta: f64) -> OutputOperator {
    let (fwd, bwd) = guided_operators(&config.emitters);
    let mi = C64::new(0.0, -1.0);
    let (amplitude, matrix) = match direction {
        Direction::Forward => (C64::from(config.drive.alpha0), fwd.mapv(|x| x * mi)),
        Direction::Backward => (
            C64::from_polar(config.detection.background_amp_backward, theta),
            bwd.mapv(|x| x * mi),
        ),
    };
    OutputOperator {
        direction,
        amplitude,
        drive: config.drive.clone(),
        matrix,
    }
}

pub fn output_operator(config: &SystemConfig, direction: Direction) -> OutputOperator {
    output_operator_with_phase(config, direction, 0.0)
}

/// Background phases averaged over for a direction (a single zero phase
/// when there is no background).
pub fn background_phases(config: &SystemConfig, direction: Direction) -> Vec<f64> {
    let k = config.detection.background_phase_nodes.max(1);
    if direction == Direction::Forward || config.detection.background_amp_backward == 0.0 || k == 1 {
        return vec![0.0];
    }
    (0..k).map(|i| std::f64::consts::TAU * i as f64 / k as f64).collect()
}

/// Metadata attached to exported grids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub config_hash: String,
    pub diffusion: String,
}

/// Order-`n` correlation values on a uniform time axis shared by every
/// dimension. A banded grid stores only tuples whose pairwise index
/// differences are at most `band`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationGrid {
    order: usize,
    pub direction: Direction,
    axis: Vec<f64>,
    band: Option<usize>,
    values: Vec<f64>,
    pub metadata: GridMetadata,
}

impl CorrelationGrid {
    pub fn new(order: usize, direction: Direction, axis: Vec<f64>, band: Option<usize>) -> Self {
        let l = axis.len();
        let band = band.filter(|b| *b + 1 < l && order > 1);
        let size = match band {
            None => l.pow(order as u32),
            Some(b) => l * (2 * b + 1).pow(order as u32 - 1),
        };
        CorrelationGrid {
            order,
            direction,
            axis,
            band,
            values: vec![0.0; size],
            metadata: GridMetadata::default(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn band(&self) -> Option<usize> {
        self.band
    }

    pub fn dt(&self) -> f64 {
        if self.axis.len() > 1 {
            self.axis[1] - self.axis[0]
        } else {
            1.0
        }
    }

    /// Raw storage, including zero-filled cells outside the band.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Storage position of an index tuple, `None` outside the axis or band.
    #[inline]
    pub fn position(&self, idx: &[usize]) -> Option<usize> {
        let l = self.axis.len();
        if idx.len() != self.order || idx.iter().any(|i| *i >= l) {
            return None;
        }
        match self.band {
            None => Some(idx.iter().fold(0, |acc, i| acc * l + i)),
            Some(b) => {
                let lo = *idx.iter().min().unwrap();
                let hi = *idx.iter().max().unwrap();
                if hi - lo > b {
                    return None;
                }
                let w = 2 * b + 1;
                let i0 = idx[0];
                let mut pos = i0;
                for i in &idx[1..] {
                    pos = pos * w + (i + b - i0);
                }
                Some(pos)
            }
        }
    }

    pub fn get(&self, idx: &[usize]) -> Option<f64> {
        self.position(idx).map(|p| self.values[p])
    }

    /// Sets a value; returns false if the tuple is not stored.
    pub fn set(&mut self, idx: &[usize], v: f64) -> bool {
        match self.position(idx) {
            Some(p) => {
                self.values[p] = v;
                true
            }
            None => false,
        }
    }

    /// All stored index tuples with their values, in storage order.
    pub fn indexed_values(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let l = self.axis.len();
        let n = self.order;
        let (w, off) = match self.band {
            None => (l, 0usize),
            Some(b) => (2 * b + 1, b),
        };
        let per = w.pow(n as u32 - 1);
        (0..self.values.len()).filter_map(move |pos| {
            let i0 = pos / per;
            let mut rest = pos % per;
            let mut idx = vec![0usize; n];
            idx[0] = i0;
            for k in (1..n).rev() {
                let d = rest % w;
                rest /= w;
                let i = if self.band.is_some() {
                    (i0 + d).checked_sub(off)?
                } else {
                    d
                };
                if i >= l {
                    return None;
                }
                idx[k] = i;
            }
            if let Some(b) = self.band {
                let lo = *idx.iter().min().unwrap();
                let hi = *idx.iter().max().unwrap();
                if hi - lo > b {
                    return None;
                }
            }
            Some((idx, self.values[pos]))
        })
    }

    /// A grid of the same layout filled from `f(index tuple)`.
    pub fn map_indexed(&self, mut f: impl FnMut(&[usize]) -> f64) -> CorrelationGrid {
        let mut out = CorrelationGrid {
            values: vec![0.0; self.values.len()],
            ..self.clone_empty()
        };
        for (idx, _) in self.indexed_values() {
            let p = self.position(&idx).unwrap();
            out.values[p] = f(&idx);
        }
        out
    }

    fn clone_empty(&self) -> CorrelationGrid {
        CorrelationGrid {
            order: self.order,
            direction: self.direction,
            axis: self.axis.clone(),
            band: self.band,
            values: Vec::new(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn same_layout(&self, other: &CorrelationGrid) -> Result<()> {
        if self.order != other.order || self.band != other.band || self.axis.len() != other.axis.len() {
            return Err(Error::GridMismatch(format!(
                "order {}/{}, band {:?}/{:?}, axis length {}/{}",
                self.order,
                other.order,
                self.band,
                other.band,
                self.axis.len(),
                other.axis.len()
            )));
        }
        if self
            .axis
            .iter()
            .zip(&other.axis)
            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs()))
        {
            return Err(Error::GridMismatch("axis values differ".into()));
        }
        Ok(())
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, other: &CorrelationGrid, w: f64) -> Result<()> {
        self.same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += w * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// Sum over stored cells (out-of-band storage is always zero).
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// CSV with one row per stored index tuple: `t1_ns,...,tn_ns,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut header: Vec<String> = (1..=self.order).map(|k| format!("t{k}_ns")).collect();
        header.push("value".into());
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (idx, v) in self.indexed_values() {
            for i in &idx {
                write!(w, "{},", self.axis[*i]).map_err(io)?;
            }
            writeln!(w, "{v:e}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Dense binary container; cells outside the band are written as NaN.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let axes = vec![self.axis.clone(); self.order];
        let l = self.axis.len();
        let mut dense = vec![f64::NAN; l.pow(self.order as u32)];
        for (idx, v) in self.indexed_values() {
            dense[idx.iter().fold(0, |acc, i| acc * l + i)] = v;
        }
        write_binary_grid(path, &axes, &dense)
    }

    /// Reads a dense grid written by [`CorrelationGrid::write_binary`].
    pub fn read_binary(path: &Path, direction: Direction) -> Result<CorrelationGrid> {
        let (axes, values) = read_binary_grid(path)?;
        if axes.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Format {
                path: path.display().to_string(),
                line: 0,
                reason: "axes differ between dimensions".into(),
            });
        }
        let axis = axes.first().cloned().unwrap_or_default();
        let mut g = CorrelationGrid::new(axes.len(), direction, axis, None);
        g.values = values;
        Ok(g)
    }
}

const GRID_MAGIC: &[u8; 8] = b"WGQGRID1";

/// Binary layout: magic `WGQGRID1`, `u32` order, `order` x `u64` axis
/// lengths, the axis values, then the values in row-major order. All
/// numbers little-endian; floats are `f64`.
pub fn write_binary_grid(path: &Path, axes: &[Vec<f64>], values: &[f64]) -> Result<()> {
    let expected: usize = axes.iter().map(Vec::len).product();
    if expected != values.len() {
        return Err(Error::DimensionMismatch {
            expected,
            found: values.len(),
        });
    }
    let mut buf = Vec::with_capacity(16 + 8 * (values.len() + axes.iter().map(Vec::len).sum::<usize>()));
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&(axes.len() as u32).to_le_bytes());
    for a in axes {
        buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
    }
    for a in axes {
        for v in a {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_binary_grid(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.display().to_string(),
        line: 0,
        reason: reason.into(),
    };
    if bytes.len() < 12 || &bytes[..8] != GRID_MAGIC {
        return Err(bad("missing grid magic"));
    }
    let mut at = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated grid file"))?;
        at += n;
        Ok(s)
    };
    let order = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut lens = Vec::with_capacity(order);
    for _ in 0..order {
        lens.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    let mut f64s = |n: usize| -> Result<Vec<f64>> {
        let raw = take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let mut axes = Vec::with_capacity(order);
    for l in &lens {
        axes.push(f64s(*l)?);
    }
    let values = f64s(lens.iter().product())?;
    Ok((axes, values))
}

/// Grid request for [`correlation_gn`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub axis: Vec<f64>,
    pub band: Option<usize>,
    /// Largest number of ordered-sector evaluations allowed.
    pub budget: u64,
}

pub const DEFAULT_BUDGET: u64 = 200_000_000;

impl GridSpec {
    pub fn dense(axis: Vec<f64>) -> Self {
        GridSpec {
            axis,
            band: None,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn banded(axis: Vec<f64>, band: usize) -> Self {
        GridSpec {
            axis,
            band: Some(band),
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    /// Number of ordered tuples `i1 <= ... <= in` that will be evaluated.
    pub fn ordered_count(&self, n: usize) -> u64 {
        let l = self.axis.len() as u64;
        let binom = |a: u64, k: u64| -> u64 {
            let mut r: u128 = 1;
            for i in 0..k {
                r = r * (a - i) as u128 / (i + 1) as u128;
            }
            r.min(u64::MAX as u128) as u64
        };
        if n == 0 || l == 0 {
            return 0;
        }
        match self.band {
            None => binom(l + n as u64 - 1, n as u64),
            Some(b) => (0..l)
                .map(|i0| {
                    let r = (b as u64).min(l - 1 - i0);
                    binom(r + n as u64 - 1, n as u64 - 1)
                })
                .sum(),
        }
    }
}

/// Sparse `A = s I + M` sandwich, `out = A X A^+`, on row-major vectors.
struct Sandwich {
    d: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl Sandwich {
    fn new(m: &OperatorMatrix) -> Self {
        let entries = m
            .indexed_iter()
            .filter(|(_, v)| v.norm_sqr() != 0.0)
            .map(|((i, k), v)| (i, k, *v))
            .collect();
        Sandwich { d: m.nrows(), entries }
    }

    fn apply(&self, s: C64, x: &[C64], tmp: &mut [C64], out: &mut [C64]) {
        let d = self.d;
        for (t, v) in tmp.iter_mut().zip(x) {
            *t = s * v;
        }
        for &(i, k, m) in &self.entries {
            for j in 0..d {
                tmp[i * d + j] += m * x[k * d + j];
            }
        }
        let sc = s.conj();
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            *o = sc * t;
        }
        // out[i][j] += tmp[i][l] conj(M[j][l])
        for &(j, l, m) in &self.entries {
            let mc = m.conj();
            for i in 0..d {
                out[i * d + j] += tmp[i * d + l] * mc;
            }
        }
    }
}

fn settings_for(_config: &SystemConfig) -> PropagatorSettings {
    PropagatorSettings::default()
}

/// `rho(t)` (vectorized) at every axis point, starting from the ground state
/// at the configured window start.
pub(crate) fn state_series(
    gen: &Generator,
    config: &SystemConfig,
    axis: &[f64],
) -> Result<Vec<Vec<C64>>> {
    let t_start = config.time_grid.t_min;
    if axis.first().is_some_and(|t| *t < t_start - 1e-12) {
        return Err(Error::invalid("grid", "axis starts before time_grid.t_min_ns"));
    }
    if axis.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("grid", "axis must be sorted"));
    }
    let mut x = linalg::vec_of(&model::ground_state(config.m()));
    let mut st = gen.stepper(settings_for(config));
    let mut t = t_start;
    let mut out = Vec::with_capacity(axis.len());
    for &ti in axis {
        if ti > t {
            st.advance(&mut x, t, ti)?;
            t = ti;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// `G1(t) = <a^+(t) a(t)>` for one output operator.
pub fn intensity_g1_node(
    config: &SystemConfig,
    offsets: &[f64],
    output: &OutputOperator,
    axis: &[f64],
) -> Result<Vec<f64>> {
    Ok(equal_time_moments(config, offsets, output, axis, 1)?.remove(0))
}

/// `G1(t)` on `axis`, averaged over background phases.
pub fn intensity_g1(
    config: &SystemConfig,
    offsets: &[f64],
    direction: Direction,
    axis: &[f64],
) -> Result<Vec<f64>> {
    let phases = background_phases(config, direction);
    let mut acc = vec![0.0; axis.len()];
    for th in &phases {
        let out = output_operator_with_phase(config, direction, *th);
        for (a, v) in acc.iter_mut().zip(intensity_g1_node(config, offsets, &out, axis)?) {
            *a += v / phases.len() as f64;
        }
    }
    Ok(acc)
}

/// Equal-time moments `G^(k)(t,...,t) = Tr(A^k rho A^+k)` for `k = 1..=n_max`,
/// indexed `[k - 1][time]`.
pub fn equal_time_moments(
    config: &SystemConfig,
    offsets: &[f64],
    output: &OutputOperator,
    axis: &[f64],
    n_max: usize,
) -> Result<Vec<Vec<f64>>> {
    let gen = Generator::new(config, offsets)?;
    let states = state_series(&gen, config, axis)?;
    let d = config.dim();
    let sw = Sandwich::new(&output.matrix);
    let mut out = vec![vec![0.0; axis.len()]; n_max];
    let mut x = vec![ZERO; d * d];
    let mut y = vec![ZERO; d * d];
    let mut tmp = vec![ZERO; d * d];
    for (ti, (t, rho)) in axis.iter().zip(&states).enumerate() {
        let s = output.scalar(*t);
        x.copy_from_slice(rho);
        for row in out.iter_mut() {
            sw.apply(s, &x, &mut tmp, &mut y);
            row[ti] = linalg::vec_trace(&y, d).re;
            std::mem::swap(&mut x, &mut y);
        }
    }
    Ok(out)
}

struct Chain<'a> {
    gen: &'a Generator,
    sandwich: &'a Sandwich,
    axis: &'a [f64],
    scalars: &'a [C64],
    n: usize,
    d: usize,
    limit: usize,
    settings: PropagatorSettings,
}

impl Chain<'_> {
    fn descend(
        &self,
        level: usize,
        x: &[C64],
        idx: &mut [usize],
        out: &mut Vec<([usize; 5], f64)>,
    ) -> Result<()> {
        if level + 1 == self.n {
            let mut key = [0usize; 5];
            key[..self.n].copy_from_slice(idx);
            out.push((key, linalg::vec_trace(x, self.d).re));
            return Ok(());
        }
        let start = idx[level];
        let mut y = x.to_vec();
        let mut next = vec![ZERO; x.len()];
        let mut tmp = vec![ZERO; x.len()];
        let mut st = self.gen.stepper(self.settings);
        for j in start..=self.limit {
            if j > start {
                st.advance(&mut y, self.axis[j - 1], self.axis[j])?;
            }
            self.sandwich.apply(self.scalars[j], &y, &mut tmp, &mut next);
            idx[level + 1] = j;
            self.descend(level + 1, &next, idx, out)?;
        }
        Ok(())
    }
}

fn permutations_into(key: &[usize], grid: &mut CorrelationGrid, v: f64) {
    let n = key.len();
    let mut p: Vec<usize> = (0..n).collect();
    // Heap's algorithm over positions; duplicates are harmless.
    let mut c = vec![0usize; n];
    let mut idx: Vec<usize> = key.to_vec();
    grid.set(&idx, v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            for (k, q) in p.iter().enumerate() {
                idx[k] = key[*q];
            }
            grid.set(&idx, v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Unnormalized `G^(n)` for one output operator (fixed background phase).
pub fn correlation_gn_node(
    config: &SystemConfig,
    offsets: &[f64],
    output: &OutputOperator,
    spec: &GridSpec,
    n: usize,
) -> Result<CorrelationGrid> {
    if n == 0 || n > 5 {
        return Err(Error::invalid("n", "order must lie in 1..=5"));
    }
    let requested = spec.ordered_count(n);
    if requested > spec.budget {
        return Err(Error::BudgetExceeded {
            requested,
            budget: spec.budget,
        });
    }
    let gen = Generator::new(config, offsets)?;
    let states = state_series(&gen, config, &spec.axis)?;
    let sandwich = Sandwich::new(&output.matrix);
    let scalars: Vec<C64> = spec.axis.iter().map(|t| output.scalar(*t)).collect();
    let d = config.dim();
    let l = spec.axis.len();
    let settings = settings_for(config);
    let chunks: Vec<Result<Vec<([usize; 5], f64)>>> = (0..l)
        .into_par_iter()
        .map(|i0| {
            let chain = Chain {
                gen: &gen,
                sandwich: &sandwich,
                axis: &spec.axis,
                scalars: &scalars,
                n,
                d,
                limit: spec.band.map_or(l - 1, |b| (i0 + b).min(l - 1)),
                settings,
            };
            let mut x = vec![ZERO; d * d];
            let mut tmp = vec![ZERO; d * d];
            sandwich.apply(scalars[i0], &states[i0], &mut tmp, &mut x);
            let mut idx = vec![0usize; n];
            idx[0] = i0;
            let mut out = Vec::new();
            chain.descend(0, &x, &mut idx, &mut out)?;
            Ok(out)
        })
        .collect();
    let mut grid = CorrelationGrid::new(n, output.direction, spec.axis.clone(), spec.band);
    for chunk in chunks {
        for (key, v) in chunk? {
            permutations_into(&key[..n], &mut grid, v);
        }
    }
    Ok(grid)
}

/// Unnormalized `G^(n)` on the requested grid, averaged over background
/// phases. Values for every index tuple are filled from the ordered sector.
pub fn correlation_gn(
    config: &SystemConfig,
    offsets: &[f64],
    direction: Direction,
    spec: &GridSpec,
    n: usize,
) -> Result<CorrelationGrid> {
    let phases = background_phases(config, direction);
    let mut acc: Option<CorrelationGrid> = None;
    for th in &phases {
        let out = output_operator_with_phase(config, direction, *th);
        let g = correlation_gn_node(config, offsets, &out, spec, n)?;
        match acc.as_mut() {
            None => acc = Some(g),
            Some(a) => a.add_scaled(&g, 1.0)?,
        }
    }
    let mut g = acc.expect("at least one phase");
    g.scale(1.0 / phases.len() as f64);
    g.metadata.diffusion = "none".into();
    Ok(g)
}

pub fn g2(config: &SystemConfig, offsets: &[f64], direction: Direction, spec: &GridSpec) -> Result<CorrelationGrid> {
    correlation_gn(config, offsets, direction, spec, 2)
}

pub fn g3(config: &SystemConfig, offsets: &[f64], direction: Direction, spec: &GridSpec) -> Result<CorrelationGrid> {
    correlation_gn(config, offsets, direction, spec, 3)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmissionSolver {
    /// Full steady state of the `2^m` dimensional problem.
    Exact,
    /// Steady state restricted to the ground and single-excitation states,
    /// exact to leading order in the drive.
    WeakDrive,
    /// Exact up to two emitters, weak-drive beyond.
    #[default]
    Auto,
}

/// Coherent `|<a_f>|^2 / alpha^2` and total `<a_f^+ a_f> / alpha^2`
/// forward transmission for fixed offsets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub coherent: f64,
    pub total: f64,
}

pub fn transmission_point(config: &SystemConfig, offsets: &[f64], solver: TransmissionSolver) -> Result<Transmission> {
    if config.drive.shape != PulseShape::Cw {
        return Err(Error::invalid("drive.shape", "transmission requires CW driving"));
    }
    let alpha = config.drive.alpha0;
    if alpha <= 0.0 {
        return Err(Error::invalid("drive.alpha0", "transmission needs a nonzero drive"));
    }
    let m = config.m();
    let solver = match solver {
        TransmissionSolver::Auto if m <= 2 => TransmissionSolver::Exact,
        TransmissionSolver::Auto => TransmissionSolver::WeakDrive,
        s => s,
    };
    let (fwd, _) = guided_operators(&config.emitters);
    let (rho, c) = match solver {
        TransmissionSolver::Exact => {
            let gen = Generator::new(config, offsets)?;
            (evolve::steady_state_of(&gen)?, fwd)
        }
        _ => {
            let keep: Vec<usize> = (0..config.dim())
                .filter(|i| m - (*i as u32).count_ones() as usize <= 1)
                .collect();
            let project = |a: &OperatorMatrix| -> OperatorMatrix {
                Array2::from_shape_fn((keep.len(), keep.len()), |(r, s)| a[[keep[r], keep[s]]])
            };
            let parts = model::hamiltonian_parts(&config.emitters, offsets)?;
            let jumps: Vec<OperatorMatrix> = model::jump_operators(&config.emitters)
                .iter()
                .map(|j| project(&j.op))
                .collect();
            let gen = Generator::from_operators(
                &project(&parts.fixed),
                &project(&parts.drive),
                &jumps,
                &config.drive,
                f64::INFINITY,
            );
            (evolve::steady_state_of(&gen)?, project(&fwd))
        }
    };
    let x = linalg::vec_of(&rho);
    let mean_c = linalg::trace_product(&c, &x);
    let cdc = model::dagger(&c).dot(&c);
    let n_c = linalg::trace_product(&cdc, &x).re;
    // a = alpha - i c
    let mean_a = C64::from(alpha) - C64::new(0.0, 1.0) * mean_c;
    let total = alpha * alpha + 2.0 * (alpha * (C64::new(0.0, -1.0) * mean_c)).re + n_c;
    Ok(Transmission {
        coherent: mean_a.norm_sqr() / (alpha * alpha),
        total: total / (alpha * alpha),
    })
}

/// Transmission versus a common laser detuning shift (rad/ns), averaged over
/// the diffusion ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionScan {
    pub delta: Vec<f64>,
    pub coherent: Vec<f64>,
    pub total: Vec<f64>,
}

impl TransmissionScan {
    pub fn min_total(&self) -> f64 {
        self.total.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("delta_ghz,transmission,coherent_transmission\n");
        for i in 0..self.delta.len() {
            s.push_str(&format!(
                "{},{:e},{:e}\n",
                self.delta[i] / std::f64::consts::TAU,
                self.total[i],
                self.coherent[i]
            ));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn transmission_scan(
    config: &SystemConfig,
    delta_grid: &[f64],
    diffusion: &DiffusionDescriptor,
) -> Result<TransmissionScan> {
    transmission_scan_with(config, delta_grid, diffusion, TransmissionSolver::Auto)
}

pub fn transmission_scan_with(
    config: &SystemConfig,
    delta_grid: &[f64],
    diffusion: &DiffusionDescriptor,
    solver: TransmissionSolver,
) -> Result<TransmissionScan> {
    let nodes = diffusion_nodes(&config.emitters, &diffusion.scheme);
    let points: Vec<Result<Transmission>> = delta_grid
        .par_iter()
        .map(|delta| {
            let mut acc = Transmission {
                coherent: 0.0,
                total: 0.0,
            };
            for node in &nodes {
                let offsets: Vec<f64> = node.offsets.iter().map(|o| o + delta).collect();
                let t = transmission_point(config, &offsets, solver)?;
                acc.coherent += node.weight * t.coherent;
                acc.total += node.weight * t.total;
            }
            Ok(acc)
        })
        .collect();
    let mut scan = TransmissionScan {
        delta: delta_grid.to_vec(),
        coherent: Vec::with_capacity(delta_grid.len()),
        total: Vec::with_capacity(delta_grid.len()),
    };
    for p in points {
        let p = p?;
        scan.coherent.push(p.coherent);
        scan.total.push(p.total);
    }
    Ok(scan)
}
