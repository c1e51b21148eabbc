//! Spectral-diffusion ensembles, the two averaging schemes, detector-jitter
//! convolution and rebinning.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::correlate::CorrelationGrid;
use crate::error::{Error, Result};
use crate::model::EmitterParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scheme {
    /// No sampling: a single node at zero offset.
    None,
    MonteCarlo { samples: usize, seed: u64 },
    GaussHermite { nodes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    /// Products of correlation factors formed per node, then averaged.
    WithinSample,
    /// Factors averaged first, products formed from the averages.
    AcrossSamples,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionDescriptor {
    pub scheme: Scheme,
    pub mode: AveragingMode,
}

impl DiffusionDescriptor {
    pub fn none() -> Self {
        DiffusionDescriptor {
            scheme: Scheme::None,
            mode: AveragingMode::WithinSample,
        }
    }

    pub fn gauss_hermite(nodes: usize) -> Self {
        DiffusionDescriptor {
            scheme: Scheme::GaussHermite { nodes },
            mode: AveragingMode::WithinSample,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        DiffusionDescriptor {
            scheme: Scheme::MonteCarlo { samples, seed },
            mode: AveragingMode::WithinSample,
        }
    }

    pub fn with_mode(mut self, mode: AveragingMode) -> Self {
        self.mode = mode;
        self
    }

    pub(crate) fn violations(&self) -> Vec<(String, String)> {
        match self.scheme {
            Scheme::MonteCarlo { samples: 0, .. } => {
                vec![("diffusion.samples".into(), "must be >= 1".into())]
            }
            Scheme::GaussHermite { nodes: 0 } => {
                vec![("diffusion.nodes".into(), "must be >= 1".into())]
            }
            _ => Vec::new(),
        }
    }

    pub fn describe(&self) -> String {
        let mode = match self.mode {
            AveragingMode::WithinSample => "within-sample",
            AveragingMode::AcrossSamples => "across-samples",
        };
        match self.scheme {
            Scheme::None => "none".to_string(),
            Scheme::MonteCarlo { samples, seed } => {
                format!("monte-carlo(samples={samples},seed={seed}),{mode}")
            }
            Scheme::GaussHermite { nodes } => format!("gauss-hermite(nodes={nodes}),{mode}"),
        }
    }
}

/// One member of a diffusion ensemble: per-emitter detuning offsets (rad/ns)
/// and its probability weight.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionNode {
    pub offsets: Vec<f64>,
    pub weight: f64,
}

/// Gauss-Hermite rule for the standard normal density (Golub-Welsch).
/// Weights sum to one.
pub fn gauss_hermite_rule(k: usize) -> (Vec<f64>, Vec<f64>) {
    if k <= 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jacobi = DMatrix::from_fn(k, k, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Exact symmetry about zero.
    for i in 0..k / 2 {
        let x = 0.5 * (pairs[k - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[k - 1 - i].1 + pairs[i].1);
        pairs[i] = (-x, w);
        pairs[k - 1 - i] = (x, w);
    }
    if k % 2 == 1 {
        pairs[k / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Ensemble of static detuning offsets, independent across emitters.
pub fn diffusion_nodes(emitters: &[EmitterParams], scheme: &Scheme) -> Vec<DiffusionNode> {
    let m = emitters.len();
    match *scheme {
        Scheme::None => vec![DiffusionNode {
            offsets: vec![0.0; m],
            weight: 1.0,
        }],
        Scheme::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
            let w = 1.0 / samples as f64;
            (0..samples)
                .map(|_| DiffusionNode {
                    offsets: emitters
                        .iter()
                        .map(|e| e.sigma_sd * std_normal.sample(&mut rng))
                        .collect(),
                    weight: w,
                })
                .collect()
        }
        Scheme::GaussHermite { nodes } => {
            let (x, w) = gauss_hermite_rule(nodes);
            let mut out = vec![DiffusionNode {
                offsets: Vec::with_capacity(m),
                weight: 1.0,
            }];
            for e in emitters {
                if e.sigma_sd == 0.0 {
                    for node in &mut out {
                        node.offsets.push(0.0);
                    }
                    continue;
                }
                let mut next = Vec::with_capacity(out.len() * x.len());
                for node in &out {
                    for (xi, wi) in x.iter().zip(&w) {
                        let mut offsets = node.offsets.clone();
                        offsets.push(e.sigma_sd * xi);
                        next.push(DiffusionNode {
                            offsets,
                            weight: node.weight * wi,
                        });
                    }
                }
                out = next;
            }
            out
        }
    }
}

/// Correlation factors computed for one ensemble member.
#[derive(Clone, Debug)]
pub struct NodeCorrelations {
    pub g1: Vec<f64>,
    pub g2: Option<CorrelationGrid>,
    pub g3: Option<CorrelationGrid>,
}

/// Ensemble-averaged correlations and the factor products used for
/// normalization and cumulants. `g2g1[k]` pairs the two-time factor with the
/// remaining time: `k = 0` is `G2(t1,t2) G1(t3)`, `k = 1` is
/// `G2(t1,t3) G1(t2)`, `k = 2` is `G2(t2,t3) G1(t1)`.
#[derive(Clone, Debug)]
pub struct AveragedCorrelations {
    pub mode: AveragingMode,
    pub g1: Vec<f64>,
    pub g2: Option<CorrelationGrid>,
    pub g1g1: Option<CorrelationGrid>,
    pub g3: Option<CorrelationGrid>,
    pub g2g1: Option<[CorrelationGrid; 3]>,
    pub g1g1g1: Option<CorrelationGrid>,
}

fn g1_pair(g1: &[f64], like: &CorrelationGrid) -> CorrelationGrid {
    like.map_indexed(|idx| g1[idx[0]] * g1[idx[1]])
}

fn g1_cube(g1: &[f64], like: &CorrelationGrid) -> CorrelationGrid {
    like.map_indexed(|idx| g1[idx[0]] * g1[idx[1]] * g1[idx[2]])
}

fn g2g1_terms(g1: &[f64], g2: &CorrelationGrid, like: &CorrelationGrid) -> Result<[CorrelationGrid; 3]> {
    let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let mut missing = false;
    let out = pairs.map(|(a, b, c)| {
        like.map_indexed(|idx| match g2.get(&[idx[a], idx[b]]) {
            Some(v) => v * g1[idx[c]],
            None => {
                missing = true;
                0.0
            }
        })
    });
    if missing {
        return Err(Error::GridMismatch(
            "second-order grid does not cover the third-order band".into(),
        ));
    }
    Ok(out)
}

fn check_node(first: &NodeCorrelations, node: &NodeCorrelations) -> Result<()> {
    if node.g1.len() != first.g1.len() {
        return Err(Error::GridMismatch("G1 lengths differ between nodes".into()));
    }
    for (a, b) in [(&first.g2, &node.g2), (&first.g3, &node.g3)] {
        match (a, b) {
            (Some(a), Some(b)) => a.same_layout(b)?,
            (None, None) => {}
            _ => return Err(Error::GridMismatch("nodes carry different orders".into())),
        }
    }
    Ok(())
}

/// Incremental ensemble average; nodes are folded in the order given.
#[derive(Clone, Debug)]
pub struct Averager {
    mode: AveragingMode,
    total: f64,
    first: Option<NodeCorrelations>,
    g1: Vec<f64>,
    g2: Option<CorrelationGrid>,
    g3: Option<CorrelationGrid>,
    g1g1: Option<CorrelationGrid>,
    g2g1: Option<[CorrelationGrid; 3]>,
    g1g1g1: Option<CorrelationGrid>,
}

impl Averager {
    pub fn new(mode: AveragingMode) -> Self {
        Averager {
            mode,
            total: 0.0,
            first: None,
            g1: Vec::new(),
            g2: None,
            g3: None,
            g1g1: None,
            g2g1: None,
            g1g1g1: None,
        }
    }

    pub fn add(&mut self, node: &NodeCorrelations, weight: f64) -> Result<()> {
        match &self.first {
            Some(first) => check_node(first, node)?,
            None => {
                self.first = Some(NodeCorrelations {
                    g1: node.g1.clone(),
                    g2: node.g2.as_ref().map(|g| g.map_indexed(|_| 0.0)),
                    g3: node.g3.as_ref().map(|g| g.map_indexed(|_| 0.0)),
                });
                self.g1 = vec![0.0; node.g1.len()];
                self.g2 = node.g2.as_ref().map(|g| g.map_indexed(|_| 0.0));
                self.g3 = node.g3.as_ref().map(|g| g.map_indexed(|_| 0.0));
                if self.mode == AveragingMode::WithinSample {
                    self.g1g1 = self.g2.clone();
                    self.g1g1g1 = self.g3.clone();
                    self.g2g1 = self
                        .g3
                        .as_ref()
                        .map(|g| [g.clone(), g.clone(), g.clone()]);
                }
            }
        }
        self.total += weight;
        for (acc, v) in self.g1.iter_mut().zip(&node.g1) {
            *acc += weight * v;
        }
        if let (Some(acc), Some(g)) = (self.g2.as_mut(), node.g2.as_ref()) {
            acc.add_scaled(g, weight)?;
        }
        if let (Some(acc), Some(g)) = (self.g3.as_mut(), node.g3.as_ref()) {
            acc.add_scaled(g, weight)?;
        }
        if self.mode == AveragingMode::WithinSample {
            if let (Some(acc), Some(g2)) = (self.g1g1.as_mut(), node.g2.as_ref()) {
                acc.add_scaled(&g1_pair(&node.g1, g2), weight)?;
            }
            if let Some(g3) = node.g3.as_ref() {
                if let Some(acc) = self.g1g1g1.as_mut() {
                    acc.add_scaled(&g1_cube(&node.g1, g3), weight)?;
                }
                if let (Some(acc), Some(g2)) = (self.g2g1.as_mut(), node.g2.as_ref()) {
                    let terms = g2g1_terms(&node.g1, g2, g3)?;
                    for (a, t) in acc.iter_mut().zip(terms.iter()) {
                        a.add_scaled(t, weight)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<AveragedCorrelations> {
        if self.first.is_none() || self.total <= 0.0 {
            return Err(Error::invalid("weights", "no nodes with positive weight"));
        }
        let s = 1.0 / self.total;
        self.g1.iter_mut().for_each(|v| *v *= s);
        for g in [&mut self.g2, &mut self.g3, &mut self.g1g1, &mut self.g1g1g1]
            .into_iter()
            .flatten()
        {
            g.scale(s);
        }
        if let Some(terms) = self.g2g1.as_mut() {
            terms.iter_mut().for_each(|g| g.scale(s));
        }
        if self.mode == AveragingMode::AcrossSamples {
            self.g1g1 = self.g2.as_ref().map(|g| g1_pair(&self.g1, g));
            self.g1g1g1 = self.g3.as_ref().map(|g| g1_cube(&self.g1, g));
            self.g2g1 = match (self.g2.as_ref(), self.g3.as_ref()) {
                (Some(g2), Some(g3)) => Some(g2g1_terms(&self.g1, g2, g3)?),
                _ => None,
            };
        }
        Ok(AveragedCorrelations {
            mode: self.mode,
            g1: self.g1,
            g2: self.g2,
            g1g1: self.g1g1,
            g3: self.g3,
            g2g1: self.g2g1,
            g1g1g1: self.g1g1g1,
        })
    }
}

fn average(mode: AveragingMode, nodes: &[NodeCorrelations], weights: &[f64]) -> Result<AveragedCorrelations> {
    if nodes.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            found: weights.len(),
        });
    }
    let mut acc = Averager::new(mode);
    for (n, w) in nodes.iter().zip(weights) {
        acc.add(n, *w)?;
    }
    acc.finish()
}

/// Products of factors formed per node, then weight-averaged.
pub fn average_within(nodes: &[NodeCorrelations], weights: &[f64]) -> Result<AveragedCorrelations> {
    average(AveragingMode::WithinSample, nodes, weights)
}

/// Factors averaged first; products formed from the averages.
pub fn average_across(nodes: &[NodeCorrelations], weights: &[f64]) -> Result<AveragedCorrelations> {
    average(AveragingMode::AcrossSamples, nodes, weights)
}

fn gaussian_kernel(sigma: f64, dt: f64) -> Vec<f64> {
    let r = (5.0 * sigma / dt).ceil() as i64;
    (-r..=r)
        .map(|s| {
            let x = s as f64 * dt;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Scatters every source sample over its valid neighbours with the Gaussian
/// weights renormalized to the targets that exist, so mass is conserved.
fn scatter_axis(
    n: usize,
    kernel: &[f64],
    mut value_at: impl FnMut(usize) -> f64,
    mut valid: impl FnMut(usize, i64) -> Option<usize>,
    mut deposit: impl FnMut(usize, f64),
) {
    let r = (kernel.len() / 2) as i64;
    for src in 0..n {
        let v = value_at(src);
        if v == 0.0 {
            continue;
        }
        let mut norm = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            if valid(src, k as i64 - r).is_some() {
                norm += w;
            }
        }
        for (k, w) in kernel.iter().enumerate() {
            if let Some(dst) = valid(src, k as i64 - r) {
                deposit(dst, v * w / norm);
            }
        }
    }
}

/// Gaussian convolution of a sampled series (spacing `dt`, width `sigma`).
pub fn convolve_series(series: &[f64], dt: f64, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return series.to_vec();
    }
    let kernel = gaussian_kernel(sigma, dt);
    let n = series.len();
    let mut out = vec![0.0; n];
    scatter_axis(
        n,
        &kernel,
        |i| series[i],
        |i, s| {
            let j = i as i64 + s;
            (j >= 0 && (j as usize) < n).then_some(j as usize)
        },
        |j, v| out[j] += v,
    );
    out
}

/// Independent Gaussian convolution along every time axis; `sigma_irf` in ns.
pub fn convolve_irf(grid: &CorrelationGrid, sigma_irf: f64) -> CorrelationGrid {
    if sigma_irf <= 0.0 {
        return grid.clone();
    }
    let kernel = gaussian_kernel(sigma_irf, grid.dt());
    let mut current = grid.clone();
    let mut idx = vec![0usize; grid.order()];
    for axis in 0..grid.order() {
        let mut next = current.map_indexed(|_| 0.0);
        let entries: Vec<(Vec<usize>, f64)> = current
            .indexed_values()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        scatter_axis(
            entries.len(),
            &kernel,
            |e| entries[e].1,
            |e, s| {
                idx.copy_from_slice(&entries[e].0);
                let j = idx[axis] as i64 + s;
                if j < 0 {
                    return None;
                }
                idx[axis] = j as usize;
                current.position(&idx)
            },
            |pos, v| next.values_mut()[pos] += v,
        );
        current = next;
    }
    current
}

/// Block sums of `factor` consecutive samples; axis values become block means.
pub fn rebin_series(axis: &[f64], series: &[f64], factor: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if factor < 1 {
        return Err(Error::invalid("factor", "must be >= 1"));
    }
    let n = series.len() / factor;
    if series.len() % factor != 0 {
        log::warn!("rebin drops {} trailing samples", series.len() % factor);
    }
    let a = (0..n)
        .map(|i| axis[i * factor..(i + 1) * factor].iter().sum::<f64>() / factor as f64)
        .collect();
    let v = (0..n)
        .map(|i| series[i * factor..(i + 1) * factor].iter().sum())
        .collect();
    Ok((a, v))
}

/// Block sums along every axis. A banded grid keeps only the coarse cells
/// whose fine cells all lie inside the original band.
pub fn rebin(grid: &CorrelationGrid, factor: usize) -> Result<CorrelationGrid> {
    if factor < 1 {
        return Err(Error::invalid("factor", "must be >= 1"));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (axis, _) = rebin_series(grid.axis(), &vec![0.0; grid.axis().len()], factor)?;
    let band = match grid.band() {
        None => None,
        Some(b) if b + 1 >= factor => Some((b + 1 - factor) / factor),
        Some(_) => return Err(Error::invalid("factor", "exceeds the grid band")),
    };
    let mut out = CorrelationGrid::new(grid.order(), grid.direction, axis, band);
    out.metadata = grid.metadata.clone();
    let n_new = out.axis().len();
    let mut coarse = vec![0usize; grid.order()];
    for (idx, v) in grid.indexed_values() {
        if v == 0.0 {
            continue;
        }
        for (c, i) in coarse.iter_mut().zip(&idx) {
            *c = i / factor;
        }
        if coarse.iter().any(|c| *c >= n_new) {
            continue;
        }
        if let Some(pos) = out.position(&coarse) {
            out.values_mut()[pos] += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::Direction;

    fn emitter(sd: f64) -> EmitterParams {
        let mut e = EmitterParams::ideal(2.0, 0.9);
        e.sigma_sd = sd;
        e
    }

    #[test]
    fn zero_width_collapses_to_single_node() {
        for scheme in [Scheme::GaussHermite { nodes: 7 }, Scheme::None] {
            let nodes = diffusion_nodes(&[emitter(0.0), emitter(0.0)], &scheme);
            assert_eq!(nodes, vec![DiffusionNode { offsets: vec![0.0, 0.0], weight: 1.0 }]);
        }
    }

    #[test]
    fn single_hermite_node_is_midpoint() {
        let nodes = diffusion_nodes(&[emitter(1.3)], &Scheme::GaussHermite { nodes: 1 });
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].offsets, vec![0.0]);
        assert_eq!(nodes[0].weight, 1.0);
    }

    #[test]
    fn hermite_moments() {
        let sd = 0.3 * std::f64::consts::TAU;
        let nodes = diffusion_nodes(&[emitter(sd)], &Scheme::GaussHermite { nodes: 7 });
        let m = |p: i32| nodes.iter().map(|n| n.weight * n.offsets[0].powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-12);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - sd * sd).abs() < 1e-12);
        // Degree 2k-1 = 13 exactness: E[x^4] = 3 sd^4, E[x^12] = 10395 sd^12.
        assert!((m(4) / sd.powi(4) - 3.0).abs() < 1e-10);
        assert!((m(12) / sd.powi(12) - 10395.0).abs() < 1e-6);
    }

    #[test]
    fn tensor_grid_for_two_emitters() {
        let nodes = diffusion_nodes(&[emitter(1.0), emitter(0.5)], &Scheme::GaussHermite { nodes: 7 });
        assert_eq!(nodes.len(), 49);
        let w: f64 = nodes.iter().map(|n| n.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
        let cross: f64 = nodes.iter().map(|n| n.weight * n.offsets[0] * n.offsets[1]).sum();
        assert!(cross.abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_draws_are_reproducible() {
        let e = [emitter(1.0), emitter(2.0)];
        let a = diffusion_nodes(&e, &Scheme::MonteCarlo { samples: 4000, seed: 9 });
        let b = diffusion_nodes(&e, &Scheme::MonteCarlo { samples: 4000, seed: 9 });
        assert_eq!(a, b);
        let var: f64 = a.iter().map(|n| n.weight * n.offsets[1].powi(2)).sum();
        assert!((var - 4.0).abs() < 0.3);
    }

    fn node(g1: f64) -> NodeCorrelations {
        let axis = vec![0.0, 1.0];
        let g2 = CorrelationGrid::new(2, Direction::Forward, axis.clone(), None).map_indexed(|_| g1 * g1);
        let g3 = CorrelationGrid::new(3, Direction::Forward, axis, None).map_indexed(|_| g1 * g1 * g1);
        NodeCorrelations {
            g1: vec![g1; 2],
            g2: Some(g2),
            g3: Some(g3),
        }
    }

    #[test]
    fn convexity_distinguishes_schemes() {
        let nodes = [node(1.0), node(3.0)];
        let within = average_within(&nodes, &[0.5, 0.5]).unwrap();
        let across = average_across(&nodes, &[0.5, 0.5]).unwrap();
        assert_eq!(within.g1g1g1.unwrap().get(&[0, 1, 0]), Some(14.0));
        assert_eq!(across.g1g1g1.unwrap().get(&[0, 1, 0]), Some(8.0));
        assert_eq!(within.g2g1.unwrap()[1].get(&[1, 1, 0]), Some(14.0));
    }

    #[test]
    fn single_node_is_identity_in_both_modes() {
        let n = node(2.0);
        for avg in [average_within(&[n.clone()], &[1.0]), average_across(&[n.clone()], &[1.0])] {
            let a = avg.unwrap();
            assert_eq!(a.g1, n.g1);
            assert_eq!(a.g3.as_ref().unwrap().values(), n.g3.as_ref().unwrap().values());
            assert_eq!(a.g1g1g1.unwrap().get(&[0, 0, 1]), Some(8.0));
        }
    }

    #[test]
    fn mismatched_nodes_are_rejected() {
        let mut b = node(1.0);
        b.g1.push(1.0);
        assert!(average_within(&[node(1.0), b], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn series_convolution_of_delta() {
        let dt = 0.008;
        let sigma = 0.083;
        let mut s = vec![0.0; 401];
        s[200] = 1.0;
        let c = convolve_series(&s, dt, sigma);
        let mass: f64 = c.iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let var: f64 = c.iter().enumerate().map(|(i, v)| v * ((i as f64 - 200.0) * dt).powi(2)).sum();
        assert!((var.sqrt() - sigma).abs() < 1e-3 * sigma);
        assert_eq!(convolve_series(&s, dt, 0.0), s);
    }

    #[test]
    fn boundary_delta_keeps_mass() {
        let mut s = vec![0.0; 50];
        s[0] = 2.0;
        let mass: f64 = convolve_series(&s, 0.032, 0.083).iter().sum();
        assert!((mass - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_convolution_preserves_mass_in_band() {
        let axis: Vec<f64> = (0..40).map(|i| i as f64 * 0.032).collect();
        let mut g = CorrelationGrid::new(3, Direction::Forward, axis, Some(8));
        g.set(&[20, 21, 22], 1.0);
        g.set(&[5, 5, 5], 0.5);
        let c = convolve_irf(&g, 0.083);
        assert!((c.sum() - 1.5).abs() < 1e-9);
        assert!(c.indexed_values().all(|(_, v)| v >= 0.0));
    }

    #[test]
    fn rebin_sums_blocks() {
        let axis: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let g = CorrelationGrid::new(2, Direction::Backward, axis, None)
            .map_indexed(|i| (i[0] * 8 + i[1]) as f64);
        let r = rebin(&g, 4).unwrap();
        assert_eq!(r.axis(), &[1.5, 5.5]);
        assert!((r.sum() - g.sum()).abs() < 1e-12);
        assert_eq!(r.get(&[0, 0]), Some((0..4).flat_map(|i| (0..4).map(move |j| (i * 8 + j) as f64)).sum()));
        assert_eq!(rebin(&g, 1).unwrap().values(), g.values());
        assert!(rebin(&g, 0).is_err());
    }

    #[test]
    fn banded_rebin_keeps_complete_cells() {
        let axis: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let g = CorrelationGrid::new(3, Direction::Forward, axis, Some(11)).map_indexed(|_| 1.0);
        let r = rebin(&g, 4).unwrap();
        assert_eq!(r.band(), Some(2));
        assert_eq!(r.get(&[3, 5, 4]), Some(64.0));
        assert_eq!(r.get(&[0, 3, 0]), None);
    }
}
