//! Physical model of `m` two-level emitters side-coupled to a bidirectional
//! waveguide.
//!
//! Conventions used throughout the crate:
//!
//! * rates are angular (rad/ns), times in ns;
//! * the local basis is `(|e>, |g>)`, so `sigma_z = diag(1, -1)` and the
//!   lowering operator is `|g><e|`;
//! * emitter 0 is the most significant qubit in the Kronecker product, so
//!   the collective ground state `|g...g>` is the last basis vector;
//! * the frame rotates at the laser frequency and `delta = w_laser - w_emitter`.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::DiffusionDescriptor;

pub type OperatorMatrix = Array2<C64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// Total decay rate Gamma (rad/ns).
    pub gamma_total: f64,
    /// Fraction of `gamma_total` emitted into the guided mode.
    pub beta: f64,
    /// Pure dephasing rate; coherences decay at `gamma_total / 2 + gamma_d`.
    pub gamma_d: f64,
    /// Laser-emitter detuning (rad/ns).
    pub delta: f64,
    /// Standard deviation of the static spectral-diffusion offset (rad/ns).
    pub sigma_sd: f64,
    /// Propagation phase of the guided mode at the emitter position (rad).
    pub phi: f64,
}

impl EmitterParams {
    /// Resonant emitter with no dephasing, no diffusion, at phase zero.
    pub fn ideal(gamma_total: f64, beta: f64) -> Self {
        EmitterParams {
            gamma_total,
            beta,
            gamma_d: 0.0,
            delta: 0.0,
            sigma_sd: 0.0,
            phi: 0.0,
        }
    }

    pub(crate) fn violations(&self, path: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.gamma_total > 0.0 && self.gamma_total.is_finite()) {
            out.push((format!("{path}.gamma_total"), "must be > 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            out.push((format!("{path}.beta"), "must lie in [0, 1]".to_string()));
        }
        if !(self.gamma_d >= 0.0) {
            out.push((format!("{path}.gamma_d"), "must be >= 0".to_string()));
        }
        if !(self.sigma_sd >= 0.0) {
            out.push((format!("{path}.sigma_sd"), "must be >= 0".to_string()));
        }
        if !self.delta.is_finite() || !self.phi.is_finite() {
            out.push((format!("{path}"), "delta and phi must be finite".to_string()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Gaussian,
    Cw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub shape: PulseShape,
    /// Peak input-field amplitude in sqrt(photons/ns).
    pub alpha0: f64,
    /// Standard deviation of the Gaussian *intensity* profile (ns).
    pub sigma_pulse: f64,
    /// Time of the pulse peak (ns).
    pub t_center: f64,
    /// Repetition period of the pulse train (ns).
    pub rep_period: f64,
}

impl DriveParams {
    pub fn cw(alpha0: f64) -> Self {
        DriveParams {
            shape: PulseShape::Cw,
            alpha0,
            sigma_pulse: 1.0,
            t_center: 0.0,
            rep_period: 20.0,
        }
    }

    pub fn gaussian(alpha0: f64, sigma_pulse: f64) -> Self {
        DriveParams {
            shape: PulseShape::Gaussian,
            alpha0,
            sigma_pulse,
            t_center: 0.0,
            rep_period: 20.0,
        }
    }

    /// Real input amplitude alpha(t); `|alpha(t)|^2` is the photon flux.
    #[inline]
    pub fn envelope(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Cw => self.alpha0,
            PulseShape::Gaussian => {
                let x = t - self.t_center;
                self.alpha0 * (-x * x / (4.0 * self.sigma_pulse * self.sigma_pulse)).exp()
            }
        }
    }

    /// Envelope relative to its peak value (1 for CW).
    #[inline]
    pub fn profile(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Cw => 1.0,
            PulseShape::Gaussian => {
                let x = t - self.t_center;
                (-x * x / (4.0 * self.sigma_pulse * self.sigma_pulse)).exp()
            }
        }
    }

    pub(crate) fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.shape == PulseShape::Gaussian && !(self.sigma_pulse > 0.0) {
            out.push(("drive.sigma_ns".into(), "must be > 0 for a gaussian pulse".into()));
        }
        if !(self.rep_period > 0.0) {
            out.push(("drive.rep_period_ns".into(), "must be > 0".into()));
        }
        if !(self.alpha0 >= 0.0) {
            out.push(("drive.alpha0".into(), "must be >= 0".into()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Gaussian timing jitter (ps).
    pub sigma_irf_ps: f64,
    pub n_channels: usize,
    pub split_probs: Vec<f64>,
    pub bin_width_ps: f64,
    pub efficiency: f64,
    /// Coherent background amplitude in the backward output at the pulse
    /// peak, sqrt(photons/ns). It follows the drive profile in time.
    pub background_amp_backward: f64,
    /// Number of uniformly spaced background phases averaged over (slow
    /// phase drift between scattered laser light and the guided field).
    /// One node means a fixed, real background amplitude.
    pub background_phase_nodes: usize,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            sigma_irf_ps: 0.0,
            n_channels: 3,
            split_probs: vec![1.0 / 3.0; 3],
            bin_width_ps: 32.0,
            efficiency: 1.0,
            background_amp_backward: 0.0,
            background_phase_nodes: 8,
        }
    }
}

impl DetectionParams {
    pub(crate) fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.n_channels == 0 || self.n_channels > 3 {
            out.push(("detection.n_channels".into(), "must be 1, 2 or 3".into()));
        }
        if self.split_probs.len() != self.n_channels {
            out.push((
                "detection.split_probs".into(),
                format!("expected {} entries", self.n_channels),
            ));
        }
        let sum: f64 = self.split_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_probs.iter().any(|p| *p < 0.0) {
            out.push(("detection.split_probs".into(), "must be nonnegative and sum to 1".into()));
        }
        if !(self.sigma_irf_ps >= 0.0) {
            out.push(("detection.sigma_irf_ps".into(), "must be >= 0".into()));
        }
        if !(self.bin_width_ps > 0.0) {
            out.push(("detection.bin_width_ps".into(), "must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            out.push(("detection.efficiency".into(), "must lie in [0, 1]".into()));
        }
        if !(self.background_amp_backward >= 0.0) {
            out.push(("detection.background_amp".into(), "must be >= 0".into()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, dt: f64) -> Self {
        TimeGrid { t_min, t_max, dt }
    }

    pub fn len(&self) -> usize {
        ((self.t_max - self.t_min) / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.t_min + i as f64 * self.dt)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub emitters: Vec<EmitterParams>,
    pub drive: DriveParams,
    pub detection: DetectionParams,
    pub time_grid: TimeGrid,
    pub diffusion: DiffusionDescriptor,
    pub seed: u64,
}

impl SystemConfig {
    /// Minimal configuration used by tests and examples: no detection
    /// imperfections, no diffusion.
    pub fn new(emitters: Vec<EmitterParams>, drive: DriveParams, time_grid: TimeGrid) -> Self {
        SystemConfig {
            emitters,
            drive,
            detection: DetectionParams::default(),
            time_grid,
            diffusion: DiffusionDescriptor::none(),
            seed: 0,
        }
    }

    pub fn m(&self) -> usize {
        self.emitters.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.emitters.len()
    }

    /// Every violated constraint as `(field path, reason)`.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (j, e) in self.emitters.iter().enumerate() {
            out.extend(e.violations(&format!("emitters[{j}]")));
        }
        out.extend(self.drive.violations());
        out.extend(self.detection.violations());
        if !(self.time_grid.t_min < self.time_grid.t_max) {
            out.push(("time_grid.t_max_ns".into(), "must exceed t_min_ns".into()));
        }
        if !(self.time_grid.dt > 0.0) {
            out.push(("time_grid.dt_ns".into(), "must be > 0".into()));
        }
        out.extend(self.diffusion.violations());
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((field, reason)) => Err(Error::InvalidParameter { field, reason }),
        }
    }

    /// Fastest rate in the problem (rad/ns), used to bound integrator steps.
    pub fn fastest_rate(&self) -> f64 {
        let c = coupling_matrices(&self.emitters);
        let mut r: f64 = 0.0;
        let mut gamma_sum = 0.0;
        for (j, e) in self.emitters.iter().enumerate() {
            r = r.max(e.gamma_total).max(e.delta.abs()).max(e.gamma_d);
            r = r.max(self.drive.alpha0 * (2.0 * e.beta * e.gamma_total).sqrt());
            gamma_sum += e.gamma_total;
            for k in 0..self.emitters.len() {
                r = r.max(c.j[[j, k]].abs());
            }
        }
        // Collective decay of the fully symmetric state can reach the sum of the
        // individual rates.
        r.max(gamma_sum)
    }
}

/// Coherent exchange (`j`) and collective decay (`gam`) matrices, rad/ns.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrices {
    pub j: Array2<f64>,
    pub gam: Array2<f64>,
}

pub fn coupling_matrices(emitters: &[EmitterParams]) -> CouplingMatrices {
    let m = emitters.len();
    let mut j = Array2::zeros((m, m));
    let mut gam = Array2::zeros((m, m));
    for a in 0..m {
        gam[[a, a]] = emitters[a].gamma_total;
        for b in 0..m {
            if a == b {
                continue;
            }
            let ea = &emitters[a];
            let eb = &emitters[b];
            let g = (ea.beta * ea.gamma_total * eb.beta * eb.gamma_total).sqrt();
            let phase = (ea.phi - eb.phi).abs();
            j[[a, b]] = 0.5 * g * phase.sin();
            gam[[a, b]] = g * phase.cos();
        }
    }
    CouplingMatrices { j, gam }
}

/// Single-emitter operators in the `(|e>, |g>)` basis.
pub mod local {
    use super::*;

    pub fn sigma_minus() -> Array2<C64> {
        let mut a = Array2::zeros((2, 2));
        a[[1, 0]] = ONE;
        a
    }

    pub fn sigma_plus() -> Array2<C64> {
        let mut a = Array2::zeros((2, 2));
        a[[0, 1]] = ONE;
        a
    }

    pub fn sigma_z() -> Array2<C64> {
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = ONE;
        a[[1, 1]] = -ONE;
        a
    }

    pub fn excited_projector() -> Array2<C64> {
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = ONE;
        a
    }
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = x * b[[k, l]];
                }
            }
        }
    }
    out
}

/// `I (x) ... (x) local (x) ... (x) I` with `local` in slot `j` (slot 0 most
/// significant).
pub fn embed_operator(m: usize, j: usize, local: &Array2<C64>) -> Result<OperatorMatrix> {
    if j >= m {
        return Err(Error::IndexOutOfRange { index: j, count: m });
    }
    if local.dim() != (2, 2) {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: local.nrows(),
        });
    }
    let id: Array2<C64> = Array2::eye(2);
    let mut out: Array2<C64> = Array2::eye(1);
    for slot in 0..m {
        out = if slot == j { kron(&out, local) } else { kron(&out, &id) };
    }
    Ok(out)
}

/// Index of the collective ground state `|g...g>`.
pub fn ground_index(m: usize) -> usize {
    (1usize << m) - 1
}

/// Pure-state density operator of the collective ground state.
pub fn ground_state(m: usize) -> Array2<C64> {
    let d = 1usize << m;
    let mut rho = Array2::zeros((d, d));
    rho[[d - 1, d - 1]] = ONE;
    rho
}

/// Lowering operators for every emitter, built once per configuration.
pub(crate) fn lowering_operators(m: usize) -> Vec<Array2<C64>> {
    let sm = local::sigma_minus();
    (0..m)
        .map(|j| embed_operator(m, j, &sm).expect("slot within range"))
        .collect()
}

pub(crate) fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|x| x.conj())
}

/// Time-independent pieces of the Hamiltonian, `H(t) = fixed + alpha(t) * drive`.
#[derive(Clone, Debug)]
pub struct HamiltonianParts {
    pub fixed: OperatorMatrix,
    /// Drive term per unit input amplitude.
    pub drive: OperatorMatrix,
}

pub fn hamiltonian_parts(emitters: &[EmitterParams], offsets: &[f64]) -> Result<HamiltonianParts> {
    let m = emitters.len();
    if offsets.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: offsets.len(),
        });
    }
    let d = 1usize << m;
    let sm = lowering_operators(m);
    let sp: Vec<_> = sm.iter().map(dagger).collect();
    let mut fixed = Array2::<C64>::zeros((d, d));
    let mut drive = Array2::<C64>::zeros((d, d));
    let c = coupling_matrices(emitters);
    for (j, e) in emitters.iter().enumerate() {
        let n_j = sp[j].dot(&sm[j]);
        fixed.scaled_add(C64::from(-(e.delta + offsets[j])), &n_j);
        let g = (e.beta * e.gamma_total / 2.0).sqrt();
        let ph = C64::from_polar(1.0, e.phi);
        drive.scaled_add(g * ph, &sp[j]);
        drive.scaled_add(g * ph.conj(), &sm[j]);
        for k in (j + 1)..m {
            let jjk = c.j[[j, k]];
            if jjk != 0.0 {
                let hop = sp[j].dot(&sm[k]) + sp[k].dot(&sm[j]);
                fixed.scaled_add(C64::from(jjk), &hop);
            }
        }
    }
    Ok(HamiltonianParts { fixed, drive })
}

pub fn hamiltonian(config: &SystemConfig, offsets: &[f64], t: f64) -> Result<OperatorMatrix> {
    let parts = hamiltonian_parts(&config.emitters, offsets)?;
    Ok(parts.fixed + parts.drive.mapv(|x| x * config.drive.envelope(t)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Forward,
    Backward,
    Loss(usize),
    Dephase(usize),
}

impl Channel {
    pub fn is_guided(&self) -> bool {
        matches!(self, Channel::Forward | Channel::Backward)
    }
}

#[derive(Clone, Debug)]
pub struct JumpOperator {
    pub channel: Channel,
    pub op: OperatorMatrix,
}

/// Forward (`+phi`) and backward (`-phi`) guided-mode collapse operators
/// without any input displacement.
pub fn guided_operators(emitters: &[EmitterParams]) -> (OperatorMatrix, OperatorMatrix) {
    let m = emitters.len();
    let d = 1usize << m;
    let sm = lowering_operators(m);
    let mut fwd = Array2::zeros((d, d));
    let mut bwd = Array2::zeros((d, d));
    for (j, e) in emitters.iter().enumerate() {
        let g = (e.beta * e.gamma_total / 2.0).sqrt();
        fwd.scaled_add(g * C64::from_polar(1.0, -e.phi), &sm[j]);
        bwd.scaled_add(g * C64::from_polar(1.0, e.phi), &sm[j]);
    }
    (fwd, bwd)
}

/// Collapse operators of the master equation. Loss and dephasing channels
/// with zero rate are omitted.
pub fn jump_operators(emitters: &[EmitterParams]) -> Vec<JumpOperator> {
    let m = emitters.len();
    let sm = lowering_operators(m);
    let sz = local::sigma_z();
    let (fwd, bwd) = guided_operators(emitters);
    let mut out = vec![
        JumpOperator {
            channel: Channel::Forward,
            op: fwd,
        },
        JumpOperator {
            channel: Channel::Backward,
            op: bwd,
        },
    ];
    for (j, e) in emitters.iter().enumerate() {
        let loss = (1.0 - e.beta) * e.gamma_total;
        if loss > 0.0 {
            out.push(JumpOperator {
                channel: Channel::Loss(j),
                op: sm[j].mapv(|x| x * loss.sqrt()),
            });
        }
    }
    for (j, e) in emitters.iter().enumerate() {
        if e.gamma_d > 0.0 {
            let z = embed_operator(m, j, &sz).expect("slot within range");
            out.push(JumpOperator {
                channel: Channel::Dephase(j),
                op: z.mapv(|x| x * (e.gamma_d / 2.0).sqrt()),
            });
        }
    }
    out
}

/// Lindblad right-hand side `-i[H, rho] + sum_c (c rho c^+ - {c^+ c, rho}/2)`.
pub fn liouvillian_apply(
    h: &OperatorMatrix,
    jumps: &[JumpOperator],
    rho: &Array2<C64>,
) -> Result<Array2<C64>> {
    let d = rho.nrows();
    if rho.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: rho.ncols(),
        });
    }
    if h.dim() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: h.nrows(),
        });
    }
    let mut out = (h.dot(rho) - rho.dot(h)).mapv(|x| -I * x);
    for c in jumps {
        if c.op.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.op.nrows(),
            });
        }
        let cd = dagger(&c.op);
        let cdc = cd.dot(&c.op);
        out = out + c.op.dot(rho).dot(&cd) - (cdc.dot(rho) + rho.dot(&cdc)).mapv(|x| 0.5 * x);
    }
    Ok(out)
}

/// Mean photon number per emitter lifetime, `Omega^2 / (2 beta Gamma^2)` with
/// `Omega = sqrt(2 beta Gamma) alpha0`, i.e. `alpha0^2 / Gamma`.
pub fn mean_photon_number(alpha0: f64, beta: f64, gamma_total: f64) -> f64 {
    let rabi = (2.0 * beta * gamma_total).sqrt() * alpha0;
    if beta == 0.0 {
        return alpha0 * alpha0 / gamma_total;
    }
    rabi * rabi / (2.0 * beta * gamma_total * gamma_total)
}

/// Input amplitude giving `n` photons per lifetime of an emitter with
/// decay rate `gamma_total`.
pub fn alpha_for_mean_photon_number(n: f64, gamma_total: f64) -> f64 {
    (n * gamma_total).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    const TAU: f64 = std::f64::consts::TAU;

    #[test]
    fn embed_single_slot_is_identity_embedding() {
        let sm = local::sigma_minus();
        let e = embed_operator(1, 0, &sm).unwrap();
        assert_eq!(e, sm);
    }

    #[test]
    fn embed_sigma_z_in_second_slot() {
        let e = embed_operator(2, 1, &local::sigma_z()).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| e[[i, i]].re).collect();
        assert_eq!(diag, vec![1.0, -1.0, 1.0, -1.0]);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(e[[i, j]], ZERO);
                }
            }
        }
    }

    #[test]
    fn embed_lowering_raising_trace() {
        // Brute force: (sm (x) I)(sp (x) I) = |g><g| (x) I, trace 2.
        let a = embed_operator(2, 0, &local::sigma_minus()).unwrap();
        let b = embed_operator(2, 0, &local::sigma_plus()).unwrap();
        let mut tr = ZERO;
        for i in 0..4 {
            for k in 0..4 {
                tr += a[[i, k]] * b[[k, i]];
            }
        }
        assert!((tr - C64::from(2.0)).norm() < 1e-15);
    }

    #[test]
    fn embed_out_of_range() {
        assert!(matches!(
            embed_operator(2, 2, &local::sigma_z()),
            Err(Error::IndexOutOfRange { index: 2, count: 2 })
        ));
    }

    #[test]
    fn quadrature_phase_is_purely_dispersive() {
        let mut a = EmitterParams::ideal(1.3, 0.7);
        let mut b = EmitterParams::ideal(0.9, 0.4);
        a.phi = 0.0;
        b.phi = std::f64::consts::FRAC_PI_2;
        let c = coupling_matrices(&[a, b]);
        assert!(c.gam[[0, 1]].abs() < 1e-15);
        assert_eq!(c.gam[[0, 0]], 1.3);
        assert_eq!(c.j[[0, 0]], 0.0);
    }

    #[test]
    fn in_phase_identical_emitters_are_fully_dissipative() {
        let e = EmitterParams::ideal(2.0, 1.0);
        let c = coupling_matrices(&[e.clone(), e]);
        assert!((c.gam[[0, 1]] - 2.0).abs() < 1e-15);
        assert!(c.j[[0, 1]].abs() < 1e-15);
    }

    #[test]
    fn table_s1_coupling_values() {
        // beta*Gamma/2pi = 0.369 and 0.293 GHz at a phase lag of 0.8 pi.
        let mut a = EmitterParams::ideal(0.369 * TAU, 1.0);
        let mut b = EmitterParams::ideal(0.293 * TAU, 1.0);
        a.phi = 0.0;
        b.phi = 0.8 * std::f64::consts::PI;
        let c = coupling_matrices(&[a, b]);
        // Closed form evaluated independently.
        let g = (0.369f64 * 0.293).sqrt();
        let j_expect = 0.5 * g * (0.8 * std::f64::consts::PI).sin();
        let gam_expect = g * (0.8 * std::f64::consts::PI).cos();
        assert!((c.j[[0, 1]] / TAU - j_expect).abs() < 1e-12);
        assert!((c.gam[[1, 0]] / TAU - gam_expect).abs() < 1e-12);
        assert!((c.j[[0, 1]] / TAU - 0.097).abs() < 1e-3);
        assert!((c.gam[[0, 1]] / TAU + 0.266).abs() < 1e-3);
    }

    fn cfg(emitters: Vec<EmitterParams>, alpha0: f64) -> SystemConfig {
        SystemConfig::new(emitters, DriveParams::cw(alpha0), TimeGrid::new(0.0, 1.0, 0.01))
    }

    #[test]
    fn undriven_resonant_hamiltonian_vanishes() {
        let c = cfg(vec![EmitterParams::ideal(1.0, 1.0)], 0.0);
        let h = hamiltonian(&c, &[0.0], 0.3).unwrap();
        assert!(h.iter().all(|x| *x == ZERO));
    }

    #[test]
    fn detuned_single_emitter_eigenvalues() {
        let mut e = EmitterParams::ideal(1.0, 1.0);
        e.delta = TAU;
        let h = hamiltonian(&cfg(vec![e], 0.0), &[0.0], 0.0).unwrap();
        let mut ev = vec![h[[0, 0]].re, h[[1, 1]].re];
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + TAU).abs() < 1e-14 && ev[1].abs() < 1e-14);
    }

    #[test]
    fn single_excitation_block_splits_by_exchange() {
        let mut a = EmitterParams::ideal(0.388 * TAU, 0.95);
        let mut b = EmitterParams::ideal(0.345 * TAU, 0.85);
        a.phi = 0.0;
        b.phi = 0.8 * std::f64::consts::PI;
        let c = cfg(vec![a.clone(), b.clone()], 0.0);
        let h = hamiltonian(&c, &[0.0, 0.0], 0.0).unwrap();
        // Basis: 0=ee, 1=eg, 2=ge, 3=gg. Single-excitation block {1, 2}.
        let blk = [[h[[1, 1]], h[[1, 2]]], [h[[2, 1]], h[[2, 2]]]];
        let tr = (blk[0][0] + blk[1][1]).re;
        let det = (blk[0][0] * blk[1][1] - blk[0][1] * blk[1][0]).re;
        let disc = (tr * tr / 4.0 - det).sqrt();
        let j = coupling_matrices(&[a, b]).j[[0, 1]];
        assert!((tr / 2.0 + disc - j.abs()).abs() < 1e-12);
        assert!((tr / 2.0 - disc + j.abs()).abs() < 1e-12);
        assert!(j > 0.0);
    }

    #[test]
    fn hamiltonian_offsets_length_checked() {
        let c = cfg(vec![EmitterParams::ideal(1.0, 1.0)], 0.1);
        assert!(hamiltonian(&c, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn single_emitter_channel_completeness() {
        let e = EmitterParams::ideal(1.7, 1.0);
        let jumps = jump_operators(&[e]);
        let mut sum = Array2::<C64>::zeros((2, 2));
        for j in jumps.iter().filter(|j| j.channel.is_guided()) {
            sum = sum + dagger(&j.op).dot(&j.op);
        }
        let expect = local::excited_projector().mapv(|x| x * 1.7);
        assert!(max_abs_diff(&sum, &expect) < 1e-14);
    }

    #[test]
    fn antiphase_pair_forward_operator_is_antisymmetric() {
        let mut a = EmitterParams::ideal(1.0, 0.9);
        let mut b = a.clone();
        a.phi = 0.0;
        b.phi = std::f64::consts::PI;
        let (fwd, _) = guided_operators(&[a, b]);
        let s1 = embed_operator(2, 0, &local::sigma_minus()).unwrap();
        let s2 = embed_operator(2, 1, &local::sigma_minus()).unwrap();
        let expect = (s1 - s2).mapv(|x| x * (0.9f64 / 2.0).sqrt());
        assert!(max_abs_diff(&fwd, &expect) < 1e-15);
    }

    #[test]
    fn loss_channel_rate() {
        let e = EmitterParams::ideal(2.0, 0.85);
        let jumps = jump_operators(&[e]);
        let loss = jumps.iter().find(|j| j.channel == Channel::Loss(0)).unwrap();
        let rate = dagger(&loss.op).dot(&loss.op)[[0, 0]].re;
        assert!((rate - 0.15 * 2.0).abs() < 1e-14);
    }

    #[test]
    fn maximally_mixed_state_is_stationary_without_jumps() {
        let mut e = EmitterParams::ideal(1.0, 1.0);
        e.delta = 0.7;
        let c = cfg(vec![e.clone(), e], 0.4);
        let h = hamiltonian(&c, &[0.1, -0.3], 0.0).unwrap();
        let rho = Array2::<C64>::eye(4).mapv(|x| x * 0.25);
        let d = liouvillian_apply(&h, &[], &rho).unwrap();
        assert!(d.iter().all(|x| x.norm() < 1e-15));
    }

    #[test]
    fn excited_state_decays_at_gamma() {
        let e = EmitterParams::ideal(1.9, 1.0);
        let c = cfg(vec![e.clone()], 0.0);
        let h = hamiltonian(&c, &[0.0], 0.0).unwrap();
        let mut rho = Array2::<C64>::zeros((2, 2));
        rho[[0, 0]] = ONE;
        let d = liouvillian_apply(&h, &jump_operators(&[e]), &rho).unwrap();
        assert!((d[[0, 0]].re + 1.9).abs() < 1e-14);
    }

    #[test]
    fn liouvillian_dimension_mismatch() {
        let h = Array2::<C64>::zeros((2, 2));
        let rho = Array2::<C64>::zeros((4, 4));
        assert!(liouvillian_apply(&h, &[], &rho).is_err());
    }

    #[test]
    fn photon_number_calibration() {
        let gamma: f64 = 2.4;
        // Omega = Gamma  =>  alpha0 = Gamma / sqrt(2 beta Gamma).
        let beta: f64 = 0.95;
        let alpha0 = gamma / (2.0 * beta * gamma).sqrt();
        assert!((mean_photon_number(alpha0, beta, gamma) - 1.0 / (2.0 * 0.95)).abs() < 1e-12);
        let a = alpha_for_mean_photon_number(0.1, gamma);
        assert!((mean_photon_number(a, 0.5, gamma) - 0.1).abs() < 1e-12);
        assert_eq!(mean_photon_number(0.0, 0.5, gamma), 0.0);
    }
}
