//! Time propagation of the master equation and the CW steady state.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, add_kron, Csr};
use crate::model::{
    self, dagger, hamiltonian_parts, jump_operators, DriveParams, EmitterParams, OperatorMatrix,
    PulseShape, SystemConfig,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Density operator (or, inside the regression chains, any operator that is
/// propagated by the same linear map).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    data: Array2<C64>,
}

impl DensityOperator {
    pub fn new(data: Array2<C64>) -> Result<Self> {
        let d = data.nrows();
        if data.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: data.ncols(),
            });
        }
        if !d.is_power_of_two() {
            return Err(Error::invalid("dim", format!("{d} is not a power of two")));
        }
        Ok(DensityOperator { data })
    }

    pub fn ground(m: usize) -> Self {
        DensityOperator {
            data: model::ground_state(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<C64> {
        self.data
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut e: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                e = e.max((self.data[[i, j]] - self.data[[j, i]].conj()).norm());
            }
        }
        e
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::hermitian_eigenvalues(&self.data)[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedRk4,
    AdaptiveRk45,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSettings {
    pub method: Method,
    pub dt_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for PropagatorSettings {
    fn default() -> Self {
        PropagatorSettings {
            method: Method::FixedRk4,
            dt_max: 0.02,
            rel_tol: 1e-8,
            abs_tol: 1e-12,
        }
    }
}

impl PropagatorSettings {
    pub fn rk45(rel_tol: f64, abs_tol: f64) -> Self {
        PropagatorSettings {
            method: Method::AdaptiveRk45,
            rel_tol,
            abs_tol,
            ..Default::default()
        }
    }

    pub fn with_dt_max(mut self, dt_max: f64) -> Self {
        self.dt_max = dt_max;
        self
    }
}

/// Vectorized generator `L(t) = fixed + alpha(t) * drive` acting on
/// row-major `vec(rho)`.
#[derive(Clone, Debug)]
pub struct Generator {
    dim: usize,
    fixed: Csr,
    drive: Csr,
    envelope: DriveParams,
    auto_dt: f64,
}

fn lindblad_superoperator(h: &OperatorMatrix, jumps: &[OperatorMatrix]) -> Csr {
    let d = h.nrows();
    let id: Array2<C64> = Array2::eye(d);
    let mut k = h.clone();
    for c in jumps {
        let cdc = dagger(c).dot(c);
        k.scaled_add(C64::new(0.0, -0.5), &cdc);
    }
    let mut acc = BTreeMap::new();
    // -i K rho + i rho K^+  ->  -i (K (x) I) + i (I (x) conj(K))
    add_kron(&mut acc, -I, &k, &id);
    add_kron(&mut acc, I, &id, &k.mapv(|x| x.conj()));
    for c in jumps {
        add_kron(&mut acc, C64::new(1.0, 0.0), c, &c.mapv(|x| x.conj()));
    }
    Csr::from_entries(d * d, acc)
}

impl Generator {
    pub fn new(config: &SystemConfig, offsets: &[f64]) -> Result<Self> {
        Self::from_parts(&config.emitters, &config.drive, offsets, config.fastest_rate())
    }

    pub fn from_parts(
        emitters: &[EmitterParams],
        drive: &DriveParams,
        offsets: &[f64],
        fastest_rate: f64,
    ) -> Result<Self> {
        let parts = hamiltonian_parts(emitters, offsets)?;
        let jumps: Vec<_> = jump_operators(emitters).into_iter().map(|j| j.op).collect();
        let fixed = lindblad_superoperator(&parts.fixed, &jumps);
        let drive_sup = lindblad_superoperator(&parts.drive, &[]);
        let auto_dt = if fastest_rate > 0.0 {
            1.0 / (20.0 * fastest_rate)
        } else {
            f64::INFINITY
        };
        Ok(Generator {
            dim: parts.fixed.nrows(),
            fixed,
            drive: drive_sup,
            envelope: drive.clone(),
            auto_dt,
        })
    }

    /// Generator from explicit operators; used for truncated bases where the
    /// dimension is not a power of two.
    pub fn from_operators(
        fixed: &OperatorMatrix,
        drive_h: &OperatorMatrix,
        jumps: &[OperatorMatrix],
        drive: &DriveParams,
        auto_dt: f64,
    ) -> Self {
        Generator {
            dim: fixed.nrows(),
            fixed: lindblad_superoperator(fixed, jumps),
            drive: lindblad_superoperator(drive_h, &[]),
            envelope: drive.clone(),
            auto_dt,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drive(&self) -> &DriveParams {
        &self.envelope
    }

    /// Largest RK4 step allowed by the stability rule for this generator.
    pub fn auto_dt(&self) -> f64 {
        self.auto_dt
    }

    #[inline]
    pub fn apply(&self, t: f64, x: &[C64], out: &mut [C64]) {
        self.fixed.mul_into(x, out);
        let a = self.envelope.envelope(t);
        if a != 0.0 {
            self.drive.mul_add_into(C64::from(a), x, out);
        }
    }

    /// Dense superoperator at time `t`.
    pub fn dense_at(&self, t: f64) -> Array2<C64> {
        let a = self.envelope.envelope(t);
        self.fixed.to_dense() + self.drive.to_dense().mapv(|x| x * a)
    }

    pub fn stepper(&self, settings: PropagatorSettings) -> Stepper<'_> {
        let n = self.dim * self.dim;
        Stepper {
            gen: self,
            settings,
            k: vec![vec![ZERO; n]; 7],
            tmp: vec![ZERO; n],
            y5: vec![ZERO; n],
        }
    }
}

/// Reusable integrator state for one generator.
pub struct Stepper<'a> {
    gen: &'a Generator,
    settings: PropagatorSettings,
    k: Vec<Vec<C64>>,
    tmp: Vec<C64>,
    y5: Vec<C64>,
}

impl<'a> Stepper<'a> {
    pub fn generator(&self) -> &Generator {
        self.gen
    }

    /// Propagates `x` in place from `t0` to `t1`.
    pub fn advance(&mut self, x: &mut [C64], t0: f64, t1: f64) -> Result<()> {
        if t1 < t0 {
            return Err(Error::invalid("t1", "must not precede t0"));
        }
        if t1 == t0 {
            return Ok(());
        }
        match self.settings.method {
            Method::FixedRk4 => {
                let h_max = self.settings.dt_max.min(self.gen.auto_dt);
                let n = ((t1 - t0) / h_max - 1e-9).ceil().max(1.0) as usize;
                let h = (t1 - t0) / n as f64;
                for s in 0..n {
                    self.rk4_step(x, t0 + s as f64 * h, h);
                }
                Ok(())
            }
            Method::AdaptiveRk45 => self.dopri(x, t0, t1),
        }
    }

    /// One classical RK4 step of size `h` starting at `t`.
    pub fn rk4_step(&mut self, x: &mut [C64], t: f64, h: f64) {
        let n = x.len();
        let (k1, rest) = self.k.split_at_mut(1);
        let (k2, rest) = rest.split_at_mut(1);
        let (k3, rest) = rest.split_at_mut(1);
        let k4 = &mut rest[0];
        let (k1, k2, k3) = (&mut k1[0], &mut k2[0], &mut k3[0]);
        let g = self.gen;
        g.apply(t, x, k1);
        for i in 0..n {
            self.tmp[i] = x[i] + k1[i] * (0.5 * h);
        }
        g.apply(t + 0.5 * h, &self.tmp, k2);
        for i in 0..n {
            self.tmp[i] = x[i] + k2[i] * (0.5 * h);
        }
        g.apply(t + 0.5 * h, &self.tmp, k3);
        for i in 0..n {
            self.tmp[i] = x[i] + k3[i] * h;
        }
        g.apply(t + h, &self.tmp, k4);
        let w = h / 6.0;
        for i in 0..n {
            x[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
        }
    }

    fn dopri(&mut self, x: &mut [C64], t0: f64, t1: f64) -> Result<()> {
        const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            35.0 / 384.0 - 5179.0 / 57600.0,
            0.0,
            500.0 / 1113.0 - 7571.0 / 16695.0,
            125.0 / 192.0 - 393.0 / 640.0,
            -2187.0 / 6784.0 + 92097.0 / 339200.0,
            11.0 / 84.0 - 187.0 / 2100.0,
            -1.0 / 40.0,
        ];
        let n = x.len();
        let span = t1 - t0;
        let mut t = t0;
        let mut h = self.settings.dt_max.min(span).min(self.gen.auto_dt * 4.0);
        let h_min = (span * 1e-12).max(1e-15);
        while t < t1 {
            if t + h > t1 {
                h = t1 - t;
            }
            self.gen.apply(t, x, &mut self.k[0]);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = x[i];
                    for (j, a) in A[s].iter().enumerate().take(s) {
                        if *a != 0.0 {
                            acc += self.k[j][i] * (h * a);
                        }
                    }
                    self.tmp[i] = acc;
                }
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                self.gen.apply(t + C[s] * h, &self.tmp, &mut tail[0]);
                if s == 6 {
                    self.y5.copy_from_slice(&self.tmp);
                }
            }
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = ZERO;
                for (j, ej) in E.iter().enumerate() {
                    if *ej != 0.0 {
                        e += self.k[j][i] * (h * ej);
                    }
                }
                let scale =
                    self.settings.abs_tol + self.settings.rel_tol * x[i].norm().max(self.y5[i].norm());
                err = err.max(e.norm() / scale);
            }
            if err <= 1.0 {
                t += h;
                x.copy_from_slice(&self.y5);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * fac).min(self.settings.dt_max);
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < h_min {
                    return Err(Error::StepUnderflow { t, step: h });
                }
            }
        }
        Ok(())
    }
}

/// `rho(t1)` under the master equation, starting from `rho` at `t0`. The map
/// is linear, so arbitrary (non-Hermitian, non-normalized) inputs are
/// propagated consistently.
pub fn propagate(
    rho: &DensityOperator,
    config: &SystemConfig,
    offsets: &[f64],
    t0: f64,
    t1: f64,
    settings: PropagatorSettings,
) -> Result<DensityOperator> {
    let gen = Generator::new(config, offsets)?;
    if rho.dim() != gen.dim() {
        return Err(Error::DimensionMismatch {
            expected: gen.dim(),
            found: rho.dim(),
        });
    }
    let mut x = linalg::vec_of(rho.as_array());
    gen.stepper(settings).advance(&mut x, t0, t1)?;
    DensityOperator::new(linalg::mat_of(&x, gen.dim()))
}

/// Stationary state of the CW-driven master equation.
pub fn steady_state(config: &SystemConfig, offsets: &[f64]) -> Result<DensityOperator> {
    if config.drive.shape != PulseShape::Cw {
        return Err(Error::invalid("drive.shape", "steady state requires CW driving"));
    }
    let gen = Generator::new(config, offsets)?;
    DensityOperator::new(steady_state_of(&gen)?)
}

/// Null vector of the generator at `t = 0` with unit trace, as a matrix.
pub(crate) fn steady_state_of(gen: &Generator) -> Result<Array2<C64>> {
    let d = gen.dim();
    let n = d * d;
    let l = gen.dense_at(0.0);
    let mut a = l.clone();
    for c in 0..n {
        a[[0, c]] = ZERO;
    }
    for i in 0..d {
        a[[0, i * d + i]] = C64::new(1.0, 0.0);
    }
    let mut b = vec![ZERO; n];
    b[0] = C64::new(1.0, 0.0);
    let x = linalg::solve_dense(&a, &b)?;
    let residual = l
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&x).map(|(u, v)| u * v).sum::<C64>().norm())
        .fold(0.0, f64::max);
    let tolerance = 1e-10;
    if residual > tolerance {
        return Err(Error::SteadyStateResidual {
            residual,
            tolerance,
        });
    }
    // Symmetrize away the rounding-level anti-Hermitian part.
    let m = linalg::mat_of(&x, d);
    Ok((&m + &dagger(&m)).mapv(|v| v * 0.5))
}

pub fn expectation(rho: &DensityOperator, op: &OperatorMatrix) -> Result<C64> {
    if op.dim() != (rho.dim(), rho.dim()) {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: op.nrows(),
        });
    }
    Ok(linalg::trace_product(op, &linalg::vec_of(rho.as_array())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{embed_operator, local, DriveParams, EmitterParams, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TAU: f64 = std::f64::consts::TAU;

    fn cfg(emitters: Vec<EmitterParams>, drive: DriveParams) -> SystemConfig {
        SystemConfig::new(emitters, drive, TimeGrid::new(-5.0, 5.0, 0.032))
    }

    fn excited(m: usize) -> DensityOperator {
        let d = 1 << m;
        let mut a = Array2::zeros((d, d));
        a[[0, 0]] = C64::new(1.0, 0.0);
        DensityOperator::new(a).unwrap()
    }

    fn random_state(d: usize, seed: u64) -> DensityOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((d, d), |_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let rho = a.dot(&dagger(&a));
        let tr = rho.diag().sum();
        DensityOperator::new(rho.mapv(|x| x / tr)).unwrap()
    }

    #[test]
    fn exponential_decay_of_excited_state() {
        let e = EmitterParams::ideal(0.388 * TAU, 0.95);
        let c = cfg(vec![e], DriveParams::cw(0.0));
        let out = propagate(&excited(1), &c, &[0.0], 0.0, 1.0, PropagatorSettings::default()).unwrap();
        let expect = (-TAU * 0.388f64).exp();
        assert!((out.as_array()[[0, 0]].re - expect).abs() < 1e-6);
        assert!((expect - 0.0873).abs() < 1e-4);
    }

    #[test]
    fn zero_generator_is_identity() {
        let mut e = EmitterParams::ideal(1.0, 1.0);
        e.gamma_total = 0.0;
        let c = SystemConfig::new(vec![e], DriveParams::cw(0.0), TimeGrid::new(0.0, 1.0, 0.1));
        let rho = random_state(2, 3);
        let out = propagate(&rho, &c, &[0.0], 0.0, 2.5, PropagatorSettings::default()).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn semigroup_composition() {
        let mut a = EmitterParams::ideal(0.388 * TAU, 0.95);
        let mut b = EmitterParams::ideal(0.345 * TAU, 0.85);
        a.gamma_d = 0.09 * TAU;
        b.delta = -0.2 * TAU;
        b.phi = 0.75 * std::f64::consts::PI;
        let c = cfg(vec![a, b], DriveParams::gaussian(1.0, 1.0));
        let rho = random_state(4, 11);
        let s = PropagatorSettings::rk45(1e-11, 1e-13);
        let direct = propagate(&rho, &c, &[0.0, 0.0], -1.0, 1.3, s).unwrap();
        let mid = propagate(&rho, &c, &[0.0, 0.0], -1.0, 0.2, s).unwrap();
        let composed = propagate(&mid, &c, &[0.0, 0.0], 0.2, 1.3, s).unwrap();
        let diff = direct
            .as_array()
            .iter()
            .zip(composed.as_array().iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn trace_preserved_over_pulse() {
        let mut a = EmitterParams::ideal(0.388 * TAU, 0.95);
        a.gamma_d = 0.09 * TAU;
        let b = a.clone();
        let c = cfg(vec![a, b], DriveParams::gaussian(1.5, 1.0));
        let gen = Generator::new(&c, &[0.0, 0.0]).unwrap();
        let mut x = linalg::vec_of(&model::ground_state(2));
        let mut st = gen.stepper(PropagatorSettings::default());
        let mut t = -5.0;
        while t < 5.0 {
            st.advance(&mut x, t, t + 0.25).unwrap();
            t += 0.25;
            let rho = DensityOperator::new(linalg::mat_of(&x, 4)).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-8);
            assert!(rho.min_eigenvalue() > -1e-7);
            assert!(rho.hermiticity_error() < 1e-10);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let mut e = EmitterParams::ideal(0.388 * TAU, 0.95);
        e.delta = 0.3 * TAU;
        let c = cfg(vec![e], DriveParams::gaussian(1.2, 0.5));
        let rho = DensityOperator::ground(1);
        let reference = propagate(&rho, &c, &[0.0], -2.0, 2.0, PropagatorSettings::rk45(1e-13, 1e-15).with_dt_max(0.01))
            .unwrap();
        let err = |dt: f64| {
            let mut gen = Generator::new(&c, &[0.0]).unwrap();
            gen.auto_dt = f64::INFINITY;
            let mut x = linalg::vec_of(rho.as_array());
            gen.stepper(PropagatorSettings::default().with_dt_max(dt))
                .advance(&mut x, -2.0, 2.0)
                .unwrap();
            x.iter()
                .zip(reference.as_array().iter())
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 8.0 && ratio < 32.0, "ratio {ratio}");
    }

    #[test]
    fn coherence_decay_sets_dephasing_convention() {
        let mut e = EmitterParams::ideal(1.1, 1.0);
        e.gamma_d = 0.4;
        let c = cfg(vec![e], DriveParams::cw(0.0));
        let rho = DensityOperator::new(Array2::from_elem((2, 2), C64::new(0.5, 0.0))).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let out = propagate(&rho, &c, &[0.0], 0.0, t, PropagatorSettings::default()).unwrap();
            let expect = 0.5 * (-(0.55 + 0.4) * t).exp();
            assert!((out.as_array()[[0, 1]].norm() - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn undriven_steady_state_is_ground() {
        let e = EmitterParams::ideal(1.0, 0.9);
        let c = cfg(vec![e.clone(), e], DriveParams::cw(0.0));
        let ss = steady_state(&c, &[0.0, 0.0]).unwrap();
        let g = model::ground_state(2);
        for (a, b) in ss.as_array().iter().zip(g.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn weak_drive_coherence_matches_perturbation_theory() {
        // d<sm>/dt = (i Delta - gamma_perp) <sm> - i (Omega/2) (-<sz>), <sz> ~ -1.
        let gamma = 0.388 * TAU;
        let mut e = EmitterParams::ideal(gamma, 0.95);
        e.gamma_d = 0.01 * TAU;
        e.delta = 0.2 * TAU;
        let alpha = 0.02;
        let c = cfg(vec![e.clone()], DriveParams::cw(alpha));
        let ss = steady_state(&c, &[0.0]).unwrap();
        let rabi = (2.0 * e.beta * e.gamma_total).sqrt() * alpha;
        let gp = e.gamma_total / 2.0 + e.gamma_d;
        let expect = C64::new(0.0, -rabi / 2.0) / C64::new(gp, -e.delta);
        // <sm> = Tr(sm rho) = rho[e][g] in the (|e>,|g>) basis.
        let sm = embed_operator(1, 0, &local::sigma_minus()).unwrap();
        let got = expectation(&ss, &sm).unwrap();
        assert!((got - expect).norm() < 5.0 * (rabi / gp).powi(3), "{got} vs {expect}");
        assert!(ss.as_array().diag().iter().all(|p| p.re >= 0.0));
    }

    #[test]
    fn steady_state_requires_cw() {
        let c = cfg(vec![EmitterParams::ideal(1.0, 1.0)], DriveParams::gaussian(0.1, 1.0));
        assert!(steady_state(&c, &[0.0]).is_err());
    }

    #[test]
    fn expectation_values() {
        let n = embed_operator(1, 0, &local::excited_projector()).unwrap();
        assert_eq!(expectation(&DensityOperator::ground(1), &n).unwrap(), ZERO);
        assert_eq!(expectation(&excited(1), &n).unwrap(), C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((4, 4), |_| C64::new(rng.gen(), rng.gen()));
        let herm = &a + &dagger(&a);
        let v = expectation(&random_state(4, 9), &herm).unwrap();
        assert!(v.im.abs() <= 1e-12);
        assert!(expectation(&excited(1), &herm).is_err());
    }
}
