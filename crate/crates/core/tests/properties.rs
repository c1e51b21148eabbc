//! Property suites over randomly drawn small systems.

use std::f64::consts::TAU;

use ndarray::Array2;
use proptest::prelude::*;
use wgqed::analysis::{self, connected_component, jacobi_project, PipelineSettings};
use wgqed::correlate::{self, Direction, GridSpec};
use wgqed::evolve::{propagate, DensityOperator, PropagatorSettings};
use wgqed::model::{self, embed_operator, local, DriveParams, EmitterParams, SystemConfig, TimeGrid};
use wgqed::noise::{AveragingMode, DiffusionDescriptor};
use wgqed::C64;

fn emitter() -> impl Strategy<Value = EmitterParams> {
    (0.2f64..0.5, 0.5f64..1.0, 0.0f64..0.15, -0.3f64..0.3, 0.0f64..2.0).prop_map(|(g, beta, gd, delta, phi)| {
        EmitterParams {
            gamma_total: TAU * g,
            beta,
            gamma_d: TAU * gd,
            delta: TAU * delta,
            sigma_sd: 0.0,
            phi: phi * std::f64::consts::PI,
        }
    })
}

fn system(m: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = SystemConfig> {
    (prop::collection::vec(emitter(), m), 0.1f64..0.8, 0.5f64..1.5).prop_map(|(emitters, alpha, sigma)| {
        SystemConfig::new(emitters, DriveParams::gaussian(alpha, sigma), TimeGrid::new(-2.0, 2.0, 0.25))
    })
}

fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|x| x.conj())
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(12)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn coherent_passthrough_is_uncorrelated(mut sys in system(1..=2), decoupled_sd in 0.0f64..0.3) {
        for e in &mut sys.emitters {
            e.beta = 0.0;
            e.sigma_sd = TAU * decoupled_sd;
        }
        sys.diffusion = DiffusionDescriptor::gauss_hermite(3);
        let zd = analysis::zero_delay(&sys, Direction::Forward, 3, AveragingMode::WithinSample).unwrap();
        for n in 0..3 {
            prop_assert!((zd.g[n] - 1.0).abs() <= 1e-6, "g{} = {}", n + 1, zd.g[n]);
        }
        prop_assert!(zd.gc[2].abs() <= 1e-6);
        let settings = PipelineSettings { rebin: 1, band_ns: 1.0, window: (0.2, 0.2), ..Default::default() };
        let avg = analysis::averaged_third_order(&sys, Direction::Forward, &settings, &[AveragingMode::WithinSample]).unwrap();
        let maps = analysis::third_order_maps(&avg[0], 0.0, &settings).unwrap();
        prop_assert!((maps.g3.zero_delay - 1.0).abs() <= 1e-6);
        prop_assert!(maps.g3c.zero_delay.abs() <= 1e-6);
    }

    #[test]
    fn correlations_are_symmetric_in_their_arguments(sys in system(1..=2), picks in prop::collection::vec((0usize..9, 0usize..9, 0usize..9), 8)) {
        let axis = TimeGrid::new(-1.0, 1.0, 0.25).points();
        let g = correlate::g3(&sys, &vec![0.0; sys.m()], Direction::Forward, &GridSpec::dense(axis)).unwrap();
        for (i, j, k) in picks {
            let v = g.get(&[i, j, k]).unwrap();
            for p in [[i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]] {
                let w = g.get(&p).unwrap();
                prop_assert!((v - w).abs() <= 1e-12 * v.abs().max(1e-300), "{v} vs {w}");
            }
        }
    }

    #[test]
    fn propagation_preserves_trace(sys in system(1..=3), amps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8)) {
        let d = sys.dim();
        let psi: Vec<C64> = amps.iter().take(d).map(|(a, b)| C64::new(*a, *b)).collect();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        prop_assume!(norm > 1e-3);
        let rho = Array2::from_shape_fn((d, d), |(r, c)| psi[r] * psi[c].conj() / norm);
        let rho = DensityOperator::new(rho).unwrap();
        let out = propagate(&rho, &sys, &vec![0.0; sys.m()], -4.0, 4.0, PropagatorSettings::default()).unwrap();
        prop_assert!((out.trace() - 1.0).norm() <= 1e-8);
        prop_assert!(out.min_eigenvalue() >= -1e-7);
    }

    #[test]
    fn common_phase_shift_changes_nothing(sys in system(2..=2), shift in 0.0f64..TAU) {
        let mut moved = sys.clone();
        for e in &mut moved.emitters {
            e.phi += shift;
        }
        let axis = TimeGrid::new(-1.0, 1.0, 0.25).points();
        for dir in [Direction::Forward, Direction::Backward] {
            let a = correlate::g2(&sys, &[0.0, 0.0], dir, &GridSpec::dense(axis.clone())).unwrap();
            let b = correlate::g2(&moved, &[0.0, 0.0], dir, &GridSpec::dense(axis.clone())).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            let ia = correlate::intensity_g1(&sys, &[0.0, 0.0], dir, &axis).unwrap();
            let ib = correlate::intensity_g1(&moved, &[0.0, 0.0], dir, &axis).unwrap();
            for (x, y) in ia.iter().zip(&ib) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn cumulant_decomposition_is_exact(values in prop::collection::vec(0.0f64..10.0, 5 * 27)) {
        let axis = vec![0.0, 0.1, 0.2];
        let grid = |s: usize| {
            let mut g = correlate::CorrelationGrid::new(3, Direction::Forward, axis.clone(), None);
            g.values_mut().copy_from_slice(&values[s * 27..(s + 1) * 27]);
            g
        };
        let (g3, p0, p1, p2, cube) = (grid(0), grid(1), grid(2), grid(3), grid(4));
        let set = connected_component(&g3, [&p0, &p1, &p2], &cube).unwrap();
        for ((t, c), d) in set.g3.values().iter().zip(set.connected.values()).zip(set.disconnected.values()) {
            prop_assert_eq!(*d, t - c);
            prop_assert!((c + d - t).abs() <= 4.0 * f64::EPSILON * t.abs().max(c.abs()));
        }
        let total: f64 = g3.values().iter().sum();
        let projected = jacobi_project(&g3).unwrap().sum();
        prop_assert!((projected - total).abs() <= 1e-9 * total.abs());
    }

    #[test]
    fn averaging_modes_coincide_without_diffusion(mut sys in system(1..=2)) {
        sys.diffusion = DiffusionDescriptor::gauss_hermite(3);
        for e in &mut sys.emitters {
            e.sigma_sd = 0.0;
        }
        let within = analysis::zero_delay(&sys, Direction::Forward, 3, AveragingMode::WithinSample).unwrap();
        let across = analysis::zero_delay(&sys, Direction::Forward, 3, AveragingMode::AcrossSamples).unwrap();
        for (a, b) in within.g.iter().zip(&across.g) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let settings = PipelineSettings { rebin: 1, band_ns: 1.0, window: (0.2, 0.2), ..Default::default() };
        let modes = [AveragingMode::WithinSample, AveragingMode::AcrossSamples];
        let avg = analysis::averaged_third_order(&sys, Direction::Forward, &settings, &modes).unwrap();
        let (a, b) = (avg[0].g1g1g1.as_ref().unwrap(), avg[1].g1g1g1.as_ref().unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn guided_and_lost_channels_account_for_all_decay(emitters in prop::collection::vec(emitter(), 1..=3)) {
        let m = emitters.len();
        let d = 1 << m;
        let mut sum = Array2::<C64>::zeros((d, d));
        for j in model::jump_operators(&emitters) {
            if !matches!(j.channel, model::Channel::Dephase(_)) {
                sum = sum + dagger(&j.op).dot(&j.op);
            }
        }
        let gam = model::coupling_matrices(&emitters).gam;
        let mut expect = Array2::<C64>::zeros((d, d));
        for a in 0..m {
            for b in 0..m {
                let sp = embed_operator(m, a, &local::sigma_plus()).unwrap();
                let sm = embed_operator(m, b, &local::sigma_minus()).unwrap();
                let rate = if a == b { emitters[a].gamma_total } else { gam[[a, b]] };
                expect = expect + sp.dot(&sm).mapv(|x| x * rate);
            }
        }
        let err = (&sum - &expect).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn hamiltonian_is_hermitian(sys in system(1..=3), t in -3.0f64..3.0) {
        let h = model::hamiltonian(&sys, &vec![0.1; sys.m()], t).unwrap();
        let err = (&h - &dagger(&h)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12);
    }
}
