use proptest::prelude::*;

use raftsim::harness::config::{
    default_config, parse_config, ExchangeConfig, Geometry, InitialKind, PotentialName, RunConfig,
};
use raftsim::harness::experiments::{
    absorbing, continuous_dependence, kappa_refinement, large_d, simulate, steady,
};
use raftsim::Error;

fn small_disk() -> RunConfig {
    let mut c = default_config(Geometry::Disk { nr: 8, n: 16 });
    c.params.exchange = ExchangeConfig::CutoffReaction {
        b1: 1.0,
        b2: 1.0,
        h0: None,
    };
    c.initial.kind = InitialKind::Random;
    c.initial.seed = Some(1);
    c.initial.amplitude = 0.2;
    c.initial.u = 0.5;
    c.initial.u_perturbation = 0.1;
    c.stepper.dt = 1e-3;
    c.schedule.t_final = 0.02;
    c
}

#[test]
fn single_diffusivity_gives_one_row() {
    let r = large_d(&small_disk(), &[50.0]).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert!(r.rows[0].mean_error > 0.0 && r.rows[0].heterogeneity > 0.0);
}

#[test]
fn empty_sweeps_are_rejected() {
    let c = small_disk();
    assert!(matches!(kappa_refinement(&c, &[]), Err(Error::Precondition(_))));
    assert!(matches!(large_d(&c, &[]), Err(Error::Precondition(_))));
    assert!(matches!(absorbing(&c, &[]), Err(Error::Precondition(_))));
    assert!(matches!(continuous_dependence(&c, &[]), Err(Error::Precondition(_))));
}

#[test]
fn regularization_is_inert_while_phi_stays_inside() {
    // a short run from small data never reaches |φ| > 1 − κ
    let mut c = default_config(Geometry::Circle { n: 32 });
    c.initial.kind = InitialKind::Random;
    c.initial.seed = Some(2);
    c.initial.amplitude = 0.1;
    c.stepper.dt = 1e-3;
    c.schedule.t_final = 0.05;
    let r = kappa_refinement(&c, &[1e-2]).unwrap();
    assert!(r.singular_margin > 1e-2);
    assert!(r.rows[0].l2_difference <= 1e-12, "{}", r.rows[0].l2_difference);
}

#[test]
fn runs_are_reproducible() {
    let c = small_disk();
    let a = simulate(&c).unwrap();
    let b = simulate(&c).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn sweep_order_does_not_depend_on_input_order() {
    let c = small_disk();
    let a = large_d(&c, &[10.0, 100.0]).unwrap();
    let b = large_d(&c, &[100.0, 10.0]).unwrap();
    let key = |r: &raftsim::harness::experiments::LargeDReport| {
        r.rows
            .iter()
            .map(|x| (x.diffusivity, x.mean_error.to_bits(), x.heterogeneity.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
}

#[test]
fn steady_report_for_constant_data() {
    let mut c = default_config(Geometry::Circle { n: 32 });
    c.initial.phi = 0.2;
    c.initial.v = 0.4;
    c.initial.u = 0.1;
    let r = steady(&c).unwrap();
    assert!(r.residual <= 1e-14);
    assert!(r.phi.iter().all(|&p| (p - 0.2).abs() <= 1e-15));
    // equilibrium exchange with A ≡ 1 pins V through u = η
    assert!((r.constants.u - r.constants.eta).abs() <= 1e-12);
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![
            (4usize..32).prop_map(|h| Geometry::Circle { n: 2 * h }),
            (4usize..16, 4usize..16, 0.5f64..50.0, 0.5f64..50.0).prop_map(|(a, b, lx, ly)| Geometry::Torus {
                nx: 2 * a,
                ny: 2 * b,
                lx,
                ly
            }),
            (4usize..20, 4usize..32).prop_map(|(nr, h)| Geometry::Disk { nr, n: 2 * h }),
        ],
        0.01f64..10.0,
        0.01f64..10.0,
        0.1f64..1.0,
        1.05f64..3.0,
        prop_oneof![Just(0u8), Just(1), Just(2)],
        0u64..=i64::MAX as u64,
        1e-5f64..1e-1,
        1u64..1000,
    )
        .prop_map(|(shape, diffusivity, delta, theta, ratio, law, seed, dt, stride)| {
            let mut c = default_config(shape);
            c.params.diffusivity = diffusivity;
            c.params.delta = delta;
            c.params.potential.theta = theta;
            c.params.potential.theta0 = theta * ratio;
            match law {
                0 => {}
                1 => c.params.exchange = ExchangeConfig::Reaction { b1: delta, b2: theta },
                _ => {
                    c.params.exchange = ExchangeConfig::CutoffReaction {
                        b1: delta,
                        b2: theta,
                        h0: Some(ratio),
                    };
                    c.params.potential.kind = PotentialName::Regularized;
                    c.params.potential.kappa = Some(1e-3);
                }
            }
            c.initial.kind = InitialKind::Random;
            c.initial.seed = Some(seed);
            c.initial.amplitude = 0.5 * theta;
            c.stepper.dt = dt;
            c.schedule.sample_stride = stride;
            c.experiment.d_list = vec![diffusivity, 10.0 * diffusivity];
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_roundtrips_through_toml(cfg in arb_config()) {
        let text = cfg.to_toml();
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
