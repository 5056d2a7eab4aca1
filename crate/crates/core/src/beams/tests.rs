use std::f64::consts::PI;

use super::*;

fn bundle(x: Vec<f64>, t: Vec<f64>) -> DerivBundle {
    DerivBundle {
        channels: vec![ChannelDerivs { x, t }],
    }
}

#[test]
fn eb_hand_substitution_at_initial_time() {
    let p = BeamProblem::standard(ProblemId::EbBase);
    // u = 1, u_xxxx = 1, u_tt = -pi^2 at (pi/2, 0)
    let b = bundle(vec![1.0, 0.0, -1.0, 0.0, 1.0], vec![1.0, 0.0, -PI * PI]);
    assert!(eb_residual(&b, PI / 2.0, 0.0, &p).unwrap().abs() < 1e-14);
}

#[test]
fn eb_hand_substitution_at_final_time() {
    let p = BeamProblem::standard(ProblemId::EbBase);
    let b = bundle(vec![-1.0, 0.0, 1.0, 0.0, -1.0], vec![-1.0, 0.0, PI * PI]);
    assert!(eb_residual(&b, PI / 2.0, 1.0, &p).unwrap().abs() < 1e-14);
}

#[test]
fn eb_zero_field_residual_is_minus_forcing() {
    let p = BeamProblem::standard(ProblemId::EbBase);
    let b = bundle(vec![0.0; 5], vec![0.0; 3]);
    let r = eb_residual(&b, 1.0, 0.5, &p).unwrap();
    assert_eq!(r, -forcing_eb(1.0, 0.5));
    assert!(r.abs() < 1e-15);
}

#[test]
fn eb_missing_slot_is_rejected() {
    let p = BeamProblem::standard(ProblemId::EbBase);
    let b = bundle(vec![0.0; 3], vec![0.0; 3]);
    assert!(matches!(
        eb_residual(&b, 1.0, 0.5, &p),
        Err(Error::MissingDerivative { order: 4, .. })
    ));
}

#[test]
fn eb_residual_affine_in_field() {
    let p = BeamProblem::standard(ProblemId::EbBase);
    let b = bundle(vec![0.3, -0.2, 0.7, 1.1, -0.4], vec![0.3, 0.9, -1.3]);
    let (x, t) = (0.8, 0.3);
    let f = forcing_eb(x, t);
    let r1 = eb_residual(&b, x, t, &p).unwrap() + f;
    let r2 = eb_residual(&b.scaled(2.0), x, t, &p).unwrap() + f;
    assert!((r2 - 2.0 * r1).abs() < 1e-14);
}

#[test]
fn timoshenko_hand_substitution() {
    let p = BeamProblem::standard(ProblemId::Timoshenko);
    let b = p.exact_bundle(PI / 2.0, 0.0).unwrap();
    assert!((b.value(1) + PI).abs() < 1e-14);
    assert!((b.value(0) - 1.5 * PI).abs() < 1e-14);
    let (rr, rd) = timo_residuals(&b, PI / 2.0, 0.0, &p).unwrap();
    assert!(rr.abs() < 1e-12 && rd.abs() < 1e-12);
    let b = p.exact_bundle(1.0, 0.7).unwrap();
    let (rr, rd) = timo_residuals(&b, 1.0, 0.7, &p).unwrap();
    assert!(rr.abs() <= 1e-10 && rd.abs() <= 1e-10);
}

#[test]
fn timoshenko_zero_field() {
    let p = BeamProblem::standard(ProblemId::Timoshenko);
    let z = ChannelDerivs {
        x: vec![0.0; 3],
        t: vec![0.0; 3],
    };
    let b = DerivBundle {
        channels: vec![z.clone(), z],
    };
    assert_eq!(timo_residuals(&b, 1.0, 0.0, &p).unwrap(), (0.0, -1.0));
}

#[test]
fn forcing_values() {
    assert!((forcing_eb(PI / 2.0, 0.0) - (2.0 - PI * PI)).abs() < 1e-15);
    assert!((forcing_eb(PI / 2.0, 0.0) + 7.869_604_4).abs() < 1e-7);
    assert_eq!(forcing_timo(0.0, 0.0), 1.0);
    assert_eq!(forcing_eb_variant(1.0, PI / 2.0, 0.0), 3.0);
}

#[test]
fn exact_values() {
    let eb = BeamProblem::standard(ProblemId::EbBase);
    assert_eq!(eb.exact_solution(PI / 2.0, 0.0).unwrap(), vec![1.0]);
    assert!((eb.exact_solution(PI / 2.0, 1.0).unwrap()[0] + 1.0).abs() < 1e-15);
    let tm = BeamProblem::standard(ProblemId::Timoshenko);
    for t in [0.0, 0.3, 1.0] {
        assert!(tm.exact_solution(3.0 * PI, t).unwrap()[1].abs() < 1e-14);
    }
}

#[test]
fn missing_exact_form_is_rejected() {
    let p = BeamProblem::new(ProblemId::EbBase, ProblemId::EbBase.base_domain(), 2.0, 1.0, None).unwrap();
    assert!(!p.has_exact);
    assert!(matches!(p.exact_solution(1.0, 0.5), Err(Error::NoExactSolution(_))));
}

#[test]
fn ic_examples() {
    let eb = BeamProblem::standard(ProblemId::EbBase);
    let v = eb.ic_values(&[PI / 2.0]);
    assert_eq!((v.disp[0][0], v.vel[0][0]), (1.0, 0.0));
    let var = BeamProblem::new(ProblemId::EbVariant, ProblemId::EbVariant.base_domain(), 1.0, 2.0, None).unwrap();
    let v = var.ic_values(&[PI / 2.0]);
    assert_eq!((v.disp[0][0], v.vel[0][0]), (2.0, 2.0));
    let tm = BeamProblem::standard(ProblemId::Timoshenko);
    let v = tm.ic_values(&[0.0]);
    assert_eq!((v.disp[1][0], v.disp[0][0], v.vel[1][0], v.vel[0][0]), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn exact_forms_match_initial_and_boundary_data() {
    for id in [ProblemId::EbBase, ProblemId::EbVariant, ProblemId::Timoshenko] {
        let p = BeamProblem::standard(id);
        let d = p.domain;
        let xs: Vec<f64> = (0..100).map(|i| d.x_min + (d.x_max - d.x_min) * i as f64 / 99.0).collect();
        let ic = p.ic_values(&xs);
        for (n, &x) in xs.iter().enumerate() {
            let b = p.exact_bundle(x, 0.0).unwrap();
            for c in 0..p.channels() {
                assert!((b.value(c) - ic.disp[c][n]).abs() <= 1e-12, "{id:?} disp");
                assert!((b.get(c, Axis::T, 1).unwrap() - ic.vel[c][n]).abs() <= 1e-12, "{id:?} vel");
            }
        }
        for i in 0..100 {
            let t = d.t_max * i as f64 / 99.0;
            for (end, x) in [(End::Left, d.x_min), (End::Right, d.x_max)] {
                let b = p.exact_bundle(x, t).unwrap();
                for (c, target) in p.boundary_targets(end, t).unwrap() {
                    let v = b.get(c.channel, Axis::X, c.order).unwrap();
                    assert!((v - target).abs() <= 1e-12, "{id:?} {end:?} {v}");
                }
            }
        }
    }
}

#[test]
fn boundary_target_examples() {
    let eb = BeamProblem::standard(ProblemId::EbBase);
    let left = eb.boundary_targets(End::Left, 0.3).unwrap();
    assert_eq!(
        left,
        vec![
            (BcConstraint { channel: 0, order: 0 }, 0.0),
            (BcConstraint { channel: 0, order: 2 }, 0.0)
        ]
    );
    let tm = BeamProblem::standard(ProblemId::Timoshenko);
    assert!(tm.boundary_targets(End::Right, 0.5).unwrap().iter().all(|(_, v)| *v == 0.0));
    let ext = tm.with_domain(Domain::new(0.0, 5.0 * PI, 0.0, 1.0).unwrap()).unwrap();
    assert!(ext.has_exact);
    let right = ext.boundary_targets(End::Right, 0.0).unwrap();
    assert!((right[1].1 - 2.0 * PI).abs() < 1e-12);
    assert!(right[0].1.abs() < 1e-12);
}

#[test]
fn noise_zero_and_deterministic() {
    let vals: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
    let zero = NoiseSpec { percent: 0.0, seed: 3 };
    assert_eq!(add_ic_noise(&vals, &zero), vals);
    let ten = NoiseSpec { percent: 10.0, seed: 3 };
    assert_eq!(add_ic_noise(&vals, &ten), add_ic_noise(&vals, &ten));
    assert_ne!(add_ic_noise(&vals, &ten), vals);
}

#[test]
fn noise_statistics() {
    let n = 10_000;
    let vals: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).sin()).collect();
    let out = add_ic_noise(&vals, &NoiseSpec { percent: 10.0, seed: 11 });
    let d: Vec<f64> = out.iter().zip(&vals).map(|(o, v)| o - v).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let target = 0.1 * 0.5f64.sqrt();
    assert!((sd - target).abs() < 0.05 * target, "sd {sd}");
    let rms = (d.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    assert!((rms - target).abs() < 0.05 * target, "rms {rms}");
}

#[test]
fn domain_validation() {
    assert!(Domain::new(1.0, 1.0, 0.0, 1.0).is_err());
    assert!(Domain::new(0.0, 1.0, 0.5, 1.0).is_err());
    assert!(Domain::new(0.0, 1.0, 0.0, f64::NAN).is_err());
    assert!(Domain::new(0.0, 1.0, 0.0, 0.0).is_ok());
}

#[test]
fn layouts() {
    let eb = BeamProblem::standard(ProblemId::EbBase);
    assert_eq!(eb.residual_layout(), JetLayout::new(4, 2).unwrap());
    assert_eq!(eb.bc_layout(), JetLayout::new(2, 0).unwrap());
    let tm = BeamProblem::standard(ProblemId::Timoshenko);
    assert_eq!(tm.residual_layout(), JetLayout::new(2, 2).unwrap());
    assert_eq!(tm.bc_layout(), JetLayout::VALUE);
}
