use std::f64::consts::PI;

use super::*;
use crate::beams::{Domain, ProblemId};
use crate::colloc::{sample, Counts};
use crate::net::init_xavier;
use crate::jetdiff::stop_gradient;
use crate::optim::Objective;

fn setup(id: ProblemId, counts: Counts, seed: u64) -> (NetArch, LossData) {
    let p = BeamProblem::standard(id);
    let c = sample(&p.domain, counts, seed, false).unwrap();
    let arch = NetArch::mlp(&[8, 8], p.channels()).unwrap();
    (arch, LossData::new(&p, &c).unwrap())
}

fn small() -> Counts {
    Counts {
        n_t: 5,
        n_int: 60,
        n_i: 13,
        n_b: 10,
    }
}

fn spec(mode: LossMode, epsilon: f64) -> LossSpec {
    LossSpec {
        mode,
        lambdas: Lambdas::default(),
        epsilon,
        sa: SaConfig::default(),
    }
}

#[test]
fn causal_weight_examples() {
    assert_eq!(causal_weights(&[0.0; 4], 5.0), vec![1.0; 4]);
    let w = causal_weights(&[0.1, 0.2, 0.3], 5.0);
    for (a, b) in w.iter().zip([1.0, 0.60653066, 0.22313016]) {
        assert!((a - b).abs() < 1e-8);
    }
    assert_eq!(w[1], (-0.5f64).exp());
    assert!(causal_weights(&[0.1, 0.2, 0.3], 1e-14).iter().all(|w| (w - 1.0).abs() < 1e-13));
    let c = 0.37;
    let w = causal_weights(&[c; 6], 2.0);
    for (i, wi) in w.iter().enumerate() {
        assert!((wi - (-2.0 * i as f64 * c).exp()).abs() <= 1e-15);
    }
}

#[test]
fn causal_pde_two_slice_example() {
    let v = causal_pde_from_slices(&[0.1, 0.2], 5.0);
    assert!((v - 0.11065307).abs() < 1e-8);
    let single = causal_pde_from_slices(&[0.0, 0.0, 0.4, 0.0], 5.0);
    assert!((single - 0.1).abs() < 1e-16);
}

#[test]
fn sa_update_examples() {
    assert_eq!(sa_update(&[1.0, 2.0], &[0.0, 0.0], 0.1, 10.0).unwrap(), vec![1.0, 2.0]);
    let m = sa_update(&[1.0], &[2.0], 0.1, 10.0).unwrap();
    assert!((m[0] - 1.4).abs() < 1e-15);
    assert_eq!(sa_update(&[10.0], &[3.0], 0.1, 10.0).unwrap(), vec![10.0]);
    assert!(sa_update(&[1.0], &[1.0, 2.0], 0.1, 1.0).is_err());
}

#[test]
fn zero_network_single_ic_point() {
    let p = BeamProblem::standard(ProblemId::EbBase);
    let mut c = sample(&p.domain, small(), 0, false).unwrap();
    c.ic_xs = vec![PI / 2.0];
    let data = LossData::new(&p, &c).unwrap();
    let arch = NetArch::mlp(&[8, 8], 1).unwrap();
    let z = ParamVector::zeros(arch.param_count());
    assert!((ic_loss(&z, &arch, &data).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn doubling_ic_mismatch_quadruples_loss() {
    let arch = NetArch::mlp(&[8, 8], 1).unwrap();
    let z = ParamVector::zeros(arch.param_count());
    let loss_for = |a: f64| {
        let p = BeamProblem::new(ProblemId::EbVariant, ProblemId::EbVariant.base_domain(), 1.0, a, None).unwrap();
        let c = sample(&p.domain, small(), 3, false).unwrap();
        ic_loss(&z, &arch, &LossData::new(&p, &c).unwrap()).unwrap()
    };
    let (l1, l2) = (loss_for(1.0), loss_for(2.0));
    assert!(l1 > 0.0);
    assert!((l2 - 4.0 * l1).abs() <= 1e-14 * l2);
}

#[test]
fn zero_network_boundary_losses() {
    let (arch, data) = setup(ProblemId::EbBase, small(), 1);
    let z = ParamVector::zeros(arch.param_count());
    assert_eq!(bc_loss(&z, &arch, &data).unwrap(), 0.0);

    let p = BeamProblem::standard(ProblemId::Timoshenko)
        .with_domain(Domain::new(0.0, 5.0 * PI, 0.0, 1.0).unwrap())
        .unwrap();
    let c = sample(&p.domain, small(), 1, false).unwrap();
    let data = LossData::new(&p, &c).unwrap();
    let arch = NetArch::mlp(&[8, 8], 2).unwrap();
    let z = ParamVector::zeros(arch.param_count());
    let l = bc_loss(&z, &arch, &data).unwrap();
    let expected: f64 = c
        .bc_points
        .iter()
        .map(|b| {
            p.boundary_targets(b.end, b.t)
                .unwrap()
                .iter()
                .map(|(_, v)| v * v)
                .sum::<f64>()
        })
        .sum::<f64>()
        / c.bc_points.len() as f64;
    assert!(l > 0.0);
    assert!((l - expected).abs() <= 1e-13 * expected);
    let right: f64 = c
        .bc_points
        .iter()
        .filter(|b| b.end == crate::beams::End::Right)
        .map(|b| (2.0 * PI * b.t.cos()).powi(2))
        .sum::<f64>()
        / c.bc_points.len() as f64;
    assert!((l - right).abs() <= 1e-10 * right);
}

#[test]
fn zero_network_slice_losses_are_mean_forcing_squared() {
    let (arch, data) = setup(ProblemId::EbBase, small(), 2);
    let z = ParamVector::zeros(arch.param_count());
    let ls = slice_pde_losses(&z, &arch, &data).unwrap();
    for (s, l) in data.colloc.slices.iter().zip(&ls) {
        let m = s.xs.iter().map(|&x| crate::beams::forcing_eb(x, s.t).powi(2)).sum::<f64>() / s.xs.len() as f64;
        assert!((l - m).abs() <= 1e-14 * m.max(1e-300));
    }
}

#[test]
fn zero_network_timoshenko_vanilla_is_mean_cos_squared() {
    let (arch, data) = setup(ProblemId::Timoshenko, small(), 2);
    let z = ParamVector::zeros(arch.param_count());
    let l = pde_loss_vanilla(&z, &arch, &data).unwrap();
    let pts = data.colloc.interior_points();
    let m = pts.iter().map(|(_, t)| t.cos().powi(2)).sum::<f64>() / pts.len() as f64;
    assert!((l - m).abs() < 1e-14);
}

#[test]
fn vanilla_equals_slice_mean_and_causal_at_zero_epsilon() {
    let (arch, data) = setup(ProblemId::EbBase, small(), 4);
    let p = init_xavier(&arch, 5);
    let v = total_loss(&p, &arch, &data, &spec(LossMode::Vanilla, 0.0)).unwrap();
    let mean_slices = v.slice_losses.iter().sum::<f64>() / v.slice_losses.len() as f64;
    assert!((v.l_pde - mean_slices).abs() <= 1e-12 * v.l_pde);
    assert!(v.weights.iter().all(|w| *w == 1.0));
    let c = total_loss(&p, &arch, &data, &spec(LossMode::Causal, 0.0)).unwrap();
    assert!((c.total - v.total).abs() <= 1e-12 * v.total);
}

#[test]
fn breakdown_invariants() {
    let (arch, data) = setup(ProblemId::Timoshenko, small(), 4);
    let p = init_xavier(&arch, 6);
    let b = total_loss(&p, &arch, &data, &spec(LossMode::Causal, 5.0)).unwrap();
    assert!((b.total - (b.l_pde + b.l_ic + b.l_bc)).abs() <= 1e-12 * b.total);
    assert_eq!(b.weights[0], 1.0);
    assert!(b.weights.windows(2).all(|w| w[1] <= w[0]));
    assert!(b.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
    let unweighted = b.slice_losses.iter().sum::<f64>() / b.slice_losses.len() as f64;
    assert!(b.l_pde <= unweighted);
    assert_eq!(b.weights, causal_weights(&b.slice_losses, 5.0));

    let mut s2 = spec(LossMode::Causal, 5.0);
    s2.lambdas.pde = 2.0;
    let b2 = total_loss(&p, &arch, &data, &s2).unwrap();
    assert!((b2.total - (b.total + b.l_pde)).abs() <= 1e-12 * b2.total);
}

#[test]
fn permuting_points_within_a_slice() {
    let (arch, data) = setup(ProblemId::EbBase, small(), 8);
    let p = init_xavier(&arch, 1);
    let a = slice_pde_losses(&p, &arch, &data).unwrap();
    let mut c = data.colloc.clone();
    c.slices[2].xs.reverse();
    let b = slice_pde_losses(&p, &arch, &LossData::new(&data.problem, &c).unwrap()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-14 * x);
    }
}

#[test]
fn pde_loss_causal_checks_slice_count() {
    let (arch, data) = setup(ProblemId::EbBase, small(), 8);
    let p = init_xavier(&arch, 1);
    let cfg = CausalConfig { epsilon: 5.0, n_t: 4 };
    assert!(pde_loss_causal(&p, &arch, &data, &cfg).is_err());
    let cfg = CausalConfig { epsilon: 5.0, n_t: 5 };
    let (v, st) = pde_loss_causal(&p, &arch, &data, &cfg).unwrap();
    assert!((v - causal_pde_from_slices(&st.slice_losses, 5.0)).abs() <= 1e-15 * v);
}

/// The same loss built as one graph on a single tape with differentiable
/// primitives; the weights are cut with `stop_gradient`.
fn single_tape_loss(params: &[f64], arch: &NetArch, data: &LossData, s: &LossSpec) -> (f64, Vec<f64>) {
    let problem = &data.problem;
    crate::jetdiff::loss_gradient(params, |tape, leaf| {
        let pts = data.colloc.interior_points();
        let layout = problem.residual_layout();
        let inp = tape.jet_constant(net::input_jet(arch, &pts, layout));
        let y = net::forward_jet(tape, leaf, arch, inp);
        let mut e: Option<Var> = None;
        for eq in problem.equations() {
            let terms = readout_terms(layout, eq.terms.iter().map(|t| (t.channel, t.axis, t.order, t.coef)));
            let r = tape.jet_linear(y, terms);
            let f: Vec<f64> = pts.iter().map(|&(x, t)| -eq.forcing.map_or(0.0, |f| f.eval(x, t))).collect();
            let r = tape.add_const(r, &f);
            let sq = tape.square(r);
            e = Some(match e {
                None => sq,
                Some(prev) => tape.add(prev, sq),
            });
        }
        let e = e.unwrap();
        let mut bounds = vec![0];
        for sl in &data.colloc.slices {
            bounds.push(bounds.last().unwrap() + sl.xs.len());
        }
        let l = tape.segment_mean(e, bounds);
        let pde = match s.mode {
            LossMode::Causal => {
                let cs = tape.exclusive_cumsum(l);
                let sc = tape.scale(cs, -s.epsilon);
                let w = tape.exp(sc);
                let w = stop_gradient(tape, w);
                let d = tape.dot(w, l);
                tape.scale(d, 1.0 / data.n_t() as f64)
            }
            _ => tape.mean(e),
        };
        let mut total = tape.scale(pde, s.lambdas.pde);
        // initial data
        let ic_layout = JetLayout::new(0, 1).unwrap();
        let ipts = data.colloc.ic_points();
        let inp = tape.jet_constant(net::input_jet(arch, &ipts, ic_layout));
        let y = net::forward_jet(tape, leaf, arch, inp);
        for c in 0..problem.channels() {
            for (order, target) in [(0, &data.ic_targets.disp[c]), (1, &data.ic_targets.vel[c])] {
                let v = tape.jet_linear(y, readout_terms(ic_layout, [(c, Axis::T, order, 1.0)]));
                let neg: Vec<f64> = target.iter().map(|t| -t).collect();
                let d = tape.add_const(v, &neg);
                let sq = tape.square(d);
                let m = tape.sum(sq);
                let m = tape.scale(m, s.lambdas.ic / ipts.len() as f64);
                total = tape.add(total, m);
            }
        }
        let bc_layout = problem.bc_layout();
        let bpts: Vec<(f64, f64)> = data.colloc.bc_points.iter().map(|b| (b.x, b.t)).collect();
        let inp = tape.jet_constant(net::input_jet(arch, &bpts, bc_layout));
        let y = net::forward_jet(tape, leaf, arch, inp);
        for (j, c) in problem.bc_constraints().iter().enumerate() {
            let v = tape.jet_linear(y, readout_terms(bc_layout, [(c.channel, Axis::X, c.order, 1.0)]));
            let neg: Vec<f64> = data
                .colloc
                .bc_points
                .iter()
                .map(|b| -problem.boundary_targets(b.end, b.t).unwrap()[j].1)
                .collect();
            let d = tape.add_const(v, &neg);
            let sq = tape.square(d);
            let m = tape.sum(sq);
            let m = tape.scale(m, s.lambdas.bc / bpts.len() as f64);
            total = tape.add(total, m);
        }
        Ok(total)
    })
    .unwrap()
}

#[test]
fn chunked_gradient_matches_single_tape_graph() {
    for (id, mode) in [
        (ProblemId::EbBase, LossMode::Causal),
        (ProblemId::EbBase, LossMode::Vanilla),
        (ProblemId::Timoshenko, LossMode::Causal),
    ] {
        let counts = Counts {
            n_t: 20,
            n_int: 300,
            n_i: 70,
            n_b: 60,
        };
        let (arch, data) = setup(id, counts, 12);
        let p = init_xavier(&arch, 3);
        let s = spec(mode, 5.0);
        let (b, g) = total_loss_gradient(&p, &arch, &data, &s).unwrap();
        let (v, g_ref) = single_tape_loss(p.as_slice(), &arch, &data, &s);
        assert!((b.total - v).abs() <= 1e-12 * v, "{id:?} {mode:?}: {} vs {v}", b.total);
        let scale = g_ref.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        for (a, r) in g.iter().zip(&g_ref) {
            assert!((a - r).abs() <= 1e-11 * scale, "{id:?} {mode:?}: {a} vs {r}");
        }
    }
}

#[test]
fn frozen_weights_differ_from_live_differentiation() {
    // Differentiating through the weights would add -eps * sum_{k>i} w_k L_k
    // terms; the frozen gradient equals the gradient of a fixed-coefficient
    // combination of slice losses.
    let (arch, data) = setup(ProblemId::EbBase, small(), 3);
    let p = init_xavier(&arch, 9);
    let s = spec(LossMode::Causal, 0.02);
    let (b, g) = total_loss_gradient(&p, &arch, &data, &s).unwrap();
    let mut obj = PinnObjective::new(arch.clone(), data.clone(), s).unwrap();
    obj.value_and_gradient(p.as_slice()).unwrap();
    // surrogate value at the anchor equals the true loss there
    assert_eq!(obj.value(p.as_slice()).unwrap(), b.total);
    // surrogate and true loss separate away from the anchor
    let mut q = p.clone();
    q.as_mut_slice().iter_mut().for_each(|v| *v *= 1.05);
    let surrogate = obj.value(q.as_slice()).unwrap();
    let live = total_loss(&q, &arch, &data, &s).unwrap().total;
    assert!((surrogate - live).abs() > 1e-9 * live);
    // directional derivative of the surrogate matches g.d (central difference)
    let d: Vec<f64> = g.iter().map(|v| -v).collect();
    let h = 1e-6;
    let at = |t: f64, obj: &mut PinnObjective| {
        let x: Vec<f64> = p.as_slice().iter().zip(&d).map(|(a, b)| a + t * b).collect();
        obj.value(&x).unwrap()
    };
    let fd = (at(h, &mut obj) - at(-h, &mut obj)) / (2.0 * h);
    let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
    assert!((fd - an).abs() <= 1e-5 * an.abs(), "{fd} vs {an}");
}

#[test]
fn sa_mode_uses_multipliers() {
    let (arch, data) = setup(ProblemId::EbBase, small(), 3);
    let p = init_xavier(&arch, 9);
    let s = spec(LossMode::Sa, 5.0);
    let v = total_loss(&p, &arch, &data, &spec(LossMode::Vanilla, 0.0)).unwrap();
    let sa = total_loss(&p, &arch, &data, &s).unwrap();
    // all multipliers start at one
    assert!((sa.total - v.total).abs() <= 1e-14 * v.total);
    let mut obj = PinnObjective::new(arch, data, s).unwrap();
    let (f, _) = obj.value_and_gradient(p.as_slice()).unwrap();
    assert!(f > v.total);
    assert!(obj.sa_multipliers().unwrap().iter().all(|m| *m >= 1.0));
}

#[test]
fn output_width_must_match_problem() {
    let (_, data) = setup(ProblemId::Timoshenko, small(), 3);
    let arch = NetArch::mlp(&[8, 8], 1).unwrap();
    let p = init_xavier(&arch, 1);
    assert!(matches!(
        total_loss(&p, &arch, &data, &spec(LossMode::Vanilla, 0.0)),
        Err(Error::ArchMismatch { .. })
    ));
}

#[test]
fn gradient_matches_central_differences_f64() {
    for id in [ProblemId::EbBase, ProblemId::Timoshenko] {
        let counts = Counts {
            n_t: 4,
            n_int: 12,
            n_i: 6,
            n_b: 6,
        };
        let p = BeamProblem::standard(id);
        let c = sample(&p.domain, counts, 2, false).unwrap();
        let d = p.domain;
        let arch = NetArch::mlp(&[6, 5], p.channels())
            .unwrap()
            .with_input_map(crate::net::InputMap::unit_box(d.x_min, d.x_max, d.t_min, d.t_max));
        let data = LossData::new(&p, &c).unwrap();
        let params = init_xavier(&arch, 4);
        let s = spec(LossMode::Vanilla, 0.0);
        let (_, g) = total_loss_gradient(&params, &arch, &data, &s).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let h = 1e-5 * params.as_slice()[i].abs().max(1e-2);
            let mut q = params.clone();
            q.as_mut_slice()[i] += h;
            let fp = total_loss(&q, &arch, &data, &s).unwrap().total;
            q.as_mut_slice()[i] -= 2.0 * h;
            let fm = total_loss(&q, &arch, &data, &s).unwrap().total;
            let fd = (fp - fm) / (2.0 * h);
            if g[i].abs() > 1e-6 {
                worst = worst.max((fd - g[i]).abs() / g[i].abs());
            }
        }
        assert!(worst < 1e-4, "{id:?}: {worst}");
    }
}
