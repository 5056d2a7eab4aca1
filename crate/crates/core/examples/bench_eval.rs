//! Times one loss + gradient evaluation of the desk-scale network.

use std::time::Instant;

use beampinn::jetdiff::{loss_gradient, JetLayout, JetTerm};
use beampinn::net::{self, init_xavier, InputMap, NetArch};

fn main() {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let chunk: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let arch = NetArch::mlp(&[64, 64, 64], 1)
        .unwrap()
        .with_input_map(InputMap::unit_box(0.0, 25.0, 0.0, 1.0));
    let p = init_xavier(&arch, 0);
    let pts: Vec<(f64, f64)> = (0..n).map(|i| (25.0 * i as f64 / n as f64, (i % 50) as f64 / 50.0)).collect();
    let layout = JetLayout::new(4, 2).unwrap();
    for _ in 0..3 {
        let t0 = Instant::now();
        let mut v = 0.0;
        let mut g = vec![0.0; p.len()];
        for pts in pts.chunks(chunk) {
        let (vc, gc) = loss_gradient(p.as_slice(), |tape, leaf| {
            let input = tape.jet_constant(net::input_jet(&arch, &pts, layout));
            let y = net::forward_jet(tape, leaf, &arch, input);
            let r = tape.jet_linear(
                y,
                vec![
                    JetTerm { block: 0, channel: 0, weight: 1.0 },
                    JetTerm { block: 4, channel: 0, weight: 24.0 },
                    JetTerm { block: 6, channel: 0, weight: 2.0 },
                ],
            );
            let sq = tape.square(r);
            Ok(tape.mean(sq))
        })
        .unwrap();
        v += vc;
        g.iter_mut().zip(gc).for_each(|(a, b)| *a += b);
        }
        println!("{n} points: loss {v:.4e} |g|={:.3e} in {:?}", g.iter().map(|x| x * x).sum::<f64>().sqrt(), t0.elapsed());
    }
}
