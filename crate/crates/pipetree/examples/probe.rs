use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use pipetree::auglag::{optimize_case1, AugLagConfig};
use pipetree::optima::optimal_xi_case1;
use pipetree::topology::outlet_count;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let config = AugLagConfig::default();
    let mut worst_xi: f64 = 0.0;
    let mut worst_e: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    let mut max_outers = 0usize;
    for instance in 0..20 {
        let levels = instance % 4 + 1;
        let lambda: f64 = rng.random_range(2.0..20.0);
        let r0: f64 = rng.random_range(0.5..2.0);
        let scale = outlet_count(levels) as f64;
        let outlet_flows: Vec<f64> = (0..outlet_count(levels))
            .map(|_| rng.random_range(0.1..1.0) / scale)
            .collect();
        let run = optimize_case1(&outlet_flows, lambda, r0, &config, None).unwrap();
        let reference = optimal_xi_case1(&outlet_flows, lambda, levels, r0).unwrap();
        let xi_err = run.final_xi().iter().zip(&reference.xi_star)
            .map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        let e_err = (run.final_energy() - reference.energy).abs() / reference.energy;
        let g = run.iterates.last().unwrap().volume_residual;
        let outers = run.iterates.len() - 1;
        max_outers = max_outers.max(outers);
        worst_xi = worst_xi.max(xi_err);
        worst_e = worst_e.max(e_err);
        worst_g = worst_g.max(g);
        println!("inst {instance:2} N={levels} lam={lambda:6.3} conv={} outers={outers:4} xi_err={xi_err:.3e} e_err={e_err:.3e} |G|={g:.3e}", run.converged);
    }
    println!("worst: xi={worst_xi:.3e} e={worst_e:.3e} G={worst_g:.3e} outers={max_outers}");
}
