//! Scratch probe: measures region-vs-composite Jacobi history agreement on
//! the 82x82 / 3x3-region configuration.

use std::sync::Arc;

use regmg::cycle::{
    composite_setup, composite_solve, setup_hierarchy, solve, CycleConfig, SetupConfig,
    SmootherKind, TransferKind,
};
use regmg::problems::{gen_poisson, gen_region_grid, BoundaryCondition, Stencil};
use regmg::region::RegionLayout;

fn main() {
    let dims = [82usize, 82];
    let a = gen_poisson(&dims, Stencil::FivePoint, BoundaryCondition::Dirichlet).unwrap();
    let (membership, descs) = gen_region_grid(&dims, &[3, 3]).unwrap();
    let layout = Arc::new(RegionLayout::build(&membership, descs).unwrap());
    let setup = SetupConfig::new(3, 3, TransferKind::Linear);
    let cfg = CycleConfig {
        smoother: SmootherKind::Jacobi { omega: 0.6 },
        tol: 1e-12,
        max_iters: 100,
        ..Default::default()
    };
    let n = dims[0] * dims[1];
    let b: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5).collect();

    let mut h = setup_hierarchy(&a, layout, &setup).unwrap();
    let t0 = std::time::Instant::now();
    let (_, rh) = solve(&mut h, &b, &cfg).unwrap();
    let t1 = t0.elapsed();
    let mut ch = composite_setup(&a, &dims, &setup).unwrap();
    let t2 = std::time::Instant::now();
    let (_, chist) = composite_solve(&mut ch, &b, &cfg).unwrap();
    let t3 = t2.elapsed();

    println!("region iters {} ({t1:?}), composite iters {} ({t3:?})", rh.len() - 1, chist.len() - 1);
    let mut worst = (0usize, 0.0f64);
    for k in 0..rh.len().min(chist.len()) {
        let rd = (rh[k] - chist[k]).abs() / chist[k].max(1e-300);
        let ad = (rh[k] - chist[k]).abs();
        println!("{k:3}  {:.16e}  {:.16e}  rel {:.2e}  abs {:.2e}", rh[k], chist[k], rd, ad);
        if rd > worst.1 {
            worst = (k, rd);
        }
    }
    println!("worst rel diff: {:.3e} at iteration {}", worst.1, worst.0);
}
