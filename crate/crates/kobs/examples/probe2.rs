//! Scratch probe: penalized-path graph stability and cubic-grid Lipschitz sweep.

use kobs::estimators::lipschitz_report;
use kobs::free_boundary::{classify, extract_graph, holder_seminorms, nearest_gamma, penalized_tol};
use kobs::geometry::KineticPoint;
use kobs::grid::{build_grid, Field, GridConfig};
use kobs::solver::{solve_penalized, BoundaryData, ObstacleProblemSpec};

fn main() {
    let eps = 1e-3;
    for cells in [32usize, 64, 128] {
        let g = build_grid(&GridConfig::unit(1, cells, cells, cells)).unwrap();
        let mut spec = ObstacleProblemSpec::new(g.clone(), BoundaryData::ThickSlab { gamma: 0.3 });
        spec.penalty.eps = eps;
        let t = std::time::Instant::now();
        let res = solve_penalized(&spec).unwrap();
        let u = res.u;
        println!("== cubic grid {cells}  solve {:.2}s", t.elapsed().as_secs_f64());
        let lip = lipschitz_report(&u).unwrap();
        println!("  lip grad_x {:.5} dt {:.5} d2v {:.5}", lip.sup_grad_x, lip.sup_dt, lip.sup_d2v);
        let contrast = Field::sample(&g, |z| z.x()[0].abs().powf(2.0 / 3.0));
        println!("  contrast grad_x {:.5}", lipschitz_report(&contrast).unwrap().sup_grad_x);

        let tol = penalized_tol(eps, 1.0);
        let cls = classify(&u, tol, tol).unwrap();
        let target = KineticPoint::new1(-0.25, 0.0, 0.0);
        let gflat = nearest_gamma(&g, &cls, &target).unwrap();
        let mut idx = vec![0usize; 3];
        g.unflat(gflat, &mut idx);
        let z0 = g.point_at(&idx);
        println!("  gamma node ({}, {}, {})", z0.t(), z0.x()[0], z0.v()[0]);
        let graph = extract_graph(&u, &cls, 0).unwrap();
        let window: Vec<_> = graph
            .samples
            .iter()
            .filter(|s| s.t >= -0.6 && s.t <= -0.1 && s.x[0].abs() <= 0.5)
            .cloned()
            .collect();
        let valid = window.iter().filter(|s| s.valid).count() as f64 / window.len() as f64;
        let wg = kobs::free_boundary::FreeBoundaryGraph { axis: 0, samples: window };
        let hol = holder_seminorms(&wg).unwrap();
        println!("  graph single-crossing {:.4} holder tx {:.4}", valid, hol.tx_seminorm);
    }
}
