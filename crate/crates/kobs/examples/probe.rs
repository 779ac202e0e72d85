//! Scratch probe for scenario calibration (not part of the test suite).

use kobs::blowup::transport_sup_scan;
use kobs::estimators::lipschitz_report;
use kobs::free_boundary::{classify, corkscrew_check, extract_graph, holder_seminorms, nearest_gamma};
use kobs::geometry::KineticPoint;
use kobs::grid::{build_grid, Field, GridConfig};
use kobs::solver::{solve_projected, BoundaryData, ObstacleProblemSpec};

fn main() {
    for (nt, nx, nv) in [(32usize, 16usize, 32usize), (64, 32, 64), (128, 64, 128)] {
        let g = build_grid(&GridConfig::unit(1, nt, nx, nv)).unwrap();
        let spec = ObstacleProblemSpec::new(g.clone(), BoundaryData::ThickSlab { gamma: 0.25 });
        let t = std::time::Instant::now();
        let res = solve_projected(&spec).unwrap();
        let u = res.u;
        println!("== grid ({nt},{nx},{nv})  solve {:.2}s", t.elapsed().as_secs_f64());
        let lip = lipschitz_report(&u).unwrap();
        println!("  lip: grad_x {:.5} dt {:.5} d2v {:.5}", lip.sup_grad_x, lip.sup_dt, lip.sup_d2v);
        let contrast = Field::sample(&g, |z| z.x()[0].abs().powf(2.0 / 3.0));
        let clip = lipschitz_report(&contrast).unwrap();
        println!("  contrast |x|^(2/3) grad_x {:.5}", clip.sup_grad_x);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        let target = KineticPoint::new1(-0.25, 0.0, 0.0);
        let gflat = nearest_gamma(&g, &cls, &target).unwrap();
        let mut idx = vec![0usize; 3];
        g.unflat(gflat, &mut idx);
        let z0 = g.point_at(&idx);
        println!("  gamma node: ({}, {}, {})", z0.t(), z0.x()[0], z0.v()[0]);
        let radii: Vec<f64> = (0..6).map(|k| 0.6 * 0.5f64.powi(k)).collect();
        let scan = transport_sup_scan(&u, &cls, &z0, &radii).unwrap();
        println!(
            "  Yu scan: {:?}",
            scan.iter().map(|(r, s)| format!("{r:.3}:{s:.5}")).collect::<Vec<_>>()
        );
        let graph = extract_graph(&u, &cls, 0).unwrap();
        let window: Vec<_> = graph
            .samples
            .iter()
            .filter(|s| s.t >= -0.6 && s.t <= -0.1 && s.x[0].abs() <= 0.5)
            .cloned()
            .collect();
        let valid = window.iter().filter(|s| s.valid).count();
        println!(
            "  window columns {} single-crossing {:.4}",
            window.len(),
            valid as f64 / window.len() as f64
        );
        let wg = kobs::free_boundary::FreeBoundaryGraph { axis: 0, samples: window };
        let hol = holder_seminorms(&wg).unwrap();
        println!("  holder tx {:.4} v {:.4}", hol.tx_seminorm, hol.v_seminorm);
        for kappa in [0.05, 0.15, 0.25] {
            let mut fails = Vec::new();
            for r in [0.5, 0.25, 0.125, 0.0625] {
                let rep = corkscrew_check(&g, &cls, &z0, r, kappa).unwrap();
                if !rep.passes {
                    fails.push(r);
                }
            }
            if fails.is_empty() {
                println!("  corkscrew κ={kappa} passes at all dyadic r");
            } else {
                println!("  corkscrew κ={kappa} fails at {fails:?}");
            }
        }
    }
}
