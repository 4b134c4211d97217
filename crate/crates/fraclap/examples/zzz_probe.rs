use fraclap::analysis::identity_suite;
use fraclap::quadrature::{Method, QuadratureSpec};
use fraclap::specfun::FracParams;

fn main() {
    let params = FracParams { n: 2, s: 0.3, sigma: None };
    for method in [Method::AdaptivePolar, Method::ImportanceMc] {
        for seed in [42u64, 7, 13] {
            let spec = QuadratureSpec {
                method,
                budget: 1_000_000,
                seed,
                ..Default::default()
            };
            let t = std::time::Instant::now();
            let recs = identity_suite(params, &spec, 1e-2).unwrap();
            print!("{method:?} seed {seed:>2} ({:.0}s):", t.elapsed().as_secs_f64());
            for r in &recs {
                let scale = r.lhs.abs().max(r.rhs.abs()).max(1e-12);
                let dev = (r.lhs - r.rhs).abs() / scale;
                print!(" {}={:.1e}{}", &r.name[..1], dev, if r.pass { "" } else { "!" });
            }
            println!();
        }
    }
}
