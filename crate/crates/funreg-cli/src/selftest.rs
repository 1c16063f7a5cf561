//! A fast self-check set covering the load-bearing invariants; the CLI
//! `selftest` subcommand runs these and reports one line per check.

use funreg::basis::{KnotRule, SplineBasis};
use funreg::manifold::{self, FixedRankPoint};
use funreg::penalty::PenaltySpec;
use funreg::processes::CovKernel;
use funreg::simdiag;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(partition_of_unity());
    out.push(quadrature_exactness());
    out.push(diagonalization());
    out.push(penalty_kronecker());
    out.push(tangent_projection());
    out.push(dirichlet_identity());
    out.push(determinism());
    out
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn partition_of_unity() -> CheckOutcome {
    let b = SplineBasis::make_basis(12, 4, KnotRule::Uniform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t: f64 = rng.random();
        worst = worst.max((b.eval(t, 0).unwrap().sum() - 1.0).abs());
    }
    outcome(
        "partition-of-unity",
        worst < 1e-10,
        format!("max |sum - 1| = {worst:.2e}"),
    )
}

fn quadrature_exactness() -> CheckOutcome {
    let b = SplineBasis::make_basis(10, 4, KnotRule::Uniform).unwrap();
    let a = b.gram_matrices_with_nodes(2, 4).unwrap();
    let c = b.gram_matrices_with_nodes(2, 6).unwrap();
    let dev = (&a.gram - &c.gram)
        .iter()
        .chain((&a.rough - &c.rough).iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = c.rough.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    outcome(
        "quadrature-exactness",
        dev < 1e-12 * scale.max(1.0),
        format!("node-refinement drift = {dev:.2e}"),
    )
}

fn diagonalization() -> CheckOutcome {
    let b = SplineBasis::make_basis(16, 4, KnotRule::Uniform).unwrap();
    let sys = match simdiag::diagonalize(&b, &CovKernel::Brownian, 2, 256) {
        Ok(s) => s,
        Err(e) => return outcome("simultaneous-diagonalization", false, e.to_string()),
    };
    let cov = sys.cov_transformed();
    let mut worst = 0.0f64;
    for i in 0..16 {
        for j in 0..16 {
            let want = if i == j { sys.sigma_pattern()[i] } else { 0.0 };
            worst = worst.max((cov[[i, j]] - want).abs());
        }
    }
    outcome(
        "simultaneous-diagonalization",
        worst < 1e-6,
        format!("max pattern deviation = {worst:.2e}, pbar = {}", sys.pbar()),
    )
}

fn penalty_kronecker() -> CheckOutcome {
    let b = SplineBasis::make_basis(6, 4, KnotRule::Uniform).unwrap();
    let sys = simdiag::diagonalize(&b, &CovKernel::Brownian, 2, 128).unwrap();
    let spec = PenaltySpec::roughness(&sys, 0.37, 5).unwrap();
    let dense = spec.kronecker_dense().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let bmat = Array2::from_shape_fn((6, 5), |_| rng.random::<f64>() - 0.5);
        let v = Array1::from_iter(bmat.t().iter().cloned());
        let quad = v.dot(&dense.dot(&v));
        let direct = spec.value(&bmat).unwrap();
        worst = worst.max((quad - direct).abs() / direct.abs().max(1e-300));
    }
    outcome(
        "penalty-kronecker-identity",
        worst < 1e-10,
        format!("max relative deviation = {worst:.2e}"),
    )
}

fn tangent_projection() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Array2::from_shape_fn((8, 6), |_| rng.random::<f64>() - 0.5);
    let pt = FixedRankPoint::from_dense(&a, 2).unwrap();
    let d = manifold::random_tangent(&pt, &mut rng);
    let dd = d.to_dense(&pt);
    let back = manifold::project_tangent(&pt, &dd).unwrap().to_dense(&pt);
    let dev = (&back - &dd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    outcome(
        "tangent-projection-idempotence",
        dev < 1e-10,
        format!("projection residual = {dev:.2e}"),
    )
}

fn dirichlet_identity() -> CheckOutcome {
    let sample = funreg::graph::sample_manifold(funreg::Manifold::Sphere { mu: 2 }, 50, 4).unwrap();
    let lap =
        funreg::graph::build_laplacian(&sample, 1.0, funreg::KernelG::ExpTrunc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = Array1::from_shape_fn(50, |_| rng.random::<f64>() - 0.5);
    let lhs = lap.dirichlet_form(&f);
    let mut rhs = 0.0;
    for v in 0..50 {
        for vp in 0..50 {
            let d = f[v] - f[vp];
            rhs += lap.weights()[[v, vp]] * d * d;
        }
    }
    rhs /= 2.0 * 50.0;
    let rel = (lhs - rhs).abs() / rhs.abs().max(1e-300);
    outcome(
        "dirichlet-identity",
        rel < 1e-10,
        format!("relative deviation = {rel:.2e}"),
    )
}

fn determinism() -> CheckOutcome {
    let sc = funreg::simgen::make_scenario(funreg::ScenarioPreset::SingleTaskSmooth, 11).unwrap();
    let b = SplineBasis::make_basis(8, 4, KnotRule::Uniform).unwrap();
    let sys = simdiag::diagonalize(&b, &CovKernel::Brownian, 2, 128).unwrap();
    let g1 = funreg::simgen::generate(&sc, &sys).unwrap();
    let g2 = funreg::simgen::generate(&sc, &sys).unwrap();
    let same = g1.data.x[0] == g2.data.x[0] && g1.data.y[0] == g2.data.y[0];
    outcome(
        "generation-determinism",
        same,
        if same {
            "bitwise identical datasets".into()
        } else {
            "datasets differ across identical seeds".into()
        },
    )
}
