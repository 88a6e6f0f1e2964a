//! Invariants checked on random inputs.

use proptest::prelude::*;

use halfcell::boundary::{mu_limit, BoundaryCell, MuSchedule};
use halfcell::corpus;
use halfcell::dsl::{parse, Env};
use halfcell::grid::{Mesh, TorusGrid};
use halfcell::halfspace::{period_average, rational, tilted};
use halfcell::interior::{lambda_torus, ErgodicParams};
use halfcell::mc::jackknife_ratio;
use halfcell::model::{LinCoef, OperatorSpec};
use halfcell::problem::{sample_interior, PointMap};
use halfcell::scheme::{interior_weights, DiscreteProblem, DriftStencil, SolverParams};

#[derive(Debug, Clone)]
enum Tree {
    Const(f64),
    Y(usize),
    Sin(Box<Tree>),
    Exp(Box<Tree>),
    Add(Box<Tree>, Box<Tree>),
    Sub(Box<Tree>, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    Neg(Box<Tree>),
}

impl Tree {
    fn render(&self) -> String {
        match self {
            Tree::Const(c) => format!("({c:e})"),
            Tree::Y(i) => format!("y{}", i + 1),
            Tree::Sin(t) => format!("sin(2*pi*{})", t.render()),
            Tree::Exp(t) => format!("exp(0.1*{})", t.render()),
            Tree::Add(a, b) => format!("({} + {})", a.render(), b.render()),
            Tree::Sub(a, b) => format!("({} - {})", a.render(), b.render()),
            Tree::Mul(a, b) => format!("{} * {}", a.render(), b.render()),
            Tree::Neg(t) => format!("-{}", t.render()),
        }
    }

    fn value(&self, y: [f64; 2]) -> f64 {
        match self {
            Tree::Const(c) => *c,
            Tree::Y(i) => y[*i],
            Tree::Sin(t) => (2.0 * std::f64::consts::PI * t.value(y)).sin(),
            Tree::Exp(t) => (0.1 * t.value(y)).exp(),
            Tree::Add(a, b) => a.value(y) + b.value(y),
            Tree::Sub(a, b) => a.value(y) - b.value(y),
            Tree::Mul(a, b) => a.value(y) * b.value(y),
            Tree::Neg(t) => -t.value(y),
        }
    }
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![(-3.0f64..3.0).prop_map(Tree::Const), (0usize..2).prop_map(Tree::Y)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| Tree::Sin(Box::new(t))),
            inner.clone().prop_map(|t| Tree::Exp(Box::new(t))),
            inner.clone().prop_map(|t| Tree::Neg(Box::new(t))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| Tree::Mul(Box::new(a), Box::new(b))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn parser_agrees_with_direct_evaluation(t in tree(), y1 in 0.0f64..1.0, y2 in 0.0f64..1.0) {
        let src = t.render();
        let got = parse(&src).unwrap().eval(&Env::new().with_y(&[y1, y2])).unwrap();
        let want = t.value([y1, y2]);
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()), "{src}: {got} vs {want}");
    }

    #[test]
    fn stencil_weights_are_monotone(
        a11 in 0.1f64..5.0,
        a22 in 0.1f64..5.0,
        t in -1.0f64..1.0,
        b1 in -20.0f64..20.0,
        b2 in -20.0f64..20.0,
        hybrid in any::<bool>(),
    ) {
        // On a square grid the rotated stencil stays monotone while |a12| ≤ min(a11, a22).
        let a12 = t * a11.min(a22);
        let c = LinCoef { a: [[a11, a12], [a12, a22]], b: [b1, b2], f: 0.0 };
        let drift = if hybrid { DriftStencil::Hybrid } else { DriftStencil::Upwind };
        let w = interior_weights(&c, 2, [0.05, 0.05], drift).unwrap();
        for (i, row) in w.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if (i, j) != (1, 1) {
                    prop_assert!(v >= -1e-9, "w[{i}][{j}] = {v}");
                }
            }
        }
    }

    #[test]
    fn discrete_comparison(seed in any::<u64>(), kappa in 0.5f64..1.5, spread in 1.0f64..3.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = TorusGrid::new(2, 8).unwrap();
        let op = OperatorSpec::PucciMinus { kappa, big_kappa: kappa * spread, f: parse("0").unwrap() };
        let n = grid.len();
        let base = DiscreteProblem {
            mesh: Mesh::Torus(grid.clone()),
            interior: sample_interior(&op, &Mesh::Torus(grid), &PointMap::Cell { x: [0.0; 2] }).unwrap(),
            zeroth: vec![0.3; n],
            source: vec![0.0; n],
            shift: [0.0; 2],
            boundary: None,
            lid_target: None,
            drift: DriftStencil::Hybrid,
        };
        let s1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = s1.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
        let solve = |s: Vec<f64>| {
            let mut p = base.clone();
            p.source = s;
            p.solve(&SolverParams::default()).unwrap().values
        };
        let (u1, u2) = (solve(s1), solve(s2));
        for (a, b) in u1.iter().zip(&u2) {
            prop_assert!(a <= &(b + 1e-9));
        }
    }

    #[test]
    fn rationals_are_recovered(p in 0i64..200, q in 1u64..200) {
        let (num, den) = rational(p as f64 / q as f64, 1000, 1e-12).unwrap();
        prop_assert_eq!(num as f64 * q as f64, p as f64 * den as f64);
        prop_assert!(den <= q);
    }

    #[test]
    fn jackknife_is_exact_on_proportional_data(c in -5.0f64..5.0, den in prop::collection::vec(0.1f64..3.0, 40..80)) {
        let num: Vec<f64> = den.iter().map(|d| c * d).collect();
        let (r, se) = jackknife_ratio(&num, &den, 20);
        prop_assert!((r - c).abs() < 1e-12 * (1.0 + c.abs()));
        prop_assert!(se < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn source_shift_moves_lambda(c in -2.0f64..2.0) {
        let grid = TorusGrid::new(1, 32).unwrap();
        let params = ErgodicParams::default();
        let op = |f: String| OperatorSpec::Linear(corpus::linear(&["1 + 0.5*sin(2*pi*y1)"], &["0.3"], &f, false));
        let base = lambda_torus(&op("cos(2*pi*y1)".into()), &grid, [0.0; 2], &params).unwrap().constant;
        let shifted = lambda_torus(&op(format!("cos(2*pi*y1) + ({c})")), &grid, [0.0; 2], &params).unwrap().constant;
        prop_assert!((shifted - (base - c)).abs() < 1e-6, "{base} {shifted}");
    }

    #[test]
    fn boundary_shift_moves_mu(c in -1.0f64..1.0) {
        let sched = MuSchedule { heights: vec![4.0], ..Default::default() };
        let mu = |g: String| {
            mu_limit(&BoundaryCell::new(corpus::drift_pair(1.0), corpus::neumann(&g), 1, 1, 1.0 / 32.0), &sched).unwrap().mu
        };
        let (a, b) = (mu("0.2".into()), mu(format!("0.2 + ({c})")));
        prop_assert!((b - (a - c)).abs() < 1e-6, "{a} {b}");
    }

    #[test]
    fn lattice_shifts_leave_averages_unchanged(alpha in 0.05f64..0.5, k1 in -3i32..3, k2 in -3i32..3) {
        let g = parse("cos(2*pi*y2) + 0.5*sin(2*pi*y1)").unwrap();
        let h = parse(&format!("cos(2*pi*(y2 + ({k2}))) + 0.5*sin(2*pi*(y1 + ({k1})))")).unwrap();
        let q = tilted(alpha);
        let (a, _) = period_average(&g, q, 30.0).unwrap();
        let (b, _) = period_average(&h, q, 30.0).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}
