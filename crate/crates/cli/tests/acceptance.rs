//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treediff::linalg::dot;
use treediff::{
    eig_sym, fit, generate_synthetic, mce, pbe, principal_angle, sqrt_psd, tbig, tbig_exact,
    DepthLimit, FitConfig, GradientField, InputLaw, Measure, OuterProduct, RegressionTree,
    SymmetricMatrix, SyntheticFunction, SyntheticSpec,
};
use treediff_cli::experiment::{self, means, medians, ExperimentId, ExperimentSpec, ResultRow};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

// 1
fn linear_exactness() -> Outcome {
    let a = [0.6, -0.4];
    // 16 x 16 grid of cell centres: every median split lands on a dyadic
    // threshold, so the tree is the regular depth-4 partition.
    let mut rows = Vec::new();
    for i in 0..16 {
        for j in 0..16 {
            rows.push(vec![(i as f64 + 0.5) / 16.0, (j as f64 + 0.5) / 16.0]);
        }
    }
    let y = rows.iter().map(|r| dot(&a, r)).collect();
    let d = treediff::Dataset::from_rows(&rows, y).map_err(|e| e.to_string())?;
    let mut tree =
        fit(&d, &FitConfig::cyclic_median(DepthLimit::Fixed(4))).map_err(|e| e.to_string())?;
    ensure(
        tree.depth() == 4 && tree.n_leaves() == 16,
        "expected the full depth-4 partition",
    )?;
    // population mean of a linear function over a box is its value at the centre
    tree.set_values_with(|n| (0..2).map(|k| a[k] * (n.lower[k] + n.upper[k]) / 2.0).sum());
    let gf = GradientField::extract(tree);
    let mut worst: f64 = 0.0;
    for node in gf.tree().nodes() {
        if let Some(s) = &node.split {
            let g = treediff::gradfield::split_gamma(gf.tree(), node).ok_or("missing gamma")?;
            worst = worst.max((g - a[s.variable]).abs());
        }
    }
    ensure(worst <= 1e-12, format!("split gamma off by {worst:e}"))?;
    let mut leaf_err: f64 = 0.0;
    for leaf in gf.tree().leaves() {
        leaf_err = leaf_err.max(max_abs_diff(gf.node_gradient(leaf.index), &a));
    }
    ensure(
        leaf_err <= 1e-12,
        format!("leaf gradient off by {leaf_err:e}"),
    )?;
    Ok(format!(
        "max split error {worst:.1e}, max leaf error {leaf_err:.1e}"
    ))
}

fn notation_tree() -> RegressionTree {
    let mut t = RegressionTree::single_leaf(2, 0.5, 40);
    t.split_leaf(0, 0, 0.5, (0.2, 20), (0.8, 20)).unwrap();
    t.split_leaf(1, 1, 0.4, (0.1, 10), (0.3, 10)).unwrap();
    t.split_leaf(2, 1, 0.6, (1.0, 10), (0.6, 10)).unwrap();
    t
}

// 2
fn notation() -> Outcome {
    let t = notation_tree();
    let n5 = t.node(5);
    ensure(
        n5.lower == [0.5, 0.0] && n5.upper == [1.0, 0.6],
        format!("cell 5 is {:?}..{:?}", n5.lower, n5.upper),
    )?;
    ensure(t.nodes_at_depth(1) == [1, 2], "depth-1 nodes")?;
    ensure(t.nodes_at_depth(2) == [3, 4, 5, 6], "depth-2 nodes")?;
    let x = [0.75, 0.3];
    let b1 = t.locate(&x, Some(1));
    let b2 = t.locate(&x, Some(2));
    ensure(
        b1.index == 2 && b1.reached_depth,
        format!("depth-1 node {}", b1.index),
    )?;
    ensure(
        b2.index == 5 && b2.reached_depth,
        format!("depth-2 node {}", b2.index),
    )?;
    Ok("cell bounds, depth sets and located nodes match".into())
}

fn log_ridge_tree(seed: u64) -> Result<GradientField, String> {
    let spec = SyntheticSpec::random(
        SyntheticFunction::LogRidge,
        3,
        3,
        0.0,
        InputLaw::UniformCube,
        seed,
    )
    .map_err(|e| e.to_string())?;
    let d = generate_synthetic(&spec, 10_000).map_err(|e| e.to_string())?;
    Ok(GradientField::extract(
        fit(&d, &FitConfig::cart(8)).map_err(|e| e.to_string())?,
    ))
}

// 3
fn mce_pbe_agreement() -> Outcome {
    let gf = log_ridge_tree(1)?;
    let u = Measure::uniform(3);
    let exact = pbe(&gf, &OuterProduct, &u).map_err(|e| e.to_string())?;
    let ms = [100usize, 1_000, 10_000, 100_000, 1_000_000];
    let seeds = 8;
    let mut gaps = Vec::new();
    for &m in &ms {
        let mut sq = 0.0;
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * s + m as u64);
            let est = mce(&gf, &OuterProduct, &u, m, &mut rng).map_err(|e| e.to_string())?;
            let rel = est.frobenius_distance(&exact) / exact.frobenius_norm();
            sq += rel * rel;
        }
        gaps.push((sq / seeds as f64).sqrt());
    }
    let xs: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 5.0, ys.iter().sum::<f64>() / 5.0);
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let last = gaps[4];
    ensure((slope + 0.5).abs() <= 0.15, format!("slope {slope:.3}"))?;
    ensure(last < 0.01, format!("gap at 1e6 is {last:.4}"))?;
    Ok(format!(
        "slope {slope:.3}, gap at M=1e6 {:.3}%",
        100.0 * last
    ))
}

// 4
fn tbig_exact_agreement() -> Outcome {
    let gf = log_ridge_tree(1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    for pair in 0..20u64 {
        let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        let r: Vec<f64> = (0..3).map(|_| rng.random()).collect();
        let exact = tbig_exact(&gf, &x, &r).map_err(|e| e.to_string())?;
        let mc = tbig(&gf, &x, &r, 1_000_000, pair).map_err(|e| e.to_string())?;
        let scale = exact.ig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rel = max_abs_diff(&mc.ig, &exact.ig) / scale;
        worst = worst.max(rel);
        ensure(
            rel <= 0.005,
            format!("pair {pair}: relative error {rel:.4}"),
        )?;
        let same = tbig(&gf, &x, &x, 1000, pair).map_err(|e| e.to_string())?;
        ensure(same.ig.iter().all(|&v| v == 0.0), "tbig(x, x) is not zero")?;
    }
    Ok(format!("worst relative error {:.3}%", 100.0 * worst))
}

fn strictly_decreasing_medians(
    rows: &[ResultRow],
    metric: &str,
) -> Result<Vec<(usize, Vec<f64>)>, String> {
    let med = medians(rows, metric);
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for ((p, _n, _, _), v) in med {
        match out.iter_mut().find(|(q, _)| *q == p) {
            Some((_, vs)) => vs.push(v),
            None => out.push((p, vec![v])),
        }
    }
    for (p, vs) in &out {
        ensure(
            vs.windows(2).all(|w| w[1] < w[0]),
            format!("P={p}: medians {vs:.3?} not strictly decreasing"),
        )?;
    }
    Ok(out)
}

fn fmt_trend(trend: &[(usize, Vec<f64>)]) -> String {
    trend
        .iter()
        .map(|(p, v)| {
            format!(
                "P={p}: {}",
                v.iter()
                    .map(|x| format!("{x:.3}"))
                    .collect::<Vec<_>>()
                    .join(" > ")
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

// 5
fn subspace_trend() -> Outcome {
    let rows = experiment::run(&ExperimentSpec::defaults(ExperimentId::SubspaceLowdim))
        .map_err(|e| e.to_string())?;
    let trend = strictly_decreasing_medians(&rows, "angle")?;
    let p3 = trend.iter().find(|(p, _)| *p == 3).ok_or("no P=3 rows")?.1[2];
    ensure(p3 < 0.35, format!("median angle at P=3, N=1e4 is {p3:.3}"))?;
    Ok(fmt_trend(&trend))
}

// 6
fn sparse_energy() -> Outcome {
    let rows = experiment::run(&ExperimentSpec::defaults(ExperimentId::SubspaceSparse))
        .map_err(|e| e.to_string())?;
    let med = medians(&rows, "energy");
    let e = med.first().ok_or("no rows")?.1;
    ensure(e > 0.9, format!("median energy {e:.3}"))?;
    Ok(format!("median energy on the support {e:.4}"))
}

// 7
fn depth_effect() -> Outcome {
    let rows = experiment::run(&ExperimentSpec::defaults(ExperimentId::GradConvergence))
        .map_err(|e| e.to_string())?;
    let m = means(&rows, "angle");
    let get = |n: usize, depth: usize| {
        m.iter()
            .find(|((_, nn, d, _), _)| *nn == n && *d == depth)
            .map(|x| x.1)
            .ok_or(format!("no cell n={n} depth={depth}"))
    };
    let (deep, shallow, deep_small) = (get(100_000, 12)?, get(100_000, 4)?, get(1_000, 12)?);
    ensure(
        deep < shallow,
        format!("depth 12 {deep:.3} vs depth 4 {shallow:.3}"),
    )?;
    ensure(
        deep < deep_small,
        format!("depth 12: N=1e5 {deep:.3} vs N=1e3 {deep_small:.3}"),
    )?;
    Ok(format!(
        "N=1e5: depth 12 {deep:.3} < depth 4 {shallow:.3}; depth 12 N=1e3 {deep_small:.3}"
    ))
}

// 8
fn noise_trend() -> Outcome {
    let rows = experiment::run(&ExperimentSpec::defaults(ExperimentId::Noise))
        .map_err(|e| e.to_string())?;
    Ok(fmt_trend(&strictly_decreasing_medians(&rows, "angle")?))
}

// 9
fn correlation() -> Outcome {
    let rows = experiment::run(&ExperimentSpec::defaults(ExperimentId::Correlation))
        .map_err(|e| e.to_string())?;
    let m = means(&rows, "angle");
    let at = |rho: f64| {
        m.iter()
            .find(|((_, _, _, r), _)| *r == rho)
            .map(|x| x.1)
            .ok_or(format!("no rho={rho}"))
    };
    let (a0, a5, a9, a99) = (at(0.0)?, at(0.5)?, at(0.9)?, at(0.99)?);
    ensure(
        a99 > a0,
        format!("rho=0.99 {a99:.3} not above rho=0 {a0:.3}"),
    )?;
    ensure(
        (a5 - a0).abs() <= 0.2 * a0,
        format!("rho=0.5 {a5:.3} vs rho=0 {a0:.3}"),
    )?;
    Ok(format!(
        "mean angle rho=0 {a0:.3}, 0.5 {a5:.3}, 0.9 {a9:.3}, 0.99 {a99:.3}"
    ))
}

// 10
fn linalg_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_rec: f64 = 0.0;
    for case in 0..100 {
        let p = 1 + case % 12;
        let a = SymmetricMatrix::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let eig = eig_sym(&a).map_err(|e| e.to_string())?;
        let norm = a.max_abs();
        let rec = eig.reconstruct();
        let rec_err = max_abs_diff(rec.as_slice(), a.as_slice());
        worst_rec = worst_rec.max(rec_err / norm);
        ensure(
            rec_err <= 1e-9 * norm,
            format!("case {case}: reconstruction {rec_err:e}"),
        )?;
        for i in 0..p {
            for j in 0..p {
                let d = dot(&eig.vectors[i], &eig.vectors[j]) - if i == j { 1.0 } else { 0.0 };
                ensure(
                    d.abs() <= 1e-10,
                    format!("case {case}: orthogonality {d:e}"),
                )?;
            }
        }
        let tr = eig.values.iter().sum::<f64>() - a.trace();
        ensure(
            tr.abs() <= 1e-9 * norm * p as f64,
            format!("case {case}: trace {tr:e}"),
        )?;
        ensure(
            eig.values.windows(2).all(|w| w[0] >= w[1]),
            "eigenvalues not descending",
        )?;
        // square root of the PSD matrix A Aᵀ
        let prod = a.matmul(&a);
        let psd = SymmetricMatrix::from_fn(p, |i, j| prod[i * p + j]);
        let l = sqrt_psd(&psd).map_err(|e| e.to_string())?;
        let ll = l.matmul(&l);
        let e = max_abs_diff(&ll, psd.as_slice());
        ensure(
            e <= 1e-8 * psd.max_abs(),
            format!("case {case}: sqrt identity {e:e}"),
        )?;
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let e1 = vec![1.0, 0.0];
    let cases = [
        (vec![1.0, 0.0], 0.0),
        (vec![0.0, 1.0], std::f64::consts::FRAC_PI_2),
        (vec![s, s], std::f64::consts::FRAC_PI_4),
    ];
    for (v, want) in cases {
        let got = principal_angle(std::slice::from_ref(&e1), &[v]).map_err(|e| e.to_string())?;
        ensure(
            (got - want).abs() <= 1e-12,
            format!("principal angle {got} vs {want}"),
        )?;
    }
    Ok(format!(
        "100 matrices, worst relative reconstruction {worst_rec:.1e}"
    ))
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_treediff"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

// 11
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let spec = SyntheticSpec::random(
        SyntheticFunction::RidgeCosine,
        3,
        3,
        0.05,
        InputLaw::UniformCube,
        3,
    )
    .map_err(|e| e.to_string())?;
    let d = generate_synthetic(&spec, 2000).map_err(|e| e.to_string())?;
    let mut csv = String::from("x1,x2,x3,y\n");
    for (r, y) in d.rows().zip(d.response()) {
        csv.push_str(&format!("{:?},{:?},{:?},{:?}\n", r[0], r[1], r[2], y));
    }
    fs::write(p("data.csv"), csv).map_err(|e| e.to_string())?;

    let mut compared = 0;
    for (run, threads) in [("a", "1"), ("b", "4")] {
        let o = |name: &str| p(&format!("{run}-{name}"));
        let data = p("data.csv");
        let cmds: Vec<Vec<String>> = vec![
            vec![
                "fit",
                "--input",
                &data,
                "--target",
                "y",
                "--max-depth",
                "8",
                "--seed",
                "1",
                "--output",
                &o("tree.json"),
            ],
            vec![
                "fit",
                "--input",
                &data,
                "--target",
                "y",
                "--trees",
                "8",
                "--max-depth",
                "6",
                "--seed",
                "2",
                "--output",
                &o("forest.json"),
            ],
            vec![
                "fit",
                "--input",
                &data,
                "--target",
                "y",
                "--mode",
                "cyclic",
                "--output",
                &o("cyclic.json"),
            ],
            vec![
                "grad",
                "--model",
                &o("forest.json"),
                "--input",
                &data,
                "--output",
                &o("grad.csv"),
            ],
            vec![
                "tbas",
                "--model",
                &o("tree.json"),
                "--input",
                &data,
                "--rotate",
                &o("rot.csv"),
                "--output",
                &o("tbas.json"),
            ],
            vec![
                "tbas",
                "--model",
                &o("forest.json"),
                "--measure",
                "uniform",
                "--samples",
                "5000",
                "--seed",
                "4",
                "--output",
                &o("tbas-mc.json"),
            ],
            vec![
                "tbig",
                "--model",
                &o("forest.json"),
                "--input",
                &data,
                "--row",
                "7",
                "--seed",
                "5",
                "--output",
                &o("tbig.json"),
            ],
            vec![
                "tbig",
                "--model",
                &o("tree.json"),
                "--input",
                &data,
                "--row",
                "7",
                "--exact",
                "--output",
                &o("tbig-exact.json"),
            ],
            vec![
                "rotate",
                "--model",
                &o("tree.json"),
                "--input",
                &data,
                "--method",
                "random",
                "--seed",
                "6",
                "--output",
                &o("rand.csv"),
            ],
            vec![
                "experiment",
                "rotation-cv",
                "--reps",
                "3",
                "--n",
                "300",
                "--folds",
                "3",
                "--output",
                &o("exp.csv"),
            ],
            vec![
                "experiment",
                "grad-convergence",
                "--reps",
                "4",
                "--n",
                "500,2000",
                "--output",
                &o("exp2.csv"),
            ],
        ]
        .into_iter()
        .map(|c| c.into_iter().map(String::from).collect())
        .collect();
        for c in &cmds {
            run_cli(&c.iter().map(String::as_str).collect::<Vec<_>>(), threads)?;
        }
    }
    for name in [
        "tree.json",
        "forest.json",
        "cyclic.json",
        "grad.csv",
        "tbas.json",
        "rot.csv",
        "tbas-mc.json",
        "tbig.json",
        "tbig-exact.json",
        "rand.csv",
        "exp.csv",
        "exp2.csv",
    ] {
        let a = fs::read(p(&format!("a-{name}"))).map_err(|e| e.to_string())?;
        let b = fs::read(p(&format!("b-{name}"))).map_err(|e| e.to_string())?;
        ensure(
            !a.is_empty() && a == b,
            format!("{name} differs between runs"),
        )?;
        compared += 1;
    }
    Ok(format!(
        "{compared} output files byte-identical across runs with 1 and 4 threads"
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion {
            id: 1,
            name: "linear exactness",
            limit: secs(1),
            check: linear_exactness,
        },
        Criterion {
            id: 2,
            name: "notation conformance",
            limit: None,
            check: notation,
        },
        Criterion {
            id: 3,
            name: "partition vs Monte Carlo agreement",
            limit: secs(60),
            check: mce_pbe_agreement,
        },
        Criterion {
            id: 4,
            name: "integrated gradient vs exact path",
            limit: secs(60),
            check: tbig_exact_agreement,
        },
        Criterion {
            id: 5,
            name: "subspace recovery trend",
            limit: secs(600),
            check: subspace_trend,
        },
        Criterion {
            id: 6,
            name: "sparse high-dimension energy",
            limit: secs(300),
            check: sparse_energy,
        },
        Criterion {
            id: 7,
            name: "depth effect",
            limit: None,
            check: depth_effect,
        },
        Criterion {
            id: 8,
            name: "noise robustness",
            limit: None,
            check: noise_trend,
        },
        Criterion {
            id: 9,
            name: "correlation degradation",
            limit: None,
            check: correlation,
        },
        Criterion {
            id: 10,
            name: "linear algebra suite",
            limit: secs(5),
            check: linalg_suite,
        },
        Criterion {
            id: 11,
            name: "determinism",
            limit: None,
            check: determinism,
        },
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.contains(&c.id))
    {
        let start = Instant::now();
        let mut outcome = (c.check)();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!(
                    "took {:.2}s, limit {}s",
                    elapsed.as_secs_f64(),
                    limit.as_secs()
                ));
            }
        }
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} criterion {:>2} ({}): {detail} [{:.2}s]",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
