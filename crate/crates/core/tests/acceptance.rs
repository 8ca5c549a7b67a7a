//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines always show.

mod common;

use std::fs;
use std::time::Instant;

use aroma::arow::{ArowModel, Covariance};
use aroma::data::TripletSampler;
use aroma::eval::{evaluate, precision_trace};
use aroma::linalg::{kron_quadratic_form, vec, vec_outer};
use aroma::synthetic::{random_triplets, SyntheticConfig, SyntheticTask};
use aroma::theory::{lemma3_check, matnorm_kl, matnorm_logpdf, thm1_bound, thm2_bound, MatNormal};
use aroma::{
    cli, Algo, DenseMatrix, DiagonalModel, FactoredMode, FactoredModel, Learner, LearnerParams, RunTrace, SparseVector,
    Triplet, UpdateMode,
};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, what: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn sv(values: &[f64]) -> SparseVector {
    SparseVector::from_dense(values).unwrap()
}

fn scalar_triplet() -> Triplet {
    Triplet::new(sv(&[1.0]), sv(&[1.0]), sv(&[0.0]))
}

fn scalar_hand_cases() -> Outcome {
    let tol = 1e-12;
    let mut d = DiagonalModel::new(1, 1, 1.0).unwrap();
    d.step(&scalar_triplet(), UpdateMode::Margin).unwrap();
    check(
        close(d.w.get(0, 0), 0.5, tol) && close(d.sigma.get(0, 0), 0.5, tol),
        format!("d-AROMA W'={} Σ'={}", d.w.get(0, 0), d.sigma.get(0, 0)),
    )?;
    let mut f = FactoredModel::new(1, 1, 1.0, FactoredMode::Standard).unwrap();
    f.step(&scalar_triplet()).unwrap();
    let (w, o, l) = (f.weights().get(0, 0), f.omega().get(0, 0), f.lambda().get(0, 0));
    check(close(w, 0.5, tol) && close(o, 0.5, tol) && close(l, 0.5, tol), format!("f-AROMA W'={w} Ω'={o} Λ'={l}"))?;
    let mut a = ArowModel::diagonal(1, 1.0).unwrap();
    a.update(&sv(&[1.0]), 1.0).unwrap();
    let Covariance::Diagonal(s) = &a.sigma else { unreachable!() };
    check(close(a.w[0], 0.5, tol) && close(s[0], 0.5, tol), format!("AROW w'={} σ'={}", a.w[0], s[0]))?;
    Ok("d-AROMA, f-AROMA and AROW first steps equal 0.5 within 1e-12".into())
}

fn vectorization_oracle() -> Outcome {
    let mut g = rng(2);
    let mut worst: f64 = 0.0;
    let runs = 20;
    for run in 0..runs {
        let (m, n) = (g.random_range(1..=6), g.random_range(1..=6));
        let r = [0.1, 1.0, 5.0][run % 3];
        let mut model = DiagonalModel::new(m, n, r).unwrap();
        let mut arow = ArowModel::diagonal(m * n, r).unwrap();
        for t in random_triplets(m, n, 200, 0.6, 100 + run as u64) {
            model.step(&t, UpdateMode::Margin).unwrap();
            arow.update(&vec_outer(&t.q, &t.difference().unwrap()), 1.0).unwrap();
        }
        let Covariance::Diagonal(sigma) = &arow.sigma else { unreachable!() };
        for (a, b) in vec(&model.w).iter().zip(&arow.w).chain(vec(&model.sigma).iter().zip(sigma)) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    check(worst <= 1e-10, format!("max deviation {worst:.3e} > 1e-10"))?;
    Ok(format!("{runs} runs × 200 steps, max deviation {worst:.2e}"))
}

fn covariance_invariants() -> Outcome {
    let mut g = rng(3);
    let runs = 120;
    let (mut min_pd, mut min_drop, mut max_asym) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for run in 0..runs {
        let (m, n) = (g.random_range(1..=8), g.random_range(1..=8));
        let r = 10f64.powf(g.random_range(-2.0..1.0));
        let mode = if run % 2 == 0 { FactoredMode::Standard } else { FactoredMode::Analysis };
        let stream = random_triplets(m, n, 50, 0.5, 500 + run as u64);
        let mut f = FactoredModel::new(m, n, r, mode).unwrap();
        let mut d = DiagonalModel::new(m, n, r).unwrap();
        for t in &stream {
            let (o, l) = (na(f.omega()), na(f.lambda()));
            f.step(t).unwrap();
            let (o2, l2) = (na(f.omega()), na(f.lambda()));
            max_asym = max_asym.max(f.omega().asymmetry()).max(f.lambda().asymmetry());
            min_pd = min_pd.min(min_eig(&o2)).min(min_eig(&l2));
            min_drop = min_drop.min(min_eig(&(o - o2))).min(min_eig(&(l - l2)));

            let before = d.sigma.clone();
            d.step(t, UpdateMode::Margin).unwrap();
            for (a, b) in before.data().iter().zip(d.sigma.data()) {
                check(*b > 0.0 && b <= a, format!("d-AROMA Σ entry {a} → {b} in run {run}"))?;
            }
        }
    }
    check(max_asym == 0.0, format!("asymmetry {max_asym:.2e}"))?;
    check(min_pd > -1e-9, format!("min eigenvalue {min_pd:.3e}"))?;
    check(min_drop > -1e-9, format!("Loewner decrease violated: {min_drop:.3e}"))?;
    Ok(format!(
        "{runs} f-AROMA runs (m,n ≤ 8, 50 steps): min eig {min_pd:.2e}, min eig of decrease {min_drop:.2e}; d-AROMA Σ positive and non-increasing"
    ))
}

/// Zero, the planted matrix when there is one (else another random draw),
/// and six U[−1,1] draws at scales 0.1, 1 and 10.
fn comparator_pool(
    g: &mut rand_chacha::ChaCha8Rng,
    m: usize,
    n: usize,
    planted: Option<&DenseMatrix>,
) -> Vec<DenseMatrix> {
    let mut pool = vec![DenseMatrix::zeros(m, n)];
    pool.push(planted.cloned().unwrap_or_else(|| random_dense(g, m, n)));
    for _ in 0..6 {
        let v = random_dense(g, m, n);
        for s in [0.1, 1.0, 10.0] {
            pool.push(v.scale(s));
        }
    }
    pool
}

fn theory_bounds() -> Outcome {
    let mut g = rng(4);
    let task = SyntheticTask::generate(&SyntheticConfig::default()).unwrap();
    let (mut runs, mut checks, mut tightest) = (0, 0, f64::INFINITY);
    let mut verify = |d_trace: &RunTrace, f_trace: &RunTrace, pool: &[DenseMatrix]| -> Result<(), String> {
        for v in pool {
            for (name, bound, trace) in
                [("thm1", thm1_bound(v, d_trace).unwrap(), d_trace), ("thm2", thm2_bound(v, f_trace).unwrap(), f_trace)]
            {
                let mistakes = trace.mistakes() as f64;
                check(
                    mistakes <= bound + 1e-8 * bound.abs().max(1.0),
                    format!("{name}: {mistakes} mistakes > bound {bound}"),
                )?;
                tightest = tightest.min(bound - mistakes);
                checks += 1;
            }
        }
        let l = lemma3_check(f_trace).unwrap();
        check(l.ok, format!("lemma: lhs {} vs ({}, {})", l.lhs, l.rhs_m, l.rhs_n))?;
        runs += 1;
        Ok(())
    };
    for run in 0..16u64 {
        let (m, n) = (g.random_range(1..=6), g.random_range(1..=6));
        let r = [0.05, 0.3, 1.0, 4.0][run as usize % 4];
        let stream = random_triplets(m, n, 50, 0.6, 900 + run);
        let d_trace = DiagonalModel::new(m, n, r).unwrap().train(&stream, UpdateMode::Margin).unwrap();
        let f_trace = FactoredModel::new(m, n, r, FactoredMode::Analysis).unwrap().train(&stream).unwrap();
        let pool = comparator_pool(&mut g, m, n, None);
        verify(&d_trace, &f_trace, &pool)?;
    }
    for run in 0..6u64 {
        let r = [0.01, 0.1, 1.0][run as usize % 3];
        let stream = TripletSampler::new(&task.train, run).unwrap().take_triplets(300).unwrap();
        let d = task.train.dim();
        let d_trace = DiagonalModel::new(d, d, r).unwrap().train(&stream, UpdateMode::Margin).unwrap();
        let f_trace = FactoredModel::new(d, d, r, FactoredMode::Analysis).unwrap().train(&stream).unwrap();
        let pool = comparator_pool(&mut g, d, d, Some(&task.v_star));
        verify(&d_trace, &f_trace, &pool)?;
    }
    check(runs >= 20, format!("only {runs} runs"))?;
    Ok(format!(
        "{runs} runs × 20 comparators, {checks} bound checks, smallest slack {tightest:.3}; lemma held on every run"
    ))
}

fn kl_and_density_oracles() -> Outcome {
    let mut g = rng(5);
    let mut worst: f64 = 0.0;
    for m in 1..=3 {
        for n in 1..=3 {
            let (o1, l1, o2, l2) =
                (random_spd(&mut g, n), random_spd(&mut g, m), random_spd(&mut g, n), random_spd(&mut g, m));
            let (w1, w2, x) = (random_dense(&mut g, m, n), random_dense(&mut g, m, n), random_dense(&mut g, m, n));
            let got = matnorm_kl(MatNormal::new(&w1, &o1, &l1), MatNormal::new(&w2, &o2, &l2)).unwrap();
            let (c1, c2) = (na(&o1).kronecker(&na(&l1)), na(&o2).kronecker(&na(&l2)));
            let want = gaussian_kl(&col_stack(&na(&w1)), &c1, &col_stack(&na(&w2)), &c2);
            check(close(got, want, 1e-8), format!("KL {m}×{n}: {got} vs {want}"))?;
            let got = matnorm_logpdf(&x, &w1, &o1, &l1).unwrap();
            let want = gaussian_logpdf(&col_stack(&na(&x)), &col_stack(&na(&w1)), &c1);
            check(close(got, want, 1e-8), format!("log density {m}×{n}: {got} vs {want}"))?;
            worst = worst.max((got - want).abs());
        }
    }
    Ok(format!("KL and log density agree for m,n ∈ {{1,2,3}}; max density deviation {worst:.1e}"))
}

fn kronecker_identity() -> Outcome {
    let mut g = rng(6);
    let mut worst: f64 = 0.0;
    for m in 1..=4 {
        for n in 1..=4 {
            for _ in 0..5 {
                let (lambda, omega) = (random_spd(&mut g, m), random_spd(&mut g, n));
                let (q, p) = (random_sparse(&mut g, m), random_sparse(&mut g, n));
                let x = col_stack(&(dense(&q) * dense(&p).transpose()));
                let want = (x.transpose() * na(&omega).kronecker(&na(&lambda)) * &x)[(0, 0)];
                let got = kron_quadratic_form(&q, &lambda, &p, &omega).unwrap();
                check(close(got, want, 1e-10), format!("{m}×{n}: {got} vs {want}"))?;
                worst = worst.max((got - want).abs() / want.abs().max(1.0));
            }
        }
    }
    Ok(format!("80 cases with m,n ≤ 4, max relative deviation {worst:.1e}"))
}

const TASK_SEEDS: [u64; 5] = [7, 1, 2, 3, 4];
const SAMPLER_SEED: u64 = 1;
const BUDGET: usize = 5000;
const CHECKPOINTS: [usize; 10] = [100, 250, 500, 750, 1000, 1500, 2000, 3000, 4000, 5000];
const SYNTH_R: f64 = 0.01;

fn tasks() -> Vec<SyntheticTask> {
    TASK_SEEDS
        .iter()
        .map(|&seed| SyntheticTask::generate(&SyntheticConfig { seed, ..SyntheticConfig::default() }).unwrap())
        .collect()
}

fn learner(algo: Algo, dim: usize, r: f64) -> Learner {
    Learner::new(algo, dim, dim, LearnerParams { r, ..LearnerParams::default() }).unwrap()
}

/// Seed-averaged precision@k trace.
fn mean_trace(tasks: &[SyntheticTask], algo: Algo, r: f64, k: usize, schedule: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; schedule.len()];
    let mut finals = Vec::new();
    for task in tasks {
        let mut l = learner(algo, task.train.dim(), r);
        let mut sampler = TripletSampler::new(&task.train, SAMPLER_SEED).unwrap();
        let trace = precision_trace(&mut l, &mut sampler, &task.test, schedule, k).unwrap();
        for (s, (_, p)) in sum.iter_mut().zip(&trace) {
            *s += p;
        }
        finals.push(trace.last().unwrap().1);
    }
    (sum.iter().map(|s| s / tasks.len() as f64).collect(), finals)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_retrieval(tasks: &[SyntheticTask]) -> Outcome {
    let identity: Vec<f64> = tasks
        .iter()
        .map(|t| evaluate(&DenseMatrix::identity(t.train.dim()), &t.test, &[1]).unwrap().precision_at_k[0])
        .collect();
    let (pa_curve, pa) = mean_trace(tasks, Algo::Pa, SYNTH_R, 1, &CHECKPOINTS);
    let (f_curve, f) = mean_trace(tasks, Algo::FAroma, SYNTH_R, 1, &CHECKPOINTS);
    let (_, d) = mean_trace(tasks, Algo::DAroma, SYNTH_R, 1, &[BUDGET]);
    let (id, pa_m, f_m, d_m) = (mean(&identity), mean(&pa), mean(&f), mean(&d));
    let summary =
        format!("mean p@1 over {} tasks: f {f_m:.3}, d {d_m:.3}, PA {pa_m:.3}, identity {id:.3}", tasks.len());
    for (name, v) in [("f-AROMA", f_m), ("d-AROMA", d_m)] {
        check(v > id && v > pa_m, format!("{name} does not beat both baselines; {summary}"))?;
    }
    let first_reach =
        |curve: &[f64], target: f64| curve.iter().position(|&p| p >= target - 1e-12).map(|i| CHECKPOINTS[i]);
    let pa_final = *pa_curve.last().unwrap();
    let mut reach = Vec::new();
    for frac in [0.25, 0.5, 0.75, 1.0] {
        let target = id + frac * (pa_final - id);
        let (fr, pr) = (first_reach(&f_curve, target), first_reach(&pa_curve, target));
        let ok = match (fr, pr) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        check(ok, format!("target {target:.3}: f-AROMA at {fr:?}, PA at {pr:?}"))?;
        reach.push(format!("{target:.3}: {}/{}", fr.unwrap(), pr.unwrap()));
    }
    Ok(format!("{summary}; first checkpoint reaching target (f/PA) {}", reach.join(", ")))
}

fn r_robustness(tasks: &[SyntheticTask]) -> Outcome {
    let rs = [0.01, 0.1, 1.0, 10.0];
    let mut parts = Vec::new();
    for algo in [Algo::FAroma, Algo::DAroma] {
        let p10: Vec<f64> = rs.iter().map(|&r| mean(&mean_trace(tasks, algo, r, 10, &[BUDGET]).1)).collect();
        let (lo, hi) = (p10.iter().copied().fold(f64::INFINITY, f64::min), p10.iter().copied().fold(0.0, f64::max));
        let spread = (hi - lo) / hi;
        let cells = p10.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join("/");
        check(spread < 0.2, format!("{algo}: p@10 over r = {cells}, relative spread {spread:.3} ≥ 0.2"))?;
        parts.push(format!("{algo} p@10 {cells} (spread {:.1}%)", 100.0 * spread));
    }
    Ok(format!("r ∈ {{0.01, 0.1, 1, 10}}: {}", parts.join("; ")))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let task =
        SyntheticTask::generate(&SyntheticConfig { train: 120, test: 60, ..SyntheticConfig::default() }).unwrap();
    let (train, eval) = (dir.path().join("train.txt"), dir.path().join("eval.txt"));
    fs::write(&train, task.train.to_text()).unwrap();
    fs::write(&eval, task.test.to_text()).unwrap();
    let p = |name: String| dir.path().join(name).to_str().unwrap().to_string();
    let mut compared = 0;
    for algo in Algo::ALL.iter().filter(|a| **a != Algo::ArowVec) {
        let mut artifacts = Vec::new();
        for rep in 0..2 {
            let (model, trace, report) =
                (p(format!("{algo}{rep}.json")), p(format!("{algo}{rep}.trace")), p(format!("{algo}{rep}.csv")));
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let train_args = [
                "aroma",
                "train",
                "--algo",
                algo.name(),
                "--train",
                train.to_str().unwrap(),
                "--iters",
                "500",
                "--seed",
                "11",
                "--r",
                "0.1",
                "--model-out",
                &model,
                "--trace-out",
                &trace,
            ];
            check(
                cli::run(train_args, &mut out, &mut err) == 0,
                format!("{algo} train failed: {}", String::from_utf8_lossy(&err)),
            )?;
            let eval_args =
                ["aroma", "eval", "--model", &model, "--eval", eval.to_str().unwrap(), "--k", "1,10", "--out", &report];
            check(
                cli::run(eval_args, &mut out, &mut err) == 0,
                format!("{algo} eval failed: {}", String::from_utf8_lossy(&err)),
            )?;
            artifacts.push([fs::read(&model).unwrap(), fs::read(&trace).unwrap(), fs::read(&report).unwrap()]);
        }
        check(artifacts[0] == artifacts[1], format!("{algo}: artifacts differ between identical runs"))?;
        compared += 3;
    }
    Ok(format!("{compared} artifacts (model, trace, report per learner) byte-identical across repeated runs"))
}

fn main() {
    let started = Instant::now();
    let synthetic = tasks();
    let criteria: Vec<Criterion<'_>> = vec![
        ("scalar hand cases", Box::new(scalar_hand_cases)),
        ("vectorization oracle", Box::new(vectorization_oracle)),
        ("covariance invariants", Box::new(covariance_invariants)),
        ("executable theory", Box::new(theory_bounds)),
        ("KL/density oracles", Box::new(kl_and_density_oracles)),
        ("Kronecker quadratic form", Box::new(kronecker_identity)),
        ("synthetic retrieval", Box::new(|| synthetic_retrieval(&synthetic))),
        ("r-robustness", Box::new(|| r_robustness(&synthetic))),
        ("CLI determinism", Box::new(cli_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.2}s) — {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.2}s) — {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
