//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_CRITERIA=1,2,9` runs a subset.

#[path = "../common/mod.rs"]
mod common;
mod oracles;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use opcov::covest::{apg_fit, build_design, lambda_max, loss_and_grad, DesignCache, FitOptions};
use opcov::eigen::{l2_eigen, matrix_rank};
use opcov::kernel::kernel_eval;
use opcov::meanfit::{default_lambda_grid, fit_mean, MeanEstimate};
use opcov::simulate::{generate_dataset, run_experiment, ExperimentReport, SimConfig};
use opcov::spectral::{prox, svec, svec_inv, sym_eig, Penalty, DEFAULT_RANK_TOL};
use opcov::{Curve, FunctionalDataset, KernelSpec, QuadratureRule};
use opcov_cli::io::read_long_csv;
use opcov_cli::ModelFile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// State shared between criteria.
#[derive(Default)]
struct Shared {
    benchmark_m5: Option<ExperimentReport>,
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn(&mut Shared) -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "kernel reproducing property", limit: Some(Duration::from_secs(10)), run: kernel_reproducing },
        Criterion { id: 2, name: "proximal operators vs oracle", limit: Some(Duration::from_secs(60)), run: prox_oracle },
        Criterion { id: 3, name: "gradient and Hessian checks", limit: None, run: gradient_check },
        Criterion { id: 4, name: "optimizer vs reference solver", limit: Some(Duration::from_secs(120)), run: optimizer_reference },
        Criterion { id: 5, name: "eigen-decomposition", limit: None, run: eigen_checks },
        Criterion { id: 6, name: "benchmark n=200 m=5, 30 replicates", limit: Some(Duration::from_secs(30 * 60)), run: benchmark_m5 },
        Criterion { id: 7, name: "benchmark n=200 m=20, 15 replicates", limit: Some(Duration::from_secs(45 * 60)), run: benchmark_m20 },
        Criterion { id: 8, name: "error decreases with sample size", limit: None, run: rate_sanity },
        Criterion { id: 9, name: "CLI round trip and reproducibility", limit: None, run: cli_round_trip },
    ];
    let selected: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());

    let mut shared = Shared::default();
    let mut failures = 0;
    let mut ran = 0;
    for c in &criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&c.id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| (c.run)(&mut shared)))
            .unwrap_or_else(|p| {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(format!("panicked: {}", msg.unwrap_or_default()))
            });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(msg), Some(limit)) if elapsed > limit => {
                Err(format!("{msg}; took {:.1} s, over the {} s limit", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (o, _) => o,
        };
        let (tag, msg) = match outcome {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failures += 1;
                ("FAIL", m)
            }
        };
        println!("{tag} criterion {} ({}): {msg} [{:.1} s]", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn random_sym(rng: &mut ChaCha8Rng, q: usize, r: f64) -> Array2<f64> {
    let a = Array2::from_shape_fn((q, q), |_| rng.random_range(-r..r));
    (&a + &a.t()) * 0.5
}

fn kernel_reproducing(_: &mut Shared) -> Outcome {
    let spec = KernelSpec::default();
    let pts: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    let mut worst = 0.0f64;
    for &s in &pts {
        for &t in &pts {
            let k = kernel_eval(&spec, s, t).map_err(|e| e.to_string())?;
            worst = worst.max((oracles::rkhs_inner(s, t) - k).abs());
        }
    }
    ensure!(worst <= 1e-8, "max deviation {worst:.3e} exceeds 1e-8");
    Ok(format!("max |<K(s,.), K(t,.)> - K(s,t)| = {worst:.2e} over 100 pairs (tol 1e-8)"))
}

fn prox_oracle(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_gap, mut worst_eig, mut count) = (0.0f64, f64::INFINITY, 0);
    for (q, n) in [(2, 200), (3, 50)] {
        for _ in 0..n {
            let b = random_sym(&mut rng, q, 3.0);
            for nu in [0.1, 0.5, 2.0] {
                for pen in Penalty::ALL {
                    let out = prox(pen, &b, nu).map_err(|e| e.to_string())?;
                    let got = 0.5 * (&out.matrix - &b).mapv(|v| v * v).sum() + nu * out.penalty;
                    let oracle = if q == 2 {
                        oracles::prox_2x2_minimum(pen, &b, nu)
                    } else {
                        oracles::prox_3x3_minimum(pen, &b, nu, &mut rng)
                    };
                    let gap = (got - oracle).abs();
                    ensure!(gap <= 1e-6, "{pen:?}, nu={nu}, {q}x{q}: objective {got} vs oracle {oracle}");
                    worst_gap = worst_gap.max(gap);
                    if pen.is_psd() {
                        let min_eig = *sym_eig(&out.matrix).map_err(|e| e.to_string())?.values.last().unwrap();
                        ensure!(min_eig >= -1e-10, "{pen:?}: output has eigenvalue {min_eig:e}");
                        worst_eig = worst_eig.min(min_eig);
                    }
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} prox calls, max objective gap {worst_gap:.2e} (tol 1e-6), min PSD eigenvalue {worst_eig:.2e} (tol -1e-10)"))
}

/// `n` curves of 2..=`max_m` points with zero mean.
fn small_instance(rng: &mut ChaCha8Rng, n: usize, min_m: usize, max_m: usize, gram_tol: f64) -> DesignCache {
    let curves = (0..n)
        .map(|i| {
            let m = rng.random_range(min_m..=max_m);
            let a: f64 = rng.random_range(-1.0..1.0);
            let t: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let y = t.iter().map(|&x| a * (1.0 + x) + 0.3 * rng.random_range(-1.0..1.0)).collect();
            Curve::new(i.to_string(), t, y).unwrap()
        })
        .collect();
    build_design(&FunctionalDataset::new(curves), &MeanEstimate::zero(), &KernelSpec::default(), gram_tol).unwrap()
}

fn gradient_check(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut worst_fd, mut worst_quad) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let cache = small_instance(&mut rng, 3, 3, 3, DEFAULT_RANK_TOL);
        let q = cache.rank();
        let b = random_sym(&mut rng, q, 1.0);
        let (loss, g) = loss_and_grad(&cache, &b).map_err(|e| e.to_string())?;
        let v = svec(&b).unwrap();
        let gv = svec(&g).unwrap();
        let scale = gv.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
        let h = 1e-5;
        for k in 0..v.len() {
            let (mut up, mut dn) = (v.clone(), v.clone());
            up[k] += h;
            dn[k] -= h;
            let fu = loss_and_grad(&cache, &svec_inv(&up).unwrap()).unwrap().0;
            let fd = loss_and_grad(&cache, &svec_inv(&dn).unwrap()).unwrap().0;
            worst_fd = worst_fd.max(((fu - fd) / (2.0 * h) - gv[k]).abs() / scale);
        }

        let (kl, kg, kh) = oracles::kronecker_form(&cache, &b);
        let gvec = Array1::from_iter(g.iter().copied());
        let gscale = kg.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        worst_quad = worst_quad.max((loss - kl).abs() / kl.abs().max(1.0));
        worst_quad = worst_quad.max((&gvec - &kg).iter().fold(0.0f64, |m, e| m.max(e.abs())) / gscale);
        let d = random_sym(&mut rng, q, 1.0);
        let vd = Array1::from_iter(d.iter().copied());
        let shifted = loss_and_grad(&cache, &(&b + &d)).unwrap().0;
        let predicted = loss + (&g * &d).sum() + 0.5 * vd.dot(&kh.dot(&vd));
        worst_quad = worst_quad.max((shifted - predicted).abs() / shifted.abs().max(1.0));
    }
    ensure!(worst_fd <= 1e-6, "finite-difference relative error {worst_fd:.3e} exceeds 1e-6");
    ensure!(worst_quad <= 1e-9, "quadratic expansion error {worst_quad:.3e} exceeds 1e-9");
    Ok(format!("20 instances: finite-difference error {worst_fd:.2e} (tol 1e-6), Hessian identity error {worst_quad:.2e} (tol 1e-9)"))
}

fn optimizer_reference(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for inst in 0..10 {
        let cache = small_instance(&mut rng, 4, 3, 3, DEFAULT_RANK_TOL);
        let q = cache.rank();
        let (_, _, h) = oracles::kronecker_form(&cache, &Array2::zeros((q, q)));
        let lipschitz = sym_eig(&h).unwrap().values[0] * 1.01;
        let lambda = rng.random_range(0.01..0.3) * lambda_max(&cache).unwrap();
        for pen in Penalty::ALL {
            let opts = FitOptions { rel_tol: 1e-13, max_iter: 50_000, ..FitOptions::new(pen, lambda) };
            let fit = apg_fit(&cache, &opts).map_err(|e| e.to_string())?;
            ensure!(fit.theta_trace.first() == Some(&1.0), "first momentum weight is {:?}, not 1", fit.theta_trace.first());
            let reference = oracles::reference_objective(&cache, pen, lambda, lipschitz, 30_000);
            let gap = (fit.objective - reference).abs();
            ensure!(gap <= 1e-6, "instance {inst}, {pen:?}: apg {} vs reference {reference}", fit.objective);
            worst = worst.max(gap);
        }
    }
    Ok(format!("10 instances x 4 penalties: max |objective - reference| = {worst:.2e} (tol 1e-6); theta_0 = 1"))
}

fn eigen_checks(_: &mut Shared) -> Outcome {
    let cfg = SimConfig { n: 50, m: 5, ..SimConfig::default() };
    let sim = generate_dataset(&cfg, 0).map_err(|e| e.to_string())?;
    let spec = KernelSpec::default();
    let mean = fit_mean(&sim.data, &spec, &default_lambda_grid()).map_err(|e| e.to_string())?;
    let cache = build_design(&sim.data, &mean, &spec, DEFAULT_RANK_TOL).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let (mut worst_mercer, mut worst_orth) = (0.0f64, 0.0f64);
    let mut counts = Vec::new();
    for pen in Penalty::ALL {
        let est = apg_fit(&cache, &FitOptions::new(pen, 1e-5)).map_err(|e| e.to_string())?;
        let sys = l2_eigen(&est).map_err(|e| e.to_string())?;

        let phi = sys.eval_functions(&grid).unwrap();
        let zeta = Array1::from(sys.values.clone());
        let rebuilt = (&phi * &zeta.view().insert_axis(Axis(0))).dot(&phi.t());
        let mercer = max_abs(&(&rebuilt - &est.grid(&grid).unwrap()));
        ensure!(mercer <= 1e-6, "{pen:?}: Mercer reconstruction error {mercer:.3e}");

        // Split at every anchor with 8 nodes per panel: exact for ∫φ_jφ_k.
        let fine = QuadratureRule::composite(&est.anchor_points, 8).unwrap();
        let phi = sys.eval_functions(fine.nodes()).unwrap();
        let w = Array1::from(fine.weights().to_vec());
        let gram = phi.t().dot(&(&phi * &w.view().insert_axis(Axis(1))));
        let orth = max_abs(&(&gram - &Array2::<f64>::eye(sys.n_components())));
        ensure!(orth <= 1e-6, "{pen:?}: orthonormality error {orth:.3e}");

        // Trace-norm fits have exact zero eigenvalues, so rank(B) is sharp.
        // HS fits have a continuous tail of small eigenvalues that the
        // congruence with R rescales, so a fixed cutoff counts differently on
        // each side and only the trace-norm counts are asserted.
        let rank = matrix_rank(&est.b, 1e-10).unwrap();
        if pen.is_trace() {
            ensure!(sys.n_components() == rank, "{pen:?}: {} eigenpairs but rank(B) = {rank}", sys.n_components());
        }
        worst_mercer = worst_mercer.max(mercer);
        worst_orth = worst_orth.max(orth);
        counts.push(format!("{} {}/{rank}", pen.name(), sys.n_components()));
    }
    Ok(format!(
        "Mercer error {worst_mercer:.2e}, orthonormality error {worst_orth:.2e} (tol 1e-6); eigenpairs/rank(B): {} (equality asserted for trace-norm fits)",
        counts.join(", ")
    ))
}

fn fraction(a: &ExperimentReport, better: Penalty, worse: Penalty, key: impl Fn(&opcov::simulate::ReplicateRecord) -> Option<f64>) -> f64 {
    let x = a.records_for(better);
    let y = a.records_for(worse);
    let wins = x.iter().zip(&y).filter(|(r, s)| matches!((key(r), key(s)), (Some(u), Some(v)) if u < v)).count();
    wins as f64 / x.len().max(1) as f64
}

fn summary_line(report: &ExperimentReport) -> String {
    report
        .summaries
        .iter()
        .map(|s| format!("{} AISE {:.3e} (se {:.2e}) rank {:.2} ok {}", s.method.name(), s.mean_ise, s.se_ise, s.mean_rank, s.successes))
        .collect::<Vec<_>>()
        .join("; ")
}

fn save_report(name: &str, report: &ExperimentReport) {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if fs::create_dir_all(&dir).is_ok() {
        let _ = fs::write(dir.join(name), serde_json::to_string_pretty(report).unwrap());
    }
}

fn benchmark_m5(shared: &mut Shared) -> Outcome {
    let cfg = SimConfig { n: 200, m: 5, components: 2, n_reps: 30, ..SimConfig::default() };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    save_report("n200_m5.json", &report);
    let line = summary_line(&report);
    shared.benchmark_m5 = Some(report.clone());

    let tp = report.summary(Penalty::TracePsd).unwrap();
    let ise = |r: &opcov::simulate::ReplicateRecord| r.ise;
    let rank = |r: &opcov::simulate::ReplicateRecord| r.rank.map(|v| v as f64);
    let trace_order = fraction(&report, Penalty::TracePsd, Penalty::TraceSym, ise);
    let hs_order = fraction(&report, Penalty::HsPsd, Penalty::HsSym, ise);
    let rank_order = fraction(&report, Penalty::TracePsd, Penalty::HsPsd, rank);
    let detail = format!(
        "{line}; ISE trace_psd<trace_sym in {:.0}%, hs_psd<hs_sym in {:.0}%, rank trace_psd<hs_psd in {:.0}%",
        100.0 * trace_order,
        100.0 * hs_order,
        100.0 * rank_order
    );
    ensure!((3.0e-3..=8.0e-3).contains(&tp.mean_ise), "trace_psd mean AISE {:.3e} outside [3e-3, 8e-3]; {detail}", tp.mean_ise);
    ensure!((2.0..=5.0).contains(&tp.mean_rank), "trace_psd mean rank {:.2} outside [2, 5]; {detail}", tp.mean_rank);
    ensure!(trace_order > 0.6, "trace ordering holds in only {:.0}% of replicates; {detail}", 100.0 * trace_order);
    ensure!(hs_order > 0.6, "HS ordering holds in only {:.0}% of replicates; {detail}", 100.0 * hs_order);
    ensure!(rank_order > 0.8, "rank ordering holds in only {:.0}% of replicates; {detail}", 100.0 * rank_order);
    Ok(detail)
}

fn benchmark_m20(_: &mut Shared) -> Outcome {
    let cfg = SimConfig { n: 200, m: 20, components: 2, n_reps: 15, methods: vec![Penalty::TracePsd], ..SimConfig::default() };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    save_report("n200_m20.json", &report);
    let tp = report.summary(Penalty::TracePsd).unwrap();
    let line = summary_line(&report);
    ensure!((1.0e-3..=4.5e-3).contains(&tp.mean_ise), "mean AISE {:.3e} outside [1e-3, 4.5e-3]; {line}", tp.mean_ise);
    ensure!((2.0..=5.0).contains(&tp.mean_rank), "mean rank {:.2} outside [2, 5]; {line}", tp.mean_rank);
    Ok(line)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) }
}

fn trace_psd_ises(report: &ExperimentReport, reps: usize) -> Vec<f64> {
    report.records_for(Penalty::TracePsd).iter().filter(|r| r.rep < reps).filter_map(|r| r.ise).collect()
}

fn rate_sanity(shared: &mut Shared) -> Outcome {
    let base = SimConfig { m: 5, components: 2, n_reps: 10, methods: vec![Penalty::TracePsd], ..SimConfig::default() };
    // Replicates depend only on (seed, rep), so the first ten of the n=200
    // benchmark are the same draws a separate run would make.
    let large = match &shared.benchmark_m5 {
        Some(r) => trace_psd_ises(r, 10),
        None => trace_psd_ises(&run_experiment(&SimConfig { n: 200, ..base.clone() }).map_err(|e| e.to_string())?, 10),
    };
    let small = trace_psd_ises(&run_experiment(&SimConfig { n: 50, ..base }).map_err(|e| e.to_string())?, 10);
    ensure!(large.len() == 10 && small.len() == 10, "only {} and {} successful replicates", large.len(), small.len());
    let (m200, m50) = (median(large), median(small));
    ensure!(m200 < m50, "median ISE at n=200 ({m200:.3e}) is not below n=50 ({m50:.3e})");
    Ok(format!("median ISE n=200 {m200:.3e} < n=50 {m50:.3e}"))
}

fn cli_round_trip(_: &mut Shared) -> Outcome {
    use common::{p, read_table, run_ok, write_simulated};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data.csv");
    write_simulated(&data, 40, 5, 0, |t| t);
    let lambda = 1e-4;

    // In-process fit with the same pipeline and settings as `opcov fit`.
    let dataset = read_long_csv(&data).and_then(|d| d.into_dataset(None)).map_err(|e| e.to_string())?;
    let spec = KernelSpec::default();
    let mean = fit_mean(&dataset, &spec, &default_lambda_grid()).map_err(|e| e.to_string())?;
    let cache = build_design(&dataset, &mean, &spec, DEFAULT_RANK_TOL).map_err(|e| e.to_string())?;
    let est = apg_fit(&cache, &FitOptions::new(Penalty::TracePsd, lambda)).map_err(|e| e.to_string())?;

    let model = dir.path().join("model.json");
    run_ok(&["fit", p(&data), "-o", p(&model), "--lambda", &lambda.to_string()]);
    let loaded = ModelFile::load(&model).map_err(|e| e.to_string())?;
    let restored = loaded.estimate().map_err(|e| e.to_string())?;
    ensure!(loaded.mean == mean, "saved mean differs from the in-process fit");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<(f64, f64)> = (0..100).map(|_| (rng.random(), rng.random())).collect();
    let mut worst = 0.0f64;
    for &(s, t) in &pts {
        worst = worst.max((est.eval(s, t).unwrap() - restored.eval(s, t).unwrap()).abs());
    }
    ensure!(worst <= 1e-12, "reloaded model differs by {worst:.3e}");

    let points = dir.path().join("points.txt");
    fs::write(&points, pts.iter().map(|(s, _)| format!("{s:?}\n")).collect::<String>()).unwrap();
    let grid = dir.path().join("grid.csv");
    run_ok(&["eval-grid", p(&model), "--points", p(&points), "-o", p(&grid)]);
    let (_, rows) = read_table(&grid);
    ensure!(rows.len() == 100 * 100, "eval-grid wrote {} rows", rows.len());
    let mut worst_cli = 0.0f64;
    for r in &rows {
        let (s, t, c): (f64, f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        worst_cli = worst_cli.max((est.eval(s, t).unwrap() - c).abs());
    }
    ensure!(worst_cli <= 1e-12, "eval-grid output differs by {worst_cli:.3e}");

    let config = dir.path().join("sim.json");
    fs::write(&config, r#"{"n": 30, "m": 4, "n_reps": 3, "seed": 11, "cv_grid": [1e-5, 1e-4, 1e-3, 1e-2]}"#).unwrap();
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|d| dir.path().join(d)).collect();
    for o in &outs {
        run_ok(&["simulate", "--config", p(&config), "-o", p(o)]);
    }
    for f in ["report.csv", "report.json"] {
        let a = fs::read(outs[0].join(f)).unwrap();
        let b = fs::read(outs[1].join(f)).unwrap();
        ensure!(a == b, "{f} differs between two runs with the same seed");
    }
    Ok(format!(
        "reload error {worst:.1e}, eval-grid error {worst_cli:.1e} at 100 points (tol 1e-12); seeded simulate outputs byte-identical"
    ))
}
