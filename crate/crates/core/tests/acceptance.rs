//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use aos::active::initial_design;
use aos::gp::{fit, kernel, FitConfig, GpModel, KernelParams};
use aos::harness::{self, ExperimentConfig, RunArtifact};
use aos::metrics::{self, AggregateCurve};
use aos::seed;
use aos::strategy::{filter_cv, CvScore, StrategyConfig, StrategyKind, StrategyState};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const ORACLE_INSTANCES: usize = 200;
const ORACLE_REL_TOL: f64 = 1e-8;
const NOISE_SIGMAS: [f64; 3] = [0.05, 0.1, 0.3];
const NOISE_N: usize = 60;
const NOISE_SEEDS: u64 = 10;
const NOISE_FACTOR: f64 = 2.0;
const SETUP2_MAX_FRACTION: f64 = 0.80;
const SETUP3_MAX_FRACTION: f64 = 0.90;
const MASTER_SEED: u64 = 0;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 1

fn dense(x: &[Vec<f64>], y: &[f64], p: &KernelParams, extra_diag: f64, q: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], p).unwrap());
    for i in 0..n {
        k[(i, i)] += p.noise_variance + extra_diag;
    }
    let inv = k.try_inverse().unwrap();
    let kq = DVector::from_iterator(n, x.iter().map(|xi| kernel(xi, q, p).unwrap()));
    let mean = kq.dot(&(&inv * DVector::from_column_slice(y)));
    let var = kernel(q, q, p).unwrap() - kq.dot(&(&inv * &kq));
    (mean, var)
}

fn criterion_1() -> Outcome {
    let mut rng = seed::rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..ORACLE_INSTANCES {
        let n = rng.random_range(1..=25);
        let p = KernelParams::new(
            rng.random_range(0.1..5.0),
            vec![rng.random_range(0.05..1.5), rng.random_range(0.05..1.5)],
            rng.random_range(1e-4..0.5),
        )
        .unwrap();
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = GpModel::condition(&x, &y, p.clone()).unwrap();
        let y_scale = y.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for _ in 0..5 {
            let q = vec![rng.random(), rng.random()];
            let (mean, var) = dense(&x, &y, &p, m.jitter, &q);
            let pr = m.predict(&q).unwrap();
            worst = worst
                .max((pr.mean - mean).abs() / y_scale)
                .max((pr.variance - var.max(0.0)).abs() / p.signal_variance);
        }
    }
    check(
        worst <= ORACLE_REL_TOL,
        format!("{ORACLE_INSTANCES} instances, worst relative error {worst:.2e} (tol {ORACLE_REL_TOL:e})"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (si, &sigma) in NOISE_SIGMAS.iter().enumerate() {
        let mut fitted = Vec::new();
        for s in 0..NOISE_SEEDS {
            let seed = 5000 + 100 * si as u64 + s;
            let x = initial_design(NOISE_N, 2, seed).unwrap();
            let noise = Normal::new(0.0, sigma).unwrap();
            let mut rng = seed::rng(seed);
            let y: Vec<f64> = x
                .iter()
                .map(|v| {
                    (2.0 * std::f64::consts::PI * v[0]).sin() + (std::f64::consts::PI * v[1]).cos()
                        + noise.sample(&mut rng)
                })
                .collect();
            fitted.push(fit(&x, &y, &FitConfig::default().with_seed(seed)).unwrap().noise_std());
        }
        fitted.sort_by(f64::total_cmp);
        let median = 0.5 * (fitted[4] + fitted[5]);
        let ratio = median / sigma;
        ok &= (1.0 / NOISE_FACTOR..=NOISE_FACTOR).contains(&ratio);
        parts.push(format!("sigma {sigma}: median {median:.4} (x{ratio:.2})"));
    }
    check(ok, parts.join(", "))
}

// ---------------------------------------------------------------- 3

fn grid_scores(levels: &[f64], m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|v| {
                levels.iter().map(move |l| {
                    let mut w = v.clone();
                    w.push(*l);
                    w
                })
            })
            .collect();
    }
    out
}

fn lead(kind: StrategyKind, finished: &[bool], filtered: &[f64], noise: &[f64]) -> Option<usize> {
    let mut st = StrategyState::new(kind, filtered.len(), StrategyConfig::default(), 0);
    st.finished = finished.to_vec();
    let s: Vec<CvScore> = filtered.iter().zip(noise).map(|(f, n)| CvScore::new(*f, *f, *n)).collect();
    match st.select_leader(Some(&s)).unwrap() {
        Some(aos::active::Leader::Output(i)) => Some(i),
        Some(aos::active::Leader::SpaceFilling) => panic!("CV strategy chose SF"),
        None => None,
    }
}

fn criterion_3() -> Outcome {
    let m = 3;
    let levels = [0.0, 0.125, 0.25, 0.5, 1.0];
    let noise_levels = [1e-3, 0.0625, 0.5];
    let vectors = grid_scores(&levels, m);
    let noises = grid_scores(&noise_levels, m);
    let masks: Vec<Vec<bool>> = (0..(1 << m)).map(|b| (0..m).map(|i| b & (1 << i) != 0).collect()).collect();
    let mut cases = 0usize;
    let mut failures = Vec::new();

    // RR fairness over every finished mask.
    for mask in &masks {
        let open: Vec<usize> = (0..m).filter(|&i| !mask[i]).collect();
        let mut st = StrategyState::new(StrategyKind::RR, m, StrategyConfig::default(), 0);
        st.finished = mask.clone();
        let picks: Vec<Option<aos::active::Leader>> = (0..4 * m).map(|_| st.select_leader(None).unwrap()).collect();
        cases += 1;
        if open.is_empty() {
            if picks.iter().any(|p| p.is_some()) {
                failures.push(format!("RR led with mask {mask:?}"));
            }
            continue;
        }
        let mut counts = vec![0usize; m];
        for p in &picks {
            match p {
                Some(aos::active::Leader::Output(i)) => counts[*i] += 1,
                other => failures.push(format!("RR pick {other:?}")),
            }
        }
        let c: Vec<usize> = open.iter().map(|&i| counts[i]).collect();
        if c.iter().max().unwrap() - c.iter().min().unwrap() > 1 || mask.iter().zip(&counts).any(|(f, n)| *f && *n > 0) {
            failures.push(format!("RR unfair under mask {mask:?}: {counts:?}"));
        }
    }

    for mask in &masks {
        if mask.iter().all(|f| *f) {
            continue;
        }
        for f in &vectors {
            let unit = vec![0.1; m];
            let base = lead(StrategyKind::CVH, mask, f, &unit);
            for k in [-3, 2] {
                let c = 2f64.powi(k);
                let fs: Vec<f64> = f.iter().map(|v| v * c).collect();
                cases += 1;
                if lead(StrategyKind::CVH, mask, &fs, &unit) != base {
                    failures.push(format!("CVH scaling {f:?} x{c}"));
                }
            }
            for n in &noises {
                let b = lead(StrategyKind::CVHn, mask, f, n);
                let fs: Vec<f64> = f.iter().map(|v| v * 4.0).collect();
                let ns: Vec<f64> = n.iter().map(|v| v * 4.0).collect();
                cases += 1;
                if lead(StrategyKind::CVHn, mask, &fs, &ns) != b {
                    failures.push(format!("CVHn pair scaling {f:?} {n:?}"));
                }
                if let Some(i) = b {
                    if mask[i] {
                        failures.push(format!("finished output {i} led"));
                    }
                }
            }
            for &e in &noise_levels {
                cases += 1;
                if lead(StrategyKind::CVHn, mask, f, &vec![e; m]) != base {
                    failures.push(format!("CVHn != CVH for {f:?} noise {e}"));
                }
            }
        }
    }

    for f in &vectors {
        for len in 1..=m {
            cases += 1;
            if filter_cv(&f[..len], 1) != f[len - 1] {
                failures.push(format!("window-1 filter on {f:?}"));
            }
        }
    }

    // Budget conservation on short loops of every strategy.
    for (budget, n_init) in [(9, 9), (12, 9), (14, 6)] {
        let cfg = ExperimentConfig {
            setup_id: 2,
            n_runs: 1,
            budget,
            n_init,
            candidate_count: 300,
            fit_restarts: 1,
            workers: 1,
            ..ExperimentConfig::default()
        };
        let art = harness::run_single(&cfg, 0).unwrap();
        for c in &art.curves {
            cases += 1;
            let ns = c.n_meas();
            let expect: Vec<usize> = (n_init..=budget).collect();
            let queries = c.records.iter().filter(|r| r.query.is_some()).count();
            if ns != expect || queries != budget - n_init {
                failures.push(format!("{} budget {budget}: n_meas {ns:?}", c.strategy));
            }
        }
        if !art.failures.is_empty() {
            failures.push(format!("run failures {:?}", art.failures));
        }
    }

    check(
        failures.is_empty(),
        format!("{cases} cases, {} violations {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------- 4-8

struct Reproduction {
    dir: tempfile::TempDir,
    per_setup: Vec<(Vec<RunArtifact>, Vec<AggregateCurve>, usize)>,
}

fn aos_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_aos"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("aos {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn reproduce() -> Result<Reproduction, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seed = MASTER_SEED.to_string();
    aos_bin(&["reproduce", "--seed", &seed, "--output", dir.path().to_str().unwrap()])?;
    let mut per_setup = Vec::new();
    for cfg in harness::reproduce_configs(MASTER_SEED, dir.path()) {
        let arts = harness::load_artifacts(&cfg.output_dir).map_err(|e| e.to_string())?;
        let agg = harness::aggregate(&arts).map_err(|e| e.to_string())?;
        per_setup.push((arts, agg, cfg.budget));
    }
    Ok(Reproduction { dir, per_setup })
}

fn curve(agg: &[AggregateCurve], kind: StrategyKind) -> &AggregateCurve {
    agg.iter().find(|c| c.strategy == kind).expect("strategy present")
}

fn fraction_to_reach_sf(agg: &[AggregateCurve], kind: StrategyKind, budget: usize) -> Option<f64> {
    let sf_end = curve(agg, StrategyKind::SF).final_mean()?;
    metrics::measurements_to_reach(curve(agg, kind), sf_end).map(|n| n as f64 / budget as f64)
}

fn fmt_frac(f: Option<f64>) -> String {
    f.map_or("never".into(), |v| format!("{:.0}%", 100.0 * v))
}

fn runs_ok(arts: &[RunArtifact]) -> Result<(), String> {
    let failed: Vec<_> = arts.iter().flat_map(|a| a.failures.iter()).collect();
    if arts.len() != 15 || !failed.is_empty() {
        return Err(format!("{} runs, failures {failed:?}", arts.len()));
    }
    Ok(())
}

fn criterion_4(r: &Reproduction) -> Outcome {
    let (arts, agg, budget) = &r.per_setup[1];
    runs_ok(arts)?;
    let cvh = fraction_to_reach_sf(agg, StrategyKind::CVH, *budget);
    let cvhn = fraction_to_reach_sf(agg, StrategyKind::CVHn, *budget);
    let ok = [cvh, cvhn].iter().all(|f| f.is_some_and(|v| v <= SETUP2_MAX_FRACTION));
    check(
        ok,
        format!(
            "setup 2: CVH reaches SF end at {}, CVHn at {} (limit {:.0}%)",
            fmt_frac(cvh),
            fmt_frac(cvhn),
            100.0 * SETUP2_MAX_FRACTION
        ),
    )
}

fn criterion_5(r: &Reproduction) -> Outcome {
    let (arts, agg, budget) = &r.per_setup[2];
    runs_ok(arts)?;
    let cvh = curve(agg, StrategyKind::CVH).final_mean().unwrap();
    let cvhn = curve(agg, StrategyKind::CVHn).final_mean().unwrap();
    let frac = fraction_to_reach_sf(agg, StrategyKind::CVHn, *budget);
    check(
        cvhn < cvh && frac.is_some_and(|v| v <= SETUP3_MAX_FRACTION),
        format!(
            "setup 3: final CVHn {cvhn:.5} vs CVH {cvh:.5}; CVHn reaches SF end at {} (limit {:.0}%)",
            fmt_frac(frac),
            100.0 * SETUP3_MAX_FRACTION
        ),
    )
}

fn criterion_6(r: &Reproduction) -> Outcome {
    let (arts, agg, _) = &r.per_setup[0];
    runs_ok(arts)?;
    let sf = curve(agg, StrategyKind::SF).final_mean().unwrap();
    let mut ok = true;
    let mut parts = vec![format!("SF {sf:.5}")];
    for kind in [StrategyKind::RR, StrategyKind::CVH, StrategyKind::CVHn] {
        let v = curve(agg, kind).final_mean().unwrap();
        ok &= v <= sf;
        parts.push(format!("{kind} {v:.5}"));
    }
    check(ok, format!("setup 1 final means: {}", parts.join(", ")))
}

fn criterion_7(r: &Reproduction) -> Outcome {
    let mut replayed = 0;
    for (arts, _, _) in &r.per_setup {
        for a in [arts.first().unwrap(), arts.last().unwrap()] {
            let again = harness::replay(a).map_err(|e| e.to_string())?;
            if !harness::same_metrics(a, &again) {
                return Err(format!("replay of run {} differs", a.run_index));
            }
            replayed += 1;
        }
    }
    let first = r.per_setup[0].0[0].config.output_dir.join("artifacts").join(r.per_setup[0].0[0].file_name());
    aos_bin(&["replay", first.to_str().unwrap()])?;

    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seed = MASTER_SEED.to_string();
    aos_bin(&["reproduce", "--seed", &seed, "--output", second.path().to_str().unwrap()])?;
    let mut compared = 0;
    for setup in 1..=3 {
        for file in ["aggregate.csv", "savings.csv", "runs.csv"] {
            let rel = Path::new(&format!("setup{setup}")).join(file);
            let a = std::fs::read(r.dir.path().join(&rel)).map_err(|e| e.to_string())?;
            let b = std::fs::read(second.path().join(&rel)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{} differs between executions", rel.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{replayed} runs replayed bit-identically; {compared} files identical across two reproduce executions"))
}

fn criterion_8(r: &Reproduction) -> Outcome {
    let mut records = 0;
    for (arts, _, _) in &r.per_setup {
        for a in arts {
            for c in &a.curves {
                for rec in &c.records {
                    let recomputed = rec.nrmse.iter().map(|e| e * e).sum::<f64>().sqrt();
                    if (rec.nrmse_sum - recomputed).abs() > 4.0 * f64::EPSILON * recomputed {
                        return Err(format!("identity broken at n_meas {}", rec.n_meas));
                    }
                    records += 1;
                }
            }
        }
    }
    let pythagoras = metrics::nrmse_sum(&[0.3, 0.4, 0.0]);
    let e = 0.25;
    let symmetric = metrics::nrmse_sum(&[e, e, e]);
    check(
        pythagoras == 0.5 && symmetric == e * 3f64.sqrt() && metrics::nrmse_sum(&[0.0; 3]) == 0.0,
        format!("{records} records satisfy the sum identity; (0.3,0.4,0) -> {pythagoras}, (e,e,e) -> {symmetric}"),
    )
}

// ----------------------------------------------------------------

fn report(id: usize, name: &str, start: Instant, outcome: Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(msg) => {
            println!("criterion {id} PASS [{name}] {msg} ({secs:.1}s)");
            true
        }
        Err(msg) => {
            println!("criterion {id} FAIL [{name}] {msg} ({secs:.1}s)");
            false
        }
    }
}

fn main() {
    // Accept and ignore libtest arguments such as --nocapture or filters.
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "gp oracle", t, criterion_1());
    let t = Instant::now();
    ok &= report(2, "noise recovery", t, criterion_2());
    let t = Instant::now();
    ok &= report(3, "strategy properties", t, criterion_3());

    let t = Instant::now();
    match reproduce() {
        Ok(r) => {
            println!("reproduce finished ({:.1}s)", t.elapsed().as_secs_f64());
            let t = Instant::now();
            ok &= report(4, "setup 2 savings", t, criterion_4(&r));
            ok &= report(5, "setup 3 noise normalization", t, criterion_5(&r));
            ok &= report(6, "setup 1 active vs passive", t, criterion_6(&r));
            let t = Instant::now();
            ok &= report(7, "determinism", t, criterion_7(&r));
            let t = Instant::now();
            ok &= report(8, "metric identities", t, criterion_8(&r));
        }
        Err(e) => {
            for (id, name) in [(4, "setup 2 savings"), (5, "setup 3 noise normalization"), (6, "setup 1 active vs passive"), (7, "determinism"), (8, "metric identities")] {
                ok &= report(id, name, t, Err(format!("reproduce failed: {e}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
