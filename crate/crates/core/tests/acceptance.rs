//! One PASS/FAIL line per acceptance criterion. Loss bands and the timing
//! order are reported only; the exact and property criteria also fail the
//! test.

mod common;

use std::io::Write;
use std::time::Instant;

use common::*;
use nalgebra::DVector;
use ndarray::{Array1, Array2};
use rand::Rng;
use unaligned_cp::als::update_theta;
use unaligned_cp::gcp::gradients;
use unaligned_cp::io::write_trajectory;
use unaligned_cp::linalg::JITTER_LADDER;
use unaligned_cp::model::{relative_loss_blocks, theta_to_vec};
use unaligned_cp::sgd::stochastic_grads;
use unaligned_cp::sketch::build_sketched_design;
use unaligned_cp::synth::{gen_gaussian, gen_poisson, SynthConfig};
use unaligned_cp::tensor::vectorize;
use unaligned_cp::trajectory::step_times;
use unaligned_cp::{
    generalized_loss, grkhs_td, rkhs_td, s_grkhs_td, s_rkhs_td, AlsConfig, FactorModel, GdConfig, Init, KernelSpec,
    LossKind, LossSpec, Problem, SgdConfig, SketchConfig, SketchPlan, SketchSizes, StopRule, Trajectory,
    UnalignedTensor,
};

const SEEDS: u64 = 10;

struct Outcome {
    id: &'static str,
    pass: bool,
    enforced: bool,
}

#[derive(Default)]
struct Board {
    rows: Vec<Outcome>,
}

impl Board {
    fn record(&mut self, id: &'static str, pass: bool, enforced: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        // bypass the harness capture so the lines always show
        let mut out = std::io::stdout().lock();
        writeln!(out, "[{tag}] {id} {detail}").unwrap();
        out.flush().unwrap();
        self.rows.push(Outcome { id, pass, enforced });
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct GaussianRuns {
    losses: Vec<f64>,
    nominal: Vec<f64>,
    seconds: f64,
    full_steps: Vec<f64>,
    sketched_steps: Vec<f64>,
    full_traj: Trajectory,
    sketched_traj: Trajectory,
}

fn gaussian_runs() -> GaussianRuns {
    let mut out = GaussianRuns {
        losses: vec![],
        nominal: vec![],
        seconds: 0.0,
        full_steps: vec![],
        sketched_steps: vec![],
        full_traj: vec![],
        sketched_traj: vec![],
    };
    for seed in 0..SEEDS {
        let d = gen_gaussian::<f64>(&SynthConfig { seed, ..Default::default() }).unwrap();
        out.nominal.push(relative_loss_blocks(&d.observed, d.truth.all_values()).unwrap());
        let pr = Problem::new(&d.observed, KernelSpec::Bernoulli).unwrap();
        let cfg = AlsConfig { rank: 5, penalty: 1e-4, max_iters: 10, seed, ..Default::default() };
        let t = Instant::now();
        let rep = rkhs_td(&pr, &cfg, Init::Random).unwrap();
        out.seconds += t.elapsed().as_secs_f64();
        out.losses.push(pr.relative_loss(&rep.model).unwrap());
        out.full_steps.extend(step_times(&rep.trajectory));
        let sk = SketchConfig {
            als: cfg,
            sizes: SketchSizes::Sampled { s1: 10, s2: 40, s3: 10 },
            sketch_ab: true,
        };
        let srep = s_rkhs_td(&pr, &sk, Init::Random).unwrap();
        out.sketched_steps.extend(step_times(&srep.trajectory));
        if seed == 0 {
            out.full_traj = rep.trajectory;
            out.sketched_traj = srep.trajectory;
        }
    }
    out
}

struct PoissonRuns {
    gd: Vec<f64>,
    sgd: Vec<f64>,
    nominal: Vec<f64>,
    seconds: f64,
    gd_traj: Trajectory,
    sgd_traj: Trajectory,
}

fn poisson_runs() -> PoissonRuns {
    let mut out = PoissonRuns { gd: vec![], sgd: vec![], nominal: vec![], seconds: 0.0, gd_traj: vec![], sgd_traj: vec![] };
    let loss = LossSpec::poisson(1e-10).with_clip(Some(0.5)).with_norm_bound(1e4);
    let t = Instant::now();
    for seed in 0..SEEDS {
        let d = gen_poisson::<f64>(&SynthConfig { seed, ..Default::default() }).unwrap();
        let pr = Problem::new(&d.observed, KernelSpec::Radial).unwrap();
        let total: f64 = d
            .truth
            .all_values()
            .iter()
            .zip(d.observed.all_values())
            .flat_map(|(m, x)| m.iter().zip(x.iter()).map(|(&m, &x)| loss.value(m, x).unwrap()))
            .sum();
        out.nominal.push(total / d.observed.omega() as f64);
        let gd = GdConfig { rank: 5, learning_rate: 0.4, epochs: 15, iters_per_epoch: 10, seed, ..Default::default() };
        let rep = grkhs_td(&pr, &loss, &gd, Init::Random).unwrap();
        out.gd.push(generalized_loss(&pr, &rep.model, &loss).unwrap());
        let sgd = SgdConfig { gd, ..Default::default() };
        let srep = s_grkhs_td(&pr, &loss, &sgd, Init::Random).unwrap();
        out.sgd.push(generalized_loss(&pr, &srep.model, &loss).unwrap());
        if seed == 0 {
            out.gd_traj = rep.trajectory;
            out.sgd_traj = srep.trajectory;
        }
    }
    out.seconds = t.elapsed().as_secs_f64();
    out
}

/// Largest entrywise deviation from the rank-one truth after aligning
/// signs and moving the overall scale into the functional factor.
fn factor_error(pr: &Problem<f64>, m: &FactorModel<f64>, a: &[f64], b: &[f64], xi: &[f64]) -> f64 {
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        (v.iter().map(|x| s * x / n).collect::<Vec<_>>(), s * n)
    };
    let (ah, sa) = unit(m.a.column(0).to_vec());
    let (bh, sb) = unit(m.b.column(0).to_vec());
    let (at, na) = unit(a.to_vec());
    let (bt, nb) = unit(b.to_vec());
    let xh = pr.xi_on_grid(&m.theta).column(0).mapv(|v| v * sa * sb);
    let mut err = 0.0f64;
    for (x, y) in ah.iter().zip(&at).chain(bh.iter().zip(&bt)) {
        err = err.max((x - y).abs());
    }
    for (k, &v) in xi.iter().enumerate() {
        err = err.max((xh[k] - v * na * nb).abs());
    }
    err
}

fn rank_one_convergence(board: &mut Board) {
    let (x, a, b) = rank_one(21, 20, 10, 5, 10);
    let pr = problem(&x, KernelSpec::Bernoulli);
    let xi: Vec<f64> = pr.grid.points().iter().map(|&t| 1.0 + 0.5 * (std::f64::consts::PI * t).cos()).collect();
    let cfg = |h| AlsConfig { rank: 1, penalty: 0.0, max_iters: h, stop: StopRule::disabled(), seed: 0, ..Default::default() };
    let t = Instant::now();
    let full = rkhs_td(&pr, &cfg(20), Init::Random).unwrap();
    let losses: Vec<f64> = full.trajectory.iter().map(|p| p.loss).collect();
    let reached = losses.iter().position(|&l| l < 1e-8);
    let errs: Vec<f64> = (0..=20)
        .map(|h| factor_error(&pr, &rkhs_td(&pr, &cfg(h), Init::Random).unwrap().model, &a, &b, &xi))
        .collect();
    // past the 1e-8 loss threshold the iterates sit at the rounding floor
    // of the unpenalized solve, so only the run up to that point is checked
    let upto = reached.unwrap_or(20);
    let monotone = errs[1..=upto.max(1)].windows(2).all(|w| w[1] <= w[0]);
    board.record(
        "C4a",
        reached.is_some(),
        true,
        format!(
            "rank-one noiseless relative loss < 1e-8 within 20 iterations: first at {:?}, final {:.3e} ({:.2} s)",
            reached,
            losses[20],
            t.elapsed().as_secs_f64()
        ),
    );
    board.record(
        "C4b",
        monotone,
        true,
        format!(
            "rank-one factor error non-increasing from iteration 1 to {upto}: {}",
            errs.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>().join(" ")
        ),
    );
}

fn domain_data(kind: LossKind, seed: u64) -> UnalignedTensor<f64> {
    let x = ragged(seed, 5, 4, 2, 5, 10);
    let mut r = rng(seed + 100);
    let vals = x
        .all_values()
        .iter()
        .map(|v| {
            v.mapv(|_| match kind {
                LossKind::Gaussian => r.random_range(-1.0..1.0),
                LossKind::BernoulliLogit => f64::from(r.random_bool(0.4) as u8),
                LossKind::Poisson => f64::from(r.random_range(0..5u8)),
                LossKind::BetaDivergence => r.random_range(0.0..2.0),
            })
        })
        .collect();
    x.with_values(vals).unwrap()
}

fn gradient_check(board: &mut Board) {
    let mut worst = 0.0f64;
    for (k, loss) in [
        LossSpec::gaussian(),
        LossSpec::bernoulli(),
        LossSpec::poisson(1e-10),
        LossSpec::beta_divergence(0.5, 1e-6),
    ]
    .into_iter()
    .enumerate()
    {
        let x = domain_data(loss.kind, k as u64);
        let pr = problem(&x, KernelSpec::Bernoulli);
        let m = random_model(&pr, 2, 10 + k as u64, true);
        let g = gradients(&pr, &m, &loss).unwrap();
        let h = 1e-6;
        for (block, grad) in [&g.a, &g.b, &g.theta].into_iter().enumerate() {
            for idx in ndarray::indices(grad.dim()) {
                let shifted = |d: f64| {
                    let mut mm = m.clone();
                    match block {
                        0 => mm.a[idx] += d,
                        1 => mm.b[idx] += d,
                        _ => mm.theta[idx] += d,
                    }
                    generalized_loss(&pr, &mm, &loss).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst = worst.max((fd - grad[idx]).abs() / grad[idx].abs().max(1.0));
            }
        }
    }
    board.record(
        "C5",
        worst < 1e-5,
        true,
        format!("finite-difference gradients, four losses, 5x4 R=2: max rel err {worst:.2e} (< 1e-5)"),
    );
}

fn theta_optimality(board: &mut Board) {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let x = ragged(seed, 5, 4, 2, 6, 12);
        let pr = problem(&x, KernelSpec::Bernoulli);
        let m = random_model(&pr, 2, seed + 50, false);
        let lam = 10f64.powf(-4.0 + 4.0 * rng(seed).random::<f64>());
        let th = update_theta(&pr, &m.a, &m.b, &SketchPlan::full(&x), lam, &JITTER_LADDER).unwrap();
        let d = to_na(&pr.build_design(&m.a, &m.b).unwrap());
        let xv = DVector::from_vec(vectorize(&x).0);
        let g = pr.grid_len();
        let mut lhs = d.transpose() * &d;
        for r in 0..2 {
            for s in 0..g {
                for u in 0..g {
                    lhs[(r * g + s, r * g + u)] += lam * pr.gram[[s, u]];
                }
            }
        }
        let tv = to_na_vec(&theta_to_vec(&th.theta));
        let rhs = d.transpose() * xv;
        worst = worst.max((&lhs * &tv - &rhs).norm() / rhs.norm());
    }
    board.record(
        "C6a",
        worst < 1e-8,
        true,
        format!("theta normal-equation residual on 20 instances: max relative {worst:.2e} (< 1e-8)"),
    );

    let mut worst_rise = f64::NEG_INFINITY;
    for seed in 0..5 {
        let x = ragged(seed, 6, 4, 3, 6, 12);
        let pr = problem(&x, KernelSpec::Bernoulli);
        let cfg = AlsConfig { rank: 2, penalty: 0.0, max_iters: 30, stop: StopRule::disabled(), seed, ..Default::default() };
        let rep = rkhs_td(&pr, &cfg, Init::Random).unwrap();
        for w in rep.trajectory.windows(2) {
            worst_rise = worst_rise.max((w[1].loss - w[0].loss) / w[0].loss);
        }
    }
    board.record(
        "C6b",
        worst_rise <= 1e-10,
        true,
        format!("ALS objective with zero penalty over 30 iterations, 5 instances: largest relative rise {worst_rise:.2e} (<= 1e-10)"),
    );
}

fn sketch_correspondence(board: &mut Board) {
    let x = ragged(1, 6, 5, 2, 6, 12);
    let pr = problem(&x, KernelSpec::Bernoulli);
    let m = random_model(&pr, 2, 2, false);
    let d = pr.build_design(&m.a, &m.b).unwrap();
    let (v, map) = vectorize(&x);
    let xv = Array1::from(v);
    let mut r = rng(3);
    let mut equal = 0;
    for _ in 0..50 {
        let (s1, s2, s3) = (r.random_range(1..8), r.random_range(1..6), r.random_range(1..8));
        let plan = SketchPlan::sample(&x, s1, s2, s3, &mut r).unwrap();
        let s = explicit_sketch(&plan, &map);
        let (dh, sx) = build_sketched_design(&pr, &m.a, &m.b, &plan).unwrap();
        if s.dot(&d) == dh && s.dot(&xv) == sx {
            equal += 1;
        }
    }
    board.record("C7a", equal == 50, true, format!("explicit sketch oracle: {equal}/50 plans exactly equal"));

    let mut identical = true;
    for sketch_ab in [true, false] {
        let als = AlsConfig { rank: 2, max_iters: 8, stop: StopRule::disabled(), seed: 4, ..Default::default() };
        let cfg = SketchConfig { als: als.clone(), sizes: SketchSizes::Full, sketch_ab };
        let a = s_rkhs_td(&pr, &cfg, Init::Random).unwrap();
        let b = rkhs_td(&pr, &als, Init::Random).unwrap();
        let la: Vec<f64> = a.trajectory.iter().map(|p| p.loss).collect();
        let lb: Vec<f64> = b.trajectory.iter().map(|p| p.loss).collect();
        identical &= a.model == b.model && la == lb;
    }
    board.record("C7b", identical, true, "identity sketch reproduces the unsketched solver bit for bit".into());
}

fn unbiasedness(board: &mut Board) {
    let times = vec![vec![0.1], vec![0.2, 0.5, 0.7], vec![0.1, 0.3, 0.5, 0.7, 0.9, 0.95]];
    let mut r = rng(7);
    let values = times
        .iter()
        .map(|t| Array2::from_shape_simple_fn((2, t.len()), || r.random_range(-1.0..1.0)))
        .collect();
    let x = UnalignedTensor::new(2, times, values).unwrap();
    let pr = problem(&x, KernelSpec::Bernoulli);
    let m = random_model(&pr, 2, 8, false);
    let loss = LossSpec::gaussian();
    let full = gradients(&pr, &m, &loss).unwrap();
    let draws = 100_000;
    let (mut sa, mut sb, mut st) = (full.a.mapv(|_| 0.0), full.b.mapv(|_| 0.0), full.theta.mapv(|_| 0.0));
    let mut pr_rng = rng(9);
    for _ in 0..draws {
        let plan = SketchPlan::sample(&x, 2, 2, 2, &mut pr_rng).unwrap();
        let g = stochastic_grads(&pr, &m, &loss, &plan, true).unwrap();
        sa += &g.a;
        sb += &g.b;
        st += &g.theta;
    }
    let k = 1.0 / draws as f64;
    let errs = [
        rel_err(&sa.mapv(|v| v * k), &full.a),
        rel_err(&sb.mapv(|v| v * k), &full.b),
        rel_err(&st.mapv(|v| v * k), &full.theta),
    ];
    board.record(
        "C8",
        errs.iter().all(|&e| e < 0.02),
        true,
        format!("importance-weighted stochastic gradient, 1e5 draws: rel err A {:.4} B {:.4} theta {:.4} (< 0.02)", errs[0], errs[1], errs[2]),
    );
}

fn trajectories(board: &mut Board, named: &[(&str, &str, &Trajectory)]) {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let mut ok = true;
    for (name, column, traj) in named {
        let path = dir.join(format!("{name}.csv"));
        write_trajectory(std::fs::File::create(&path).unwrap(), column, traj).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        ok &= header == ["iteration", column, "wall_time_sec", "plan_seed"]
            && rows.len() == traj.len()
            && rows.len() >= 2
            && rows.iter().all(|r| r[1].parse::<f64>().is_ok_and(f64::is_finite));
    }
    board.record(
        "C10",
        ok,
        true,
        format!("trajectory CSVs for {} runs written to {}", named.len(), dir.display()),
    );
}

#[test]
fn acceptance() {
    let mut board = Board::default();
    writeln!(std::io::stdout().lock(), "\nacceptance criteria").unwrap();

    let g = gaussian_runs();
    let m1 = mean(&g.losses);
    board.record(
        "C1",
        (0.020..=0.040).contains(&m1) && g.seconds < 300.0,
        false,
        format!(
            "gaussian RKHS-TD mean relative loss {m1:.5} over {SEEDS} seeds (band [0.020, 0.040]), {:.1} s (< 300 s); per seed {:?}",
            g.seconds,
            g.losses.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    );
    let m2 = mean(&g.nominal);
    board.record(
        "C2",
        (0.012..=0.022).contains(&m2),
        false,
        format!(
            "nominal relative loss mean {m2:.5} (band [0.012, 0.022]); per seed {:?}",
            g.nominal.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    );

    let p = poisson_runs();
    let band = |v: f64| (-53.21..=-52.0).contains(&v);
    let (mg, ms, mn) = (mean(&p.gd), mean(&p.sgd), mean(&p.nominal));
    board.record(
        "C3a",
        band(mg) && p.seconds < 900.0,
        false,
        format!("poisson GRKHS-TD mean final loss {mg:.3} (band [-53.21, -52.0]); nominal mean {mn:.3}; {:.1} s for both solvers (< 900 s)", p.seconds),
    );
    board.record(
        "C3b",
        band(ms),
        false,
        format!("poisson S-GRKHS-TD mean final loss {ms:.3} (band [-53.21, -52.0])"),
    );
    let gaps: Vec<f64> = p.gd.iter().zip(&p.nominal).map(|(f, n)| f - n).collect();
    let mgap = mean(&gaps);
    board.record(
        "C3c",
        (0.0..=1.21).contains(&mgap),
        false,
        format!(
            "diagnostic: GRKHS-TD gap to each dataset's nominal loss, mean {mgap:.3} (reference gap 0.77, band [0, 1.21]); per seed {:?}",
            gaps.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
        ),
    );

    rank_one_convergence(&mut board);
    gradient_check(&mut board);
    theta_optimality(&mut board);
    sketch_correspondence(&mut board);
    unbiasedness(&mut board);

    let (mf, msk) = (median(g.full_steps.clone()), median(g.sketched_steps.clone()));
    board.record(
        "C9",
        msk < mf,
        false,
        format!("median per-iteration time: S-RKHS-TD {:.4} s vs RKHS-TD {:.4} s", msk, mf),
    );

    trajectories(
        &mut board,
        &[
            ("gaussian_rkhs_td", "relative_loss", &g.full_traj),
            ("gaussian_s_rkhs_td", "relative_loss", &g.sketched_traj),
            ("poisson_grkhs_td", "loss", &p.gd_traj),
            ("poisson_s_grkhs_td", "loss", &p.sgd_traj),
        ],
    );

    let failed: Vec<&str> = board.rows.iter().filter(|o| o.enforced && !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "property criteria failed: {failed:?}");
}
