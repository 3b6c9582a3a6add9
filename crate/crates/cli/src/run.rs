use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use unaligned_cp::io::{read_records_path, save_model, write_labels, write_matrix_path, write_records, write_trajectory};
use unaligned_cp::model::relative_loss_blocks;
use unaligned_cp::synth::{gen_gaussian, gen_poisson, SynthConfig, SynthData};
use unaligned_cp::tensor::BuildOptions;
use unaligned_cp::transform::{clr_transform, relative_abundance};
use unaligned_cp::{
    build_tensor, generalized_loss, grkhs_td, io, rkhs_td, s_grkhs_td, s_rkhs_td, AlsConfig, FitReport, GdConfig,
    Init, Labels, LossSpec, Problem, Scalar, SgdConfig, SketchConfig, SketchSizes, UnalignedTensor,
};

use crate::config::{Algo, Precision, Settings, Transform};
use crate::{DecomposeArgs, EvaluateArgs, Family, GenerateArgs, DEFAULT_OUT};

pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.toml";

fn out_dir(dir: Option<&Path>) -> Result<PathBuf> {
    let dir = dir.map_or_else(|| PathBuf::from(DEFAULT_OUT), Path::to_path_buf);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<String> {
    let text = toml::to_string(value)?;
    fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    Ok(text)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

#[derive(Serialize)]
struct GenerateSummary {
    family: &'static str,
    seed: u64,
    n: usize,
    p: usize,
    grid_size: usize,
    min_obs: usize,
    max_obs: usize,
    rank: usize,
    noise_var: f64,
    delta: f64,
    observations: usize,
    /// Relative loss (Gaussian) or mean Poisson loss (Poisson) of the truth.
    nominal_loss: f64,
    clamped_rates: usize,
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        grid_size: a.grid_size,
        min_obs: a.min_obs,
        max_obs: a.max_obs,
        n: a.n,
        p: a.p,
        rank: a.rank,
        noise_var: a.noise_var,
        delta: a.delta,
        seed: a.seed,
    };
    let (data, family): (SynthData<f64>, _) = match a.family {
        Family::Gaussian => (gen_gaussian(&cfg)?, "gaussian"),
        Family::Poisson => (gen_poisson(&cfg)?, "poisson"),
    };
    let nominal = match a.family {
        Family::Gaussian => relative_loss_blocks(&data.observed, data.truth.all_values())?,
        Family::Poisson => {
            let loss = LossSpec::<f64>::poisson(a.delta.max(f64::MIN_POSITIVE));
            let mut total = 0.0;
            for (m, x) in data.truth.all_values().iter().zip(data.observed.all_values()) {
                for (&m, &x) in m.iter().zip(x.iter()) {
                    total += loss.value(m, x)?;
                }
            }
            total / data.observed.omega() as f64
        }
    };
    let dir = out_dir(a.out.as_deref())?;
    let labels = Labels::numeric(cfg.n, cfg.p);
    write_records(create(&dir.join("data.csv"))?, &data.observed.to_records(&labels))?;
    write_records(create(&dir.join("truth.csv"))?, &data.truth.to_records(&labels))?;
    write_matrix_path(&dir.join("true_A.csv"), &data.factors.a)?;
    write_matrix_path(&dir.join("true_B.csv"), &data.factors.b)?;
    if a.dump_xi {
        let table = data.factors.xi_table(&data.grid);
        let mut w = create(&dir.join("xi.csv"))?;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=cfg.rank).map(|r| format!("xi_{r}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for row in table.rows() {
            let cells: Vec<String> = row.iter().map(|&v| io::fmt_float(v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
    }
    let summary = GenerateSummary {
        family,
        seed: cfg.seed,
        n: cfg.n,
        p: cfg.p,
        grid_size: cfg.grid_size,
        min_obs: cfg.min_obs,
        max_obs: cfg.max_obs,
        rank: cfg.rank,
        noise_var: cfg.noise_var,
        delta: cfg.delta,
        observations: data.observed.omega(),
        nominal_loss: nominal,
        clamped_rates: data.clamped,
    };
    print!("{}", write_toml(&dir.join(SUMMARY_FILE), &summary)?);
    Ok(())
}

/// Run metadata, written in this field order.
#[derive(Serialize)]
struct Summary {
    algorithm: String,
    precision: &'static str,
    seed: u64,
    rank: usize,
    kernel: &'static str,
    loss: &'static str,
    transform: String,
    n: usize,
    p: usize,
    grid_len: usize,
    observations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    s1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    s3: Option<usize>,
    iterations: usize,
    returned_iteration: usize,
    stopped_early: bool,
    relative_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
    restarts: usize,
    skipped_rows: usize,
    max_relative_jitter: f64,
    wall_time_sec: f64,
}

fn load_tensor<T: Scalar>(s: &Settings, input: &Path) -> Result<(UnalignedTensor<T>, Labels)> {
    let records = read_records_path::<T>(input).with_context(|| format!("reading {}", input.display()))?;
    let opts = BuildOptions {
        rescale_time: s.rescale_time.unwrap_or(false),
    };
    let (x, labels) = build_tensor(&records, opts).with_context(|| format!("building tensor from {}", input.display()))?;
    let x = match s.transform.unwrap_or_default() {
        Transform::None => x,
        Transform::Clr => clr_transform(&x)?,
        Transform::Relative => relative_abundance(&x)?,
    };
    Ok((x, labels))
}

pub fn decompose(a: &DecomposeArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let mut s = a.settings.over(&file);
    s.check()?;
    let dir = out_dir(a.out.as_deref().or(s.out_dir.as_deref()))?;
    let input = s
        .input
        .clone()
        .context("no input data: pass --input or set `input` in the config")?;
    // record an absolute path so `evaluate` works from anywhere
    s.input = Some(fs::canonicalize(&input).unwrap_or(input));
    s.out_dir = None;
    s.kernel = Some(s.kernel()?.name().to_string());
    match s.precision.unwrap_or_default() {
        Precision::F64 => decompose_with::<f64>(&s, &dir),
        Precision::F32 => decompose_with::<f32>(&s, &dir),
    }
}

fn decompose_with<T: Scalar>(s: &Settings, dir: &Path) -> Result<()> {
    let start = Instant::now();
    let input = s.input.as_deref().expect("input resolved");
    let (x, labels) = load_tensor::<T>(s, input)?;
    let kernel = s.kernel()?;
    let problem = Problem::new(&x, kernel)?;
    let algo = s.algo();
    let als = AlsConfig {
        rank: s.rank(),
        penalty: s.penalty.unwrap_or(1e-4),
        max_iters: s.iters.unwrap_or(10),
        stop: s.stop(),
        seed: s.seed(),
        ..Default::default()
    };
    let gd = GdConfig {
        rank: s.rank(),
        learning_rate: s.alpha.unwrap_or(0.4),
        epochs: s.epochs.unwrap_or(15),
        iters_per_epoch: s.iters_per_epoch.unwrap_or(10),
        stop: s.stop(),
        seed: s.seed(),
    };
    let loss = s.loss_spec::<T>()?;
    let (report, sizes): (FitReport<T>, Option<SketchSizes>) = match algo {
        Algo::Rkhs => (rkhs_td(&problem, &als, Init::Random)?, None),
        Algo::SRkhs => {
            let sizes = s.sizes((10, 40, 10));
            let cfg = SketchConfig {
                als,
                sizes,
                sketch_ab: s.sketch_ab.unwrap_or(true),
            };
            (s_rkhs_td(&problem, &cfg, Init::Random)?, Some(sizes))
        }
        Algo::Grkhs => (grkhs_td(&problem, &loss, &gd, Init::Random)?, None),
        Algo::SGrkhs => {
            let sizes = s.sizes((10, 20, 10));
            let cfg = SgdConfig {
                gd,
                sizes,
                importance_weighting: s.importance_weighting.unwrap_or(false),
                literal_step_factor: s.literal_step_factor.unwrap_or(false),
            };
            (s_grkhs_td(&problem, &loss, &cfg, Init::Random)?, Some(sizes))
        }
    };
    let gradient = matches!(algo, Algo::Grkhs | Algo::SGrkhs);

    save_model(dir, &report.model)?;
    let column = if gradient { "loss" } else { "relative_loss" };
    write_trajectory(create(&dir.join("trajectory.csv"))?, column, &report.trajectory)?;
    write_labels(create(&dir.join("labels.csv"))?, &labels)?;
    write_toml(&dir.join(CONFIG_FILE), s)?;

    let (s1, s2, s3) = match sizes {
        Some(SketchSizes::Sampled { s1, s2, s3 }) => (Some(s1), Some(s2), Some(s3)),
        _ => (None, None, None),
    };
    let summary = Summary {
        algorithm: algo.to_string(),
        precision: match s.precision.unwrap_or_default() {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        },
        seed: s.seed(),
        rank: s.rank(),
        kernel: kernel.name(),
        loss: loss.kind.name(),
        transform: format!("{:?}", s.transform.unwrap_or_default()).to_lowercase(),
        n: x.n(),
        p: x.p(),
        grid_len: problem.grid_len(),
        observations: x.omega(),
        s1,
        s2,
        s3,
        iterations: report.iterations,
        returned_iteration: report.returned_iteration,
        stopped_early: report.stopped_early,
        relative_loss: problem.relative_loss(&report.model)?.as_f64(),
        final_loss: if gradient {
            Some(generalized_loss(&problem, &report.model, &loss)?.as_f64())
        } else {
            None
        },
        restarts: report.restarts,
        skipped_rows: report.skipped_rows,
        max_relative_jitter: report.max_relative_jitter,
        wall_time_sec: start.elapsed().as_secs_f64(),
    };
    print!("{}", write_toml(&dir.join(SUMMARY_FILE), &summary)?);
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    relative_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
    n: usize,
    p: usize,
    observations: usize,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let s = Settings::load(&a.model.join(CONFIG_FILE))?;
    let input = a
        .input
        .clone()
        .or_else(|| s.input.clone())
        .context("no input data: pass --input")?;
    match s.precision.unwrap_or_default() {
        Precision::F64 => evaluate_with::<f64>(&s, &a.model, &input),
        Precision::F32 => evaluate_with::<f32>(&s, &a.model, &input),
    }
}

fn evaluate_with<T: Scalar>(s: &Settings, model_dir: &Path, input: &Path) -> Result<()> {
    let (x, _) = load_tensor::<T>(s, input)?;
    let kernel = s.kernel()?;
    let model = io::load_model::<T>(model_dir, kernel).with_context(|| format!("loading model from {}", model_dir.display()))?;
    let problem = Problem::new(&x, kernel)?;
    problem.check_model(&model).context("model does not match the data")?;
    let loss = s.loss_spec::<T>()?;
    let eval = Evaluation {
        relative_loss: problem.relative_loss(&model)?.as_f64(),
        loss: if matches!(s.algo(), Algo::Grkhs | Algo::SGrkhs) {
            Some(generalized_loss(&problem, &model, &loss)?.as_f64())
        } else {
            None
        },
        n: x.n(),
        p: x.p(),
        observations: x.omega(),
    };
    print!("{}", toml::to_string(&eval)?);
    Ok(())
}
