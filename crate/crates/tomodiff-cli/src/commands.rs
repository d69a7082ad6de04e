use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use tomodiff::bench::bench_compare;
use tomodiff::config::{PriorSection, RunConfig};
use tomodiff::grid::{build_config, build_grid, Grid2D, MeasurementMatrix, Pattern, SourceReceiverConfig, VelocityField};
use tomodiff::io::{atomic_write, read_measurements, read_raster, write_measurements, write_pgm, write_raster, RasterKind};
use tomodiff::lbfgs::lbfgs_run;
use tomodiff::metrics;
use tomodiff::phantom::{make_dataset, simulate as simulate_measurements, DatasetManifest, PhantomKind, PhantomSpec};
use tomodiff::reconstruct::{dps_run, subspace_dps_run, ReconstructionResult, SamplerConfig};
use tomodiff::rng::{Purpose, StreamSeed};
use tomodiff::score::denoiser::{train_denoiser, DenoiserModel, TrainConfig};
use tomodiff::score::gmm::GmmPrior;
use tomodiff::score::{DenoiserScore, GmmScore, ScoreFunction};
use tomodiff::sde::NoiseSchedule;
use tomodiff::subspace::{fisher_divergence, select_times, DataSource, FisherCurve, SubspaceLadder};

#[derive(Args)]
pub struct DatagenArgs {
    /// Phantom family: kit4 or layered.
    #[arg(long, default_value = "kit4")]
    kind: String,
    /// Grid side length (power of two).
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 512)]
    train: usize,
    #[arg(long, default_value_t = 64)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; train/ and test/ subdirectories are created.
    #[arg(long)]
    out: PathBuf,
}

pub fn datagen(args: DatagenArgs) -> Result<()> {
    let kind = match args.kind.as_str() {
        "kit4" => PhantomKind::Kit4,
        "layered" => PhantomKind::Layered,
        other => bail!(tomodiff::TomoError::invalid(format!(
            "unknown phantom kind {other:?}"
        ))),
    };
    let grid = build_grid(args.n)?;
    let spec = PhantomSpec {
        kind,
        seed: args.seed,
        ..Default::default()
    };
    make_dataset(&spec, grid, args.train, &args.out.join("train"))?;
    // test seeds start where the training range ends
    let test_spec = PhantomSpec {
        seed: args.seed + args.train as u64,
        ..spec
    };
    make_dataset(&test_spec, grid, args.test, &args.out.join("test"))?;
    println!(
        "wrote {} train + {} test rasters under {}",
        args.train,
        args.test,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Truth raster path (sidecar JSON expected next to it).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "surrounding")]
    pattern: String,
    #[arg(long, default_value_t = 24)]
    ntx: usize,
    #[arg(long, default_value_t = 48)]
    nrx: usize,
    /// Noise standard deviation relative to the mean clean travel time.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for measurements.csv and devices.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let pattern = parse_pattern(&args.pattern)?;
    let (values, meta) = read_raster(&args.truth)?;
    let grid = Grid2D::new(meta.n)?;
    let truth = VelocityField::clamped(grid, values)?;
    let config = build_config(pattern, grid, args.ntx, args.nrx)?;
    let y = simulate_measurements(&truth, &config, args.noise, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_measurements(&args.out.join("measurements.csv"), &y)?;
    let devices = serde_json::to_vec_pretty(&config)?;
    atomic_write(&args.out.join("devices.json"), &devices)?;
    println!(
        "wrote {}x{} measurements to {}",
        y.values.nrows(),
        y.values.ncols(),
        args.out.display()
    );
    Ok(())
}

fn parse_pattern(s: &str) -> Result<Pattern> {
    Ok(match s {
        "horizontal" => Pattern::Horizontal,
        "vertical" => Pattern::Vertical,
        "surrounding" => Pattern::Surrounding,
        other => bail!(tomodiff::TomoError::invalid(format!(
            "unknown pattern {other:?}"
        ))),
    })
}

#[derive(Args)]
pub struct TrainScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Ladder level the dataset lives at (0 = full resolution).
    #[arg(long, default_value_t = 0)]
    level: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn train_score(args: TrainScoreArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let samples = manifest.load_samples(&args.manifest)?;
    let schedule = NoiseSchedule::default();
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        ..Default::default()
    };
    let model = train_denoiser(&samples, &schedule, &config)?;
    let model = DenoiserModel::new(
        model.arch(),
        args.level,
        model.schedule(),
        model.params().to_vec(),
        model.meta().clone(),
    )?;
    model.save(&args.out)?;
    println!(
        "trained on {} samples; final loss {:.4}; wrote {}",
        samples.len(),
        model.meta().final_loss,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct FisherScanArgs {
    /// Dataset manifest supplying full-resolution samples.
    #[arg(long)]
    manifest: PathBuf,
    /// Number of ladder levels below full resolution.
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Number of scan times on (0, t_end].
    #[arg(long, default_value_t = 50)]
    times: usize,
    /// KDE bandwidth (variance) for the analytic score of the dataset.
    #[arg(long, default_value_t = 0.01)]
    bandwidth_sq: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn fisher_scan(args: FisherScanArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let data = manifest.load_samples(&args.manifest)?;
    let schedule = NoiseSchedule::default();
    let base_n = manifest.grid_n;
    std::fs::create_dir_all(&args.out)?;

    let grid_times: Vec<f64> = (1..=args.times)
        .map(|i| i as f64 / args.times as f64 * schedule.t_end)
        .collect();
    let streams = StreamSeed(args.seed);
    let mut curves = Vec::new();
    let mut level_samples = data;
    let mut prior = GmmPrior::kde(level_samples.clone(), args.bandwidth_sq)?;
    for k in 1..=args.levels {
        let fine_side = base_n >> (k - 1);
        let score = GmmScore::new(prior.clone(), schedule, k - 1);
        let mut values = Vec::with_capacity(grid_times.len());
        let mut stderr = Vec::with_capacity(grid_times.len());
        let mut rng = streams.stream(Purpose::MonteCarlo, k, 0);
        for &t in &grid_times {
            let (v, se) = fisher_divergence(
                &score,
                &DataSource::Samples(&level_samples),
                t,
                fine_side,
                &schedule,
                args.samples,
                &mut rng,
            )?;
            values.push(v);
            stderr.push(se);
        }
        let curve = FisherCurve {
            times: grid_times.clone(),
            values,
            stderr,
            sample_count: args.samples,
        };
        let mut csv = String::from("t,d_f,stderr\n");
        for ((t, v), se) in curve.times.iter().zip(&curve.values).zip(&curve.stderr) {
            csv.push_str(&format!("{t:.6},{v:.8e},{se:.8e}\n"));
        }
        atomic_write(&args.out.join(format!("transition_{k}.csv")), csv.as_bytes())?;
        curves.push(curve);

        // pool dataset and prior one level for the next transition
        level_samples = level_samples
            .iter()
            .map(|s| tomodiff::subspace::project_level(s, fine_side))
            .collect::<tomodiff::Result<_>>()?;
        prior = prior.project(1, fine_side)?;
    }

    let times = select_times(&curves, args.threshold)?;
    let ladder = serde_json::json!({
        "levels": args.levels,
        "times": times,
        "threshold": args.threshold,
    });
    atomic_write(
        &args.out.join("ladder.json"),
        serde_json::to_string_pretty(&ladder)?.as_bytes(),
    )?;
    println!("selected transition times {times:?}");
    Ok(())
}

#[derive(Args)]
pub struct ReconstructArgs {
    /// Run-configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// dps, subspace-dps, or lbfgs.
    #[arg(long, default_value = "dps")]
    method: String,
    #[arg(long)]
    out: PathBuf,
    /// Override sampler.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override sampler.rho.
    #[arg(long)]
    rho: Option<f64>,
    /// Override sampler.steps.
    #[arg(long)]
    steps: Option<usize>,
    /// L-BFGS iteration budget.
    #[arg(long, default_value_t = 30)]
    max_iter: usize,
    /// L-BFGS memory.
    #[arg(long, default_value_t = 10)]
    memory: usize,
    /// L-BFGS gradient smoothing in cells.
    #[arg(long, default_value_t = 2.0)]
    sigma_g: f64,
    /// Initial field for L-BFGS (constant value).
    #[arg(long, default_value_t = 0.5)]
    init: f64,
}

struct LoadedRun {
    schedule: NoiseSchedule,
    sampler: SamplerConfig,
    y: MeasurementMatrix,
    devices: SourceReceiverConfig,
    run: RunConfig,
    base: PathBuf,
}

fn load_run(config_path: &Path, args: &ReconstructArgs) -> Result<LoadedRun> {
    let run = RunConfig::load(config_path)?;
    let schedule = run.noise_schedule();
    let mut sampler = run.sampler_config();
    if let Some(seed) = args.seed {
        sampler.seed = seed;
    }
    if let Some(rho) = args.rho {
        sampler.rho = rho;
    }
    if let Some(steps) = args.steps {
        sampler.steps_per_unit = steps;
    }
    sampler.validate()?;
    let y = read_measurements(&RunConfig::resolve(config_path, &run.data.measurements))?;
    let dev_path = RunConfig::resolve(config_path, &run.data.config);
    let dev_bytes = std::fs::read(&dev_path)
        .with_context(|| format!("reading {}", dev_path.display()))?;
    let devices: SourceReceiverConfig = serde_json::from_slice(&dev_bytes)
        .map_err(|e| tomodiff::TomoError::format(dev_path.display().to_string(), e.to_string()))?;
    Ok(LoadedRun {
        schedule,
        sampler,
        y,
        devices,
        run,
        base: config_path.to_path_buf(),
    })
}

/// Build one score per ladder level from the configured prior.
fn build_scores(
    loaded: &LoadedRun,
    levels: usize,
) -> Result<(Vec<Box<dyn ScoreFunction>>, Option<GmmPrior>)> {
    let n = loaded.devices.grid_n;
    let d = n * n;
    match &loaded.run.prior {
        PriorSection::Gaussian { mean, variance } => {
            let prior = GmmPrior::new(
                vec![1.0],
                vec![vec![*mean; d]],
                vec![tomodiff::score::gmm::Covariance::Spherical(*variance)],
            )?;
            let mut scores: Vec<Box<dyn ScoreFunction>> = Vec::new();
            for k in 0..=levels {
                let p = prior.project(k, n)?;
                scores.push(Box::new(GmmScore::new(p, loaded.schedule, k)));
            }
            Ok((scores, Some(prior)))
        }
        PriorSection::Kde {
            manifest,
            bandwidth_sq,
            max_components,
        } => {
            let mpath = RunConfig::resolve(&loaded.base, manifest);
            let m = DatasetManifest::load(&mpath)?;
            let mut samples = m.load_samples(&mpath)?;
            if let Some(cap) = max_components {
                samples.truncate(*cap);
            }
            if m.grid_n != n {
                bail!(tomodiff::TomoError::invalid(format!(
                    "prior manifest grid {} does not match devices grid {n}",
                    m.grid_n
                )));
            }
            let prior = GmmPrior::kde(samples, *bandwidth_sq)?;
            let mut scores: Vec<Box<dyn ScoreFunction>> = Vec::new();
            for k in 0..=levels {
                let p = prior.project(k, n)?;
                scores.push(Box::new(GmmScore::new(p, loaded.schedule, k)));
            }
            Ok((scores, Some(prior)))
        }
        PriorSection::Denoiser { paths } => {
            if paths.len() < levels + 1 {
                bail!(tomodiff::TomoError::invalid(format!(
                    "prior.paths holds {} models, ladder needs {}",
                    paths.len(),
                    levels + 1
                )));
            }
            let mut scores: Vec<Box<dyn ScoreFunction>> = Vec::new();
            for (k, p) in paths.iter().take(levels + 1).enumerate() {
                let model = DenoiserModel::load(&RunConfig::resolve(&loaded.base, p))?;
                let side = n >> k;
                if model.arch().dim != side * side {
                    bail!(tomodiff::TomoError::invalid(format!(
                        "model {p} has dimension {}, level {k} needs {}",
                        model.arch().dim,
                        side * side
                    )));
                }
                scores.push(Box::new(DenoiserScore::new(model, k)));
            }
            Ok((scores, None))
        }
    }
}

fn build_ladder(loaded: &LoadedRun, prior: Option<&GmmPrior>) -> Result<SubspaceLadder> {
    let section = loaded
        .run
        .ladder
        .as_ref()
        .ok_or_else(|| tomodiff::TomoError::invalid("subspace-dps needs a ladder section"))?;
    let n = loaded.devices.grid_n;
    if let Some(energies) = &section.perp_energies {
        return Ok(SubspaceLadder::new(
            n,
            section.times.clone(),
            energies.clone(),
            loaded.schedule.t_end,
        )?);
    }
    match prior {
        Some(p) => Ok(SubspaceLadder::from_gmm(
            n,
            section.times.clone(),
            p,
            loaded.schedule.t_end,
        )?),
        None => bail!(tomodiff::TomoError::invalid(
            "ladder.perp_energies required when the prior is a denoiser"
        )),
    }
}

fn write_result(out: &Path, result: &ReconstructionResult, method: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_raster(&out.join("final.raster"), result.field.values(), RasterKind::Velocity, 0)?;
    write_pgm(&out.join("preview.pgm"), result.field.values())?;
    let mut hist = String::from("step,misfit\n");
    for (i, m) in result.history.iter().enumerate() {
        hist.push_str(&format!("{i},{m:.10e}\n"));
    }
    atomic_write(&out.join("history.csv"), hist.as_bytes())?;
    let mut timing = String::from("phase,level,seconds\n");
    for (level, secs) in &result.phase_seconds {
        timing.push_str(&format!("{method},{level},{secs:.6}\n"));
    }
    atomic_write(&out.join("timing.csv"), timing.as_bytes())?;
    let snapshot = serde_json::json!({
        "method": method,
        "seed": result.seed,
        "solver_calls": result.solver_calls,
        "sampler": result.config,
        "warning": result.warning,
        "final_misfit": result.history.last(),
    });
    atomic_write(
        &out.join("result.json"),
        serde_json::to_string_pretty(&snapshot)?.as_bytes(),
    )?;
    Ok(())
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let loaded = load_run(&args.config, &args)?;
    let result = match args.method.as_str() {
        "dps" => {
            let (scores, _) = build_scores(&loaded, 0)?;
            dps_run(
                &loaded.y,
                &loaded.devices,
                scores[0].as_ref(),
                &loaded.schedule,
                &loaded.sampler,
            )?
        }
        "subspace-dps" => {
            let levels = loaded
                .run
                .ladder
                .as_ref()
                .map(|l| l.levels)
                .ok_or_else(|| tomodiff::TomoError::invalid("subspace-dps needs a ladder"))?;
            let (scores, prior) = build_scores(&loaded, levels)?;
            let ladder = build_ladder(&loaded, prior.as_ref())?;
            let refs: Vec<&dyn ScoreFunction> = scores.iter().map(|b| b.as_ref()).collect();
            subspace_dps_run(
                &loaded.y,
                &loaded.devices,
                &ladder,
                &refs,
                &loaded.schedule,
                &loaded.sampler,
            )?
        }
        "lbfgs" => {
            let grid = Grid2D::new(loaded.devices.grid_n)?;
            let init = VelocityField::constant(grid, args.init)?;
            lbfgs_run(
                &loaded.y,
                &loaded.devices,
                &init,
                args.max_iter,
                args.memory,
                args.sigma_g,
            )?
        }
        other => bail!(tomodiff::TomoError::invalid(format!(
            "unknown method {other:?} (dps | subspace-dps | lbfgs)"
        ))),
    };
    write_result(&args.out, &result, &args.method)?;
    println!(
        "{}: final misfit {:.6e}, {} solver sweeps, wrote {}",
        args.method,
        result.history.last().copied().unwrap_or(f64::NAN),
        result.solver_calls,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "unknown")]
    method_id: String,
    /// Output prefix; writes <prefix>.csv and <prefix>.json.
    #[arg(long)]
    out: PathBuf,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let report = metrics::evaluate(&args.results, &args.truth, &args.method_id)?;
    report.write_csv(&args.out.with_extension("csv"))?;
    report.write_json(&args.out.with_extension("json"))?;
    println!(
        "{}: mean RMSE {:.4}, median RMSE {:.4}, mean SSIM {:.4}",
        args.method_id, report.mean_rmse, report.median_rmse, report.mean_ssim
    );
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
}

pub fn bench(args: BenchArgs) -> Result<()> {
    let rec_args = ReconstructArgs {
        config: args.config.clone(),
        method: "subspace-dps".into(),
        out: PathBuf::new(),
        seed: None,
        rho: None,
        steps: args.steps,
        max_iter: 30,
        memory: 10,
        sigma_g: 2.0,
        init: 0.5,
    };
    let loaded = load_run(&args.config, &rec_args)?;
    let levels = loaded
        .run
        .ladder
        .as_ref()
        .map(|l| l.levels)
        .ok_or_else(|| tomodiff::TomoError::invalid("bench needs a ladder section"))?;
    let (scores, prior) = build_scores(&loaded, levels)?;
    let ladder = build_ladder(&loaded, prior.as_ref())?;
    let refs: Vec<&dyn ScoreFunction> = scores.iter().map(|b| b.as_ref()).collect();
    let report = bench_compare(
        &loaded.y,
        &loaded.devices,
        &ladder,
        &refs,
        &loaded.schedule,
        &loaded.sampler,
        args.repeats,
    )?;
    report.write_csv(&args.out)?;
    println!(
        "full {:.2}s, subspace {:.2}s, time ratio {:.3} over {} repeats",
        report.full_seconds, report.subspace_seconds, report.time_ratio, report.repeats
    );
    Ok(())
}

