// Calibration sweep for the phantom-reconstruction benchmark settings.
use tomodiff::grid::*;
use tomodiff::lbfgs::lbfgs_run;
use tomodiff::metrics::rmse;
use tomodiff::phantom::*;
use tomodiff::reconstruct::*;
use tomodiff::score::gmm::GmmPrior;
use tomodiff::score::{GmmScore, ScoreFunction};
use tomodiff::sde::NoiseSchedule;
use tomodiff::subspace::SubspaceLadder;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_test: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let n_train: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(256);

    let n = 64;
    let grid = build_grid(n).unwrap();
    let config = build_config(Pattern::Surrounding, grid, 24, 48).unwrap();
    let schedule = NoiseSchedule::default();
    let spec = PhantomSpec::default();

    eprintln!("generating {n_train} training phantoms...");
    let train: Vec<Vec<f64>> = (0..n_train)
        .map(|i| {
            let s = PhantomSpec { seed: i as u64, ..spec };
            gen_kit4(&s, grid).unwrap().values().iter().cloned().collect()
        })
        .collect();

    let tests: Vec<(VelocityField, MeasurementMatrix)> = (0..n_test)
        .map(|i| {
            let s = PhantomSpec { seed: 10_000 + i as u64, ..spec };
            let truth = gen_kit4(&s, grid).unwrap();
            let y = simulate(&truth, &config, 0.01, 20_000 + i as u64).unwrap();
            (truth, y)
        })
        .collect();

    // L-BFGS baseline
    let mut lb = Vec::new();
    let t0 = std::time::Instant::now();
    for (truth, y) in &tests {
        let init = VelocityField::constant(grid, 0.5).unwrap();
        let run = lbfgs_run(y, &config, &init, 30, 10, 2.0).unwrap();
        lb.push(rmse(run.field.values(), truth.values()).unwrap());
    }
    lb.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!("L-BFGS rmse: {:?} median {:.4} ({:.1}s)", lb.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(), lb[lb.len()/2], t0.elapsed().as_secs_f64());

    for bw in [0.005f64, 0.02] {
        let prior = GmmPrior::kde(train.clone(), bw).unwrap();
        let score0 = GmmScore::new(prior.clone(), schedule, 0);
        let score1 = GmmScore::new(prior.project(1, n).unwrap(), schedule, 1);
        let ladder = SubspaceLadder::from_gmm(n, vec![0.5], &prior, 1.0).unwrap();
        let scores: Vec<&dyn ScoreFunction> = vec![&score0, &score1];
        for rho in [500.0f64, 2000.0, 10000.0] {
            let mut fulls = Vec::new();
            let mut subs = Vec::new();
            let t0 = std::time::Instant::now();
            for (k, (truth, y)) in tests.iter().enumerate() {
                let cfg = SamplerConfig { steps_per_unit: steps, rho, seed: 777 + k as u64, ..Default::default() };
                match dps_run(y, &config, &score0, &schedule, &cfg) {
                    Ok(run) => fulls.push(rmse(run.field.values(), truth.values()).unwrap()),
                    Err(e) => { eprintln!("dps failed: {e}"); fulls.push(f64::NAN); }
                }
                match subspace_dps_run(y, &config, &ladder, &scores, &schedule, &cfg) {
                    Ok(run) => subs.push(rmse(run.field.values(), truth.values()).unwrap()),
                    Err(e) => { eprintln!("sub failed: {e}"); subs.push(f64::NAN); }
                }
            }
            let med = |v: &mut Vec<f64>| { v.sort_by(|a,b| a.partial_cmp(b).unwrap()); v[v.len()/2] };
            let (mf, ms) = (med(&mut fulls.clone()), med(&mut subs.clone()));
            println!("bw {bw} rho {rho}: full {:?} med {mf:.4} | sub {:?} med {ms:.4} ({:.0}s)",
                fulls.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
                subs.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
                t0.elapsed().as_secs_f64());
        }
    }
}
