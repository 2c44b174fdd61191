use nlffr::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trial(label: &str, eps_grid: Option<Vec<f64>>, gamma_grid: Option<Vec<f64>>, n_reps: usize) {
    let grid = master_grid();
    let mut covered = 0;
    let mut pw_cov = 0.0;
    let mut ises = Vec::new();
    let mut s_ns = Vec::new();
    for rep in 0..n_reps {
        let mut rng_x = ChaCha8Rng::seed_from_u64(1000 + rep as u64);
        let mut rng_n = ChaCha8Rng::seed_from_u64(5000 + rep as u64);
        let mut rng_c = ChaCha8Rng::seed_from_u64(9000 + rep as u64);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut test_x = Vec::new();
        let mut test_y = Vec::new();
        for i in 0..250 {
            let sx = gen_x(XGen::Grb, &mut rng_x);
            let yv = gen_response_values(ResponseModel::Two, &sx, 0.1, &mut rng_n, &grid);
            if i < 100 {
                xs.push(ObservedCurve::new(format!("s{i:03}"), grid.clone(), sx.eval_on(&grid)).unwrap());
                ys.push(ObservedCurve::new(format!("s{i:03}"), grid.clone(), yv).unwrap());
            } else {
                test_x.push(ObservedCurve::new(format!("t{i:03}"), grid.clone(), sx.eval_on(&grid)).unwrap());
                test_y.push(yv);
            }
        }
        let cfg = FitConfig {
            x_family: KernelFamily::Grb,
            y_family: KernelFamily::Grb,
            x_smoothing: Tuning::default(),
            y_smoothing: Tuning::default(),
            second_layer: Tuning::Gcv { epsilon_grid: eps_grid.clone(), gamma_grid: gamma_grid.clone() },
        };
        let model = fit(&xs, &ys, &cfg).unwrap();
        let predictor = model.predictor(&grid).unwrap();
        let mut rep_ises = Vec::new();
        for (tx, ty) in test_x.iter().zip(&test_y) {
            let yhat = predictor.predict(tx).unwrap();
            rep_ises.push(ise(&yhat, ty, &grid).unwrap());
        }
        rep_ises.sort_by(f64::total_cmp);
        ises.push(rep_ises[rep_ises.len() / 2]);

        // fresh x0 per rep
        let x0 = gen_x(XGen::Grb, &mut rng_c);
        let truth = true_mean_on(ResponseModel::Two, &x0, &grid);
        let x0_obs = ObservedCurve::new("x0", grid.clone(), x0.eval_on(&grid)).unwrap();
        let es = eigen_system(&model, DEFAULT_EIGEN_TOL).unwrap();
        let resid = residual_model(&model, &grid).unwrap();
        let band = simultaneous_band(&model, &es, &resid, &x0_obs, 0.05, 10_000, 42 + rep as u64).unwrap();
        s_ns.push(model.weights(&x0_obs).unwrap().w.norm());
        let sup: f64 = band.center.iter().zip(&truth).map(|(c, t)| (c - t).abs()).fold(0.0, f64::max);
        if sup <= band.band_halfwidth { covered += 1; }
        let hits = band.center.iter().zip(&truth).zip(&band.pointwise_halfwidth)
            .filter(|((c, t), hw)| (*c - *t).abs() <= **hw).count();
        pw_cov += hits as f64 / grid.len() as f64;
    }
    ises.sort_by(f64::total_cmp);
    let mean_sn = s_ns.iter().sum::<f64>() / s_ns.len() as f64;
    println!(
        "{label}: median ISE {:.4}  band cov {:.3}  pw cov {:.3}  mean s_n {:.3}",
        ises[ises.len() / 2], covered as f64 / n_reps as f64, pw_cov / n_reps as f64, mean_sn
    );
}

fn main() {
    let n_reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    trial("cap 1e+1 (current)", Some(vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]), None, n_reps);
    trial("cap 1e-1          ", Some(vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]), None, n_reps);
    trial("cap 1e-2          ", Some(vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2]), None, n_reps);
    trial("cap 1e-3          ", Some(vec![1e-6, 1e-5, 1e-4, 1e-3]), None, n_reps);
}
