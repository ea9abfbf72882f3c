//! Worked scenarios for each module: constructed panels with known answers
//! and Monte Carlo checks against independently computed targets.

use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use synthctl::conformal::{block_p_value, confidence_interval, linspace};
use synthctl::panel::PeriodLabel;
use synthctl::rng::rng_from_seed;
use synthctl::simlab::{
    gen_mixture_dgp, run_replication_study, stationary_mixture_panel, symmetric_variance_mixture, theorem1_experiment,
    MixtureDgpConfig, StationaryMixture, StudySpec, Summary, Theorem1Spec,
};
use synthctl::solver::solve_least_squares_simplex;
use synthctl::{
    bootstrap_counterfactual, demean, fit_abadie, fit_d2mscm, fit_dmscm, load_panel, mmd_test, quantiles, Method,
    MomentConfig, PanelData, PanelSchema, SolverOptions, WeightVector,
};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn normals(n: usize, mean: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stationary(j: usize, t0: usize, t1: usize, tau: f64, seed: u64) -> MixtureDgpConfig {
    MixtureDgpConfig { j, t0, t1, tau, drift_var: 0.0, var_floor_increment: 0.0, seed, ..Default::default() }
}

// ---------------------------------------------------------------- panel

#[test]
fn csv_round_trip_is_bitwise() {
    let (raw, _) = gen_mixture_dgp(&MixtureDgpConfig { j: 4, t0: 12, t1: 3, seed: 5, ..Default::default() }).unwrap();
    let units: Vec<String> = ["tr", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let labels = (1970..1985).map(PeriodLabel::Int).collect();
    let panel = PanelData::new(units, "tr", raw.outcomes().clone(), None, 12, labels).unwrap();
    let schema = PanelSchema::default();
    let mut buf = Vec::new();
    panel.write_csv(&mut buf, &schema).unwrap();
    let back = load_panel(buf.as_slice(), &schema, "tr", 12).unwrap();
    assert_eq!(back, panel);
    for (x, y) in back.outcomes().iter().zip(panel.outcomes().iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn demeaning_twice_leaves_pre_means_at_zero() {
    let (panel, _) = gen_mixture_dgp(&MixtureDgpConfig { j: 6, t0: 40, t1: 5, seed: 8, ..Default::default() }).unwrap();
    let once = demean(&panel).to_panel();
    let twice = demean(&once);
    for m in &twice.unit_means {
        assert!(m.abs() < 1e-12, "{m}");
    }
    for (a, b) in twice.demeaned_outcomes.iter().zip(once.outcomes().iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------- solver

#[test]
fn solution_beats_every_vertex() {
    let mut rng = rng_from_seed(21);
    for _ in 0..50 {
        let (n, j) = (rng.random_range(2..8), rng.random_range(1..6));
        let a = DMatrix::from_fn(n, j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DMatrix::identity(n, n);
        let (w, d) = solve_least_squares_simplex(&a, &b, &v, &opts()).unwrap();
        assert!(w.is_on_simplex());
        // oracle: the objective evaluated directly at each vertex e_k
        for k in 0..j {
            let vertex = (&b - a.column(k)).norm_squared();
            assert!(d.final_objective <= vertex + 1e-12, "{} > vertex {k} {vertex}", d.final_objective);
        }
        if d.converged {
            assert!(d.projected_gradient_norm <= opts().tol, "{}", d.projected_gradient_norm);
        }
    }
}

#[test]
fn solver_is_bitwise_deterministic() {
    let (panel, _) = gen_mixture_dgp(&MixtureDgpConfig { j: 8, t0: 50, t1: 5, seed: 3, ..Default::default() }).unwrap();
    let cfg = MomentConfig::with_g(4);
    let a = fit_dmscm(&panel, &cfg, &opts()).unwrap();
    let b = fit_dmscm(&panel, &cfg, &opts()).unwrap();
    let bits = |w: &WeightVector| w.weights.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.weights), bits(&b.weights));
    assert_eq!(a.diagnostics, b.diagnostics);
}

// ---------------------------------------------------------------- estimators

#[test]
fn dmscm_recovers_effect_of_twenty_on_stationary_mixture() {
    // 20 independent panels; the mean post-period ATT of each must land in
    // 20 ± 1
    let atts: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let (p, _) = gen_mixture_dgp(&stationary(10, 2000, 100, 20.0, s)).unwrap();
            fit_dmscm(&p, &MomentConfig::with_g(5), &opts()).unwrap().mean_att()
        })
        .collect();
    for a in &atts {
        assert!((a - 20.0).abs() <= 1.0, "{atts:?}");
    }
}

#[test]
fn variance_only_components_defeat_abadie_but_not_dmscm() {
    let (abadie, dmscm): (Vec<f64>, Vec<f64>) = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let p = symmetric_variance_mixture(2000, 10, 1.0, 4.0, 0.5, s).unwrap();
            (
                fit_abadie(&p, &opts()).unwrap().weights.weights[0],
                fit_dmscm(&p, &MomentConfig::with_g(4), &opts()).unwrap().weights.weights[0],
            )
        })
        .unzip();
    let (ma, md) = (mean(&abadie), mean(&dmscm));
    // least squares settles on the variance-minimizing combination
    // 1·w² + 4·(1 - w)² → w = 0.8, not on the mixing weights
    assert!((ma - 0.8).abs() < 0.02, "abadie mean {ma}");
    assert!((md - 0.5).abs() < 0.02, "dmscm mean {md}");
    let hits = dmscm.iter().filter(|w| (*w - 0.5).abs() < 0.15).count();
    assert!(hits >= 90, "{hits}/100 DMSCM fits near 0.5");
    assert!(abadie.iter().all(|w| (w - 0.5).abs() > 0.15));
}

#[test]
fn abadie_reproduces_noiseless_mixture_of_means() {
    let w_star = [0.2, 0.5, 0.3];
    let mut rng = rng_from_seed(4);
    let (t0, t1) = (30, 4);
    let mut y = DMatrix::from_fn(4, t0 + t1, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
    for t in 0..t0 + t1 {
        y[(0, t)] = (0..3).map(|j| w_star[j] * y[(j + 1, t)]).sum();
    }
    let f = fit_abadie(&PanelData::from_matrix(y, t0).unwrap(), &opts()).unwrap();
    for (w, e) in f.weights.weights.iter().zip(w_star) {
        assert!((w - e).abs() < 1e-6, "{:?}", f.weights.weights);
    }
    assert!(f.att.iter().all(|a| a.abs() < 1e-5));
}

fn shifted_mixture(shift: f64, means: Vec<f64>, seed: u64) -> PanelData {
    stationary_mixture_panel(&StationaryMixture {
        means,
        variances: vec![1.0, 9.0],
        w_star: vec![0.6, 0.4],
        t0: 20_000,
        t1: 2_000,
        tau: 0.0,
        shift,
        demeaned: true,
        seed,
    })
    .unwrap()
}

#[test]
fn d2mscm_moves_level_shift_into_intercept() {
    let p = shifted_mixture(5.0, vec![-2.0, 3.0], 31);
    let f = fit_d2mscm(&p, &MomentConfig::with_g(2), &opts()).unwrap();
    let w0 = f.weights.intercept.unwrap();
    assert!((w0 - 5.0).abs() < 0.25, "intercept {w0}");
    assert!(f.mean_att().abs() < 0.25, "att {}", f.mean_att());
    // the intercept is Ȳ₀ − Σ ŵ_j Ȳ_j over the pre-period, by hand
    let pre_mean = |u: usize| (0..p.t0()).map(|t| p.y(u, t)).sum::<f64>() / p.t0() as f64;
    let by_hand = pre_mean(0) - f.weights.weights.iter().enumerate().map(|(j, w)| w * pre_mean(j + 1)).sum::<f64>();
    assert!((w0 - by_hand).abs() < 1e-9);
}

#[test]
fn d2mscm_without_shift_agrees_with_dmscm() {
    // equal component means: the mixture and demeaned-mixture models coincide
    let p = shifted_mixture(0.0, vec![1.0, 1.0], 32);
    let cfg = MomentConfig::with_g(2);
    let d2 = fit_d2mscm(&p, &cfg, &opts()).unwrap();
    let d = fit_dmscm(&p, &cfg, &opts()).unwrap();
    assert!(d2.weights.intercept.unwrap().abs() < 0.1, "{:?}", d2.weights.intercept);
    assert!((d2.mean_att() - d.mean_att()).abs() < 0.1, "{} vs {}", d2.mean_att(), d.mean_att());
}

#[test]
fn d2mscm_on_constant_panel_is_exact() {
    let (t0, t1, tau) = (6, 3, 2.5);
    let levels = [7.0, 1.0, 4.0, -2.0];
    let y = DMatrix::from_fn(4, t0 + t1, |i, t| levels[i] + if i == 0 && t >= t0 { tau } else { 0.0 });
    let f = fit_d2mscm(&PanelData::from_matrix(y, t0).unwrap(), &MomentConfig::with_g(3), &opts()).unwrap();
    let w = &f.weights.weights;
    let expected = levels[0] - (0..3).map(|j| w[j] * levels[j + 1]).sum::<f64>();
    assert!((f.weights.intercept.unwrap() - expected).abs() < 1e-12);
    assert!(f.att.iter().all(|a| (a - tau).abs() < 1e-12), "{:?}", f.att);
}

// ---------------------------------------------------------------- dte

#[test]
fn bootstrap_mean_follows_weights() {
    let mut rng = rng_from_seed(17);
    let (t0, t1) = (5, 50);
    let y = DMatrix::from_fn(3, t0 + t1, |i, _| 2.0 * i as f64 + rng.sample::<f64, _>(StandardNormal));
    let p = PanelData::from_matrix(y, t0).unwrap();
    let s = bootstrap_counterfactual(&p, &WeightVector::new(vec![0.3, 0.7]), 100_000, 9).unwrap();
    let post_mean = |u: usize| (t0..t0 + t1).map(|t| p.y(u, t)).sum::<f64>() / t1 as f64;
    let target = 0.3 * post_mean(1) + 0.7 * post_mean(2);
    let m = mean(&s.draws);
    let sd = (s.draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (s.draws.len() - 1) as f64).sqrt();
    let se = sd / (s.draws.len() as f64).sqrt();
    assert!((m - target).abs() <= 3.0 * se, "{m} vs {target} (se {se})");
}

#[test]
fn normal_upper_quantile() {
    let q = quantiles(&normals(100_000, 0.0, 1), &[0.975]).unwrap()[0];
    assert!((q - 1.96).abs() <= 0.05, "{q}");
}

#[test]
fn mmd_separates_distant_normals() {
    let r = mmd_test(&normals(200, 0.0, 2), &normals(200, 5.0, 3), 500, 4).unwrap();
    assert!(r.p_value <= 0.01, "{}", r.p_value);
    assert_eq!(r.p_value, 1.0 / 501.0);
}

#[test]
fn permutation_p_value_bounds() {
    for (seed, b) in [(1u64, 1usize), (2, 19), (3, 99)] {
        let r = mmd_test(&normals(30, 0.0, seed), &normals(25, 0.3, seed + 100), b, seed).unwrap();
        assert!(r.p_value >= 1.0 / (b + 1) as f64 && r.p_value <= 1.0, "{}", r.p_value);
    }
}

// ---------------------------------------------------------------- conformal

#[test]
fn interval_covers_zero_without_effect() {
    let covered = (0..200u64)
        .into_par_iter()
        .filter(|&i| {
            let (p, _) = gen_mixture_dgp(&stationary(10, 30, 10, 0.0, 1000 + i)).unwrap();
            let r = confidence_interval(&p, None, 0.1, Method::Dmscm, &MomentConfig::default(), &opts()).unwrap();
            r.interval.contains(0.0)
        })
        .count();
    assert!(covered >= 170, "covered {covered}/200");
}

#[test]
fn singleton_grid_gives_point_interval() {
    let (p, _) = gen_mixture_dgp(&stationary(5, 30, 5, 0.0, 2)).unwrap();
    let cfg = MomentConfig::with_g(3);
    let tau_hat = fit_dmscm(&p, &cfg, &opts()).unwrap().mean_att();
    let r = confidence_interval(&p, Some(&[tau_hat]), 0.1, Method::Dmscm, &cfg, &opts()).unwrap();
    assert!(r.p_values[0] > 0.1, "{}", r.p_values[0]);
    assert_eq!((r.interval.lower, r.interval.upper), (Some(tau_hat), Some(tau_hat)));
}

#[test]
fn shifting_post_outcomes_moves_p_curve() {
    let (p, _) = gen_mixture_dgp(&stationary(5, 30, 5, 1.0, 6)).unwrap();
    let cfg = MomentConfig::with_g(3);
    let c = 2.0;
    let mut shifted = p.treated_series();
    for y in &mut shifted[p.t0()..] {
        *y += c;
    }
    let q = p.with_treated_outcomes(&shifted).unwrap();
    let grid = linspace(-4.0, 6.0, 41);
    let grid_c: Vec<f64> = grid.iter().map(|g| g + c).collect();
    let a = confidence_interval(&p, Some(&grid), 0.1, Method::Dmscm, &cfg, &opts()).unwrap();
    let b = confidence_interval(&q, Some(&grid_c), 0.1, Method::Dmscm, &cfg, &opts()).unwrap();
    let argmax = |r: &synthctl::ConformalReport| {
        let best = r.p_values.iter().cloned().fold(f64::MIN, f64::max);
        r.grid[r.p_values.iter().position(|&v| v == best).unwrap()]
    };
    assert!((argmax(&b) - argmax(&a) - c).abs() < 1e-9, "{} vs {}", argmax(&a), argmax(&b));
    assert_eq!(a.p_values, b.p_values);
}

proptest! {
    #[test]
    fn larger_post_residuals_never_raise_p(
        pre in proptest::collection::vec(-3.0f64..3.0, 4..20),
        post in proptest::collection::vec(-3.0f64..3.0, 1..5),
        grow in 0.01f64..2.0,
    ) {
        let base: Vec<f64> = pre.iter().chain(&post).copied().collect();
        let larger: Vec<f64> =
            pre.iter().copied().chain(post.iter().map(|r| r.signum() * (r.abs() + grow))).collect();
        prop_assert!(block_p_value(&larger, post.len()) <= block_p_value(&base, post.len()));
    }
}

// ---------------------------------------------------------------- simlab

#[test]
fn treated_mean_matches_weighted_component_means() {
    let cfg = MixtureDgpConfig { j: 5, t0: 20_000, t1: 1, seed: 77, ..Default::default() };
    let (p, truth) = gen_mixture_dgp(&cfg).unwrap();
    let t0 = p.t0();
    let sample = (0..t0).map(|t| p.y(0, t)).sum::<f64>() / t0 as f64;
    // period t lives in column t - 1; path index t
    let (mut target, mut var) = (0.0, 0.0);
    for t in 1..=t0 {
        let m: f64 = (0..cfg.j).map(|c| truth.w_star[c] * truth.mean_paths[c][t]).sum();
        let second: f64 = (0..cfg.j)
            .map(|c| truth.w_star[c] * (truth.var_paths[c][t] + truth.mean_paths[c][t].powi(2)))
            .sum();
        target += m;
        var += second - m * m;
    }
    target /= t0 as f64;
    let se = var.sqrt() / t0 as f64;
    assert!((sample - target).abs() <= 4.0 * se, "{sample} vs {target} (se {se})");
}

fn oracle_summary(mut v: Vec<f64>) -> Summary {
    let n = v.len();
    let m = v.iter().sum::<f64>() / n as f64;
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Summary { n, mean: m, median: q(0.5), q25: q(0.25), q75: q(0.75) }
}

#[test]
fn aggregates_recompute_from_records() {
    let spec = StudySpec { replications: 7, j_values: vec![3, 6], g_values: vec![2, 3], ..StudySpec::default() };
    let r = run_replication_study(&spec).unwrap();
    assert_eq!(r.summaries.len(), 2 * 2 * 2);
    for c in &r.summaries {
        let cell: Vec<_> =
            r.records.iter().filter(|x| x.j == c.j && x.g == c.g && x.method == c.method && x.error.is_none()).collect();
        assert_eq!(c.att_error, Some(oracle_summary(cell.iter().map(|x| x.att_error).collect())));
        assert_eq!(c.weight_error, Some(oracle_summary(cell.iter().map(|x| x.weight_error).collect())));
        assert_eq!(c.att_bias, Some(oracle_summary(cell.iter().map(|x| x.att_bias).collect())));
    }
}

#[test]
fn no_measurement_error_no_bias() {
    let spec = Theorem1Spec { sigma_diag: vec![0.0, 0.0], replications: 40, ..Theorem1Spec::default() };
    let o = theorem1_experiment(&spec).unwrap();
    for k in 0..2 {
        assert!((o.ols_mean[k] - spec.w_star[k]).abs() < 1e-3, "{o:?}");
        assert!((o.gmm_mean[k] - spec.w_star[k]).abs() < 1e-3, "{o:?}");
    }
}

#[test]
fn halving_noise_reduces_least_squares_bias() {
    let dist = |sigma: f64| {
        let spec = Theorem1Spec { sigma_diag: vec![sigma, sigma], ..Theorem1Spec::default() };
        let o = theorem1_experiment(&spec).unwrap();
        o.ols_mean.iter().zip(&spec.w_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (full, half) = (dist(1.0), dist(0.5));
    assert!(half < full, "{half} !< {full}");
}

// ---------------------------------------------------------------- cli

const BIN: &str = env!("CARGO_BIN_EXE_synthctl");

fn toy(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data").join(name).display().to_string()
}

fn synthctl(args: &[&str], dir: &Path) -> String {
    let o = Command::new(BIN).args(args).current_dir(dir).env_remove("SYNTHCTL_THREADS").output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn csv_rows(path: PathBuf) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn cli_reports_shift_as_intercept() {
    let dir = tempfile::tempdir().unwrap();
    let shifted = toy("toy_shifted.csv");
    synthctl(&["fit", "--input", &shifted, "--treated", "treated", "--t0", "160", "--method", "d2mscm", "--g", "2"], dir.path());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit_result.json")).unwrap()).unwrap();
    let w0 = doc["intercept"].as_f64().unwrap();
    assert!((w0 - 5.0).abs() < 0.5, "intercept {w0}");
}

#[test]
fn cli_interval_covers_zero_on_no_effect_toy() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthctl(
        &["conformal", "--input", &toy("toy_noeffect.csv"), "--treated", "treated", "--t0", "160", "--g", "3", "--level", "0.1"],
        dir.path(),
    );
    let line = out.lines().find(|l| l.contains('[')).unwrap();
    let inner = &line[line.find('[').unwrap() + 1..line.find(']').unwrap()];
    let bounds: Vec<f64> = inner.split(',').map(|s| s.trim().parse().unwrap()).collect();
    assert!(bounds[0] <= 0.0 && 0.0 <= bounds[1], "{line}");
}

#[test]
fn cli_figure_preset_emits_g_curves() {
    let dir = tempfile::tempdir().unwrap();
    synthctl(&["simulate", "--preset", "figure2", "--replications", "20"], dir.path());
    let rows = csv_rows(dir.path().join("sim_out/att_error_by_g.csv"));
    for m in ["dmscm", "abadie"] {
        let gs: Vec<&str> = rows.iter().filter(|r| r[1] == m).map(|r| r[0].as_str()).collect();
        assert_eq!(gs, ["2", "5", "10"], "{m}");
    }
}

#[test]
fn cli_j_preset_emits_j_curves() {
    let dir = tempfile::tempdir().unwrap();
    synthctl(&["simulate", "--preset", "appendixD", "--j", "1,5,10", "--g", "2,5", "--replications", "2"], dir.path());
    for file in ["att_error_by_j.csv", "mmd_by_j.csv"] {
        let rows = csv_rows(dir.path().join("sim_out").join(file));
        let mut js: Vec<&str> = rows.iter().filter(|r| r[1] == "abadie").map(|r| r[0].as_str()).collect();
        js.dedup();
        assert_eq!(js, ["1", "5", "10"], "{file}");
        assert!(rows.iter().any(|r| r[1] == "dmscm_g5"), "{file}");
    }
}
