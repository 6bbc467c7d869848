use super::*;
use crate::special::expit;
use crate::trialdata::{Arm, PatientRecord, Thresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Gen {
    mu: Vec<f64>,
    cov: DMatrix<f64>,
    alpha: f64,
    gamma: f64,
    growth_censor: bool,
    arm_shift: f64,
}

fn simulate(g: &Gen, n: usize, seed: u64, two_arm: bool) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_max = g.mu.len();
    let l = g.cov.clone().cholesky().unwrap().l();
    let th = Thresholds::default();
    let mut patients = Vec::with_capacity(n);
    for i in 0..n {
        let arm = two_arm.then(|| if i % 2 == 0 { Arm::Control } else { Arm::Experimental });
        let r = arm.map_or(0.0, |a| a.indicator());
        let z0: f64 = rng.gen_range(0.0..1.0);
        let e: Vec<f64> = (0..t_max).map(|_| rng.sample(StandardNormal)).collect();
        let (mut sizes, mut flags) = (Vec::new(), Vec::new());
        let mut z_prev = z0;
        for t in 0..t_max {
            let y = g.mu[t] - g.arm_shift * r + (0..=t).map(|k| l[(t, k)] * e[k]).sum::<f64>();
            let d = rng.gen::<f64>() < expit(g.alpha + g.gamma * z_prev);
            let z = z0 * y.exp();
            sizes.push(z);
            flags.push(d);
            if d || (g.growth_censor && y > th.growth) {
                break;
            }
            z_prev = z;
        }
        patients.push(PatientRecord::new(format!("p{i}"), arm, z0, sizes, flags).unwrap());
    }
    TrialDataset::new(patients, t_max, th).unwrap()
}

fn t2() -> Gen {
    Gen {
        mu: vec![0.7f64.ln() * 0.5, 0.7f64.ln()],
        cov: DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 1.0]),
        alpha: -1.5,
        gamma: 0.0,
        growth_censor: true,
        arm_shift: 0.0,
    }
}

#[test]
fn parameter_counts() {
    assert_eq!(ThetaLayout::new(2, false).len(), 10);
    assert_eq!(ThetaLayout::new(4, false).len(), 23);
    for t in 1..8 {
        assert_eq!(ThetaLayout::new(t, false).len(), (t + 1) + t * (t + 1) / 2 + 2 * t);
        assert_eq!(ThetaLayout::new(t, true).len(), 2 * t + 1 + t * (t + 1) / 2 + 3 * t);
    }
    let l = ThetaLayout::new(3, true);
    let names: Vec<String> = (0..l.len()).map(|k| l.name(k)).collect();
    assert_eq!(names[..7], ["m1", "m2", "m3", "b", "a1", "a2", "a3"]);
    assert_eq!(names[7..13], ["logL11", "L21", "logL22", "L31", "L32", "logL33"]);
    assert_eq!(names[13..16], ["alpha1", "beta1", "gamma1"]);
    assert_eq!(l.gamma(2), l.len() - 1);
}

#[test]
fn theta_round_trip() {
    let ds = simulate(&t2(), 300, 1, true);
    let fit = assemble(&ds, true).unwrap();
    let (tm, pm) = fit.models_at(&fit.theta);
    assert_eq!(fit.layout.pack(&tm, &pm).unwrap().len(), fit.theta.len());
    for (a, b) in fit.layout.pack(&tm, &pm).unwrap().iter().zip(&fit.theta) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in tm.cov.iter().zip(fit.tumour.cov.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_visit_complete_data_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let patients: Vec<PatientRecord> = (0..40)
        .map(|i| {
            let z0 = rng.gen_range(5.0..50.0);
            let y: f64 = -0.2 + 0.01 * z0 + 0.3 * rng.sample::<f64, _>(StandardNormal);
            PatientRecord::new(format!("{i}"), None, z0, vec![z0 * y.exp()], vec![false]).unwrap()
        })
        .collect();
    let ds = TrialDataset::new(patients, 1, Thresholds::default()).unwrap();
    // closed-form simple regression
    let x: Vec<f64> = ds.patients.iter().map(|p| p.baseline).collect();
    let y: Vec<f64> = ds.patients.iter().map(|p| p.log_ratios().unwrap()[0]).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();

    let (m, _) = fit_tumour(&ds, false).unwrap();
    assert!((m.slope - slope).abs() < 1e-10);
    assert!((m.intercepts[0] - intercept).abs() < 1e-10);
    assert!((m.cov[(0, 0)] - rss / n).abs() < 1e-10);
}

#[test]
fn recovers_generating_covariance() {
    let mut g = t2();
    g.alpha = -40.0;
    g.growth_censor = false;
    let ds = simulate(&g, 2000, 7, false);
    let (m, _) = fit_tumour(&ds, false).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((m.cov[(i, j)] - g.cov[(i, j)]).abs() < 0.05, "{:?}", m.cov);
        }
    }
    assert!(m.slope.abs() < 0.1);
}

#[test]
fn monotone_missing_mle_beats_truth() {
    for seed in 0..10 {
        let mut g = t2();
        g.gamma = 0.2;
        g.alpha = -2.5;
        let ds = simulate(&g, 150, 100 + seed, false);
        let (m, ll) = fit_tumour(&ds, false).unwrap();
        let truth = TumourModel {
            intercepts: g.mu.clone(),
            slope: 0.0,
            arm_effects: None,
            cov: g.cov.clone(),
        };
        assert!(ll >= tumour_loglik(&ds, false, &truth).unwrap());
        assert!((tumour_loglik(&ds, false, &m).unwrap() - ll).abs() < 1e-9);
        assert!(m.cov.clone().cholesky().is_some());
        // no coordinate move improves the likelihood
        let layout = ThetaLayout::new(2, false);
        let mut th = vec![0.0; layout.len()];
        layout.pack_tumour(&m, &mut th).unwrap();
        for k in layout.tumour_range() {
            for s in [-1e-3, 1e-3] {
                let mut x = th.clone();
                x[k] += s;
                assert!(tumour_loglik(&ds, false, &layout.unpack_tumour(&x)).unwrap() <= ll + 1e-9);
            }
        }
    }
}

#[test]
fn missing_visit_is_insufficient() {
    let patients: Vec<PatientRecord> =
        (0..10).map(|i| PatientRecord::new(format!("{i}"), None, 10.0, vec![9.0 + i as f64 * 0.1], vec![false]).unwrap()).collect();
    let ds = TrialDataset::new(patients, 2, Thresholds::default()).unwrap();
    assert!(matches!(fit_tumour(&ds, false), Err(Error::InsufficientData(_))));
}

#[test]
fn logistic_recovers_intercept() {
    let mut g = t2();
    g.mu = vec![0.0];
    g.cov = DMatrix::from_element(1, 1, 0.5);
    let ds = simulate(&g, 100_000, 11, false);
    let (m, _) = fit_progression(&ds, false).unwrap();
    assert!((m.alpha[0] + 1.5).abs() < 0.05, "{}", m.alpha[0]);
    let rate: f64 = ds.patients.iter().filter(|p| p.new_lesion[0]).count() as f64 / ds.len() as f64;
    assert!((rate - 0.18).abs() < 0.01);
    assert!(!m.separated[0]);
}

#[test]
fn no_events_flags_separation() {
    let mut g = t2();
    g.alpha = -60.0;
    let ds = simulate(&g, 100, 3, false);
    let (m, _) = fit_progression(&ds, false).unwrap();
    assert!(m.separated.iter().all(|&s| s));
    assert_eq!(m.alpha[0], -COEF_CAP);
    let fit = assemble(&ds, false).unwrap();
    assert!(!fit.warnings.is_empty());
}

#[test]
fn size_effect_within_three_se() {
    let mut g = t2();
    g.alpha = -2.5;
    g.gamma = 0.2;
    for seed in 0..5 {
        let ds = simulate(&g, 3000, 40 + seed, false);
        let fit = assemble(&ds, false).unwrap();
        for t in 0..2 {
            let k = fit.layout.gamma(t);
            let se = fit.theta_cov[(k, k)].sqrt();
            assert!((fit.theta[k] - 0.2).abs() < 3.0 * se, "visit {t}: {} (se {se})", fit.theta[k]);
        }
    }
}

#[test]
fn logistic_block_matches_analytic_information() {
    let mut g = t2();
    g.gamma = 0.0;
    let ds = simulate(&g, 500, 21, false);
    let fit = assemble(&ds, false).unwrap();
    // analytic (X'WX)^-1 at the fitted coefficients, design (1, z_prev)
    for t in 0..2 {
        let (a, c) = (fit.progression.alpha[t], fit.progression.gamma[t]);
        let mut info = [[0.0; 2]; 2];
        for p in ds.patients.iter().filter(|p| p.last_observed() > t) {
            let z = if t == 0 { p.baseline } else { p.sizes[t - 1] };
            let mu = expit(a + c * z);
            let w = mu * (1.0 - mu);
            info[0][0] += w;
            info[0][1] += w * z;
            info[1][1] += w * z * z;
        }
        let det = info[0][0] * info[1][1] - info[0][1] * info[0][1];
        let var_alpha = info[1][1] / det;
        let k = fit.layout.alpha(t);
        assert!((fit.theta_cov[(k, k)] / var_alpha - 1.0).abs() < 0.01);
    }
}

#[test]
fn reordering_patients_gives_same_fit() {
    let ds = simulate(&t2(), 200, 5, true);
    let mut rev = ds.clone();
    rev.patients.reverse();
    let (a, b) = (assemble(&ds, true).unwrap(), assemble(&rev, true).unwrap());
    for (x, y) in a.theta.iter().zip(&b.theta) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn two_arm_fit_finds_arm_effect() {
    let mut g = t2();
    g.arm_shift = 0.4;
    let ds = simulate(&g, 1000, 8, true);
    let fit = assemble(&ds, true).unwrap();
    let a = fit.tumour.arm_effects.as_ref().unwrap();
    assert!((a[1] + 0.4).abs() < 0.15, "{a:?}");
    let cov = &fit.theta_cov;
    assert!(cov.iter().all(|v| v.is_finite()));
    assert!((cov - cov.transpose()).amax() < 1e-12);
    // warm refit reaches the same optimum
    let again = refit(&ds, &fit).unwrap();
    for (x, y) in again.theta.iter().zip(&fit.theta) {
        assert!((x - y).abs() < 1e-6);
    }
    assert!(fit.report().contains("beta2 = "));
}
