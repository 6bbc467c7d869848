use super::*;
use crate::modelfit::assemble;
use crate::trialdata::{PatientRecord, Thresholds};
use rand::Rng;
use rand_distr::StandardNormal;

/// Two-visit trials with correlated log ratios and size-dependent new lesions.
fn simulate(n: usize, two_arm: bool, shift: f64, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = 1.2f64.ln();
    let patients = (0..n)
        .map(|i| {
            let arm = two_arm.then(|| if i % 2 == 0 { Arm::Control } else { Arm::Experimental });
            let d = if arm == Some(Arm::Experimental) { shift } else { 0.0 };
            let z0: f64 = rng.gen();
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let y = [0.5 * (0.7f64.ln() + d) + 0.7 * e1, 0.7f64.ln() + d + 0.7 * e1 + 0.7 * e2];
            let (mut sizes, mut flags) = (vec![], vec![]);
            let mut z_prev = z0;
            for yt in y {
                let nl = rng.gen::<f64>() < expit(-1.5 + 0.5 * z_prev);
                z_prev = z0 * yt.exp();
                sizes.push(z_prev);
                flags.push(nl);
                if nl || yt > g {
                    break;
                }
            }
            PatientRecord::new(format!("p{i}"), arm, z0, sizes, flags).unwrap()
        })
        .collect();
    TrialDataset::new(patients, 2, Thresholds::default()).unwrap()
}

fn serial() -> DeltaOptions {
    DeltaOptions {
        parallel: false,
        ..DeltaOptions::default()
    }
}

#[test]
fn wilson_closed_forms() {
    let (lo, hi) = wilson_ci(0, 10, 0.05);
    let z2 = 1.959963984540054f64.powi(2);
    assert_eq!(lo, 0.0);
    assert!((hi - z2 / (10.0 + z2)).abs() < 1e-12);
    assert!((hi - 0.2775).abs() < 5e-5);
    let (lo, hi) = wilson_ci(5, 10, 0.05);
    assert!((lo - 0.2366).abs() < 5e-5 && (hi - 0.7634).abs() < 5e-5);
    for k in 0..=20 {
        let (a, b) = wilson_ci(k, 20, 0.1);
        let (c, d) = wilson_ci(20 - k, 20, 0.1);
        assert!((a - (1.0 - d)).abs() < 1e-12 && (b - (1.0 - c)).abs() < 1e-12);
        assert!(a <= k as f64 / 20.0 && k as f64 / 20.0 <= b);
    }
    let wide = wilson_ci(30, 100, 0.05);
    let narrow = wilson_ci(30_000, 100_000, 0.05);
    assert!(narrow.1 - narrow.0 < 0.1 * (wide.1 - wide.0));
    assert!(narrow.0 < 0.3 && narrow.1 > 0.3);
}

#[test]
fn interval_contains_estimate_and_collapses_without_variance() {
    let data = simulate(80, false, 0.0, 1);
    let mut model = assemble(&data, false).unwrap();
    let spec = EndpointSpec::fixed(2);
    for method in [Method::MAug, Method::EAugbin] {
        let e = ci_logit_delta(&data, &model, &spec, method, 0.05, None, &serial()).unwrap();
        let p = e.mean_probability;
        assert!(0.0 <= e.ci.0 && e.ci.0 < p && p < e.ci.1 && e.ci.1 <= 1.0, "{e:?}");
        assert!(!e.wilson_fallback);
    }
    let n = model.theta.len();
    model.theta_cov = DMatrix::zeros(n, n);
    let e = ci_logit_delta(&data, &model, &spec, Method::MAug, 0.05, None, &serial()).unwrap();
    assert!((e.ci.0 - e.mean_probability).abs() < 1e-15 && (e.ci.1 - e.mean_probability).abs() < 1e-15);
    let b = ci_logit_delta(&data, &model, &spec, Method::Bin, 0.05, None, &serial()).unwrap();
    let (k, n) = respprob::bin_proportion(&data, &spec);
    assert_eq!(b.ci, wilson_ci(k, n, 0.05));
}

#[test]
fn gradient_matches_five_point_stencil() {
    let data = simulate(60, false, 0.0, 2);
    let model = assemble(&data, false).unwrap();
    let spec = EndpointSpec::fixed(2);
    let ev = TrialEvaluator::new(&data, &spec, Method::MAug, QuadratureConfig::default()).unwrap();
    let (_, grad) = gradient(&ev, &model, &serial(), |m| logit(m[0])).unwrap();
    let l = |j: usize, d: f64| {
        let mut th = model.theta.clone();
        th[j] += d;
        let (tm, pm) = model.models_at(&th);
        logit(ev.means(&tm, &pm).unwrap()[0])
    };
    for j in 0..model.theta.len() {
        let h = 1e-3 * model.theta[j].abs().max(1.0);
        let d5 = (-l(j, 2.0 * h) + 8.0 * l(j, h) - 8.0 * l(j, -h) + l(j, -2.0 * h)) / (12.0 * h);
        let scale = d5.abs().max(1e-3);
        assert!((grad[j] - d5).abs() <= 1e-4 * scale, "{}: {} vs {}", model.layout.name(j), grad[j], d5);
    }
}

#[test]
fn relabelling_patients_changes_nothing() {
    let data = simulate(70, false, 0.0, 3);
    let mut rev = data.clone();
    rev.patients.reverse();
    let spec = EndpointSpec::bor(2);
    let a = ci_logit_delta(&data, &assemble(&data, false).unwrap(), &spec, Method::MAug, 0.05, None, &serial()).unwrap();
    let b = ci_logit_delta(&rev, &assemble(&rev, false).unwrap(), &spec, Method::MAug, 0.05, None, &serial()).unwrap();
    assert!((a.ci.0 - b.ci.0).abs() < 1e-8 && (a.ci.1 - b.ci.1).abs() < 1e-8);
    assert!((a.mean_probability - b.mean_probability).abs() < 1e-8);
}

#[test]
fn parallel_and_serial_gradients_agree_exactly() {
    let data = simulate(60, true, -0.3, 4);
    let model = assemble(&data, true).unwrap();
    let spec = EndpointSpec::fixed(2);
    let a = wald_difference_test(&data, &model, &spec, Method::MAug, 0.05, &serial()).unwrap();
    let b = wald_difference_test(&data, &model, &spec, Method::MAug, 0.05, &DeltaOptions::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.estimate > 0.0 && (a.p_value - 2.0 * norm_cdf(-a.statistic.abs())).abs() < 1e-15);
}

#[test]
fn zero_difference_gives_unit_p_value() {
    let t = TestResult::wald(Method::MAug, EndpointKind::FixedTime, 0.0, 0.1, 0.05);
    assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
    let t = TestResult::wald(Method::MAug, EndpointKind::FixedTime, 0.0, 0.0, 0.05);
    assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
}

fn labelled(control: (usize, usize), experimental: (usize, usize)) -> TrialDataset {
    let mut pts = Vec::new();
    for (arm, (k, n)) in [(Arm::Control, control), (Arm::Experimental, experimental)] {
        for i in 0..n {
            let respond = (i * k) / n != ((i + 1) * k) / n;
            let size = if respond { 0.4 } else { 0.95 };
            let z0 = 0.3 + 0.6 * (i as f64 / n as f64);
            pts.push(PatientRecord::new(format!("{arm:?}{i}"), Some(arm), z0, vec![z0 * size, z0 * size], vec![false; 2]).unwrap());
        }
    }
    TrialDataset::new(pts, 2, Thresholds::default()).unwrap()
}

#[test]
fn binary_test_behaviour() {
    let spec = EndpointSpec::fixed(2);
    let small = bin_two_arm_test(&labelled((10, 40), (20, 40)), &spec, 0.05).unwrap();
    let large = bin_two_arm_test(&labelled((10, 40), (30, 40)), &spec, 0.05).unwrap();
    assert!(small.statistic > 0.0 && large.statistic.abs() > small.statistic.abs());
    assert!(!small.separated);
    let sep = bin_two_arm_test(&labelled((0, 20), (20, 20)), &spec, 0.05).unwrap();
    assert!(sep.separated);
}

#[test]
fn permutation_reproducible_and_null_statistic() {
    let spec = EndpointSpec::fixed(2);
    let data = labelled((10, 40), (10, 40));
    let r = permutation_test(&data, &spec, Method::Bin, 199, 9, &serial()).unwrap();
    assert_eq!(r.observed, 0.0);
    assert_eq!(r.p_value, 1.0);
    let data = simulate(60, true, 0.0, 5);
    let a = permutation_test(&data, &spec, Method::MAug, 100, 11, &serial()).unwrap();
    let b = permutation_test(&data, &spec, Method::MAug, 100, 11, &DeltaOptions::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.p_value > 0.0 && a.p_value <= 1.0);
    assert_eq!(a.distribution.len() + a.failures, 100);
    assert!(permutation_test(&data, &spec, Method::MAug, 50, 11, &serial()).is_err());
}
