use super::*;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

const NEG: f64 = f64::NEG_INFINITY;
const POS: f64 = f64::INFINITY;

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn random_rect(rng: &mut ChaCha8Rng, d: usize) -> Rectangle {
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for _ in 0..d {
        let a: f64 = rng.gen_range(-2.0..1.0);
        let b = a + rng.gen_range(0.3..2.5);
        match rng.gen_range(0..4) {
            0 => {
                lo.push(NEG);
                hi.push(b);
            }
            1 => {
                lo.push(a);
                hi.push(POS);
            }
            _ => {
                lo.push(a);
                hi.push(b);
            }
        }
    }
    Rectangle::new(lo, hi).unwrap()
}

/// Plain Monte-Carlo oracle: returns (estimate, standard error).
fn mc_oracle(spec: &MvnSpec, rect: &Rectangle, n: usize, seed: u64) -> (f64, f64) {
    let d = spec.dim();
    let l = spec.cov().clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for i in 0..d {
            y[i] = spec.mean()[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>();
        }
        if rect.contains(&y) {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn prob(spec: &MvnSpec, rect: &Rectangle) -> RectProbResult {
    mvn_rect_prob(spec, rect, &QmcOptions::default()).unwrap()
}

#[test]
fn univariate_half_line() {
    let spec = MvnSpec::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
    let r = prob(&spec, &Rectangle::new(vec![NEG], vec![0.0]).unwrap());
    assert!((r.probability - 0.5).abs() < 1e-15);
}

#[test]
fn independent_quadrant() {
    let spec = MvnSpec::new(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
    let r = prob(&spec, &Rectangle::new(vec![NEG, NEG], vec![0.0, 0.0]).unwrap());
    assert!((r.probability - 0.25).abs() < 1e-15);
}

#[test]
fn correlated_quadrant_is_one_third() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let spec = MvnSpec::new(vec![0.0, 0.0], cov).unwrap();
    let r = prob(&spec, &Rectangle::new(vec![NEG, NEG], vec![0.0, 0.0]).unwrap());
    assert!((r.probability - 1.0 / 3.0).abs() < 1e-14);
}

#[test]
fn trivariate_orthant_closed_form() {
    // P(Y < 0) = 1/8 + (asin r12 + asin r13 + asin r23) / (4 pi)
    let cases = [(0.5, 0.3, 0.2), (-0.4, 0.1, 0.6), (0.9, 0.85, 0.8), (-0.3, -0.3, 0.2)];
    for (r12, r13, r23) in cases {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0]);
        let spec = MvnSpec::new(vec![0.0; 3], cov).unwrap();
        let rect = Rectangle::new(vec![NEG; 3], vec![0.0; 3]).unwrap();
        let expected = 0.125 + (f64::asin(r12) + f64::asin(r13) + f64::asin(r23)) / (4.0 * PI);
        let r = prob(&spec, &rect);
        assert!(r.tolerance_reached);
        assert!(
            (r.probability - expected).abs() <= r.error_estimate.max(1e-7) + 1e-6,
            "{} vs {expected} (err {})",
            r.probability,
            r.error_estimate
        );
    }
}

#[test]
fn full_space_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in 1..=6 {
        let spec = MvnSpec::new(vec![0.3; d], random_spd(&mut rng, d)).unwrap();
        let r = prob(&spec, &Rectangle::full(d));
        assert!((r.probability - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn agrees_with_plain_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let d = 3 + case % 4;
        let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let spec = MvnSpec::new(mean, random_spd(&mut rng, d)).unwrap();
        let rect = random_rect(&mut rng, d);
        let r = prob(&spec, &rect);
        let n = 1_000_000;
        let (p, _) = mc_oracle(&spec, &rect, n, 100 + case as u64);
        // binomial se evaluated at the larger estimate so zero-hit cases keep a floor
        let q = p.max(r.probability);
        let se = (q * (1.0 - q) / n as f64).sqrt();
        let combined = (se * se + (r.error_estimate / 3.0).powi(2)).sqrt();
        assert!(
            (r.probability - p).abs() <= 3.0 * combined,
            "case {case}: qmc {} vs mc {p} (se {se})",
            r.probability
        );
    }
}

#[test]
fn enlarging_rectangle_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let d = rng.gen_range(1..=5);
        let spec = MvnSpec::new(vec![0.0; d], random_spd(&mut rng, d)).unwrap();
        let inner = random_rect(&mut rng, d);
        let lo: Vec<f64> = inner.lower().iter().map(|a| a - 0.3).collect();
        let hi: Vec<f64> = inner.upper().iter().map(|b| b + 0.2).collect();
        let outer = Rectangle::new(lo, hi).unwrap();
        let (ri, ro) = (prob(&spec, &inner), prob(&spec, &outer));
        assert!(ro.probability + ri.error_estimate + ro.error_estimate >= ri.probability);
    }
}

#[test]
fn permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let d = 4;
        let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cov = random_spd(&mut rng, d);
        let spec = MvnSpec::new(mean.clone(), cov.clone()).unwrap();
        let rect = random_rect(&mut rng, d);
        let perm = [2, 0, 3, 1];
        let pspec = MvnSpec::new(
            perm.iter().map(|&i| mean[i]).collect(),
            DMatrix::from_fn(d, d, |i, j| cov[(perm[i], perm[j])]),
        )
        .unwrap();
        let prect = Rectangle::new(
            perm.iter().map(|&i| rect.lower()[i]).collect(),
            perm.iter().map(|&i| rect.upper()[i]).collect(),
        )
        .unwrap();
        let (a, b) = (prob(&spec, &rect), prob(&pspec, &prect));
        assert!(
            (a.probability - b.probability).abs()
                <= 2.0 * (a.error_estimate + b.error_estimate) + 1e-12
        );
    }
}

#[test]
fn deterministic_given_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = MvnSpec::new(vec![0.1, 0.0, -0.2, 0.4], random_spd(&mut rng, 4)).unwrap();
    let rect = random_rect(&mut rng, 4);
    assert_eq!(prob(&spec, &rect), prob(&spec, &rect));
    let other = QmcOptions {
        seed: 99,
        ..QmcOptions::default()
    };
    let r2 = mvn_rect_prob(&spec, &rect, &other).unwrap();
    assert!((r2.probability - prob(&spec, &rect).probability).abs() < 1e-4);
}

#[test]
fn budget_exhaustion_is_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = MvnSpec::new(vec![0.0; 5], random_spd(&mut rng, 5)).unwrap();
    let rect = random_rect(&mut rng, 5);
    let opts = QmcOptions {
        abs_tol: 1e-12,
        max_samples: 1024,
        ..QmcOptions::default()
    };
    let r = mvn_rect_prob(&spec, &rect, &opts).unwrap();
    assert!(!r.tolerance_reached);
    assert!(r.samples_used <= 1024);
    assert!((0.0..=1.0).contains(&r.probability));
}

#[test]
fn fixed_budget_uses_every_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = MvnSpec::new(vec![0.0; 3], random_spd(&mut rng, 3)).unwrap();
    let rect = Rectangle::new(vec![-1.0, NEG, -0.5], vec![1.0, 0.2, 0.5]).unwrap();
    let r = mvn_rect_prob(&spec, &rect, &QmcOptions::fixed(4, 256, 1)).unwrap();
    assert_eq!(r.samples_used, 1024);
}

#[test]
fn indefinite_covariance_propagates() {
    let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.9, 0.9, 1.0, -0.9, 0.9, -0.9, 1.0]);
    let spec = MvnSpec::new(vec![0.0; 3], cov).unwrap();
    let rect = Rectangle::new(vec![NEG; 3], vec![0.0; 3]).unwrap();
    assert!(matches!(
        mvn_rect_prob(&spec, &rect, &QmcOptions::default()),
        Err(Error::NotPositiveSemiDefinite { .. })
    ));
}

#[test]
fn mismatched_dimensions_rejected() {
    let spec = MvnSpec::new(vec![0.0; 2], DMatrix::identity(2, 2)).unwrap();
    assert!(matches!(
        mvn_rect_prob(&spec, &Rectangle::full(3), &QmcOptions::default()),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(Rectangle::new(vec![1.0], vec![0.5]).is_err());
}

#[test]
fn half_normal_sample_mean() {
    let spec = MvnSpec::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
    let rect = Rectangle::new(vec![0.0], vec![POS]).unwrap();
    let n = 100_000;
    let s = truncated_mvn_sample(&spec, &rect, n, 17).unwrap();
    assert!(s.points.iter().all(|p| p[0] >= 0.0));
    let mean = s.points.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let target = (2.0 / PI).sqrt();
    let se = (1.0 - 2.0 / PI).sqrt() / (n as f64).sqrt();
    assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target}");
}

#[test]
fn untruncated_sample_covariance() {
    let spec = MvnSpec::new(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
    let n = 50_000;
    let s = truncated_mvn_sample(&spec, &Rectangle::full(2), n, 4).unwrap();
    let nf = n as f64;
    for (i, j, target) in [(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.0)] {
        let m: f64 = s.points.iter().map(|p| p[i] * p[j]).sum::<f64>() / nf;
        // se of a product moment of standard normals: sqrt(2) on the diagonal, 1 off it
        let se = if i == j { 2f64.sqrt() } else { 1.0 } / nf.sqrt();
        assert!((m - target).abs() < 3.0 * se, "({i},{j}) {m}");
    }
}

#[test]
fn full_space_sample_matches_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cov = random_spd(&mut rng, 3);
    let mean = vec![0.5, -1.0, 0.25];
    let spec = MvnSpec::new(mean.clone(), cov.clone()).unwrap();
    let n = 50_000;
    let s = truncated_mvn_sample(&spec, &Rectangle::full(3), n, 21).unwrap();
    assert!(s.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
    let nf = n as f64;
    for i in 0..3 {
        let m = s.points.iter().map(|p| p[i]).sum::<f64>() / nf;
        assert!((m - mean[i]).abs() < 3.0 * (cov[(i, i)] / nf).sqrt());
        for j in 0..3 {
            let c = s
                .points
                .iter()
                .map(|p| (p[i] - mean[i]) * (p[j] - mean[j]))
                .sum::<f64>()
                / nf;
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / nf).sqrt();
            assert!((c - cov[(i, j)]).abs() < 3.0 * se, "cov ({i},{j})");
        }
    }
}

#[test]
fn truncated_weighted_mean_converges() {
    // bivariate, both coordinates bounded: compare against rejection sampling
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.5]);
    let spec = MvnSpec::new(vec![0.0, 0.2], cov).unwrap();
    let rect = Rectangle::new(vec![-0.5, NEG], vec![1.0, 0.0]).unwrap();
    let s = truncated_mvn_sample(&spec, &rect, 200_000, 5).unwrap();
    assert!(s.points.iter().all(|p| rect.contains(p)));
    let wm = s.weighted_mean();

    let l = spec.cov().clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut acc, mut cnt) = ([0.0; 2], 0usize);
    let mut sq = [0.0; 2];
    while cnt < 200_000 {
        let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let y = [l[(0, 0)] * z[0], 0.2 + l[(1, 0)] * z[0] + l[(1, 1)] * z[1]];
        if rect.contains(&y) {
            for k in 0..2 {
                acc[k] += y[k];
                sq[k] += y[k] * y[k];
            }
            cnt += 1;
        }
    }
    for k in 0..2 {
        let m = acc[k] / cnt as f64;
        let sd = (sq[k] / cnt as f64 - m * m).sqrt();
        // both estimators carry error; allow generous combined bound
        assert!((wm[k] - m).abs() < 5.0 * sd * (2.0 / cnt as f64).sqrt() * 2.0, "{k}");
    }
}

#[test]
fn degenerate_region_rejected() {
    let spec = MvnSpec::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
    let rect = Rectangle::new(vec![40.0], vec![POS]).unwrap();
    assert!(matches!(
        truncated_mvn_sample(&spec, &rect, 10, 1),
        Err(Error::DegenerateRegion(_))
    ));
}

#[test]
fn constant_integrand_expectation_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spec = MvnSpec::new(vec![0.0; 3], random_spd(&mut rng, 3)).unwrap();
    let rect = random_rect(&mut rng, 3);
    let e = truncated_expectation(&spec, &rect, &QmcOptions::fixed(4, 128, 3), |_| 0.7).unwrap();
    assert!((e.value - 0.7).abs() < 1e-14);
    assert!(e.error_estimate < 1e-12);
}
