use augbin::infer::{self, DeltaOptions, DEFAULT_PERMUTATIONS};
use augbin::modelfit;
use augbin::respprob::Method;
use augbin::simharness::{generate, Scenario};

/// On large null trials the asymptotic Wald test and the permutation test
/// should give nearly the same p-value.
#[test]
fn wald_and_permutation_p_values_agree_on_large_null_trials() {
    let mut s = Scenario::preset("fixed-T2-2arm", None).unwrap().with_tau(0.0);
    s.n = 500;
    let spec = s.endpoint_spec();
    let opts = DeltaOptions::default();
    for index in 0..3 {
        let data = generate(&s, index);
        let model = modelfit::assemble(&data, true).unwrap();
        for method in [Method::Bin, Method::MAug] {
            let wald = infer::wald_difference_test(&data, &model, &spec, method, 0.05, &opts).unwrap();
            let perm = infer::permutation_test(&data, &spec, method, DEFAULT_PERMUTATIONS, 7 + index, &opts).unwrap();
            assert_eq!(perm.failures, 0);
            println!("replicate {index} {method:?}: wald p = {:.4}, permutation p = {:.4}", wald.p_value, perm.p_value);
            assert!(
                (wald.p_value - perm.p_value).abs() <= 0.05,
                "replicate {index} {method:?}: wald {} vs permutation {}",
                wald.p_value,
                perm.p_value
            );
        }
    }
}
