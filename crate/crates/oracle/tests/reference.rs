use dppseq_oracle::*;

fn diag(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut l = vec![0.0; n * n];
    for (i, v) in values.iter().enumerate() {
        l[i * n + i] = *v;
    }
    l
}

#[test]
fn diagonal_kernel_is_independent_inclusion() {
    let values = [0.5, 2.0, 1.0, 3.0];
    let l = diag(&values);
    let z = superset_normalizer(4, &l, 0).unwrap();
    assert!((z - values.iter().map(|v| 1.0 + v).product::<f64>()).abs() < 1e-12);

    let dist = oracle_dpp_distribution(4, &l).unwrap();
    let m = marginals(4, &dist);
    for (mi, v) in m.iter().zip(values) {
        assert!((mi - v / (1.0 + v)).abs() < 1e-12);
    }
    let p = pair_inclusion(&dist, 1, 3);
    assert!((p - m[1] * m[3]).abs() < 1e-12);
}

#[test]
fn two_by_two_closed_form() {
    let (a, b, c) = (2.0, 0.7, 1.5);
    let l = [a, b, b, c];
    assert!((cofactor_det(2, &l) - (a * c - b * b)).abs() < 1e-12);
    let dist = oracle_dpp_distribution(2, &l).unwrap();
    let z = 1.0 + a + c + a * c - b * b;
    assert!((dist[&0b11] - (a * c - b * b) / z).abs() < 1e-12);
    assert!((dist[&0b00] - 1.0 / z).abs() < 1e-12);

    let cond = conditional_distribution(2, &l, 0b01).unwrap();
    assert_eq!(cond.len(), 2);
    assert!((cond[&0b01] - a / (a + a * c - b * b)).abs() < 1e-12);
}

#[test]
fn conditional_distribution_sums_to_one() {
    let l = [1.0, 0.3, 0.1, 0.3, 2.0, 0.4, 0.1, 0.4, 0.5];
    for observed in 0..8u32 {
        let dist = conditional_distribution(3, &l, observed).unwrap();
        assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dist.keys().all(|m| m & observed == observed));
    }
}

#[test]
fn finite_differences_of_a_cubic() {
    let f = |x: &[f64]| x[0] * x[0] * x[1] + 3.0 * x[1];
    let g = oracle_fd_gradient(f, &[2.0, -1.0], 1e-4).unwrap();
    assert!(vec_rel_err(&g, &[-4.0, 7.0]) < 1e-8);
}
