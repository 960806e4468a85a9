use docausal::dataset::{impute_iterative, mcar_test, summarize_baseline, Column, ColumnKind, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn fair_coin_missingness_is_not_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 2000;
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<f64>() < 0.2)).collect();
    let x: Vec<Option<f64>> = (0..n)
        .map(|i| rng.random::<bool>().then_some(i as f64))
        .collect();
    let t = Table::new(vec![
        Column::from_options("X", ColumnKind::Continuous, &x),
        Column::complete("Y", ColumnKind::Binary, y),
    ])
    .unwrap();
    let r = mcar_test(&t, "X", "Y").unwrap();
    assert!(r.p_value > 0.05, "{}", r.p_value);
    assert!((r.missing_fraction - 0.5).abs() < 0.05);
}

#[test]
fn imputation_beats_mean_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 1000;
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let hidden: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.2).collect();
    let cells: Vec<Option<f64>> = y.iter().zip(&hidden).map(|(v, h)| (!h).then_some(*v)).collect();
    let t = Table::new(vec![
        Column::complete("X", ColumnKind::Continuous, x),
        Column::from_options("Y", ColumnKind::Continuous, &cells),
    ])
    .unwrap();
    let imputed = impute_iterative(&t, 5).unwrap();
    assert!(imputed.is_complete());
    let filled = imputed.values("Y").unwrap();
    let observed_mean = {
        let obs: Vec<f64> = cells.iter().flatten().copied().collect();
        obs.iter().sum::<f64>() / obs.len() as f64
    };
    let (mut e_imp, mut e_mean, mut k) = (0.0, 0.0, 0.0);
    for i in 0..n {
        if hidden[i] {
            e_imp += (filled[i] - y[i]).powi(2);
            e_mean += (observed_mean - y[i]).powi(2);
            k += 1.0;
        } else {
            assert_eq!(filled[i], y[i]);
        }
    }
    assert!(e_imp / k < e_mean / k, "{} vs {}", e_imp / k, e_mean / k);
    assert!(e_imp / k < 0.2);
}

#[test]
fn independent_group_gives_null_baseline_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 2000;
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let g: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<bool>())).collect();
    let t = Table::new(vec![
        Column::complete("V", ColumnKind::Continuous, v),
        Column::complete("G", ColumnKind::Binary, g),
    ])
    .unwrap();
    let rows = summarize_baseline(&t, "G", &["V"]).unwrap();
    assert!(rows[0].p_value.unwrap() > 0.05);
}

#[test]
fn mcar_p_values_are_roughly_uniform_under_the_null() {
    // Kolmogorov-Smirnov distance of 200 null p-values from U(0, 1)
    let mut p: Vec<f64> = (0..200u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 500;
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random::<f64>() < 0.3)).collect();
            let x: Vec<Option<f64>> = (0..n).map(|_| (rng.random::<f64>() < 0.7).then_some(1.0)).collect();
            let t = Table::new(vec![
                Column::from_options("X", ColumnKind::Continuous, &x),
                Column::complete("Y", ColumnKind::Binary, y),
            ])
            .unwrap();
            mcar_test(&t, "X", "Y").unwrap().p_value
        })
        .collect();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, v)| ((i as f64 + 1.0) / n - v).abs().max((v - i as f64 / n).abs()))
        .fold(0.0, f64::max);
    // 1% critical value ≈ 1.63/√n
    assert!(d < 1.63 / n.sqrt(), "{d}");
}
