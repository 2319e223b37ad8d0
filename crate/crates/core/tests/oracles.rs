//! Kernels checked against small hand-written reference implementations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salesrank_core::cost::{revenue_shares, shares_from_ranks};
use salesrank_core::optimal::{profit_gradient, ProfitMember};
use salesrank_core::statcore::{
    classical_covariance, ols_fit, ols_fit_with, white_covariance, within_transform, OlsOptions,
};
use salesrank_core::{DesignMatrix, ProductId, ProfitModel};

/// Gauss-Jordan elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        a[col].iter_mut().for_each(|v| *v /= d);
        b[col].iter_mut().for_each(|v| *v /= d);
        let (pa, pb) = (a[col].clone(), b[col].clone());
        for r in (0..n).filter(|&r| r != col) {
            let f = a[r][col];
            a[r].iter_mut().zip(&pa).for_each(|(v, p)| *v -= f * p);
            b[r].iter_mut().zip(&pb).for_each(|(v, p)| *v -= f * p);
        }
    }
    b
}

fn xtx(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = rows[0].len();
    (0..k)
        .map(|a| (0..k).map(|b| rows.iter().map(|r| r[a] * r[b]).sum()).collect())
        .collect()
}

fn inverse(m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = m.len();
    let eye = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    gauss_solve(m, eye)
}

fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let xty: Vec<Vec<f64>> = (0..k)
        .map(|a| vec![rows.iter().zip(y).map(|(r, y)| r[a] * y).sum()])
        .collect();
    gauss_solve(xtx(rows), xty).into_iter().map(|v| v[0]).collect()
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = rng.random_range(1..=5);
    let n = rng.random_range(k + 3..=50);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|j| if j == 0 { 1.0 } else { rng.random_range(-3.0..3.0) }).collect())
        .collect();
    let beta: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = rows
        .iter()
        .map(|r| r.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    (rows, y)
}

fn design(rows: &[Vec<f64>]) -> DesignMatrix {
    let labels = (0..rows[0].len()).map(|j| format!("x{j}")).collect();
    DesignMatrix::from_rows(rows, labels).unwrap()
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

#[test]
fn ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let (rows, y) = random_problem(&mut rng);
        let fit = ols_fit(&design(&rows), &y).unwrap();
        for (b, o) in fit.coefficients.iter().zip(normal_equations(&rows, &y)) {
            assert!((b - o).abs() <= 1e-10 * o.abs().max(1.0), "{b} vs {o}");
        }
    }
}

#[test]
fn hc0_matches_sandwich_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let (rows, y) = random_problem(&mut rng);
        let fit = ols_fit(&design(&rows), &y).unwrap();
        let k = rows[0].len();
        let bread = inverse(xtx(&rows));
        let meat: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| rows.iter().zip(&fit.residuals).map(|(r, e)| e * e * r[a] * r[b]).sum())
                    .collect()
            })
            .collect();
        let oracle = to_dmatrix(&bread) * to_dmatrix(&meat) * to_dmatrix(&bread);
        let got = white_covariance(&to_dmatrix(&rows), &fit.residuals).unwrap();
        assert!(max_abs(&(&got - &oracle)) <= 1e-12 * max_abs(&oracle));
        assert!(max_abs(&(&fit.covariance - &oracle)) <= 1e-12 * max_abs(&oracle));
    }
}

#[test]
fn hc0_equals_scaled_classical_under_equal_residual_magnitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let (rows, _) = random_problem(&mut rng);
        let (n, k) = (rows.len(), rows[0].len());
        let c = rng.random_range(0.1..2.0);
        let e: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { c } else { -c }).collect();
        let x = to_dmatrix(&rows);
        let hc0 = white_covariance(&x, &e).unwrap();
        let classical = classical_covariance(&x, &e, n - k).unwrap() * ((n - k) as f64 / n as f64);
        assert!(max_abs(&(&hc0 - &classical)) <= 1e-12 * max_abs(&classical));
    }
}

#[test]
fn within_estimator_matches_dummy_variable_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let entities = rng.random_range(2..=5);
        let per = rng.random_range(4..=10);
        let k = rng.random_range(1..=3);
        let mut ids = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for e in 0..entities {
            let fe = rng.random_range(-5.0..5.0);
            for _ in 0..per {
                let row: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0) + fe * 0.3).collect();
                y.push(fe + row.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>() + rng.random_range(-0.5..0.5));
                ids.push(e);
                x.push(row);
            }
        }
        let lsdv_rows: Vec<Vec<f64>> = x
            .iter()
            .zip(&ids)
            .map(|(r, &e)| {
                let mut row = r.clone();
                row.extend((0..entities).map(|d| f64::from(u8::from(d == e))));
                row
            })
            .collect();
        let lsdv = normal_equations(&lsdv_rows, &y);

        let y_w = within_transform(&y, &ids).unwrap();
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|j| within_transform(&x.iter().map(|r| r[j]).collect::<Vec<_>>(), &ids).unwrap())
            .collect();
        let labels = (0..k).map(|j| format!("x{j}")).collect();
        let opts = OlsOptions {
            absorbed: entities,
            ..OlsOptions::default()
        };
        let fit = ols_fit_with(&DesignMatrix::from_columns(&cols, labels).unwrap(), &y_w, &opts).unwrap();
        for (b, o) in fit.coefficients.iter().zip(&lsdv) {
            assert!((b - o).abs() <= 1e-9 * o.abs().max(1.0));
        }
    }
}

#[test]
fn profit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let members: Vec<ProfitMember> = (0..n)
            .map(|i| {
                let price = rng.random_range(10.0..200.0);
                ProfitMember {
                    product_id: ProductId::new(format!("p{i}")),
                    price,
                    cost: price * rng.random_range(0.2..0.9),
                    quantity: rng.random_range(1.0..100.0),
                }
            })
            .collect();
        let eta = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                rng.random_range(-5.0..-1.0)
            } else {
                rng.random_range(-0.5..0.5)
            }
        });
        let k = rng.random_range(0.5..3.0);
        let model = ProfitModel::new(members, eta, k).unwrap();
        let g = profit_gradient(&model);
        let p0 = model.prices();
        for i in 0..n {
            let h = 1e-5 * p0[i];
            let (mut up, mut down) = (p0.clone(), p0.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (model.local_profit(&up) - model.local_profit(&down)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-6 * g[i].abs().max(model.revenue() / p0[i]), "{} vs {fd}", g[i]);
        }
    }
}

#[test]
fn rank_shares_equal_revenue_shares_of_power_law_quantities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let n = rng.random_range(2..=5);
        let beta = rng.random_range(-1.5..-0.3);
        let alpha = rng.random_range(10.0..5000.0);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..500.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100_000.0)).collect();
        let q: Vec<f64> = r.iter().map(|r| alpha * r.powf(beta)).collect();
        let a = shares_from_ranks(&p, &r, beta).unwrap();
        let b = revenue_shares(&p, &q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
