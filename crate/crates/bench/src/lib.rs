//! Fixtures shared by the criterion benchmarks.

use salesrank_core::DesignMatrix;

/// Deterministic `n x k` design with an intercept column and a response.
pub fn design(n: usize, k: usize) -> (DesignMatrix, Vec<f64>) {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|j| if j == 0 { 1.0 } else { next() }).collect())
        .collect();
    let y = rows.iter().map(|r| r.iter().sum::<f64>() + 0.1 * next()).collect();
    let labels = (0..k).map(|j| format!("x{j}")).collect();
    (DesignMatrix::from_rows(&rows, labels).expect("fixture design"), y)
}
