//! Independent reference implementations used by several test targets.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;

/// `C(i,k) = sum_{j,l} (Cs(i,j) - Ct(k,l))^2 T(j,l)`, evaluated term by term.
pub fn quadruple_sum(cs: &Array2<f64>, ct: &Array2<f64>, t: &Array2<f64>) -> Array2<f64> {
    let (n1, n2) = t.dim();
    let mut c = Array2::zeros((n1, n2));
    for i in 0..n1 {
        for k in 0..n2 {
            let mut acc = 0.0;
            for j in 0..n1 {
                for l in 0..n2 {
                    let d = cs[[i, j]] - ct[[k, l]];
                    acc += d * d * t[[j, l]];
                }
            }
            c[[i, k]] = acc;
        }
    }
    c
}

/// Best total weight over every partial matching, by exhaustive search.
/// `None` entries are absent edges.
pub fn brute_force_matching(w: &[Vec<Option<f64>>], n2: usize) -> f64 {
    fn go(w: &[Vec<Option<f64>>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for (k, e) in w[row].iter().enumerate() {
            if let Some(v) = e {
                if !used[k] {
                    used[k] = true;
                    best = best.max(v + go(w, row + 1, used));
                    used[k] = false;
                }
            }
        }
        best
    }
    go(w, 0, &mut vec![false; n2])
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen::<f64>())
}

pub fn symmetric<R: Rng>(rng: &mut R, n: usize) -> Array2<f64> {
    let a = random_matrix(rng, n, n);
    (&a + &a.t()) * 0.5
}

/// Positive matrix with unit total mass.
pub fn random_plan<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let t = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(0.05..1.0));
    let s = t.sum();
    t / s
}

pub fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
        .fold(0.0, f64::max)
}
