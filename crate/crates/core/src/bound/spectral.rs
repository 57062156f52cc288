use crate::seeded_stream;
use rand::Rng;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 1000;

/// Largest singular value of a row-major `rows × cols` matrix by power
/// iteration on `WᵀW`. Stops when the estimate moves by less than `tol`
/// relative, or after `max_iters`. The zero matrix returns 0.
pub fn measure_spectral_norm(
    weight: &[f64],
    rows: usize,
    cols: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> f64 {
    assert_eq!(weight.len(), rows * cols, "matrix data does not match dims");
    if weight.iter().all(|&w| w == 0.0) || rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut rng = seeded_stream(seed, 0);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..max_iters.max(1) {
        // u = W v
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = weight[i * cols..(i + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(w, x)| w * x)
                .sum();
        }
        let next = norm(&u);
        if next == 0.0 {
            // v fell into the null space; restart from a fresh direction.
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            normalize(&mut v);
            continue;
        }
        // v = Wᵀ u / ‖Wᵀ u‖
        v.iter_mut().for_each(|x| *x = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            for (vj, w) in v.iter_mut().zip(&weight[i * cols..(i + 1) * cols]) {
                *vj += w * ui;
            }
        }
        normalize(&mut v);
        let done = (next - sigma).abs() <= tol * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm(x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}
