use aos::active::{max_variance_query, space_filling_query, CandidateSet, DUPLICATE_TOL};
use aos::gp::{GpModel, KernelParams};
use aos::seed;
use rand::Rng;

fn grid(n: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (n - 1) as f64;
    (0..n).flat_map(|i| (0..n).map(move |j| vec![i as f64 * s, j as f64 * s])).collect()
}

#[test]
fn max_variance_is_exact_argmax_on_grids() {
    let mut rng = seed::rng(12);
    for case in 0..10 {
        let n = 3 + case;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * v[1]).collect();
        let p = KernelParams::new(1.0, vec![0.1 + 0.05 * case as f64, 0.3], 1e-3).unwrap();
        let model = GpModel::condition(&x, &y, p).unwrap();
        let cands = CandidateSet::from_points(grid(100)).unwrap();
        let q = max_variance_query(&model, &cands, &x, 0).unwrap();
        let best = cands
            .points
            .iter()
            .map(|c| model.predict(c).unwrap().variance)
            .fold(f64::MIN, f64::max);
        assert_eq!(q.score, best);
        assert!(cands.points.contains(&q.point));
    }
}

fn min_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            let d = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Upper bound on the maximin distance of `n` points in the unit square
/// (Oler's packing bound).
fn maximin_upper_bound(n: usize) -> f64 {
    let m = (n - 1) as f64;
    (1.0 + (1.0 + 2.0 * m / 3f64.sqrt()).sqrt()) / m
}

/// Brute-force maximin over all subsets of a coarse grid.
fn brute_force_maximin(n: usize, side: usize) -> f64 {
    let g = grid(side);
    let mut best = 0.0f64;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| g[i].clone()).collect();
        best = best.max(min_pairwise(&pts));
        // Next combination.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] != i + g.len() - n {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[test]
fn packing_bound_is_consistent_with_brute_force() {
    // The bound must dominate exhaustive search on small instances.
    for n in 2..=5 {
        let bf = brute_force_maximin(n, 6);
        assert!(bf <= maximin_upper_bound(n) + 1e-12, "n={n}: {bf}");
    }
    assert!((brute_force_maximin(4, 6) - 1.0).abs() < 1e-12);
}

#[test]
fn space_filling_coverage_and_monotone_decay() {
    let cands = CandidateSet::sobol(5000, 2, 3).unwrap();
    let mut measured = vec![vec![0.5, 0.5]];
    let mut scores = Vec::new();
    while measured.len() < 50 {
        let q = space_filling_query(&measured, &cands).unwrap();
        let d = measured
            .iter()
            .map(|m| ((m[0] - q.point[0]).powi(2) + (m[1] - q.point[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(d > DUPLICATE_TOL);
        scores.push(q.score);
        measured.push(q.point);
    }
    assert!(scores.windows(2).all(|w| w[1] <= w[0]));
    let achieved = min_pairwise(&measured);
    let bound = maximin_upper_bound(50);
    assert!(achieved >= 0.5 * bound, "{achieved} vs bound {bound}");
}

#[test]
fn max_variance_never_duplicates() {
    let cands = CandidateSet::sobol(200, 2, 8).unwrap();
    let p = KernelParams::new(1.0, vec![0.3, 0.3], 1e-6).unwrap();
    let mut x = vec![cands.points[0].clone()];
    for _ in 0..60 {
        let y = vec![0.0; x.len()];
        let model = GpModel::condition(&x, &y, p.clone()).unwrap();
        let q = max_variance_query(&model, &cands, &x, 0).unwrap();
        assert!(!x.contains(&q.point));
        x.push(q.point);
    }
}
