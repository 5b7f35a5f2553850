use playlist_attrs::cluster::{kmeans_with, pca_reduce, select_k, silhouette, KMeansOptions, KRange, PcaOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inertia(x: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = x[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = x.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        if members.is_empty() {
            return f64::INFINITY;
        }
        let centre: Vec<f64> = (0..d).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64).collect();
        total += members.iter().map(|r| r.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
    }
    total
}

/// Exhaustive minimum over all 3^12 labelings.
fn brute_force(x: &[Vec<f64>], k: usize) -> f64 {
    let n = x.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        if labels[0] != 0 {
            continue;
        }
        best = best.min(inertia(x, &labels, k));
    }
    best
}

#[test]
fn kmeans_reaches_exhaustive_optimum_on_twelve_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let centres = [[0.0, 0.0], [4.0, 1.0], [1.0, 5.0]];
    let x: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let c = centres[i % 3];
            vec![c[0] + rng.random_range(-1.2..1.2), c[1] + rng.random_range(-1.2..1.2)]
        })
        .collect();
    let oracle = brute_force(&x, 3);
    let opts = KMeansOptions { n_init: 10, ..KMeansOptions::default() };
    let fit = kmeans_with(&x, 3, 0, &opts).unwrap();
    assert!((fit.inertia - oracle).abs() < 1e-9, "kmeans {} vs oracle {oracle}", fit.inertia);
    assert!((inertia(&x, &fit.assignments, 3) - fit.inertia).abs() < 1e-9);
    assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn select_k_recovers_sixty_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut x = Vec::new();
    for c in 0..60 {
        let (cx, cy) = ((c % 10) as f64 * 10.0, (c / 10) as f64 * 10.0);
        for _ in 0..8 {
            x.push(vec![cx + rng.random_range(-0.5..0.5), cy + rng.random_range(-0.5..0.5)]);
        }
    }
    let opts = KMeansOptions { n_init: 4, ..KMeansOptions::default() };
    let sel = select_k(&x, KRange { start: 50, end: 70, step: 5 }, 1, &opts).unwrap();
    assert_eq!(sel.best_k, 60, "{:?}", sel.scores);
    assert!(!sel.range_clipped);
    let s = silhouette(&x, &sel.best.assignments).unwrap();
    assert!(s > 0.8, "{s}");
}

#[test]
fn select_k_clips_an_oversized_range() {
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let sel = select_k(&x, KRange::default(), 0, &KMeansOptions::default()).unwrap();
    assert!(sel.range_clipped);
    assert!(sel.best_k >= 2 && sel.best_k < 10);
}

#[test]
fn pca_drops_constant_columns_and_meets_variance_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            vec![a, 2.0 * a + 0.01 * b, b, -a + b, 5.0]
        })
        .collect();
    let (projected, pca) = pca_reduce(&x, &PcaOptions::default()).unwrap();
    assert_eq!(projected.len(), 200);
    assert!(pca.n_components() <= 3, "{}", pca.n_components());
    assert!(pca.explained_variance() >= PcaOptions::<f64>::default().variance_target);
    assert_eq!(pca.dropped_columns, vec![4]);
}
