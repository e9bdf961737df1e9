mod common;

use common::{all_pairs, close, dense_dataset};
use nalgebra::DMatrix;
use proptest::prelude::*;
use vsiv::dataset::{Dataset, Orientation, PairId, PairSet};
use vsiv::estimate::{beta_pair, beta_vector, sigma_hat, theta_partial, GFunction};

fn group_mean(ds: &Dataset, z: usize, f: impl Fn(usize) -> f64) -> f64 {
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.z()[i] == z).collect();
    rows.iter().map(|&i| f(i)).sum::<f64>() / rows.len() as f64
}

/// (mean Y | z_k' - mean Y | z_k) / (mean D | z_k' - mean D | z_k)
fn means_ratio(ds: &Dataset, p: PairId) -> (f64, f64) {
    let y = |z| group_mean(ds, z, |i| ds.y()[i]);
    let d = |z| group_mean(ds, z, |i| ds.d_value(i));
    let den = d(p.kprime) - d(p.k);
    ((y(p.kprime) - y(p.k)) / den, den)
}

fn g_maps(k: usize) -> Vec<GFunction> {
    let f: [fn(f64) -> f64; 5] = [|z| z, |z| 2.0 * z + 3.0, |z| z * z, |z| z.exp(), |z| 0.5 - z * z * z];
    f.iter().map(|h| GFunction::new((0..k).map(|z| h(z as f64)).collect()).unwrap()).collect()
}

/// Sandwich form of the covariance, from pair-level influence terms.
fn sandwich(ds: &Dataset, selected: &PairSet, g: &GFunction) -> DMatrix<f64> {
    let pairs = all_pairs(ds.k());
    let n = ds.n() as f64;
    let infl: Vec<Option<Vec<f64>>> = pairs
        .iter()
        .map(|&p| {
            if !selected.contains(p) {
                return None;
            }
            let rows: Vec<usize> = (0..ds.n()).filter(|&i| p.contains(ds.z()[i])).collect();
            let m = rows.len() as f64;
            let mean = |f: &dyn Fn(usize) -> f64| rows.iter().map(|&i| f(i)).sum::<f64>() / m;
            let gz = |i: usize| g.get(ds.z()[i]);
            let (gbar, ybar, dbar) = (mean(&gz), mean(&|i| ds.y()[i]), mean(&|i| ds.d_value(i)));
            let cov_d = mean(&|i| (gz(i) - gbar) * (ds.d_value(i) - dbar));
            let cov_y = mean(&|i| (gz(i) - gbar) * (ds.y()[i] - ybar));
            let beta = cov_y / cov_d;
            let share = m / n;
            let mut v = vec![0.0; ds.n()];
            for &i in &rows {
                let resid = ds.y()[i] - ybar - beta * (ds.d_value(i) - dbar);
                v[i] = (gz(i) - gbar) * resid / cov_d / share;
            }
            Some(v)
        })
        .collect();
    DMatrix::from_fn(pairs.len(), pairs.len(), |a, b| match (&infl[a], &infl[b]) {
        (Some(u), Some(v)) => u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() / n,
        _ => 0.0,
    })
}

fn classical_iv(ds: &Dataset, g: &GFunction) -> f64 {
    let n = ds.n() as f64;
    let gz: Vec<f64> = ds.z().iter().map(|&z| g.get(z)).collect();
    let gbar = gz.iter().sum::<f64>() / n;
    let ybar = ds.y().iter().sum::<f64>() / n;
    let dbar = (0..ds.n()).map(|i| ds.d_value(i)).sum::<f64>() / n;
    let num: f64 = (0..ds.n()).map(|i| (gz[i] - gbar) * (ds.y()[i] - ybar)).sum();
    let den: f64 = (0..ds.n()).map(|i| (gz[i] - gbar) * (ds.d_value(i) - dbar)).sum();
    num / den
}

#[test]
fn d4_pair_values() {
    let ds = Dataset::from_indices(vec![1.0, 2.0, 1.0, 3.0], vec![1, 0, 1, 1], vec![0, 0, 1, 1], 2, 2).unwrap();
    let all = PairSet::all(2, Orientation::Both);
    let est = beta_vector(&ds, &all, &GFunction::index(2)).unwrap();
    assert_eq!(est.pairs, all_pairs(2));
    assert!((est.beta[0] - 1.0).abs() < 1e-12 && (est.beta[1] - 1.0).abs() < 1e-12);
    let oracle = sandwich(&ds, &all, &GFunction::index(2));
    assert!((est.sigma.clone() - oracle).abs().max() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn wald_identities(ds in dense_dataset(20, 300, 2..=4, 2)) {
        let maps = g_maps(ds.k());
        for p in all_pairs(ds.k()) {
            let base = beta_pair(&ds, p, &maps[0]).unwrap();
            let (ratio, den) = means_ratio(&ds, p);
            if den.abs() < 1e-9 {
                prop_assert!(base.degenerate);
                continue;
            }
            prop_assert!(!base.degenerate);
            prop_assert!(close(base.value, ratio, 1e-12), "{} vs {}", base.value, ratio);
            for g in &maps[1..] {
                let other = beta_pair(&ds, p, g).unwrap();
                prop_assert!(close(other.value, base.value, 1e-10));
            }
            let rev = beta_pair(&ds, p.reversed(), &maps[0]).unwrap();
            prop_assert_eq!(rev.value, base.value);
        }
    }

    #[test]
    fn ordered_wald_identity(ds in dense_dataset(30, 300, 2..=4, 3)) {
        for p in all_pairs(ds.k()) {
            let b = beta_pair(&ds, p, &GFunction::index(ds.k())).unwrap();
            let (ratio, den) = means_ratio(&ds, p);
            if den.abs() >= 1e-9 {
                prop_assert!(close(b.value, ratio, 1e-12));
            }
        }
    }

    #[test]
    fn covariance_matches_sandwich(ds in dense_dataset(20, 300, 2..=4, 2), mask in any::<u16>()) {
        let all = PairSet::all(ds.k(), Orientation::Both);
        let sel = PairSet::new(
            all.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, p)| p).collect(),
            Orientation::Both,
        ).unwrap();
        let g = GFunction::index(ds.k());
        let est = beta_vector(&ds, &sel, &g).unwrap();
        for (i, p) in est.pairs.iter().enumerate() {
            if !sel.contains(*p) || est.diagnostics[i].degenerate {
                prop_assert_eq!(est.beta[i], 0.0);
            }
        }
        let active = PairSet::new(
            sel.iter().filter(|&p| !est.diagnostics[est.index_of(p).unwrap()].degenerate).collect(),
            Orientation::Both,
        ).unwrap();
        let oracle = sandwich(&ds, &active, &g);
        let scale = 1.0 + oracle.abs().max();
        prop_assert!((&est.sigma - &oracle).abs().max() <= 1e-9 * scale);
        prop_assert_eq!(&est.sigma, &est.sigma.transpose());
        let eig = est.sigma.clone().symmetric_eigen().eigenvalues;
        let top = eig.max();
        prop_assert!(eig.iter().all(|&e| e >= -1e-8 * top.abs().max(f64::MIN_POSITIVE)));
        prop_assert_eq!(sigma_hat(&ds, &sel, &g).unwrap(), est.sigma);
    }

    #[test]
    fn partial_effect_decomposes(ds in dense_dataset(40, 300, 3..=4, 3), rot in 0usize..4) {
        let k = ds.k();
        let mut chain: Vec<usize> = (0..k).collect();
        chain.rotate_left(rot % k);
        for g in g_maps(k) {
            let th = theta_partial(&ds, &chain, &g).unwrap();
            if th.degenerate {
                continue;
            }
            // a flat first-stage step leaves its adjacent ratio undefined
            prop_assume!(th.adjacent.iter().all(|&a| a != 0.0));
            let recon: f64 = th.weights.iter().zip(&th.adjacent).map(|(w, a)| w * a).sum();
            let total: f64 = th.weights.iter().sum();
            let scale = 1.0 + th.weights.iter().map(|w| w.abs()).fold(0.0, f64::max);
            prop_assert!((total - 1.0).abs() <= 1e-10 * scale, "weights sum {}", total);
            prop_assert!((recon - th.theta).abs() <= 1e-10 * scale * (1.0 + th.theta.abs()), "{} vs {}", recon, th.theta);
            prop_assert!(th.variance >= 0.0);
        }
    }

    #[test]
    fn full_support_is_classical_iv(ds in dense_dataset(30, 300, 2..=4, 3)) {
        let k = ds.k();
        let chain: Vec<usize> = (0..k).collect();
        for g in g_maps(k) {
            let th = theta_partial(&ds, &chain, &g).unwrap();
            if !th.degenerate {
                prop_assert!(close(th.theta, classical_iv(&ds, &g), 1e-12));
            }
        }
    }
}
