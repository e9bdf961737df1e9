//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Set `VSIV_AK_DATA` to a CSV with columns y,d,z (quarter of birth labelled
//! 1-4) to run the application check; `VSIV_AK_SEED` picks the endpoint
//! subsample seed (default 1). With `VSIV_ACCEPTANCE_STRICT=1` any FAIL line
//! makes the process exit nonzero.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use vsiv::dataset::{ingest_csv, CsvSchema, Dataset, Orientation, PairId, PairSet, TreatmentOrder};
use vsiv::estimate::{beta_pair, beta_vector, theta_partial, GFunction};
use vsiv::falsify_kms::{
    brute_force_sup, sup_stat_pair, EndpointPolicy, Endpoints, StatConfig, TreatmentMode, Variant,
};
use vsiv::infer::{wald_test, Hypothesis};
use vsiv::simulate::{mc_selection_table, DgpSpec, UnorderedDgp};
use vsiv::unordered_id::{counterfactuals, is_lonesum, pinv_binary, ResponseMatrix};
use vsiv::validity_set::{estimate_z0, intersect_presumed, ScreenConfig};

struct Outcome {
    passed: usize,
    failed: usize,
}

impl Outcome {
    fn record(&mut self, id: &str, pass: bool, detail: String, started: Instant) {
        let secs = started.elapsed().as_secs_f64();
        println!("criterion {id}: {} ({detail}) [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

fn pair(a: usize, b: usize) -> PairId {
    PairId::new(a, b).unwrap()
}

fn fmt_rates(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("({})", parts.join(", "))
}

fn within(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol)
}

fn settings(kv: &[(&str, &str)]) -> BTreeMap<String, String> {
    kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn rates_at(spec: &DgpSpec, n: usize, reps: usize, taus: &[f64], seed: u64, cfg: &ScreenConfig, pairs: &[PairId]) -> Vec<Vec<f64>> {
    let rep = mc_selection_table(spec, n, reps, taus, seed, cfg).unwrap();
    taus.iter().map(|&t| pairs.iter().map(|&p| rep.rate(t, p).unwrap()).collect()).collect()
}

fn table1(out: &mut Outcome) {
    let start = Instant::now();
    let spec = DgpSpec::parse("section5:1").unwrap();
    let taus = [3.0, 3.5, 4.0];
    let want = [[0.000, 0.001, 0.209], [0.000, 0.002, 0.754], [0.010, 0.012, 0.970]];
    let pairs = [pair(0, 1), pair(0, 2), pair(1, 2)];
    let got = rates_at(&spec, 1500, 1000, &taus, 7, &ScreenConfig::default(), &pairs);
    let pass = got.iter().zip(&want).all(|(g, w)| within(g, w, 0.045));
    let detail = taus.iter().zip(&got).map(|(t, g)| format!("tau {t}: {}", fmt_rates(g))).collect::<Vec<_>>().join("; ");
    out.record("1", pass, detail, start);
}

fn table2(out: &mut Outcome) {
    let start = Instant::now();
    let pairs = [pair(0, 1), pair(0, 2), pair(1, 2)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (design, want) in [("section5:2", [0.000, 0.000, 0.933]), ("section5:4", [0.009, 0.014, 0.927])] {
        let spec = DgpSpec::parse(design).unwrap();
        let got = rates_at(&spec, 3000, 1000, &[4.0], 7, &ScreenConfig::default(), &pairs).remove(0);
        pass &= within(&got, &want, 0.04);
        detail.push(format!("{design}: {}", fmt_rates(&got)));
    }
    out.record("2", pass, detail.join("; "), start);
}

fn table3(out: &mut Outcome) {
    let start = Instant::now();
    let spec = DgpSpec::parse("qob:1").unwrap();
    let stat = StatConfig {
        variant: Variant::PosPart,
        endpoints: EndpointPolicy::Subsample { m: 200, seed: 0 },
        ..StatConfig::default()
    };
    let pairs = [pair(0, 1), pair(0, 2), pair(0, 3), pair(1, 2), pair(1, 3), pair(2, 3)];
    let want = [0.000, 0.991, 0.997, 0.000, 0.001, 0.993];
    let got = rates_at(&spec, 486_926, 1000, &[4.0], 7, &ScreenConfig::with_stat(stat), &pairs).remove(0);
    out.record("3", within(&got, &want, 0.03), format!("qob:1 tau 4: {}", fmt_rates(&got)), start);
}

fn application(out: &mut Outcome) {
    let start = Instant::now();
    let Ok(path) = std::env::var("VSIV_AK_DATA") else {
        println!("criterion 4: SKIP (VSIV_AK_DATA not set)");
        return;
    };
    let seed: u64 = std::env::var("VSIV_AK_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(1);
    let schema = CsvSchema { order: TreatmentOrder::Ordered, ..CsvSchema::default() };
    let ds = match ingest_csv(&path, &schema) {
        Ok(ds) => ds,
        Err(e) => {
            out.record("4", false, format!("cannot read {path}: {e}"), start);
            return;
        }
    };
    let z = |label: &str| ds.instrument().index_of(label).expect("quarter labels 1-4");
    let labels = [("1", "2"), ("1", "3"), ("1", "4"), ("2", "3"), ("2", "4"), ("3", "4")];
    let presumed = PairSet::new(labels.iter().map(|(a, b)| pair(z(a), z(b))).collect(), Orientation::Both).unwrap();
    let stat = StatConfig {
        variant: Variant::PosPart,
        endpoints: EndpointPolicy::Subsample { m: 200, seed },
        ..StatConfig::default()
    };
    let cfg = ScreenConfig { universe: Some(presumed.clone()), ..ScreenConfig::with_stat(stat) };
    let est = estimate_z0(&ds, 4.0, &cfg).unwrap();
    let selected = intersect_presumed(&est, &presumed);
    let late = beta_vector(&ds, &selected, &GFunction::index(ds.k())).unwrap();
    let want = [0.2870, 0.2706, -0.3858, 0.1836, 0.0, -1.0902];
    let got: Vec<f64> = presumed.iter().map(|p| late.beta_of(p).unwrap()).collect();
    let excluded: Vec<PairId> = presumed.iter().filter(|&p| !selected.contains(p)).collect();
    let pass = within(&got, &want, 5e-5) && excluded == vec![pair(z("2"), z("4"))];
    let detail = format!("beta {}, excluded {} pair(s), seed {seed}", fmt_rates(&got), excluded.len());
    out.record("4", pass, detail, start);
}

fn random_dataset(rng: &mut Xoshiro256PlusPlus, max_n: usize, k: usize, j: usize, ties: bool) -> Dataset {
    let n = rng.random_range(k..=max_n);
    let levels = rng.random_range(2..12);
    let y = (0..n)
        .map(|_| if ties { rng.random_range(0..levels) as f64 * 0.5 - 1.0 } else { rng.random_range(-3.0..3.0) })
        .collect();
    let d = (0..n).map(|_| rng.random_range(0..j)).collect();
    // every instrument value observed at least once
    let z = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    Dataset::from_indices(y, d, z, j, k).unwrap()
}

fn all_pairs(k: usize) -> Vec<PairId> {
    PairSet::all(k, Orientation::Both).pairs().to_vec()
}

fn oracle_equivalence(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let mut mismatches = 0;
    let mut checks = 0;
    for i in 0..200 {
        let (j, mode) = if i % 2 == 0 { (2, TreatmentMode::Binary) } else { (3, TreatmentMode::Ordered) };
        let k = rng.random_range(2..=4);
        let ds = random_dataset(&mut rng, 200, k, j, i % 4 < 2);
        let tables = ds.tables();
        let ends = Endpoints::build(&ds, EndpointPolicy::All).unwrap();
        for p in all_pairs(k) {
            for variant in [Variant::AbsSup, Variant::PosPart] {
                let cfg = StatConfig { variant, mode, ..StatConfig::default() };
                let fast = sup_stat_pair(&tables, &ends, p, &cfg).unwrap();
                let slow = brute_force_sup(&ds, &ends, p, &cfg).unwrap();
                checks += 1;
                mismatches += ((fast.value, fast.raw_sup) != (slow.value, slow.raw_sup)) as usize;
            }
        }
    }
    out.record("5", mismatches == 0, format!("{checks} pair statistics, {mismatches} mismatches"), start);
}

fn group_mean(ds: &Dataset, z: usize, f: impl Fn(usize) -> f64) -> f64 {
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.z()[i] == z).collect();
    rows.iter().map(|&i| f(i)).sum::<f64>() / rows.len() as f64
}

fn g_maps(k: usize) -> Vec<GFunction> {
    let f: [fn(f64) -> f64; 5] = [|z| z, |z| 2.0 * z + 3.0, |z| z * z, |z| z.exp(), |z| 0.5 - z * z * z];
    f.iter().map(|h| GFunction::new((0..k).map(|z| h(z as f64)).collect()).unwrap()).collect()
}

fn wald_identities(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
    let (mut ratio_err, mut g_err) = (0.0f64, 0.0f64);
    let mut pairs_checked = 0;
    let mut pass = true;
    for _ in 0..100 {
        let k = rng.random_range(2..=4);
        let ds = random_dataset(&mut rng, 300, k, 2, false);
        let maps = g_maps(k);
        for p in all_pairs(k) {
            let base = beta_pair(&ds, p, &maps[0]).unwrap();
            let y = |z| group_mean(&ds, z, |i| ds.y()[i]);
            let d = |z| group_mean(&ds, z, |i| ds.d_value(i));
            let den = d(p.kprime) - d(p.k);
            if den.abs() < 1e-9 {
                pass &= base.degenerate;
                continue;
            }
            pairs_checked += 1;
            let ratio = (y(p.kprime) - y(p.k)) / den;
            ratio_err = ratio_err.max((base.value - ratio).abs() / (1.0 + ratio.abs()));
            for g in &maps[1..] {
                let other = beta_pair(&ds, p, g).unwrap().value;
                g_err = g_err.max((other - base.value).abs() / (1.0 + base.value.abs()));
            }
        }
    }
    pass &= ratio_err <= 1e-12 && g_err <= 1e-10;
    out.record("6", pass, format!("{pairs_checked} pairs, ratio error {ratio_err:.1e}, g-map spread {g_err:.1e}"), start);
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

fn partial_decomposition(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
    let (mut recon_err, mut sum_err, mut iv_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut checked = 0;
    for _ in 0..100 {
        let k = rng.random_range(3..=4);
        let ds = random_dataset(&mut rng, 300, k, 3, false);
        let mut chain: Vec<usize> = (0..k).collect();
        for g in g_maps(k) {
            let full = theta_partial(&ds, &chain, &g).unwrap();
            if !full.degenerate {
                iv_err = iv_err.max((full.theta - classical_iv(&ds, &g)).abs() / (1.0 + full.theta.abs()));
            }
            chain.rotate_left(1);
            let th = theta_partial(&ds, &chain[..k - 1], &g).unwrap();
            // a flat first-stage step leaves its adjacent ratio undefined
            if th.degenerate || th.adjacent.iter().any(|&a| a == 0.0) {
                continue;
            }
            checked += 1;
            let scale = 1.0 + th.weights.iter().map(|w| w.abs()).fold(0.0, f64::max);
            let recon: f64 = th.weights.iter().zip(&th.adjacent).map(|(w, a)| w * a).sum();
            let total: f64 = th.weights.iter().sum();
            sum_err = sum_err.max((total - 1.0).abs() / scale);
            recon_err = recon_err.max((recon - th.theta).abs() / (scale * (1.0 + th.theta.abs())));
        }
    }
    let pass = recon_err <= 1e-10 && sum_err <= 1e-10 && iv_err <= 1e-12 && checked > 0;
    let detail = format!("{checked} chains, reconstruction {recon_err:.1e}, weight sum {sum_err:.1e}, classical IV {iv_err:.1e}");
    out.record("7", pass, detail, start);
}

fn strong_design(perturbed: bool) -> DgpSpec {
    let mut kv = vec![
        ("z_probs", "0.3333333333333333,0.3333333333333333,0.3333333333333334"),
        ("d_cuts", "0.2;0.5;0.8"),
        ("effect_base", "1"),
    ];
    if perturbed {
        kv.extend([("perturbed", "1,0"), ("perturbation_means", "-2"), ("perturbation_sd", "1")]);
    }
    DgpSpec::custom(&settings(&kv)).unwrap()
}

fn population_wald(spec: &DgpSpec, p: PairId) -> f64 {
    match spec {
        DgpSpec::Threshold(t) => t.population_wald(p).unwrap(),
        _ => unreachable!(),
    }
}

/// Screen at tau = 4, estimate over the selected pairs and test beta_p = truth.
fn screened_test(spec: &DgpSpec, p: PairId, truth: f64, seed: u64) -> (bool, bool, f64, f64, DMatrix<f64>) {
    let ds = spec.draw_observed(3000, seed).unwrap();
    let est = estimate_z0(&ds, 4.0, &ScreenConfig::default()).unwrap();
    let late = beta_vector(&ds, &est.selected, &GFunction::index(ds.k())).unwrap();
    let hyp = Hypothesis::affine(vec![p], DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, truth)).unwrap();
    let res = wald_test(&late, &hyp, 0.05).unwrap();
    let selected = est.selected.contains(p);
    (res.reject, selected, late.beta_of(p).unwrap(), late.se(p).unwrap(), late.sigma)
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn calibration_and_covariance(out: &mut Outcome) {
    let start = Instant::now();
    let reps = 1000;
    let p = pair(0, 1);
    let valid = strong_design(false);
    let truth = population_wald(&valid, p);
    let (mut rejects, mut selected) = (0, 0);
    let (mut betas, mut ses) = (Vec::new(), Vec::new());
    let mut psd = true;
    for s in 0..reps {
        let (reject, sel, beta, se, sigma) = screened_test(&valid, p, truth, 10_000 + s);
        rejects += reject as usize;
        if sel {
            selected += 1;
            betas.push(beta);
            ses.push(se);
        }
        let eig = sigma.clone().symmetric_eigen().eigenvalues;
        let top = eig.max().abs().max(f64::MIN_POSITIVE);
        psd &= sigma == sigma.transpose() && eig.iter().all(|&e| e >= -1e-8 * top);
    }
    let size = rejects as f64 / reps as f64;

    let invalid = strong_design(true);
    let (mut rejects_bad, mut selected_bad) = (0, 0);
    for s in 0..reps {
        let (reject, sel, ..) = screened_test(&invalid, p, truth, 20_000 + s);
        rejects_bad += reject as usize;
        selected_bad += sel as usize;
    }
    let power = rejects_bad as f64 / reps as f64;
    let pass8 = (0.03..=0.07).contains(&size) && power >= 0.99;
    let detail8 = format!(
        "size {size:.3} (pair selected in {selected} reps), invalid-pair rejection {power:.3} (selected in {selected_bad} reps)"
    );
    out.record("8", pass8, detail8, start);

    let start = Instant::now();
    let mc_sd = sd(&betas);
    let mean_se = ses.iter().sum::<f64>() / ses.len() as f64;
    let ratio = mean_se / mc_sd;
    let pass9 = (ratio - 1.0).abs() <= 0.15 && psd;
    out.record("9", pass9, format!("mean SE {mean_se:.4}, MC SD {mc_sd:.4}, ratio {ratio:.3}, sigma PSD {psd}"), start);
}

fn binary_matrix(l: usize, bits: u32) -> DMatrix<f64> {
    DMatrix::from_fn(2, l, |r, c| (bits >> (r * l + c) & 1) as f64)
}

fn sum_class_size(b: &DMatrix<f64>) -> usize {
    let l = b.ncols();
    (0..1u32 << (2 * l))
        .map(|bits| binary_matrix(l, bits))
        .filter(|m| (0..2).all(|r| m.row(r).sum() == b.row(r).sum()) && (0..l).all(|c| m.column(c).sum() == b.column(c).sum()))
        .count()
}

fn three_treatment_design() -> UnorderedDgp {
    UnorderedDgp {
        name: "unordered".into(),
        z_probs: vec![0.5, 0.5],
        types: vec![vec![0, 0], vec![0, 1], vec![1, 1], vec![2, 2]],
        type_probs: vec![0.3, 0.3, 0.2, 0.2],
        means: vec![vec![0.0, 1.0, 2.0], vec![0.5, 2.0, 1.0], vec![1.0, 1.5, 0.0], vec![-1.0, 0.0, 3.0]],
        noise_sd: 1.0,
    }
}

fn unordered_machinery(out: &mut Outcome) {
    let start = Instant::now();
    let mut notes = Vec::new();

    let mut lonesum_ok = true;
    for l in 1..=4 {
        for bits in 0..1u32 << (2 * l) {
            let b = binary_matrix(l, bits);
            lonesum_ok &= is_lonesum(&b) == (sum_class_size(&b) == 1);
        }
    }
    notes.push(format!("lonesum {lonesum_ok}"));

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(10);
    let mut mp_err = 0.0f64;
    for _ in 0..1000 {
        let l = rng.random_range(1..=8);
        let b = DMatrix::from_fn(2, l, |_, _| rng.random_range(0..2) as f64);
        let p = pinv_binary(&b);
        let (bp, pb) = (&b * &p, &p * &b);
        for m in [&b * &p * &b - &b, &p * &b * &p - &p, bp.transpose() - &bp, pb.transpose() - &pb] {
            mp_err = mp_err.max(m.abs().max());
        }
    }
    notes.push(format!("pseudo-inverse {mp_err:.1e}"));

    let r = ResponseMatrix::new(vec![vec![0, 0], vec![0, 1], vec![1, 1]], 2, 2).unwrap();
    let pz = pair(0, 1);
    let mut shares_ok = true;
    for _ in 0..100 {
        let ds = random_dataset(&mut rng, 200, 2, 2, true);
        let t = ds.tables();
        let rate = |z: usize| t.cell_count(1, z) as f64 / t.z_count(z) as f64;
        let complier = counterfactuals(&ds, pz, &r, 1, 1, &|y| y).unwrap();
        let always = counterfactuals(&ds, pz, &r, 1, 2, &|y| y).unwrap();
        let never = counterfactuals(&ds, pz, &r, 0, 2, &|y| y).unwrap();
        shares_ok &= (complier.probability - (rate(1) - rate(0))).abs() < 1e-12
            && (always.probability - rate(0)).abs() < 1e-12
            && (never.probability - (1.0 - rate(1))).abs() < 1e-12;
    }
    notes.push(format!("binary shares {shares_ok}"));

    let dgp = three_treatment_design();
    let rm = ResponseMatrix::new(dgp.response_columns(), 2, 3).unwrap();
    let spec = DgpSpec::Unordered(dgp.clone());
    // (treatment, count, response type index)
    let targets = [(1, 1, 1), (1, 2, 2), (0, 1, 1), (0, 2, 0), (2, 2, 3)];
    let reps = 200;
    let mut draws = vec![Vec::new(); targets.len()];
    for s in 0..reps {
        let ds = spec.draw_observed(3000, 30_000 + s).unwrap();
        for (i, &(d, t, _)) in targets.iter().enumerate() {
            let c = counterfactuals(&ds, pz, &rm, d, t, &|y| y).unwrap();
            draws[i].push(c.mean.unwrap_or(f64::NAN));
        }
    }
    let mut means_ok = true;
    for (i, &(d, _, ty)) in targets.iter().enumerate() {
        let truth = dgp.conditional_mean(d, &[ty]).unwrap();
        let m = draws[i].iter().sum::<f64>() / reps as f64;
        let se = sd(&draws[i]) / (reps as f64).sqrt();
        means_ok &= m.is_finite() && (m - truth).abs() <= 3.0 * se;
    }
    notes.push(format!("counterfactual means {means_ok}"));

    let pass = lonesum_ok && mp_err <= 1e-10 && shares_ok && means_ok;
    out.record("10", pass, notes.join(", "), start);
}

fn main() {
    let mut out = Outcome { passed: 0, failed: 0 };
    table1(&mut out);
    table2(&mut out);
    table3(&mut out);
    application(&mut out);
    oracle_equivalence(&mut out);
    wald_identities(&mut out);
    partial_decomposition(&mut out);
    calibration_and_covariance(&mut out);
    unordered_machinery(&mut out);
    println!("acceptance: {} passed, {} failed", out.passed, out.failed);
    if out.failed > 0 && std::env::var("VSIV_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
