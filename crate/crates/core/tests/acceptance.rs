//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL`
//! line. Criteria listed in `KNOWN_GAPS` are reported but do not fail the
//! run.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use proptest::prelude::*;

use mfpca_core::basis::{fit_penalized, BasisSystem, Lambda};
use mfpca_core::experiment::{
    coverage_experiment, coverage_study, run_study, sensitivity_study, setting1_study, setting2_study,
    setting3_study, summarize, ImagePathway, SENSITIVITY_PVE,
};
use mfpca_core::evaluation::BootstrapOptions;
use mfpca_core::fundata::quadrature_weights;
use mfpca_core::linalg::median;
use mfpca_core::mfpca::{
    align_signs, direct_oracle, mfpca, mfpca_from_scores, univariate_from_multivariate, MfpcaResult,
    UnivariateBlock,
};
use mfpca_core::simgen::{
    exact_scores, rng_stream, simulate, true_basis, with_values, Decay, SimulationSpec, Sparsity,
};
use mfpca_core::ufpca::{dense_fpca, Truncation, UfpcaResult};
use mfpca_core::{ElementSample, MultiFunData};

const KNOWN_GAPS: &[u32] = &[];

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // written to the raw handle so the line survives output capture
    let _ = writeln!(std::io::stderr(), "criterion {n} [{name}]: {verdict} -- {detail}");
    if !KNOWN_GAPS.contains(&n) {
        assert!(pass, "criterion {n} failed: {detail}");
    }
}

fn uni_all(data: &MultiFunData) -> Vec<UfpcaResult> {
    data.elements().iter().map(|e| dense_fpca(e, Truncation::All, None).unwrap()).collect()
}

/// Multivariate L² distance between component `m` of two results.
fn psi_distance(a: &MfpcaResult, b: &MfpcaResult, m: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..a.p() {
        let q = quadrature_weights(&a.domains[j]).unwrap();
        let d: Vec<f64> = (a.eigenfunctions[j].row(m) - b.eigenfunctions[j].row(m)).iter().copied().collect();
        s += a.weights[j] * q.inner(&d, &d);
    }
    s.sqrt()
}

#[test]
fn criterion_1_oracle_equivalence() {
    let start = Instant::now();
    let (mut worst_nu, mut worst_psi, mut compared) = (0.0f64, 0.0f64, 0usize);
    for sigma2 in [0.0, 0.25] {
        for seed in 0..10 {
            let sim = simulate(&SimulationSpec::setting1(100, 50, Decay::TableExp, sigma2, 100 + seed)).unwrap();
            let mut est = mfpca_from_scores(&uni_all(&sim.data), Truncation::All).unwrap();
            let oracle = direct_oracle(&sim.data, &[1.0, 1.0], Truncation::All).unwrap();
            align_signs(&mut est, &oracle.eigenfunctions, &[1.0, 1.0]).unwrap();
            let nu1 = oracle.eigenvalues[0];
            for m in 0..oracle.m().min(est.m()) {
                if oracle.eigenvalues[m] < 1e-6 * nu1 {
                    break;
                }
                worst_nu = worst_nu.max((est.eigenvalues[m] / oracle.eigenvalues[m] - 1.0).abs());
                worst_psi = worst_psi.max(psi_distance(&est, &oracle, m));
                compared += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "oracle equivalence",
        worst_nu <= 1e-6 && worst_psi <= 1e-4 && secs < 60.0,
        format!("{compared} components, max rel nu diff {worst_nu:.2e}, max psi diff {worst_psi:.2e}, {secs:.1}s"),
    );
}

/// Part 2 → part 1 → part 2 on finite-KL data; returns the largest deviation.
fn round_trip_deviation(n: usize, seed: u64) -> f64 {
    let spec = SimulationSpec::setting1(n, 60, Decay::TableExp, 0.0, seed);
    let basis = true_basis(&spec).unwrap();
    let nu = Decay::TableExp.values(8);
    let scores = exact_scores(&nu, n, &mut rng_stream(seed, 1));
    let values: Vec<DMatrix<f64>> = basis.eigenfunctions.iter().map(|e| &scores * e).collect();
    let elements = basis
        .domains
        .iter()
        .zip(values)
        .map(|(d, v)| ElementSample::dense(d.clone(), v).unwrap())
        .collect();
    let data = MultiFunData::unlabelled(elements).unwrap();
    let uni: Vec<UfpcaResult> =
        data.elements().iter().map(|e| dense_fpca(e, Truncation::Count(8), None).unwrap()).collect();
    let r = mfpca_from_scores(&uni, Truncation::All).unwrap();
    let implied: Vec<UfpcaResult> = (0..2)
        .map(|j| {
            let iu = univariate_from_multivariate(&r.eigenvalues, &r.eigenfunctions[j], &r.domains[j]).unwrap();
            UfpcaResult {
                domain: r.domains[j].clone(),
                mean: r.means[j].clone(),
                eigenvalues: iu.eigenvalues.clone(),
                all_eigenvalues: iu.eigenvalues.clone(),
                eigenfunctions: iu.eigenfunctions,
                scores: &r.scores * iu.score_map.transpose(),
                sigma2: 0.0,
                pve: vec![0.0; iu.eigenvalues.len()],
                projection_scores: true,
                warnings: Vec::new(),
            }
        })
        .collect();
    let mut back = mfpca_from_scores(&implied, Truncation::All).unwrap();
    align_signs(&mut back, &r.eigenfunctions, &[1.0, 1.0]).unwrap();
    if back.m() != r.m() {
        return f64::INFINITY;
    }
    let mut dev = 0.0f64;
    for m in 0..r.m() {
        dev = dev.max((back.eigenvalues[m] - r.eigenvalues[m]).abs());
        for j in 0..2 {
            dev = dev.max((back.eigenfunctions[j].row(m) - r.eigenfunctions[j].row(m)).amax());
        }
        dev = dev.max((back.scores.column(m) - r.scores.column(m)).amax());
    }
    dev
}

#[test]
fn criterion_2_round_trip() {
    let start = Instant::now();
    let worst = std::cell::Cell::new(0.0f64);
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() });
    let outcome = runner.run(&(20usize..120, any::<u64>()), |(n, seed)| {
        let d = round_trip_deviation(n, seed);
        worst.set(worst.get().max(d));
        prop_assert!(d <= 1e-8, "n={} seed={} deviation {:e}", n, seed, d);
        Ok(())
    });
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "round trip",
        outcome.is_ok() && secs < 10.0,
        format!("24 cases, max deviation {:.2e}, {secs:.1}s{}", worst.get(), outcome.err().map(|e| format!(", {e}")).unwrap_or_default()),
    );
}

#[test]
fn criterion_3_setting1_replication() {
    let start = Instant::now();
    let clean = summarize(&run_study(&setting1_study(250, Decay::TableExp, 0.0, 20), 3).unwrap());
    let noisy = summarize(&run_study(&setting1_study(250, Decay::TableExp, 0.25, 20), 3).unwrap());
    let (a, b) = (100.0 * clean.median_mrse, 100.0 * noisy.median_mrse);
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "setting 1 MRSE",
        a <= 0.05 && (0.2..=2.0).contains(&b) && secs < 600.0,
        format!("median MRSE {a:.4}% (sigma2=0), {b:.4}% (sigma2=0.25), {secs:.1}s"),
    );
}

#[test]
fn criterion_4_setting2_sparsity() {
    let start = Instant::now();
    let run = |s| 100.0 * summarize(&run_study(&setting2_study(250, Decay::TableExp, 0.0, s, 10), 4).unwrap()).median_mrse;
    let (full, medium, high) = (run(Sparsity::None), run(Sparsity::Medium), run(Sparsity::High));
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        "setting 2 sparsity",
        full <= 0.05 && medium <= 1.0 && high <= 20.0 && secs < 1200.0,
        format!("median MRSE full {full:.4}%, medium {medium:.4}%, high {high:.4}%, {secs:.1}s"),
    );
}

#[test]
fn criterion_5_setting3() {
    let start = Instant::now();
    let run = |s2, p| {
        100.0 * summarize(&run_study(&setting3_study(250, (50, 25), 100, s2, p, 10), 5).unwrap()).median_mrse
    };
    let spline = (run(0.0, ImagePathway::Spline), run(0.25, ImagePathway::Spline));
    let tpa = (run(0.0, ImagePathway::Tpa), run(0.25, ImagePathway::Tpa));
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        "setting 3 MRSE",
        spline.0 <= 1.5 && spline.1 <= 5.0 && tpa.0 <= 4.0 && tpa.1 <= 7.0 && secs < 1800.0,
        format!(
            "splines {:.3}% / {:.3}%, FCP-TPA {:.3}% / {:.3}% (sigma2 = 0 / 0.25), {secs:.1}s",
            spline.0, spline.1, tpa.0, tpa.1
        ),
    );
}

#[test]
fn criterion_6_sensitivity() {
    let mrse: Vec<f64> = SENSITIVITY_PVE
        .iter()
        .map(|p| 100.0 * summarize(&run_study(&sensitivity_study(250, *p, 10), 6).unwrap()).median_mrse)
        .collect();
    let decreasing = mrse.windows(2).all(|w| w[1] < w[0]);
    report(
        6,
        "sensitivity",
        decreasing && mrse[0] >= 10.0 && mrse[4] <= 0.05,
        format!("median MRSE (%) at pve .75/.90/.95/.99/full: {mrse:.4?}"),
    );
}

#[test]
fn criterion_7_bootstrap_coverage() {
    let start = Instant::now();
    let study = coverage_study(250, (50, 25), 100, 0.0, 50, BootstrapOptions::new(50, &[0.95], 3, 0));
    let t = coverage_experiment(&study, 7).unwrap();
    let per_element: Vec<f64> = (0..2).map(|j| t.element_mean(0, j)).collect();
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        "bootstrap coverage",
        per_element.iter().all(|c| (0.88..=0.99).contains(c)) && secs < 3600.0,
        format!("mean pointwise 95% coverage per element {per_element:.3?}, per component {:.3?}, {secs:.1}s", t.mean[0]),
    );
}

fn weighted_gram(r: &MfpcaResult) -> DMatrix<f64> {
    let m = r.m();
    let mut g = DMatrix::zeros(m, m);
    for j in 0..r.p() {
        let q = quadrature_weights(&r.domains[j]).unwrap();
        let e = &r.eigenfunctions[j];
        g += r.weights[j] * e * DMatrix::from_fn(e.ncols(), m, |k, c| q.0[k] * e[(c, k)]);
    }
    g
}

#[test]
fn criterion_8_invariants() {
    let sim = simulate(&SimulationSpec::setting1(80, 50, Decay::TableExp, 0.25, 8)).unwrap();
    let data = &sim.data;
    let uni: Vec<UfpcaResult> =
        data.elements().iter().map(|e| dense_fpca(e, Truncation::Count(10), None).unwrap()).collect();
    let w = [0.5, 2.0];
    let blocks: Vec<UnivariateBlock> = uni.iter().map(UnivariateBlock::from).collect();
    let r = mfpca(&blocks, &w, Truncation::All).unwrap();
    let n1 = (r.n() - 1) as f64;

    let ortho = (weighted_gram(&r) - DMatrix::identity(r.m(), r.m())).amax();
    let cov = &r.scores.transpose() * &r.scores / n1 - DMatrix::from_diagonal(&r.eigenvalues.clone().into());
    let score_diag = cov.amax();

    // weight transfer: spline expansions with λ = 0 are linear in the data, so
    // scaling element j by √w_j under unit weights reproduces the weighted fit
    let splines = |d: &MultiFunData| -> Vec<UnivariateBlock> {
        d.elements()
            .iter()
            .map(|e| {
                let b = BasisSystem::bspline(0.0, 1.0, 12, 3).unwrap();
                UnivariateBlock::from(&fit_penalized(e, &b, 2, Lambda::Fixed(0.0)).unwrap())
            })
            .collect()
    };
    let weighted = mfpca(&splines(data), &w, Truncation::Count(6)).unwrap();
    let scaled_values = data.elements().iter().zip(w).map(|(e, wj)| e.values() * wj.sqrt()).collect();
    let scaled = with_values(data, scaled_values).unwrap();
    let mut unit = mfpca(&splines(&scaled), &[1.0, 1.0], Truncation::Count(6)).unwrap();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let reference: Vec<DMatrix<f64>> = weighted.eigenfunctions.iter().zip(&sw).map(|(e, s)| e * *s).collect();
    align_signs(&mut unit, &reference, &[1.0, 1.0]).unwrap();
    let mut transfer = 0.0f64;
    for m in 0..6 {
        transfer = transfer.max((unit.eigenvalues[m] - weighted.eigenvalues[m]).abs() / weighted.eigenvalues[0]);
        for j in 0..2 {
            transfer = transfer.max((unit.eigenfunctions[j].row(m) - reference[j].row(m)).amax());
        }
        transfer = transfer.max((unit.scores.column(m) - weighted.scores.column(m)).amax());
    }

    // p = 1 reduces to the univariate decomposition
    let one = MultiFunData::unlabelled(vec![data.element(0).clone()]).unwrap();
    let r1 = mfpca_from_scores(&uni[..1], Truncation::All).unwrap();
    let mut p1 = 0.0f64;
    for m in 0..r1.m() {
        let s = r1.eigenfunctions[0].row(m).dot(&uni[0].eigenfunctions.row(m)).signum();
        p1 = p1.max((r1.eigenvalues[m] - uni[0].eigenvalues[m]).abs());
        p1 = p1.max((r1.eigenfunctions[0].row(m) * s - uni[0].eigenfunctions.row(m)).amax());
        p1 = p1.max((r1.scores.column(m) * s - uni[0].scores.column(m)).amax());
    }
    assert_eq!(one.p(), 1);

    // training MRSE nonincreasing in M
    let ru = mfpca_from_scores(&uni, Truncation::All).unwrap();
    let errs: Vec<f64> = (0..=ru.m())
        .map(|m| mfpca_core::evaluation::mrse(data, &ru.reconstruct(m).unwrap(), &[1.0, 1.0]).unwrap())
        .collect();
    let monotone = errs.windows(2).all(|e| e[1] <= e[0] + 1e-12);

    // general pathway with B = I and D = I agrees with the orthonormal one
    let general = mfpca(&blocks, &[1.0, 1.0], Truncation::All).unwrap();
    let mut special = 0.0f64;
    for m in 0..ru.m() {
        special = special.max((general.eigenvalues[m] - ru.eigenvalues[m]).abs());
        for j in 0..2 {
            special = special.max((general.eigenfunctions[j].row(m) - ru.eigenfunctions[j].row(m)).amax());
        }
    }

    let pass = ortho <= 1e-6 && score_diag <= 1e-8 && transfer <= 1e-10 && p1 <= 1e-8 && monotone && special <= 1e-8;
    report(
        8,
        "invariant suite",
        pass,
        format!(
            "orthonormality {ortho:.1e}, score covariance {score_diag:.1e}, weight transfer {transfer:.1e}, \
             p=1 {p1:.1e}, MRSE monotone {monotone}, B=I/D=I {special:.1e}"
        ),
    );
}

#[test]
fn criterion_9_asymptotics() {
    let err1 = |n| -> f64 {
        let reps = run_study(&setting1_study(n, Decay::TableExp, 0.0, 20), 9).unwrap();
        median(&reps.iter().map(|r| r.metrics.err_eigenfunction[0]).collect::<Vec<_>>())
    };
    let (small, large) = (err1(100), err1(500));
    report(
        9,
        "error decreases with N",
        large <= small,
        format!("median Err(psi_1) N=100 {small:.3e}, N=500 {large:.3e}"),
    );
}
