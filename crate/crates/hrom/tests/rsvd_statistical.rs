//! Leave-one-out estimator calibration against exact projection residuals.

use hrom::{adaptive_rsvd, loo_estimate, shifted_cholqr, DenseOperator, LinOp, RsvdOptions, SketchState};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Square matrix with singular values ratio^k and random rotations.
fn geometric_operator(n: usize, ratio: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let q1 = gaussian(&mut rng, n, n).qr().q();
    let q2 = gaussian(&mut rng, n, n).qr().q();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = ratio.powi(i as i32);
    }
    q1 * d * q2.transpose()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Residual of the orthogonal projection of X onto span(Q).
fn projection_residual(x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (x - q * q.tr_mul(x)).norm()
}

#[test]
fn loo_matches_held_out_distances() {
    // Columns of R^{-T} encode the distance from each sketch column to the
    // span of the remaining ones: 1/||e_j|| equals that distance exactly.
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let y = gaussian(&mut rng, 20, 5);
    let qr = shifted_cholqr(&y, f64::EPSILON).unwrap();
    let state = SketchState {
        z: y.clone(),
        q: qr.q.clone(),
        r: qr.r.clone(),
        power: 0,
        block: 5,
        rng_seed: 0,
    };

    let e = qr
        .r
        .transpose()
        .solve_lower_triangular(&DMatrix::identity(5, 5))
        .unwrap();
    let mut sq_sum = 0.0;
    for j in 0..5 {
        // Oracle: project y_j onto the QR basis of the other four columns.
        let mut others = DMatrix::zeros(20, 4);
        let mut c = 0;
        for k in 0..5 {
            if k != j {
                others.set_column(c, &y.column(k));
                c += 1;
            }
        }
        let qo = others.qr().q();
        let yj = y.column(j).into_owned();
        let dist = (&yj - &qo * qo.tr_mul(&yj)).norm();
        let predicted = 1.0 / e.column(j).norm();
        assert!(
            (dist - predicted).abs() < 1e-10 * dist.max(1.0),
            "column {j}: distance {dist} vs 1/||e_j|| {predicted}"
        );
        sq_sum += 1.0 / e.column(j).norm_squared();
    }
    let eloo = loo_estimate(&state).unwrap();
    assert!((eloo - (sq_sum / 5.0).sqrt()).abs() < 1e-12);
}

#[test]
fn calibration_median_within_factor_three() {
    let n = 128;
    let x = geometric_operator(n, 0.93, 5);
    let op = DenseOperator::new(x.clone());
    let width = 16;

    for power in [0usize, 2] {
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let omega = gaussian(&mut rng, n, width);
            let z = op.apply(&omega).unwrap();
            let mut y = z.clone();
            for _ in 0..power {
                y = op.apply(&op.apply_transpose(&y).unwrap()).unwrap();
            }
            let qr = shifted_cholqr(&y, f64::EPSILON).unwrap();
            let state = SketchState {
                z: z.clone(),
                q: qr.q.clone(),
                r: qr.r.clone(),
                power,
                block: width,
                rng_seed: seed,
            };
            let eloo = loo_estimate(&state).unwrap();
            let truth = projection_residual(&x, &qr.q);
            assert!(truth > 0.0);
            ratios.push(eloo / truth);
        }
        let med = median(&mut ratios);
        assert!(
            (1.0 / 3.0..=3.0).contains(&med),
            "power {power}: median calibration ratio {med}"
        );
    }
}

#[test]
fn power_iterations_sharpen_the_basis() {
    let n = 96;
    let x = geometric_operator(n, 0.85, 11);
    let op = DenseOperator::new(x.clone());
    let width = 12;
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let omega = gaussian(&mut rng, n, width);
    let z = op.apply(&omega).unwrap();

    let q0 = shifted_cholqr(&z, f64::EPSILON).unwrap().q;
    let mut y = z.clone();
    for _ in 0..2 {
        y = op.apply(&op.apply_transpose(&y).unwrap()).unwrap();
    }
    let q2 = shifted_cholqr(&y, f64::EPSILON).unwrap().q;

    let r0 = projection_residual(&x, &q0);
    let r2 = projection_residual(&x, &q2);
    assert!(
        r2 <= r0 * 1.02,
        "power iterations should not lose accuracy: {r2} vs {r0}"
    );
}

#[test]
fn adaptive_estimates_shrink_as_the_sketch_grows() {
    let x = geometric_operator(128, 0.75, 21);
    let op = DenseOperator::new(x.clone());
    let etol = 3e-3 * x.norm();
    let res = adaptive_rsvd(
        &op,
        &RsvdOptions {
            block: 6,
            power: 0,
            etol,
            seed: 17,
        },
    )
    .unwrap();
    assert!(res.estimates.len() >= 2, "fixture should take several blocks");
    let first = res.estimates[0];
    let last = *res.estimates.last().unwrap();
    assert!(last < first, "estimates did not shrink: {first} -> {last}");
    assert!(last <= etol);

    // The returned factorization reproduces the operator to the advertised
    // accuracy scale.
    let approx = &res.u * DMatrix::from_diagonal(&res.sigma) * res.v.transpose();
    let err = (&x - approx).norm();
    assert!(err <= 10.0 * etol, "reconstruction error {err}");
}
