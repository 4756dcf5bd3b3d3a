//! Shifted Cholesky QR and its block update across condition numbers.

use hrom::{cholqr_update, shifted_cholqr};
use nalgebra::DMatrix;

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

/// rows x k matrix with singular values log-spaced over [1/cond, 1].
fn conditioned(rng: &mut Lcg, rows: usize, k: usize, cond: f64) -> DMatrix<f64> {
    let q1 = DMatrix::from_fn(rows, k, |_, _| rng.next()).qr().q();
    let q2 = DMatrix::from_fn(k, k, |_, _| rng.next()).qr().q();
    let mut d = DMatrix::zeros(k, k);
    for i in 0..k {
        let t = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
        d[(i, i)] = cond.powf(-t);
    }
    q1 * d * q2.transpose()
}

#[test]
fn factorization_quality_across_conditions() {
    let mut rng = Lcg(0x9a7);
    let mut worst_orth = 0.0f64;
    let mut worst_recon = 0.0f64;
    for case in 0..150 {
        let rows = 8 + (case * 13) % 180;
        let k = 1 + (case * 7) % rows.min(24);
        let cond = 10f64.powf((case % 7) as f64);
        let y = conditioned(&mut rng, rows, k, cond);
        let qr = shifted_cholqr(&y, f64::EPSILON).unwrap();

        let orth = (qr.q.tr_mul(&qr.q) - DMatrix::identity(k, k)).norm()
            / (f64::EPSILON * (k as f64).sqrt());
        let recon = (&qr.q * &qr.r - &y).norm() / (f64::EPSILON * y.norm());
        worst_orth = worst_orth.max(orth);
        worst_recon = worst_recon.max(recon);
        for i in 0..k {
            assert!(qr.r[(i, i)] > 0.0, "case {case}: R diagonal not positive");
        }
    }
    assert!(worst_orth < 100.0, "orthogonality floor exceeded: {worst_orth}");
    assert!(worst_recon < 100.0, "reconstruction floor exceeded: {worst_recon}");
}

#[test]
fn update_matches_from_scratch_factorization() {
    let mut rng = Lcg(0xdead2);
    for case in 0..60 {
        let rows = 24 + (case * 11) % 120;
        let k = 2 + case % 8;
        let b = 1 + case % 6;
        let cond = 10f64.powf((case % 5) as f64);
        let y0 = conditioned(&mut rng, rows, k, cond);
        let yb = conditioned(&mut rng, rows, b, cond.sqrt());

        let qr0 = shifted_cholqr(&y0, f64::EPSILON).unwrap();
        let up = cholqr_update(&qr0, &yb, f64::EPSILON).unwrap();

        assert_eq!(up.q.ncols(), k + b);
        let w = k + b;
        let orth = (up.q.tr_mul(&up.q) - DMatrix::identity(w, w)).norm();
        assert!(
            orth < 100.0 * f64::EPSILON * (w as f64).sqrt(),
            "case {case}: orthogonality {orth}"
        );

        // The updated pair reproduces [Q0 R0, Yb] column for column.
        let mut stacked = DMatrix::zeros(rows, w);
        stacked.view_mut((0, 0), (rows, k)).copy_from(&(&qr0.q * &qr0.r));
        stacked.view_mut((0, k), (rows, b)).copy_from(&yb);
        let recon = (&up.q * &up.r - &stacked).norm();
        assert!(
            recon < 100.0 * f64::EPSILON * stacked.norm().max(1.0),
            "case {case}: reconstruction {recon}"
        );
    }
}

#[test]
fn near_dependent_columns_stay_factorizable() {
    // Columns separated by 1e-7: far beyond the Gram matrix's own
    // conditioning, the shifted iteration must still return an orthonormal
    // basis spanning the columns.
    let mut rng = Lcg(0xc0de);
    let rows = 96;
    let base = DMatrix::from_fn(rows, 1, |_, _| rng.next());
    let bump = DMatrix::from_fn(rows, 1, |_, _| rng.next());
    let mut y = DMatrix::zeros(rows, 2);
    y.set_column(0, &base.column(0));
    y.set_column(1, &(base.column(0) + bump.column(0) * 1e-7));
    let qr = shifted_cholqr(&y, f64::EPSILON).unwrap();
    let orth = (qr.q.tr_mul(&qr.q) - DMatrix::identity(2, 2)).norm();
    assert!(orth < 100.0 * f64::EPSILON * 2f64.sqrt(), "{orth}");
    let recon = (&qr.q * &qr.r - &y).norm();
    assert!(recon < 1e-10 * y.norm(), "{recon}");
}
