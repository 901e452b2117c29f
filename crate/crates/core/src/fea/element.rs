use crate::error::{Error, Result};

/// Unit-modulus element stiffness matrix of a 4-node bilinear quad in plane
/// stress, integrated with 2×2 Gauss points.
///
/// Local node order is counter-clockwise starting at the lower-left corner,
/// DOFs interleaved as `[u0, v0, u1, v1, u2, v2, u3, v3]`. For a square
/// element the matrix does not depend on `element_size` (unit thickness).
pub fn element_stiffness_q4(poisson: f64, element_size: f64) -> Result<[[f64; 8]; 8]> {
    if !(poisson > 0.0 && poisson < 0.5) {
        return Err(Error::parameter("poisson", format!("{poisson} not in (0, 0.5)")));
    }
    if !(element_size > 0.0 && element_size.is_finite()) {
        return Err(Error::parameter(
            "element_size",
            format!("{element_size} must be positive"),
        ));
    }

    let factor = 1.0 / (1.0 - poisson * poisson);
    let d = [
        [factor, factor * poisson, 0.0],
        [factor * poisson, factor, 0.0],
        [0.0, 0.0, factor * (1.0 - poisson) / 2.0],
    ];

    // Reference corners (xi, eta) in the same order as the physical nodes.
    const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let gauss = 1.0 / 3f64.sqrt();
    let half = element_size / 2.0;
    // Jacobian of the affine map from the reference square is diag(h/2, h/2).
    let det_j = half * half;

    let mut k = [[0.0; 8]; 8];
    for &xi in &[-gauss, gauss] {
        for &eta in &[-gauss, gauss] {
            let mut b = [[0.0; 8]; 3];
            for (a, &(xa, ea)) in CORNERS.iter().enumerate() {
                let dn_dx = 0.25 * xa * (1.0 + ea * eta) / half;
                let dn_dy = 0.25 * ea * (1.0 + xa * xi) / half;
                b[0][2 * a] = dn_dx;
                b[1][2 * a + 1] = dn_dy;
                b[2][2 * a] = dn_dy;
                b[2][2 * a + 1] = dn_dx;
            }
            let mut db = [[0.0; 8]; 3];
            for r in 0..3 {
                for c in 0..8 {
                    db[r][c] = (0..3).map(|s| d[r][s] * b[s][c]).sum();
                }
            }
            for r in 0..8 {
                for c in 0..8 {
                    k[r][c] += det_j * (0..3).map(|s| b[s][r] * db[s][c]).sum::<f64>();
                }
            }
        }
    }
    // Symmetrize away rounding asymmetry.
    for r in 0..8 {
        for c in (r + 1)..8 {
            let avg = 0.5 * (k[r][c] + k[c][r]);
            k[r][c] = avg;
            k[c][r] = avg;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SMatrix;

    // Row 0 from an independent scripted 2×2 Gauss integration of BᵀDB.
    const ROW0: [f64; 8] = [
        0.49450549450549436,
        0.17857142857142852,
        -0.30219780219780207,
        -0.01373626373626373,
        -0.24725274725274715,
        -0.17857142857142852,
        0.0549450549450549,
        0.01373626373626373,
    ];

    #[test]
    fn first_row_matches_quadrature_oracle() {
        let k = element_stiffness_q4(0.3, 1.0).unwrap();
        for (got, want) in k[0].iter().zip(ROW0) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        assert!((k[0][0] - 0.45 / 0.91).abs() < 1e-14);
    }

    #[test]
    fn symmetric_with_three_rigid_body_modes() {
        let k = element_stiffness_q4(0.3, 1.0).unwrap();
        let m = SMatrix::<f64, 8, 8>::from_fn(|r, c| k[r][c]);
        assert_eq!(m, m.transpose());
        let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(eig[..3].iter().all(|v| v.abs() < 1e-12));
        assert!(eig[3] > 1e-3);
    }

    #[test]
    fn translations_produce_no_force() {
        let k = element_stiffness_q4(0.3, 1.0).unwrap();
        for row in &k {
            let fx: f64 = (0..4).map(|a| row[2 * a]).sum();
            let fy: f64 = (0..4).map(|a| row[2 * a + 1]).sum();
            assert!(fx.abs() < 1e-14 && fy.abs() < 1e-14);
        }
    }

    #[test]
    fn independent_of_element_size() {
        let a = element_stiffness_q4(0.3, 1.0).unwrap();
        let b = element_stiffness_q4(0.3, 1.0 / 64.0).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert!((a[r][c] - b[r][c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rejects_bad_poisson() {
        assert!(element_stiffness_q4(0.5, 1.0).is_err());
        assert!(element_stiffness_q4(0.0, 1.0).is_err());
        assert!(element_stiffness_q4(-0.1, 1.0).is_err());
    }
}
