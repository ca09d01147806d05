//! Core GCN numerics: symmetric adjacency normalization, single-branch
//! propagation, and the dual-branch layer combining the learned global
//! adjacency with a per-pose relation matrix.
//!
//! These are pure functions over plain arrays. The trainable layer structs
//! in [`crate::nn`] implement the same forward math together with its
//! backward pass; the functions here define the reference semantics and are
//! what the tests check against.
//!
//! The learned global adjacency Â is applied as-is, without renormalization:
//! the network learns the matrix instead of being fed a predefined one, and
//! rescaling a free parameter would constrain exactly the thing being
//! learned. [`normalize_adjacency`] implements the classic
//! D̃^{-1/2}(A+I)D̃^{-1/2} scaling and is applied only where a predefined
//! binary adjacency enters the pipeline. Per-pose relation matrices enter
//! the relation branch as raw binary masks.

use ndarray::{concatenate, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::relations::RelationMatrix;

/// Symmetric renormalization of a binary adjacency with added self-loops:
/// D̃^{-1/2}(A + I)D̃^{-1/2}, D̃ the degree matrix of A + I.
///
/// Accepts any square size (tests exercise 1- and 2-node graphs). The output
/// is exactly symmetric and its eigenvalues lie in (−1, 1].
pub fn normalize_adjacency(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    if n != m || n == 0 {
        return Err(Error::InvalidAdjacency(format!(
            "expected a square matrix, got {:?}",
            a.shape()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = a[[i, j]];
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidAdjacency(format!(
                    "entry ({i}, {j}) = {v} is not in {{0, 1}}"
                )));
            }
            if a[[i, j]] != a[[j, i]] {
                return Err(Error::InvalidAdjacency(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    // Degrees of A + I; the self-loop guarantees every degree >= 1.
    let mut d_inv_sqrt = Array1::zeros(n);
    for i in 0..n {
        let degree: f64 = a.row(i).sum() + 1.0;
        d_inv_sqrt[i] = 1.0 / degree.sqrt();
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let a_tilde = a[[i, j]] + f64::from(i == j);
            // d_i * d_j is commutative, so out[i][j] == out[j][i] exactly.
            out[[i, j]] = d_inv_sqrt[i] * d_inv_sqrt[j] * a_tilde;
        }
    }
    Ok(out)
}

/// Single-branch propagation: ReLU(Â · H_b · W) for every sample b.
///
/// H is (B, J, F_in), Â is (J, J), W is (F_in, F_out).
pub fn gcn_layer(
    h: ArrayView3<f64>,
    a_hat: ArrayView2<f64>,
    w: ArrayView2<f64>,
) -> Result<Array3<f64>> {
    let (batch, joints, f_in) = h.dim();
    if a_hat.dim() != (joints, joints) {
        return Err(Error::ShapeMismatch(format!(
            "adjacency {:?} does not match {joints} joints",
            a_hat.shape()
        )));
    }
    if w.dim().0 != f_in {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} do not match F_in = {f_in}",
            w.shape()
        )));
    }
    let f_out = w.dim().1;
    let mut out = Array3::zeros((batch, joints, f_out));
    for b in 0..batch {
        let h_b = h.index_axis(Axis(0), b);
        let y = a_hat.dot(&h_b).dot(&w).mapv(|v| v.max(0.0));
        out.index_axis_mut(Axis(0), b).assign(&y);
    }
    Ok(out)
}

/// Dual-branch propagation: concatenate the global-adjacency branch
/// Â·H·W_A with the per-pose relation branch R_b·H·W_R along the feature
/// axis, then optionally ReLU.
///
/// Output width is exactly 2·F_out. `activate` is set on every layer except
/// the final coordinate-emitting one (coordinates may be negative).
pub fn dual_branch_layer(
    h: ArrayView3<f64>,
    a_hat: ArrayView2<f64>,
    relations: &[RelationMatrix],
    w_a: ArrayView2<f64>,
    w_r: ArrayView2<f64>,
    activate: bool,
) -> Result<Array3<f64>> {
    let (batch, joints, f_in) = h.dim();
    if relations.len() != batch {
        return Err(Error::ShapeMismatch(format!(
            "{} relation matrices for a batch of {batch}",
            relations.len()
        )));
    }
    if a_hat.dim() != (joints, joints) {
        return Err(Error::ShapeMismatch(format!(
            "adjacency {:?} does not match {joints} joints",
            a_hat.shape()
        )));
    }
    if w_a.dim() != w_r.dim() {
        return Err(Error::ShapeMismatch(format!(
            "branch weights disagree: {:?} vs {:?}",
            w_a.shape(),
            w_r.shape()
        )));
    }
    if w_a.dim().0 != f_in {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} do not match F_in = {f_in}",
            w_a.shape()
        )));
    }
    let f_out = w_a.dim().1;
    let mut out = Array3::zeros((batch, joints, 2 * f_out));
    for b in 0..batch {
        let h_b = h.index_axis(Axis(0), b);
        let left = a_hat.dot(&h_b).dot(&w_a);
        let right = relations[b].as_array().dot(&h_b).dot(&w_r);
        let mut y = concatenate(Axis(1), &[left.view(), right.view()])
            .expect("equal row counts by construction");
        if activate {
            y.mapv_inplace(|v| v.max(0.0));
        }
        out.index_axis_mut(Axis(0), b).assign(&y);
    }
    Ok(out)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, sorted
/// ascending. Used for spectrum diagnostics of normalized adjacencies.
pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Result<Vec<f64>> {
    let (n, cols) = m.dim();
    if n != cols || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {:?}",
            m.shape()
        )));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..n {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-9 * scale {
                return Err(Error::ShapeMismatch(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut a = m.to_owned();
    // Each sweep rotates away every off-diagonal entry once; convergence is
    // quadratic, so a handful of sweeps reaches machine precision.
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eigs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::skeleton::NUM_JOINTS;

    #[test]
    fn normalize_isolated_node_is_identity() {
        let a = Array2::zeros((1, 1));
        let out = normalize_adjacency(a.view()).unwrap();
        assert_eq!(out, arr2(&[[1.0]]));
    }

    #[test]
    fn normalize_two_node_edge_is_half_everywhere() {
        let a = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let out = normalize_adjacency(a.view()).unwrap();
        for v in out.iter() {
            assert_relative_eq!(*v, 0.5, max_relative = 1e-15);
        }
    }

    #[test]
    fn normalize_complete_graph_is_one_over_n() {
        for n in [3usize, 7, 21] {
            let mut a = Array2::ones((n, n));
            for i in 0..n {
                a[[i, i]] = 0.0;
            }
            let out = normalize_adjacency(a.view()).unwrap();
            for v in out.iter() {
                assert_relative_eq!(*v, 1.0 / n as f64, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn normalize_rejects_asymmetric_and_non_binary() {
        let mut a = Array2::zeros((3, 3));
        a[[0, 1]] = 1.0;
        assert!(normalize_adjacency(a.view()).is_err());
        let mut a = Array2::zeros((3, 3));
        a[[0, 1]] = 0.5;
        a[[1, 0]] = 0.5;
        assert!(normalize_adjacency(a.view()).is_err());
        assert!(normalize_adjacency(Array2::zeros((2, 3)).view()).is_err());
    }

    fn random_symmetric_binary(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(p) {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
        a
    }

    #[test]
    fn normalized_spectrum_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let n = rng.gen_range(1..=21);
            let p = rng.gen_range(0.05..0.95);
            let a = random_symmetric_binary(&mut rng, n, p);
            let norm = normalize_adjacency(a.view()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(norm[[i, j]], norm[[j, i]], "exact symmetry");
                }
            }
            let eigs = symmetric_eigenvalues(norm.view()).unwrap();
            for e in eigs {
                assert!(e >= -1.0 - 1e-9 && e <= 1.0 + 1e-9, "eigenvalue {e}");
            }
        }
    }

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let eigs = symmetric_eigenvalues(arr2(&[[2.0, 1.0], [1.0, 2.0]]).view()).unwrap();
        assert_relative_eq!(eigs[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(eigs[1], 3.0, max_relative = 1e-12);
        // Diagonal matrices are their own spectra.
        let eigs =
            symmetric_eigenvalues(arr2(&[[3.0, 0.0], [0.0, -2.0]]).view()).unwrap();
        assert_eq!(eigs, vec![-2.0, 3.0]);
        // Trace is preserved on a random symmetric matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Array2::zeros((8, 8));
        for i in 0..8 {
            for j in i..8 {
                let v = rng.gen_range(-2.0..2.0);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
        let eigs = symmetric_eigenvalues(m.view()).unwrap();
        let trace: f64 = (0..8).map(|i| m[[i, i]]).sum();
        assert_relative_eq!(eigs.iter().sum::<f64>(), trace, max_relative = 1e-10);
    }

    #[test]
    fn gcn_layer_identity_and_relu_clamp() {
        let mut h = Array3::zeros((2, NUM_JOINTS, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        h.mapv_inplace(|_| rng.gen_range(0.0..2.0));
        let eye_a = Array2::eye(NUM_JOINTS);
        let eye_w = Array2::eye(4);
        let out = gcn_layer(h.view(), eye_a.view(), eye_w.view()).unwrap();
        assert_eq!(out, h);

        let mut h_neg = h.clone();
        h_neg.mapv_inplace(|v| v - 1.0);
        let out = gcn_layer(h_neg.view(), eye_a.view(), eye_w.view()).unwrap();
        assert_eq!(out, h_neg.mapv(|v| v.max(0.0)));
    }

    #[test]
    fn gcn_layer_with_uniform_adjacency_averages_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut h = Array3::zeros((1, NUM_JOINTS, 3));
        h.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let a = Array2::from_elem((NUM_JOINTS, NUM_JOINTS), 1.0 / NUM_JOINTS as f64);
        let out = gcn_layer(h.view(), a.view(), Array2::eye(3).view()).unwrap();
        let mean = h.index_axis(Axis(0), 0).mean_axis(Axis(0)).unwrap();
        for j in 0..NUM_JOINTS {
            for f in 0..3 {
                assert_relative_eq!(out[[0, j, f]], mean[f].max(0.0), max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gcn_layer_is_monotone_for_nonnegative_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut h = Array3::zeros((1, NUM_JOINTS, 5));
        h.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        let mut a = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
        a.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        let mut w = Array2::zeros((5, 4));
        w.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        let base = gcn_layer(h.view(), a.view(), w.view()).unwrap();
        let mut bumped = h.clone();
        bumped[[0, 7, 2]] += 0.5;
        let out = gcn_layer(bumped.view(), a.view(), w.view()).unwrap();
        for (o, b) in out.iter().zip(base.iter()) {
            assert!(o >= b);
        }
    }

    #[test]
    fn dual_branch_identity_branches_duplicate_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut h = Array3::zeros((3, NUM_JOINTS, 4));
        h.mapv_inplace(|_| rng.gen_range(0.0..1.5));
        let eye_a = Array2::eye(NUM_JOINTS);
        let eye_w = Array2::eye(4);
        let relations = vec![RelationMatrix::identity(); 3];
        let out = dual_branch_layer(
            h.view(),
            eye_a.view(),
            &relations,
            eye_w.view(),
            eye_w.view(),
            true,
        )
        .unwrap();
        assert_eq!(out.dim(), (3, NUM_JOINTS, 8));
        for b in 0..3 {
            for j in 0..NUM_JOINTS {
                for f in 0..4 {
                    assert_eq!(out[[b, j, f]], h[[b, j, f]], "left half");
                    assert_eq!(out[[b, j, f + 4]], h[[b, j, f]], "right half");
                }
            }
        }
    }

    #[test]
    fn dual_branch_dead_relation_branch_zeroes_right_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut h = Array3::zeros((1, NUM_JOINTS, 4));
        h.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let mut a_hat = Array2::zeros((NUM_JOINTS, NUM_JOINTS));
        a_hat.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let mut w = Array2::zeros((4, 3));
        w.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let zero_relation =
            RelationMatrix::new(Array2::zeros((NUM_JOINTS, NUM_JOINTS))).unwrap();
        let out = dual_branch_layer(
            h.view(),
            a_hat.view(),
            &[zero_relation],
            w.view(),
            w.view(),
            true,
        )
        .unwrap();
        // Right half is ReLU(0) = 0; left half matches the single branch.
        let left = gcn_layer(h.view(), a_hat.view(), w.view()).unwrap();
        for j in 0..NUM_JOINTS {
            for f in 0..3 {
                assert_eq!(out[[0, j, f]], left[[0, j, f]]);
                assert_eq!(out[[0, j, f + 3]], 0.0);
            }
        }
    }

    #[test]
    fn dual_branch_validates_shapes() {
        let h = Array3::<f64>::zeros((2, NUM_JOINTS, 4));
        let a = Array2::eye(NUM_JOINTS);
        let w = Array2::<f64>::zeros((4, 3));
        let w_bad = Array2::<f64>::zeros((4, 2));
        let relations = vec![RelationMatrix::identity(); 2];
        assert!(dual_branch_layer(h.view(), a.view(), &relations[..1], w.view(), w.view(), true).is_err());
        assert!(dual_branch_layer(h.view(), a.view(), &relations, w.view(), w_bad.view(), true).is_err());
        let a_bad = Array2::eye(20);
        assert!(dual_branch_layer(h.view(), a_bad.view(), &relations, w.view(), w.view(), true).is_err());
        assert!(gcn_layer(h.view(), a.view(), Array2::<f64>::zeros((5, 3)).view()).is_err());
    }
}
