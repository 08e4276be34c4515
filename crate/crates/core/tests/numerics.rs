use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pme_core::opspec::{OperandDecl, Property};
use pme_core::oracle::{
    cholesky, relative_residual, sample_operand, symmetric_eigenvalues, triangular_sylvester, trsm_right_lower_trans,
    Matrix,
};

fn decl(props: &[Property]) -> OperandDecl {
    let text = format!(
        "operation t\n  operand A : matrix(n,n), known{}\n  operand X : matrix(n,n), unknown, lower_triangular\n  postcondition: X = A\n  solve: T\n",
        props.iter().map(|p| format!(", {}", p.keyword())).collect::<String>()
    );
    pme_core::parse_operation(&text).unwrap().operands[0].clone()
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    Matrix::from_rows(&data)
}

/// Gaussian elimination with partial pivoting on a dense system.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        let pivot = a[col].clone();
        for r in col + 1..n {
            let f = a[r][col] / pivot[col];
            for (x, p) in a[r][col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

#[test]
fn cholesky_reconstructs_spd_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=16 {
        let a = sample_operand(&decl(&[Property::Spd]), n, n, &mut rng);
        let l = cholesky(&a).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        let back = l.mul(&l.transpose()).unwrap();
        assert!(relative_residual(&back, &a).unwrap() < 1e-13, "n = {n}");
    }
}

#[test]
fn cholesky_rejects_indefinite_input() {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
    assert!(cholesky(&a).is_err());
}

#[test]
fn sylvester_agrees_with_kronecker_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=6);
        let l = sample_operand(&decl(&[Property::LowerTriangular]), m, m, &mut rng);
        let u = sample_operand(&decl(&[Property::UpperTriangular]), n, n, &mut rng);
        let c = random(m, n, &mut rng);
        let x = triangular_sylvester(&l, &u, &c).unwrap();

        // vec(LX + XU) = (I_n (x) L + U^T (x) I_m) vec(X), column-major vec.
        let size = m * n;
        let mut k = vec![vec![0.0; size]; size];
        for j in 0..n {
            for i in 0..m {
                let row = j * m + i;
                for p in 0..m {
                    k[row][j * m + p] += l[(i, p)];
                }
                for q in 0..n {
                    k[row][q * m + i] += u[(q, j)];
                }
            }
        }
        let rhs: Vec<f64> = (0..n).flat_map(|j| (0..m).map(move |i| (i, j))).map(|(i, j)| c[(i, j)]).collect();
        let v = gauss_solve(k, rhs);
        let expected = Matrix::from_fn(m, n, |i, j| v[j * m + i]);
        assert!(relative_residual(&x, &expected).unwrap() < 1e-9);
    }
}

#[test]
fn trsm_solves_against_transposed_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..=8 {
        let l = sample_operand(&decl(&[Property::LowerTriangular]), n, n, &mut rng);
        let b = random(3, n, &mut rng);
        let x = trsm_right_lower_trans(&l, &b).unwrap();
        assert!(relative_residual(&x.mul(&l.transpose()).unwrap(), &b).unwrap() < 1e-12);
    }
}

#[test]
fn eigenvalues_of_known_spectra() {
    let d = Matrix::from_fn(4, 4, |i, j| if i == j { [3.0, -1.0, 2.0, 0.5][i] } else { 0.0 });
    assert_eq!(symmetric_eigenvalues(&d), vec![-1.0, 0.5, 2.0, 3.0]);

    let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
    let ev = symmetric_eigenvalues(&a);
    assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);

    // Trace and Frobenius norm are preserved by the rotations.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random(7, 7, &mut rng);
    let s = g.add(&g.transpose()).unwrap();
    let ev = symmetric_eigenvalues(&s);
    let trace: f64 = (0..7).map(|i| s[(i, i)]).sum();
    assert!((ev.iter().sum::<f64>() - trace).abs() < 1e-10);
    assert!((ev.iter().map(|x| x * x).sum::<f64>().sqrt() - s.frobenius()).abs() < 1e-10);
}

#[test]
fn inverse_round_trips_and_flags_singular_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = sample_operand(&decl(&[]), 5, 5, &mut rng);
    let inv = a.inverse().unwrap();
    assert!(relative_residual(&a.mul(&inv).unwrap(), &Matrix::identity(5)).unwrap() < 1e-12);
    let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
    assert!(singular.inverse().is_err());
}

#[test]
fn blocks_reassemble() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(5, 4, &mut rng);
    let grid = vec![
        vec![a.block(0, 0, 2, 1), a.block(0, 1, 2, 3)],
        vec![a.block(2, 0, 3, 1), a.block(2, 1, 3, 3)],
    ];
    assert_eq!(Matrix::from_blocks(&grid).unwrap(), a);
    let ragged = vec![vec![a.block(0, 0, 2, 1)], vec![a.block(2, 0, 3, 2)]];
    assert!(Matrix::from_blocks(&ragged).is_err());
}
