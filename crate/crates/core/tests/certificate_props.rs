//! Certificate constants against closed-form 2×2 oracles, and invariants.

use proptest::prelude::*;
use switchstab::certificates::{extract_lambda_matrix, extract_lambda_quadratic, extract_mu};
use switchstab::{LyapunovSpec, Matrix, Monomial, VectorFieldSpec};

fn m2(a: [f64; 4]) -> Matrix {
    Matrix::from_rows(&[vec![a[0], a[1]], vec![a[2], a[3]]]).unwrap()
}

/// Largest ν with det(M − νP) = 0 for symmetric 2×2 `M` and SPD `P`.
fn pencil_max(m: &Matrix, p: &Matrix) -> (f64, [f64; 2]) {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let (d, e, f) = (p[(0, 0)], p[(0, 1)], p[(1, 1)]);
    // (a−νd)(c−νf) − (b−νe)² = 0
    let qa = d * f - e * e;
    let qb = -(a * f + c * d - 2.0 * b * e);
    let qc = a * c - b * b;
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    let nu = (-qb + disc) / (2.0 * qa);
    // null vector of M − νP
    let (r00, r01, r11) = (a - nu * d, b - nu * e, c - nu * f);
    let v = if r00.abs() + r01.abs() > r01.abs() + r11.abs() { [-r01, r00] } else { [r11, -r01] };
    (nu, v)
}

fn quad(m: &Matrix, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * m[(i, j)] * x[j];
        }
    }
    s
}

fn lyapunov_operator(p: &Matrix, a: &Matrix) -> Matrix {
    a.transpose().matmul(p).add(&p.matmul(a))
}

fn spd2() -> impl Strategy<Value = Matrix> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
        .prop_map(|(a, b, c, d)| {
            let m = m2([a, b, c, d]);
            m.transpose().matmul(&m).add(&Matrix::identity(2).scale(0.5))
        })
}

fn mat2() -> impl Strategy<Value = Matrix> {
    prop::array::uniform4(-3.0f64..3.0).prop_map(m2)
}

fn unit_dirs(count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let th = std::f64::consts::TAU * (k as f64 + 0.5) / count as f64;
            [th.cos(), th.sin()]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lambda_is_tight(p in spd2(), a in mat2()) {
        let lambda = extract_lambda_quadratic(&p, &a).unwrap();
        let m = lyapunov_operator(&p, &a);
        let (nu, v) = pencil_max(&m, &p);
        prop_assert!((lambda + nu).abs() <= 1e-9 * (1.0 + nu.abs()), "λ {lambda} vs oracle {}", -nu);
        let shifted = m.add(&p.scale(lambda));
        let worst = unit_dirs(1000).iter().map(|x| quad(&shifted, x)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(worst <= 1e-9);
        let looser = m.add(&p.scale(lambda + 1e-6));
        prop_assert!(quad(&looser, &v) > 0.0);
    }

    #[test]
    fn mu_bounds_and_is_tight(p1 in spd2(), p2 in spd2()) {
        let ps = [p1.clone(), p2.clone()];
        let mu = extract_mu(&ps).unwrap();
        let oracle = [(&p1, &p2), (&p2, &p1), (&p1, &p1)]
            .iter()
            .map(|(pi, pj)| pencil_max(pi, pj).0)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((mu - oracle).abs() <= 1e-9 * oracle);
        let mut ratio_max = 0.0f64;
        let mut samples = unit_dirs(2000);
        samples.push(pencil_max(&p1, &p2).1);
        samples.push(pencil_max(&p2, &p1).1);
        for x in samples {
            for (pi, pj) in [(&p1, &p2), (&p2, &p1)] {
                let (vi, vj) = (quad(pi, &x), quad(pj, &x));
                prop_assert!(vi <= mu * vj * (1.0 + 1e-9));
                ratio_max = ratio_max.max(vi / vj);
            }
        }
        prop_assert!(ratio_max >= mu * (1.0 - 1e-6) || mu == 1.0);
    }

    #[test]
    fn constants_scale_invariant(p1 in spd2(), p2 in spd2(), a1 in mat2(), a2 in mat2(), c in 0.01f64..100.0) {
        let ps = vec![p1, p2];
        let scaled: Vec<Matrix> = ps.iter().map(|p| p.scale(c)).collect();
        let drifts = vec![a1, a2];
        let l = extract_lambda_matrix(&ps, &drifts).unwrap();
        let ls = extract_lambda_matrix(&scaled, &drifts).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((l[(i, j)] - ls[(i, j)]).abs() <= 1e-10 * (1.0 + l[(i, j)].abs()));
            }
        }
        let (mu, mus) = (extract_mu(&ps).unwrap(), extract_mu(&scaled).unwrap());
        prop_assert!((mu - mus).abs() <= 1e-10 * mu);
    }

    #[test]
    fn lie_derivative_matches_finite_differences(
        r in 0.1f64..10.0,
        th in 0.0f64..std::f64::consts::TAU,
        p in spd2(),
        a in mat2(),
    ) {
        let x = [r * th.cos(), r * th.sin()];
        let quad_v = LyapunovSpec::quadratic(p).unwrap();
        let poly_v = LyapunovSpec::polynomial(2, vec![
            Monomial::new(vec![4, 0], 1.0),
            Monomial::new(vec![2, 2], 0.5),
            Monomial::new(vec![0, 2], 2.0),
        ]).unwrap();
        let fields = [
            VectorFieldSpec::linear(a).unwrap(),
            VectorFieldSpec::polynomial(vec![
                vec![Monomial::new(vec![3, 0], -1.0), Monomial::new(vec![0, 1], 1.0)],
                vec![Monomial::new(vec![1, 1], 0.7), Monomial::new(vec![0, 3], -0.2)],
            ]).unwrap(),
        ];
        for v in [&quad_v, &poly_v] {
            for f in &fields {
                let fx = f.evaluate(&x).unwrap();
                let h = 1e-5 / fx.iter().map(|c| c.abs()).fold(1.0, f64::max);
                let plus: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a + h * b).collect();
                let minus: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a - h * b).collect();
                let fd = (v.value(&plus) - v.value(&minus)) / (2.0 * h);
                let exact = v.lie_derivative(f, &x).unwrap();
                let scale = exact.abs().max(v.value(&x) * 1e-3).max(1e-12);
                prop_assert!((fd - exact).abs() <= 1e-6 * scale, "fd {fd} exact {exact}");
            }
        }
    }
}

#[test]
fn worked_extraction_examples() {
    let i2 = Matrix::identity(2);
    assert!((extract_lambda_quadratic(&i2, &i2.scale(-1.0)).unwrap() - 2.0).abs() < 1e-10);
    assert!((extract_lambda_quadratic(&i2, &i2).unwrap() + 2.0).abs() < 1e-10);
    assert!(extract_lambda_quadratic(&i2, &m2([0.0, 1.0, -1.0, 0.0])).unwrap().abs() < 1e-10);
    assert!((extract_mu(&[i2.clone(), i2.scale(2.0)]).unwrap() - 2.0).abs() < 1e-10);
}
