use nalgebra::{DMatrix, DVector, Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssm_core::mesh::primitives::icosphere;
use ssm_core::mesh::{Landmark, LandmarkSet};
use ssm_core::shape::*;

fn random_samples(n: usize, v: usize, seed: u64) -> Vec<Vec<Point3<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Point3<f64>> = (0..v)
        .map(|_| {
            Point3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            )
        })
        .collect();
    (0..n)
        .map(|_| {
            base.iter()
                .map(|p| {
                    p + Vector3::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                    )
                })
                .collect()
        })
        .collect()
}

fn refs(s: &[Vec<Point3<f64>>]) -> Vec<&[Point3<f64>]> {
    s.iter().map(|x| x.as_slice()).collect()
}

fn model(n: usize, v: usize, seed: u64) -> (ShapeModel, Vec<Vec<Point3<f64>>>) {
    let s = random_samples(n, v, seed);
    let m = fit_pca(&refs(&s), &vec![1.0; n], None).unwrap();
    (m, s)
}

#[test]
fn weights_act_as_multiplicities() {
    let s = random_samples(5, 40, 1);
    let counts = [1usize, 2, 3, 1, 2];
    let weighted = fit_pca(&refs(&s), &counts.map(|c| c as f64), None).unwrap();
    let mut dup = Vec::new();
    for (x, &c) in s.iter().zip(&counts) {
        for _ in 0..c {
            dup.push(x.as_slice());
        }
    }
    let plain = fit_pca(&dup, &vec![1.0; dup.len()], None).unwrap();
    assert!((weighted.template() - plain.template()).amax() < 1e-9);
    assert_eq!(weighted.component_count(), plain.component_count());
    for (a, b) in weighted.variances().iter().zip(plain.variances()) {
        assert!((a - b).abs() < 1e-9, "{a} {b}");
    }
}

#[test]
fn basis_is_orthonormal_with_canonical_signs() {
    let (m, _) = model(30, 60, 2);
    assert_eq!(m.component_count(), 29);
    let g = m.basis().transpose() * m.basis();
    assert!((g - DMatrix::identity(29, 29)).amax() < 1e-8);
    for col in m.basis().column_iter() {
        assert!(col[col.iamax()] > 0.0);
    }
    assert!(m.variances().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn rank_truncation() {
    let s = random_samples(6, 10, 3);
    let m = fit_pca(&refs(&s), &[1.0; 6], Some(50)).unwrap();
    assert_eq!(m.component_count(), 5);
    let m2 = fit_pca(&refs(&s), &[1.0; 6], Some(2)).unwrap();
    assert_eq!(m2.component_count(), 2);
    assert_eq!(m2.total_variance(), m.total_variance());
    let short = vec![Point3::origin(); 9];
    let mut bad = refs(&s);
    bad.push(&short);
    assert!(matches!(
        fit_pca(&bad, &[1.0; 7], None),
        Err(ShapeError::LengthMismatch { index: 6, .. })
    ));
    assert!(fit_pca(&refs(&s[..1]), &[1.0], None).is_err());
    assert!(fit_pca(&refs(&s), &[0.0; 6], None).is_err());
}

#[test]
fn full_rank_reconstruction_and_projected_variance() {
    let (m, s) = model(25, 80, 4);
    let n = s.len() as f64;
    let mut sum_sq = vec![0.0; m.component_count()];
    for x in &s {
        let pose = m.project(x).unwrap();
        let back = m.decode(&pose).unwrap();
        let err = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        for (acc, b) in sum_sq.iter_mut().zip(&pose.beta) {
            *acc += b * b / n;
        }
    }
    for (emp, lam) in sum_sq.iter().zip(m.variances()) {
        assert!((emp - lam).abs() <= 1e-8 * lam, "{emp} vs {lam}");
    }
    assert_eq!(m.cumulative_variance(m.component_count()).unwrap(), 1.0);
}

#[test]
fn weighted_projected_variance() {
    let s = random_samples(12, 30, 5);
    let w: Vec<f64> = (0..12).map(|i| 0.5 + i as f64).collect();
    let m = fit_pca(&refs(&s), &w, None).unwrap();
    let wsum: f64 = w.iter().sum();
    let mut acc = vec![0.0; m.component_count()];
    for (x, wi) in s.iter().zip(&w) {
        let b = m.project(x).unwrap().beta;
        for (a, bj) in acc.iter_mut().zip(&b) {
            *a += wi / wsum * bj * bj;
        }
    }
    for (emp, lam) in acc.iter().zip(m.variances()) {
        assert!((emp - lam).abs() <= 1e-8 * lam);
    }
}

#[test]
fn decode_examples() {
    let (m, _) = model(8, 20, 6);
    let t = m.template_points();
    assert_eq!(m.decode(&PoseParams::zero(m.component_count())).unwrap(), t);

    let mut pose = PoseParams::zero(m.component_count());
    pose.translation = Vector3::new(1.0, 2.0, 3.0);
    let moved = m.decode(&pose).unwrap();
    for (a, b) in moved.iter().zip(&t) {
        assert_eq!(*a, b + Vector3::new(1.0, 2.0, 3.0));
    }

    let s1 = m.variances()[0].sqrt();
    let mut beta = vec![0.0; m.component_count()];
    beta[0] = s1;
    let out = m.decode(&PoseParams::from_beta(beta)).unwrap();
    let u = m.basis().column(0);
    for (i, (o, p)) in out.iter().zip(&t).enumerate() {
        let expect = Vector3::new(u[3 * i], u[3 * i + 1], u[3 * i + 2]) * s1 + p.coords;
        assert!((o.coords - expect).norm() < 1e-12);
    }
    assert!(matches!(
        m.decode(&PoseParams::zero(1)),
        Err(ShapeError::BetaLength { .. })
    ));
}

#[test]
fn projection_examples() {
    let (m, _) = model(10, 30, 7);
    let k = m.component_count();
    let zero = m.project(&m.template_points()).unwrap();
    assert!(zero.beta.iter().all(|b| b.abs() < 1e-12));

    // residual orthogonal to the basis by Gram-Schmidt
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut r = DVector::from_fn(m.template().len(), |_, _| rng.gen_range(-1.0..1.0));
    for _ in 0..2 {
        for c in m.basis().column_iter() {
            let d = c.dot(&r);
            r.axpy(-d, &c, 1.0);
        }
    }
    let off = unflatten(&(m.template() + &r * 5.0));
    let b = m.project(&off).unwrap().beta;
    assert!(b.iter().all(|x| x.abs() < 1e-9), "{b:?}");
    assert_eq!(b.len(), k);
    assert!(m.project(&off[1..]).is_err());
}

#[test]
fn mahalanobis_examples() {
    let (m, _) = model(10, 30, 9);
    let k = m.component_count();
    assert_eq!(m.mahalanobis_sq(&vec![0.0; k]).unwrap(), 0.0);
    let mut b = vec![0.0; k];
    b[0] = m.variances()[0].sqrt();
    assert!((m.mahalanobis_sq(&b).unwrap() - 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let beta: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let cov = DMatrix::from_diagonal(&DVector::from_column_slice(m.variances()));
    let bv = DVector::from_column_slice(&beta);
    let dense = (bv.transpose() * cov.try_inverse().unwrap() * &bv)[(0, 0)];
    let got = m.mahalanobis_sq(&beta).unwrap();
    assert!((got - dense).abs() < 1e-10 * dense);
}

#[test]
fn mahalanobis_floor_for_vanishing_variance() {
    let m = ShapeModel::new(
        DVector::zeros(6),
        DMatrix::identity(6, 2),
        vec![4.0, 0.0],
        4.0,
    )
    .unwrap();
    let eps = 4e-12;
    assert!((m.mahalanobis_sq(&[0.0, 1e-6]).unwrap() - 1e-12 / eps).abs() < 1e-9);
}

#[test]
fn sampling() {
    let zero = ShapeModel::new(
        DVector::zeros(6),
        DMatrix::identity(6, 2),
        vec![0.0, 0.0],
        0.0,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        assert!(zero.sample(&mut rng, 3.0).beta.iter().all(|b| *b == 0.0));
    }

    let (m, _) = model(10, 30, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 10_000;
    let l1 = m.variances()[0];
    let mut s2 = 0.0;
    for _ in 0..n {
        let b = m.sample(&mut rng, 3.0).beta;
        assert!(b
            .iter()
            .zip(m.variances())
            .all(|(x, l)| x.abs() <= 3.0 * l.sqrt() + 1e-12));
        s2 += b[0] * b[0];
    }
    let emp = s2 / n as f64;
    assert!((emp / l1 - 1.0).abs() < 0.1, "{emp} vs {l1}");

    let a = m.sample(&mut ChaCha8Rng::seed_from_u64(3), 3.0);
    let b = m.sample(&mut ChaCha8Rng::seed_from_u64(3), 3.0);
    assert_eq!(a, b);
    assert_eq!(a.rotation, Vector3::zeros());
    assert_eq!(a.translation, Vector3::zeros());
}

#[test]
fn model_files_round_trip_bitwise() {
    let sphere = icosphere(20.0, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples: Vec<Vec<Point3<f64>>> = (0..6)
        .map(|_| {
            let s = rng.gen_range(0.8..1.2);
            sphere
                .vertices()
                .iter()
                .map(|p| {
                    Point3::from(p.coords * s) + Vector3::new(rng.gen_range(-1.0..1.0), 0.0, 0.0)
                })
                .collect()
        })
        .collect();
    let labels: Vec<u8> = (0..sphere.vertex_count()).map(|i| (i % 3) as u8).collect();
    let lm = LandmarkSet::vertex_bound([(Landmark::Fundus, 3), (Landmark::PyloricSphincter, 17)]);
    let topo = sphere
        .clone()
        .with_region_labels(labels)
        .unwrap()
        .with_landmarks(lm)
        .unwrap();
    let m = fit_pca(&refs(&samples), &[1.0, 1.0, 2.0, 1.0, 1.0, 0.5], Some(3))
        .unwrap()
        .with_topology(&topo)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub").join("model");
    save_model(&m, &path).unwrap();
    assert!(dir.path().join("sub/model.ssm.json").exists());
    assert!(dir.path().join("sub/model.ssm.bin").exists());
    let back = load_model(&dir.path().join("sub/model.ssm.json")).unwrap();
    assert_eq!(back, m);
    let mesh = back.decode_mesh(&PoseParams::zero(3)).unwrap();
    assert_eq!(mesh.triangles(), sphere.triangles());
    assert_eq!(mesh.landmarks(), topo.landmarks());

    // a flipped byte is caught by the checksum
    let bin = dir.path().join("sub/model.ssm.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn truncation_keeps_leading_components() {
    let (m, _) = model(10, 30, 14);
    let t = m.truncated(3).unwrap();
    assert_eq!(t.component_count(), 3);
    assert_eq!(t.variances(), &m.variances()[..3]);
    assert_eq!(t.basis().column(2), m.basis().column(2));
    assert!(m.truncated(99).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decode_project_round_trip(seed in 0u64..1000) {
        let (m, _) = model(8, 15, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let beta: Vec<f64> = m.variances().iter().map(|l| rng.gen_range(-3.0..3.0) * l.sqrt()).collect();
        let v = m.decode(&PoseParams::from_beta(beta.clone())).unwrap();
        let back = m.project(&v).unwrap().beta;
        for (a, b) in beta.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_is_orthogonal(seed in 0u64..1000) {
        let (m, _) = model(6, 12, seed);
        let extra = random_samples(1, 12, seed + 5000).remove(0);
        let b = m.project(&extra).unwrap();
        let rec = flatten(&m.decode(&b).unwrap());
        let resid = flatten(&extra) - rec;
        let dots = m.basis().tr_mul(&resid);
        prop_assert!(dots.amax() < 1e-9 * resid.norm().max(1.0));
    }

    #[test]
    fn decode_is_equivariant(
        seed in 0u64..1000,
        t1 in prop::array::uniform3(-1.5f64..1.5),
        t2 in prop::array::uniform3(-1.5f64..1.5),
        g1 in prop::array::uniform3(-20.0f64..20.0),
        g2 in prop::array::uniform3(-20.0f64..20.0),
    ) {
        let (m, _) = model(5, 10, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta: Vec<f64> = m.variances().iter().map(|l| rng.gen_range(-2.0..2.0) * l.sqrt()).collect();
        let (t1, t2) = (Vector3::from(t1), Vector3::from(t2));
        let (g1, g2) = (Vector3::from(g1), Vector3::from(g2));
        let r2 = exp_map(&t2);
        let lhs = m.decode(&PoseParams {
            beta: beta.clone(),
            rotation: log_map(&(r2 * exp_map(&t1))),
            translation: r2 * g1 + g2,
        }).unwrap();
        let rhs: Vec<Point3<f64>> = m
            .decode(&PoseParams { beta, rotation: t1, translation: g1 })
            .unwrap()
            .iter()
            .map(|p| r2 * p + g2)
            .collect();
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn cumulative_variance_is_monotone(seed in 0u64..1000, n in 3usize..12) {
        let (m, _) = model(n, 10, seed);
        let mut last = 0.0;
        for k in 1..=m.component_count() {
            let c = m.cumulative_variance(k).unwrap();
            prop_assert!(c >= last && c <= 1.0);
            last = c;
        }
        prop_assert_eq!(last, 1.0);
    }
}
