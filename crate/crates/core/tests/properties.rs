use flowlin::catalog;
use flowlin::edmd::{self, collect_snapshots, Dictionary, DictionaryKind};
use flowlin::embed::{impact_time, DEFAULT_BRACKET};
use flowlin::flows::Chart;
use flowlin::linalg::{matrix_exp, spectral_split, LinearGenerator, DEFAULT_EIGEN_TOLERANCE};
use flowlin::obstruct::{hopf_index_2d, smooth_linearizability_verdict, EquilibriumFact, ManifoldFacts};
use flowlin::pinched::{kernel_direction, parse_rational, single_pinch_spec, two_pinch_spec, Rational};
use flowlin::seeded_rng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::f64::consts::TAU;
use std::sync::Arc;

fn matrix(n: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, &entries[..n * n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_is_a_one_parameter_group(
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        s in -1.0f64..1.0,
        t in -1.0f64..1.0,
    ) {
        let b = LinearGenerator::new(matrix(3, &entries)).unwrap();
        let lhs = matrix_exp(&b, s + t).unwrap();
        let rhs = matrix_exp(&b, s).unwrap() * matrix_exp(&b, t).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        let id = matrix_exp(&b, 0.0).unwrap();
        prop_assert_eq!(id, DMatrix::identity(3, 3));
    }

    #[test]
    fn spectral_projections_are_complementary(
        w in 0.2f64..3.0,
        a in prop::collection::vec(-1.0f64..1.0, 4),
        s in prop::collection::vec(-0.3f64..0.3, 16),
    ) {
        // Rotation block plus a stable block, conjugated by a near-identity map.
        let m = matrix(2, &a);
        let stable = -(&m * m.transpose()) - DMatrix::identity(2, 2) * 0.1;
        let mut b = DMatrix::zeros(4, 4);
        b[(0, 1)] = -w;
        b[(1, 0)] = w;
        b.view_mut((2, 2), (2, 2)).copy_from(&stable);
        let conj = DMatrix::identity(4, 4) + matrix(4, &s);
        let inv = conj.clone().try_inverse().unwrap();
        let gen = LinearGenerator::new(&conj * b * &inv).unwrap();
        let split = spectral_split(&gen, DEFAULT_EIGEN_TOLERANCE).unwrap();
        let (p0, pm) = (&split.center_projection, &split.stable_projection);
        prop_assert_eq!(split.center_dim, 2);
        prop_assert_eq!(split.stable_dim, 2);
        let id = DMatrix::identity(4, 4);
        prop_assert!((p0 + pm - &id).norm() < 1e-8);
        prop_assert!((p0 * p0 - p0).norm() < 1e-8);
        let comm = (p0 * gen.matrix() - gen.matrix() * p0).norm();
        prop_assert!(comm < 1e-8);
    }

    #[test]
    fn closed_form_group_law(
        seed in any::<u64>(),
        s in -3.0f64..3.0,
        t in -3.0f64..3.0,
        which in 0usize..4,
    ) {
        let name = ["quasiperiodic_torus_3", "log_radial", "klein_bottle", "sphere_rotation"][which];
        let e = catalog::get(name).unwrap();
        let x = (e.sampler)(&mut seeded_rng(seed));
        let a = e.system.evolve(&x, s + t).unwrap();
        let b = e.system.evolve(&e.system.evolve(&x, t).unwrap(), s).unwrap();
        // log_radial radii grow doubly exponentially backward in time; the bound is relative.
        let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(e.system.distance(&a, &b) <= 1e-10 * scale);
    }

    #[test]
    fn exact_embeddings_intertwine(seed in any::<u64>(), t in -10.0f64..10.0, which in 0usize..9) {
        let name = [
            "quasiperiodic_torus_1", "quasiperiodic_torus_2", "quasiperiodic_torus_3", "sphere_rotation",
            "klein_bottle", "projective_plane", "product_attractor", "log_radial", "saddle_plane",
        ][which];
        let e = catalog::get(name).unwrap();
        let mut rng = seeded_rng(seed);
        let x = (e.sampler)(&mut rng);
        // The saddle grows like e^{|t|}; keep its states small.
        let x = if name == "saddle_plane" { x.iter().map(|v| v * 1e-4).collect() } else { x };
        // log_radial has radius e^{ln(r) e^{-t}}, which overflows for large negative t.
        let t = if name == "log_radial" { t.max(-2.0) } else { t };
        let r = catalog::exact_embedding_residual(&e, &[x], &[t]).unwrap();
        prop_assert!(r <= 1e-8, "{name}: {r:e}");
    }

    #[test]
    fn chart_distance_is_a_metric(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        c in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let chart = Chart::unit_torus(3);
        prop_assert_eq!(chart.canonicalize(&chart.canonicalize(&a)), chart.canonicalize(&a));
        let (ab, ba) = (chart.distance(&a, &b), chart.distance(&b, &a));
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= chart.distance(&a, &c) + chart.distance(&c, &b) + 1e-12);
        prop_assert!(chart.distance(&a, &chart.canonicalize(&a)) <= 1e-12);
    }

    #[test]
    fn impact_time_cocycle(v0 in prop_oneof![-3.0f64..-0.05, 0.05f64..3.0], th in 0.0..TAU, t in -2.0f64..2.0) {
        let e = catalog::get("log_radial").unwrap();
        let lyap = e.lyapunov.clone().unwrap();
        let x = vec![v0.exp(), th];
        let tau = impact_time(&e.system, &lyap.v, lyap.level, &x, DEFAULT_BRACKET, 1e-13).unwrap();
        let xt = e.system.evolve(&x, t).unwrap();
        let tau_t = impact_time(&e.system, &lyap.v, lyap.level, &xt, DEFAULT_BRACKET, 1e-13).unwrap();
        prop_assert!((tau_t - (tau - t)).abs() <= 1e-8);
        // v(t) = v0 e^{-t}, so the level |v| = 1 is reached at t = ln|v0|.
        prop_assert!((tau - v0.abs().ln()).abs() <= 1e-8);
    }

    #[test]
    fn exact_phase_is_equivariant(v0 in -2.0f64..2.0, th in 0.0..TAU, t in -5.0f64..5.0) {
        let e = catalog::get("log_radial").unwrap();
        let p = e.exact_phase.clone().unwrap();
        let a = e.attractor.as_ref().unwrap().restricted_flow();
        let x = vec![v0.exp(), th];
        let lhs = p(&e.system.evolve(&x, t).unwrap());
        let rhs = a.evolve(&p(&x), t).unwrap();
        prop_assert!(a.distance(&lhs, &rhs) <= 1e-10);
    }

    #[test]
    fn linear_field_index_is_sign_of_determinant(m in prop::collection::vec(-1.0f64..1.0, 4), r in 0.05f64..2.0) {
        let det = m[0] * m[3] - m[1] * m[2];
        prop_assume!(det.abs() > 1e-2);
        let field = move |p: &[f64]| vec![m[0] * p[0] + m[1] * p[1], m[2] * p[0] + m[3] * p[1]];
        let rep = hopf_index_2d(&field, [0.0, 0.0], r, 128).unwrap();
        prop_assert_eq!(rep.index, det.signum() as i64);
        let half = hopf_index_2d(&field, [0.0, 0.0], r / 2.0, 128).unwrap();
        prop_assert_eq!(half.index, rep.index);
    }

    #[test]
    fn verdict_is_monotone_in_index_facts(
        dim in 2usize..6,
        known in prop::collection::vec(prop::option::of(-2i64..3), 0..4),
        extra in -2i64..3,
    ) {
        let mk = |idx: &[Option<i64>]| ManifoldFacts {
            dim,
            equilibria: idx.iter().map(|&index| EquilibriumFact { location: vec![0.0; dim], index }).collect(),
            finitely_many_equilibria: false,
            surface: None,
            euler_characteristic: None,
        };
        let before = smooth_linearizability_verdict(&mk(&known));
        let mut more = known.clone();
        if let Some(slot) = more.iter_mut().find(|i| i.is_none()) {
            *slot = Some(extra);
        } else {
            more.push(Some(extra));
        }
        let after = smooth_linearizability_verdict(&mk(&more));
        if let (Ok(b), Ok(a)) = (before, after) {
            if b.violated_rule().is_some() {
                prop_assert!(a.violated_rule().is_some());
            }
        }
    }

    #[test]
    fn integer_kernel_is_annihilated(rows in prop::collection::vec(prop::collection::vec(-4i64..5, 4), 1..3)) {
        match kernel_direction(&rows, 4) {
            Ok(k) => {
                prop_assert_eq!(k.basis.len(), 4 - rank(&rows));
                for b in &k.basis {
                    for row in &rows {
                        prop_assert_eq!(row.iter().zip(b).map(|(x, y)| x * y).sum::<i64>(), 0);
                    }
                }
                for row in &rows {
                    let s: f64 = row.iter().zip(&k.omega_values).map(|(&x, y)| x as f64 * y).sum();
                    prop_assert!(s.abs() < 1e-9);
                }
            }
            Err(_) => prop_assert_eq!(rank(&rows), 4),
        }
    }

    #[test]
    fn rationals_round_trip(p in -1000i64..1000, q in 1i64..1000) {
        let r = Rational::new(p, q);
        prop_assert_eq!(parse_rational(&r.to_string()).unwrap(), r);
        prop_assert_eq!(parse_rational(&format!("{}e-3", p)).unwrap(), Rational::new(p, 1000));
    }

    #[test]
    fn pinched_flow_is_linear(t0 in 0.0f64..1.0, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0, t in -20.0f64..20.0) {
        for spec in [single_pinch_spec(), two_pinch_spec()] {
            let theta = [t0, t1, t2][..spec.n()].to_vec();
            let p = spec.point(&theta).unwrap();
            let lhs = spec.canonical_embedding(&spec.flow(&p, t));
            let rhs = spec.generator().propagate(t, &spec.canonical_embedding(&p)).unwrap();
            let d: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d <= 1e-10);
        }
    }

    #[test]
    fn collapsed_coordinates_do_not_matter(u in 0.0f64..1.0, w in 0.0f64..1.0) {
        let spec = single_pinch_spec();
        let a = spec.canonical_embedding(&spec.point(&[u, 0.0]).unwrap());
        let b = spec.canonical_embedding(&spec.point(&[w, 0.0]).unwrap());
        prop_assert_eq!(a, b);
    }
}

fn rank(rows: &[Vec<i64>]) -> usize {
    let m = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j] as f64);
    flowlin::linalg::accurate_svd(m, false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-9)
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn edmd_is_equivariant_under_orthogonal_change(q_entries in prop::collection::vec(-1.0f64..1.0, 16)) {
        let e = catalog::get("quasiperiodic_torus_2").unwrap();
        let base = Dictionary::fourier(&e.system, 1);
        let q = DMatrix::from_row_slice(4, 4, &q_entries).qr().q();
        let rotated = {
            let (base, q) = (base.clone(), q.clone());
            Dictionary::new(
                DictionaryKind::Custom { name: "rotated".into() },
                4,
                Arc::new(move |x: &[f64]| {
                    let v = nalgebra::DVector::from_vec(base.eval(x).unwrap());
                    (&q * v).iter().copied().collect()
                }),
            )
        };
        let states = e.sample_states(200, &mut seeded_rng(9));
        let pairs = collect_snapshots(&e.system, &states, 0.1, 1).unwrap();
        let k = edmd::fit(&base, &pairs, 0.0, 0.1).unwrap().operator();
        let kq = edmd::fit(&rotated, &pairs, 0.0, 0.1).unwrap().operator();
        prop_assert!((kq - &q * k * q.transpose()).norm() <= 1e-9);
    }
}
