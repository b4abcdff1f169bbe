use std::f64::consts::SQRT_2;

use proptest::prelude::*;

use super::*;
use crate::autodiff::Tensor;
use crate::grid::{PatchGrid, Symmetry};

fn grid(n: usize) -> PatchGrid {
    PatchGrid::from_patch_count(n).unwrap()
}

/// Brute-force ring oracle: float Euclidean radii from the geometric
/// center, sorted and deduplicated with a loose tolerance. Independent of
/// the integer arithmetic used by `circle_classes`.
fn radius_oracle(side: usize) -> (Vec<usize>, Vec<f64>) {
    let c = (side as f64 - 1.0) / 2.0;
    let radii: Vec<f64> = (0..side * side)
        .map(|i| {
            let (r, k) = ((i / side) as f64, (i % side) as f64);
            ((r - c).powi(2) + (k - c).powi(2)).sqrt()
        })
        .collect();
    let mut distinct = radii.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let ranks = radii
        .iter()
        .map(|r| distinct.iter().position(|x| (x - r).abs() < 1e-9).unwrap())
        .collect();
    (ranks, distinct)
}

#[test]
fn oracle_frozen_values_for_25_patches() {
    let (ranks, radii) = radius_oracle(5);
    let expected = [0.0, 1.0, SQRT_2, 2.0, 5f64.sqrt(), 2.0 * SQRT_2];
    assert_eq!(radii.len(), 6);
    for (a, b) in radii.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    #[rustfmt::skip]
    let frozen = [
        5, 4, 3, 4, 5,
        4, 2, 1, 2, 4,
        3, 1, 0, 1, 3,
        4, 2, 1, 2, 4,
        5, 4, 3, 4, 5,
    ];
    assert_eq!(ranks, frozen);
}

#[test]
fn sequence_vectors_reproduce_published_examples() {
    let d9 = sequence_distance_vector(&grid(9), 1.0).unwrap();
    assert_eq!(d9.values(), &[5.0, 4.0, 3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let d16 = sequence_distance_vector(&grid(16), 1.0).unwrap();
    assert_eq!(
        d16.values(),
        &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    );
    assert_eq!(d16.kind(), DistanceKind::Sequence);
}

#[test]
fn sequence_vector_with_unit_two() {
    // 1 + 2 * |i - 4|, enumerated by hand.
    let v = sequence_distance_vector(&grid(9), 2.0).unwrap();
    assert_eq!(v.values(), &[9.0, 7.0, 5.0, 3.0, 1.0, 3.0, 5.0, 7.0, 9.0]);
}

#[test]
fn non_positive_unit_is_rejected() {
    assert!(matches!(
        sequence_distance_vector(&grid(9), 0.0),
        Err(Error::NonPositiveUnit(_))
    ));
    assert!(matches!(
        circle_distance_vector(&grid(9), -1.0),
        Err(Error::NonPositiveUnit(_))
    ));
    assert!(sequence_distance_vector(&grid(9), f64::NAN).is_err());
}

#[test]
fn circle_classes_small_grids() {
    let c9 = circle_classes(&grid(9));
    assert_eq!(c9.ranks, vec![2, 1, 2, 1, 0, 1, 2, 1, 2]);
    assert_eq!(c9.class_count, 3);
    let c16 = circle_classes(&grid(16));
    assert_eq!(c16.ranks, vec![2, 1, 1, 2, 1, 0, 0, 1, 1, 0, 0, 1, 2, 1, 1, 2]);
    assert_eq!(c16.class_count, 3);
}

#[test]
fn circle_classes_match_the_oracle() {
    for side in 3..=12 {
        let (ranks, radii) = radius_oracle(side);
        let classes = circle_classes(&PatchGrid::from_side(side).unwrap());
        assert_eq!(classes.ranks, ranks, "side {side}");
        assert_eq!(classes.class_count, radii.len(), "side {side}");
    }
}

#[test]
fn nonunit_class_counts() {
    let counts: Vec<usize> = [9, 16, 25]
        .iter()
        .map(|&n| circle_classes(&grid(n)).class_count - 1)
        .collect();
    assert_eq!(counts, vec![2, 2, 5]);
}

#[test]
fn circle_vectors_reproduce_published_examples() {
    let r = SQRT_2;
    let d9 = circle_distance_vector(&grid(9), 1.0).unwrap();
    let e9 = [2.0, r, 2.0, r, 1.0, r, 2.0, r, 2.0];
    let d16 = circle_distance_vector(&grid(16), 1.0).unwrap();
    let e16 = [2.0, r, r, 2.0, r, 1.0, 1.0, r, r, 1.0, 1.0, r, 2.0, r, r, 2.0];
    for (got, want) in [(d9.values(), &e9[..]), (d16.values(), &e16[..])] {
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(want) {
            if b.fract() == 0.0 {
                assert_eq!(a, b);
            } else {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn circle_vector_25_patches() {
    let v = circle_distance_vector(&grid(25), 1.0).unwrap();
    let (ranks, _) = radius_oracle(5);
    let ring_value = [1.0, SQRT_2, 2.0, 2.0 * SQRT_2, 4.0, 4.0 * SQRT_2];
    for (i, &rank) in ranks.iter().enumerate() {
        assert!((v.values()[i] - ring_value[rank]).abs() < 1e-12);
    }
    // 4-neighbors of the center sit on ring 1, corners on the outermost ring.
    for i in [7, 11, 13, 17] {
        assert!((v.values()[i] - SQRT_2).abs() < 1e-12);
    }
    for i in [0, 4, 20, 24] {
        assert!((v.values()[i] - 4.0 * SQRT_2).abs() < 1e-12);
    }
}

#[test]
fn outer_products() {
    let dis = DistanceVector::from_values(vec![2.0, 1.0, 2.0], DistanceKind::Circle, 1.0);
    let core = RelationCore::new(vec![1.0, -1.0]);
    let e = outer_embedding(&dis, &core);
    assert_eq!(e.matrix().shape(), &[3, 2]);
    assert_eq!(e.matrix().data(), &[2.0, -2.0, 1.0, -1.0, 2.0, -2.0]);

    let zero = outer_embedding(&dis, &RelationCore::new(vec![0.0; 4]));
    assert!(zero.matrix().data().iter().all(|&x| x == 0.0));

    let d9 = sequence_distance_vector(&grid(9), 1.0).unwrap();
    let col = outer_embedding(&d9, &RelationCore::new(vec![1.0]));
    assert_eq!(col.matrix().shape(), &[9, 1]);
    assert_eq!(col.matrix().data(), d9.values());
}

fn cfg(mode: PositionalMode) -> PositionalConfig {
    PositionalConfig {
        mode,
        ..PositionalConfig::default()
    }
}

fn params(n: usize, dim: usize, seed: u64) -> (PeMatrix, RelationCore) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pe = PeMatrix::new(Tensor::randn(&[n, dim], 1.0, &mut rng)).unwrap();
    let core = RelationCore::new(Tensor::randn(&[dim], 1.0, &mut rng).into_data());
    (pe, core)
}

#[test]
fn compose_none_is_zero() {
    let out = compose_positional(&cfg(PositionalMode::None), &grid(9), 4, None, None, None).unwrap();
    assert_eq!(out, Tensor::zeros(&[10, 4]));
}

#[test]
fn compose_cre_with_basis_core() {
    let mut core = vec![0.0; 5];
    core[0] = 1.0;
    let core = RelationCore::new(core);
    let out = compose_positional(&cfg(PositionalMode::Cre), &grid(9), 5, None, Some(&core), None).unwrap();
    let circle = circle_distance_vector(&grid(9), 1.0).unwrap();
    for (i, row) in out.rows().enumerate() {
        let first = if i == 0 { 0.0 } else { circle.values()[i - 1] };
        assert_eq!(row[0], first);
        assert!(row[1..].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn compose_sum_modes_add_pe_and_relation_rows() {
    let (pe, core) = params(16, 6, 3);
    let g = grid(16);
    for (combined, relation) in [
        (PositionalMode::SrePlusPe, PositionalMode::Sre),
        (PositionalMode::CrePlusPe, PositionalMode::Cre),
    ] {
        let both = compose_positional(&cfg(combined), &g, 6, Some(&pe), Some(&core), None).unwrap();
        let only_pe = compose_positional(&cfg(PositionalMode::Pe), &g, 6, Some(&pe), None, None).unwrap();
        let only_re = compose_positional(&cfg(relation), &g, 6, None, Some(&core), None).unwrap();
        for ((a, b), c) in both.data().iter().zip(only_pe.data()).zip(only_re.data()) {
            assert_eq!(*a, b + c);
        }
    }
}

#[test]
fn compose_reports_missing_and_mismatched_inputs() {
    let (pe, core) = params(9, 4, 1);
    let g = grid(9);
    assert!(matches!(
        compose_positional(&cfg(PositionalMode::Pe), &g, 4, None, None, None),
        Err(Error::MissingParameter(_))
    ));
    assert!(matches!(
        compose_positional(&cfg(PositionalMode::SrePlusPe), &g, 4, Some(&pe), None, None),
        Err(Error::MissingParameter(_))
    ));
    assert!(matches!(
        compose_positional(&cfg(PositionalMode::Sre), &g, 5, None, Some(&core), None),
        Err(Error::ShapeMismatch(_))
    ));
    assert!(matches!(
        compose_positional(&cfg(PositionalMode::Pe), &grid(16), 4, Some(&pe), None, None),
        Err(Error::ShapeMismatch(_))
    ));
    let learnable = PositionalConfig {
        class_token_policy: ClassTokenPolicy::LearnableRow,
        ..cfg(PositionalMode::None)
    };
    assert!(matches!(
        compose_positional(&learnable, &g, 4, None, None, None),
        Err(Error::MissingParameter(_))
    ));
    let out = compose_positional(&learnable, &g, 4, None, None, Some(&[1.0, 2.0, 3.0, 4.0])).unwrap();
    assert_eq!(&out.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
    assert!(out.data()[4..].iter().all(|&x| x == 0.0));
}

#[test]
fn all_modes_share_the_pe_shape() {
    let (pe, core) = params(16, 8, 2);
    let g = grid(16);
    let reference = compose_positional(&cfg(PositionalMode::Pe), &g, 8, Some(&pe), None, None).unwrap();
    for mode in PositionalMode::ALL {
        let out = compose_positional(&cfg(mode), &g, 8, Some(&pe), Some(&core), None).unwrap();
        assert_eq!(out.shape(), reference.shape(), "{mode}");
    }
}

#[test]
fn parameter_counts() {
    let count = |mode| learnable_param_count(&cfg(mode), 196, 768);
    assert_eq!(count(PositionalMode::Pe), 150_528);
    assert_eq!(count(PositionalMode::Sre), 768);
    assert_eq!(count(PositionalMode::Cre), 768);
    assert_eq!(count(PositionalMode::SrePlusPe), 150_528 + 768);
    assert_eq!(count(PositionalMode::None), 0);
    let learnable = PositionalConfig {
        class_token_policy: ClassTokenPolicy::LearnableRow,
        ..cfg(PositionalMode::None)
    };
    assert_eq!(learnable_param_count(&learnable, 196, 768), 768);
}

#[test]
fn mode_names_round_trip() {
    for mode in PositionalMode::ALL {
        assert_eq!(mode.to_string().parse::<PositionalMode>().unwrap(), mode);
    }
    assert!("sre+pe".parse::<PositionalMode>().is_err());
}

fn grids() -> impl Strategy<Value = PatchGrid> {
    (3usize..=12).prop_map(|s| PatchGrid::from_side(s).unwrap())
}

fn units() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), 0.1f64..5.0]
}

proptest! {
    #[test]
    fn sequence_vectors_are_palindromes(g in grids(), d in units()) {
        let v = sequence_distance_vector(&g, d).unwrap();
        let vals = v.values();
        for i in 0..vals.len() {
            prop_assert_eq!(vals[i], vals[vals.len() - 1 - i]);
        }
    }

    #[test]
    fn circle_vectors_are_dihedral_invariant(g in grids(), d in units()) {
        let v = circle_distance_vector(&g, d).unwrap();
        for sym in Symmetry::ALL {
            let perm = g.symmetry_permutation(sym);
            for (i, &j) in perm.iter().enumerate() {
                prop_assert_eq!(v.values()[i], v.values()[j]);
            }
        }
    }

    #[test]
    fn central_entries_are_one_and_all_at_least_one(g in grids(), d in 1.0f64..4.0) {
        for v in [sequence_distance_vector(&g, d).unwrap(), circle_distance_vector(&g, d).unwrap()] {
            for &c in &g.central_indices() {
                prop_assert_eq!(v.values()[c], 1.0);
            }
            prop_assert!(v.values().iter().all(|&x| x >= 1.0));
        }
    }

    #[test]
    fn embeddings_are_rank_one(g in grids(), seed in any::<u64>(), circle in any::<bool>()) {
        let (_, core) = params(g.n(), 5, seed);
        let dis = if circle {
            circle_distance_vector(&g, 1.0).unwrap()
        } else {
            sequence_distance_vector(&g, 1.0).unwrap()
        };
        let e = outer_embedding(&dis, &core);
        let rows: Vec<&[f64]> = e.matrix().rows().collect();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                // rows i and j proportional: r_i * dis_j == r_j * dis_i
                for k in 0..5 {
                    let lhs = rows[i][k] * dis.values()[j];
                    let rhs = rows[j][k] * dis.values()[i];
                    prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn relation_modes_always_compress(side in 3usize..=40, dim in 1usize..2048) {
        let n = side * side;
        prop_assert!(
            learnable_param_count(&cfg(PositionalMode::Sre), n, dim)
                < learnable_param_count(&cfg(PositionalMode::Pe), n, dim)
        );
    }
}
