use proptest::prelude::*;

use weakseg::geometry::{resample_indices, PixelHit};
use weakseg::graph::knn_graph;
use weakseg::model::{LabelMap2D, IGNORE_ID};
use weakseg::render_loss::fusion::{direct_project, fuse, render_labels};
use weakseg::render_loss::loss::seg_contributors;
use weakseg::visibility::distance_filter_hits;

const W: usize = 6;
const H: usize = 5;

fn arb_probs(n: usize, classes: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, classes), n).prop_map(|rows| {
        rows.into_iter()
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(move |v| v / s)
            })
            .collect()
    })
}

fn arb_hits(n: usize) -> impl Strategy<Value = Vec<Option<PixelHit>>> {
    proptest::collection::vec(proptest::option::weighted(0.8, (0..W, 0..H, 0.1f64..5.0)), n).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, h)| {
                h.map(|(u, v, depth)| PixelHit {
                    point_index: i,
                    u,
                    v,
                    depth,
                })
            })
            .collect()
    })
}

fn fusion_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<PixelHit>)> {
    (2usize..5, 1usize..40).prop_flat_map(|(c, n)| {
        (Just(c), arb_probs(n, c), arb_hits(n)).prop_map(|(c, p, h)| (c, p, h.into_iter().flatten().collect()))
    })
}

proptest! {
    #[test]
    fn resample_has_target_size_and_valid_rows(n in 1usize..300, target in 1usize..300, seed in any::<u64>()) {
        let idx = resample_indices(n, target, seed);
        prop_assert_eq!(idx.len(), target);
        prop_assert!(idx.iter().all(|&i| i < n));
        if target <= n {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        } else {
            prop_assert!(idx[..n].iter().copied().eq(0..n));
        }
        prop_assert_eq!(idx, resample_indices(n, target, seed));
    }

    #[test]
    fn fusion_ignores_hit_order((c, probs, hits) in fusion_case(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = hits.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(fuse(&probs, c, &hits, W, H), fuse(&probs, c, &shuffled, W, H));
    }

    #[test]
    fn fused_rows_are_distributions((c, probs, hits) in fusion_case()) {
        let g = fuse(&probs, c, &hits, W, H);
        for p in 0..W * H {
            let s: f64 = g.distribution(p).iter().sum();
            if g.is_empty_pixel(p) {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_is_invariant_to_row_scaling((c, probs, hits) in fusion_case(), scale in 0.01f64..100.0) {
        let scaled: Vec<f64> = probs.iter().map(|p| p * scale).collect();
        let a = fuse(&probs, c, &hits, W, H);
        let b = fuse(&scaled, c, &hits, W, H);
        for p in 0..W * H {
            for (x, y) in a.distribution(p).iter().zip(b.distribution(p)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_contributors_fuse_to_themselves((c, probs, hits) in fusion_case()) {
        // keep the first hit of every pixel
        let mut seen = [false; W * H];
        let single: Vec<PixelHit> = hits.into_iter().filter(|h| !std::mem::replace(&mut seen[h.pixel(W)], true)).collect();
        let g = fuse(&probs, c, &single, W, H);
        for h in &single {
            let row = &probs[h.point_index * c..(h.point_index + 1) * c];
            for (x, y) in g.distribution(h.pixel(W)).iter().zip(row) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
        prop_assert_eq!(render_labels(&g), direct_project(&probs, c, &single, W, H));
    }

    #[test]
    fn nearest_point_of_a_pixel_is_visible_without_window(hits in arb_hits(40), tau in 0.0f64..1.0) {
        let mask = distance_filter_hits(&hits, W, H, tau, 1).unwrap();
        let mut nearest = [f64::INFINITY; W * H];
        for h in hits.iter().flatten() {
            let p = h.pixel(W);
            nearest[p] = nearest[p].min(h.depth);
        }
        for (h, &v) in hits.iter().zip(&mask.flags) {
            match h {
                None => prop_assert!(!v),
                Some(h) if h.depth == nearest[h.pixel(W)] => prop_assert!(v),
                Some(_) => {}
            }
        }
    }

    #[test]
    fn wider_windows_hide_more(hits in arb_hits(40), tau in 0.0f64..1.0) {
        let masks: Vec<_> = [1, 3, 5].iter().map(|&w| distance_filter_hits(&hits, W, H, tau, w).unwrap()).collect();
        for pair in masks.windows(2) {
            prop_assert!(pair[0].flags.iter().zip(&pair[1].flags).all(|(&a, &b)| a || !b));
        }
    }

    #[test]
    fn contributors_are_kept_projected_points_on_labeled_pixels(
        hits in arb_hits(40),
        keep in proptest::collection::vec(any::<bool>(), 40),
        grid in proptest::collection::vec(prop_oneof![Just(IGNORE_ID), 0u8..3], W * H),
    ) {
        let gt = LabelMap2D::new(W, H, grid).unwrap();
        let expected = hits
            .iter()
            .zip(&keep)
            .filter(|(h, &k)| k && h.is_some_and(|h| gt.get(h.u, h.v) != IGNORE_ID))
            .count();
        let got = seg_contributors(&hits, Some(&keep), &gt);
        prop_assert_eq!(got.len(), expected);
        for (i, h, label) in got {
            prop_assert_eq!(Some(h), hits[i]);
            prop_assert_eq!(label, gt.get(h.u, h.v));
        }
    }

    #[test]
    fn knn_commutes_with_point_permutation(
        rows in proptest::collection::vec(proptest::array::uniform3(-10.0f64..10.0), 6..60),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = rows.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows[i]).collect();
        let a = knn_graph(&flat, 3, k).unwrap();
        let b = knn_graph(&permuted, 3, k).unwrap();
        // row r of the permuted graph belongs to original point perm[r]; compare
        // neighbor sets, since random reals have no distance ties
        for r in 0..n {
            let mut mapped: Vec<usize> = b.row(r).iter().map(|&j| perm[j]).collect();
            let mut orig = a.row(perm[r]).to_vec();
            mapped.sort_unstable();
            orig.sort_unstable();
            prop_assert_eq!(mapped, orig);
        }
    }
}
