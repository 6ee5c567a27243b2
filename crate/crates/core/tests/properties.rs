mod common;

use proptest::prelude::*;

use memaudit_core::audit::{
    audit_indexes, best_matches, grid_search_thresholds, macro_f1_at, pairwise_scores, EmbeddingIndex, ExactSearch,
    GridRange, PairLabel, Thresholds,
};
use memaudit_core::encoder::{water_fill, Checkpoint, Encoder, EncoderConfig};
use memaudit_core::eval::{export_histograms, silhouette, ConfusionTable};
use memaudit_core::image::{apply_rigid, Image, RigidTransform};
use memaudit_core::metrics::{ssim, SsimConfig};

fn label_of(i: u8) -> PairLabel {
    PairLabel::ALL[i as usize % 3]
}

fn unit_rows(raw: &[Vec<f32>]) -> Vec<Vec<f32>> {
    raw.iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if n < 1e-3 {
                let mut e = vec![0.0; v.len()];
                e[0] = 1.0;
                e
            } else {
                v.iter().map(|x| x / n).collect()
            }
        })
        .collect()
}

fn index(prefix: &str, raw: &[Vec<f32>]) -> EmbeddingIndex {
    let ids = (0..raw.len()).map(|i| format!("{prefix}{i}")).collect();
    EmbeddingIndex::new(ids, unit_rows(raw), raw[0].len()).unwrap()
}

fn rows(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-1.0f32..1.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_are_monotone_in_score(a in 0.0f64..1.0, gap in 0.001f64..1.0, s in -1.0f64..1.0, d in 0.0f64..1.0) {
        let t = Thresholds::new(a, (a + gap).min(1.0)).unwrap();
        prop_assert!(t.label(s).index() <= t.label(s + d).index());
    }

    #[test]
    fn brightness_shift_leaves_normalized_ssim_at_one(seed in 0u64..1000, c in -0.3f32..0.3, size in 16usize..40) {
        let base = common::textured_image(seed, size, size);
        let scaled = Image::new(size, size, base.pixels().iter().map(|v| 0.35 + 0.3 * v).collect()).unwrap();
        let shifted = Image::new(size, size, scaled.pixels().iter().map(|v| v + c).collect()).unwrap();
        let s = ssim(&scaled, &shifted, &SsimConfig::brightness_normalized()).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in 0u64..1000, lum in any::<bool>()) {
        let a = common::random_image(seed, 24, 24);
        let b = common::textured_image(seed, 24, 24);
        let cfg = SsimConfig { luminance_term_enabled: lum, ..SsimConfig::default() };
        let ab = ssim(&a, &b, &cfg).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a, &cfg).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn silhouette_matches_definition(
        pts in prop::collection::vec((-1.0f64..1.0, 0u8..3), 3..80)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let labels: Vec<PairLabel> = pts.iter().map(|p| label_of(p.1)).collect();
        let classes = PairLabel::ALL.iter().filter(|l| labels.contains(l)).count();
        prop_assume!(classes >= 2);
        let fast = silhouette(&scores, &labels).unwrap();
        let slow = common::naive_silhouette(&scores, &labels);
        prop_assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn transposed_search_gives_transposed_scores(a in rows(1..12, 6), b in rows(1..12, 6)) {
        let (ia, ib) = (index("a", &a), index("b", &b));
        let ab: Vec<f32> = pairwise_scores(&ia, &ib, 5).unwrap().flat_map(|blk| blk.scores).collect();
        let ba: Vec<f32> = pairwise_scores(&ib, &ia, 3).unwrap().flat_map(|blk| blk.scores).collect();
        for i in 0..ia.len() {
            for j in 0..ib.len() {
                prop_assert_eq!(ab[i * ib.len() + j].to_bits(), ba[j * ia.len() + i].to_bits());
            }
        }
    }

    #[test]
    fn best_match_is_the_first_maximum(a in rows(1..20, 5), b in rows(1..30, 5), block in 1usize..40) {
        let (ia, ib) = (index("r", &a), index("s", &b));
        let best = best_matches(&ExactSearch { block_size: block }, &ia, &ib).unwrap();
        for (i, &(j, s)) in best.iter().enumerate() {
            let row: Vec<f32> = (0..ib.len()).map(|k| memaudit_core::audit::dot(ia.row(i), ib.row(k))).collect();
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert_eq!(s, m);
            prop_assert_eq!(j, row.iter().position(|&v| v == m).unwrap());
        }
    }

    #[test]
    fn memorization_never_grows_with_beta(a in rows(1..15, 4), b in rows(1..15, 4), b1 in 0.2f64..1.0, b2 in 0.2f64..1.0) {
        let (ia, ib) = (index("r", &a), index("s", &b));
        let (lo, hi) = (b1.min(b2), b1.max(b2));
        let at = |beta: f64| {
            let t = Thresholds::new(0.1, beta).unwrap();
            audit_indexes(&ia, &ib, &t, &ExactSearch::default()).unwrap().memorization_pct
        };
        prop_assert!(at(hi) <= at(lo));
    }

    #[test]
    fn grid_search_dominates_every_grid_point(
        pts in prop::collection::vec((0.0f64..1.0, 0u8..3), 3..60)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let labels: Vec<PairLabel> = pts.iter().map(|p| label_of(p.1)).collect();
        let best = grid_search_thresholds(&labels, &scores, GridRange::default(), GridRange::default(), 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&best.macro_f1));
        for i in 0..=10 {
            for j in i + 1..=10 {
                let t = Thresholds::new(i as f64 / 10.0, j as f64 / 10.0).unwrap();
                prop_assert!(macro_f1_at(&labels, &scores, &t) <= best.macro_f1);
            }
        }
    }

    #[test]
    fn confusion_and_histogram_account_for_every_pair(
        pts in prop::collection::vec((-1.5f64..1.5, 0u8..3, 0u8..3), 1..100), bins in 1usize..30
    ) {
        let truth: Vec<PairLabel> = pts.iter().map(|p| label_of(p.1)).collect();
        let pred: Vec<PairLabel> = pts.iter().map(|p| label_of(p.2)).collect();
        let table = ConfusionTable::from_labels(&truth, &pred).unwrap();
        prop_assert_eq!(table.total(), pts.len() as u64);
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let h = export_histograms(&scores, &truth, bins, None).unwrap();
        let counted: u64 = h.classes.iter().flat_map(|c| c.counts.iter()).map(|&c| c as u64).sum();
        prop_assert_eq!(counted, pts.len() as u64);
    }

    #[test]
    fn water_fill_is_balanced(avail in prop::collection::vec(0usize..40, 1..8), size in 0usize..150) {
        let order: Vec<usize> = (0..avail.len()).collect();
        let q = water_fill(&avail, size, &order);
        prop_assert_eq!(q.iter().sum::<usize>(), size.min(avail.iter().sum()));
        for (b, (&qb, &ab)) in q.iter().zip(&avail).enumerate() {
            prop_assert!(qb <= ab);
            // an unsaturated bin is never more than one below any other bin
            if qb < ab {
                for (c, &qc) in q.iter().enumerate() {
                    prop_assert!(qc <= qb + 1, "bin {c} has {qc}, unsaturated bin {b} has {qb}");
                }
            }
        }
    }

    #[test]
    fn rigid_inverse_round_trips(rot in -20.0f64..20.0, tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
        let t = RigidTransform::new(rot, tx, ty);
        let id = t.then(&t.inverse());
        prop_assert!(id.rotation_deg.abs() < 1e-9 && id.tx.abs() < 1e-9 && id.ty.abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in 0u64..10_000) {
        let cfg = EncoderConfig { input_size: 16, widths: vec![3, 5], embedding_dim: 8, frozen_block_count: 0 };
        let enc = Encoder::new(cfg, seed).unwrap();
        let bytes = Checkpoint::from_encoder(enc.clone()).to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let img = common::textured_image(seed, 20, 20);
        let (e1, e2) = (enc.embed(&img).unwrap(), back.encoder.embed(&img).unwrap());
        prop_assert!(e1.iter().zip(&e2).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn embeddings_are_unit_norm(seed in 0u64..10_000) {
        let cfg = EncoderConfig { input_size: 16, widths: vec![3, 5], embedding_dim: 8, frozen_block_count: 0 };
        let enc = Encoder::new(cfg, seed).unwrap();
        let img = common::random_image(seed, 23, 31);
        let e = enc.embed(&img).unwrap();
        let n: f64 = e.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_warp_is_exact(seed in 0u64..1000) {
        let img = common::random_image(seed, 17, 21);
        prop_assert_eq!(apply_rigid(&img, &RigidTransform::IDENTITY).unwrap(), img);
    }
}
