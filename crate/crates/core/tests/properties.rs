use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xmodal::data::split_dataset;
use xmodal::loss::{
    angular_loss, combined_loss, triplet_loss, AngularConfig, BatchLayout, EmbeddingKey, EmbeddingTable, LossConfig,
    LossWeights, Tagged, TripletConfig,
};
use xmodal::neighbor::{build_index, IndexConfig, NeighborSource};
use xmodal::semantic::{build_huffman, build_vocabulary, SemanticSpace, SpaceSource};
use xmodal::train::{Architecture, Encoder};
use xmodal::{FeatureVector, Modality};

fn vec_of(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, dim)
}

fn triple(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (vec_of(dim), vec_of(dim), vec_of(dim))
}

fn keys() -> [EmbeddingKey; 3] {
    [EmbeddingKey::image(0), EmbeddingKey::text(0), EmbeddingKey::text(1)]
}

fn gradient_sum(bundle: &xmodal::LossBundle64, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for g in bundle.gradients.values() {
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x;
        }
    }
    sum
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // Both triple losses depend on differences only, so a common shift
    // leaves them unchanged and their gradients sum to zero.
    #[test]
    fn triple_losses_are_translation_invariant((a, p, n) in triple(5), shift in vec_of(5), m in 0.0f64..2.0, t in 0.05f64..1.5) {
        let [ka, kp, kn] = keys();
        let moved = |v: &[f64]| v.iter().zip(&shift).map(|(x, s)| x + s).collect::<Vec<_>>();
        let (a2, p2, n2) = (moved(&a), moved(&p), moved(&n));
        let trip = |a: &[f64], p: &[f64], n: &[f64]| {
            triplet_loss(Tagged::new(ka, a), Tagged::new(kp, p), Tagged::new(kn, n), &TripletConfig { margin: m }).unwrap()
        };
        let ang = |a: &[f64], p: &[f64], n: &[f64]| {
            angular_loss(Tagged::new(ka, a), Tagged::new(kp, p), Tagged::new(kn, n), &AngularConfig { tan_sq_alpha: t }).unwrap()
        };
        for (before, after) in [(trip(&a, &p, &n), trip(&a2, &p2, &n2)), (ang(&a, &p, &n), ang(&a2, &p2, &n2))] {
            prop_assert!((before.value - after.value).abs() <= 1e-9 * (1.0 + before.value.abs()));
            for s in gradient_sum(&before, 5) {
                prop_assert!(s.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn active_triplet_anchor_gradient((a, p, n) in triple(4), m in 0.0f64..2.0) {
        let [ka, kp, kn] = keys();
        let out = triplet_loss(Tagged::new(ka, &a), Tagged::new(kp, &p), Tagged::new(kn, &n), &TripletConfig { margin: m }).unwrap();
        if out.value > 0.0 {
            let g = out.gradient(ka).unwrap();
            for i in 0..4 {
                prop_assert!((g[i] - 2.0 * (n[i] - p[i])).abs() <= 1e-12 * (1.0 + a[i].abs() + p[i].abs() + n[i].abs()));
            }
        } else {
            prop_assert!(out.gradients.values().flatten().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), b in 2usize..6, alpha in 0.0f64..1.0, beta in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<usize> = (0..b).collect();
        let neighbors = (0..b).map(|i| Some((i + 1) % b)).collect();
        let layout = BatchLayout { members, neighbors };
        let mut table = EmbeddingTable::new();
        for key in layout.keys() {
            let v: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            table.insert(key, v);
        }
        let mut cfg = LossConfig { weights: LossWeights::angular_default(), ..Default::default() };
        cfg.weights.alpha_text = alpha;
        cfg.weights.beta_img = beta;
        let out = combined_loss(&table, &layout, &cfg).unwrap();
        prop_assert!(out.value >= 0.0);
        for s in gradient_sum(&out, 4) {
            prop_assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn splits_partition(n in 0usize..400, seed in any::<u64>(), val in 0u32..40, test in 0u32..40) {
        let ratios = [1.0 - (val + test) as f64 / 100.0, val as f64 / 100.0, test as f64 / 100.0];
        let s = split_dataset(n, ratios, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), (n as f64 * ratios[1] + 1e-9).floor() as usize);
        prop_assert_eq!(s.test.len(), (n as f64 * ratios[2] + 1e-9).floor() as usize);
        prop_assert_eq!(split_dataset(n, ratios, seed).unwrap(), s);
    }

    #[test]
    fn huffman_is_a_full_prefix_code(counts in prop::collection::vec(1u64..100, 2..40)) {
        let doc: Vec<String> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(format!("t{i}"), c as usize))
            .collect();
        let vocab = build_vocabulary(&[doc], 1).unwrap();
        let tree = build_huffman(&vocab).unwrap();
        prop_assert_eq!(tree.internal_nodes(), vocab.len() - 1);
        let codes: Vec<Vec<bool>> = (0..vocab.len()).map(|t| tree.code(t)).collect();
        for (i, a) in codes.iter().enumerate() {
            for b in codes.iter().skip(i + 1) {
                prop_assert!(!a.starts_with(b) && !b.starts_with(a));
            }
        }
        // Kraft equality holds for a full binary tree.
        let kraft: f64 = codes.iter().map(|c| 0.5f64.powi(c.len() as i32)).sum();
        prop_assert!((kraft - 1.0).abs() < 1e-12);
        // More frequent tokens never get longer codes.
        for i in 0..vocab.len() {
            for j in 0..vocab.len() {
                if vocab.counts()[i] > vocab.counts()[j] {
                    prop_assert!(codes[i].len() <= codes[j].len());
                }
            }
        }
    }

    #[test]
    fn exact_rows_are_sorted_and_complete(seed in any::<u64>(), n in 2usize..60, k in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
            .collect();
        let space = SemanticSpace::new((0..n).map(|i| format!("x{i:03}")).collect(), vectors, SpaceSource::ExternalFile).unwrap();
        let table = build_index(&space, &IndexConfig::default()).unwrap().build_table(k, NeighborSource::TextOmega);
        for (i, row) in table.rows().iter().enumerate() {
            prop_assert_eq!(row.len(), k.min(n - 1));
            prop_assert!(!row.neighbors.contains(&i));
            prop_assert!(row.distances.windows(2).all(|w| w[0] <= w[1]));
            // Everything left out is at least as far as the last kept point.
            let last = row.distances.last().copied().unwrap_or(0.0);
            for j in (0..n).filter(|&j| j != i && !row.neighbors.contains(&j)) {
                let d: f64 = space.vectors()[i].iter().zip(&space.vectors()[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                prop_assert!(d >= last);
            }
        }
    }

    #[test]
    fn encoders_emit_unit_vectors(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 6), hidden in prop::option::of(1usize..12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = hidden.map_or(Architecture::Linear, |hidden| Architecture::Mlp { hidden });
        let enc = Encoder::<f64>::new(Modality::Text, 6, 4, arch, &mut rng).unwrap();
        let feature = FeatureVector::new(x, Modality::Text).unwrap();
        if let Ok(e) = enc.encode(&feature) {
            let norm: f64 = e.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert_eq!(e.modality(), Modality::Text);
        }
    }
}
