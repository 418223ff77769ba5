use dense_ddu::analysis::{distance_matrix, LocationMeans};
use dense_ddu::eval::{auroc_scores, sweep, EvalImage, PatchConfig, ThresholdMode};
use dense_ddu::gda::{logsumexp, ClassAccumulator, FitAccumulator, FitOptions};
use dense_ddu::io::{read_archive_bytes, read_tensor_bytes, write_archive, TensorData, TensorFile};
use dense_ddu::measures::{entropy, mutual_information, predictive_entropy, SoftmaxStack};
use dense_ddu::render::{render_map, Normalization};
use dense_ddu::{FeatureMap, LabelMap, Source, UncertaintyMap};
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..5, 0..4)
}

fn tensor() -> impl Strategy<Value = TensorFile> {
    shape().prop_flat_map(|s| {
        let n: usize = s.iter().product();
        let data = prop_oneof![
            prop::collection::vec(any::<f32>(), n).prop_map(TensorData::F32),
            prop::collection::vec(any::<f64>(), n).prop_map(TensorData::F64),
            prop::collection::vec(any::<u8>(), n).prop_map(TensorData::U8),
            prop::collection::vec(any::<i32>(), n).prop_map(TensorData::I32),
        ];
        (Just(s), data).prop_map(|(s, d)| TensorFile::new(s, d).unwrap())
    })
}

fn same_bits(a: &TensorFile, b: &TensorFile) -> bool {
    a.shape() == b.shape()
        && match (a.data(), b.data()) {
            (TensorData::F32(x), TensorData::F32(y)) => x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits())),
            (TensorData::F64(x), TensorData::F64(y)) => x.iter().map(|v| v.to_bits()).eq(y.iter().map(|v| v.to_bits())),
            (TensorData::U8(x), TensorData::U8(y)) => x == y,
            (TensorData::I32(x), TensorData::I32(y)) => x == y,
            _ => false,
        }
}

/// `m` members of `n` pixels over `k` classes, rows normalised.
fn stack(max_m: usize) -> impl Strategy<Value = SoftmaxStack> {
    (1..=max_m, 1usize..6, 1usize..7).prop_flat_map(|(m, n, k)| {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], m * n * k).prop_map(move |mut raw| {
            for row in raw.chunks_mut(k) {
                if row.iter().sum::<f64>() == 0.0 {
                    row[0] = 1.0;
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            SoftmaxStack::new(m, 1, n, k, raw).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tensor_write_read_identity(t in tensor()) {
        let bytes = t.to_bytes();
        let back = read_tensor_bytes(&bytes).unwrap();
        prop_assert!(same_bits(&t, &back));
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

proptest! {
    #[test]
    fn archive_round_trip(a in tensor(), b in tensor()) {
        let bytes = write_archive(&[("a", &a), ("b", &b)], &[]).unwrap();
        let map = read_archive_bytes(&bytes).unwrap();
        prop_assert_eq!(map.len(), 2);
        prop_assert!(same_bits(&map["a"], &a));
        prop_assert!(same_bits(&map["b"], &b));
    }

    #[test]
    fn mi_lies_between_zero_and_pe(s in stack(5)) {
        let pe = predictive_entropy(&s).unwrap();
        let mi = mutual_information(&s).unwrap();
        for (m, p) in mi.values().iter().zip(pe.values()) {
            prop_assert!(*m >= 0.0);
            prop_assert!(*m <= *p + 1e-12);
        }
    }

    #[test]
    fn single_member_pe_is_entropy(s in stack(1)) {
        let e = entropy(&s).unwrap();
        let pe = predictive_entropy(&s).unwrap();
        for (a, b) in e.values().iter().zip(pe.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn entropy_ignores_class_order(s in stack(3), rot in 0usize..6) {
        let k = s.classes();
        let rotated: Vec<f64> = s.probs().chunks(k).flat_map(|row| {
            let r = rot % k;
            row[r..].iter().chain(&row[..r]).copied().collect::<Vec<_>>()
        }).collect();
        let t = SoftmaxStack::new(s.members(), 1, s.width(), k, rotated).unwrap();
        let (a, b) = (predictive_entropy(&s).unwrap(), predictive_entropy(&t).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pe_and_mi_ignore_member_order(s in stack(4)) {
        let (m, n, k) = (s.members(), s.width(), s.classes());
        let reversed: Vec<f64> = (0..m).rev().flat_map(|j| s.probs()[j * n * k..(j + 1) * n * k].to_vec()).collect();
        let t = SoftmaxStack::new(m, 1, n, k, reversed).unwrap();
        for (x, y) in mutual_information(&s).unwrap().values().iter().zip(mutual_information(&t).unwrap().values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_is_commutative(
        a in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 0..20),
        b in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 0..20),
    ) {
        let ca = ClassAccumulator::from_samples(0, 3, a.iter().map(|v| v.as_slice()));
        let cb = ClassAccumulator::from_samples(0, 3, b.iter().map(|v| v.as_slice()));
        let ab = ca.merge(&cb).unwrap();
        let ba = cb.merge(&ca).unwrap();
        prop_assert_eq!(ab.count(), ba.count());
        prop_assert_eq!(ab.mean(), ba.mean());
        prop_assert_eq!(ab.scatter(), ba.scatter());
        let all = ClassAccumulator::from_samples(0, 3, a.iter().chain(&b).map(|v| v.as_slice()));
        for (x, y) in ab.mean().iter().zip(all.mean()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn density_is_logsumexp_of_components(
        pts in prop::collection::vec(-10.0f64..10.0, 2 * 30),
        seed in prop::collection::vec(-3.0f64..3.0, 2 * 40),
        labels in prop::collection::vec(0i32..3, 40),
    ) {
        let f = FeatureMap::new(1, 40, 2, seed).unwrap();
        let l = LabelMap::new(1, 40, labels, 255).unwrap();
        let model = FitAccumulator::from_image(3, &f, &l).unwrap().finalize(&FitOptions::default()).unwrap();
        let z = FeatureMap::new(1, 30, 2, pts).unwrap();
        let per = model.log_density_per_class(&z).unwrap();
        let total = model.log_density(&z).unwrap();
        let priors = model.log_priors();
        for p in 0..30 {
            let terms: Vec<f64> = per.pixel(p).iter().zip(&priors).map(|(a, b)| a + b).collect();
            prop_assert_eq!(logsumexp(&terms).to_bits(), total.values()[p].to_bits());
        }
    }

    #[test]
    fn quantile_sweep_ignores_increasing_transforms(
        vals in prop::collection::vec(0u8..20, 36),
        correct in prop::collection::vec(any::<bool>(), 36),
        points in 2usize..8,
    ) {
        let make = |f: &dyn Fn(f64) -> f64| {
            let gt = LabelMap::new(6, 6, vec![0; 36], 255).unwrap();
            let pred = LabelMap::new(6, 6, correct.iter().map(|&c| i32::from(!c)).collect(), 255).unwrap();
            let unc = UncertaintyMap::new(6, 6, vals.iter().map(|&v| f(v as f64)).collect(), Source::Entropy).unwrap();
            EvalImage { pred, gt, unc }
        };
        let cfg = PatchConfig::default();
        let a = sweep(&[make(&|v| v)], &cfg, ThresholdMode::Quantile, points).unwrap();
        let b = sweep(&[make(&|v| 4.0 * v + 3.0)], &cfg, ThresholdMode::Quantile, points).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            prop_assert_eq!(x.counts, y.counts);
        }
    }

    #[test]
    fn auroc_complements(neg in prop::collection::vec(0u8..10, 1..30), pos in prop::collection::vec(0u8..10, 1..30)) {
        let n: Vec<f64> = neg.iter().map(|&v| v as f64).collect();
        let p: Vec<f64> = pos.iter().map(|&v| v as f64).collect();
        let a = auroc_scores(&n, &p).unwrap();
        let b = auroc_scores(&p, &n).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn rendering_is_monotone(vals in prop::collection::vec(-100.0f64..100.0, 1..50), q in prop::bool::ANY, conf in prop::bool::ANY) {
        let n = vals.len();
        let source = if conf { Source::LogDensity } else { Source::Entropy };
        let map = UncertaintyMap::new(1, n, vals.clone(), source).unwrap();
        let norm = if q { Normalization::Quantile { lo: 0.05, hi: 0.95 } } else { Normalization::MinMax };
        let img = render_map(&map, norm).unwrap();
        prop_assert_eq!((img.height, img.width), (1, n));
        for i in 0..n {
            for j in 0..n {
                if vals[i] < vals[j] {
                    prop_assert!(img.pixels[i] <= img.pixels[j]);
                }
            }
        }
    }

    #[test]
    fn distance_matrix_symmetry(
        a in prop::collection::vec(prop::option::of(prop::collection::vec(-5.0f64..5.0, 2)), 3),
        b in prop::collection::vec(prop::option::of(prop::collection::vec(-5.0f64..5.0, 2)), 3),
    ) {
        let loc = |means: Vec<Option<Vec<f64>>>| LocationMeans {
            coord: (0, 0),
            dim: 2,
            counts: means.iter().map(|m| u64::from(m.is_some())).collect(),
            means,
            skipped_images: 0,
        };
        let (la, lb) = (loc(a), loc(b));
        prop_assert_eq!(distance_matrix(&la, &lb).unwrap(), distance_matrix(&lb, &la).unwrap().transpose());
        let self_d = distance_matrix(&la, &la).unwrap();
        for p in 0..3 {
            if la.means[p].is_some() {
                prop_assert_eq!(self_d.get(p, p), Some(0.0));
            }
        }
    }
}
