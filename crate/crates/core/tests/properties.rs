use proptest::prelude::*;

use quartet_core::eval::round2;
use quartet_core::explanation::{decode_tags, encode_tags, validate_explanation, Direction, TagSpan};
use quartet_core::quartet::{constrained_decode, HeadDistributions};

fn dir() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::More), Just(Direction::Less)]
}

fn span() -> impl Strategy<Value = (usize, TagSpan)> {
    (1usize..=12)
        .prop_flat_map(|k| (Just(k), 1..=k))
        .prop_flat_map(|(k, i)| (Just(k), Just(i), i..=k, dir(), dir()))
        .prop_map(|(k, i, j, dir_i, dir_j)| {
            let dir_j = if i == j { dir_i } else { dir_j };
            (k, TagSpan { i, j, dir_i, dir_j })
        })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let v: Vec<f64> = v.iter().map(|x| x + 1e-9).collect();
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn dists() -> impl Strategy<Value = (usize, HeadDistributions)> {
    (1usize..=10).prop_flat_map(|k| {
        (Just(k), weights(k + 1), weights(k + 1), weights(3), weights(3)).prop_map(|(k, s_i, s_j, di, de)| {
            (
                k,
                HeadDistributions {
                    s_i,
                    s_j,
                    p_di: [di[0], di[1], di[2]],
                    p_de: [de[0], de[1], de[2]],
                },
            )
        })
    })
}

proptest! {
    #[test]
    fn tag_codec_round_trips((k, s) in span()) {
        let tags = encode_tags(Some(s), k).unwrap();
        prop_assert_eq!(tags.len(), k);
        prop_assert_eq!(decode_tags(&tags).unwrap(), Some(s));
        let text = tags.to_string();
        prop_assert_eq!(text.parse::<quartet_core::explanation::TagSequence>().unwrap(), tags);
    }

    #[test]
    fn decode_is_always_consistent((k, d) in dists(), w in prop::collection::vec(0.0f64..3.0, 4)) {
        let e = constrained_decode(&d, &[w[0], w[1], w[2], w[3]]);
        prop_assert!(validate_explanation(&e, k).is_valid(), "{}", e);
    }

    #[test]
    fn round2_is_idempotent(x in -1.0e4f64..1.0e4) {
        let r = round2(x);
        prop_assert_eq!(round2(r), r);
        prop_assert!((r - x).abs() <= 0.005 + 1e-9);
    }
}
