use nqtforge_nn::embeddings::{format_pretrained, ner_segment_ids, parse_pretrained};
use nqtforge_nn::params::{read_checkpoint, write_checkpoint};
use nqtforge_nn::tensor::{conv1d, layer_norm_rows, matmul, softmax_rows, transpose, unfold};
use nqtforge_nn::{ParamStore, Tensor, Vocab};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(a in matrix(6, 8)) {
        let s = softmax_rows(&a);
        for r in 0..s.rows() {
            prop_assert!(s.row(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_centres_rows(a in matrix(5, 7)) {
        let (n, inv) = layer_norm_rows(&a);
        prop_assert_eq!(inv.len(), a.rows());
        for r in 0..n.rows() {
            let mean = n.row(r).iter().sum::<f64>() / n.cols() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn transpose_reverses_products(a in matrix(4, 5), seed in 0u64..1000) {
        let b = Tensor::matrix(a.cols(), 3, (0..a.cols() * 3).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect());
        let ab_t = transpose(&matmul(&a, &b).unwrap());
        let bt_at = matmul(&transpose(&b), &transpose(&a)).unwrap();
        prop_assert!(ab_t.max_abs_diff(&bt_at) < 1e-9);
    }

    #[test]
    fn centre_tap_kernel_is_identity(a in matrix(7, 3), k in prop::sample::select(vec![1usize, 3, 5])) {
        let d = a.cols();
        let mut kernel = vec![0.0; k * d * d];
        for i in 0..d {
            kernel[(k / 2) * d * d + i * d + i] = 1.0;
        }
        let kernel = Tensor::new(vec![k, d, d], kernel).unwrap();
        let out = conv1d(&a, &kernel).unwrap();
        prop_assert_eq!(out.shape(), a.shape());
        prop_assert!(out.max_abs_diff(&a) == 0.0);
        prop_assert_eq!(unfold(&a, k).unwrap().cols(), k * d);
    }

    #[test]
    fn segment_ids_count_entities(tokens in prop::collection::vec(prop::sample::select(vec!["NER", "who", "is", "?"]), 0..12)) {
        let n = tokens.iter().filter(|t| **t == "NER").count();
        let ids = ner_segment_ids(&tokens, 12).unwrap();
        prop_assert_eq!(ids.iter().filter(|&&i| i > 0).count(), n);
        prop_assert_eq!(ids.iter().copied().max().unwrap_or(0), n);
        if n > 0 {
            prop_assert!(ner_segment_ids(&tokens, n - 1).is_err());
        }
    }

    #[test]
    fn vocab_encoding_round_trips(words in prop::collection::vec("[a-z]{1,6}", 1..20)) {
        let vocab = Vocab::from_corpus([words.as_slice()]);
        let ids = vocab.encode(&words);
        let back: Vec<&str> = ids.iter().map(|&i| vocab.token(i)).collect();
        prop_assert_eq!(back, words.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoints_round_trip(tensors in prop::collection::vec(matrix(3, 4), 1..5), header in ".{0,20}") {
        let mut store = ParamStore::new();
        for (i, t) in tensors.iter().enumerate() {
            store.add(format!("p{i}"), t.clone());
        }
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &header, &store).unwrap();
        let (h, entries) = read_checkpoint(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(entries.len(), tensors.len());
        for ((name, t), (i, orig)) in entries.iter().zip(tensors.iter().enumerate()) {
            prop_assert_eq!(name, &format!("p{i}"));
            prop_assert_eq!(t, orig);
        }
    }

    #[test]
    fn pretrained_text_round_trips(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..6)) {
        let text: String = rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!("w{i} {}\n", r.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")))
            .collect();
        let p = parse_pretrained(&text, 1).unwrap();
        let again = parse_pretrained(&format_pretrained(&p), 2).unwrap();
        prop_assert_eq!(p.vocab.tokens(), again.vocab.tokens());
        prop_assert_eq!(&p.vectors, &again.vectors);
    }
}
