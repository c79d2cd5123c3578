use std::collections::BTreeMap;

use proptest::prelude::*;
use qmc_core::codecs::Codec;
use qmc_core::container::{pack_bytes, unpack_bytes, verify_bytes, ContainerReader};
use qmc_core::quant::{quantize_channel_wise, quantize_tensor_wise, Axis, QuantMode, QuantizedTensor};
use qmc_core::tensorio::Tensor;

fn arb_model() -> impl Strategy<Value = Vec<QuantizedTensor>> {
    prop::collection::vec(
        (1usize..20, 1usize..40, any::<bool>(), -3.0f32..3.0).prop_flat_map(|(r, c, cw, spread)| {
            prop::collection::vec(-1.0f32..1.0, r * c).prop_map(move |d| {
                let d = d.iter().map(|v| v * 10f32.powf(spread)).collect();
                let t = Tensor::from_f32("t", vec![r, c], d).unwrap();
                if cw {
                    quantize_channel_wise(&t, Axis::Row, QuantMode::Asymmetric).unwrap()
                } else {
                    quantize_tensor_wise(&t, QuantMode::Symmetric).unwrap()
                }
            })
        }),
        0..6,
    )
    .prop_map(|ts| {
        ts.into_iter()
            .enumerate()
            .map(|(i, mut q)| {
                q.name = format!("layer.{i}.weight");
                q
            })
            .collect()
    })
}

fn arb_codec() -> impl Strategy<Value = Codec> {
    prop_oneof![Just(Codec::Store), Just(Codec::Huffman), Just(Codec::tans())]
}

proptest! {
    #[test]
    fn roundtrip(model in arb_model(), codec in arb_codec()) {
        let meta = BTreeMap::from([("k".to_owned(), "v".to_owned())]);
        let bytes = pack_bytes(&model, codec, &meta).unwrap();
        let (manifest, back) = unpack_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(&manifest.metadata, &meta);
        prop_assert!(verify_bytes(&bytes).is_ok());

        let mut r = ContainerReader::new(std::io::Cursor::new(&bytes)).unwrap();
        for q in model.iter().rev() {
            prop_assert_eq!(&r.read_tensor(&q.name).unwrap(), q);
        }
    }

    #[test]
    fn any_single_bit_flip_is_detected(
        model in arb_model(),
        codec in arb_codec(),
        pos in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let bytes = pack_bytes(&model, codec, &BTreeMap::new()).unwrap();
        let mut bad = bytes.clone();
        let i = pos.index(bad.len());
        bad[i] ^= 1 << bit;
        prop_assert!(!verify_bytes(&bad).is_ok(), "flip at byte {} bit {} undetected", i, bit);
        prop_assert!(unpack_bytes(&bad).is_err());
    }

    #[test]
    fn truncation_is_detected(model in arb_model(), cut in any::<prop::sample::Index>()) {
        let bytes = pack_bytes(&model, Codec::Huffman, &BTreeMap::new()).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(!verify_bytes(&bytes[..n]).is_ok());
        prop_assert!(unpack_bytes(&bytes[..n]).is_err());
    }
}
