mod common;

use common::tensors::random_tensor;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdvpt::data::{DType, TensorContainer};
use sdvpt::numerics::Array;

#[test]
fn thousand_tensors_round_trip_bit_exact() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut c = TensorContainer::new();
    for i in 0..1000 {
        let (a, d) = random_tensor(&mut r);
        c.push(format!("t{i}"), a, d).unwrap();
    }
    let bytes = c.to_bytes();
    let back = TensorContainer::from_bytes(&bytes).unwrap();
    assert_eq!(back.len(), 1000);
    for (a, b) in c.entries().iter().zip(back.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.dtype, b.dtype);
        assert!(a.array.bit_eq(&b.array), "{}", a.name);
    }
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn every_payload_bit_flip_is_detected() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut c = TensorContainer::new();
    for i in 0..6 {
        let (a, d) = random_tensor(&mut r);
        c.push(format!("w{i}"), a, d).unwrap();
    }
    let (bytes, layout) = c.encode();
    let mut flips = 0;
    for e in &layout {
        let start = e.offset as usize;
        for byte in start..start + e.byte_len as usize {
            for bit in 0..8 {
                let mut bad = bytes.clone();
                bad[byte] ^= 1 << bit;
                let err = TensorContainer::from_bytes(&bad).unwrap_err();
                assert!(err.to_string().contains(&e.name), "{err}");
                flips += 1;
            }
        }
    }
    assert!(flips > 0);
}

#[test]
fn every_header_bit_flip_is_rejected() {
    let mut c = TensorContainer::new();
    c.push("a", Array::vector(vec![1.0, 2.0]).unwrap(), DType::F64)
        .unwrap();
    c.push(
        "b",
        Array::matrix(1, 2, vec![0.5, -0.25]).unwrap(),
        DType::F32,
    )
    .unwrap();
    let (bytes, layout) = c.encode();
    for byte in 0..layout[0].offset as usize {
        for bit in 0..8 {
            let mut bad = bytes.clone();
            bad[byte] ^= 1 << bit;
            assert!(
                TensorContainer::from_bytes(&bad).is_err(),
                "byte {byte} bit {bit}"
            );
        }
    }
}

#[test]
fn truncation_and_trailing_bytes_are_rejected() {
    let mut c = TensorContainer::new();
    c.push("x", Array::vector(vec![3.0; 5]).unwrap(), DType::F64)
        .unwrap();
    let bytes = c.to_bytes();
    for cut in 0..bytes.len() {
        assert!(TensorContainer::from_bytes(&bytes[..cut]).is_err());
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(TensorContainer::from_bytes(&extra).is_err());
}

#[test]
fn f32_entries_must_be_exact() {
    let mut c = TensorContainer::new();
    assert!(c
        .push("x", Array::vector(vec![0.1]).unwrap(), DType::F32)
        .is_err());
    assert!(c
        .push("x", Array::vector(vec![0.5]).unwrap(), DType::F32)
        .is_ok());
    assert!(c
        .push("x", Array::vector(vec![0.5]).unwrap(), DType::F64)
        .is_err());
}

proptest! {
    #[test]
    fn arbitrary_f64_round_trips(data in vec(any::<f64>(), 1..64)) {
        let n = data.len();
        let mut c = TensorContainer::new();
        c.push("v", Array::vector(data).unwrap(), DType::F64).unwrap();
        let back = TensorContainer::from_bytes(&c.to_bytes()).unwrap();
        prop_assert!(back.require("v").unwrap().bit_eq(c.require("v").unwrap()));
        prop_assert_eq!(back.require("v").unwrap().len(), n);
    }
}
