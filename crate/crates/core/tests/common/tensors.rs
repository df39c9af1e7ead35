//! Random tensors covering both dtypes and awkward values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sdvpt::data::DType;
use sdvpt::numerics::Array;

pub fn random_tensor(r: &mut ChaCha8Rng) -> (Array, DType) {
    let rank = r.random_range(1..=4);
    let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..=5)).collect();
    let n: usize = shape.iter().product();
    let dtype = if r.random_bool(0.5) {
        DType::F64
    } else {
        DType::F32
    };
    let data = (0..n)
        .map(|_| {
            let v = match r.random_range(0..10) {
                0 => 0.0,
                1 => -0.0,
                2 => f64::MIN_POSITIVE,
                3 if dtype == DType::F64 => r.random::<f64>() * 1e300,
                3 => r.random::<f64>() * 1e30,
                _ => r.random_range(-1e3..1e3),
            };
            if dtype == DType::F32 {
                v as f32 as f64
            } else {
                v
            }
        })
        .collect();
    (Array::new(shape, data).unwrap(), dtype)
}
