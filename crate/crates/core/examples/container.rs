//! Writes a few tensors to the container format, reads them back, and shows
//! that a flipped payload bit is caught and attributed to its entry.

use sdvpt::data::{DType, TensorContainer};
use sdvpt::numerics::Array;

fn main() -> sdvpt::Result<()> {
    let mut c = TensorContainer::new();
    c.push(
        "weights",
        Array::matrix(2, 3, vec![0.5, -1.25, 2.0, 0.0, 3.5, -0.125])?,
        DType::F32,
    )?;
    c.push("bias", Array::vector(vec![0.1, 0.2, 0.3])?, DType::F64)?;

    let path = std::env::temp_dir().join("sdvpt-demo.sdvt");
    c.write(&path)?;
    let back = TensorContainer::read(&path)?;
    for e in back.entries() {
        println!(
            "{:<8} {:?} {:?} -> {:?}",
            e.name,
            e.dtype,
            e.array.shape(),
            e.array.data()
        );
    }

    let (mut bytes, layout) = c.encode();
    let target = &layout[1];
    bytes[target.offset as usize] ^= 0x04;
    match TensorContainer::from_bytes(&bytes) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}
