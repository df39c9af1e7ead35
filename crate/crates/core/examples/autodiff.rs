//! A two-layer network on the tape, its gradients, and the finite-difference
//! check that every differentiable op in the crate is tested against.

use sdvpt::numerics::{finite_diff_check, Array, Tape, Var};

fn net(tape: &mut Tape, v: &[Var]) -> sdvpt::Result<Var> {
    let x = tape.constant(Array::matrix(
        3,
        4,
        (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
    )?);
    let h = tape.matmul(x, v[0])?;
    let h = tape.add_row_vector(h, v[1])?;
    let h = tape.softplus(h)?;
    let y = tape.matmul(h, v[2])?;
    let y = tape.mul(y, y)?;
    tape.mean(y)
}

fn main() -> sdvpt::Result<()> {
    let w1 = Array::matrix(
        4,
        5,
        (0..20)
            .map(|i| ((i * 7) % 11) as f64 / 10.0 - 0.5)
            .collect(),
    )?;
    let b1 = Array::matrix(1, 5, vec![0.1, -0.2, 0.0, 0.3, -0.1])?;
    let w2 = Array::matrix(
        5,
        2,
        (0..10).map(|i| ((i * 3) % 7) as f64 / 7.0 - 0.4).collect(),
    )?;
    let params = [w1, b1, w2];

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = net(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    println!(
        "loss {:.6}, {} tape nodes",
        tape.value(loss).item(),
        tape.len()
    );
    for (name, v) in ["w1", "b1", "w2"].iter().zip(&vars) {
        let g = grads.wrt(*v);
        let norm = g.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("  |d loss / d {name}| = {norm:.6}");
    }

    let err = finite_diff_check(net, &params, 1e-5)?;
    println!("max relative error against central differences: {err:.2e}");
    Ok(())
}
