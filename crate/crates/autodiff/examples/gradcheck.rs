//! Builds a two-layer GELU network on a tape, backpropagates a cross-entropy loss
//! and checks every parameter gradient against central differences.
//!
//! ```text
//! cargo run -p tisa-autodiff --example gradcheck
//! ```

use tisa_autodiff::{grad_check, GradCheckConfig, Tape, Tensor, Var};

fn wavy(rows: usize, cols: usize, phase: f64) -> Tensor {
    let data = (0..rows * cols).map(|i| (i as f64 * 0.61 + phase).sin() * 0.7).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

fn main() -> tisa_autodiff::Result<()> {
    let x = wavy(5, 3, 0.0);
    let labels = [0usize, 3, 1, 2, 3];
    let params = [wavy(3, 8, 0.4), wavy(1, 8, 1.3), wavy(8, 4, 2.1), wavy(1, 4, 0.9)];

    let loss = |tape: &Tape, p: &[Var]| -> tisa_autodiff::Result<Var> {
        let input = tape.constant(x.clone());
        let h = tape.add_row(tape.matmul(input, p[0])?, p[1])?;
        let h = tape.gelu(h)?;
        let logits = tape.add_row(tape.matmul(h, p[2])?, p[3])?;
        tape.cross_entropy(logits, &labels)
    };

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = loss(&tape, &vars)?;
    let grads = tape.backward(out)?;
    println!("loss {:.6}", tape.item(out)?);
    for (i, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v, params[i].shape());
        let norm = g.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("param {i} {:?}: gradient norm {norm:.6}", params[i].shape());
    }

    let report = grad_check(loss, &params, &GradCheckConfig::default())?;
    println!("checked {} coordinates, max relative error {:.2e}", report.checked, report.max_rel_error);
    Ok(())
}
