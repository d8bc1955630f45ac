//! One frame of predictive-coding inference on a small ReLU network, with the
//! resulting weight directions compared against backprop.
//!
//!     cargo run --release --example pc_inference

use pcn_ta::backprop::{self, cosine};
use pcn_ta::engine;
use pcn_ta::graph::{Activation, Architecture, LayerGraph};
use pcn_ta::tensor::Tensor;

fn main() -> pcn_ta::error::Result<()> {
    let mut g = LayerGraph::build(&Architecture::mlp(&[10, 8, 6, 4], Activation::Relu), 3)?;
    let x = Tensor::vector(&[0.9, -0.2, 0.4, 0.1, -0.7, 0.3, 0.0, 0.5, -0.1, 0.8]);
    let label = Tensor::vector(&[0.0, 1.0, 0.0, 0.0]);

    g.forward_predictions(&x)?;
    g.init_states_from_predictions();
    engine::clamp_output(&mut g, &label)?;
    println!("step  max|grad|      vfe");
    for step in 1..=300 {
        let norm = engine::inference_step(&mut g, 0.05)?;
        if step == 1 || step % 50 == 0 {
            println!("{step:>4}  {norm:.3e}  {:.6}", g.vfe());
        }
    }

    let bp = backprop::bp_gradients(&g, &x, &label)?;
    for (e, grad) in bp.edges.iter().enumerate() {
        let pc: Vec<f64> = g.weight_gradient(e)?.iter().copied().collect();
        let descent: Vec<f64> = grad.iter().map(|v| -v).collect();
        println!("edge {e}: cosine with -backprop {:.12}", cosine(&pc, &descent));
    }
    Ok(())
}
