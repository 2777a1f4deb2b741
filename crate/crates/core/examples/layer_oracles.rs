//! Individual layers on hand-sized inputs: a Sobel-like convolution,
//! pooling with its argmax routing, and batch norm statistics.
//!
//! ```text
//! cargo run --example layer_oracles
//! ```

use xray::layers::{conv2d_forward, maxpool_backward, maxpool_forward, BatchNormLayer, Conv2dLayer, Mode};
use xray::Tensor;

fn show(label: &str, t: &Tensor) {
    println!("{label} {:?}", t.shape());
    let w = *t.shape().last().unwrap();
    for row in t.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.2}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> xray::Result<()> {
    // a vertical edge between columns 2 and 3
    let x = Tensor::from_fn(&[1, 5, 6], |i| if i % 6 >= 3 { 1.0 } else { 0.0 });
    let sobel = Tensor::new(vec![1, 1, 3, 3], vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0])?;
    let conv = Conv2dLayer::from_parts(sobel, Tensor::zeros(&[1]), 0)?;
    show("input", &x);
    show("edge response", &conv2d_forward(&conv, &x)?);

    let grid = Tensor::new(vec![1, 2, 4], vec![1.0, 3.0, 2.0, 2.0, 4.0, 0.0, 2.0, 1.0])?;
    let (pooled, idx) = maxpool_forward(&grid)?;
    show("pool input", &grid);
    show("pooled", &pooled);
    println!("winner indices {idx:?} (ties keep the first)");
    show("routed gradient", &maxpool_backward(&idx, &Tensor::full(pooled.shape(), 1.0), grid.shape())?);

    let batch = Tensor::new(vec![4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0])?;
    let mut bn = BatchNormLayer::with_defaults(2);
    show("batch norm (train)", &bn.forward(&batch, Mode::Train)?);
    println!("running mean {:?}, running var {:?}", bn.running_mean().data(), bn.running_var().data());
    show("batch norm (eval)", &bn.forward(&batch, Mode::Eval)?);
    Ok(())
}
