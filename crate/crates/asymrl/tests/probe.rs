use asymrl::nn::MlpNet;
use ndarray::Array2;

#[test]
fn probe_grad_contiguity() {
    let net = MlpNet::<f64>::zeros([1, 4, 4, 2]);
    let inputs = Array2::from_shape_vec((1, 1), vec![0.4]).unwrap();
    let (out, cache) = net.forward_batch(inputs.view());
    let og = Array2::zeros((1, 2));
    let (grads, ig) = net.backward_batch(&cache, og.view());
    for (i, w) in grads.weights.iter().enumerate() {
        eprintln!("dw{} shape {:?} strides {:?} slice? {}", i, w.shape(), w.strides(), w.as_slice().is_some());
    }
    eprintln!("out {:?} ig {:?}", out.strides(), ig.strides());
}
