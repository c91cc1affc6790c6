//! Tiny models with answers that can be computed independently.

use advsig::classifier::{Model, ModelConfig};
use advsig::Tensor;

/// A dense layer on `d` pixels; `w` is `d × k` row-major.
pub fn affine(w: &[f64], b: &[f64], d: usize, k: usize) -> Model {
    let params = vec![
        Tensor::new(vec![d, k], w.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::new(vec![k], b.iter().map(|&v| v as f32).collect()).unwrap(),
    ];
    Model::from_params(ModelConfig::linear([1, d, 1], k, 0), params).unwrap()
}

/// One DeepFool step on an affine model, in f64 from the stored parameters:
/// the overshot projection onto the nearest class boundary. Returns the step
/// and the source class.
pub fn deepfool_closed_form(model: &Model, image: &Tensor<f32>, overshoot: f64) -> (Vec<f64>, usize) {
    let w: Vec<f64> = model.params()[0].data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = model.params()[1].data().iter().map(|&v| v as f64).collect();
    let x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let (d, k) = (x.len(), b.len());
    let z: Vec<f64> = (0..k).map(|c| b[c] + (0..d).map(|i| x[i] * w[i * k + c]).sum::<f64>()).collect();
    let s = (0..k).max_by(|&a, &c| z[a].total_cmp(&z[c]).then(c.cmp(&a))).unwrap();

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for c in (0..k).filter(|&c| c != s) {
        let wc: Vec<f64> = (0..d).map(|i| w[i * k + c] - w[i * k + s]).collect();
        let norm2: f64 = wc.iter().map(|v| v * v).sum();
        let f = z[c] - z[s];
        let dist = f.abs() / norm2.sqrt();
        if best.as_ref().map_or(true, |(bd, _, _)| dist < *bd) {
            best = Some((dist, f.abs() / norm2, wc));
        }
    }
    let (_, scale, wl) = best.unwrap();
    (wl.iter().map(|v| (1.0 + overshoot) * scale * v).collect(), s)
}

/// Closest grid point of `[0, 1]²` to `x` where some other class beats
/// `source` by at least `margin` logits, and its L2 distance. `None` if no
/// grid point does.
pub fn grid_oracle(model: &Model, x: [f32; 2], source: usize, margin: f64, n: usize) -> Option<(f64, [f32; 2])> {
    let points: Vec<Tensor<f32>> = (0..n * n)
        .map(|p| {
            let (i, j) = (p / n, p % n);
            let step = 1.0 / (n - 1) as f32;
            Tensor::new(vec![1, 2, 1], vec![i as f32 * step, j as f32 * step]).unwrap()
        })
        .collect();
    let mut best: Option<(f64, [f32; 2])> = None;
    for chunk in points.chunks(4096) {
        let refs: Vec<&Tensor<f32>> = chunk.iter().collect();
        for (p, z) in chunk.iter().zip(model.logits_batch(&refs).unwrap()) {
            let other = (0..z.len()).filter(|&j| j != source).map(|j| z[j]).fold(f32::NEG_INFINITY, f32::max);
            let gap = other as f64 - z[source] as f64;
            let flips = if margin > 0.0 { gap >= margin } else { gap > 0.0 };
            if flips {
                let d = p.data().iter().zip(&x).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
                if best.map_or(true, |(b, _)| d < b) {
                    best = Some((d, [p.data()[0], p.data()[1]]));
                }
            }
        }
    }
    best
}
