//! Image distortions used to build replica signatures: median smoothing,
//! bit-depth reduction and gray-scale stacking.
//!
//! All operate on `[height, width, channels]` tensors in `[0, 1]` and
//! preserve shape.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distortion {
    Median { window: usize },
    BitDepth { bits: u32 },
    Grayscale,
}

impl Distortion {
    pub const DEFAULT_MEDIAN: Distortion = Distortion::Median { window: 3 };
    pub const DEFAULT_BIT_DEPTH: Distortion = Distortion::BitDepth { bits: 5 };

    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        match *self {
            Distortion::Median { window } => median_filter(image, window),
            Distortion::BitDepth { bits } => bit_depth_reduce(image, bits),
            Distortion::Grayscale => grayscale_stack(image),
        }
    }

    /// Short name used in reports.
    pub fn label(&self) -> String {
        match *self {
            Distortion::Median { window } => format!("median{window}"),
            Distortion::BitDepth { bits } => format!("bitdepth{bits}"),
            Distortion::Grayscale => "grayscale".to_string(),
        }
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Ordered, non-empty list of distortions. The order fixes the block layout
/// of every signature built from it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Distortion>", into = "Vec<Distortion>")]
pub struct DistortionSet(Vec<Distortion>);

impl DistortionSet {
    pub fn new(distortions: Vec<Distortion>) -> Result<Self> {
        if distortions.is_empty() {
            return Err(invalid("a distortion set needs at least one distortion"));
        }
        Ok(Self(distortions))
    }

    /// Median filtering followed by bit-depth reduction, with default parameters.
    pub fn two() -> Self {
        Self(vec![Distortion::DEFAULT_MEDIAN, Distortion::DEFAULT_BIT_DEPTH])
    }

    /// The two defaults plus gray-scale.
    pub fn three() -> Self {
        Self(vec![
            Distortion::DEFAULT_MEDIAN,
            Distortion::DEFAULT_BIT_DEPTH,
            Distortion::Grayscale,
        ])
    }

    pub fn single(d: Distortion) -> Self {
        Self(vec![d])
    }

    pub fn as_slice(&self) -> &[Distortion] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn label(&self) -> String {
        self.0.iter().map(Distortion::label).collect::<Vec<_>>().join("+")
    }

    /// One replica per distortion, each computed from the original image.
    pub fn apply_set(&self, image: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        self.0
            .iter()
            .enumerate()
            .map(|(index, d)| {
                d.apply(image).map_err(|e| Error::Distortion {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl TryFrom<Vec<Distortion>> for DistortionSet {
    type Error = Error;
    fn try_from(v: Vec<Distortion>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DistortionSet> for Vec<Distortion> {
    fn from(s: DistortionSet) -> Self {
        s.0
    }
}

fn image_dims(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "expected [height, width, channels]".into(),
        }),
    }
}

/// Per-channel median over a `window x window` neighbourhood with edge replication.
pub fn median_filter(image: &Tensor<f32>, window: usize) -> Result<Tensor<f32>> {
    if window < 3 || window % 2 == 0 {
        return Err(invalid(format!("median window must be odd and >= 3, got {window}")));
    }
    let (h, w, c) = image_dims(image)?;
    if h < window || w < window {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: format!("image smaller than the {window}x{window} median window"),
        });
    }
    let r = (window / 2) as isize;
    let src = image.data();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0f32; src.len()];
    let mut buf = Vec::with_capacity(window * window);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                buf.clear();
                for dy in -r..=r {
                    let yy = clampi(y as isize + dy, h);
                    for dx in -r..=r {
                        let xx = clampi(x as isize + dx, w);
                        buf.push(src[(yy * w + xx) * c + ch]);
                    }
                }
                let mid = buf.len() / 2;
                let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
                out[(y * w + x) * c + ch] = *m;
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Re-quantizes every intensity to `2^bits` evenly spaced levels.
pub fn bit_depth_reduce(image: &Tensor<f32>, bits: u32) -> Result<Tensor<f32>> {
    if !(1..=7).contains(&bits) {
        return Err(invalid(format!("bit depth must be in [1, 7], got {bits}")));
    }
    image_dims(image)?;
    let levels = ((1u32 << bits) - 1) as f32;
    Ok(image.map(|v| ((v * levels).round() / levels).clamp(0.0, 1.0)))
}

/// BT.601 luma replicated into all three channels of an RGB image.
pub fn grayscale_stack(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, _, c) = image_dims(image)?;
    if c != 3 {
        return Err(invalid(format!("gray-scale stacking needs 3 channels, got {c}")));
    }
    let mut out = Vec::with_capacity(image.len());
    for px in image.data().chunks(3) {
        let y = px
            .iter()
            .zip(LUMA_WEIGHTS)
            .map(|(&v, wt)| v as f64 * wt)
            .sum::<f64>()
            .clamp(0.0, 1.0) as f32;
        out.extend_from_slice(&[y, y, y]);
    }
    Tensor::new(image.shape().to_vec(), out)
}
