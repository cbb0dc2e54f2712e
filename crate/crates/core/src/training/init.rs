use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{EncoderParams, ModelConfig, Params};

/// `sqrt(6 / (fan_in + fan_out))`. The last two axes are `[out, in]`; any
/// leading axes form the receptive field and multiply both fans. A vector
/// uses its length for both.
pub fn glorot_bound(shape: &[usize]) -> f64 {
    assert!(
        !shape.is_empty() && shape.iter().all(|&s| s > 0),
        "glorot shape must have positive dimensions, got {shape:?}"
    );
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        _ => {
            let k = shape.len();
            let receptive: usize = shape[..k - 2].iter().product();
            (shape[k - 1] * receptive, shape[k - 2] * receptive)
        }
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> ArrayD<f64> {
    let bound = glorot_bound(shape);
    let dist = Uniform::new_inclusive(-bound, bound);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample(dist))
}

/// Seeded Glorot-uniform tensor.
pub fn glorot_init(shape: &[usize], seed: u64) -> ArrayD<f64> {
    glorot_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    glorot_uniform(&[rows, cols], rng)
        .into_dimensionality()
        .expect("two axes")
}

/// Fresh parameters: Glorot weights and type vectors, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, w) = (config.dim, config.width);
    let conv_filter: Array3<f64> = glorot_uniform(&[w, d, d], &mut rng)
        .into_dimensionality()
        .expect("three axes");
    let hidden_weight = matrix(d, 2 * d, &mut rng);
    let output_weight = matrix(d, d, &mut rng);
    let types = matrix(config.num_types, d, &mut rng);
    let mut params = Params {
        encoder: EncoderParams {
            conv_filter,
            conv_bias: Array1::zeros(d),
            hidden_weight,
            hidden_bias: Array1::zeros(d),
            output_weight,
            output_bias: Array1::zeros(d),
        },
        types,
        mention_bilinear: None,
        structure_bilinear: None,
    };
    let template = Params::zeros(config);
    if template.mention_bilinear.is_some() {
        params.mention_bilinear = Some(matrix(d, d, &mut rng));
    }
    if template.structure_bilinear.is_some() {
        params.structure_bilinear = Some(matrix(d, d, &mut rng));
    }
    params
}
