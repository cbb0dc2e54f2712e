use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{EncoderMode, EncoderParams, ModelError, Result};
use crate::corpus::{EmbeddingTable, Mention};

/// Inverted-dropout masks for one forward pass: entries are 0 or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// Over the `2*dim` concatenated encoder input.
    pub input: Array1<f64>,
    /// Over the `dim` hidden activations.
    pub hidden: Array1<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(p: f64, dim: usize, rng: &mut R) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        let keep = 1.0 / (1.0 - p);
        let mut draw = |len: usize| {
            Array1::from_iter((0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }))
        };
        let input = draw(2 * dim);
        let hidden = draw(dim);
        Self { input, hidden }
    }

    pub fn ones(dim: usize) -> Self {
        Self {
            input: Array1::ones(2 * dim),
            hidden: Array1::ones(dim),
        }
    }
}

fn check_dim(words: ArrayView2<f64>, dim: usize) -> Result<()> {
    if words.nrows() == 0 {
        return Err(ModelError::EmptySequence);
    }
    if words.ncols() != dim {
        return Err(ModelError::Dimension {
            expected: dim,
            found: words.ncols(),
        });
    }
    Ok(())
}

/// Zero-pads sequences shorter than the window symmetrically (extra zero on
/// the right when the gap is odd).
fn pad(words: ArrayView2<f64>, width: usize) -> Array2<f64> {
    let n = words.nrows();
    if n >= width {
        return words.to_owned();
    }
    let left = (width - n) / 2;
    let mut out = Array2::zeros((width, words.ncols()));
    out.slice_mut(s![left..left + n, ..]).assign(&words);
    out
}

/// Pre-activations of every window, `windows x dim`.
fn convolve(params: &EncoderParams, padded: &Array2<f64>) -> Array2<f64> {
    let width = params.width();
    let windows = padded.nrows() + 1 - width;
    let mut pre = Array2::zeros((windows, params.dim()));
    for k in 0..width {
        let inputs = padded.slice(s![k..k + windows, ..]);
        let filter = params.conv_filter.index_axis(Axis(0), k);
        pre += &inputs.dot(&filter.t());
    }
    pre += &params.conv_bias;
    pre
}

/// Per output dimension: the window holding the largest ReLU value, first
/// one on ties.
fn pool(pre: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let dim = pre.ncols();
    let mut value = Array1::zeros(dim);
    let mut argmax = vec![0; dim];
    for o in 0..dim {
        let mut best = pre[[0, o]].max(0.0);
        for j in 1..pre.nrows() {
            let v = pre[[j, o]].max(0.0);
            if v > best {
                best = v;
                argmax[o] = j;
            }
        }
        value[o] = best;
    }
    (value, argmax)
}

/// Convolution over `w`-token windows, ReLU, then max-pooling over windows.
///
/// A sequence of `n >= w` tokens yields `n - w + 1` windows, each fully
/// inside the sequence. Shorter sequences are zero-padded to one window.
pub fn cnn_forward(params: &EncoderParams, words: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_dim(words, params.dim())?;
    let padded = pad(words, params.width());
    Ok(pool(&convolve(params, &padded)).0)
}

/// Mean of the raw word vectors in the inclusive span.
pub fn surface_average(words: ArrayView2<f64>, span: (usize, usize)) -> Result<Array1<f64>> {
    let (start, end) = span;
    if start > end || end >= words.nrows() {
        return Err(ModelError::Span(start, end, words.nrows()));
    }
    Ok(words
        .slice(s![start..=end, ..])
        .mean_axis(Axis(0))
        .expect("span is non-empty"))
}

/// Intermediate values of one encoder pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub mode: EncoderMode,
    padded: Array2<f64>,
    conv_pre: Array2<f64>,
    argmax: Vec<usize>,
    /// Concatenated input after dropout.
    concat: Array1<f64>,
    input_mask: Option<Array1<f64>>,
    hidden_pre: Array1<f64>,
    /// Hidden activations after ReLU and dropout.
    hidden: Array1<f64>,
    hidden_mask: Option<Array1<f64>>,
    pub output: Array1<f64>,
}

impl EncoderTrace {
    pub fn forward(
        params: &EncoderParams,
        words: ArrayView2<f64>,
        span: (usize, usize),
        mode: EncoderMode,
        dropout: Option<&DropoutMasks>,
    ) -> Result<Self> {
        let d = params.dim();
        check_dim(words, d)?;
        let surface = surface_average(words, span)?;

        let mut concat = Array1::zeros(2 * d);
        concat.slice_mut(s![..d]).assign(&surface);
        let (padded, conv_pre, argmax) = match mode {
            EncoderMode::CnnPlusMention => {
                let padded = pad(words, params.width());
                let pre = convolve(params, &padded);
                let (pooled, argmax) = pool(&pre);
                concat.slice_mut(s![d..]).assign(&pooled);
                (padded, pre, argmax)
            }
            EncoderMode::MentionOnly => (Array2::zeros((0, d)), Array2::zeros((0, d)), Vec::new()),
        };
        if let Some(masks) = dropout {
            concat *= &masks.input;
        }

        let hidden_pre = params.hidden_weight.dot(&concat) + &params.hidden_bias;
        let mut hidden = hidden_pre.mapv(|v| v.max(0.0));
        if let Some(masks) = dropout {
            hidden *= &masks.hidden;
        }
        let output = params.output_weight.dot(&hidden) + &params.output_bias;

        Ok(Self {
            mode,
            padded,
            conv_pre,
            argmax,
            concat,
            input_mask: dropout.map(|m| m.input.clone()),
            hidden_pre,
            hidden,
            hidden_mask: dropout.map(|m| m.hidden.clone()),
            output,
        })
    }

    /// Accumulates the gradient of the loss into `grads`, given
    /// `grad_output = dL/d(output)`.
    pub fn backward(
        &self,
        params: &EncoderParams,
        grad_output: ArrayView1<f64>,
        grads: &mut EncoderParams,
    ) {
        let d = params.dim();
        grads.output_bias += &grad_output;
        add_outer(&mut grads.output_weight, grad_output, self.hidden.view());

        let mut grad_hidden = params.output_weight.t().dot(&grad_output);
        if let Some(mask) = &self.hidden_mask {
            grad_hidden *= mask;
        }
        grad_hidden.zip_mut_with(&self.hidden_pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        grads.hidden_bias += &grad_hidden;
        add_outer(
            &mut grads.hidden_weight,
            grad_hidden.view(),
            self.concat.view(),
        );

        if self.mode == EncoderMode::MentionOnly {
            return;
        }
        let mut grad_concat = params.hidden_weight.t().dot(&grad_hidden);
        if let Some(mask) = &self.input_mask {
            grad_concat *= mask;
        }
        let grad_pooled = grad_concat.slice(s![d..]);
        for (o, &j) in self.argmax.iter().enumerate() {
            let g = grad_pooled[o];
            if self.conv_pre[[j, o]] <= 0.0 || g == 0.0 {
                continue;
            }
            grads.conv_bias[o] += g;
            for k in 0..params.width() {
                let input = self.padded.row(j + k);
                let mut row = grads.conv_filter.slice_mut(s![k, o, ..]);
                row.scaled_add(g, &input);
            }
        }
    }

    /// Appends every discrete choice made in this pass (ReLU on/off, pooling
    /// winners). Two passes with equal patterns lie on the same smooth piece
    /// of the loss.
    pub fn kink_pattern(&self, out: &mut Vec<u32>) {
        out.extend(self.conv_pre.iter().map(|&z| u32::from(z > 0.0)));
        out.extend(self.argmax.iter().map(|&j| j as u32));
        out.extend(self.hidden_pre.iter().map(|&z| u32::from(z > 0.0)));
    }
}

fn add_outer(target: &mut Array2<f64>, left: ArrayView1<f64>, right: ArrayView1<f64>) {
    for (mut row, &l) in target.rows_mut().into_iter().zip(left) {
        if l != 0.0 {
            row.scaled_add(l, &right);
        }
    }
}

/// Encodes a mention: `W2 relu(W1 [surface; cnn] + b1) + b2`.
pub fn encode_mention(
    params: &EncoderParams,
    mention: &Mention,
    embeddings: &EmbeddingTable,
    mode: EncoderMode,
    dropout: Option<&DropoutMasks>,
) -> Result<Array1<f64>> {
    let words = embeddings.sequence(mention.tokens());
    Ok(EncoderTrace::forward(params, words.view(), mention.span(), mode, dropout)?.output)
}
