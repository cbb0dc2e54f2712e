//! Typing and structure losses with hand-derived gradients.
//!
//! For a member vector `x` scored against type rows `y_t`:
//!
//! * gold / ancestor types add `-score(x ∈ y_t)`,
//! * every other type adds `penalty_non_membership(x, y_t)`.
//!
//! With `s = xᵀy` (dot) or `s = xᵀAy` (bilinear) the two terms are
//! `softplus(-s)` and `softplus(s)`, with `dL/ds = σ(s) - 1` and `σ(s)`.
//! For order scores, with `v = max(0, y - x)` and `E = ‖v‖²`, the positive
//! term is `E` (`dE/dy = 2v`, `dE/dx = -2v`) and the negative term is the
//! hinge `max(0, α - E)`, whose gradient is zero once `E >= α`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::TrainError;
use crate::hierarchy::{TypeId, TypeSet};
use crate::model::{
    sigmoid, softplus, DropoutMasks, EncoderTrace, ModelConfig, ModelError, Params, ScoreKind,
};

type Result<T, E = TrainError> = std::result::Result<T, E>;

/// One mention in a typing batch.
#[derive(Debug, Clone, Copy)]
pub struct TypingInput<'a> {
    pub words: ArrayView2<'a, f64>,
    pub span: (usize, usize),
    pub gold: &'a TypeSet,
    pub dropout: Option<&'a DropoutMasks>,
}

/// One `(type, ancestors)` pair in a structure batch.
#[derive(Debug, Clone, Copy)]
pub struct StructureInput<'a> {
    pub child: TypeId,
    pub ancestors: &'a [TypeId],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub typing: f64,
    pub structure: f64,
    pub total: f64,
}

/// `typing + λ · structure`.
pub fn combined_loss(typing: f64, structure: f64, structure_weight: f64) -> f64 {
    typing + structure_weight * structure
}

/// Gradient sinks for one call of [`membership_terms`].
struct Sinks<'g> {
    grad_x: &'g mut Array1<f64>,
    grad_types: ArrayViewMut2<'g, f64>,
    grad_bilinear: Option<&'g mut Array2<f64>>,
}

/// Sums the loss terms of `x` against every row of `types` except `skip`,
/// scaled by `scale`. Gradients, scaled by `grad_scale`, are accumulated
/// when `sinks` is given.
#[allow(clippy::too_many_arguments)]
fn membership_terms(
    kind: ScoreKind,
    x: ArrayView1<f64>,
    types: ArrayView2<f64>,
    bilinear: Option<ArrayView2<f64>>,
    is_positive: impl Fn(usize) -> bool,
    skip: Option<usize>,
    scale: f64,
    grad_scale: f64,
    mut sinks: Option<Sinks<'_>>,
    mut pattern: Option<&mut Vec<u32>>,
) -> Result<f64> {
    let mut total = 0.0;
    match kind {
        ScoreKind::Dot | ScoreKind::Bilinear => {
            let projected = match kind {
                ScoreKind::Bilinear => {
                    let a = bilinear.ok_or(ModelError::MissingBilinear)?;
                    a.t().dot(&x)
                }
                _ => x.to_owned(),
            };
            // u = Σ_t dL/ds_t · y_t
            let mut u = Array1::<f64>::zeros(x.len());
            for (t, y) in types.outer_iter().enumerate() {
                if Some(t) == skip {
                    continue;
                }
                let s = projected.dot(&y);
                let (value, ds) = if is_positive(t) {
                    (softplus(-s), sigmoid(s) - 1.0)
                } else {
                    (softplus(s), sigmoid(s))
                };
                total += value;
                if let Some(sinks) = sinks.as_mut() {
                    let g = grad_scale * ds;
                    sinks.grad_types.row_mut(t).scaled_add(g, &projected);
                    u.scaled_add(g, &y);
                }
            }
            if let Some(sinks) = sinks {
                match kind {
                    ScoreKind::Bilinear => {
                        let a = bilinear.expect("checked above");
                        *sinks.grad_x += &a.dot(&u);
                        if let Some(ga) = sinks.grad_bilinear {
                            for (mut row, &xi) in ga.rows_mut().into_iter().zip(x) {
                                row.scaled_add(xi, &u);
                            }
                        }
                    }
                    _ => *sinks.grad_x += &u,
                }
            }
        }
        ScoreKind::Order { margin } => {
            let mut violation = Array1::<f64>::zeros(x.len());
            for (t, y) in types.outer_iter().enumerate() {
                if Some(t) == skip {
                    continue;
                }
                violation.zip_mut_with(&(&y - &x), |v, &d| *v = d.max(0.0));
                let energy = violation.dot(&violation);
                // sign of dL/dE: +1 for members, -1 inside the hinge, 0 outside
                let sign = if is_positive(t) {
                    total += energy;
                    1.0
                } else {
                    let active = energy < margin;
                    if let Some(p) = pattern.as_deref_mut() {
                        p.push(u32::from(active));
                    }
                    if active {
                        total += margin - energy;
                        -1.0
                    } else {
                        0.0
                    }
                };
                if sign != 0.0 {
                    if let Some(sinks) = sinks.as_mut() {
                        let g = 2.0 * grad_scale * sign;
                        sinks.grad_types.row_mut(t).scaled_add(g, &violation);
                        sinks.grad_x.scaled_add(-g, &violation);
                    }
                }
            }
        }
    }
    Ok(total * scale)
}

/// A minibatch objective: typing terms, optional structure terms and the
/// weight combining them.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a, 'b> {
    pub config: &'a ModelConfig,
    pub typing: &'a [TypingInput<'b>],
    pub structure: &'a [StructureInput<'b>],
    pub structure_weight: f64,
}

impl Objective<'_, '_> {
    fn uses_structure(&self) -> bool {
        self.structure_weight > 0.0
            && self.config.structure_kind.is_some()
            && !self.structure.is_empty()
    }

    fn run(
        &self,
        params: &Params,
        mut grads: Option<&mut Params>,
        mut pattern: Option<&mut Vec<u32>>,
    ) -> Result<LossBreakdown> {
        let config = self.config;
        let mut typing = 0.0;
        if !self.typing.is_empty() {
            let scale = 1.0 / self.typing.len() as f64;
            let mention_bilinear = params.mention_bilinear.as_ref().map(|a| a.view());
            for input in self.typing {
                if input.gold.is_empty() {
                    return Err(TrainError::EmptyGold);
                }
                if let Some(t) = input.gold.iter().find(|t| t.0 >= config.num_types) {
                    return Err(TrainError::Shape(format!(
                        "gold type {t} outside the type table"
                    )));
                }
                let trace = EncoderTrace::forward(
                    &params.encoder,
                    input.words,
                    input.span,
                    config.mode,
                    input.dropout,
                )?;
                if let Some(p) = pattern.as_deref_mut() {
                    trace.kink_pattern(p);
                }
                let x = trace.output.view();
                let positive = |t: usize| input.gold.contains(&TypeId(t));
                match grads.as_deref_mut() {
                    Some(g) => {
                        let mut grad_x = Array1::zeros(config.dim);
                        let sinks = Sinks {
                            grad_x: &mut grad_x,
                            grad_types: g.types.view_mut(),
                            grad_bilinear: g.mention_bilinear.as_mut(),
                        };
                        typing += membership_terms(
                            config.mention_kind,
                            x,
                            params.types.view(),
                            mention_bilinear,
                            positive,
                            None,
                            scale,
                            scale,
                            Some(sinks),
                            pattern.as_deref_mut(),
                        )?;
                        trace.backward(&params.encoder, grad_x.view(), &mut g.encoder);
                    }
                    None => {
                        typing += membership_terms(
                            config.mention_kind,
                            x,
                            params.types.view(),
                            mention_bilinear,
                            positive,
                            None,
                            scale,
                            scale,
                            None,
                            pattern.as_deref_mut(),
                        )?;
                    }
                }
            }
        }

        let mut structure = 0.0;
        if self.uses_structure() {
            let kind = config.structure_kind.expect("checked by uses_structure");
            let lambda = self.structure_weight;
            let scale = 1.0 / self.structure.len() as f64;
            let bilinear = params.structure_matrix().map(|a| a.view());
            for pair in self.structure {
                if pair.ancestors.is_empty() {
                    return Err(TrainError::EmptyAncestors(pair.child));
                }
                let t = pair.child.0;
                if t >= config.num_types {
                    return Err(TrainError::Shape(format!(
                        "type {} outside the type table",
                        pair.child
                    )));
                }
                let x = params.types.row(t);
                let positive = |u: usize| pair.ancestors.binary_search(&TypeId(u)).is_ok();
                match grads.as_deref_mut() {
                    Some(g) => {
                        let mut grad_x = Array1::zeros(config.dim);
                        let grad_bilinear = if config.shares_bilinear() {
                            g.mention_bilinear.as_mut()
                        } else {
                            g.structure_bilinear.as_mut()
                        };
                        let sinks = Sinks {
                            grad_x: &mut grad_x,
                            grad_types: g.types.view_mut(),
                            grad_bilinear,
                        };
                        structure += membership_terms(
                            kind,
                            x,
                            params.types.view(),
                            bilinear,
                            positive,
                            Some(t),
                            scale,
                            scale * lambda,
                            Some(sinks),
                            pattern.as_deref_mut(),
                        )?;
                        g.types.index_axis_mut(Axis(0), t).scaled_add(1.0, &grad_x);
                    }
                    None => {
                        structure += membership_terms(
                            kind,
                            x,
                            params.types.view(),
                            bilinear,
                            positive,
                            Some(t),
                            scale,
                            scale,
                            None,
                            pattern.as_deref_mut(),
                        )?;
                    }
                }
            }
        }

        Ok(LossBreakdown {
            typing,
            structure,
            total: combined_loss(
                typing,
                structure,
                if self.uses_structure() {
                    self.structure_weight
                } else {
                    0.0
                },
            ),
        })
    }

    pub fn loss(&self, params: &Params) -> Result<LossBreakdown> {
        self.run(params, None, None)
    }

    /// Loss and analytic gradient of the combined objective.
    pub fn loss_and_grad(&self, params: &Params) -> Result<(LossBreakdown, Params)> {
        let mut grads = params.zeros_like();
        let loss = self.run(params, Some(&mut grads), None)?;
        Ok((loss, grads))
    }

    /// Combined loss plus the discrete choices (ReLU states, pooling
    /// winners, hinge activity) taken to compute it.
    pub fn loss_with_pattern(&self, params: &Params) -> Result<(f64, Vec<u32>)> {
        let mut pattern = Vec::new();
        let loss = self.run(params, None, Some(&mut pattern))?;
        Ok((loss.total, pattern))
    }
}

/// Mean over the batch of the mention typing loss.
pub fn typing_loss(
    params: &Params,
    config: &ModelConfig,
    batch: &[TypingInput<'_>],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let objective = Objective {
        config,
        typing: batch,
        structure: &[],
        structure_weight: 0.0,
    };
    Ok(objective.loss(params)?.typing)
}

/// Mean over the batch of the hierarchy structure loss. Uses the
/// configured structure score kind.
pub fn structure_loss(
    params: &Params,
    config: &ModelConfig,
    batch: &[StructureInput<'_>],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if config.structure_kind.is_none() {
        return Err(TrainError::Config(
            "no structure score kind configured".into(),
        ));
    }
    let objective = Objective {
        config,
        typing: &[],
        structure: batch,
        structure_weight: 1.0,
    };
    Ok(objective.loss(params)?.structure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderMode;
    use crate::training::init_params;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(
        kind: ScoreKind,
        structure: Option<ScoreKind>,
        types: usize,
        dim: usize,
    ) -> ModelConfig {
        ModelConfig {
            dim,
            width: 3,
            num_types: types,
            mode: EncoderMode::CnnPlusMention,
            mention_kind: kind,
            structure_kind: structure,
            share_bilinear: false,
        }
    }

    fn gold(ids: &[usize]) -> TypeSet {
        ids.iter().map(|&i| TypeId(i)).collect()
    }

    #[test]
    fn zero_vectors_give_ln2_per_type() {
        let ln2 = std::f64::consts::LN_2;
        let cfg = config(ScoreKind::Dot, None, 5, 4);
        let params = Params::zeros(&cfg);
        let words = Array2::<f64>::ones((3, 4));
        for g in [gold(&[0]), gold(&[1, 3]), gold(&[0, 1, 2, 3, 4])] {
            let batch = [TypingInput {
                words: words.view(),
                span: (0, 1),
                gold: &g,
                dropout: None,
            }];
            let loss = typing_loss(&params, &cfg, &batch).unwrap();
            assert!((loss - 5.0 * ln2).abs() < 1e-12);
        }
    }

    #[test]
    fn gold_all_types_has_no_negative_terms() {
        let cfg = config(ScoreKind::Dot, None, 3, 2);
        let mut params = Params::zeros(&cfg);
        params.encoder.output_bias = array![1.0, -0.5];
        params.types = array![[0.3, 0.1], [-1.0, 2.0], [0.0, 0.7]];
        let words = Array2::<f64>::zeros((2, 2));
        let g = gold(&[0, 1, 2]);
        let batch = [TypingInput {
            words: words.view(),
            span: (0, 0),
            gold: &g,
            dropout: None,
        }];
        let loss = typing_loss(&params, &cfg, &batch).unwrap();
        let m = array![1.0, -0.5];
        let want: f64 = params
            .types
            .rows()
            .into_iter()
            .map(|y| softplus(-m.dot(&y)))
            .sum();
        assert!((loss - want).abs() < 1e-12);
    }

    fn scalar_term(
        kind: ScoreKind,
        x: &[f64],
        y: &[f64],
        a: Option<&Array2<f64>>,
        member: bool,
    ) -> f64 {
        if let ScoreKind::Order { margin } = kind {
            let e: f64 = x
                .iter()
                .zip(y)
                .map(|(xi, yi)| (yi - xi).max(0.0).powi(2))
                .sum();
            return if member { e } else { (margin - e).max(0.0) };
        }
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                let w = match a {
                    Some(a) => a[[i, j]],
                    None => f64::from(u8::from(i == j)),
                };
                s += x[i] * w * y[j];
            }
        }
        let p = 1.0 / (1.0 + (-s).exp());
        if member {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    #[test]
    fn tiny_instance_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [
            ScoreKind::Dot,
            ScoreKind::Bilinear,
            ScoreKind::Order { margin: 1.0 },
        ] {
            let cfg = config(ScoreKind::Dot, Some(kind), 3, 4);
            let params = init_params(&cfg, rng.gen());
            let anc = [TypeId(2)];
            let batch = [StructureInput {
                child: TypeId(0),
                ancestors: &anc,
            }];
            let got = structure_loss(&params, &cfg, &batch).unwrap();
            let x = params.types.row(0).to_vec();
            let a = params.structure_bilinear.as_ref();
            let want = scalar_term(kind, &x, &params.types.row(1).to_vec(), a, false)
                + scalar_term(kind, &x, &params.types.row(2).to_vec(), a, true);
            assert!((got - want).abs() < 1e-12, "{kind:?}: {got} vs {want}");
        }
    }

    #[test]
    fn perfect_order_embedding_has_zero_structure_loss() {
        // chain 0 -> 1 -> 2 (child to parent); children dominate parents
        let cfg = config(ScoreKind::Dot, Some(ScoreKind::Order { margin: 1.0 }), 3, 2);
        let mut params = Params::zeros(&cfg);
        params.types = array![[4.0, 4.0], [2.0, 2.0], [0.0, 0.0]];
        let (a0, a1) = ([TypeId(1), TypeId(2)], [TypeId(2)]);
        let batch = [
            StructureInput {
                child: TypeId(0),
                ancestors: &a0,
            },
            StructureInput {
                child: TypeId(1),
                ancestors: &a1,
            },
        ];
        assert_eq!(structure_loss(&params, &cfg, &batch).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_dot_pair_is_ln2() {
        let cfg = config(ScoreKind::Dot, Some(ScoreKind::Dot), 2, 2);
        let mut params = Params::zeros(&cfg);
        params.types = array![[1.0, 0.0], [0.0, 3.0]];
        let anc = [TypeId(1)];
        let batch = [StructureInput {
            child: TypeId(0),
            ancestors: &anc,
        }];
        let loss = structure_loss(&params, &cfg, &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let cfg = config(ScoreKind::Dot, Some(ScoreKind::Dot), 2, 2);
        let params = Params::zeros(&cfg);
        assert!(matches!(
            typing_loss(&params, &cfg, &[]),
            Err(TrainError::EmptyBatch)
        ));
        assert!(matches!(
            structure_loss(&params, &cfg, &[]),
            Err(TrainError::EmptyBatch)
        ));
        let words = Array2::<f64>::zeros((1, 2));
        let empty = TypeSet::new();
        let batch = [TypingInput {
            words: words.view(),
            span: (0, 0),
            gold: &empty,
            dropout: None,
        }];
        assert!(matches!(
            typing_loss(&params, &cfg, &batch),
            Err(TrainError::EmptyGold)
        ));
        let batch = [StructureInput {
            child: TypeId(0),
            ancestors: &[],
        }];
        assert!(matches!(
            structure_loss(&params, &cfg, &batch),
            Err(TrainError::EmptyAncestors(TypeId(0)))
        ));
    }

    #[test]
    fn zero_weight_network_b2_gradient() {
        // every weight is zero, so the mention vector is b2 and only the
        // output bias path carries gradient:
        // dL/db2 = Σ_gold (σ(s) − 1) y + Σ_other σ(s) y, with s = b2ᵀy
        let cfg = config(ScoreKind::Dot, None, 3, 2);
        let mut params = Params::zeros(&cfg);
        let b2 = array![0.4, -0.2];
        params.encoder.output_bias = b2.clone();
        params.types = array![[1.0, 2.0], [-0.5, 0.3], [0.2, -1.0]];
        let words = Array2::from_elem((4, 2), 0.7);
        let g = gold(&[1]);
        let batch = [TypingInput {
            words: words.view(),
            span: (1, 2),
            gold: &g,
            dropout: None,
        }];
        let objective = Objective {
            config: &cfg,
            typing: &batch,
            structure: &[],
            structure_weight: 0.0,
        };
        let (_, grads) = objective.loss_and_grad(&params).unwrap();

        let mut want = Array1::<f64>::zeros(2);
        for (t, y) in params.types.rows().into_iter().enumerate() {
            let s = b2.dot(&y);
            let ds = if t == 1 { sigmoid(s) - 1.0 } else { sigmoid(s) };
            want.scaled_add(ds, &y);
        }
        for (a, b) in grads.encoder.output_bias.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        // hidden activations are zero, so W2 gets nothing
        assert!(grads.encoder.output_weight.iter().all(|&v| v == 0.0));
        assert!(grads.encoder.hidden_weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_zero_leaves_structure_matrix_untouched() {
        let cfg = config(ScoreKind::Bilinear, Some(ScoreKind::Bilinear), 4, 3);
        let params = init_params(&cfg, 8);
        let words = Array2::from_elem((5, 3), 0.2);
        let g = gold(&[0, 2]);
        let typing = [TypingInput {
            words: words.view(),
            span: (1, 3),
            gold: &g,
            dropout: None,
        }];
        let anc = [TypeId(0)];
        let structure = [StructureInput {
            child: TypeId(2),
            ancestors: &anc,
        }];
        let objective = Objective {
            config: &cfg,
            typing: &typing,
            structure: &structure,
            structure_weight: 0.0,
        };
        let (loss, grads) = objective.loss_and_grad(&params).unwrap();
        assert_eq!(loss.structure, 0.0);
        assert!(grads.structure_bilinear.unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.mention_bilinear.unwrap().iter().any(|&v| v != 0.0));

        let objective = Objective {
            structure_weight: 0.5,
            ..objective
        };
        let (_, grads) = objective.loss_and_grad(&params).unwrap();
        assert!(grads.structure_bilinear.unwrap().iter().any(|&v| v != 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn losses_are_non_negative(seed in any::<u64>(), kind_ix in 0usize..3, lambda in 0.0f64..3.0) {
            let kinds = [ScoreKind::Dot, ScoreKind::Bilinear, ScoreKind::Order { margin: 1.0 }];
            let mention = kinds[kind_ix.min(1)];
            let structure = kinds[kind_ix];
            let cfg = config(mention, Some(structure), 5, 3);
            let params = init_params(&cfg, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let words = Array2::from_shape_simple_fn((4, 3), || rng.gen_range(-1.0..1.0));
            let g = gold(&[rng.gen_range(0..5)]);
            let typing = [TypingInput { words: words.view(), span: (0, 2), gold: &g, dropout: None }];
            let anc = [TypeId(4)];
            let structure_batch = [StructureInput { child: TypeId(rng.gen_range(0..4)), ancestors: &anc }];
            let t = typing_loss(&params, &cfg, &typing).unwrap();
            let s = structure_loss(&params, &cfg, &structure_batch).unwrap();
            prop_assert!(t >= 0.0);
            prop_assert!(s >= 0.0);
            prop_assert!(combined_loss(t, s, lambda + 0.5) >= combined_loss(t, s, lambda));
        }
    }
}
