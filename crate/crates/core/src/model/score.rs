use ndarray::{ArrayView1, ArrayView2};

use super::{ModelError, Result, ScoreKind};
use crate::hierarchy::TypeId;

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln σ(z)`, stable on both tails.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Order violation energy `‖max(0, y − x)‖²`; zero iff `x ≥ y` everywhere.
pub fn order_energy(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let v = (yi - xi).max(0.0);
            v * v
        })
        .sum()
}

fn check(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.len() != y.len() {
        return Err(ModelError::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

/// `xᵀy` or `xᵀAy`.
fn compatibility(
    kind: ScoreKind,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    a: Option<ArrayView2<f64>>,
) -> Result<f64> {
    match kind {
        ScoreKind::Dot => Ok(x.dot(&y)),
        ScoreKind::Bilinear => {
            let a = a.ok_or(ModelError::MissingBilinear)?;
            if a.shape() != [x.len(), y.len()] {
                return Err(ModelError::Dimension {
                    expected: x.len(),
                    found: a.nrows(),
                });
            }
            Ok(x.dot(&a.dot(&y)))
        }
        ScoreKind::Order { .. } => unreachable!("order scores have no compatibility term"),
    }
}

/// Log-compatibility of `x` being a member of `y`. Always `<= 0`.
pub fn score_membership(
    kind: ScoreKind,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    a: Option<ArrayView2<f64>>,
) -> Result<f64> {
    check(x, y)?;
    match kind {
        ScoreKind::Order { .. } => Ok(-order_energy(x, y)),
        _ => Ok(log_sigmoid(compatibility(kind, x, y, a)?)),
    }
}

/// Non-negative loss penalty for `x` scored as a member of a type it does
/// not belong to: a margin hinge on the order energy, or `-ln(1 - σ(s))`.
pub fn penalty_non_membership(
    kind: ScoreKind,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    a: Option<ArrayView2<f64>>,
) -> Result<f64> {
    check(x, y)?;
    match kind {
        ScoreKind::Order { margin } => Ok((margin - order_energy(x, y)).max(0.0)),
        _ => Ok(softplus(compatibility(kind, x, y, a)?)),
    }
}

/// Scores `m` against every row of `types` and sorts best first. Equal
/// scores keep ascending type order.
pub fn rank_types(
    kind: ScoreKind,
    m: ArrayView1<f64>,
    types: ArrayView2<f64>,
    a: Option<ArrayView2<f64>>,
) -> Result<Vec<(TypeId, f64)>> {
    if types.ncols() != m.len() {
        return Err(ModelError::Dimension {
            expected: m.len(),
            found: types.ncols(),
        });
    }
    let projected = match (kind, a) {
        (ScoreKind::Bilinear, Some(a)) => Some(a.t().dot(&m)),
        (ScoreKind::Bilinear, None) => return Err(ModelError::MissingBilinear),
        _ => None,
    };
    let mut scored: Vec<(TypeId, f64)> = types
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, y)| {
            let s = match (kind, &projected) {
                (ScoreKind::Order { .. }, _) => -order_energy(m, y),
                (ScoreKind::Bilinear, Some(p)) => log_sigmoid(p.dot(&y)),
                _ => log_sigmoid(m.dot(&y)),
            };
            (TypeId(i), s)
        })
        .collect();
    // stable sort keeps index order among ties
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}
