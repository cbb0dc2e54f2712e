//! Central finite-difference verification of analytic gradients.
//!
//! Each coordinate `θ_i` is compared as
//! `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)` with
//! `g_n = (f(θ + ε e_i) − f(θ − ε e_i)) / 2ε`.
//!
//! A coordinate is excluded when either perturbation changes the loss's
//! kink pattern (a ReLU input, pooling winner or hinge crossing its
//! switch point), because the loss is not differentiable between the two
//! probe points. A ReLU input sitting exactly at zero is therefore always
//! excluded.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::ParamSet;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("epsilon {0} outside [1e-7, 1e-3]")]
    Epsilon(f64),
    #[error("loss is not finite ({0})")]
    NonFinite(f64),
    #[error("analytic gradient has a different layout than the parameters")]
    Layout,
    #[error("loss evaluation failed: {0}")]
    Loss(String),
}

/// Loss value together with the discrete choices taken to compute it.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub pattern: Vec<u32>,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Self {
            loss,
            pattern: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Step size. Smaller steps lose tiny gradients to cancellation in
    /// `f(θ + ε) − f(θ − ε)`; larger ones pick up curvature.
    pub epsilon: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked fully.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            coords_per_tensor: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub compared: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    /// Coordinate, analytic and numeric value at the worst comparison.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn compared(&self) -> usize {
        self.tensors.iter().map(|t| t.compared).sum()
    }

    pub fn excluded(&self) -> usize {
        self.tensors.iter().map(|t| t.excluded).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn probe<P, F, E>(loss_fn: &mut F, params: &P) -> Result<Probe, GradCheckError>
where
    F: FnMut(&P) -> Result<Probe, E>,
    E: std::fmt::Display,
{
    let p = loss_fn(params).map_err(|e| GradCheckError::Loss(e.to_string()))?;
    if !p.loss.is_finite() {
        return Err(GradCheckError::NonFinite(p.loss));
    }
    Ok(p)
}

fn nudge<P: ParamSet>(params: &mut P, tensor: usize, coord: usize, delta: f64) -> f64 {
    let mut tensors = params.tensors_mut();
    let slot = &mut tensors[tensor].1[coord];
    let old = *slot;
    *slot = old + delta;
    old
}

fn restore<P: ParamSet>(params: &mut P, tensor: usize, coord: usize, value: f64) {
    params.tensors_mut()[tensor].1[coord] = value;
}

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`. `params` is restored before returning.
pub fn finite_difference_check<P, F, E>(
    params: &mut P,
    analytic: &P,
    mut loss_fn: F,
    config: GradCheckConfig,
) -> Result<GradCheckReport, GradCheckError>
where
    P: ParamSet,
    F: FnMut(&P) -> Result<Probe, E>,
    E: std::fmt::Display,
{
    let eps = config.epsilon;
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(GradCheckError::Epsilon(eps));
    }
    let layout: Vec<(&'static str, usize)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (*n, t.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    if grads.len() != layout.len() || grads.iter().zip(&layout).any(|(g, (_, n))| g.len() != *n) {
        return Err(GradCheckError::Layout);
    }

    let base = probe(&mut loss_fn, params)?;
    let mut report = GradCheckReport::default();
    for (ti, &(name, len)) in layout.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(ti as u64));
        let mut coords: Vec<usize> = if len <= config.coords_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut rng, len, config.coords_per_tensor).into_vec()
        };
        coords.sort_unstable();

        let mut check = TensorCheck {
            name,
            compared: 0,
            excluded: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for i in coords {
            let old = nudge(params, ti, i, eps);
            let plus = probe(&mut loss_fn, params);
            restore(params, ti, i, old);
            nudge(params, ti, i, -eps);
            let minus = probe(&mut loss_fn, params);
            restore(params, ti, i, old);
            let (plus, minus) = (plus?, minus?);

            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                check.excluded += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * eps);
            let err = relative_error(grads[ti][i], numeric);
            check.compared += 1;
            if err > check.max_rel_error || check.worst.is_none() {
                check.max_rel_error = check.max_rel_error.max(err);
                check.worst = Some((i, grads[ti][i], numeric));
            }
        }
        report.tensors.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl ParamSet for Flat {
        fn tensors(&self) -> Vec<(&'static str, &[f64])> {
            vec![("theta", &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
            vec![("theta", &mut self.0)]
        }
    }

    fn never(_: &Flat) -> Result<Probe, String> {
        Ok(Probe::smooth(0.0))
    }

    #[test]
    fn quadratic_is_exact() {
        let mut theta = Flat(vec![0.3, -1.7, 2.5, 0.0]);
        let grad = Flat(theta.0.iter().map(|t| 2.0 * t).collect());
        let report = finite_difference_check(
            &mut theta,
            &grad,
            |p: &Flat| Ok::<_, String>(Probe::smooth(p.0.iter().map(|t| t * t).sum())),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.compared(), 4);
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
        assert_eq!(theta.0, [0.3, -1.7, 2.5, 0.0]);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut theta = Flat(vec![1.0, 2.0]);
        let grad = Flat(vec![2.0, 5.0]);
        let report = finite_difference_check(
            &mut theta,
            &grad,
            |p: &Flat| Ok::<_, String>(Probe::smooth(p.0.iter().map(|t| t * t).sum())),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() > 0.1);
        assert_eq!(report.tensors[0].worst.unwrap().0, 1);
    }

    #[test]
    fn relu_kink_is_excluded() {
        // f = relu(θ0) + θ1², with θ0 exactly at the kink
        let mut theta = Flat(vec![0.0, 1.5]);
        let grad = Flat(vec![0.0, 3.0]);
        let f = |p: &Flat| {
            Ok::<_, String>(Probe {
                loss: p.0[0].max(0.0) + p.0[1] * p.0[1],
                pattern: vec![u32::from(p.0[0] > 0.0)],
            })
        };
        let report =
            finite_difference_check(&mut theta, &grad, f, GradCheckConfig::default()).unwrap();
        assert_eq!(report.excluded(), 1);
        assert_eq!(report.compared(), 1);
        assert!(report.max_rel_error() < 1e-9);
    }

    #[test]
    fn subsamples_large_tensors() {
        let mut theta = Flat(vec![0.5; 1000]);
        let grad = Flat(vec![1.0; 1000]);
        let f = |p: &Flat| Ok::<_, String>(Probe::smooth(p.0.iter().sum()));
        let report =
            finite_difference_check(&mut theta, &grad, f, GradCheckConfig::default()).unwrap();
        assert_eq!(report.compared(), 200);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut theta = Flat(vec![1.0]);
        let grad = Flat(vec![1.0]);
        let cfg = GradCheckConfig {
            epsilon: 1e-2,
            ..Default::default()
        };
        assert!(matches!(
            finite_difference_check(&mut theta, &grad, never, cfg),
            Err(GradCheckError::Epsilon(_))
        ));
        let nan = |_: &Flat| Ok::<_, String>(Probe::smooth(f64::NAN));
        assert!(matches!(
            finite_difference_check(&mut theta, &grad, nan, GradCheckConfig::default()),
            Err(GradCheckError::NonFinite(_))
        ));
        let short = Flat(vec![]);
        assert!(matches!(
            finite_difference_check(&mut theta, &short, never, GradCheckConfig::default()),
            Err(GradCheckError::Layout)
        ));
    }
}
