use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Central-difference gradient checker.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Absolute floor on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many coordinates per input, chosen by `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Combine steps `h` and `h/2` by Richardson extrapolation (error `O(h⁴)` instead of `O(h²)`).
    pub richardson: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            floor: 1e-8,
            max_coords: None,
            seed: 0,
            richardson: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates whose central step crossed a kink and used a one-sided difference.
    pub one_sided: usize,
}

impl GradCheck {
    /// Compares analytic gradients of `f` with finite differences at every (or every sampled)
    /// input coordinate.
    ///
    /// Differences are taken on the smooth piece containing the input: when a central step
    /// would cross a ReLU or clamp boundary (detected by [`Graph::kink_pattern`]), a
    /// second-order one-sided difference on the side that stays on the piece is used instead,
    /// and the step shrinks tenfold if both sides cross.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let eval = |xs: &[Tensor]| -> Result<(f64, u64)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok((g.value(out).item(), g.kink_pattern()))
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let (f0, base) = (g.value(out).item(), g.kink_pattern());

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            one_sided: 0,
        };
        let mut work: Vec<Tensor> = inputs.to_vec();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(*v);
            let n = inputs[i].numel();
            let coords: Vec<usize> = match self.max_coords {
                Some(k) if k < n => {
                    let mut c = sample(&mut rng, n, k).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..n).collect(),
            };
            for j in coords {
                let orig = inputs[i].data()[j];
                let mut at = |delta: f64| -> Result<(f64, u64)> {
                    work[i].data_mut()[j] = orig + delta;
                    let r = eval(&work);
                    work[i].data_mut()[j] = orig;
                    r
                };
                // Difference quotient of the given stencil, or None if any point leaves the piece.
                let mut stencil = |h: f64, one_sided: Option<f64>| -> Result<Option<f64>> {
                    let (taps, coef, scale): (&[f64], &[f64], f64) = match one_sided {
                        None => (&[1.0, -1.0], &[1.0, -1.0], 2.0 * h),
                        Some(sign) => (
                            &[0.0, sign, 2.0 * sign],
                            &[-3.0 * sign, 4.0 * sign, -sign],
                            2.0 * h,
                        ),
                    };
                    let mut acc = 0.0;
                    for (&t, &c) in taps.iter().zip(coef) {
                        let v = if t == 0.0 {
                            f0
                        } else {
                            let (v, p) = at(t * h)?;
                            if p != base {
                                return Ok(None);
                            }
                            v
                        };
                        acc += c * v;
                    }
                    Ok(Some(acc / scale))
                };
                let mut h = self.eps;
                let mut numeric = None;
                'shrink: for _ in 0..4 {
                    for side in [None, Some(-1.0), Some(1.0)] {
                        if let Some(d) = stencil(h, side)? {
                            let d = if self.richardson {
                                match stencil(h / 2.0, side)? {
                                    Some(d2) => (4.0 * d2 - d) / 3.0,
                                    None => d,
                                }
                            } else {
                                d
                            };
                            if side.is_some() {
                                report.one_sided += 1;
                            }
                            numeric = Some(d);
                            break 'shrink;
                        }
                    }
                    h /= 10.0;
                }
                let numeric = match numeric {
                    Some(d) => d,
                    None => {
                        let (up, _) = at(self.eps)?;
                        let (down, _) = at(-self.eps)?;
                        (up - down) / (2.0 * self.eps)
                    }
                };
                let a = analytic.data()[j];
                let denom = a.abs().max(numeric.abs()).max(self.floor);
                let rel = (a - numeric).abs() / denom;
                report.checked += 1;
                if rel >= report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some((i, j, a, numeric));
                }
            }
        }
        Ok(report)
    }
}

/// Maximum relative error between analytic and central-difference gradients of `f`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let opts = GradCheck {
        eps,
        ..Default::default()
    };
    Ok(opts.run(f, inputs)?.max_rel_error)
}
