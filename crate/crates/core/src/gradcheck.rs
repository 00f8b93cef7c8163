//! Central-difference verification of tape gradients.
//!
//! For every probed coordinate `x_i` the tape gradient is compared with
//! `(f(x + ε e_i) − f(x − ε e_i)) / 2ε`. The relative error is
//! `|a − n| / max(|a|, |n|, REL_FLOOR)`.
//!
//! Probes that cross a non-smooth point are skipped: a ReLU changing sign or
//! a max reduction changing its argmax. Under [`KinkPolicy::Freeze`] the
//! probes instead reuse the base pass's ReLU masks and argmax choices, so
//! they measure the derivative of the smooth piece the tape gradient belongs
//! to.
//!
//! Magnitudes `r = sqrt(gx² + gy²)` are smooth except at the origin, but
//! their curvature grows like `1 / r`. For a probe that moves a pixel's
//! `(gx, gy)` by `m`, the central difference of `r` is off by at most
//! `m³ / (2ε r²)` while `r > 4m`, and by at most `2m / ε` otherwise. These
//! bounds, weighted by the adjoint of each magnitude output, are summed; a
//! probe whose bound exceeds `truncation_share · tol` of the numeric
//! derivative is retried with a smaller step (the bound shrinks like `ε²`)
//! and skipped if refinement does not help.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Kink, OpKind, Tape, Var};
use crate::error::{contract, Result};
use crate::exec::{self, Exec};
use crate::tensor::Tensor;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-3;

/// Share of the tolerance that magnitude truncation may use up.
pub const TRUNCATION_SHARE: f64 = 0.25;

/// What to do with probes that cross a ReLU or max-selection boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KinkPolicy {
    #[default]
    Skip,
    Freeze,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Probe at most this many coordinates per input, sampled with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Only probe coordinates whose input value satisfies `|x| > min_abs`.
    pub min_abs: Option<f64>,
    pub truncation_share: f64,
    /// Times a probe may retry with a step four times smaller when the
    /// magnitude bound is too loose.
    pub refinements: usize,
    pub kinks: KinkPolicy,
    /// Corrupt the backward rule of one op (negative control).
    pub fault: Option<OpKind>,
    pub exec: Exec,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            tol: 1e-5,
            max_coords: None,
            seed: 0,
            min_abs: None,
            truncation_share: TRUNCATION_SHARE,
            refinements: 2,
            kinks: KinkPolicy::Skip,
            fault: None,
            exec: Exec::current(),
        }
    }
}

impl GradCheckConfig {
    pub fn with_max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_min_abs(mut self, v: f64) -> Self {
        self.min_abs = Some(v);
        self
    }

    pub fn with_kinks(mut self, policy: KinkPolicy) -> Self {
        self.kinks = policy;
        self
    }

    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index, analytic and numeric gradient at the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub tol: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|i| i.max_rel_err).fold(0.0, f64::max)
    }

    /// Every input had at least one probe and all probes were within `tol`.
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|i| i.checked > 0 && i.max_rel_err < self.tol)
    }

    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|i| i.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.inputs.iter().map(|i| i.skipped).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            f,
            "{verdict} {} max_rel_err={:.3e} tol={:.0e} checked={} skipped={}",
            self.label,
            self.max_rel_err(),
            self.tol,
            self.checked(),
            self.skipped()
        )?;
        for i in &self.inputs {
            write!(f, "  {:<28} max_rel_err={:.3e} checked={} skipped={}", i.name, i.max_rel_err, i.checked, i.skipped)?;
            if let Some((idx, a, n)) = i.worst {
                write!(f, " worst@{idx} analytic={a:.6e} numeric={n:.6e}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn new_tape(cfg: &GradCheckConfig, base: Option<&[Kink]>) -> Tape<f64> {
    let t = match (cfg.kinks, base) {
        (KinkPolicy::Freeze, Some(b)) => Tape::replaying(b.to_vec()),
        _ => Tape::tracking_kinks(),
    };
    match cfg.fault {
        Some(k) => t.with_faulty_backward(k),
        None => t,
    }
}

fn same_piece(base: &[Kink], probe: &[Kink]) -> bool {
    base.len() == probe.len()
        && base.iter().zip(probe).all(|(b, p)| match (b, p) {
            (Kink::Signs(x), Kink::Signs(y)) => x == y,
            (Kink::Argmax(x), Kink::Argmax(y)) => x == y,
            (Kink::Planar { points: x, .. }, Kink::Planar { points: y, .. }) => x.len() == y.len(),
            _ => false,
        })
}

/// Upper bound on the central-difference error contributed by magnitudes.
fn planar_bound(base: &[Kink], adjoints: &[Option<Vec<f64>>], plus: &[Kink], minus: &[Kink], eps: f64) -> f64 {
    let mut total = 0.0;
    let mut j = 0;
    for ((b, p), m) in base.iter().zip(plus).zip(minus) {
        let (Kink::Planar { points: b, .. }, Kink::Planar { points: p, .. }, Kink::Planar { points: m, .. }) = (b, p, m)
        else {
            continue;
        };
        let adj = &adjoints[j];
        j += 1;
        let Some(adj) = adj else { continue };
        for (k, &(bx, by)) in b.iter().enumerate() {
            let step = |q: &[(f64, f64)]| (q[k].0 - bx).hypot(q[k].1 - by);
            let moved = step(p).max(step(m));
            if moved == 0.0 || adj[k] == 0.0 {
                continue;
            }
            let r = bx.hypot(by);
            let e = if r > 4.0 * moved { moved.powi(3) / (2.0 * eps * r * r) } else { 2.0 * moved / eps };
            total += adj[k].abs() * e;
        }
    }
    total
}

fn sample_coords(numel: usize, max: Option<usize>, seed: u64) -> Vec<usize> {
    match max {
        Some(m) if m < numel => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = BTreeSet::new();
            while picked.len() < m {
                picked.insert(rng.gen_range(0..numel));
            }
            picked.into_iter().collect()
        }
        _ => (0..numel).collect(),
    }
}

/// Checks the tape gradient of the scalar `f(inputs)` against central
/// differences, input by input.
pub fn grad_check<F>(label: &str, f: F, inputs: &[(String, Tensor<f64>)], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + Sync,
{
    let tensors: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();

    let eval = |values: &[Tensor<f64>], base: &[Kink]| -> Result<(f64, Vec<Kink>)> {
        let tape = new_tape(cfg, Some(base));
        let vars: Vec<_> = values.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
        let root = f(&tape, &vars)?;
        let v = root.value().item()?;
        Ok((v, tape.kinks()))
    };

    let tape = new_tape(cfg, None);
    let vars: Vec<_> = tensors.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let root = f(&tape, &vars)?;
    if root.shape().numel() != 1 {
        return Err(contract!("grad_check target {label} is not scalar: {}", root.shape()));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    let base_kinks = tape.kinks();
    let adjoints: Vec<Option<Vec<f64>>> = base_kinks
        .iter()
        .filter_map(|k| match k {
            Kink::Planar { node, .. } => Some(grads.by_id(*node).map(|g| g.data().to_vec())),
            _ => None,
        })
        .collect();
    drop(grads);

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, (name, t)) in inputs.iter().enumerate() {
        let coords: Vec<usize> = sample_coords(t.numel(), cfg.max_coords, cfg.seed.wrapping_add(i as u64))
            .into_iter()
            .filter(|&k| cfg.min_abs.is_none_or(|m| t.data()[k].abs() > m))
            .collect();
        let probes = exec::map_indices(cfg.exec, coords.len(), |j| -> Result<Option<(usize, f64, f64)>> {
            let k = coords[j];
            let mut shifted = tensors.clone();
            let mut eps = cfg.eps;
            for _ in 0..=cfg.refinements {
                shifted[i].data_mut()[k] = t.data()[k] + eps;
                let (fp, kp) = eval(&shifted, &base_kinks)?;
                shifted[i].data_mut()[k] = t.data()[k] - eps;
                let (fm, km) = eval(&shifted, &base_kinks)?;
                if !same_piece(&base_kinks, &kp) || !same_piece(&base_kinks, &km) {
                    return Ok(None);
                }
                let numeric = (fp - fm) / (2.0 * eps);
                let bound = planar_bound(&base_kinks, &adjoints, &kp, &km, eps);
                if bound <= cfg.truncation_share * cfg.tol * numeric.abs().max(REL_FLOOR) {
                    return Ok(Some((k, analytic[i].data()[k], numeric)));
                }
                eps /= 4.0;
            }
            Ok(None)
        });
        let mut rep = InputReport { name: name.clone(), max_rel_err: 0.0, worst: None, checked: 0, skipped: 0 };
        for p in probes {
            match p? {
                None => rep.skipped += 1,
                Some((k, a, n)) => {
                    rep.checked += 1;
                    let err = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
                    if rep.worst.is_none() || err > rep.max_rel_err || err.is_nan() {
                        rep.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                        rep.worst = Some((k, a, n));
                    }
                }
            }
        }
        reports.push(rep);
    }
    Ok(GradCheckReport { label: label.to_owned(), tol: cfg.tol, inputs: reports })
}
