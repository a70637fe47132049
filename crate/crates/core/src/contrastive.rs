//! Instance-level and cluster-level contrastive losses.
//!
//! Every loss has a plain-matrix form used for evaluation and checks, and a
//! tape form used for training. Tests hold the two in agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub tau_i: f64,
    pub tau_c: f64,
    /// Leave the anchor's similarity with itself out of the denominator.
    pub exclude_self: bool,
    /// Floor applied inside the marginal log, so `0 log 0` evaluates to 0.
    pub entropy_eps: f64,
    /// Subtract the marginal term instead of adding it. Minimizing then
    /// favours collapsed marginals.
    pub strict_entropy_sign: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            tau_i: 0.5,
            tau_c: 1.0,
            exclude_self: true,
            entropy_eps: 1e-12,
            strict_entropy_sign: false,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_i > 0.0 && self.tau_c > 0.0) {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if !(self.entropy_eps > 0.0 && self.entropy_eps <= 1e-6) {
            return Err(Error::InvalidConfig(format!(
                "entropy_eps={} must be in (0, 1e-6]",
                self.entropy_eps
            )));
        }
        Ok(())
    }
}

pub fn cos_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            op: "cos_sim",
            left: (u.len(), 1),
            right: (v.len(), 1),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroNorm { op: "cos_sim", index: 0 });
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm { op: "cos_sim", index: 1 });
    }
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((d / (nu * nv)).clamp(-1.0, 1.0))
}

/// `|cos(a, b) - (|a|^2 + |b|^2 - |a - b|^2) / (2 |a| |b|)|`.
pub fn cosine_euclid_residual(a: &[f64], b: &[f64]) -> Result<f64> {
    let s = cos_sim(a, b)?;
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s - (na2 + nb2 - d2) / (2.0 * (na2 * nb2).sqrt())).abs())
}

/// `l_sure + alpha l_ins + beta l_clu`.
pub fn total_loss(l_sure: f64, l_ins: f64, l_clu: f64, alpha: f64, beta: f64) -> f64 {
    l_sure + alpha * l_ins + beta * l_clu
}

fn unit_rows(z: &Matrix, op: &'static str) -> Result<Matrix> {
    let norms = z.row_norms();
    if let Some(index) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm { op, index });
    }
    let mut u = z.clone();
    for (r, n) in norms.iter().enumerate() {
        u.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    Ok(u)
}

fn positive_index(r: usize, n: usize) -> usize {
    if r < n {
        r + n
    } else {
        r - n
    }
}

fn denominator_mask(two_n: usize, exclude_self: bool) -> Option<Vec<bool>> {
    exclude_self.then(|| {
        (0..two_n * two_n)
            .map(|idx| idx / two_n != idx % two_n)
            .collect()
    })
}

/// NT-Xent over a 2N x 2N matrix of cosine similarities where rows r and
/// r +/- N are positives.
pub fn nt_xent_from_similarities(sim: &Matrix, tau: f64, exclude_self: bool) -> Result<f64> {
    let (m, c) = sim.shape();
    if m != c || m % 2 != 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "similarity matrix must be square with even size, got {m}x{c}"
        )));
    }
    let n = m / 2;
    let mut total = 0.0;
    for r in 0..m {
        let row = sim.row(r);
        let logits = (0..m).filter(|&j| !exclude_self || j != r).map(|j| row[j] / tau);
        let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[positive_index(r, n)] / tau;
    }
    Ok(total / m as f64)
}

fn pair_similarities(a: &Matrix, b: &Matrix, op: &'static str) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    let u = unit_rows(&a.vstack(b)?, op)?;
    u.matmul_t(&u)
}

/// Mean over the 2N anchors of `-log(exp(s_pos / tau) / sum_j exp(s_j / tau))`.
pub fn instance_loss(za: &Matrix, zb: &Matrix, cfg: &ContrastConfig) -> Result<f64> {
    let sim = pair_similarities(za, zb, "instance_loss")?;
    nt_xent_from_similarities(&sim, cfg.tau_i, cfg.exclude_self)
}

fn check_stochastic(y: &Matrix) -> Result<()> {
    for (row, r) in y.row_iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || r.iter().any(|&v| v < 0.0) {
            return Err(Error::NotStochastic { row, sum });
        }
    }
    Ok(())
}

/// `sum_k P_k log P_k` over both views, with `P` the column mass of each
/// view divided by N.
pub fn marginal_regularizer(ya: &Matrix, yb: &Matrix, eps: f64) -> Result<f64> {
    let mut r = 0.0;
    for y in [ya, yb] {
        let n = y.rows() as f64;
        for p in y.col_sums().data() {
            let p = p / n;
            r += p * p.max(eps).ln();
        }
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLoss {
    pub pair: f64,
    pub regularizer: f64,
    pub total: f64,
}

/// Contrast between the K columns of each view, plus the marginal term.
pub fn cluster_loss(ya: &Matrix, yb: &Matrix, cfg: &ContrastConfig) -> Result<ClusterLoss> {
    if ya.cols() < 2 {
        return Err(Error::InvalidArgument("cluster_loss needs K >= 2".into()));
    }
    check_stochastic(ya)?;
    check_stochastic(yb)?;
    let sim = pair_similarities(&ya.transpose(), &yb.transpose(), "cluster_loss")?;
    let pair = nt_xent_from_similarities(&sim, cfg.tau_c, cfg.exclude_self)?;
    let regularizer = marginal_regularizer(ya, yb, cfg.entropy_eps)?;
    let total = if cfg.strict_entropy_sign {
        pair - regularizer
    } else {
        pair + regularizer
    };
    Ok(ClusterLoss {
        pair,
        regularizer,
        total,
    })
}

fn nt_xent_tape(tape: &mut Tape, a: Var, b: Var, tau: f64, exclude_self: bool) -> Result<Var> {
    let z = tape.concat_rows(a, b)?;
    let m = tape.value(z)?.rows();
    let n = m / 2;
    let u = tape.normalize_rows(z)?;
    let sim = tape.matmul_t(u, u)?;
    let logits = tape.scale(sim, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(logits, denominator_mask(m, exclude_self))?;
    let pos = tape.pick_per_row(logits, (0..m).map(|r| positive_index(r, n)).collect())?;
    let per = tape.sub(lse, pos)?;
    let total = tape.sum(per)?;
    tape.scale(total, 1.0 / m as f64)
}

pub fn instance_loss_tape(tape: &mut Tape, za: Var, zb: Var, cfg: &ContrastConfig) -> Result<Var> {
    nt_xent_tape(tape, za, zb, cfg.tau_i, cfg.exclude_self)
}

pub fn cluster_loss_tape(tape: &mut Tape, ya: Var, yb: Var, cfg: &ContrastConfig) -> Result<Var> {
    let at = tape.transpose(ya)?;
    let bt = tape.transpose(yb)?;
    let pair = nt_xent_tape(tape, at, bt, cfg.tau_c, cfg.exclude_self)?;
    let mut reg: Option<Var> = None;
    for y in [ya, yb] {
        let n = tape.value(y)?.rows() as f64;
        let mass = tape.col_sums(y)?;
        let p = tape.scale(mass, 1.0 / n)?;
        let logp = tape.log_clamped(p, cfg.entropy_eps)?;
        let plogp = tape.mul(p, logp)?;
        let s = tape.sum(plogp)?;
        reg = Some(match reg {
            Some(r) => tape.add(r, s)?,
            None => s,
        });
    }
    let reg = reg.expect("two views");
    if cfg.strict_entropy_sign {
        tape.sub(pair, reg)
    } else {
        tape.add(pair, reg)
    }
}
