use serde::{Deserialize, Serialize};

use super::synth::largest_remainder;
use super::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::ndmath::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleMode {
    Random,
    Stratified,
}

impl std::str::FromStr for DownsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "stratified" => Ok(Self::Stratified),
            other => Err(Error::InvalidArgument(format!(
                "unknown downsample mode {other:?} (random|stratified)"
            ))),
        }
    }
}

impl std::fmt::Display for DownsampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Stratified => "stratified",
        })
    }
}

/// Removes a fraction `rate` of cells, keeping `ceil((1 - rate) * N)`.
/// Kept cells stay in their original order. Stratified mode allocates the
/// budget across classes by largest remainder and keeps at least one cell
/// per class whenever the budget allows it.
pub fn downsample(x: &ExpressionMatrix, rate: f64, mode: DownsampleMode, rng: &mut Rng) -> Result<ExpressionMatrix> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("rate={rate} must be in (0, 1)")));
    }
    let n = x.n_cells();
    let n_keep = (((1.0 - rate) * n as f64) - 1e-9).ceil().max(1.0) as usize;

    let mut keep = match mode {
        DownsampleMode::Random => {
            let mut perm = rng.permutation(n);
            perm.truncate(n_keep);
            perm
        }
        DownsampleMode::Stratified => {
            let labels = x.labels.as_ref().ok_or_else(|| {
                Error::InvalidArgument("stratified downsampling needs labels".into())
            })?;
            let k = x.n_classes().unwrap_or(0);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                members[l].push(i);
            }
            let sizes: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();
            let quota = stratified_quota(&sizes, n_keep);
            let mut keep = Vec::with_capacity(n_keep);
            for (m, q) in members.iter_mut().zip(quota) {
                rng.shuffle(m);
                keep.extend_from_slice(&m[..q]);
            }
            keep
        }
    };
    keep.sort_unstable();
    Ok(x.select_cells(&keep))
}

fn stratified_quota(sizes: &[f64], n_keep: usize) -> Vec<usize> {
    let mut quota = largest_remainder(sizes, n_keep);
    let present = sizes.iter().filter(|&&s| s > 0.0).count();
    if n_keep >= present {
        for (q, &s) in quota.iter_mut().zip(sizes) {
            if s > 0.0 && *q == 0 {
                *q = 1;
            }
        }
        // Pay back any overshoot from the classes furthest above their share.
        let total: f64 = sizes.iter().sum();
        while quota.iter().sum::<usize>() > n_keep {
            let j = (0..sizes.len())
                .filter(|&j| quota[j] > 1)
                .max_by(|&a, &b| {
                    let sa = quota[a] as f64 - sizes[a] / total * n_keep as f64;
                    let sb = quota[b] as f64 - sizes[b] / total * n_keep as f64;
                    sa.total_cmp(&sb).then(b.cmp(&a))
                })
                .expect("some class has more than one slot");
            quota[j] -= 1;
        }
    }
    quota
}
