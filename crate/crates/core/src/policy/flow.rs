//! Rectified-flow interpolation and the velocity-regression training loss.

use super::action::ActionChunk;
use super::obs::OBS_WIDTH;
use super::prompt::Prompt;
use super::snapshot::{time_features, PolicySnapshot, TIME_FEATURES};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, Rng};
use rand::Rng as _;

/// Point on the straight path from data `a` (t = 0) to noise `eps` (t = 1)
/// and the path's constant velocity `eps - a`.
pub fn flow_interpolate(a: &ActionChunk, eps: &[f64], t: f64) -> Result<(ActionChunk, Vec<f64>)> {
    if eps.len() != a.len() {
        return Err(Error::Shape(format!("noise of length {} for chunk of length {}", eps.len(), a.len())));
    }
    let at = a.actions.iter().zip(eps).map(|(a, e)| t * e + (1.0 - t) * a).collect();
    let u = a.actions.iter().zip(eps).map(|(a, e)| e - a).collect();
    Ok((ActionChunk { horizon: a.horizon, actions: at }, u))
}

/// One supervised `(observation, chunk, prompt)` triple with the observation
/// already flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub obs: Vec<f64>,
    pub prompt: Prompt,
    pub chunk: ActionChunk,
}

/// Per-sample flow time and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNoise {
    pub t: f64,
    pub eps: Vec<f64>,
}

pub fn draw_noise(batch: &[FlowSample], rng: &mut Rng) -> Vec<FlowNoise> {
    batch
        .iter()
        .map(|s| FlowNoise {
            t: rng.random::<f64>(),
            eps: normal_vec(rng, s.chunk.len()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub loss: f64,
}

/// Mean squared velocity error over the batch, with noise drawn from `rng`.
/// Gradients are accumulated into every trainable block.
pub fn flow_matching_loss(snapshot: &mut PolicySnapshot, batch: &[FlowSample], rng: &mut Rng) -> Result<LossBreakdown> {
    let noise = draw_noise(batch, rng);
    flow_loss_with_noise(snapshot, batch, &noise, true)
}

struct Prepared {
    obs: Vec<f64>,
    targets: Vec<f64>,
    chunks_t: Vec<f64>,
    times: Vec<f64>,
}

fn prepare(snapshot: &PolicySnapshot, batch: &[FlowSample], noise: &[FlowNoise]) -> Result<Prepared> {
    if batch.is_empty() {
        return Err(Error::Validation("empty training batch".into()));
    }
    if noise.len() != batch.len() {
        return Err(Error::Shape("noise does not match batch".into()));
    }
    let cw = snapshot.config.chunk_width();
    let mut p = Prepared {
        obs: Vec::with_capacity(batch.len() * OBS_WIDTH),
        targets: Vec::with_capacity(batch.len() * cw),
        chunks_t: Vec::with_capacity(batch.len() * cw),
        times: Vec::with_capacity(batch.len()),
    };
    for (s, nz) in batch.iter().zip(noise) {
        if s.obs.len() != OBS_WIDTH {
            return Err(Error::Shape(format!("observation of width {}, expected {OBS_WIDTH}", s.obs.len())));
        }
        if s.chunk.len() != cw {
            return Err(Error::Shape(format!("chunk of length {}, expected {cw}", s.chunk.len())));
        }
        s.prompt.validate()?;
        let (at, u) = flow_interpolate(&s.chunk, &nz.eps, nz.t)?;
        p.obs.extend_from_slice(&s.obs);
        p.chunks_t.extend(at.actions);
        p.targets.extend(u);
        p.times.push(nz.t);
    }
    Ok(p)
}

/// Loss for fixed noise. With `backprop` the gradient of the returned loss is
/// accumulated into trainable blocks; without it the snapshot is untouched.
pub fn flow_loss_with_noise(
    snapshot: &mut PolicySnapshot,
    batch: &[FlowSample],
    noise: &[FlowNoise],
    backprop: bool,
) -> Result<LossBreakdown> {
    let p = prepare(snapshot, batch, noise)?;
    let n = batch.len();
    let cfg = &snapshot.config;
    let (e, f, c, cw) = (cfg.embed_dim, cfg.feature_dim, cfg.cond_dim, cfg.chunk_width());

    let feats = if backprop {
        snapshot.encoder.forward_train(&p.obs, n)?
    } else {
        snapshot.encoder.forward(&p.obs, n)?
    };
    let mut bb_in = Vec::with_capacity(n * (3 * e + f));
    for (s, row) in batch.iter().zip(feats.chunks_exact(f)) {
        snapshot.embeddings.lookup(&s.prompt, &mut bb_in);
        bb_in.extend_from_slice(row);
    }
    let cond = if backprop {
        snapshot.backbone.forward_train(&bb_in, n)?
    } else {
        snapshot.backbone.forward(&bb_in, n)?
    };
    let mut ex_in = Vec::with_capacity(n * (c + cw + TIME_FEATURES));
    for i in 0..n {
        ex_in.extend_from_slice(&cond[i * c..(i + 1) * c]);
        ex_in.extend_from_slice(&p.chunks_t[i * cw..(i + 1) * cw]);
        ex_in.extend(time_features(p.times[i]));
    }
    let v = if backprop {
        snapshot.expert.forward_train(&ex_in, n)?
    } else {
        snapshot.expert.forward(&ex_in, n)?
    };

    let diff: Vec<f64> = v.iter().zip(&p.targets).map(|(v, u)| v - u).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite flow-matching loss {loss}")));
    }
    if !backprop {
        return Ok(LossBreakdown { loss });
    }

    let dv: Vec<f64> = diff.iter().map(|d| 2.0 * d / n as f64).collect();
    let d_ex = snapshot.expert.backward(&dv)?;
    let ex_w = c + cw + TIME_FEATURES;
    let d_cond: Vec<f64> = d_ex.chunks_exact(ex_w).flat_map(|r| r[..c].iter().copied()).collect();
    let d_bb = snapshot.backbone.backward(&d_cond)?;
    let bb_w = 3 * e + f;
    let mut d_feats = Vec::with_capacity(n * f);
    for (s, row) in batch.iter().zip(d_bb.chunks_exact(bb_w)) {
        snapshot.embeddings.accumulate(&s.prompt, &row[..3 * e]);
        d_feats.extend_from_slice(&row[3 * e..]);
    }
    if snapshot.encoder.blocks().iter().any(|b| b.trainable) {
        snapshot.encoder.backward(&d_feats)?;
    }
    Ok(LossBreakdown { loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints() {
        let a = ActionChunk::from_flat(1, vec![0.3, -0.2, 0.9]).unwrap();
        let eps = [1.0, 2.0, -0.5];
        let (a0, u0) = flow_interpolate(&a, &eps, 0.0).unwrap();
        assert_eq!(a0, a);
        let (a1, u1) = flow_interpolate(&a, &eps, 1.0).unwrap();
        assert_eq!(a1.actions, eps.to_vec());
        assert_eq!(u0, u1);
        assert_eq!(u0, vec![0.7, 2.2, -1.4]);
    }

    #[test]
    fn interpolation_arithmetic() {
        let a = ActionChunk::from_flat(1, vec![0.0, 0.0, 0.0]).unwrap();
        let (at, u) = flow_interpolate(&a, &[2.0, 2.0, 2.0], 0.25).unwrap();
        assert_eq!(at.actions, vec![0.5; 3]);
        assert_eq!(u, vec![2.0; 3]);
        assert!(flow_interpolate(&a, &[1.0], 0.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn path_derivative_is_target(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            e in proptest::collection::vec(-3.0f64..3.0, 3),
            t in 0.0f64..0.99,
        ) {
            let a = ActionChunk::from_flat(1, a).unwrap();
            let h = 1e-6;
            let (x0, u) = flow_interpolate(&a, &e, t).unwrap();
            let (x1, u1) = flow_interpolate(&a, &e, t + h).unwrap();
            proptest::prop_assert_eq!(&u, &u1);
            for ((p, q), u) in x0.actions.iter().zip(&x1.actions).zip(&u) {
                proptest::prop_assert!(((q - p) / h - u).abs() < 1e-6);
            }
        }
    }
}
