use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::train::FreezeMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl Moments {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
///
/// Blocks listed in `frozen` are skipped entirely, moments included.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    moments: &mut Moments,
    t: u64,
    hyper: &AdamHyper,
    frozen: &FreezeMask,
) {
    assert!(t >= 1, "adam step index starts at 1");
    let correction1 = 1.0 - hyper.beta1.powf(t as f64);
    let correction2 = 1.0 - hyper.beta2.powf(t as f64);
    for id in params.block_ids() {
        if frozen.contains(&id) {
            continue;
        }
        let g = grads.block(id).expect("gradient block");
        let m = moments.m.block_mut(id).expect("moment block");
        for (mk, &gk) in m.iter_mut().zip(g) {
            *mk = hyper.beta1 * *mk + (1.0 - hyper.beta1) * gk;
        }
        let v = moments.v.block_mut(id).expect("moment block");
        for (vk, &gk) in v.iter_mut().zip(g) {
            *vk = hyper.beta2 * *vk + (1.0 - hyper.beta2) * gk * gk;
        }
        let m = moments.m.block(id).expect("moment block");
        let v = moments.v.block(id).expect("moment block");
        let p = params.block_mut(id).expect("parameter block");
        for ((pk, &mk), &vk) in p.iter_mut().zip(m).zip(v) {
            let m_hat = mk / correction1;
            let v_hat = vk / correction2;
            *pk -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{BlockId, GateBlock, NetSpec};

    fn setup() -> (ModelParams, ModelParams) {
        let spec = NetSpec::new(2, 2, vec![3], 2).unwrap();
        let params = crate::netcore::init_params(&spec, 1);
        let mut grads = params.zeros_like();
        for id in grads.block_ids() {
            for (k, g) in grads.block_mut(id).unwrap().iter_mut().enumerate() {
                *g = (k as f64 - 3.0) * 0.25;
            }
        }
        (params, grads)
    }

    #[test]
    fn first_step_closed_form() {
        let (mut params, grads) = setup();
        let before = params.clone();
        let hyper = AdamHyper::default();
        let mut moments = Moments::zeros_like(&params);
        adam_step(
            &mut params,
            &grads,
            &mut moments,
            1,
            &hyper,
            &FreezeMask::new(),
        );
        for id in params.block_ids() {
            for ((&p1, &p0), &g) in params
                .block(id)
                .unwrap()
                .iter()
                .zip(before.block(id).unwrap())
                .zip(grads.block(id).unwrap())
            {
                let expected = p0 - hyper.learning_rate * g / (g.abs() + hyper.epsilon);
                assert!((p1 - expected).abs() < 1e-15, "{id}: {p1} vs {expected}");
            }
        }
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let (mut params, _) = setup();
        let before = params.clone();
        let grads = params.zeros_like();
        let mut moments = Moments::zeros_like(&params);
        adam_step(
            &mut params,
            &grads,
            &mut moments,
            1,
            &AdamHyper::default(),
            &FreezeMask::new(),
        );
        assert_eq!(params, before);
    }

    #[test]
    fn frozen_block_is_bitwise_unchanged() {
        let (mut params, grads) = setup();
        let before = params.clone();
        let frozen: FreezeMask = [BlockId::lstm(1, GateBlock::Recurrent), BlockId::OutputBias]
            .into_iter()
            .collect();
        let mut moments = Moments::zeros_like(&params);
        for t in 1..=5 {
            adam_step(
                &mut params,
                &grads,
                &mut moments,
                t,
                &AdamHyper::default(),
                &frozen,
            );
        }
        for id in params.block_ids() {
            let same = params
                .block(id)
                .unwrap()
                .iter()
                .zip(before.block(id).unwrap())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert_eq!(same, frozen.contains(&id), "{id}");
        }
    }
}
