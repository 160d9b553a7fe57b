use serde::{Deserialize, Serialize};

use super::model::{DualHeadClassifier, Gradients, ParamGroups};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- mu v + (g + wd p)`, `p <- p - lr v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: [Vec<Vec<f64>>; 3],
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Default::default(),
        }
    }

    /// Updates the enabled parameter groups; disabled groups keep both their
    /// parameters and their momentum untouched.
    pub fn step(&mut self, net: &mut DualHeadClassifier, grads: &Gradients, lr: f64, groups: ParamGroups) {
        let enabled = [groups.backbone, groups.head, groups.aux_head];
        let params = net.grouped_params_mut();
        let grads = grads.grouped_params();
        for (gi, (ps, gs)) in params.into_iter().zip(grads).enumerate() {
            if !enabled[gi] {
                continue;
            }
            let vel = &mut self.velocity[gi];
            if vel.len() != ps.len() {
                *vel = ps.iter().map(|p| vec![0.0; p.len()]).collect();
            }
            for ((p, g), v) in ps.into_iter().zip(gs).zip(vel.iter_mut()) {
                for ((pk, &gk), vk) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                    let d = gk + self.weight_decay * *pk;
                    *vk = self.momentum * *vk + d;
                    *pk -= lr * *vk;
                }
            }
        }
    }
}
