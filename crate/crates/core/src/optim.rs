//! Parameter update rules. Plain gradient steps are the default; Adam and
//! gradient-norm clipping are opt-in through the training configuration.

use std::fmt;
use std::str::FromStr;

use crate::net::{Direction, Gradient, NetError, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!(
                "unknown optimizer `{other}` (expected sgd or adam)"
            )),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    /// Rescale gradients whose L2 norm exceeds this; 0 disables.
    max_norm: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, max_norm: f64) -> Self {
        Optimizer {
            kind,
            max_norm,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerKind::Sgd, 0.0)
    }

    pub fn step(
        &mut self,
        net: &mut Network,
        grad: &Gradient,
        lr: f64,
        direction: Direction,
    ) -> Result<(), NetError> {
        if !grad.is_finite() {
            let count = grad.as_slice().iter().filter(|v| !v.is_finite()).count();
            return Err(NetError::NonFiniteGradient {
                count,
                len: grad.len(),
            });
        }
        let mut g = grad.clone();
        if self.max_norm > 0.0 {
            let norm = g.norm();
            if norm > self.max_norm {
                g.scale(self.max_norm / norm);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => net.apply_gradient(&g, lr, direction),
            OptimizerKind::Adam => {
                if self.m.len() != g.len() {
                    self.m = vec![0.0; g.len()];
                    self.v = vec![0.0; g.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                let mut stepv = Gradient::zeros(g.len());
                for (i, gi) in g.as_slice().iter().enumerate() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * gi;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * gi * gi;
                    stepv.0[i] = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
                }
                net.apply_gradient(&stepv, lr, direction)
            }
        }
    }
}
