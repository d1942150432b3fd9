//! Factored action distribution: a categorical over primitives times
//! independent Bernoulli bits over UEs.

use rand::Rng;

use crate::action::{Action, Primitive};
use crate::error::{Error, Result};

/// Policy network output split into its two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHeads {
    pub primitive_logits: [f64; Primitive::COUNT],
    pub mask_logits: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn log_softmax(logits: &[f64; Primitive::COUNT]) -> [f64; Primitive::COUNT] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.map(|z| z - lse)
}

impl PolicyHeads {
    /// Splits a raw output row of length `5 + N`.
    pub fn from_output(output: &[f64], n_ues: usize) -> Result<Self> {
        if output.len() != Primitive::COUNT + n_ues {
            return Err(Error::Dimension {
                context: "policy output",
                expected: Primitive::COUNT + n_ues,
                found: output.len(),
            });
        }
        if output.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        let mut primitive_logits = [0.0; Primitive::COUNT];
        primitive_logits.copy_from_slice(&output[..Primitive::COUNT]);
        Ok(PolicyHeads {
            primitive_logits,
            mask_logits: output[Primitive::COUNT..].to_vec(),
        })
    }

    pub fn n_ues(&self) -> usize {
        self.mask_logits.len()
    }

    pub fn primitive_probs(&self) -> [f64; Primitive::COUNT] {
        log_softmax(&self.primitive_logits).map(f64::exp)
    }

    pub fn mask_probs(&self) -> Vec<f64> {
        self.mask_logits.iter().map(|&m| sigmoid(m)).collect()
    }

    /// Draws a primitive and a mask. A NoOp draw clears the mask.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let probs = self.primitive_probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut primitive = Primitive::NoOp;
        for p in Primitive::ALL {
            acc += probs[p.index()];
            if u < acc {
                primitive = p;
                break;
            }
        }
        let mask = self.mask_logits.iter().map(|&m| rng.random::<f64>() < sigmoid(m)).collect();
        Action::new(primitive, mask)
    }

    /// Mode of each factor: argmax primitive, bits with probability above 1/2.
    pub fn greedy(&self) -> Action {
        let best = Primitive::ALL
            .into_iter()
            .max_by(|a, b| {
                self.primitive_logits[a.index()]
                    .total_cmp(&self.primitive_logits[b.index()])
                    // ties go to the lower index
                    .then(b.index().cmp(&a.index()))
            })
            .expect("nonempty");
        Action::new(best, self.mask_logits.iter().map(|&m| m > 0.0).collect())
    }

    /// `log p(u) + sum_i log p(b_i)`.
    pub fn log_prob(&self, action: &Action) -> f64 {
        let lp = log_softmax(&self.primitive_logits)[action.primitive().index()];
        lp + self
            .mask_logits
            .iter()
            .zip(action.mask())
            .map(|(&m, &b)| log_sigmoid(if b { m } else { -m }))
            .sum::<f64>()
    }

    /// Gradient of [`PolicyHeads::log_prob`] with respect to the `5 + N` logits.
    pub fn log_prob_grad(&self, action: &Action) -> Vec<f64> {
        let probs = self.primitive_probs();
        let u = action.primitive().index();
        let mut g: Vec<f64> = (0..Primitive::COUNT)
            .map(|k| f64::from(u8::from(k == u)) - probs[k])
            .collect();
        g.extend(
            self.mask_logits
                .iter()
                .zip(action.mask())
                .map(|(&m, &b)| f64::from(u8::from(b)) - sigmoid(m)),
        );
        g
    }

    /// Sum of the categorical and Bernoulli entropies.
    pub fn entropy(&self) -> f64 {
        let logp = log_softmax(&self.primitive_logits);
        let cat: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
        let bern: f64 = self
            .mask_logits
            .iter()
            .map(|&m| {
                let p = sigmoid(m);
                -(p * log_sigmoid(m) + (1.0 - p) * log_sigmoid(-m))
            })
            .sum();
        cat + bern
    }

    pub fn entropy_grad(&self) -> Vec<f64> {
        let logp = log_softmax(&self.primitive_logits);
        let h: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
        let mut g: Vec<f64> = logp.iter().map(|l| -l.exp() * (l + h)).collect();
        g.extend(self.mask_logits.iter().map(|&m| {
            let p = sigmoid(m);
            -m * p * (1.0 - p)
        }));
        g
    }
}
