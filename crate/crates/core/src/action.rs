//! Adaptation primitives and the composite (primitive, mask) action.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five model-update operations the controller can trigger.
///
/// Discriminants follow the column order of the published parameter table
/// (FullRetrain, FeatRefine, LightAdapt, DeployCached, NoOp); per-primitive
/// arrays throughout the crate are indexed by [`Primitive::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    FullRetrain = 0,
    FeatRefine = 1,
    LightAdapt = 2,
    DeployCached = 3,
    NoOp = 4,
}

impl Primitive {
    pub const COUNT: usize = 5;

    pub const ALL: [Primitive; 5] = [
        Primitive::FullRetrain,
        Primitive::FeatRefine,
        Primitive::LightAdapt,
        Primitive::DeployCached,
        Primitive::NoOp,
    ];

    /// Heaviest to lightest by end-to-end latency.
    pub const BY_HEAVINESS: [Primitive; 5] = [
        Primitive::FullRetrain,
        Primitive::FeatRefine,
        Primitive::DeployCached,
        Primitive::LightAdapt,
        Primitive::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Rank in the heaviness order; 0 is the heaviest.
    pub fn heaviness_rank(self) -> usize {
        Self::BY_HEAVINESS
            .iter()
            .position(|p| *p == self)
            .expect("every primitive is ranked")
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::FullRetrain => "full_retrain",
            Primitive::FeatRefine => "feat_refine",
            Primitive::LightAdapt => "light_adapt",
            Primitive::DeployCached => "deploy_cached",
            Primitive::NoOp => "no_op",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown primitive `{s}`")))
    }
}

/// Composite action: which primitive to run and which UEs run it.
///
/// A `NoOp` action never schedules anyone; the constructor clears the mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    primitive: Primitive,
    mask: Vec<bool>,
}

impl Action {
    pub fn new(primitive: Primitive, mut mask: Vec<bool>) -> Self {
        if primitive == Primitive::NoOp {
            mask.iter_mut().for_each(|b| *b = false);
        }
        Action { primitive, mask }
    }

    pub fn noop(n_ues: usize) -> Self {
        Action {
            primitive: Primitive::NoOp,
            mask: vec![false; n_ues],
        }
    }

    pub fn primitive(&self) -> Primitive {
        self.primitive
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_ues(&self) -> usize {
        self.mask.len()
    }

    pub fn scheduled(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn scheduled_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noop_clears_mask() {
        let a = Action::new(Primitive::NoOp, vec![true, false, true]);
        assert!(a.is_empty());
        assert_eq!(a.n_ues(), 3);
    }

    #[test]
    fn heaviness_order_follows_end_to_end_latency() {
        use Primitive::*;
        assert_eq!(FullRetrain.heaviness_rank(), 0);
        assert!(FeatRefine.heaviness_rank() < DeployCached.heaviness_rank());
        assert!(DeployCached.heaviness_rank() < LightAdapt.heaviness_rank());
        assert_eq!(NoOp.heaviness_rank(), 4);
    }

    #[test]
    fn names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
            assert_eq!(Primitive::from_index(p.index()), Some(p));
        }
        assert!("heavy".parse::<Primitive>().is_err());
    }
}
