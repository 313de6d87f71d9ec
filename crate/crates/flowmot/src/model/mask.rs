//! Blockwise-causal attention mask.
//!
//! The joint sequence splits into three ordered blocks: observation
//! tokens (images, instruction, depth queries), the single state token,
//! and the action chunk. Tokens attend bidirectionally within their own
//! block and causally to every preceding block, never to a later one.

use crate::error::{Error, Result};
use crate::tensor::BoolMat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMaskSpec {
    pub obs_len: usize,
    pub state_len: usize,
    pub action_len: usize,
}

impl BlockMaskSpec {
    pub fn new(obs_len: usize, state_len: usize, action_len: usize) -> Self {
        BlockMaskSpec { obs_len, state_len, action_len }
    }

    pub fn total(&self) -> usize {
        self.obs_len + self.state_len + self.action_len
    }

    /// Non-empty blocks in order, as (start_row, len). The allowed key
    /// range for a query in a block is the prefix `0..start+len`.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for len in [self.obs_len, self.state_len, self.action_len] {
            if len > 0 {
                out.push((start, len));
            }
            start += len;
        }
        out
    }

    /// Block index (0 = observation, 1 = state, 2 = action) of a token.
    pub fn block_of(&self, index: usize) -> Result<usize> {
        if index < self.obs_len {
            Ok(0)
        } else if index < self.obs_len + self.state_len {
            Ok(1)
        } else if index < self.total() {
            Ok(2)
        } else {
            Err(Error::Contract(format!(
                "token index {} out of range for sequence of {}",
                index,
                self.total()
            )))
        }
    }
}

/// Which per-layer parameter set processes a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pathway {
    Observation,
    ActionExpert,
}

/// Default routing: observation and state tokens go through the
/// observation pathway, action tokens through the action expert.
pub fn route_pathway(token_index: usize, spec: &BlockMaskSpec) -> Result<Pathway> {
    route_pathway_with(token_index, spec, false)
}

/// Routing with the state-token switch exposed.
pub fn route_pathway_with(
    token_index: usize,
    spec: &BlockMaskSpec,
    state_uses_action_pathway: bool,
) -> Result<Pathway> {
    match spec.block_of(token_index)? {
        0 => Ok(Pathway::Observation),
        1 => {
            if state_uses_action_pathway {
                Ok(Pathway::ActionExpert)
            } else {
                Ok(Pathway::Observation)
            }
        }
        _ => Ok(Pathway::ActionExpert),
    }
}

/// Build the L x L boolean mask: entry (q, k) is allowed iff k's block
/// precedes or equals q's block. Built by filling the rectangular region
/// each query block is allowed to see.
pub fn build_block_mask(spec: &BlockMaskSpec) -> Result<BoolMat> {
    let total = spec.total();
    if total == 0 {
        return Err(Error::Contract("block mask: all block lengths are zero".into()));
    }
    let mut data = vec![false; total * total];
    for (start, len) in spec.blocks() {
        let allowed = start + len;
        for q in start..start + len {
            data[q * total..q * total + allowed].iter_mut().for_each(|b| *b = true);
        }
    }
    BoolMat::new(total, total, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent enumeration of the two attention rules: same block is
    /// bidirectional, preceding blocks are visible, later blocks are not.
    fn brute_force_mask(spec: &BlockMaskSpec) -> BoolMat {
        let total = spec.total();
        let mut data = vec![false; total * total];
        for q in 0..total {
            for k in 0..total {
                let bq = spec.block_of(q).unwrap();
                let bk = spec.block_of(k).unwrap();
                data[q * total + k] = bk == bq || bk < bq;
            }
        }
        BoolMat::new(total, total, data).unwrap()
    }

    #[test]
    fn example_2_1_2() {
        let m = build_block_mask(&BlockMaskSpec::new(2, 1, 2)).unwrap();
        let rows: Vec<String> = (0..5)
            .map(|q| (0..5).map(|k| if m.get(q, k) { '1' } else { '0' }).collect())
            .collect();
        assert_eq!(rows, vec!["11000", "11000", "11100", "11111", "11111"]);
    }

    #[test]
    fn single_block_is_fully_bidirectional() {
        for k in 1..5 {
            let m = build_block_mask(&BlockMaskSpec::new(0, 0, k)).unwrap();
            assert!(m.as_slice().iter().all(|&b| b));
        }
    }

    #[test]
    fn one_token_per_block_is_lower_triangular() {
        let m = build_block_mask(&BlockMaskSpec::new(1, 1, 1)).unwrap();
        for q in 0..3 {
            for k in 0..3 {
                assert_eq!(m.get(q, k), k <= q);
            }
        }
    }

    #[test]
    fn empty_spec_is_contract_error() {
        assert!(matches!(
            build_block_mask(&BlockMaskSpec::new(0, 0, 0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn matches_brute_force_for_all_small_specs() {
        for obs in 0..=8 {
            for t in 0..=8 {
                let spec = BlockMaskSpec::new(obs, 1, t);
                let built = build_block_mask(&spec).unwrap();
                assert_eq!(built, brute_force_mask(&spec), "spec ({obs},1,{t})");
            }
        }
    }

    #[test]
    fn routing_examples() {
        let spec = BlockMaskSpec::new(5, 1, 3);
        assert_eq!(route_pathway(0, &spec).unwrap(), Pathway::Observation);
        assert_eq!(route_pathway(5, &spec).unwrap(), Pathway::Observation);
        assert_eq!(route_pathway(6, &spec).unwrap(), Pathway::ActionExpert);
        assert!(route_pathway(9, &spec).is_err());
        assert_eq!(
            route_pathway_with(5, &spec, true).unwrap(),
            Pathway::ActionExpert
        );
    }
}
