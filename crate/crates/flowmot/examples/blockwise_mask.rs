//! Print the blockwise-causal attention mask for a few block layouts and
//! show which pathway each token routes through.

use flowmot::model::{build_block_mask, route_pathway, BlockMaskSpec};

fn show(spec: BlockMaskSpec) {
    let mask = build_block_mask(&spec).unwrap();
    println!(
        "\nblocks: observation={} state={} action={}  (sequence length {})",
        spec.obs_len,
        spec.state_len,
        spec.action_len,
        spec.total()
    );
    for q in 0..spec.total() {
        let row: String = (0..spec.total())
            .map(|k| if mask.get(q, k) { '1' } else { '.' })
            .collect();
        let pathway = route_pathway(q, &spec).unwrap();
        println!("  {row}   token {q:2} -> {pathway:?}");
    }
}

fn main() {
    // observation tokens see only themselves; the state token sees the
    // observation block; action tokens see everything
    show(BlockMaskSpec::new(2, 1, 2));
    show(BlockMaskSpec::new(4, 1, 3));
    // a single block degenerates to fully bidirectional attention
    show(BlockMaskSpec::new(0, 0, 4));
}
