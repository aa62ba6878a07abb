//! Connected-component extraction vs an independent union-find oracle on
//! random small masks.

use std::collections::BTreeMap;

use ctxseg_core::Rng;
use ctxseg_data::{connected_components, Mask};

/// Union-find labeling: a different algorithm from the BFS flood fill in
/// the implementation, used as the oracle.
fn union_find_components(mask: &Mask) -> Vec<Vec<u32>> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut parent: Vec<usize> = (0..w * h).collect();

    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if mask.data[p] == 0 {
                continue;
            }
            if x + 1 < w && mask.data[p + 1] == mask.data[p] {
                let (a, b) = (find(&mut parent, p), find(&mut parent, p + 1));
                parent[a] = b;
            }
            if y + 1 < h && mask.data[p + w] == mask.data[p] {
                let (a, b) = (find(&mut parent, p), find(&mut parent, p + w));
                parent[a] = b;
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for p in 0..w * h {
        if mask.data[p] == 0 {
            continue;
        }
        let root = find(&mut parent, p);
        groups.entry(root).or_default().push(p as u32);
    }
    let mut out: Vec<Vec<u32>> = groups.into_values().collect();
    for g in out.iter_mut() {
        g.sort_unstable();
    }
    out.sort();
    out
}

#[test]
fn matches_union_find_oracle_on_200_random_masks() {
    for trial in 0..200u64 {
        let mut rng = Rng::new(0xFEED, trial);
        let w = rng.range_inclusive(1, 16) as u32;
        let h = rng.range_inclusive(1, 16) as u32;
        let classes = rng.range_inclusive(1, 4) as u8;
        let mut mask = Mask::new(w, h);
        for v in mask.data.iter_mut() {
            *v = rng.below(classes as usize + 1) as u8; // 0 = background
        }

        let mut got: Vec<Vec<u32>> =
            connected_components(&mask).into_iter().map(|r| r.pixels).collect();
        got.sort();
        let want = union_find_components(&mask);
        assert_eq!(got, want, "trial {trial}: {w}x{h} mask mismatch");
    }
}

#[test]
fn all_background_mask_has_no_regions() {
    let mask = Mask::new(8, 8);
    assert!(connected_components(&mask).is_empty());
}
