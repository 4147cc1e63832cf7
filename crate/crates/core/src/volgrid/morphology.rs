use std::collections::VecDeque;

use super::{Grid, Mask3};

/// Default island size threshold for [`cleanup_mask`].
pub const DEFAULT_MIN_ISLAND_VOXELS: usize = 100;

const FACE_NEIGHBORS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn neighbor(grid: &Grid, ijk: [usize; 3], d: [i64; 3]) -> Option<usize> {
    let mut n = [0usize; 3];
    for a in 0..3 {
        let v = ijk[a] as i64 + d[a];
        if v < 0 || v >= grid.dims[a] as i64 {
            return None;
        }
        n[a] = v as usize;
    }
    Some(grid.index(n[0], n[1], n[2]))
}

fn all_neighbors_26() -> Vec<[i64; 3]> {
    let mut out = Vec::with_capacity(26);
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn on_boundary(grid: &Grid, ijk: [usize; 3]) -> bool {
    (0..3).any(|a| ijk[a] == 0 || ijk[a] + 1 == grid.dims[a])
}

/// Fills enclosed background cavities, then removes small islands.
///
/// Background voxels not 6-connected to the volume boundary become
/// foreground. Afterwards, 26-connected foreground components with fewer
/// than `min_island_voxels` voxels are cleared.
pub fn cleanup_mask(mask: &Mask3, min_island_voxels: usize) -> Mask3 {
    let grid = *mask.grid();
    let mut values = mask.values().to_vec();

    // background reachable from the border
    let mut reached = vec![false; values.len()];
    let mut queue = VecDeque::new();
    for (idx, &v) in values.iter().enumerate() {
        if v == 0 && on_boundary(&grid, grid.coords(idx)) {
            reached[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(idx) = queue.pop_front() {
        let ijk = grid.coords(idx);
        for d in FACE_NEIGHBORS {
            if let Some(n) = neighbor(&grid, ijk, d) {
                if values[n] == 0 && !reached[n] {
                    reached[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    for (v, &r) in values.iter_mut().zip(&reached) {
        if *v == 0 && !r {
            *v = 1;
        }
    }

    if min_island_voxels > 1 {
        let offsets = all_neighbors_26();
        let mut seen = vec![false; values.len()];
        let mut component = Vec::new();
        for start in 0..values.len() {
            if values[start] == 0 || seen[start] {
                continue;
            }
            component.clear();
            seen[start] = true;
            queue.push_back(start);
            while let Some(idx) = queue.pop_front() {
                component.push(idx);
                let ijk = grid.coords(idx);
                for &d in &offsets {
                    if let Some(n) = neighbor(&grid, ijk, d) {
                        if values[n] != 0 && !seen[n] {
                            seen[n] = true;
                            queue.push_back(n);
                        }
                    }
                }
            }
            if component.len() < min_island_voxels {
                for &idx in &component {
                    values[idx] = 0;
                }
            }
        }
    }
    Mask3::from_parts(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fills_enclosed_voxel() {
        let g = Grid::unit([7, 7, 7]).unwrap();
        let cube = |i: usize, j: usize, k: usize| (1..6).contains(&i) && (1..6).contains(&j) && (1..6).contains(&k);
        let m = Mask3::from_fn(g, |i, j, k| cube(i, j, k) && (i, j, k) != (3, 3, 3)).unwrap();
        let out = cleanup_mask(&m, 1);
        assert!(out.get(3, 3, 3));
        assert_eq!(out.count(), 125);
    }

    #[test]
    fn removes_small_island() {
        let g = Grid::unit([20, 20, 20]).unwrap();
        let m = Mask3::from_fn(g, |i, j, k| {
            // 5 x 5 x 4 = 100 voxel block and a 3 voxel rod
            (i < 5 && j < 5 && k < 4) || (i == 15 && j == 15 && (10..13).contains(&k))
        })
        .unwrap();
        assert_eq!(m.count(), 103);
        let out = cleanup_mask(&m, 10);
        assert_eq!(out.count(), 100);
        assert!(!out.get(15, 15, 11));
    }

    #[test]
    fn diagonal_contact_is_one_component() {
        let g = Grid::unit([5, 5, 5]).unwrap();
        let m = Mask3::from_fn(g, |i, j, k| (i, j, k) == (1, 1, 1) || (i, j, k) == (2, 2, 2)).unwrap();
        assert_eq!(cleanup_mask(&m, 2).count(), 2);
        assert_eq!(cleanup_mask(&m, 3).count(), 0);
    }

    #[test]
    fn cavity_touching_border_is_kept() {
        let g = Grid::unit([5, 5, 5]).unwrap();
        // a tube open at both z ends
        let m = Mask3::from_fn(g, |i, j, _| (1..4).contains(&i) && (1..4).contains(&j) && (i, j) != (2, 2)).unwrap();
        let out = cleanup_mask(&m, 1);
        assert!(!out.get(2, 2, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn idempotent(bits in proptest::collection::vec(0u8..2, 6 * 7 * 5), min in 1usize..12) {
            let g = Grid::unit([6, 7, 5]).unwrap();
            let m = Mask3::new(g, bits).unwrap();
            let once = cleanup_mask(&m, min);
            let twice = cleanup_mask(&once, min);
            prop_assert_eq!(once.grid(), m.grid());
            prop_assert_eq!(once, twice);
        }
    }
}
