//! Brute-force reference implementations shared by the integration tests.
//! Every function here is written from the defining formula with plain loops
//! and avoids the library's code paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scbct::volgrid::{Grid, Mask3, Volume3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3]) -> Volume3 {
    let g = Grid::new(dims, spacing, [0.0; 3]).unwrap();
    Volume3::new(g, (0..g.len()).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, grid: Grid, p: f64) -> Mask3 {
    Mask3::new(grid, (0..grid.len()).map(|_| rng.random_bool(p) as u8).collect()).unwrap()
}

/// Random blob: a union of a few axis-aligned boxes, never empty.
pub fn random_blob(rng: &mut ChaCha8Rng, grid: Grid) -> Mask3 {
    let d = grid.dims;
    let boxes: Vec<([usize; 3], [usize; 3])> = (0..rng.random_range(1..4))
        .map(|_| {
            let lo: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..d[a]));
            let hi: [usize; 3] = std::array::from_fn(|a| rng.random_range(lo[a]..d[a]) + 1);
            (lo, hi)
        })
        .collect();
    Mask3::from_fn(grid, |i, j, k| {
        boxes.iter().any(|(lo, hi)| {
            let p = [i, j, k];
            (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])
        })
    })
    .unwrap()
}

fn at(v: &Volume3, p: [usize; 3]) -> f64 {
    v.get(p[0], p[1], p[2]) as f64
}

/// Truncated-window neighbours of `p` (window `2h+1` per axis).
fn window(dims: [usize; 3], p: [usize; 3], h: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for k in p[2].saturating_sub(h[2])..=(p[2] + h[2]).min(dims[2] - 1) {
        for j in p[1].saturating_sub(h[1])..=(p[1] + h[1]).min(dims[1] - 1) {
            for i in p[0].saturating_sub(h[0])..=(p[0] + h[0]).min(dims[0] - 1) {
                out.push([i, j, k]);
            }
        }
    }
    out
}

fn all_voxels(dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    (0..dims[2]).flat_map(move |k| (0..dims[1]).flat_map(move |j| (0..dims[0]).map(move |i| [i, j, k])))
}

/// PL-AHE mapping evaluated voxel by voxel.
pub fn plahe(vol: &Volume3, alpha: f64, beta: f64, window_size: [usize; 3]) -> Vec<f64> {
    let q = |d: f64, a: f64| {
        if d == 0.0 {
            0.0
        } else {
            0.5 * d.signum() * (2.0 * d.abs()).powf(a)
        }
    };
    let h = window_size.map(|w| w / 2);
    all_voxels(vol.dims())
        .map(|p| {
            let u = at(vol, p);
            let nb = window(vol.dims(), p, h);
            let s: f64 = nb
                .iter()
                .map(|&v| {
                    let d = u - at(vol, v);
                    q(d, alpha) - beta * q(d, 1.0) + beta * u
                })
                .sum();
            s / nb.len() as f64
        })
        .collect()
}

/// Mean over the truncated window.
pub fn box_mean(vol: &Volume3, h: [usize; 3]) -> Vec<f64> {
    all_voxels(vol.dims())
        .map(|p| {
            let nb = window(vol.dims(), p, h);
            nb.iter().map(|&v| at(vol, v)).sum::<f64>() / nb.len() as f64
        })
        .collect()
}

fn patch(v: &Volume3, lo: [usize; 3], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * w * w);
    for k in 0..w {
        for j in 0..w {
            for i in 0..w {
                out.push(at(v, [lo[0] + i, lo[1] + j, lo[2] + k]));
            }
        }
    }
    out
}

/// Mean local index over every fully contained `w^3` window, with two-pass
/// moments. Windows with a zero denominator count 1 when the patches are
/// equal and are skipped otherwise.
pub fn windowed_index(a: &Volume3, b: &Volume3, w: usize, c1: f64, c2: f64) -> f64 {
    let d = a.dims();
    let (mut acc, mut count) = (0.0, 0usize);
    for z in 0..=d[2] - w {
        for y in 0..=d[1] - w {
            for x in 0..=d[0] - w {
                let pa = patch(a, [x, y, z], w);
                let pb = patch(b, [x, y, z], w);
                let n = pa.len() as f64;
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                let cov = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                if den == 0.0 {
                    if pa == pb {
                        acc += 1.0;
                        count += 1;
                    }
                    continue;
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / den;
                count += 1;
            }
        }
    }
    acc / count as f64
}

pub fn ssim(a: &Volume3, b: &Volume3) -> f64 {
    windowed_index(a, b, 7, 0.01f64.powi(2), 0.03f64.powi(2))
}

pub fn uqi(a: &Volume3, b: &Volume3) -> f64 {
    windowed_index(a, b, 7, 0.0, 0.0)
}

pub fn rmse(a: &Volume3, b: &Volume3) -> f64 {
    let n = a.len() as f64;
    let s: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    (s / n).sqrt()
}

pub fn cc(a: &Volume3, b: &Volume3) -> f64 {
    let x: Vec<f64> = a.values().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.values().iter().map(|&v| v as f64).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n / (sx * sy)
}

/// Intersection and the two sizes.
pub fn dice_counts(a: &Mask3, b: &Mask3) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for p in all_voxels(a.dims()) {
        let (x, y) = (a.get(p[0], p[1], p[2]), b.get(p[0], p[1], p[2]));
        if x && y {
            inter += 1;
        }
        if x {
            na += 1;
        }
        if y {
            nb += 1;
        }
    }
    (inter, na, nb)
}

/// Voxels of the mask with a 6-neighbour outside the mask or the grid.
pub fn surface(m: &Mask3) -> Vec<[usize; 3]> {
    let d = m.dims();
    all_voxels(d)
        .filter(|p| {
            if !m.get(p[0], p[1], p[2]) {
                return false;
            }
            for axis in 0..3 {
                for dir in [-1i64, 1] {
                    let c = p[axis] as i64 + dir;
                    if c < 0 || c >= d[axis] as i64 {
                        return true;
                    }
                    let mut q = *p;
                    q[axis] = c as usize;
                    if !m.get(q[0], q[1], q[2]) {
                        return true;
                    }
                }
            }
            false
        })
        .collect()
}

/// Pooled symmetric surface distances, 95th percentile with linear
/// interpolation at rank `(n - 1) * 0.95`.
pub fn hd95(a: &Mask3, b: &Mask3) -> f64 {
    let s = a.grid().spacing;
    let sa = surface(a);
    let sb = surface(b);
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3)
            .map(|x| ((p[x] as f64 - q[x] as f64) * s[x]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut all = Vec::new();
    for (from, to) in [(&sa, &sb), (&sb, &sa)] {
        for p in from.iter() {
            all.push(to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min));
        }
    }
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let r = (all.len() - 1) as f64 * 0.95;
    let lo = r.floor() as usize;
    if lo + 1 >= all.len() {
        return all[lo];
    }
    all[lo] * (1.0 - (r - lo as f64)) + all[lo + 1] * (r - lo as f64)
}

fn masked_doses(dose: &Volume3, m: &Mask3) -> Vec<f64> {
    all_voxels(m.dims())
        .filter(|p| m.get(p[0], p[1], p[2]))
        .map(|p| at(dose, p))
        .collect()
}

pub fn mean_dose(dose: &Volume3, m: &Mask3) -> f64 {
    let d = masked_doses(dose, m);
    d.iter().sum::<f64>() / d.len() as f64
}

/// Dose covering the hottest `volume_cc`: the curve through
/// `(n * voxel_cc, n-th hottest dose)` for `n = 1..N`, flat below one voxel.
pub fn d_cc(dose: &Volume3, m: &Mask3, volume_cc: f64) -> f64 {
    let mut d = masked_doses(dose, m);
    d.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let vox = m.grid().spacing.iter().product::<f64>() / 1000.0;
    let points: Vec<(f64, f64)> = (1..=d.len()).map(|n| (n as f64 * vox, d[n - 1])).collect();
    if volume_cc <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        let ((v0, d0), (v1, d1)) = (w[0], w[1]);
        if volume_cc <= v1 {
            return d0 + (d1 - d0) * (volume_cc - v0) / (v1 - v0);
        }
    }
    points[points.len() - 1].1
}

/// Bias, sample SD and the 1.96 SD limits of agreement of `x - y`.
pub fn bland_altman(pairs: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = pairs.len() as f64;
    let bias = pairs.iter().map(|(x, y)| x - y).sum::<f64>() / n;
    let ss = pairs.iter().map(|(x, y)| (x - y - bias).powi(2)).sum::<f64>();
    let sd = (ss / (n - 1.0)).sqrt();
    (bias, sd, bias - 1.96 * sd, bias + 1.96 * sd)
}

/// Column-by-column system matrix of a linear volume-to-data operator.
pub fn dense_matrix(n_in: usize, apply: impl Fn(&[f32]) -> Vec<f32>) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(n_in);
    for j in 0..n_in {
        let mut e = vec![0.0f32; n_in];
        e[j] = 1.0;
        cols.push(apply(&e).into_iter().map(|v| v as f64).collect::<Vec<_>>());
    }
    let n_out = cols[0].len();
    (0..n_out).map(|i| (0..n_in).map(|j| cols[j][i]).collect()).collect()
}

/// Ordered-subset SART on an explicit matrix. `subsets` lists row ranges.
pub fn dense_sart(
    a: &[Vec<f64>],
    b: &[f64],
    subsets: &[Vec<usize>],
    epochs: usize,
    relaxation: f64,
    eps: f64,
    nonneg: bool,
) -> Vec<f64> {
    let n = a[0].len();
    let mut x = vec![0.0; n];
    for _ in 0..epochs {
        for rows in subsets {
            let mut update = vec![0.0; n];
            let mut col_sum = vec![0.0; n];
            for &i in rows {
                let row_sum: f64 = a[i].iter().sum();
                for j in 0..n {
                    col_sum[j] += a[i][j];
                }
                if row_sum <= 0.0 {
                    continue;
                }
                let ax: f64 = (0..n).map(|j| a[i][j] * x[j]).sum();
                let r = (b[i] - ax) / (row_sum + eps);
                for j in 0..n {
                    update[j] += a[i][j] * r;
                }
            }
            for j in 0..n {
                if col_sum[j] > 0.0 {
                    x[j] += relaxation * update[j] / (col_sum[j] + eps);
                    if nonneg && x[j] < 0.0 {
                        x[j] = 0.0;
                    }
                }
            }
        }
    }
    x
}
