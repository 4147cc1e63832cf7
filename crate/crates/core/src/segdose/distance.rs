use rayon::prelude::*;

use crate::volgrid::Mask3;

/// Foreground voxels with at least one 6-neighbor that is background or
/// outside the grid.
pub fn surface_voxels(mask: &Mask3) -> Mask3 {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims;
    let m = mask.values();
    let mut out = vec![0u8; m.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = grid.index(i, j, k);
                if m[idx] == 0 {
                    continue;
                }
                let border = i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == nx
                    || j + 1 == ny
                    || k + 1 == nz
                    || m[idx - 1] == 0
                    || m[idx + 1] == 0
                    || m[idx - nx] == 0
                    || m[idx + nx] == 0
                    || m[idx - nx * ny] == 0
                    || m[idx + nx * ny] == 0;
                out[idx] = border as u8;
            }
        }
    }
    Mask3::from_parts(grid, out)
}

/// Exact squared Euclidean distance in mm² from every voxel to the nearest
/// foreground voxel of `features`, honoring anisotropic spacing. Voxels are
/// `f64::INFINITY` when there are no features.
pub fn euclidean_distance_transform(features: &Mask3) -> Vec<f64> {
    let grid = *features.grid();
    let dims = grid.dims;
    let mut d: Vec<f64> = features
        .values()
        .iter()
        .map(|&v| if v == 1 { 0.0 } else { f64::INFINITY })
        .collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        let spacing = grid.spacing[axis];
        // Starting offsets of every line along `axis`.
        let starts: Vec<usize> = (0..d.len())
            .filter(|&idx| (idx / stride).is_multiple_of(n))
            .collect();
        let lines: Vec<(usize, Vec<f64>)> = starts
            .par_iter()
            .map(|&s| {
                let f: Vec<f64> = (0..n).map(|q| d[s + q * stride]).collect();
                (s, lower_envelope(&f, spacing))
            })
            .collect();
        for (s, line) in lines {
            for (q, v) in line.into_iter().enumerate() {
                d[s + q * stride] = v;
            }
        }
    }
    d
}

/// One-dimensional squared distance transform of sampled function `f` at
/// positions `q·h`, via the lower envelope of parabolas.
fn lower_envelope(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let x = |q: usize| q as f64 * h;
    let meet = |p: usize, q: usize| {
        ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)))
    };
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    v.push(sites[0]);
    z.push(f64::NEG_INFINITY);
    for &q in &sites[1..] {
        let mut s = meet(*v.last().unwrap(), q);
        while s <= *z.last().unwrap() {
            v.pop();
            z.pop();
            if v.is_empty() {
                break;
            }
            s = meet(*v.last().unwrap(), q);
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        } else {
            v.push(q);
            z.push(s);
        }
    }
    z.push(f64::INFINITY);
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < x(q) {
            k += 1;
        }
        let dx = x(q) - x(v[k]);
        out.push(dx * dx + f[v[k]]);
    }
    out
}
