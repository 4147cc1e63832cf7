//! Signed power-law adaptive histogram equalization (PL-AHE) and artifact
//! extraction.
//!
//! For a voxel with gray level `u` and window neighbours `v_m` (the window is
//! centered on the voxel and truncated at the borders, `N` counts the
//! neighbours including the center), the mapping is
//!
//! ```text
//! T(u) = (1/N) * sum_m [ q(u - v_m, alpha) - beta * q(u - v_m, 1) + beta * u ]
//! q(d, a) = 1/2 * sign(d) * |2 d|^a
//! ```
//!
//! The local histogram is the exact empirical distribution of the window, so
//! the sum runs over the neighbours directly without intensity binning.
//! `alpha = 0` gives standard AHE (`q = sign/2`), `alpha = 1` makes `q` the
//! plain difference so that `T = (1 - beta) (u - mean) + beta u`: unsharp
//! masking for `beta = 0` and the identity for `beta = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::Volume3;

/// The seven `(alpha, beta)` settings used for artifact extraction, in
/// preset order (i)..(vii).
pub const COMBO_PRESETS: [(f64, f64); 7] = [
    (0.5, 1.0),
    (1.0, 0.5),
    (0.5, 0.5),
    (1.0, 0.0),
    (0.5, 0.0),
    (0.0, 1.0),
    (0.0, 0.5),
];

/// Default window: 5 x 5 x 5 voxels.
pub const DEFAULT_WINDOW: [usize; 3] = [5, 5, 5];

/// Allowed excursion outside `[0, 1]` for input gray levels.
pub const RANGE_TOLERANCE: f64 = 1e-6;

/// How the PL-AHE output is turned into an artifact field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// The transformed image itself.
    Direct,
    /// Transformed image minus the input.
    Residual,
}

impl ExtractionMode {
    /// `Direct` when `beta = 0` (output is already detail only), otherwise
    /// `Residual`.
    pub fn default_for(beta: f64) -> Self {
        if beta == 0.0 {
            ExtractionMode::Direct
        } else {
            ExtractionMode::Residual
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaheParams {
    pub alpha: f64,
    pub beta: f64,
    /// Odd window extents in voxels along x, y, z.
    pub window: [usize; 3],
    pub mode: ExtractionMode,
}

impl PlaheParams {
    pub fn new(alpha: f64, beta: f64, window: [usize; 3], mode: ExtractionMode) -> Result<Self> {
        let p = PlaheParams {
            alpha,
            beta,
            window,
            mode,
        };
        p.validate()?;
        Ok(p)
    }

    /// Preset `index` in `1..=7` with the default window and mode.
    pub fn preset(index: usize) -> Result<Self> {
        let (alpha, beta) = preset_pair(index)?;
        PlaheParams::new(
            alpha,
            beta,
            DEFAULT_WINDOW,
            ExtractionMode::default_for(beta),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "alpha and beta must lie in [0, 1], got ({}, {})",
                self.alpha, self.beta
            )));
        }
        if self.window.iter().any(|&w| w == 0 || w % 2 == 0) {
            return Err(Error::InvalidParameter(format!(
                "window extents must be odd and >= 1, got {:?}",
                self.window
            )));
        }
        Ok(())
    }
}

/// `(alpha, beta)` of preset `index` in `1..=7`.
pub fn preset_pair(index: usize) -> Result<(f64, f64)> {
    index
        .checked_sub(1)
        .and_then(|i| COMBO_PRESETS.get(i))
        .copied()
        .ok_or_else(|| Error::InvalidParameter(format!("PL-AHE preset must be 1..=7, got {index}")))
}

/// Signed power law `1/2 sign(d) |2d|^alpha`.
#[inline]
pub fn signed_power(d: f64, alpha: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        0.5 * d.signum() * (2.0 * d.abs()).powf(alpha)
    }
}

#[derive(Clone, Copy)]
enum PowerKind {
    Step,
    Sqrt,
    Linear,
    General(f64),
}

impl PowerKind {
    fn of(alpha: f64) -> Self {
        if alpha == 0.0 {
            PowerKind::Step
        } else if alpha == 0.5 {
            PowerKind::Sqrt
        } else if alpha == 1.0 {
            PowerKind::Linear
        } else {
            PowerKind::General(alpha)
        }
    }

    #[inline]
    fn eval(self, d: f64) -> f64 {
        match self {
            PowerKind::Linear => d,
            _ if d == 0.0 => 0.0,
            PowerKind::Step => 0.5 * d.signum(),
            PowerKind::Sqrt => 0.5 * d.signum() * (2.0 * d.abs()).sqrt(),
            PowerKind::General(a) => 0.5 * d.signum() * (2.0 * d.abs()).powf(a),
        }
    }
}

fn check_unit_range(vol: &Volume3) -> Result<()> {
    let (lo, hi) = vol.min_max();
    if (lo as f64) < -RANGE_TOLERANCE || (hi as f64) > 1.0 + RANGE_TOLERANCE {
        return Err(Error::OutOfRange(format!(
            "PL-AHE expects gray levels in [0, 1], found [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Applies the PL-AHE mapping to every voxel.
pub fn plahe_transform(vol: &Volume3, params: &PlaheParams) -> Result<Volume3> {
    params.validate()?;
    check_unit_range(vol)?;
    let grid = *vol.grid();
    let [nx, ny, nz] = grid.dims;
    let half: [usize; 3] = std::array::from_fn(|a| params.window[a] / 2);
    let power = PowerKind::of(params.alpha);
    let beta = params.beta;
    let src: Vec<f64> = vol.values().iter().map(|&v| v as f64).collect();

    let mut out = vec![0.0f32; grid.len()];
    out.par_chunks_mut(nx)
        .enumerate()
        .for_each(|(row, line)| {
            let j = row % ny;
            let k = row / ny;
            let (k0, k1) = (k.saturating_sub(half[2]), (k + half[2]).min(nz - 1));
            let (j0, j1) = (j.saturating_sub(half[1]), (j + half[1]).min(ny - 1));
            for (i, slot) in line.iter_mut().enumerate() {
                let (i0, i1) = (i.saturating_sub(half[0]), (i + half[0]).min(nx - 1));
                let u = src[grid.index(i, j, k)];
                let mut sum_q = 0.0;
                let mut sum_d = 0.0;
                for kk in k0..=k1 {
                    for jj in j0..=j1 {
                        let base = grid.index(0, jj, kk);
                        for &v in &src[base + i0..=base + i1] {
                            let d = u - v;
                            sum_q += power.eval(d);
                            sum_d += d;
                        }
                    }
                }
                let n = ((i1 - i0 + 1) * (j1 - j0 + 1) * (k1 - k0 + 1)) as f64;
                *slot = ((sum_q - beta * sum_d) / n + beta * u) as f32;
            }
        });
    Ok(Volume3::from_parts(grid, out))
}

/// Artifact field of a `[0, 1]`-normalized CBCT.
pub fn extract_artifact(cbct: &Volume3, params: &PlaheParams) -> Result<Volume3> {
    let t = plahe_transform(cbct, params)?;
    match params.mode {
        ExtractionMode::Direct => Ok(t),
        ExtractionMode::Residual => {
            let values = t
                .values()
                .iter()
                .zip(cbct.values())
                .map(|(&a, &b)| (a as f64 - b as f64) as f32)
                .collect();
            Volume3::new(*cbct.grid(), values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::unit(dims).unwrap();
        Volume3::new(g, (0..g.len()).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    /// Independent windowed mean with explicit neighbour loops.
    fn brute_box_mean(v: &Volume3, half: usize) -> Vec<f64> {
        let [nx, ny, nz] = v.dims();
        let mut out = Vec::new();
        for k in 0..nz as i64 {
            for j in 0..ny as i64 {
                for i in 0..nx as i64 {
                    let (mut s, mut n) = (0.0, 0.0);
                    let h = half as i64;
                    for dk in -h..=h {
                        for dj in -h..=h {
                            for di in -h..=h {
                                let (a, b, c) = (i + di, j + dj, k + dk);
                                if a >= 0 && b >= 0 && c >= 0 && a < nx as i64 && b < ny as i64 && c < nz as i64 {
                                    s += v.get(a as usize, b as usize, c as usize) as f64;
                                    n += 1.0;
                                }
                            }
                        }
                    }
                    out.push(s / n);
                }
            }
        }
        out
    }

    /// Per-voxel evaluation straight from the defining sum.
    fn naive(v: &Volume3, alpha: f64, beta: f64, half: usize) -> Vec<f64> {
        let [nx, ny, nz] = v.dims();
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let u = v.get(i, j, k) as f64;
                    let (mut acc, mut n) = (0.0, 0.0);
                    for kk in 0..nz {
                        for jj in 0..ny {
                            for ii in 0..nx {
                                if ii.abs_diff(i) <= half && jj.abs_diff(j) <= half && kk.abs_diff(k) <= half {
                                    let d = u - v.get(ii, jj, kk) as f64;
                                    acc += signed_power(d, alpha) - beta * signed_power(d, 1.0) + beta * u;
                                    n += 1.0;
                                }
                            }
                        }
                    }
                    out.push(acc / n);
                }
            }
        }
        out
    }

    fn params(alpha: f64, beta: f64) -> PlaheParams {
        PlaheParams::new(alpha, beta, DEFAULT_WINDOW, ExtractionMode::Direct).unwrap()
    }

    #[test]
    fn presets_are_the_seven_pairs() {
        assert_eq!(COMBO_PRESETS.len(), 7);
        assert_eq!(preset_pair(1).unwrap(), (0.5, 1.0));
        assert_eq!(preset_pair(7).unwrap(), (0.0, 0.5));
        assert!(preset_pair(0).is_err());
        assert!(preset_pair(8).is_err());
        assert_eq!(PlaheParams::preset(4).unwrap().mode, ExtractionMode::Direct);
        assert_eq!(PlaheParams::preset(1).unwrap().mode, ExtractionMode::Residual);
    }

    #[test]
    fn rejects_bad_params_and_range() {
        assert!(PlaheParams::new(1.5, 0.0, DEFAULT_WINDOW, ExtractionMode::Direct).is_err());
        assert!(PlaheParams::new(0.5, -0.1, DEFAULT_WINDOW, ExtractionMode::Direct).is_err());
        assert!(PlaheParams::new(0.5, 0.5, [4, 5, 5], ExtractionMode::Direct).is_err());
        let v = Volume3::filled(Grid::unit([3, 3, 3]).unwrap(), 1.5);
        assert!(matches!(
            plahe_transform(&v, &params(0.5, 0.5)),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn identity_at_alpha_one_beta_one() {
        let v = random_volume([9, 8, 7], 1);
        let t = plahe_transform(&v, &params(1.0, 1.0)).unwrap();
        for (a, b) in t.values().iter().zip(v.values()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn unsharp_at_alpha_one_beta_zero() {
        let v = random_volume([10, 9, 8], 2);
        let t = plahe_transform(&v, &params(1.0, 0.0)).unwrap();
        let mean = brute_box_mean(&v, 2);
        for n in 0..v.len() {
            let expect = v.values()[n] as f64 - mean[n];
            assert!((t.values()[n] as f64 - expect).abs() <= 1e-5);
        }
    }

    #[test]
    fn linear_in_beta_at_alpha_one() {
        let v = random_volume([8, 8, 8], 3);
        let mean = brute_box_mean(&v, 2);
        for beta in [0.0, 0.5, 1.0] {
            let t = plahe_transform(&v, &params(1.0, beta)).unwrap();
            for n in 0..v.len() {
                let u = v.values()[n] as f64;
                let expect = (1.0 - beta) * (u - mean[n]) + beta * u;
                assert!((t.values()[n] as f64 - expect).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn constant_maps_to_beta_times_constant() {
        let v = Volume3::filled(Grid::unit([6, 6, 6]).unwrap(), 0.3);
        for &(alpha, beta) in &COMBO_PRESETS {
            let t = plahe_transform(&v, &params(alpha, beta)).unwrap();
            let expect = (beta * 0.3f32 as f64) as f32;
            assert!(t.values().iter().all(|&x| (x - expect).abs() <= 1e-7));
        }
    }

    #[test]
    fn matches_naive_sum_on_random_volumes() {
        for seed in 0..4 {
            let v = random_volume([8, 8, 8], 10 + seed);
            for &(alpha, beta) in &COMBO_PRESETS {
                let t = plahe_transform(&v, &params(alpha, beta)).unwrap();
                let n = naive(&v, alpha, beta, 2);
                for (a, b) in t.values().iter().zip(&n) {
                    assert!((*a as f64 - b).abs() <= 1e-6, "alpha {alpha} beta {beta}");
                }
            }
        }
    }

    #[test]
    fn residual_identity_is_zero() {
        let v = random_volume([6, 6, 6], 4);
        let p = PlaheParams::new(1.0, 1.0, DEFAULT_WINDOW, ExtractionMode::Residual).unwrap();
        let a = extract_artifact(&v, &p).unwrap();
        assert!(a.values().iter().all(|&x| x.abs() <= 1e-6));
    }

    #[test]
    fn direct_unsharp_field_is_zero_mean_per_window() {
        // on a periodic pattern whose period divides the window, interior
        // windows see the whole pattern and the local mean vanishes
        let g = Grid::unit([15, 15, 15]).unwrap();
        let v = Volume3::from_fn(g, |i, j, k| ((i + 2 * j + 3 * k) % 5) as f32 / 4.0).unwrap();
        let p = PlaheParams::new(1.0, 0.0, [5, 5, 5], ExtractionMode::Direct).unwrap();
        let a = extract_artifact(&v, &p).unwrap();
        let mean = brute_box_mean(&v, 2);
        for k in 2..13 {
            for j in 2..13 {
                for i in 2..13 {
                    let n = g.index(i, j, k);
                    let expect = v.values()[n] as f64 - mean[n];
                    assert!((a.values()[n] as f64 - expect).abs() < 1e-6);
                }
            }
        }
        let detail_mean = brute_box_mean(&a, 2);
        for k in 4..11 {
            for j in 4..11 {
                for i in 4..11 {
                    assert!(detail_mean[g.index(i, j, k)].abs() < 1e-6);
                }
            }
        }
    }

    fn laplacian_energy(v: &Volume3) -> f64 {
        let [nx, ny, nz] = v.dims();
        let mut acc = 0.0;
        let mut n = 0.0;
        for k in 1..nz - 1 {
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    let c = v.get(i, j, k) as f64;
                    let lap = v.get(i - 1, j, k) as f64 + v.get(i + 1, j, k) as f64
                        + v.get(i, j - 1, k) as f64 + v.get(i, j + 1, k) as f64
                        + v.get(i, j, k - 1) as f64 + v.get(i, j, k + 1) as f64
                        - 6.0 * c;
                    acc += lap * lap;
                    n += 1.0;
                }
            }
        }
        acc / n
    }

    fn variance(v: &Volume3) -> f64 {
        let n = v.len() as f64;
        let mean = v.values().iter().map(|&x| x as f64).sum::<f64>() / n;
        v.values().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
    }

    // The sign term is a local rank statistic, so on noisy input alpha = 0
    // amplifies noise to a fixed amplitude. The smoothing behaviour shows up
    // as spectral shape: Laplacian energy relative to field variance.
    #[test]
    fn low_pass_setting_has_relatively_less_high_frequency_energy() {
        let g = Grid::unit([20, 20, 20]).unwrap();
        let v = Volume3::from_fn(g, |i, j, _| {
            if (i as i64 - 10).pow(2) + (j as i64 - 10).pow(2) < 36 { 0.6 } else { 0.3 }
        })
        .unwrap();
        let smooth = extract_artifact(&v, &params(0.0, 1.0)).unwrap();
        let sharp = extract_artifact(&v, &params(1.0, 0.0)).unwrap();
        let ratio = |x: &Volume3| laplacian_energy(x) / variance(x);
        assert!(ratio(&smooth) < ratio(&sharp), "{} vs {}", ratio(&smooth), ratio(&sharp));
    }

    #[test]
    fn sign_term_amplifies_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::unit([12, 12, 12]).unwrap();
        let v = Volume3::from_fn(g, |_, _, _| 0.5 + 0.01 * (rng.random::<f32>() - 0.5)).unwrap();
        let ahe = extract_artifact(&v, &params(0.0, 1.0)).unwrap();
        let unsharp = extract_artifact(&v, &params(1.0, 0.0)).unwrap();
        assert!(laplacian_energy(&ahe) > 100.0 * laplacian_energy(&unsharp));
    }

    #[test]
    fn interior_output_depends_only_on_window() {
        let g = Grid::unit([16, 12, 12]).unwrap();
        let pattern = |i: usize, j: usize, k: usize| ((i * 3 + j * 5 + k * 7) % 11) as f32 / 10.0;
        let a = Volume3::from_fn(g, pattern).unwrap();
        let b = Volume3::from_fn(g, |i, j, k| pattern(i + 3, j, k)).unwrap();
        let p = params(0.5, 0.5);
        let ta = plahe_transform(&a, &p).unwrap();
        let tb = plahe_transform(&b, &p).unwrap();
        for k in 2..10 {
            for j in 2..10 {
                for i in 2..11 {
                    assert_eq!(tb.get(i, j, k), ta.get(i + 3, j, k));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn identity_property(vals in proptest::collection::vec(0.0f32..=1.0, 4 * 5 * 6)) {
            let v = Volume3::new(Grid::unit([4, 5, 6]).unwrap(), vals).unwrap();
            let t = plahe_transform(&v, &params(1.0, 1.0)).unwrap();
            for (a, b) in t.values().iter().zip(v.values()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
