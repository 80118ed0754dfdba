//! Pixel-shuffle combinatorics and cross-scale training-pair construction.
//!
//! An image is cut into `s × s` patches. From every patch, `n` disjoint
//! targets of `t × t` pixels are sampled with one of four [`Strategy`]s; the
//! remaining `m = s² − n·t²` pixels are sent through a random bijection to `m`
//! input slots. Slot `k` collects one pixel from every patch, so each slot is
//! a coherent `(H/s) × (W/s)` sub-image, while each target is an
//! `(H/s·t) × (W/s·t)` image. Every (input, target) combination is a pair.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{Image, ImageError};

#[derive(Debug, thiserror::Error)]
pub enum PairingError {
    #[error("{what} {height}x{width} is not divisible by {factor}")]
    NonDivisible {
        what: &'static str,
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("invalid pairing parameters: {0}")]
    Invalid(String),
    #[error("infeasible configuration: {strategy} cannot place {n} disjoint {t}x{t} targets in a {s}x{s} patch")]
    Infeasible {
        strategy: Strategy,
        s: usize,
        t: usize,
        n: usize,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

type Result<T> = std::result::Result<T, PairingError>;

/// Position `(row, col)` inside an `s × s` patch.
pub type Coord = (usize, usize);

/// Rule for picking the `t × t` target pixels inside a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// `t²` uniformly drawn pixels, placed row-major in draw order.
    Random,
    /// Like `Random`, then sorted row-major before placement.
    Sorted,
    /// Intersections of `t` rows and `t` columns, both ascending.
    Intersected,
    /// A contiguous `t × t` block.
    Consecutive,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Sorted, Strategy::Intersected, Strategy::Consecutive];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Sorted => "sorted",
            Strategy::Intersected => "intersected",
            Strategy::Consecutive => "consecutive",
        }
    }

    fn is_structured(self) -> bool {
        matches!(self, Strategy::Intersected | Strategy::Consecutive)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = PairingError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| PairingError::Invalid(format!("unknown strategy {s:?}")))
    }
}

// ---------------------------------------------------------------------------
// Pixel-shuffle down/up sampling
// ---------------------------------------------------------------------------

fn check_divisible(what: &'static str, image: &Image, factor: usize) -> Result<()> {
    if factor == 0 || image.height() % factor != 0 || image.width() % factor != 0 {
        return Err(PairingError::NonDivisible {
            what,
            height: image.height(),
            width: image.width(),
            factor,
        });
    }
    Ok(())
}

/// `sub[a·f + b](i, j) = image(i·f + a, j·f + b)`.
pub fn pd_split(image: &Image, factor: usize) -> Result<Vec<Image>> {
    check_divisible("image", image, factor)?;
    let (c, h, w) = image.dims();
    let (sh, sw) = (h / factor, w / factor);
    let mut subs = Vec::with_capacity(factor * factor);
    for a in 0..factor {
        for b in 0..factor {
            let mut pixels = Vec::with_capacity(c * sh * sw);
            for ch in 0..c {
                for i in 0..sh {
                    for j in 0..sw {
                        pixels.push(image.get(ch, i * factor + a, j * factor + b));
                    }
                }
            }
            subs.push(Image::new(c, sh, sw, pixels)?);
        }
    }
    Ok(subs)
}

/// Exact inverse of [`pd_split`].
pub fn pu_merge(subs: &[Image], factor: usize) -> Result<Image> {
    if factor == 0 || subs.len() != factor * factor {
        return Err(PairingError::Invalid(format!(
            "pu_merge needs {} sub-images for factor {factor}, got {}",
            factor * factor,
            subs.len()
        )));
    }
    let (c, sh, sw) = subs[0].dims();
    if let Some(bad) = subs.iter().find(|s| s.dims() != (c, sh, sw)) {
        return Err(PairingError::Invalid(format!(
            "sub-image shapes differ: {:?} vs {:?}",
            subs[0].dims(),
            bad.dims()
        )));
    }
    let mut out = Image::filled(c, sh * factor, sw * factor, 0.0);
    for a in 0..factor {
        for b in 0..factor {
            let sub = &subs[a * factor + b];
            for ch in 0..c {
                for i in 0..sh {
                    for j in 0..sw {
                        out.set(ch, i * factor + a, j * factor + b, sub.get(ch, i, j));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean of the `f²` pixel-shuffle sub-images, i.e. `f × f` box downsampling.
pub fn pd_average(image: &Image, factor: usize) -> Result<Image> {
    let subs = pd_split(image, factor)?;
    let (c, h, w) = subs[0].dims();
    let mut acc = vec![0.0; c * h * w];
    for sub in &subs {
        acc.iter_mut().zip(sub.pixels()).for_each(|(a, v)| *a += v);
    }
    let n = subs.len() as f64;
    Ok(Image::new(c, h, w, acc.into_iter().map(|v| v / n).collect())?)
}

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

/// Row-major grid of non-overlapping `C × s × s` patches.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub size: usize,
    pub patches: Vec<Image>,
}

impl PatchGrid {
    pub fn patch(&self, i: usize, j: usize) -> &Image {
        &self.patches[i * self.cols + j]
    }
}

/// `patch(i, j)(u, v) = image(i·s + u, j·s + v)`.
pub fn patch_partition(image: &Image, s: usize) -> Result<PatchGrid> {
    check_divisible("image", image, s)?;
    let (rows, cols) = (image.height() / s, image.width() / s);
    let mut patches = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            patches.push(image.crop(i * s, j * s, s, s)?);
        }
    }
    Ok(PatchGrid {
        rows,
        cols,
        size: s,
        patches,
    })
}

// ---------------------------------------------------------------------------
// Target sampling
// ---------------------------------------------------------------------------

type Mask = u128;
const MAX_PATCH_PIXELS: usize = Mask::BITS as usize;

#[inline]
fn bit(s: usize, (r, c): Coord) -> Mask {
    1 << (r * s + c)
}

fn mask_of(s: usize, coords: &[Coord]) -> Mask {
    coords.iter().fold(0, |m, &p| m | bit(s, p))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Every placement a structured strategy can produce in an empty patch, each
/// as its `t²` coordinates in target-cell order. Empty for `Random`/`Sorted`.
pub fn placements(s: usize, t: usize, strategy: Strategy) -> Vec<Vec<Coord>> {
    if t == 0 || t > s {
        return Vec::new();
    }
    match strategy {
        Strategy::Random | Strategy::Sorted => Vec::new(),
        Strategy::Consecutive => {
            let mut out = Vec::with_capacity((s - t + 1) * (s - t + 1));
            for r in 0..=s - t {
                for c in 0..=s - t {
                    out.push((0..t * t).map(|k| (r + k / t, c + k % t)).collect());
                }
            }
            out
        }
        Strategy::Intersected => {
            let lines = combinations(s, t);
            let mut out = Vec::with_capacity(lines.len() * lines.len());
            for rows in &lines {
                for cols in &lines {
                    out.push((0..t * t).map(|k| (rows[k / t], cols[k % t])).collect());
                }
            }
            out
        }
    }
}

/// Sequential sampler of disjoint targets inside one `s × s` patch.
///
/// Structured strategies choose uniformly among the placements that do not
/// overlap occupied pixels *and* still leave room for the targets that remain
/// to be drawn (checked by memoized exhaustive search), so infeasibility is a
/// typed error rather than an endless retry.
pub struct TargetSampler {
    s: usize,
    t: usize,
    strategy: Strategy,
    placements: Vec<(Mask, Vec<Coord>)>,
    memo: HashMap<(Mask, usize), bool>,
}

impl TargetSampler {
    pub fn new(s: usize, t: usize, strategy: Strategy) -> Result<Self> {
        if t == 0 || t >= s {
            return Err(PairingError::Invalid(format!("need 1 <= t < s, got s={s} t={t}")));
        }
        if s * s > MAX_PATCH_PIXELS {
            return Err(PairingError::Invalid(format!("patch size {s} exceeds {MAX_PATCH_PIXELS} pixels")));
        }
        let placements = placements(s, t, strategy)
            .into_iter()
            .map(|p| (mask_of(s, &p), p))
            .collect();
        Ok(TargetSampler {
            s,
            t,
            strategy,
            placements,
            memo: HashMap::new(),
        })
    }

    /// Whether `count` more disjoint targets fit next to `occupied`.
    pub fn can_place(&mut self, occupied: Mask, count: usize) -> bool {
        if count == 0 {
            return true;
        }
        if !self.strategy.is_structured() {
            let free = self.s * self.s - occupied.count_ones() as usize;
            return free >= count * self.t * self.t;
        }
        if let Some(&known) = self.memo.get(&(occupied, count)) {
            return known;
        }
        let mut result = false;
        for i in 0..self.placements.len() {
            let m = self.placements[i].0;
            if m & occupied == 0 && self.can_place(occupied | m, count - 1) {
                result = true;
                break;
            }
        }
        self.memo.insert((occupied, count), result);
        result
    }

    /// Draws one target avoiding `occupied` such that `still_needed` further
    /// targets remain placeable afterwards.
    pub fn sample(&mut self, occupied: Mask, still_needed: usize, rng: &mut impl Rng) -> Result<Vec<Coord>> {
        let (strategy, s, t) = (self.strategy, self.s, self.t);
        let infeasible = || PairingError::Infeasible {
            strategy,
            s,
            t,
            n: still_needed + 1,
        };
        let tt = self.t * self.t;
        match self.strategy {
            Strategy::Random | Strategy::Sorted => {
                if !self.can_place(occupied, still_needed + 1) {
                    return Err(infeasible());
                }
                let mut free: Vec<Coord> = (0..self.s * self.s)
                    .map(|k| (k / self.s, k % self.s))
                    .filter(|&p| occupied & bit(self.s, p) == 0)
                    .collect();
                let (chosen, _) = free.partial_shuffle(rng, tt);
                let mut coords = chosen.to_vec();
                if self.strategy == Strategy::Sorted {
                    coords.sort_unstable();
                }
                Ok(coords)
            }
            Strategy::Intersected | Strategy::Consecutive => {
                let candidates: Vec<usize> = (0..self.placements.len())
                    .filter(|&i| {
                        let m = self.placements[i].0;
                        m & occupied == 0 && self.can_place(occupied | m, still_needed)
                    })
                    .collect();
                if candidates.is_empty() {
                    return Err(infeasible());
                }
                let pick = candidates[rng.random_range(0..candidates.len())];
                Ok(self.placements[pick].1.clone())
            }
        }
    }
}

/// Occupancy set from a list of patch coordinates.
pub fn occupancy(s: usize, coords: &[Coord]) -> Mask {
    mask_of(s, coords)
}

/// Samples one `C × t × t` target from `patch`, avoiding `occupied`.
pub fn sample_target(
    patch: &Image,
    t: usize,
    strategy: Strategy,
    occupied: &[Coord],
    rng: &mut impl Rng,
) -> Result<(Image, Vec<Coord>)> {
    let s = patch.height();
    if patch.width() != s {
        return Err(PairingError::Invalid("patch must be square".into()));
    }
    let mut sampler = TargetSampler::new(s, t, strategy)?;
    let coords = sampler.sample(occupancy(s, occupied), 0, rng)?;
    let c = patch.channels();
    let mut pixels = Vec::with_capacity(c * t * t);
    for ch in 0..c {
        pixels.extend(coords.iter().map(|&(r, col)| patch.get(ch, r, col)));
    }
    Ok((Image::new(c, t, t, pixels)?, coords))
}

/// Uniform random bijection from the remaining coordinates to slots
/// `0..m`; entry `k` is the coordinate assigned to slot `k`.
pub fn distribute_coords(remaining: &[Coord], rng: &mut impl Rng) -> Vec<Coord> {
    let mut slots = remaining.to_vec();
    slots.shuffle(rng);
    slots
}

/// Pixel values (one per channel) for each slot, in slot order.
pub fn distribute(patch: &Image, remaining: &[Coord], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    distribute_coords(remaining, rng)
        .into_iter()
        .map(|(r, c)| (0..patch.channels()).map(|ch| patch.get(ch, r, c)).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

/// Where every pixel of one patch went.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchAssignment {
    /// `targets[l][a·t + b]` is the patch coordinate of target `l`'s cell `(a, b)`.
    pub targets: Vec<Vec<Coord>>,
    /// `slots[k]` is the patch coordinate sent to input sub-image `k`.
    pub slots: Vec<Coord>,
}

/// Output of the pair-construction operator.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub s: usize,
    pub t: usize,
    pub n: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub inputs: Vec<Image>,
    pub targets: Vec<Image>,
    /// Row-major over the patch grid.
    pub assignment: Vec<PatchAssignment>,
}

impl PairSet {
    pub fn num_pairs(&self) -> usize {
        self.inputs.len() * self.targets.len()
    }

    /// Pair `index` of the Cartesian product, input-major.
    pub fn pair(&self, index: usize) -> (&Image, &Image) {
        let n = self.targets.len();
        (&self.inputs[index / n], &self.targets[index % n])
    }

    /// Checks that every patch is partitioned exactly (each of the `s²`
    /// pixels used once) and hence no input shares a source pixel with any
    /// target.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let s = self.s;
        let m = s * s - self.n * self.t * self.t;
        if self.inputs.len() != m || self.targets.len() != self.n {
            return Err(format!(
                "expected {m} inputs and {} targets, found {} and {}",
                self.n,
                self.inputs.len(),
                self.targets.len()
            ));
        }
        for (p, a) in self.assignment.iter().enumerate() {
            let mut seen = vec![false; s * s];
            let all = a.targets.iter().flatten().chain(&a.slots);
            let mut count = 0;
            for &(r, c) in all {
                if r >= s || c >= s || std::mem::replace(&mut seen[r * s + c], true) {
                    return Err(format!("patch {p}: coordinate ({r},{c}) reused or out of range"));
                }
                count += 1;
            }
            if count != s * s {
                return Err(format!("patch {p}: {count} of {} pixels assigned", s * s));
            }
        }
        Ok(())
    }
}

/// Splitmix64 finalizer; derives independent per-patch streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn patch_rng(seed: u64, row: usize, col: usize) -> ChaCha8Rng {
    let key = mix(mix(mix(seed) ^ row as u64) ^ (col as u64).rotate_left(32));
    ChaCha8Rng::seed_from_u64(key)
}

pub fn validate_params(s: usize, t: usize, n: usize) -> Result<()> {
    if t == 0 || t >= s {
        return Err(PairingError::Invalid(format!("need 1 <= t < s, got s={s} t={t}")));
    }
    let max_n = (s * s) / (t * t);
    if n == 0 || n > max_n {
        return Err(PairingError::Invalid(format!("n must lie in [1, {max_n}] for s={s} t={t}, got {n}")));
    }
    if s * s > MAX_PATCH_PIXELS {
        return Err(PairingError::Invalid(format!("patch size {s} exceeds {MAX_PATCH_PIXELS} pixels")));
    }
    Ok(())
}

/// Builds `m = s² − n·t²` input sub-images and `n` high-scale targets from a
/// single image. Deterministic in `(image, s, t, n, strategy, seed)`.
pub fn construct_pairs(image: &Image, s: usize, t: usize, n: usize, strategy: Strategy, seed: u64) -> Result<PairSet> {
    validate_params(s, t, n)?;
    check_divisible("image", image, s)?;
    let (c, h, w) = image.dims();
    let (gr, gc) = (h / s, w / s);
    let m = s * s - n * t * t;
    let mut sampler = TargetSampler::new(s, t, strategy)?;
    if !sampler.can_place(0, n) {
        return Err(PairingError::Infeasible { strategy, s, t, n });
    }

    let mut inputs = vec![Image::filled(c, gr, gc, 0.0); m];
    let mut targets = vec![Image::filled(c, gr * t, gc * t, 0.0); n];
    let mut assignment = Vec::with_capacity(gr * gc);
    let all: Vec<Coord> = (0..s * s).map(|k| (k / s, k % s)).collect();

    for pi in 0..gr {
        for pj in 0..gc {
            let mut rng = patch_rng(seed, pi, pj);
            let mut occupied: Mask = 0;
            let mut patch_targets = Vec::with_capacity(n);
            for l in 0..n {
                let coords = sampler.sample(occupied, n - l - 1, &mut rng)?;
                occupied |= mask_of(s, &coords);
                for (cell, &(u, v)) in coords.iter().enumerate() {
                    let (a, b) = (cell / t, cell % t);
                    for ch in 0..c {
                        targets[l].set(ch, pi * t + a, pj * t + b, image.get(ch, pi * s + u, pj * s + v));
                    }
                }
                patch_targets.push(coords);
            }
            let remaining: Vec<Coord> = all.iter().copied().filter(|&p| occupied & bit(s, p) == 0).collect();
            let slots = distribute_coords(&remaining, &mut rng);
            for (k, &(u, v)) in slots.iter().enumerate() {
                for ch in 0..c {
                    inputs[k].set(ch, pi, pj, image.get(ch, pi * s + u, pj * s + v));
                }
            }
            assignment.push(PatchAssignment {
                targets: patch_targets,
                slots,
            });
        }
    }

    Ok(PairSet {
        s,
        t,
        n,
        strategy,
        seed,
        grid_rows: gr,
        grid_cols: gc,
        inputs,
        targets,
        assignment,
    })
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

/// `n · (s² − n·t²)` training pairs per image.
pub fn count_pairs(s: usize, t: usize, n: usize) -> Result<usize> {
    validate_params(s, t, n)?;
    Ok(n * (s * s - n * t * t))
}

fn power_sum(terms: usize, exponent: u32) -> BigUint {
    (1..=terms).map(|base| BigUint::from(base).pow(exponent)).sum()
}

fn patch_count(h: usize, w: usize, s: usize) -> Result<u32> {
    if s == 0 || (h * w) % (s * s) != 0 {
        return Err(PairingError::Invalid(format!("{h}*{w} is not divisible by {s}^2")));
    }
    u32::try_from(h * w / (s * s)).map_err(|_| PairingError::Invalid("image too large to count".into()))
}

/// Number of random-PD sub-images, `Σ_{i=0}^{s²−1} (s² − i)^{HW/s²}`.
pub fn count_random_pd(h: usize, w: usize, s: usize) -> Result<BigUint> {
    Ok(power_sum(s * s, patch_count(h, w, s)?))
}

/// Number of distinct input sub-images the distribute step can emit for a
/// single target, `Σ_{i=0}^{s²−t²−1} (s² − t² − i)^{HW/s²}`.
pub fn count_distribute_variants(h: usize, w: usize, s: usize, t: usize) -> Result<BigUint> {
    if t >= s {
        return Err(PairingError::Invalid(format!("need t < s, got s={s} t={t}")));
    }
    Ok(power_sum(s * s - t * t, patch_count(h, w, s)?))
}
