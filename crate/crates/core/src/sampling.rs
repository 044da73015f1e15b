//! Seeded, deterministic sampling of point pairs and triples.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::space::MmSpace;

/// Number of logarithmic distance bins used for stratification.
pub const DISTANCE_BINS: usize = 8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to `count` pairs `(x, y)`, `x` from `sources`, `y` from `targets`, with
/// `dmin <= d(x, y) <= dmax`, drawn round-robin from logarithmic distance bins
/// so that short distances do not dominate.
pub fn stratified_pairs(
    space: &MmSpace,
    sources: &[usize],
    targets: &[usize],
    (dmin, dmax): (f64, f64),
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let mut bins: Vec<Vec<(usize, usize)>> = vec![Vec::new(); DISTANCE_BINS];
    let span = (dmax / dmin).ln().max(f64::MIN_POSITIVE);
    let tol = 1e-9;
    for &x in sources {
        for &y in targets {
            if x == y {
                continue;
            }
            let d = space.dist(x, y);
            if d < dmin * (1.0 - tol) || d > dmax * (1.0 + tol) {
                continue;
            }
            let b = (((d / dmin).ln().max(0.0) / span) * DISTANCE_BINS as f64) as usize;
            bins[b.min(DISTANCE_BINS - 1)].push((x, y));
        }
    }
    for b in &mut bins {
        b.shuffle(rng);
    }
    let mut out = Vec::with_capacity(count);
    let mut cursor = vec![0usize; DISTANCE_BINS];
    while out.len() < count {
        let mut progressed = false;
        for (b, bin) in bins.iter().enumerate() {
            if out.len() == count {
                break;
            }
            if cursor[b] < bin.len() {
                out.push(bin[cursor[b]]);
                cursor[b] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// `count` triples drawn uniformly (with replacement) from `points`.
pub fn random_triples(points: &[usize], count: usize, rng: &mut impl Rng) -> Vec<[usize; 3]> {
    (0..count)
        .map(|_| {
            [
                points[rng.gen_range(0..points.len())],
                points[rng.gen_range(0..points.len())],
                points[rng.gen_range(0..points.len())],
            ]
        })
        .collect()
}

/// `count` distinct points drawn from `points` (all of them when fewer).
pub fn subsample(points: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut v = points.to_vec();
    v.shuffle(rng);
    v.truncate(count);
    v.sort_unstable();
    v
}
