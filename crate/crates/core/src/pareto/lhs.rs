use rand::seq::SliceRandom;
use rand::Rng;

/// Latin-hypercube sample of `n` points in `[0, 1)^dims`: each axis is cut
/// into `n` equal strata and every stratum is hit exactly once.
pub fn unit_cube<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..dims {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[k] = (perm[i] as f64 + u) / n as f64;
        }
    }
    points
}

/// Maps a unit coordinate onto one of `len` grid indices with equal mass.
#[inline]
pub fn to_index(u: f64, len: usize) -> usize {
    ((u * len as f64).floor() as usize).min(len - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn each_stratum_hit_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let pts = unit_cube(n, 4, &mut rng);
        for k in 0..4 {
            let mut hits = vec![0; n];
            for p in &pts {
                assert!((0.0..1.0).contains(&p[k]));
                hits[to_index(p[k], n)] += 1;
            }
            assert!(hits.iter().all(|&h| h == 1));
        }
    }
}
