//! Scrambled Sobol points in base 2.
//!
//! Direction numbers are the Joe–Kuo `new-joe-kuo-6.21201` set. Each
//! dimension is scrambled by a random lower-triangular binary matrix
//! (linear matrix scrambling) followed by a random digital shift, so every
//! scrambled point set keeps the `(t, m, s)`-net structure of the original.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2 onward.
const JOE_KUO: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

pub const MAX_DIMS: usize = JOE_KUO.len() + 1;

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for k in 0..s {
        v[k] = m[k] << (31 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Multiply a digit vector (MSB = first digit) by a lower-triangular matrix
/// whose row `r` is stored as a mask over digits `0..=r`.
fn apply_lower(rows: &[u32; BITS], x: u32) -> u32 {
    let mut out = 0u32;
    for (r, mask) in rows.iter().enumerate() {
        if (mask & x).count_ones() & 1 == 1 {
            out |= 1 << (31 - r);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Sobol {
    dirs: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl Sobol {
    /// Unscrambled sequence, mainly for tests.
    pub fn plain(dims: usize) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Self {
            dirs: (0..dims).map(direction_numbers).collect(),
            shift: vec![0; dims],
        })
    }

    pub fn scrambled(dims: usize, seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs = Vec::with_capacity(dims);
        let mut shift = Vec::with_capacity(dims);
        for d in 0..dims {
            let mut rows = [0u32; BITS];
            for (r, row) in rows.iter_mut().enumerate() {
                let above = if r == 0 { 0 } else { !0u32 << (32 - r) };
                *row = (rng.random::<u32>() & above) | (1 << (31 - r));
            }
            let base = direction_numbers(d);
            let mut v = [0u32; BITS];
            for k in 0..BITS {
                v[k] = apply_lower(&rows, base[k]);
            }
            dirs.push(v);
            shift.push(rng.random::<u32>());
        }
        Ok(Self { dirs, shift })
    }

    fn check_dims(dims: usize) -> Result<()> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(Error::Domain {
                what: "sobol dimension",
                value: dims as f64,
                lo: 1.0,
                hi: MAX_DIMS as f64,
            });
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dirs.len()
    }

    /// Point `index` written into `out`; coordinates lie strictly inside (0, 1).
    pub fn point(&self, index: u32, out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate().take(self.dims()) {
            let mut x = self.shift[d];
            let mut i = index;
            let mut k = 0;
            while i != 0 {
                if i & 1 == 1 {
                    x ^= self.dirs[d][k];
                }
                i >>= 1;
                k += 1;
            }
            *o = (x as f64 + 0.5) / 4_294_967_296.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_dimension_is_van_der_corput() {
        let s = Sobol::plain(1).unwrap();
        let mut p = [0.0];
        let expect = [0.0, 0.5, 0.25, 0.75, 0.125, 0.625];
        for (i, e) in expect.iter().enumerate() {
            s.point(i as u32, &mut p);
            assert!((p[0] - e).abs() < 1e-9, "{i}: {}", p[0]);
        }
    }

    #[test]
    fn too_many_dims_rejected() {
        assert!(Sobol::plain(MAX_DIMS + 1).is_err());
        assert!(Sobol::scrambled(0, 1).is_err());
    }
}
