//! Unscrambled Sobol sequence with the Joe–Kuo `new-joe-kuo-6` direction
//! numbers, generated in Gray-code order (index 0 is the origin).

use std::sync::OnceLock;

use crate::{Error, Result};

const BITS: usize = 32;

/// `d s a m_1 .. m_s` rows for dimensions 2..=1111.
static TABLE_TEXT: &str = include_str!("joe_kuo_d6.txt");

struct Primitive {
    degree: u32,
    coeffs: u32,
    initial: Vec<u32>,
}

fn table() -> &'static [Primitive] {
    static TABLE: OnceLock<Vec<Primitive>> = OnceLock::new();
    TABLE.get_or_init(|| {
        TABLE_TEXT
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let nums: Vec<u32> = line
                    .split_whitespace()
                    .map(|t| t.parse().unwrap())
                    .collect();
                Primitive {
                    degree: nums[1],
                    coeffs: nums[2],
                    initial: nums[3..].to_vec(),
                }
            })
            .collect()
    })
}

fn direction_numbers(p: &Primitive) -> [u32; BITS] {
    let s = p.degree as usize;
    let mut v = [0u32; BITS];
    for (k, (slot, &m)) in v.iter_mut().zip(&p.initial).take(s).enumerate() {
        *slot = m << (31 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (p.coeffs >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub const MAX_DIMENSIONS: usize = 1111;
    pub const MAX_INDEX: u64 = (1 << BITS) - 1;

    pub fn new(dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid(
                "dimensions",
                "Sobol sequence needs at least one dimension",
            ));
        }
        if dims > Self::MAX_DIMENSIONS {
            return Err(Error::Capability(format!(
                "Sobol sampling supports at most {} dimensions, got {dims}",
                Self::MAX_DIMENSIONS
            )));
        }
        let mut directions = Vec::with_capacity(dims);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (31 - k);
        }
        directions.push(first);
        directions.extend(table()[..dims - 1].iter().map(direction_numbers));
        Ok(Self { directions })
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Point `index` of the sequence, in `[0, 1)^dims`.
    pub fn point(&self, index: u64) -> Vec<f64> {
        assert!(index <= Self::MAX_INDEX, "Sobol index out of range");
        let gray = index ^ (index >> 1);
        self.directions
            .iter()
            .map(|v| {
                let mut x = 0u32;
                let mut bits = gray;
                while bits != 0 {
                    let k = bits.trailing_zeros() as usize;
                    x ^= v[k];
                    bits &= bits - 1;
                }
                to_unit(x)
            })
            .collect()
    }

    /// `count` consecutive points starting at `start`.
    pub fn points(&self, start: u64, count: usize) -> Vec<Vec<f64>> {
        if count == 0 {
            return Vec::new();
        }
        assert!(
            start + count as u64 - 1 <= Self::MAX_INDEX,
            "Sobol index out of range"
        );
        let first = self.point(start);
        let mut state: Vec<u32> = first.iter().map(|&u| (u * 4294967296.0) as u32).collect();
        let mut out = Vec::with_capacity(count);
        out.push(first);
        for i in start + 1..start + count as u64 {
            let c = (i - 1).trailing_ones() as usize;
            for (x, v) in state.iter_mut().zip(&self.directions) {
                *x ^= v[c];
            }
            out.push(state.iter().map(|&x| to_unit(x)).collect());
        }
        out
    }
}

fn to_unit(x: u32) -> f64 {
    x as f64 / 4294967296.0
}
