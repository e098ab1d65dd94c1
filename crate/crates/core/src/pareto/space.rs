use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureConfig, DiscreteArchitecture, Precision, DEFAULT_HEAD_DIM};
use crate::error::{Error, Result};

/// Number of KV heads: a fixed count, or one per query head (plain MHA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KvHeads {
    Count(u32),
    PerQueryHead(FullTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FullTag {
    #[serde(rename = "n_h")]
    NH,
}

impl KvHeads {
    pub const FULL: KvHeads = KvHeads::PerQueryHead(FullTag::NH);

    pub fn resolve(self, n_heads: u32) -> u32 {
        match self {
            KvHeads::Count(n) => n,
            KvHeads::PerQueryHead(_) => n_heads,
        }
    }
}

/// Discrete grid of architectures.
///
/// `ffn_ratios` are per-expert expansions; the effective ratio of a point is
/// `experts_active · ffn_ratio`. Query heads are `width / head_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub depths: Vec<u32>,
    pub widths: Vec<u32>,
    /// `(experts_total, experts_active)` pairs.
    pub moe: Vec<(u32, u32)>,
    pub kv_heads: Vec<KvHeads>,
    pub ffn_ratios: Vec<f64>,
    #[serde(default = "default_head_dim")]
    pub head_dim: u32,
    #[serde(default = "default_precisions")]
    pub precisions: Vec<Precision>,
}

fn default_head_dim() -> u32 {
    DEFAULT_HEAD_DIM
}

fn default_precisions() -> Vec<Precision> {
    vec![Precision::Fp16, Precision::Int8]
}

/// Grid position: indices into depths, widths, moe, kv_heads, ffn_ratios.
pub type GridIndex = [usize; 5];

pub const DEFAULT_WIDTHS: [u32; 9] = [768, 1024, 1280, 1536, 1792, 2048, 2304, 2560, 3072];

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            depths: (1..=8).map(|k| 4 * k).collect(),
            widths: DEFAULT_WIDTHS.to_vec(),
            moe: vec![(1, 1), (8, 1), (8, 2), (16, 1), (16, 2)],
            kv_heads: vec![
                KvHeads::Count(1),
                KvHeads::Count(2),
                KvHeads::Count(4),
                KvHeads::Count(8),
                KvHeads::FULL,
            ],
            ffn_ratios: vec![4.0],
            head_dim: DEFAULT_HEAD_DIM,
            precisions: default_precisions(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSearchSpace(m.to_string()));
        if self.depths.is_empty()
            || self.widths.is_empty()
            || self.moe.is_empty()
            || self.kv_heads.is_empty()
            || self.ffn_ratios.is_empty()
            || self.precisions.is_empty()
        {
            return bad("every grid must be non-empty");
        }
        if self.head_dim == 0 {
            return bad("head_dim must be >= 1");
        }
        // every grid point must be constructible
        for idx in self.indices() {
            self.config(idx)?;
        }
        Ok(())
    }

    pub fn shape(&self) -> GridIndex {
        [
            self.depths.len(),
            self.widths.len(),
            self.moe.len(),
            self.kv_heads.len(),
            self.ffn_ratios.len(),
        ]
    }

    pub fn size(&self) -> usize {
        self.shape().iter().product()
    }

    /// All grid positions in row-major order.
    pub fn indices(&self) -> Vec<GridIndex> {
        let s = self.shape();
        let mut out = Vec::with_capacity(self.size());
        for a in 0..s[0] {
            for b in 0..s[1] {
                for c in 0..s[2] {
                    for d in 0..s[3] {
                        for e in 0..s[4] {
                            out.push([a, b, c, d, e]);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn linear(&self, idx: GridIndex) -> usize {
        let s = self.shape();
        idx.iter().zip(s.iter()).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn config(&self, idx: GridIndex) -> Result<ArchitectureConfig> {
        let width = self.widths[idx[1]];
        if !width.is_multiple_of(self.head_dim) {
            return Err(Error::InvalidSearchSpace(format!(
                "width {width} is not a multiple of head_dim {}",
                self.head_dim
            )));
        }
        let n_heads = width / self.head_dim;
        let n_kv_heads = self.kv_heads[idx[3]].resolve(n_heads);
        let (experts_total, experts_active) = self.moe[idx[2]];
        ArchitectureConfig::discrete(DiscreteArchitecture {
            layers: self.depths[idx[0]],
            width,
            n_heads,
            n_kv_heads,
            head_dim: self.head_dim,
            experts_total,
            experts_active,
            ffn_ratio_per_expert: self.ffn_ratios[idx[4]],
        })
        .map_err(|e| Error::InvalidSearchSpace(format!("grid point {idx:?}: {e}")))
    }

    /// Positions one step away along a single axis.
    pub fn neighbors(&self, idx: GridIndex) -> Vec<GridIndex> {
        let s = self.shape();
        let mut out = Vec::new();
        for k in 0..5 {
            if idx[k] > 0 {
                let mut n = idx;
                n[k] -= 1;
                out.push(n);
            }
            if idx[k] + 1 < s[k] {
                let mut n = idx;
                n[k] += 1;
                out.push(n);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let s = SearchSpace::default();
        assert_eq!(s.size(), 1800);
        s.validate().unwrap();
        let a = s.config([0, 0, 4, 4, 0]).unwrap();
        assert_eq!(a.layers(), 4.0);
        assert_eq!(a.width(), 768.0);
        assert_eq!(a.gqa(), 1.0);
        assert_eq!(a.activation_rate(), 2.0 / 16.0);
        assert_eq!(a.ffn_ratio(), 8.0);
        assert_eq!(s.neighbors([0, 0, 0, 0, 0]).len(), 4);
        let lin: Vec<usize> = s.indices().iter().map(|i| s.linear(*i)).collect();
        assert_eq!(lin, (0..1800).collect::<Vec<_>>());
    }

    #[test]
    fn json_round_trip() {
        let s = SearchSpace::default();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"n_h\""), "{j}");
        let back: SearchSpace = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
