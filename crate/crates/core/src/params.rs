//! Named parameter sets and the tree-size adjustment used at run time.

use crate::error::{Error, Result};
use crate::lpn::{LpnParams, DEFAULT_ROW_WEIGHT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamPreset {
    pub name: &'static str,
    pub n: usize,
    pub ell: usize,
    pub k: usize,
    pub t: usize,
    pub d: usize,
}

pub const PRESETS: [ParamPreset; 6] = [
    ParamPreset { name: "p20", n: 1_221_516, ell: 4096, k: 168_000, t: 480, d: DEFAULT_ROW_WEIGHT },
    ParamPreset { name: "p21", n: 2_365_652, ell: 4096, k: 262_000, t: 600, d: DEFAULT_ROW_WEIGHT },
    ParamPreset { name: "p22", n: 4_531_924, ell: 8192, k: 328_000, t: 740, d: DEFAULT_ROW_WEIGHT },
    ParamPreset { name: "p23", n: 8_866_608, ell: 8192, k: 452_000, t: 1024, d: DEFAULT_ROW_WEIGHT },
    ParamPreset { name: "p24", n: 17_262_496, ell: 8192, k: 480_000, t: 2100, d: DEFAULT_ROW_WEIGHT },
    ParamPreset { name: "toy", n: 1024, ell: 64, k: 128, t: 16, d: 4 },
];

/// The five large sets, smallest first.
pub fn full_scale() -> &'static [ParamPreset] {
    &PRESETS[..5]
}

pub fn preset(name: &str) -> Option<ParamPreset> {
    PRESETS.iter().copied().find(|p| p.name == name)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

fn next_power_of(base: usize, at_least: usize) -> usize {
    let mut p = 1usize;
    while p < at_least {
        p *= base;
    }
    p
}

/// Leaves per tree actually expanded for fanout `m`: the nominal size
/// rounded up to a power of `m`, grown further when `t` trees of that size
/// cannot hold one noise block each.
pub fn effective_ell(n: usize, t: usize, ell: usize, fanout: usize) -> Result<usize> {
    if !matches!(fanout, 2 | 4) {
        return Err(Error::Config(format!("fanout must be 2 or 4, got {fanout}")));
    }
    if t == 0 {
        return Err(Error::Config("t must be positive".into()));
    }
    Ok(next_power_of(fanout, ell.max(n.div_ceil(t))))
}

impl ParamPreset {
    /// Run-time parameters for fanout `m`.
    pub fn lpn_params(&self, fanout: usize) -> Result<LpnParams> {
        let ell = effective_ell(self.n, self.t, self.ell, fanout)?;
        LpnParams::new(self.n, self.k, self.t, ell, self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let p = preset("p20").unwrap();
        assert_eq!((p.n, p.ell, p.k, p.t, p.d), (1221516, 4096, 168000, 480, 10));
        assert_eq!(preset("p24").unwrap().t, 2100);
        assert!(preset("p25").is_none());
        assert_eq!(full_scale().len(), 5);
    }

    #[test]
    fn effective_sizes() {
        assert_eq!(effective_ell(1221516, 480, 4096, 2).unwrap(), 4096);
        assert_eq!(effective_ell(1221516, 480, 4096, 4).unwrap(), 4096);
        assert_eq!(effective_ell(4531924, 740, 8192, 2).unwrap(), 8192);
        assert_eq!(effective_ell(4531924, 740, 8192, 4).unwrap(), 16384);
        // ceil(n/t) = 8659 and 8221 exceed the nominal 8192
        assert_eq!(effective_ell(8866608, 1024, 8192, 2).unwrap(), 16384);
        assert_eq!(effective_ell(17262496, 2100, 8192, 2).unwrap(), 16384);
        assert_eq!(effective_ell(1024, 16, 64, 4).unwrap(), 64);
        assert!(effective_ell(1024, 16, 64, 3).is_err());
    }

    #[test]
    fn every_preset_validates() {
        for p in PRESETS {
            for m in [2, 4] {
                let lp = p.lpn_params(m).unwrap();
                assert!(lp.t * lp.ell >= lp.n);
                assert!(lp.ell >= p.ell);
            }
        }
    }
}
