//! Fixed five-state chains with null states {1, 2} used in the reference
//! experiments. Printed entries are rounded, so rows and `pi` are
//! renormalized on load.

use crate::error::{Error, Result};
use crate::matrix_ensembles::{ProbVector, TransitionMatrix};

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub rows: [[f64; 5]; 5],
    pub pi: [f64; 5],
    /// Reported slem, with the tlem where one is reported.
    pub slem: f64,
    pub tlem: Option<f64>,
}

/// Null states of every preset (1-based).
pub const NULL_STATES: [usize; 2] = [1, 2];

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "large-slem-small-tlem",
        rows: [
            [0.9286, 0.0122, 0.0276, 0.0063, 0.0253],
            [0.0150, 0.8548, 0.0651, 0.0310, 0.0340],
            [0.0250, 0.9629, 0.0097, 0.0008, 0.0016],
            [0.1653, 0.7046, 0.0955, 0.0267, 0.0079],
            [0.2716, 0.6988, 0.0257, 0.0007, 0.0033],
        ],
        pi: [0.3006, 0.5994, 0.0505, 0.0211, 0.0283],
        slem: 0.9074,
        tlem: Some(0.0645),
    },
    Preset {
        name: "large-slem-complex-tlem",
        rows: [
            [0.8993, 0.0017522, 0.0098301, 0.031722, 0.057401],
            [0.015641, 0.96471, 0.0086498, 0.0077613, 0.0032366],
            [0.66064, 0.11572, 0.075542, 0.067761, 0.080337],
            [0.71019, 0.090088, 0.06356, 0.13104, 0.0051248],
            [0.57536, 0.025292, 0.27334, 0.10032, 0.025692],
        ],
        pi: [0.67187, 0.22813, 0.02414, 0.033354, 0.042506],
        slem: 0.9566,
        tlem: Some(0.1155),
    },
    Preset {
        name: "large-slem-large-tlem",
        rows: [
            [0.0014, 0.9653, 0.0124, 0.0080, 0.0129],
            [0.9506, 0.0011, 0.0056, 0.0155, 0.0272],
            [0.3236, 0.1203, 0.5312, 0.0238, 0.0011],
            [0.8080, 0.1589, 0.0190, 0.0025, 0.0115],
            [0.1898, 0.7959, 0.0053, 0.0024, 0.0066],
        ],
        pi: [0.47319, 0.47681, 0.018907, 0.01173, 0.019363],
        slem: 0.9591,
        tlem: Some(0.5232),
    },
    Preset {
        name: "moderate-slem",
        rows: [
            [0.1999, 0.6548, 0.0537, 0.0561, 0.0354],
            [0.8932, 0.0765, 0.0137, 0.0088, 0.0076],
            [0.4431, 0.4365, 0.0721, 0.0284, 0.0199],
            [0.1159, 0.8271, 0.0371, 0.0129, 0.0070],
            [0.6080, 0.0597, 0.0505, 0.0710, 0.2108],
        ],
        pi: [0.4969, 0.4031, 0.0376, 0.0349, 0.0275],
        slem: 0.6019,
        tlem: None,
    },
];

impl Preset {
    pub fn transition(&self) -> Result<TransitionMatrix> {
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.to_vec()).collect();
        TransitionMatrix::from_rows_normalized(&rows)
    }

    pub fn stationary(&self) -> Result<ProbVector> {
        ProbVector::normalized(self.pi.to_vec())
    }
}

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::domain(format!(
            "unknown preset '{name}' (known: {})",
            known.join(", ")
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_ensembles::eigenmoduli;

    #[test]
    fn presets_load() {
        for p in &PRESETS {
            let t = p.transition().unwrap();
            assert_eq!(t.dim(), 5);
            // Renormalizing rounded rows barely moves the spectrum.
            assert!(
                (eigenmoduli(&t).unwrap().slem - p.slem).abs() <= 5e-4,
                "{}",
                p.name
            );
            let pi = p.stationary().unwrap();
            let psig: f64 = pi.as_slice()[2..].iter().sum();
            assert!(psig > 0.04 && psig < 0.11, "{}: {psig}", p.name);
        }
        assert!(preset("nope").is_err());
        assert_eq!(preset("moderate-slem").unwrap().slem, 0.6019);
    }
}
