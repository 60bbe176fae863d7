use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DibfCase;
use crate::error::{Error, Result};

/// Tolerance on the modulus invariants of [`BeamVector`].
pub const MODULUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusMode {
    /// `|v_n| = 1` for every element.
    UnitModulus,
    /// `|v_n| <= 1`; the relaxation used inside the SCA iterations.
    RelaxedDisk,
}

/// IRS reflection coefficients `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BeamRepr", into = "BeamRepr")]
pub struct BeamVector {
    entries: Vec<Complex64>,
    mode: ModulusMode,
}

impl BeamVector {
    pub fn new(entries: Vec<Complex64>, mode: ModulusMode) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            let m = e.norm();
            let ok = match mode {
                ModulusMode::UnitModulus => (m - 1.0).abs() <= MODULUS_TOL,
                ModulusMode::RelaxedDisk => m <= 1.0 + MODULUS_TOL,
            };
            if !ok || !m.is_finite() {
                return Err(Error::BeamModulus {
                    index: i,
                    modulus: m,
                    mode: match mode {
                        ModulusMode::UnitModulus => "unit-modulus",
                        ModulusMode::RelaxedDisk => "unit-disk",
                    },
                });
            }
        }
        Ok(BeamVector { entries, mode })
    }

    /// Unit-modulus vector with the given phases (radians).
    pub fn from_phases(phases: &[f64]) -> Self {
        BeamVector {
            entries: phases.iter().map(|&p| Complex64::from_polar(1.0, p)).collect(),
            mode: ModulusMode::UnitModulus,
        }
    }

    /// All-zero phases, i.e. `v = 1`.
    pub fn ones(n: usize) -> Self {
        BeamVector {
            entries: vec![Complex64::new(1.0, 0.0); n],
            mode: ModulusMode::UnitModulus,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn mode(&self) -> ModulusMode {
        self.mode
    }

    pub fn phases(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.arg()).collect()
    }

    /// Normalises every entry to unit modulus. Entries with modulus below
    /// `1e-12` become `1 + 0j`.
    pub fn project_unit_modulus(&self) -> BeamVector {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let m = e.norm();
                if m < 1e-12 {
                    Complex64::new(1.0, 0.0)
                } else {
                    e / m
                }
            })
            .collect();
        BeamVector {
            entries,
            mode: ModulusMode::UnitModulus,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BeamRepr {
    entries: Vec<[f64; 2]>,
    modulus_mode: ModulusMode,
}

impl TryFrom<BeamRepr> for BeamVector {
    type Error = Error;
    fn try_from(r: BeamRepr) -> Result<Self> {
        BeamVector::new(
            r.entries.iter().map(|c| Complex64::new(c[0], c[1])).collect(),
            r.modulus_mode,
        )
    }
}

impl From<BeamVector> for BeamRepr {
    fn from(b: BeamVector) -> Self {
        BeamRepr {
            entries: b.entries.iter().map(|c| [c.re, c.im]).collect(),
            modulus_mode: b.mode,
        }
    }
}

/// The reflection vectors of one frame.
///
/// `offload` is empty for Case 1 (the energy-transfer vector is reused),
/// holds one vector for Case 2, and one per offloading slot for Case 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beams {
    pub wpt: BeamVector,
    pub offload: Vec<BeamVector>,
}

impl Beams {
    pub fn shared(v: BeamVector) -> Self {
        Beams {
            wpt: v,
            offload: Vec::new(),
        }
    }

    pub fn split(wpt: BeamVector, offload: BeamVector) -> Self {
        Beams {
            wpt,
            offload: vec![offload],
        }
    }

    pub fn per_slot(wpt: BeamVector, offload: Vec<BeamVector>) -> Self {
        Beams { wpt, offload }
    }

    /// Vector used in offloading slot `slot` under `case`.
    pub fn offload_beam(&self, case: DibfCase, slot: usize) -> Result<&BeamVector> {
        match case {
            DibfCase::Case1 => Ok(&self.wpt),
            DibfCase::Case2 => self.offload.first().ok_or(Error::MissingBeams {
                expected: 1,
                got: 0,
            }),
            DibfCase::Case3 => self.offload.get(slot).ok_or(Error::MissingBeams {
                expected: slot + 1,
                got: self.offload.len(),
            }),
        }
    }

    /// Checks that enough vectors are present for `case` with `slots`
    /// offloading slots.
    pub fn check_case(&self, case: DibfCase, slots: usize) -> Result<()> {
        let need = match case {
            DibfCase::Case1 => 0,
            DibfCase::Case2 => 1,
            DibfCase::Case3 => slots,
        };
        if self.offload.len() < need {
            return Err(Error::MissingBeams {
                expected: need,
                got: self.offload.len(),
            });
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &BeamVector> {
        std::iter::once(&self.wpt).chain(self.offload.iter())
    }

    pub fn project_unit_modulus(&self) -> Beams {
        Beams {
            wpt: self.wpt.project_unit_modulus(),
            offload: self.offload.iter().map(|b| b.project_unit_modulus()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn modulus_invariants_enforced() {
        let half = Complex64::new(0.5, 0.0);
        assert!(BeamVector::new(vec![half], ModulusMode::UnitModulus).is_err());
        assert!(BeamVector::new(vec![half], ModulusMode::RelaxedDisk).is_ok());
        assert!(BeamVector::new(vec![Complex64::new(1.1, 0.0)], ModulusMode::RelaxedDisk).is_err());
    }

    #[test]
    fn projection_preserves_phase() {
        let v = BeamVector::new(
            vec![
                Complex64::from_polar(0.5, PI / 3.0),
                Complex64::new(0.0, 0.0),
                Complex64::from_polar(1.0, -1.0),
            ],
            ModulusMode::RelaxedDisk,
        )
        .unwrap();
        let p = v.project_unit_modulus();
        assert_eq!(p.mode(), ModulusMode::UnitModulus);
        assert!((p.entries()[0] - Complex64::from_polar(1.0, PI / 3.0)).norm() < 1e-15);
        assert_eq!(p.entries()[1], Complex64::new(1.0, 0.0));
        assert!((p.entries()[2] - v.entries()[2]).norm() < 1e-15);
        let again = p.project_unit_modulus();
        assert_eq!(again, p);
    }

    #[test]
    fn case_beam_lookup() {
        let b = Beams::shared(BeamVector::ones(2));
        assert!(b.offload_beam(DibfCase::Case1, 5).is_ok());
        assert!(b.offload_beam(DibfCase::Case2, 0).is_err());
        assert!(b.check_case(DibfCase::Case3, 2).is_err());
        let b = Beams::per_slot(BeamVector::ones(2), vec![BeamVector::ones(2); 2]);
        assert!(b.check_case(DibfCase::Case3, 2).is_ok());
        assert!(b.offload_beam(DibfCase::Case3, 2).is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let v = BeamVector::from_phases(&[0.3, -2.0]);
        let text = serde_json::to_string(&v).unwrap();
        let back: BeamVector = serde_json::from_str(&text).unwrap();
        assert!((back.entries()[1] - v.entries()[1]).norm() < 1e-15);
        let bad = r#"{"entries":[[2.0,0.0]],"modulus_mode":"relaxed_disk"}"#;
        assert!(serde_json::from_str::<BeamVector>(bad).is_err());
    }
}
