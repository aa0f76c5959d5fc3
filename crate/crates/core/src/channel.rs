//! Block-fading uplink channels.
//!
//! One complex circularly-symmetric Gaussian coefficient per (device, round),
//! normalised to E[|h|²] = 1 and held fixed for the whole round. Devices
//! pre-compensate the phase, so the server sees the modulus as a real gain.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::rng::{std_normal, Purpose, SeedPolicy};

/// Draws with modulus below this are rejected and redrawn.
pub const MIN_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    num_devices: usize,
    num_rounds: usize,
    // round-major: index = t * K + k
    coeffs: Vec<Complex64>,
    magnitudes: Vec<f64>,
}

/// One row of the channel CSV dump.
#[derive(Debug, Serialize, Deserialize)]
struct ChannelRow {
    round: usize,
    device: usize,
    re: f64,
    im: f64,
}

impl ChannelState {
    pub fn from_coefficients(
        num_devices: usize,
        num_rounds: usize,
        coeffs: Vec<Complex64>,
    ) -> Result<Self> {
        if coeffs.len() != num_devices * num_rounds {
            return Err(Error::dim(format!(
                "{} coefficients for {num_devices} devices x {num_rounds} rounds",
                coeffs.len()
            )));
        }
        let magnitudes: Vec<f64> = coeffs.iter().map(|h| h.norm()).collect();
        if let Some(i) = magnitudes.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Singular {
                device: i % num_devices.max(1),
            });
        }
        Ok(Self {
            num_devices,
            num_rounds,
            coeffs,
            magnitudes,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn num_rounds(&self) -> usize {
        self.num_rounds
    }

    pub fn coefficient(&self, device: usize, round: usize) -> Result<Complex64> {
        self.check(device, round)?;
        Ok(self.coeffs[round * self.num_devices + device])
    }

    /// |h_k^(t)|, the real gain left after phase compensation.
    pub fn effective_gain(&self, device: usize, round: usize) -> Result<f64> {
        self.check(device, round)?;
        Ok(self.magnitudes[round * self.num_devices + device])
    }

    /// All K gains of one round.
    pub fn gains(&self, round: usize) -> Result<&[f64]> {
        if round >= self.num_rounds {
            return Err(Error::Index {
                what: "round",
                index: round,
                len: self.num_rounds,
            });
        }
        let k = self.num_devices;
        Ok(&self.magnitudes[round * k..(round + 1) * k])
    }

    fn check(&self, device: usize, round: usize) -> Result<()> {
        if device >= self.num_devices {
            return Err(Error::Index {
                what: "device",
                index: device,
                len: self.num_devices,
            });
        }
        if round >= self.num_rounds {
            return Err(Error::Index {
                what: "round",
                index: round,
                len: self.num_rounds,
            });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in 0..self.num_rounds {
            for k in 0..self.num_devices {
                let h = self.coeffs[t * self.num_devices + k];
                out.serialize(ChannelRow {
                    round: t,
                    device: k,
                    re: h.re,
                    im: h.im,
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Restores a dump written by [`ChannelState::write_csv`]. Rows may come in
    /// any order but every (round, device) cell must appear exactly once.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: ChannelRow = row?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Empty("channel csv"));
        }
        let num_rounds = rows.iter().map(|r| r.round).max().unwrap_or(0) + 1;
        let num_devices = rows.iter().map(|r| r.device).max().unwrap_or(0) + 1;
        let mut cells: Vec<Option<Complex64>> = vec![None; num_rounds * num_devices];
        for r in rows {
            let slot = &mut cells[r.round * num_devices + r.device];
            if slot.is_some() {
                return Err(Error::dim(format!(
                    "duplicate channel entry round {} device {}",
                    r.round, r.device
                )));
            }
            *slot = Some(Complex64::new(r.re, r.im));
        }
        let coeffs = cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::dim(format!(
                        "missing channel entry round {} device {}",
                        i / num_devices,
                        i % num_devices
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_coefficients(num_devices, num_rounds, coeffs)
    }
}

/// Draws K×T i.i.d. CN(0, 1) coefficients, each from its own
/// `(Channel, device, round)` substream.
pub fn draw_channels(cfg: &SystemConfig, seeds: &SeedPolicy) -> ChannelState {
    let (k_n, t_n) = (cfg.num_devices, cfg.num_rounds);
    let mut coeffs = Vec::with_capacity(k_n * t_n);
    for t in 0..t_n {
        for k in 0..k_n {
            coeffs.push(draw_one(seeds, k, t));
        }
    }
    ChannelState::from_coefficients(k_n, t_n, coeffs).expect("draws are nonzero")
}

fn draw_one(seeds: &SeedPolicy, device: usize, round: usize) -> Complex64 {
    let mut rng = seeds.stream(Purpose::Channel, device as u64, round as u64);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    loop {
        let h = Complex64::new(scale * std_normal(&mut rng), scale * std_normal(&mut rng));
        if h.norm() >= MIN_GAIN {
            return h;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(k: usize, t: usize) -> SystemConfig {
        SystemConfig {
            num_devices: k,
            num_rounds: t,
            ..SystemConfig::reference(0.0)
        }
        .with_kappa(0.0)
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = small_cfg(2, 3);
        let a = draw_channels(&cfg, &SeedPolicy::new(5));
        let b = draw_channels(&cfg, &SeedPolicy::new(5));
        assert_eq!(a, b);
        assert_eq!(a.coeffs.len(), 6);
        assert_ne!(a, draw_channels(&cfg, &SeedPolicy::new(6)));
    }

    #[test]
    fn cell_independent_of_grid_shape() {
        // device 1 / round 2 is the same draw whether K = 2 or K = 7
        let a = draw_channels(&small_cfg(2, 3), &SeedPolicy::new(11));
        let b = draw_channels(&small_cfg(7, 5), &SeedPolicy::new(11));
        assert_eq!(a.coefficient(1, 2).unwrap(), b.coefficient(1, 2).unwrap());
    }

    #[test]
    fn gain_is_modulus() {
        let s = ChannelState::from_coefficients(
            3,
            1,
            vec![
                Complex64::new(3.0, 4.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.6, -0.8),
            ],
        )
        .unwrap();
        assert_eq!(s.effective_gain(0, 0).unwrap(), 5.0);
        assert_eq!(s.effective_gain(1, 0).unwrap(), 1.0);
        assert!((s.effective_gain(2, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(s.effective_gain(3, 0), Err(Error::Index { .. })));
        assert!(matches!(s.effective_gain(0, 1), Err(Error::Index { .. })));
    }

    #[test]
    fn zero_coefficient_rejected() {
        let err = ChannelState::from_coefficients(2, 1, vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert!(matches!(err, Err(Error::Singular { device: 1 })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = draw_channels(&small_cfg(4, 3), &SeedPolicy::new(2));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,device,re,im\n"));
        let back = ChannelState::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_missing_cell_rejected() {
        let text = "round,device,re,im\n0,0,1.0,0.0\n1,1,1.0,0.0\n";
        assert!(ChannelState::read_csv(text.as_bytes()).is_err());
    }
}
