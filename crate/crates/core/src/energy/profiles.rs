//! Daily demand and solar shapes with multiplicative triangular noise.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Triangular};

use crate::error::{Error, Result};

use super::grid::ShapeFiles;

pub const STEPS_PER_DAY: usize = 8;
pub const HOURS_PER_STEP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shapes {
    pub consumer_demand: [f64; STEPS_PER_DAY],
    pub prosumer_demand: [f64; STEPS_PER_DAY],
    pub solar: [f64; STEPS_PER_DAY],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayProfile {
    pub consumer_demand: [f64; STEPS_PER_DAY],
    pub prosumer_demand: [f64; STEPS_PER_DAY],
    pub solar: [f64; STEPS_PER_DAY],
}

pub fn read_shape(path: &Path) -> Result<[f64; STEPS_PER_DAY]> {
    if !path.exists() {
        return Err(Error::Invalid(format!("missing shape file {}", path.display())));
    }
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = [f64::NAN; STEPS_PER_DAY];
    for rec in rd.records() {
        let rec = rec?;
        let step: usize = rec.get(0).unwrap_or("").trim().parse().map_err(|_| Error::Parse(format!("{}: bad step", path.display())))?;
        let v: f64 = rec.get(1).unwrap_or("").trim().parse().map_err(|_| Error::Parse(format!("{}: bad value", path.display())))?;
        if step >= STEPS_PER_DAY || !v.is_finite() {
            return Err(Error::Parse(format!("{}: step {step} value {v}", path.display())));
        }
        out[step] = v;
    }
    if out.iter().any(|x| x.is_nan()) {
        return Err(Error::Parse(format!("{}: needs {STEPS_PER_DAY} steps", path.display())));
    }
    Ok(out)
}

impl Shapes {
    pub fn load(files: &ShapeFiles) -> Result<Self> {
        Ok(Shapes {
            consumer_demand: read_shape(&files.consumer_demand)?,
            prosumer_demand: read_shape(&files.prosumer_demand)?,
            solar: read_shape(&files.solar)?,
        })
    }

    pub fn base(&self) -> DayProfile {
        DayProfile {
            consumer_demand: self.consumer_demand,
            prosumer_demand: self.prosumer_demand,
            solar: self.solar,
        }
    }

    /// Consumer shape rescaled to mean one, used to time-shape background load.
    pub fn background(&self) -> [f64; STEPS_PER_DAY] {
        let m = self.consumer_demand.iter().sum::<f64>() / STEPS_PER_DAY as f64;
        let mut out = self.consumer_demand;
        if m != 0.0 {
            out.iter_mut().for_each(|x| *x /= m);
        }
        out
    }
}

/// Distribution of the per-step scale factor: lower 0.8, upper 1.2, mode 1.
pub fn noise_distribution() -> Triangular<f64> {
    Triangular::new(0.8, 1.2, 1.0).expect("valid triangular parameters")
}

/// Stream seed for one bus on one day.
pub fn stream_seed(day_seed: u64, bus: usize) -> u64 {
    let mut z = day_seed ^ (bus as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Base shapes times independent factors per series and step.
pub fn profiles(shapes: &Shapes, day_seed: u64, bus: usize, noise: bool) -> DayProfile {
    let mut p = shapes.base();
    if !noise {
        return p;
    }
    let dist = noise_distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(day_seed, bus));
    for series in [&mut p.consumer_demand, &mut p.prosumer_demand, &mut p.solar] {
        for x in series.iter_mut() {
            *x *= dist.sample(&mut rng);
        }
    }
    p
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::energy::grid::tests::shipped_grid_file;

    pub(crate) fn shipped_shapes() -> Shapes {
        Shapes::load(shipped_grid_file().profiles.as_ref().unwrap()).unwrap()
    }

    #[test]
    fn noise_off_is_base_shape() {
        let s = shipped_shapes();
        assert_eq!(profiles(&s, 7, 1, false), s.base());
    }

    #[test]
    fn noise_factor_mean_is_one() {
        let dist = noise_distribution();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n).map(|_| dist.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((0.995..=1.005).contains(&mean), "{mean}");
    }

    #[test]
    fn seeded_profiles_repeat() {
        let s = shipped_shapes();
        assert_eq!(profiles(&s, 11, 0, true), profiles(&s, 11, 0, true));
        assert_ne!(profiles(&s, 11, 0, true), profiles(&s, 11, 1, true));
        let p = profiles(&s, 5, 2, true);
        for (x, b) in p.consumer_demand.iter().zip(&s.consumer_demand) {
            assert!(*x >= 0.8 * b - 1e-15 && *x <= 1.2 * b + 1e-15);
        }
    }

    #[test]
    fn missing_or_short_files() {
        assert!(read_shape(Path::new("/nonexistent/shape.csv")).unwrap_err().to_string().contains("missing"));
        let dir = std::env::temp_dir().join(format!("sgame-shape-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("short.csv");
        std::fs::write(&f, "step,value\n0,1\n").unwrap();
        assert!(read_shape(&f).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn background_has_unit_mean() {
        let b = shipped_shapes().background();
        assert!((b.iter().sum::<f64>() / 8.0 - 1.0).abs() < 1e-12);
    }
}
