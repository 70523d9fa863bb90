use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    DataError, Dataset, FrameDims, SegSequence, SubjectMeta, BACKGROUND, INNER_POOL, SIDE_POOL,
    WALL,
};
use crate::rng::{rng_for, tag};

/// Smallest frame side on which all four regions can be drawn.
const MIN_SIDE: usize = 8;
/// Contraction fractions are clipped to this range.
const MAX_CONTRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_subjects: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    /// Fraction of subjects drawn from the high-contraction mode.
    pub responder_fraction: f64,
    /// Label is 1 iff contraction ≥ threshold.
    pub threshold: f64,
    pub responder_mean: f64,
    pub non_responder_mean: f64,
    /// Standard deviation of each contraction mode; controls class overlap.
    pub mode_spread: f64,
    /// Per-pixel probability of replacement by a random class.
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_subjects: 73,
            n_frames: 8,
            height: 16,
            width: 16,
            n_classes: 4,
            responder_fraction: 0.6,
            threshold: 0.15,
            responder_mean: 0.30,
            non_responder_mean: 0.05,
            mode_spread: 0.03,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Heavily overlapping contraction modes, for stress runs.
    pub fn high_overlap() -> Self {
        Self {
            responder_mean: 0.2,
            non_responder_mean: 0.1,
            mode_spread: 0.08,
            ..Self::default()
        }
    }

    pub fn dims(&self) -> FrameDims {
        FrameDims {
            n_frames: self.n_frames,
            height: self.height,
            width: self.width,
            n_classes: self.n_classes,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        if self.n_subjects < 4 {
            return err(format!("n_subjects = {} (need at least 4)", self.n_subjects));
        }
        if self.n_frames < 2 {
            return err(format!("n_frames = {} (need at least 2)", self.n_frames));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return err(format!(
                "{}x{} grid is too small to render shapes (min {MIN_SIDE}x{MIN_SIDE})",
                self.height, self.width
            ));
        }
        if self.n_classes < 4 || self.n_classes > u8::MAX as usize + 1 {
            return err(format!("n_classes = {} (need 4..=256)", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return err(format!("threshold {} outside [0, 1)", self.threshold));
        }
        for (name, v) in [
            ("responder_fraction", self.responder_fraction),
            ("noise", self.noise),
            ("responder_mean", self.responder_mean),
            ("non_responder_mean", self.non_responder_mean),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.mode_spread >= 0.0 && self.mode_spread.is_finite()) {
            return err(format!("mode_spread = {}", self.mode_spread));
        }
        Ok(())
    }
}

/// Per-subject shape parameters, fixed across frames.
struct Anatomy {
    /// Pixel indices sorted by distance from the pool centre.
    order: Vec<usize>,
    pool_area: usize,
    wall_area: usize,
    side_pool: Vec<usize>,
}

fn anatomy<R: Rng>(cfg: &GenConfig, rng: &mut R) -> Anatomy {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let n = cfg.height * cfg.width;
    let cx = w * 0.58 + rng.random_range(-0.5..0.5);
    let cy = h * 0.5 + rng.random_range(-0.5..0.5);
    let pool_area = ((n as f64) * rng.random_range(0.09..0.12)).round() as usize;
    let wall_area = ((n as f64) * rng.random_range(0.10..0.13)).round() as usize;

    let centre_of = |i: usize| ((i % cfg.width) as f64 + 0.5, (i / cfg.width) as f64 + 0.5);
    let dist2 = |i: usize, x: f64, y: f64| {
        let (px, py) = centre_of(i);
        (px - x).powi(2) + (py - y).powi(2)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist2(a, cx, cy).total_cmp(&dist2(b, cx, cy)).then(a.cmp(&b)));

    let outer = ((pool_area + wall_area) as f64 / std::f64::consts::PI).sqrt();
    let side_r = ((n as f64) * rng.random_range(0.05..0.07) / std::f64::consts::PI).sqrt();
    let (sx, sy) = (cx - outer - 0.6 * side_r, cy + rng.random_range(-0.5..0.5));
    let side_pool = (0..n).filter(|&i| dist2(i, sx, sy) <= side_r * side_r).collect();

    Anatomy {
        order,
        pool_area,
        wall_area,
        side_pool,
    }
}

/// Renders one noise-free frame with `pool` inner-pool pixels.
fn render(anat: &Anatomy, pool: usize, frame: &mut [u8]) {
    frame.fill(BACKGROUND);
    for &i in &anat.side_pool {
        frame[i] = SIDE_POOL;
    }
    for (rank, &i) in anat.order.iter().take(pool + anat.wall_area).enumerate() {
        frame[i] = if rank < pool { INNER_POOL } else { WALL };
    }
}

/// Inner-pool area at frame `t` for contraction `f`. Non-increasing in `t`.
fn pool_area_at(initial: usize, f: f64, t: usize, n_frames: usize) -> usize {
    let s = t as f64 / (n_frames - 1) as f64;
    (initial as f64 * (1.0 - f * s)).round() as usize
}

fn generate_subject(cfg: &GenConfig, index: usize, high_mode: bool) -> SegSequence {
    let mut rng = rng_for(cfg.seed, &[tag::GENERATE, index as u64]);
    let anat = anatomy(cfg, &mut rng);
    let mean = if high_mode {
        cfg.responder_mean
    } else {
        cfg.non_responder_mean
    };
    let f = if cfg.mode_spread > 0.0 {
        Normal::new(mean, cfg.mode_spread)
            .expect("spread validated")
            .sample(&mut rng)
    } else {
        mean
    }
    .clamp(0.0, MAX_CONTRACTION);

    let n = cfg.height * cfg.width;
    let mut pixels = vec![BACKGROUND; cfg.n_frames * n];
    for (t, frame) in pixels.chunks_mut(n).enumerate() {
        render(&anat, pool_area_at(anat.pool_area, f, t, cfg.n_frames), frame);
    }
    if cfg.noise > 0.0 {
        for v in pixels.iter_mut() {
            if rng.random::<f64>() < cfg.noise {
                *v = rng.random_range(0..cfg.n_classes) as u8;
            }
        }
    }
    SegSequence {
        id: format!("S{index:03}"),
        label: f >= cfg.threshold,
        meta: SubjectMeta {
            contraction: f,
            noise: cfg.noise,
        },
        n_frames: cfg.n_frames,
        height: cfg.height,
        width: cfg.width,
        pixels,
    }
}

/// Generates `cfg.n_subjects` labelled sequences. Deterministic in
/// `cfg.seed`; each subject draws from its own stream.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let n_high = (cfg.responder_fraction * cfg.n_subjects as f64).round() as usize;
    let mut modes: Vec<bool> = (0..cfg.n_subjects).map(|i| i < n_high).collect();
    modes.shuffle(&mut rng_for(cfg.seed, &[tag::GENERATE]));
    let subjects = modes
        .iter()
        .enumerate()
        .map(|(i, &high)| generate_subject(cfg, i, high))
        .collect();
    Ok(Dataset {
        dims: cfg.dims(),
        seed: cfg.seed,
        subjects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = GenConfig {
            seed: 42,
            ..GenConfig::default()
        };
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = GenConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn zero_threshold_labels_everyone_positive() {
        let cfg = GenConfig {
            threshold: 0.0,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.subjects.iter().all(|s| s.label));
    }

    #[test]
    fn default_responder_fraction_is_close_to_configured() {
        for seed in 0..10 {
            let cfg = GenConfig {
                seed,
                ..GenConfig::default()
            };
            let ds = generate_dataset(&cfg).unwrap();
            let frac = ds.positives() as f64 / ds.len() as f64;
            assert!((frac - cfg.responder_fraction).abs() <= 0.1, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn pool_area_contracts_monotonically_to_one_minus_f() {
        for seed in 0..5 {
            let cfg = GenConfig {
                noise: 0.0,
                seed,
                ..GenConfig::default()
            };
            for s in generate_dataset(&cfg).unwrap().subjects {
                let areas = s.pool_areas();
                assert!(areas.windows(2).all(|w| w[1] <= w[0]), "{areas:?}");
                let expected = (1.0 - s.meta.contraction) * areas[0] as f64;
                let last = *areas.last().unwrap() as f64;
                assert!((last - expected).abs() <= 2.0, "{} vs {expected}", last);
            }
        }
    }

    #[test]
    fn all_four_regions_are_present() {
        let cfg = GenConfig {
            noise: 0.0,
            ..GenConfig::default()
        };
        for s in generate_dataset(&cfg).unwrap().subjects {
            for class in [BACKGROUND, INNER_POOL, WALL, SIDE_POOL] {
                assert!(s.frame(0).contains(&class), "{} lacks class {class}", s.id);
            }
        }
    }

    #[test]
    fn rejects_small_grids_and_bad_thresholds() {
        let small = GenConfig {
            height: 6,
            ..GenConfig::default()
        };
        assert!(matches!(generate_dataset(&small), Err(DataError::Config(_))));
        let bad = GenConfig {
            threshold: 1.0,
            ..GenConfig::default()
        };
        assert!(generate_dataset(&bad).is_err());
        let few = GenConfig {
            n_subjects: 3,
            ..GenConfig::default()
        };
        assert!(generate_dataset(&few).is_err());
    }

    #[test]
    fn minimum_grid_renders() {
        let cfg = GenConfig {
            height: 8,
            width: 8,
            noise: 0.0,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.subjects.iter().all(|s| s.pool_areas()[0] > 0));
    }
}
