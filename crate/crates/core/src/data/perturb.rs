use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::SegSequence;

/// Produces plausible alternative inputs for a subject.
pub trait InputSampler {
    fn sample(&self, record: &SegSequence, rng: &mut ChaCha8Rng) -> SegSequence;
}

impl<F> InputSampler for F
where
    F: Fn(&SegSequence, &mut ChaCha8Rng) -> SegSequence,
{
    fn sample(&self, record: &SegSequence, rng: &mut ChaCha8Rng) -> SegSequence {
        self(record, rng)
    }
}

/// Returns the record unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentitySampler;

impl InputSampler for IdentitySampler {
    fn sample(&self, record: &SegSequence, _rng: &mut ChaCha8Rng) -> SegSequence {
        record.clone()
    }
}

/// [`perturb_input`] with a fixed reassignment probability.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryJitter {
    p: f64,
}

impl BoundaryJitter {
    pub fn new(p: f64) -> Option<Self> {
        (0.0..=1.0).contains(&p).then_some(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl InputSampler for BoundaryJitter {
    fn sample(&self, record: &SegSequence, rng: &mut ChaCha8Rng) -> SegSequence {
        perturb_input(record, self.p, rng)
    }
}

/// Distinct classes among the 4-neighbours of pixel `i` that differ from
/// its own class, in up/left/right/down order.
fn foreign_neighbours(frame: &[u8], width: usize, i: usize, out: &mut Vec<u8>) {
    out.clear();
    let (x, y) = (i % width, i / width);
    let height = frame.len() / width;
    let own = frame[i];
    let mut push = |j: usize| {
        let c = frame[j];
        if c != own && !out.contains(&c) {
            out.push(c);
        }
    };
    if y > 0 {
        push(i - width);
    }
    if x > 0 {
        push(i - 1);
    }
    if x + 1 < width {
        push(i + 1);
    }
    if y + 1 < height {
        push(i + width);
    }
}

/// Marks pixels with at least one 4-neighbour of a different class.
pub fn boundary_mask(frame: &[u8], width: usize) -> Vec<bool> {
    let mut buf = Vec::with_capacity(4);
    (0..frame.len())
        .map(|i| {
            foreign_neighbours(frame, width, i, &mut buf);
            !buf.is_empty()
        })
        .collect()
}

/// Boundary jitter: every pixel that touches a different class is, with
/// probability `p`, reassigned to one of those neighbouring classes chosen
/// uniformly. Boundaries are taken from the unperturbed frame. Interior
/// pixels, frame count, geometry and label are untouched.
///
/// # Panics
/// If `p` is outside `[0, 1]`.
pub fn perturb_input<R: Rng>(record: &SegSequence, p: f64, rng: &mut R) -> SegSequence {
    assert!((0.0..=1.0).contains(&p), "jitter probability {p} outside [0, 1]");
    let mut out = record.clone();
    let width = record.width();
    let mut buf = Vec::with_capacity(4);
    for t in 0..record.n_frames() {
        let src = record.frame(t);
        let dst = out.frame_mut(t);
        for i in 0..src.len() {
            foreign_neighbours(src, width, i, &mut buf);
            if buf.is_empty() {
                continue;
            }
            if rng.random::<f64>() < p {
                dst[i] = buf[rng.random_range(0..buf.len())];
            }
        }
    }
    out
}
