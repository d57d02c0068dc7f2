//! Seedable noise for the population, androgen and event-time processes.
//!
//! Every process draws from its own ChaCha8 stream derived from one 64-bit seed,
//! so a run is bit-reproducible from `(seed, NoiseConfig)` and streams never
//! share state. Population and androgen noise is realised as one Gaussian draw
//! per integration step, held constant over that step (no `1/sqrt(dt)` scaling).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Std of the HSC population noise.
    pub std1: f64,
    /// Std of the CRC population noise.
    pub std2: f64,
    /// Std of the androgen noise; zero disables it.
    pub std3: f64,
    /// Std of an independent uniform draw that replaces the population noise
    /// in the event-time derivative denominator. Zero (the default) uses the
    /// noise values actually realized at the event.
    pub event_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            std1: 0.001,
            std2: 0.001,
            std3: 0.0,
            event_std: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        NoiseConfig {
            std1: 0.0,
            std2: 0.0,
            std3: 0.0,
            event_std: 0.0,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.std1 == 0.0 && self.std2 == 0.0 && self.std3 == 0.0 && self.event_std == 0.0
    }

    /// True when the state trajectory itself is noise-free.
    pub fn path_is_deterministic(&self) -> bool {
        self.std1 == 0.0 && self.std2 == 0.0 && self.std3 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("std1", self.std1),
            ("std2", self.std2),
            ("std3", self.std3),
            ("event_std", self.event_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("noise.{name} >= 0 violated")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Hsc,
    Crc,
    Androgen,
}

/// Independent noise substreams for one sample path.
#[derive(Clone, Debug)]
pub struct NoiseStreams {
    seed: u64,
    config: NoiseConfig,
    hsc: ChaCha8Rng,
    crc: ChaCha8Rng,
    androgen: ChaCha8Rng,
    event: ChaCha8Rng,
}

fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn make_streams(seed: u64, config: NoiseConfig) -> Result<NoiseStreams> {
    config.validate()?;
    Ok(NoiseStreams {
        seed,
        config,
        hsc: substream(seed, 1),
        crc: substream(seed, 2),
        androgen: substream(seed, 3),
        event: substream(seed, 4),
    })
}

impl NoiseStreams {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    /// One N(0, std^2) draw for the given channel. A zero std returns 0 without
    /// touching the stream.
    pub fn sample_step(&mut self, channel: Channel) -> f64 {
        let (rng, std) = match channel {
            Channel::Hsc => (&mut self.hsc, self.config.std1),
            Channel::Crc => (&mut self.crc, self.config.std2),
            Channel::Androgen => (&mut self.androgen, self.config.std3),
        };
        if std == 0.0 {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        std * z
    }

    /// Draws for all three channels of one integration step.
    pub fn step_draws(&mut self) -> [f64; 3] {
        [
            self.sample_step(Channel::Hsc),
            self.sample_step(Channel::Crc),
            self.sample_step(Channel::Androgen),
        ]
    }

    /// Uniform draw on `[-a, a]` with `a = sqrt(3) * event_std`, so the draw has
    /// standard deviation `event_std`.
    pub fn sample_event_noise(&mut self) -> f64 {
        let std = self.config.event_std;
        if std == 0.0 {
            return 0.0;
        }
        let half_width = 3f64.sqrt() * std;
        let u: f64 = self.event.random();
        half_width * (2.0 * u - 1.0)
    }
}
