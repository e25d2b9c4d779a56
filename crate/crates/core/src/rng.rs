//! Named, independent random streams.
//!
//! A training run draws from three streams so that modes which skip the
//! grouping step still see the same initialization and data order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    DataOrder = 1,
    Grouping = 2,
    Dataset = 3,
    Noise = 4,
    Subsample = 5,
    Analysis = 6,
}

/// A ChaCha8 generator keyed by `seed` on the given stream id.
pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[derive(Clone, Debug)]
pub struct RngStreams {
    pub init: Rng,
    pub data_order: Rng,
    pub grouping: Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            init: stream(seed, Stream::Init),
            data_order: stream(seed, Stream::DataOrder),
            grouping: stream(seed, Stream::Grouping),
        }
    }
}
