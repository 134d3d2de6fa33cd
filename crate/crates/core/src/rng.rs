//! Counter-based random streams.
//!
//! Every noise draw is generated from its own ChaCha8 stream whose key is
//! built from the draw's coordinates, so a draw depends only on where it sits
//! in the training schedule and never on which worker produced it or when.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Position of one noise draw in a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DrawCoordinates {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
    /// Position of the example inside its mini-batch.
    pub example: u32,
    pub sample: u32,
    /// Index of the noise layer inside the network spec.
    pub layer: u32,
}

impl DrawCoordinates {
    pub fn new(seed: u64, epoch: u64, batch: u64, example: u32, sample: u32) -> Self {
        DrawCoordinates {
            seed,
            epoch,
            batch,
            example,
            sample,
            layer: 0,
        }
    }

    pub fn with_layer(self, layer: u32) -> Self {
        DrawCoordinates { layer, ..self }
    }

    /// Independent stream for these coordinates.
    pub fn stream(&self) -> ChaCha8Rng {
        keyed_stream(
            [
                self.seed,
                self.epoch,
                self.batch,
                ((self.example as u64) << 32) | self.sample as u64,
            ],
            STREAM_NOISE | self.layer as u64,
        )
    }
}

const STREAM_NOISE: u64 = 0;
const STREAM_SHUFFLE: u64 = 1 << 40;
const STREAM_INIT: u64 = 2 << 40;
const STREAM_DATA: u64 = 3 << 40;

/// ChaCha8 keyed by four words with a selectable stream id.
pub fn keyed_stream(words: [u64; 4], stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Stream used to permute the training set at the start of `epoch`.
pub fn shuffle_stream(seed: u64, epoch: u64) -> ChaCha8Rng {
    keyed_stream([seed, epoch, 0, 0], STREAM_SHUFFLE)
}

/// Stream used for parameter initialization.
pub fn init_stream(seed: u64) -> ChaCha8Rng {
    keyed_stream([seed, 0, 0, 0], STREAM_INIT)
}

/// Stream used by the synthetic dataset generators.
pub fn data_stream(seed: u64, part: u64) -> ChaCha8Rng {
    keyed_stream([seed, part, 0, 0], STREAM_DATA)
}
