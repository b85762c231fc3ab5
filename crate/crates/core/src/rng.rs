use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Embedding,
    Init,
    Shuffle(usize),
    Dropout(usize),
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Embedding => 1,
            Stream::Init => 2,
            Stream::Shuffle(epoch) => 0x100 + 2 * epoch as u64,
            Stream::Dropout(epoch) => 0x101 + 2 * epoch as u64,
            Stream::Custom(k) => 1 << 40 | k,
        }
    }
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
