//! Deterministic pseudo-randomness.
//!
//! Every stochastic choice in the crate (init draws, data order, masks,
//! perturbation directions) pulls from its own xoshiro256++ stream, derived
//! from a master seed plus a purpose label. Two runs with the same seeds are
//! bitwise identical; changing one purpose's label or seed leaves the other
//! streams untouched.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
}

/// xoshiro256++ stream. Construct via [`Stream::new`] with a master seed and
/// a purpose label such as `"init"`, `"data"`, `"perturb"`.
#[derive(Clone, Debug)]
pub struct Stream {
    s: [u64; 4],
    cached_normal: Option<f64>,
}

impl Stream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        let mut sm = SplitMix64::new(master_seed ^ fnv1a(label.as_bytes()));
        let mut s = [sm.next(), sm.next(), sm.next(), sm.next()];
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        Stream {
            s,
            cached_normal: None,
        }
    }

    /// Child stream for a numbered subtask (branch index, tensor index).
    pub fn substream(master_seed: u64, label: &str, index: u64) -> Self {
        let tag = fnv1a(label.as_bytes()) ^ index.wrapping_mul(0x9e3779b97f4a7c15);
        let mut sm = SplitMix64::new(master_seed ^ tag);
        let mut s = [sm.next(), sm.next(), sm.next(), sm.next()];
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        Stream {
            s,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [-scale, scale).
    pub fn uniform_symmetric(&mut self, scale: f64) -> f64 {
        scale * (2.0 * self.uniform() - 1.0)
    }

    /// Standard normal via Box-Muller. Draws two uniforms every other call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // 1 - u keeps the argument of ln strictly positive.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in [0, bound) without modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// k distinct indices drawn from 0..n, in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample_distinct: k > n");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
