//! Canonical-embedding encoder: real slot vectors (N/2 slots) to integer
//! polynomial coefficients at a scale, and back. The slot ordering follows
//! the 5^j rotation group of the 2N-th cyclotomic, evaluated with a
//! size-N/2 special FFT.

#[derive(Debug, Clone, Copy, PartialEq)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        C64 { re, im }
    }
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: C64) -> C64 {
        C64::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Embedding tables for ring dimension `n`.
#[derive(Debug, Clone)]
pub struct Embedding {
    n: usize,
    rot_group: Vec<usize>,
    // ksi[k] = exp(2 pi i k / 2n)
    ksi: Vec<C64>,
}

impl Embedding {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 4);
        let m = 2 * n;
        let slots = n / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut five = 1usize;
        for _ in 0..slots {
            rot_group.push(five);
            five = five * 5 % m;
        }
        let ksi = (0..m)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                C64::new(t.cos(), t.sin())
            })
            .collect();
        Embedding { n, rot_group, ksi }
    }

    pub fn slots(&self) -> usize {
        self.n / 2
    }

    fn bit_reverse_permute(vals: &mut [C64]) {
        let n = vals.len();
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    /// Slot values -> embedding preimage (in-place special inverse FFT).
    fn special_ifft(&self, vals: &mut [C64]) {
        let size = vals.len();
        let m = 2 * self.n;
        let mut len = size;
        while len >= 1 {
            let lenh = len >> 1;
            let lenq = len << 2;
            for i in (0..size).step_by(len.max(1)) {
                for j in 0..lenh {
                    let idx = (lenq - self.rot_group[j] % lenq) * m / lenq;
                    let u = vals[i + j].add(vals[i + j + lenh]);
                    let v = vals[i + j].sub(vals[i + j + lenh]).mul(self.ksi[idx % m]);
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            if len == 1 {
                break;
            }
            len >>= 1;
        }
        Self::bit_reverse_permute(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            v.re *= inv;
            v.im *= inv;
        }
    }

    /// Embedding preimage -> slot values (in-place special FFT).
    fn special_fft(&self, vals: &mut [C64]) {
        let size = vals.len();
        let m = 2 * self.n;
        Self::bit_reverse_permute(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            let lenq = len << 2;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = self.rot_group[j] % lenq * m / lenq;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh].mul(self.ksi[idx % m]);
                    vals[i + j] = u.add(v);
                    vals[i + j + lenh] = u.sub(v);
                }
            }
            len <<= 1;
        }
    }

    /// Real slot values (length <= N/2, zero padded) to signed integer
    /// coefficients at `scale`.
    pub fn encode(&self, values: &[f64], scale: f64) -> Vec<i64> {
        let slots = self.slots();
        assert!(values.len() <= slots, "at most N/2 slots");
        let mut z: Vec<C64> = (0..slots)
            .map(|i| C64::new(values.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.special_ifft(&mut z);
        let mut coeffs = vec![0i64; self.n];
        for i in 0..slots {
            coeffs[i] = (z[i].re * scale).round() as i64;
            coeffs[i + slots] = (z[i].im * scale).round() as i64;
        }
        coeffs
    }

    /// Signed coefficients at `scale` back to N/2 real slot values.
    pub fn decode(&self, coeffs: &[i64], scale: f64) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n);
        let slots = self.slots();
        let mut z: Vec<C64> = (0..slots)
            .map(|i| {
                C64::new(coeffs[i] as f64 / scale, coeffs[i + slots] as f64 / scale)
            })
            .collect();
        self.special_fft(&mut z);
        z.iter().map(|c| c.re).collect()
    }
}
