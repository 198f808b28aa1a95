//! Real-input discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 kernel (the real transform
//! packs even/odd samples into a half-length complex FFT). Other lengths fall
//! back to a direct sum over a precomputed twiddle table, which is exact
//! enough for the small feature dimensions the model uses.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: C64) -> C64 {
        C64::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn conj(self) -> C64 {
        C64::new(self.re, -self.im)
    }
    fn scale(self, s: f64) -> C64 {
        C64::new(self.re * s, self.im * s)
    }
}

/// `exp(-2πi·k/n)` for `k` in `0..n`, computed independently per entry.
fn twiddle_table(n: usize) -> Vec<C64> {
    (0..n)
        .map(|k| {
            let theta = -2.0 * PI * k as f64 / n as f64;
            C64::new(theta.cos(), theta.sin())
        })
        .collect()
}

/// Complex FFT of a fixed length (unnormalised in both directions).
#[derive(Debug, Clone)]
struct ComplexFft {
    n: usize,
    table: Vec<C64>,
}

impl ComplexFft {
    fn new(n: usize) -> Self {
        Self {
            n,
            table: twiddle_table(n.max(1)),
        }
    }

    fn process(&self, buf: &mut [C64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.n);
        let n = self.n;
        if n <= 1 {
            return;
        }
        let tw = |idx: usize| {
            let w = self.table[idx % n];
            if inverse {
                w.conj()
            } else {
                w
            }
        };
        if !n.is_power_of_two() {
            let input = buf.to_vec();
            for (k, out) in buf.iter_mut().enumerate() {
                let mut acc = C64::default();
                for (j, &x) in input.iter().enumerate() {
                    acc = acc.add(x.mul(tw(j * k % n)));
                }
                *out = acc;
            }
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = tw(k * stride);
                    let a = buf[start + k];
                    let b = buf[start + k + half].mul(w);
                    buf[start + k] = a.add(b);
                    buf[start + k + half] = a.sub(b);
                }
            }
            len <<= 1;
        }
    }
}

/// Plan for real-input transforms of length `n` producing `n/2 + 1` bins.
#[derive(Debug, Clone)]
pub struct RealFft {
    n: usize,
    full: ComplexFft,
    half: Option<ComplexFft>,
    table: Vec<C64>,
}

impl RealFft {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "transform length must be positive");
        let half = (n >= 2 && n.is_multiple_of(2) && (n / 2).is_power_of_two())
            .then(|| ComplexFft::new(n / 2));
        Self {
            n,
            full: ComplexFft::new(n),
            half,
            table: twiddle_table(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of non-redundant frequency bins.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Hermitian multiplicity of bin `k`: 1 for DC and (even `n`) Nyquist, 2 otherwise.
    pub fn bin_weight(&self, k: usize) -> f64 {
        if k == 0 || (self.n.is_multiple_of(2) && k == self.n / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// `X_k = Σ_j x_j exp(-2πi jk/n)` for `k < bins`.
    pub fn forward(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let b = self.bins();
        debug_assert_eq!(x.len(), n);
        match &self.half {
            Some(half) => {
                let h = n / 2;
                let mut z: Vec<C64> = (0..h).map(|j| C64::new(x[2 * j], x[2 * j + 1])).collect();
                half.process(&mut z, false);
                for k in 0..b {
                    let zk = z[k % h];
                    let zc = z[(h - k % h) % h].conj();
                    let even = zk.add(zc).scale(0.5);
                    let diff = zk.sub(zc).scale(0.5);
                    // (zk - zc) / (2i) = -i * diff
                    let odd = C64::new(diff.im, -diff.re);
                    let xk = even.add(self.table[k % n].mul(odd));
                    re[k] = xk.re;
                    im[k] = xk.im;
                }
            }
            None => {
                for k in 0..b {
                    let mut acc = C64::default();
                    for (j, &v) in x.iter().enumerate() {
                        acc = acc.add(self.table[j * k % n].scale(v));
                    }
                    re[k] = acc.re;
                    im[k] = acc.im;
                }
            }
        }
        im[0] = 0.0;
        if n.is_multiple_of(2) {
            im[n / 2] = 0.0;
        }
    }

    /// Inverse transform of a half spectrum with Hermitian extension.
    ///
    /// The imaginary parts of the DC and Nyquist bins do not contribute.
    pub fn inverse(&self, re: &[f64], im: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut full = self.hermitian_extend(re, im);
        self.full.process(&mut full, true);
        let inv = 1.0 / n as f64;
        for (o, z) in out.iter_mut().zip(&full) {
            *o = z.re * inv;
        }
    }

    /// Adjoint of [`forward`](Self::forward): `g_j = Re Σ_{k<bins} G_k exp(2πi jk/n)`.
    pub fn forward_adjoint(&self, g_re: &[f64], g_im: &[f64], out: &mut [f64]) {
        let n = self.n;
        let b = self.bins();
        let mut buf = vec![C64::default(); n];
        for k in 0..b {
            buf[k] = C64::new(g_re[k], g_im[k]);
        }
        // The forward pass zeroes these imaginary parts, so they carry no signal.
        buf[0].im = 0.0;
        if n.is_multiple_of(2) {
            buf[n / 2].im = 0.0;
        }
        self.full.process(&mut buf, true);
        for (o, z) in out.iter_mut().zip(&buf) {
            *o = z.re;
        }
    }

    /// Adjoint of [`inverse`](Self::inverse): `(w_k / n) · forward(g)`.
    pub fn inverse_adjoint(&self, g: &[f64], re: &mut [f64], im: &mut [f64]) {
        self.forward(g, re, im);
        let inv = 1.0 / self.n as f64;
        for k in 0..self.bins() {
            let w = self.bin_weight(k) * inv;
            re[k] *= w;
            im[k] *= w;
        }
    }

    fn hermitian_extend(&self, re: &[f64], im: &[f64]) -> Vec<C64> {
        let n = self.n;
        let b = self.bins();
        let mut full = vec![C64::default(); n];
        for k in 0..b {
            full[k] = C64::new(re[k], im[k]);
        }
        full[0].im = 0.0;
        if n.is_multiple_of(2) {
            full[n / 2].im = 0.0;
        }
        for k in b..n {
            full[k] = full[n - k].conj();
        }
        full
    }
}
