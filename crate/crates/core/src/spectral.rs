//! Frequency-domain modality fusion.
//!
//! Each modality is projected to the shared `d`-dim space, transformed with a
//! real FFT along the feature axis, and filtered by a learnable complex
//! filter of `d/2 + 1` bins shared across items. The fused spectrum is the
//! point-wise product of the modality spectra, filtered once more.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::diffcore::{
    xavier_uniform, ComplexTensor, ParamId, ParamStore, RealFft, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::ingest::Modality;

/// Half-width of the uniform perturbation around `1 + 0i` at filter init.
pub const FILTER_INIT_NOISE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalityParams {
    pub modality: Modality,
    pub input_dim: usize,
    /// `d x d_m`, applied as `E W^T`.
    pub weight: ParamId,
    /// `1 x d`.
    pub bias: ParamId,
    /// Complex `1 x B`.
    pub filter: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectralParams {
    pub dim: usize,
    pub modalities: Vec<ModalityParams>,
    /// Complex `1 x B`, applied to the cross-modal product.
    pub fusion_filter: ParamId,
}

/// Near-identity complex filter.
pub fn init_filter<R: Rng + ?Sized>(bins: usize, rng: &mut R) -> ComplexTensor {
    let mut data = Vec::with_capacity(2 * bins);
    for _ in 0..bins {
        data.push(1.0 + rng.random_range(-FILTER_INIT_NOISE..=FILTER_INIT_NOISE));
        data.push(rng.random_range(-FILTER_INIT_NOISE..=FILTER_INIT_NOISE));
    }
    ComplexTensor::new(vec![1, bins], data).expect("finite filter init")
}

pub fn num_bins(d: usize) -> usize {
    d / 2 + 1
}

impl SpectralParams {
    /// Registers projection, bias and filter parameters for each modality.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        modalities: &[(Modality, usize)],
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "embedding dimension must be >= 2, got {dim}"
            )));
        }
        if modalities.len() < 2 {
            return Err(Error::Config(
                "spectral fusion needs at least two modalities".into(),
            ));
        }
        let bins = num_bins(dim);
        let mut out = Vec::with_capacity(modalities.len());
        for &(modality, input_dim) in modalities {
            let name = modality.name();
            let weight = store.add_real(
                &format!("spectral.{name}.weight"),
                xavier_uniform(&[dim, input_dim], rng)?,
            );
            let bias = store.add_real(&format!("spectral.{name}.bias"), Tensor::zeros(&[1, dim]));
            let filter =
                store.add_complex(&format!("spectral.{name}.filter"), init_filter(bins, rng));
            out.push(ModalityParams {
                modality,
                input_dim,
                weight,
                bias,
                filter,
            });
        }
        let fusion_filter = store.add_complex("spectral.fusion.filter", init_filter(bins, rng));
        Ok(Self {
            dim,
            modalities: out,
            fusion_filter,
        })
    }

    pub fn filter_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.modalities.iter().map(|m| m.filter).collect();
        ids.push(self.fusion_filter);
        ids
    }
}

/// Real and imaginary parts of a spectrum recorded on a tape, each `rows x B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spectrum {
    pub re: Var,
    pub im: Var,
}

/// `H = E W^T + b`.
pub fn project_modality(
    tape: &mut Tape,
    store: &ParamStore,
    features: Var,
    p: &ModalityParams,
) -> Result<Var> {
    if tape.shape(features)[1] != p.input_dim {
        return Err(Error::shape(
            "project_modality",
            tape.shape(features),
            &[p.input_dim],
        ));
    }
    let w = tape.param(store, p.weight);
    let b = tape.param(store, p.bias);
    let h = tape.matmul_nt(features, w)?;
    tape.add(h, b)
}

pub fn forward_transform(tape: &mut Tape, h: Var, plan: &Arc<RealFft>) -> Result<Spectrum> {
    let (re, im) = tape.rfft(h, plan)?;
    Ok(Spectrum { re, im })
}

pub fn inverse_transform(tape: &mut Tape, s: Spectrum, plan: &Arc<RealFft>) -> Result<Var> {
    tape.irfft(s.re, s.im, plan)
}

/// Point-wise complex product; either operand may be a single broadcast row.
pub fn complex_mul(tape: &mut Tape, a: Spectrum, b: Spectrum) -> Result<Spectrum> {
    let rr = tape.mul(a.re, b.re)?;
    let ii = tape.mul(a.im, b.im)?;
    let ri = tape.mul(a.re, b.im)?;
    let ir = tape.mul(a.im, b.re)?;
    Ok(Spectrum {
        re: tape.sub(rr, ii)?,
        im: tape.add(ri, ir)?,
    })
}

/// `w ⊙ S` with a `1 x B` filter broadcast over items.
pub fn apply_dynamic_filter(tape: &mut Tape, s: Spectrum, filter: Spectrum) -> Result<Spectrum> {
    let (sb, fb) = (tape.shape(s.re)[1], tape.shape(filter.re)[1]);
    if sb != fb || tape.shape(filter.re)[0] != 1 {
        return Err(Error::shape(
            "apply_dynamic_filter",
            tape.shape(s.re),
            tape.shape(filter.re),
        ));
    }
    complex_mul(tape, s, filter)
}

/// `w_f ⊙ Π_m S_m`.
pub fn fuse_spectra(
    tape: &mut Tape,
    spectra: &[Spectrum],
    fusion_filter: Spectrum,
) -> Result<Spectrum> {
    if spectra.len() < 2 {
        return Err(Error::Input("fusion needs at least two spectra".into()));
    }
    let mut acc = spectra[0];
    for &s in &spectra[1..] {
        if tape.shape(s.re) != tape.shape(acc.re) {
            return Err(Error::shape(
                "fuse_spectra",
                tape.shape(acc.re),
                tape.shape(s.re),
            ));
        }
        acc = complex_mul(tape, acc, s)?;
    }
    apply_dynamic_filter(tape, acc, fusion_filter)
}

fn filter_var(tape: &mut Tape, store: &ParamStore, id: ParamId) -> Spectrum {
    let (re, im) = tape.complex_param(store, id);
    Spectrum { re, im }
}

#[derive(Debug, Clone)]
pub struct SpectralOutput {
    /// Denoised per-modality features, in parameter order, each `N x d`.
    pub unimodal: Vec<Var>,
    /// Fused features, `N x d`.
    pub fused: Var,
}

/// Projects, transforms, filters and inverts every modality and their fusion.
///
/// `features[k]` feeds `params.modalities[k]`.
pub fn spectral_fusion_forward(
    tape: &mut Tape,
    store: &ParamStore,
    params: &SpectralParams,
    features: &[Var],
    plan: &Arc<RealFft>,
) -> Result<SpectralOutput> {
    if features.len() != params.modalities.len() {
        return Err(Error::Input(format!(
            "expected {} modality inputs, got {}",
            params.modalities.len(),
            features.len()
        )));
    }
    if plan.len() != params.dim {
        return Err(Error::shape("spectral plan", &[plan.len()], &[params.dim]));
    }
    let mut raw_spectra = Vec::with_capacity(features.len());
    let mut unimodal = Vec::with_capacity(features.len());
    for (&e, p) in features.iter().zip(&params.modalities) {
        let h = project_modality(tape, store, e, p)?;
        let s = forward_transform(tape, h, plan)?;
        let w = filter_var(tape, store, p.filter);
        let filtered = apply_dynamic_filter(tape, s, w)?;
        unimodal.push(inverse_transform(tape, filtered, plan)?);
        raw_spectra.push(s);
    }
    let wf = filter_var(tape, store, params.fusion_filter);
    let fused = fuse_spectra(tape, &raw_spectra, wf)?;
    let fused = inverse_transform(tape, fused, plan)?;
    Ok(SpectralOutput { unimodal, fused })
}

/// `|DFT(row)|` for every row of `h`.
pub fn magnitude_spectrum(h: &Tensor, plan: &RealFft) -> Tensor {
    let b = plan.bins();
    let mut out = Vec::with_capacity(h.rows() * b);
    let (mut re, mut im) = (vec![0.0; b], vec![0.0; b]);
    for r in 0..h.rows() {
        plan.forward(h.row(r), &mut re, &mut im);
        out.extend(re.iter().zip(&im).map(|(a, c)| a.hypot(*c)));
    }
    Tensor::matrix(h.rows(), b, out)
}

/// CSV with a `item,bin_0,...` header and one row per item.
pub fn write_spectrum_csv(path: &Path, magnitudes: &Tensor, item_ids: &[String]) -> Result<()> {
    let mut out = String::from("item");
    for k in 0..magnitudes.cols() {
        out.push_str(&format!(",bin_{k}"));
    }
    out.push('\n');
    for (r, id) in item_ids.iter().enumerate().take(magnitudes.rows()) {
        out.push_str(id);
        for v in magnitudes.row(r) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn direct_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &v)| {
                    let t = -2.0 * PI * (j * k) as f64 / n as f64;
                    (re + v * t.cos(), im + v * t.sin())
                })
            })
            .collect()
    }

    fn circular_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = a.len();
        (0..n)
            .map(|j| (0..n).map(|k| a[k] * b[(j + n - k) % n]).sum())
            .collect()
    }

    fn naive_affine(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
        let mut out = Tensor::zeros(&[x.rows(), w.rows()]);
        for i in 0..x.rows() {
            for o in 0..w.rows() {
                let mut s = b[o];
                for k in 0..x.cols() {
                    s += x.get(i, k) * w.get(o, k);
                }
                out.set(i, o, s);
            }
        }
        out
    }

    fn one_modality(store: &mut ParamStore, w: Tensor, b: Tensor) -> ModalityParams {
        let (d, dm) = (w.rows(), w.cols());
        ModalityParams {
            modality: Modality::Visual,
            input_dim: dm,
            weight: store.add_real("w", w),
            bias: store.add_real("b", b),
            filter: store.add_complex("f", ComplexTensor::zeros(&[1, num_bins(d)])),
        }
    }

    fn spectrum_of(tape: &mut Tape, rows: &[&[f64]]) -> (Spectrum, Arc<RealFft>) {
        let n = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let x = tape.constant(Tensor::matrix(rows.len(), n, data));
        let plan = Arc::new(RealFft::new(n));
        (forward_transform(tape, x, &plan).unwrap(), plan)
    }

    fn constant_filter(tape: &mut Tape, bins: usize, re: f64, im: f64) -> Spectrum {
        Spectrum {
            re: tape.constant(Tensor::full(&[1, bins], re)),
            im: tape.constant(Tensor::full(&[1, bins], im)),
        }
    }

    #[test]
    fn projection_matches_identity_constant_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_matrix(&mut rng, 3, 4);

        let mut store = ParamStore::new();
        let p = one_modality(&mut store, Tensor::identity(4), Tensor::zeros(&[1, 4]));
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let h = project_modality(&mut t, &store, xv, &p).unwrap();
        assert_eq!(t.value(h), &x);

        let mut store = ParamStore::new();
        let p = one_modality(
            &mut store,
            Tensor::zeros(&[4, 4]),
            Tensor::row_vector(vec![0.5, -1.0, 2.0, 0.0]),
        );
        let mut t = Tape::new();
        let xv = t.constant(x);
        let h = project_modality(&mut t, &store, xv, &p).unwrap();
        for r in 0..3 {
            assert_eq!(t.value(h).row(r), &[0.5, -1.0, 2.0, 0.0]);
        }

        let x = rand_matrix(&mut rng, 3, 5);
        let w = rand_matrix(&mut rng, 4, 5);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut store = ParamStore::new();
        let p = one_modality(&mut store, w.clone(), Tensor::row_vector(b.clone()));
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let h = project_modality(&mut t, &store, xv, &p).unwrap();
        assert!(t.value(h).max_abs_diff(&naive_affine(&x, &w, &b)) < 1e-12);

        let mut t = Tape::new();
        let bad = t.constant(Tensor::zeros(&[3, 4]));
        assert!(project_modality(&mut t, &store, bad, &p).is_err());
    }

    #[test]
    fn transform_examples() {
        let mut t = Tape::new();
        let (s, _) = spectrum_of(&mut t, &[&[1.0, 0.0, 0.0, 0.0], &[1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(t.value(s.re).data(), &[1.0, 1.0, 1.0, 4.0, 0.0, 0.0]);
        assert!(t.value(s.im).data().iter().all(|v| v.abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (s, _) = spectrum_of(&mut t, &[&x]);
        for (k, (re, im)) in direct_dft(&x).into_iter().enumerate() {
            assert!((t.value(s.re).get(0, k) - re).abs() < 1e-10);
            assert!((t.value(s.im).get(0, k) - im).abs() < 1e-10);
        }
    }

    #[test]
    fn filter_examples() {
        let mut t = Tape::new();
        let (s, _) = spectrum_of(&mut t, &[&[0.3, -1.0, 2.0, 0.5]]);
        let one = constant_filter(&mut t, 3, 1.0, 0.0);
        let out = apply_dynamic_filter(&mut t, s, one).unwrap();
        assert_eq!(t.value(out.re), t.value(s.re));
        assert_eq!(t.value(out.im), t.value(s.im));

        let zero = constant_filter(&mut t, 3, 0.0, 0.0);
        let out = apply_dynamic_filter(&mut t, s, zero).unwrap();
        assert!(t
            .value(out.re)
            .data()
            .iter()
            .chain(t.value(out.im).data())
            .all(|&v| v == 0.0));

        let bin = Spectrum {
            re: t.constant(Tensor::matrix(1, 1, vec![2.0])),
            im: t.constant(Tensor::matrix(1, 1, vec![3.0])),
        };
        let i = constant_filter(&mut t, 1, 0.0, 1.0);
        let out = apply_dynamic_filter(&mut t, bin, i).unwrap();
        assert_eq!(
            (t.value(out.re).item(), t.value(out.im).item()),
            (-3.0, 2.0)
        );

        let wrong = constant_filter(&mut t, 2, 1.0, 0.0);
        assert!(apply_dynamic_filter(&mut t, s, wrong).is_err());
    }

    #[test]
    fn fusion_identity_annihilator_and_convolution() {
        let mut t = Tape::new();
        let b = [0.7, -0.2, 1.5, 0.1];
        let (sb, plan) = spectrum_of(&mut t, &[&b]);
        let ones = constant_filter(&mut t, 3, 1.0, 0.0);
        let zeros = constant_filter(&mut t, 3, 0.0, 0.0);
        let fused = fuse_spectra(&mut t, &[ones, sb], ones).unwrap();
        assert!(t.value(fused.re).max_abs_diff(t.value(sb.re)) < 1e-15);
        let fused = fuse_spectra(&mut t, &[sb, zeros], ones).unwrap();
        assert!(t.value(fused.re).data().iter().all(|&v| v == 0.0));
        assert!(fuse_spectra(&mut t, &[sb], ones).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=16 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut t = Tape::new();
            let (sa, plan) = spectrum_of(&mut t, &[&a]);
            let (sc, _) = spectrum_of(&mut t, &[&c]);
            let ones = constant_filter(&mut t, plan.bins(), 1.0, 0.0);
            let fused = fuse_spectra(&mut t, &[sa, sc], ones).unwrap();
            let y = inverse_transform(&mut t, fused, &plan).unwrap();
            let want = circular_convolution(&a, &c);
            for (got, w) in t.value(y).data().iter().zip(&want) {
                assert!((got - w).abs() < 1e-10, "n={n}");
            }
        }
        drop(plan);
    }

    #[test]
    fn inverse_examples() {
        let mut t = Tape::new();
        let plan = Arc::new(RealFft::new(4));
        let s = Spectrum {
            re: t.constant(Tensor::row_vector(vec![4.0, 0.0, 0.0])),
            im: t.constant(Tensor::zeros(&[1, 3])),
        };
        let y = inverse_transform(&mut t, s, &plan).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0, 1.0, 1.0]);
        let z = Spectrum {
            re: t.constant(Tensor::zeros(&[1, 3])),
            im: t.constant(Tensor::zeros(&[1, 3])),
        };
        let y = inverse_transform(&mut t, z, &plan).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_matrix(&mut rng, 5, 10);
        let plan = Arc::new(RealFft::new(10));
        let xv = t.constant(x.clone());
        let s = forward_transform(&mut t, xv, &plan).unwrap();
        let y = inverse_transform(&mut t, s, &plan).unwrap();
        assert!(t.value(y).max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn linearity_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [6usize, 8, 9] {
            let plan = RealFft::new(n);
            let b = plan.bins();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (al, be) = (0.7, -1.3);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, c)| al * a + be * c).collect();
            let spec = |v: &[f64]| {
                let (mut re, mut im) = (vec![0.0; b], vec![0.0; b]);
                plan.forward(v, &mut re, &mut im);
                (re, im)
            };
            let ((xr, xi), (yr, yi), (mr, mi)) = (spec(&x), spec(&y), spec(&mix));
            for k in 0..b {
                assert!((mr[k] - al * xr[k] - be * yr[k]).abs() < 1e-10);
                assert!((mi[k] - al * xi[k] - be * yi[k]).abs() < 1e-10);
            }
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spectral: f64 = (0..b)
                .map(|k| plan.bin_weight(k) * (xr[k] * xr[k] + xi[k] * xi[k]))
                .sum::<f64>()
                / n as f64;
            assert!((energy - spectral).abs() < 1e-9);
        }
    }

    fn two_modality_setup(
        seed: u64,
        n: usize,
        d: usize,
    ) -> (ParamStore, SpectralParams, Vec<Tensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = SpectralParams::init(
            &mut store,
            &[(Modality::Visual, 5), (Modality::Text, 3)],
            d,
            &mut rng,
        )
        .unwrap();
        for p in &params.modalities {
            let b = rand_matrix(&mut rng, 1, d);
            store
                .get_mut(p.bias)
                .value
                .flat_mut()
                .copy_from_slice(b.data());
        }
        for id in params.filter_ids() {
            for v in store.get_mut(id).value.flat_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let feats = vec![rand_matrix(&mut rng, n, 5), rand_matrix(&mut rng, n, 3)];
        (store, params, feats)
    }

    #[test]
    fn full_forward_gradients_match_finite_differences() {
        let (mut store, params, feats) = two_modality_setup(6, 3, 8);
        let plan = Arc::new(RealFft::new(8));
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let probes: Vec<Tensor> = (0..3).map(|_| rand_matrix(&mut rng, 3, 8)).collect();
        let report = grad_check(
            &mut store,
            |t, s| {
                let inputs: Vec<Var> = feats.iter().map(|f| t.constant(f.clone())).collect();
                let out = spectral_fusion_forward(t, s, &params, &inputs, &plan)?;
                let mut total = None;
                for (v, p) in out.unimodal.iter().chain([&out.fused]).zip(&probes) {
                    let pv = t.constant(p.clone());
                    let m = t.mul(*v, pv)?;
                    let term = t.sum(m);
                    total = Some(match total {
                        None => term,
                        Some(acc) => t.add(acc, term)?,
                    });
                }
                Ok(total.unwrap())
            },
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures());
    }

    #[test]
    fn identity_filters_reduce_to_projection_and_convolution() {
        let mut store = ParamStore::new();
        let d = 6;
        let bins = num_bins(d);
        let mk = |store: &mut ParamStore, m: Modality| ModalityParams {
            modality: m,
            input_dim: d,
            weight: store.add_real(&format!("{}w", m.name()), Tensor::identity(d)),
            bias: store.add_real(&format!("{}b", m.name()), Tensor::zeros(&[1, d])),
            filter: store.add_complex(
                &format!("{}f", m.name()),
                ComplexTensor::from_parts(
                    &Tensor::full(&[1, bins], 1.0),
                    &Tensor::zeros(&[1, bins]),
                )
                .unwrap(),
            ),
        };
        let v = mk(&mut store, Modality::Visual);
        let tx = mk(&mut store, Modality::Text);
        let wf = store.add_complex(
            "ff",
            ComplexTensor::from_parts(&Tensor::full(&[1, bins], 1.0), &Tensor::zeros(&[1, bins]))
                .unwrap(),
        );
        let params = SpectralParams {
            dim: d,
            modalities: vec![v, tx],
            fusion_filter: wf,
        };
        let a = vec![0.1, 0.9, -0.4, 0.3, 0.0, -1.2];
        let b = vec![1.0, -0.5, 0.25, 0.8, -0.3, 0.6];
        let plan = Arc::new(RealFft::new(d));
        let mut t = Tape::new();
        let ins = [
            t.constant(Tensor::row_vector(a.clone())),
            t.constant(Tensor::row_vector(b.clone())),
        ];
        let out = spectral_fusion_forward(&mut t, &store, &params, &ins, &plan).unwrap();
        assert!(
            t.value(out.unimodal[0])
                .max_abs_diff(&Tensor::row_vector(a.clone()))
                < 1e-12
        );
        assert!(
            t.value(out.unimodal[1])
                .max_abs_diff(&Tensor::row_vector(b.clone()))
                < 1e-12
        );
        let conv = Tensor::row_vector(circular_convolution(&a, &b));
        assert!(t.value(out.fused).max_abs_diff(&conv) < 1e-10);
    }

    #[test]
    fn zero_features_and_bias_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let params = SpectralParams::init(
            &mut store,
            &[(Modality::Visual, 4), (Modality::Text, 2)],
            8,
            &mut rng,
        )
        .unwrap();
        let plan = Arc::new(RealFft::new(8));
        let mut t = Tape::new();
        let ins = [
            t.constant(Tensor::zeros(&[3, 4])),
            t.constant(Tensor::zeros(&[3, 2])),
        ];
        let out = spectral_fusion_forward(&mut t, &store, &params, &ins, &plan).unwrap();
        for v in out.unimodal.iter().chain([&out.fused]) {
            assert!(t.value(*v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn item_permutation_is_equivariant() {
        let (store, params, feats) = two_modality_setup(8, 4, 8);
        let plan = Arc::new(RealFft::new(8));
        let perm = [2usize, 0, 3, 1];
        let run = |fs: &[Tensor]| {
            let mut t = Tape::new();
            let ins: Vec<Var> = fs.iter().map(|f| t.constant(f.clone())).collect();
            let out = spectral_fusion_forward(&mut t, &store, &params, &ins, &plan).unwrap();
            out.unimodal
                .iter()
                .chain([&out.fused])
                .map(|v| t.value(*v).clone())
                .collect::<Vec<_>>()
        };
        let base = run(&feats);
        let permuted: Vec<Tensor> = feats.iter().map(|f| f.gather_rows(&perm)).collect();
        for (a, b) in base.iter().zip(run(&permuted)) {
            assert!(a.gather_rows(&perm).max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn filter_init_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = init_filter(33, &mut rng);
        for k in 0..33 {
            let (re, im) = f.get(k);
            assert!((re - 1.0).abs() <= FILTER_INIT_NOISE && im.abs() <= FILTER_INIT_NOISE);
        }
    }
}
