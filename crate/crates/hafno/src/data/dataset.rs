//! Seeded, versioned datasets of (input, target) field pairs with a
//! key=value manifest that is sufficient to regenerate the data
//! bit-identically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use crate::wire;

use super::elliptic::{gen_trig_coefficient, solve_elliptic_fd, unit_forcing};
use super::grf::sample_grf_twophase;
use super::ns::{solve_ns_vorticity, NsSpec};

pub const DATASET_MAGIC: [u8; 4] = *b"HAFD";
pub const DATASET_VERSION: u16 = 1;
pub const GENERATOR_VERSION: u32 = 1;

/// Default elliptic solver tolerance for dataset generation.
pub const SOLVER_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Inverse => "inverse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "inverse" => Ok(Direction::Inverse),
            other => Err(Error::invalid(format!("unknown direction `{}`", other))),
        }
    }
}

/// Which PDE benchmark a dataset draws from.
#[derive(Clone, Debug, PartialEq)]
pub enum BenchmarkSpec {
    /// Multiscale trigonometric coefficients on `[-1, 1]²`, `f ≡ 1`.
    Trig { resolution: usize },
    /// Thresholded-GRF two-phase coefficients on `[0, 1]²`, `f ≡ 1`.
    /// Larger `c` gives rougher interfaces.
    TwoPhase {
        resolution: usize,
        c: f64,
        a_min: f64,
        a_max: f64,
        rough: bool,
    },
    /// Vorticity trajectories on the unit torus.
    Ns(NsSpec),
}

impl BenchmarkSpec {
    pub fn trig(resolution: usize) -> Self {
        BenchmarkSpec::Trig { resolution }
    }

    pub fn darcy_smooth(resolution: usize) -> Self {
        BenchmarkSpec::TwoPhase {
            resolution,
            c: 9.0,
            a_min: 3.0,
            a_max: 12.0,
            rough: false,
        }
    }

    pub fn darcy_rough(resolution: usize) -> Self {
        BenchmarkSpec::TwoPhase {
            resolution,
            c: 64.0,
            a_min: 3.0,
            a_max: 12.0,
            rough: true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkSpec::Trig { .. } => "trig",
            BenchmarkSpec::TwoPhase { rough: true, .. } => "darcy-rough",
            BenchmarkSpec::TwoPhase { rough: false, .. } => "darcy-smooth",
            BenchmarkSpec::Ns(_) => "ns",
        }
    }

    pub fn resolution(&self) -> usize {
        match self {
            BenchmarkSpec::Trig { resolution } => *resolution,
            BenchmarkSpec::TwoPhase { resolution, .. } => *resolution,
            BenchmarkSpec::Ns(spec) => spec.grid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub bench: BenchmarkSpec,
    pub n_samples: usize,
    pub seed: u64,
    /// Global index of this split's first sample in the seed stream, so the
    /// test split never reuses training seeds.
    pub index_offset: u64,
    pub split: String,
    pub direction: Direction,
    /// Relative Gaussian noise applied to the inputs (`0` disables).
    pub noise_eps: f64,
    pub solver_tol: f64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if self.noise_eps < 0.0 {
            return Err(Error::invalid("noise level must be nonnegative"));
        }
        if let BenchmarkSpec::Ns(ns) = &self.bench {
            ns.validate()?;
            if self.direction == Direction::Inverse {
                return Err(Error::invalid("inverse direction applies to elliptic benchmarks"));
            }
        }
        if self.bench.resolution() < 16 {
            return Err(Error::invalid("resolution must be at least 16"));
        }
        Ok(())
    }
}

/// One (input, target) pair of channels-first fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

/// Sorted key=value manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest(pub BTreeMap<String, String>);

impl Manifest {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::ConfigMismatch(format!("manifest missing key `{}`", key)))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Truncated(format!("bad manifest line `{}`", line)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Manifest(map))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::ConfigMismatch(format!("bad manifest value for `{}`", key)))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Relative Gaussian noise: `û = u + ε · std(u) · Z`.
pub fn add_noise(u: &Tensor, eps: f64, seed_v: u64) -> Tensor {
    if eps == 0.0 {
        return u.clone();
    }
    let sigma = u.std();
    let mut rng = seed::rng_for(seed_v, "noise", 0);
    let data: Vec<f64> = u
        .data()
        .iter()
        .map(|&v| v + eps * sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(u.shape().to_vec(), data).unwrap()
}

/// Bilinear downsampling of the trailing two axes onto a node-aligned
/// coarser grid (endpoints map to endpoints).
pub fn downsample_field(x: &Tensor, target: usize) -> Result<Tensor> {
    let s = x.shape();
    let rank = s.len();
    if rank < 2 {
        return Err(Error::invalid("downsample needs a spatial field"));
    }
    let (h, w) = (s[rank - 2], s[rank - 1]);
    if target > h || target > w {
        return Err(Error::invalid(format!(
            "cannot downsample {}x{} to {} (upscaling is a model-side operation)",
            h, w, target
        )));
    }
    if target == h && target == w {
        return Ok(x.clone());
    }
    let planes = x.numel() / (h * w);
    let mut shape = s.to_vec();
    shape[rank - 2] = target;
    shape[rank - 1] = target;
    let src = x.data();
    let mut out = vec![0.0; planes * target * target];
    let scale_y = (h - 1) as f64 / (target - 1) as f64;
    let scale_x = (w - 1) as f64 / (target - 1) as f64;
    for p in 0..planes {
        for i in 0..target {
            let fy = i as f64 * scale_y;
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f64;
            for j in 0..target {
                let fx = j as f64 * scale_x;
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f64;
                let at = |yy: usize, xx: usize| src[p * h * w + yy * w + xx];
                out[p * target * target + i * target + j] = (1.0 - ty)
                    * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                    + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
            }
        }
    }
    Tensor::new(shape, out)
}

fn generate_sample(spec: &DatasetSpec, global_index: u64) -> Result<Sample> {
    let sample_seed = spec.seed.wrapping_add(global_index);
    match &spec.bench {
        BenchmarkSpec::Trig { resolution } => {
            let a = gen_trig_coefficient(sample_seed, *resolution)?;
            let f = unit_forcing(&a);
            let (u, _) = solve_elliptic_fd(&a, &f, spec.solver_tol)?;
            Ok(orient(spec, a.data, u.data, sample_seed))
        }
        BenchmarkSpec::TwoPhase {
            resolution,
            c,
            a_min,
            a_max,
            ..
        } => {
            let a = sample_grf_twophase(sample_seed, *resolution, *c, *a_min, *a_max)?;
            let f = unit_forcing(&a);
            let (u, _) = solve_elliptic_fd(&a, &f, spec.solver_tol)?;
            Ok(orient(spec, a.data, u.data, sample_seed))
        }
        BenchmarkSpec::Ns(ns) => {
            let w0 = ns.sample_w0(sample_seed);
            let frames = solve_ns_vorticity(&w0, ns)?;
            let n = ns.grid;
            let stack = |range: std::ops::Range<usize>| -> Result<Tensor> {
                let mut data = Vec::with_capacity(range.len() * n * n);
                for f in &frames[range.clone()] {
                    data.extend_from_slice(f.data());
                }
                Tensor::new(vec![range.len(), n, n], data)
            };
            let input = stack(0..ns.t0)?;
            let target = stack(ns.t0..ns.t_end)?;
            let input = add_noise(&input, spec.noise_eps, sample_seed);
            Ok(Sample { input, target })
        }
    }
}

/// Arrange coefficient/solution into (input, target) per the direction,
/// applying input noise.
fn orient(spec: &DatasetSpec, a: Tensor, u: Tensor, sample_seed: u64) -> Sample {
    let (input, target) = match spec.direction {
        Direction::Forward => (a, u),
        Direction::Inverse => (u, a),
    };
    Sample {
        input: add_noise(&input, spec.noise_eps, sample_seed),
        target,
    }
}

/// Generate a dataset split. Samples are produced in parallel from
/// per-index derived seeds and assembled in index order, so the result does
/// not depend on scheduling.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples: Vec<Sample> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| generate_sample(spec, spec.index_offset + i as u64))
        .collect::<Result<Vec<_>>>()?;

    let mut m = Manifest::default();
    m.set("benchmark", spec.bench.name());
    m.set("resolution", spec.bench.resolution());
    m.set("n_samples", spec.n_samples);
    m.set("seed", spec.seed);
    m.set("index_offset", spec.index_offset);
    m.set("split", &spec.split);
    m.set("direction", spec.direction.name());
    m.set("noise_eps", spec.noise_eps);
    m.set("solver_tol", spec.solver_tol);
    m.set("generator_version", GENERATOR_VERSION);
    match &spec.bench {
        BenchmarkSpec::Trig { .. } => {}
        BenchmarkSpec::TwoPhase {
            c, a_min, a_max, ..
        } => {
            m.set("two_phase_c", c);
            m.set("a_min", a_min);
            m.set("a_max", a_max);
        }
        BenchmarkSpec::Ns(ns) => {
            m.set("viscosity", ns.viscosity);
            m.set("dt", ns.dt);
            m.set("t0", ns.t0);
            m.set("t_end", ns.t_end);
            m.set("forcing_amp", ns.forcing_amp);
            m.set("w0_smoothness", ns.w0_smoothness);
            m.set("w0_amp", ns.w0_amp);
        }
    }
    Ok(Dataset {
        manifest: m,
        samples,
    })
}

/// Rebuild the generation spec from a manifest; `build_dataset` on the
/// result reproduces the stored samples bit-identically.
pub fn spec_from_manifest(m: &Manifest) -> Result<DatasetSpec> {
    let resolution: usize = m.parse("resolution")?;
    let bench = match m.get("benchmark")? {
        "trig" => BenchmarkSpec::Trig { resolution },
        "darcy-rough" | "darcy-smooth" => BenchmarkSpec::TwoPhase {
            resolution,
            c: m.parse("two_phase_c")?,
            a_min: m.parse("a_min")?,
            a_max: m.parse("a_max")?,
            rough: m.get("benchmark")? == "darcy-rough",
        },
        "ns" => BenchmarkSpec::Ns(NsSpec {
            viscosity: m.parse("viscosity")?,
            grid: resolution,
            dt: m.parse("dt")?,
            t0: m.parse("t0")?,
            t_end: m.parse("t_end")?,
            forcing_amp: m.parse("forcing_amp")?,
            w0_smoothness: m.parse("w0_smoothness")?,
            w0_amp: m.parse("w0_amp")?,
        }),
        other => {
            return Err(Error::ConfigMismatch(format!(
                "unknown benchmark `{}` in manifest",
                other
            )))
        }
    };
    Ok(DatasetSpec {
        bench,
        n_samples: m.parse("n_samples")?,
        seed: m.parse("seed")?,
        index_offset: m.parse("index_offset")?,
        split: m.get("split")?.to_string(),
        direction: Direction::parse(m.get("direction")?)?,
        noise_eps: m.parse("noise_eps")?,
        solver_tol: m.parse("solver_tol")?,
    })
}

fn samples_payload(samples: &[Sample]) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    for s in samples {
        wire::write_tensor(&mut payload, &s.input)?;
        wire::write_tensor(&mut payload, &s.target)?;
    }
    Ok(payload)
}

/// Serialize a dataset; the manifest gains a `checksum` key (FNV-1a 64 over
/// the sample payload bytes) before being written.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let payload = samples_payload(&ds.samples)?;
    let mut manifest = ds.manifest.clone();
    manifest.set("checksum", format!("{:016x}", wire::fnv1a64(&payload)));
    manifest.set("n_samples", ds.samples.len());

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DATASET_MAGIC)?;
    wire::write_u16(&mut w, DATASET_VERSION)?;
    wire::write_string(&mut w, &manifest.to_text())?;
    wire::write_u32(&mut w, ds.samples.len() as u32)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    wire::read_exact(&mut r, &mut magic, "dataset magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = wire::read_u16(&mut r, "dataset version")?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let manifest = Manifest::from_text(&wire::read_string(&mut r, "dataset manifest")?)?;
    let n = wire::read_u32(&mut r, "dataset sample count")? as usize;
    let declared: usize = manifest.parse("n_samples")?;
    if declared != n {
        return Err(Error::Truncated(format!(
            "manifest declares {} samples, header says {}",
            declared, n
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let what = format!("sample {}", i);
        let input = wire::read_tensor(&mut r, &what)?;
        let target = wire::read_tensor(&mut r, &what)?;
        samples.push(Sample { input, target });
    }
    // validate the payload checksum recorded at write time
    let expected = u64::from_str_radix(manifest.get("checksum")?, 16)
        .map_err(|_| Error::Truncated("bad checksum field".into()))?;
    let found = wire::fnv1a64(&samples_payload(&samples)?);
    if expected != found {
        return Err(Error::ChecksumMismatch { expected, found });
    }
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trig_spec(n: usize) -> DatasetSpec {
        DatasetSpec {
            bench: BenchmarkSpec::trig(16),
            n_samples: n,
            seed: 7,
            index_offset: 0,
            split: "train".into(),
            direction: Direction::Forward,
            noise_eps: 0.0,
            solver_tol: 1e-8,
        }
    }

    #[test]
    fn noise_examples() {
        let u = crate::data::grf::sample_grf_neumann(3, 32, 9.0);
        assert_eq!(add_noise(&u, 0.0, 1), u);
        assert_eq!(add_noise(&u, 0.1, 5), add_noise(&u, 0.1, 5));

        // empirical relative noise level over many seeds
        let mut ratio = 0.0;
        let trials = 100;
        for s in 0..trials {
            let noisy = add_noise(&u, 0.1, 1000 + s);
            let diff = noisy.sub(&u).unwrap();
            ratio += diff.std() / u.std();
        }
        ratio /= trials as f64;
        assert!((0.095..=0.105).contains(&(ratio * 1.0)), "ratio {}", ratio);
    }

    #[test]
    fn downsample_examples() {
        let x = crate::data::grf::sample_grf_neumann(4, 33, 9.0);
        assert_eq!(downsample_field(&x, 33).unwrap(), x);
        let c = Tensor::filled(&[2, 16, 16], 2.5);
        let d = downsample_field(&c, 8).unwrap();
        assert!(d.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(downsample_field(&c, 32).is_err());

        // near-commutation of chained downsampling
        let big = crate::data::grf::sample_grf_neumann(5, 65, 9.0);
        let via = downsample_field(&downsample_field(&big, 33).unwrap(), 17).unwrap();
        let direct = downsample_field(&big, 17).unwrap();
        let rel = via.sub(&direct).unwrap().max_abs() / direct.max_abs();
        assert!(rel < 1e-3, "chained downsample rel {}", rel);
    }

    #[test]
    fn build_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.hafd");
        let ds = build_dataset(&tiny_trig_spec(3)).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.manifest.get("benchmark").unwrap(), "trig");
    }

    #[test]
    fn regeneration_from_manifest_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&tiny_trig_spec(2)).unwrap();
        let p1 = dir.path().join("a.hafd");
        write_dataset(&ds, &p1).unwrap();
        let stored = read_dataset(&p1).unwrap();
        let spec = spec_from_manifest(&stored.manifest).unwrap();
        let again = build_dataset(&spec).unwrap();
        let p2 = dir.path().join("b.hafd");
        write_dataset(&again, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn read_rejects_corruption_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.hafd");
        let ds = build_dataset(&tiny_trig_spec(2)).unwrap();
        write_dataset(&ds, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'Z';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::VersionMismatch { .. })
        ));

        let bad = good[..good.len() - 12].to_vec();
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Truncated(_))));

        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 1] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn inverse_direction_swaps_and_noises_input() {
        let mut spec = tiny_trig_spec(1);
        spec.direction = Direction::Inverse;
        spec.noise_eps = 0.1;
        let inv = build_dataset(&spec).unwrap();
        let mut fwd_spec = tiny_trig_spec(1);
        fwd_spec.noise_eps = 0.0;
        let fwd = build_dataset(&fwd_spec).unwrap();
        // inverse target is the forward input (the coefficient)
        assert_eq!(inv.samples[0].target, fwd.samples[0].input);
        // inverse input is the noised forward target (the solution)
        let clean = &fwd.samples[0].target;
        let noisy = &inv.samples[0].input;
        assert_ne!(clean, noisy);
        let rel = noisy.sub(clean).unwrap().std() / clean.std();
        assert!((0.02..0.3).contains(&rel), "noise rel {}", rel);
    }

    #[test]
    fn ns_dataset_shapes() {
        let spec = DatasetSpec {
            bench: BenchmarkSpec::Ns(NsSpec {
                t_end: 12,
                ..NsSpec::tiny(1e-3)
            }),
            n_samples: 1,
            seed: 3,
            index_offset: 0,
            split: "train".into(),
            direction: Direction::Forward,
            noise_eps: 0.0,
            solver_tol: 1e-8,
        };
        let ds = build_dataset(&spec).unwrap();
        assert_eq!(ds.samples[0].input.shape(), &[10, 64, 64]);
        assert_eq!(ds.samples[0].target.shape(), &[2, 64, 64]);
    }
}
