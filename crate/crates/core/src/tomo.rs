//! Desk-scale parallel-beam tomography instance factory.
//!
//! The forward operator is a line-length ray-driven projector; the surrogate
//! backprojector is the adjoint of a *different* discretization of the same
//! geometry (pixel/strip overlap areas), so the adjoint mismatch is genuine
//! by construction. Both are assembled as sparse triplets with exact
//! transposes at this scale.
//!
//! Image convention: `n×n` pixels of unit size centered at the origin, in
//! row-major order; the field of view is the inscribed circle and phantoms
//! vanish outside it. Rays are indexed by `(angle, bin)`, angles spanning
//! 180°, detector bins spanning the image width.

use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{
    measure_mismatch_spectra, LinearMap, LinopsError, MismatchFamily, MismatchSchedule,
    SpectralEstimates,
};
use crate::operators::{CocoerciveBlock, LipschitzBlock, OperatorError, ProblemSpec};
use crate::proxlib::{
    anscombe_grad, anscombe_lipschitz, box_ridge_block, grad_g, haar_map, prox_g,
    AnscombeFidelity, HuberTransform, ProxError,
};
use crate::stepsize::{ConstantsLedger, LedgerInputs, RhoPolicy, StepSizeError};

/// Intensity ceiling used by phantoms and the default penalties.
pub const DEFAULT_X_MAX: f64 = 900.0;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error(transparent)]
    Linops(#[from] LinopsError),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    StepSize(#[from] StepSizeError),
    #[error("negative Poisson mean {mean} at ray {index}")]
    NegativePoissonMean { index: usize, mean: f64 },
    #[error("sinogram has {got} values but the geometry expects {expected}")]
    GeometryMismatch { got: usize, expected: usize },
    #[error("assembled ledger is inconsistent: rho_hat = {0} is not positive")]
    LedgerInconsistent(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parallel-beam acquisition geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub n_pixels_side: usize,
    pub n_angles: usize,
    pub n_bins: usize,
    /// Detector bins per pixel width; recorded for provenance.
    pub bin_upsampling: f64,
}

impl Geometry {
    /// 32×32 image, 24 angles over 180°, 48 bins: every spectral quantity
    /// is computable by a dense eigensolve in seconds.
    pub fn desk_default() -> Self {
        Self {
            n_pixels_side: 32,
            n_angles: 24,
            n_bins: 48,
            bin_upsampling: 1.5,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels_side * self.n_pixels_side
    }

    pub fn n_rays(&self) -> usize {
        self.n_angles * self.n_bins
    }

    pub fn fov_radius(&self) -> f64 {
        self.n_pixels_side as f64 / 2.0
    }

    pub fn angle(&self, a: usize) -> f64 {
        std::f64::consts::PI * a as f64 / self.n_angles as f64
    }

    pub fn bin_width(&self) -> f64 {
        self.n_pixels_side as f64 / self.n_bins as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        -self.fov_radius() + (k as f64 + 0.5) * self.bin_width()
    }

    /// Pixel-center coordinates, origin at the image center.
    fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = self.fov_radius();
        (col as f64 + 0.5 - half, row as f64 + 0.5 - half)
    }

    /// Mask of pixels whose centers lie inside the inscribed circle.
    pub fn fov_mask(&self) -> Vec<bool> {
        let r2 = self.fov_radius() * self.fov_radius();
        let side = self.n_pixels_side;
        let mut mask = vec![false; self.n_pixels()];
        for row in 0..side {
            for col in 0..side {
                let (x, y) = self.pixel_center(row, col);
                mask[row * side + col] = x * x + y * y <= r2;
            }
        }
        mask
    }
}

/// Noisy projection data together with its geometry and Gaussian level.
#[derive(Debug, Clone)]
pub struct Sinogram {
    pub values: Array1<f64>,
    pub geometry: Geometry,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Disks,
    Checker,
}

/// Deterministic test image with values in `[0, DEFAULT_X_MAX]`, zero
/// outside the field-of-view circle.
pub fn make_phantom(geometry: &Geometry, kind: PhantomKind, seed: u64) -> Array1<f64> {
    let side = geometry.n_pixels_side;
    let r = geometry.fov_radius();
    let mut img = Array1::zeros(geometry.n_pixels());
    match kind {
        PhantomKind::Disks => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_disks = 3 + (rng.random::<u32>() % 4) as usize;
            let disks: Vec<(f64, f64, f64, f64)> = (0..n_disks)
                .map(|_| {
                    let ang = rng.random::<f64>() * std::f64::consts::TAU;
                    let dist = rng.random::<f64>() * 0.6 * r;
                    let radius = (0.12 + 0.18 * rng.random::<f64>()) * r;
                    let value = (0.3 + 0.7 * rng.random::<f64>()) * DEFAULT_X_MAX;
                    (dist * ang.cos(), dist * ang.sin(), radius, value)
                })
                .collect();
            for row in 0..side {
                for col in 0..side {
                    let (x, y) = geometry.pixel_center(row, col);
                    let mut v = 0.0;
                    for &(cx, cy, rad, val) in &disks {
                        let dx = x - cx;
                        let dy = y - cy;
                        if dx * dx + dy * dy <= rad * rad {
                            v += val;
                        }
                    }
                    img[row * side + col] = v.min(DEFAULT_X_MAX);
                }
            }
        }
        PhantomKind::Checker => {
            let cell = (side / 8).max(1);
            for row in 0..side {
                for col in 0..side {
                    let parity = (row / cell + col / cell) % 2;
                    img[row * side + col] = if parity == 0 {
                        0.25 * DEFAULT_X_MAX
                    } else {
                        0.85 * DEFAULT_X_MAX
                    };
                }
            }
            // Seeded brightness tweak keeps distinct seeds distinguishable.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 0.85 + 0.15 * rng.random::<f64>();
            img *= scale;
        }
    }
    let r2 = r * r;
    for row in 0..side {
        for col in 0..side {
            let (x, y) = geometry.pixel_center(row, col);
            if x * x + y * y > r2 {
                img[row * side + col] = 0.0;
            }
        }
    }
    img
}

/// Line-length weights of one ray against the pixel grid (Siddon-style
/// boundary walk). The ray is `p(s) = t·n̂ + s·d̂` with unit direction.
fn line_lengths(
    side: usize,
    theta: f64,
    t: f64,
    mut emit: impl FnMut(usize, f64),
) {
    let half = side as f64 / 2.0;
    let (sin_t, cos_t) = theta.sin_cos();
    let normal = (cos_t, sin_t);
    let dir = (-sin_t, cos_t);
    let origin = (t * normal.0, t * normal.1);

    // Clip the parameter range against the image square.
    let mut s_min = f64::NEG_INFINITY;
    let mut s_max = f64::INFINITY;
    for axis in 0..2 {
        let o = if axis == 0 { origin.0 } else { origin.1 };
        let d = if axis == 0 { dir.0 } else { dir.1 };
        if d.abs() < 1e-12 {
            if o < -half || o > half {
                return;
            }
        } else {
            let s1 = (-half - o) / d;
            let s2 = (half - o) / d;
            s_min = s_min.max(s1.min(s2));
            s_max = s_max.min(s1.max(s2));
        }
    }
    if s_min >= s_max {
        return;
    }

    let mut breaks = vec![s_min, s_max];
    for axis in 0..2 {
        let o = if axis == 0 { origin.0 } else { origin.1 };
        let d = if axis == 0 { dir.0 } else { dir.1 };
        if d.abs() < 1e-12 {
            continue;
        }
        for j in 0..=side {
            let coord = j as f64 - half;
            let s = (coord - o) / d;
            if s > s_min && s < s_max {
                breaks.push(s);
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        if len <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let px = origin.0 + mid * dir.0 + half;
        let py = origin.1 + mid * dir.1 + half;
        let col = px.floor() as isize;
        let row = py.floor() as isize;
        if col >= 0 && row >= 0 && (col as usize) < side && (row as usize) < side {
            emit(row as usize * side + col as usize, len);
        }
    }
}

/// Line-length ray-driven projector `L` with its exact assembled transpose.
pub fn ray_driven_projector(geometry: &Geometry) -> Result<LinearMap, TomoError> {
    let side = geometry.n_pixels_side;
    let mut triplets = Vec::new();
    for a in 0..geometry.n_angles {
        let theta = geometry.angle(a);
        for k in 0..geometry.n_bins {
            let ray = a * geometry.n_bins + k;
            line_lengths(side, theta, geometry.bin_center(k), |pixel, len| {
                triplets.push((ray, pixel, len));
            });
        }
    }
    Ok(LinearMap::from_triplets(
        geometry.n_rays(),
        geometry.n_pixels(),
        &triplets,
    )?)
}

/// Clips a convex polygon against the half-plane `⟨p, n⟩ ≤ c` (or `≥ c`).
fn clip_halfplane(
    poly: &[(f64, f64)],
    normal: (f64, f64),
    c: f64,
    keep_below: bool,
) -> Vec<(f64, f64)> {
    let side_of = |p: &(f64, f64)| {
        let d = p.0 * normal.0 + p.1 * normal.1 - c;
        if keep_below {
            -d
        } else {
            d
        }
    };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let da = side_of(&a);
        let db = side_of(&b);
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % poly.len()];
        acc += x1 * y2 - x2 * y1;
    }
    acc.abs() * 0.5
}

/// Surrogate backprojector `K`: the adjoint of a strip projector whose
/// weights are pixel/strip overlap areas divided by the strip width. A
/// different discretization than [`ray_driven_projector`], so `K ≠ L*`.
pub fn mismatched_backprojector(geometry: &Geometry) -> Result<LinearMap, TomoError> {
    let side = geometry.n_pixels_side;
    let half = side as f64 / 2.0;
    let w = geometry.bin_width();
    // Any pixel whose center is farther than this from the strip midline
    // cannot intersect the strip.
    let reach = w / 2.0 + std::f64::consts::SQRT_2 / 2.0 + 1e-9;
    let mut triplets = Vec::new();
    for a in 0..geometry.n_angles {
        let theta = geometry.angle(a);
        let normal = (theta.cos(), theta.sin());
        for k in 0..geometry.n_bins {
            let ray = a * geometry.n_bins + k;
            let t_mid = geometry.bin_center(k);
            let (t_lo, t_hi) = (t_mid - w / 2.0, t_mid + w / 2.0);
            for row in 0..side {
                for col in 0..side {
                    let cx = col as f64 + 0.5 - half;
                    let cy = row as f64 + 0.5 - half;
                    let proj = cx * normal.0 + cy * normal.1;
                    if (proj - t_mid).abs() > reach {
                        continue;
                    }
                    let square = [
                        (cx - 0.5, cy - 0.5),
                        (cx + 0.5, cy - 0.5),
                        (cx + 0.5, cy + 0.5),
                        (cx - 0.5, cy + 0.5),
                    ];
                    let clipped = clip_halfplane(&square, normal, t_lo, false);
                    let clipped = clip_halfplane(&clipped, normal, t_hi, true);
                    let area = polygon_area(&clipped);
                    if area > 1e-12 {
                        triplets.push((ray, row * side + col, area / w));
                    }
                }
            }
        }
    }
    // K maps sinogram space to image space: the transpose of the strip
    // projector assembled above.
    let strip = LinearMap::from_triplets(geometry.n_rays(), geometry.n_pixels(), &triplets)?;
    Ok(strip.adjoint_map()?)
}

/// Draws `c = Poisson(Lx̄) + N(0, σ²)` and crops to the admissible floor
/// `−3/8 − σ²`. Deterministic given the seed.
pub fn synthesize_data(
    l: &LinearMap,
    x_bar: &Array1<f64>,
    sigma: f64,
    seed: u64,
    geometry: &Geometry,
) -> Result<Sinogram, TomoError> {
    let mean = l.apply(x_bar)?;
    if mean.len() != geometry.n_rays() {
        return Err(TomoError::GeometryMismatch {
            got: mean.len(),
            expected: geometry.n_rays(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).expect("sigma checked"))
    } else {
        None
    };
    let floor = -0.375 - sigma * sigma;
    let mut values = Array1::zeros(mean.len());
    for (i, &lam) in mean.iter().enumerate() {
        if lam < -1e-9 {
            return Err(TomoError::NegativePoissonMean {
                index: i,
                mean: lam,
            });
        }
        let counts = if lam > 0.0 {
            Poisson::new(lam).expect("positive mean").sample(&mut rng)
        } else {
            0.0
        };
        let noise = gauss.as_ref().map_or(0.0, |g| g.sample(&mut rng));
        values[i] = (counts + noise).max(floor);
    }
    Ok(Sinogram {
        values,
        geometry: *geometry,
        sigma,
    })
}

/// Penalty parameters of the reconstruction objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CtPenalties {
    /// Weight λ of the Huber-in-transform penalty.
    pub weight: f64,
    /// Huber threshold δ.
    pub delta: f64,
    /// Weight α of the quadratic data coupling.
    pub alpha: f64,
    pub x_max: f64,
    pub rho_policy: RhoPolicy,
    /// Haar decomposition depth of the transform W.
    pub haar_levels: usize,
}

impl Default for CtPenalties {
    fn default() -> Self {
        Self {
            weight: 150.0,
            delta: 5.0,
            alpha: 0.1,
            x_max: DEFAULT_X_MAX,
            rho_policy: RhoPolicy::Recipe { margin: 1e-3 },
            haar_levels: 2,
        }
    }
}

/// Assembled reconstruction problem with everything diagnostics need.
#[derive(Debug, Clone)]
pub struct CtProblem {
    pub spec: ProblemSpec,
    pub ledger: ConstantsLedger,
    pub estimates: SpectralEstimates,
    pub fov_mask: Vec<bool>,
    /// Mismatch severity statistic `‖L* − K‖ / ‖L‖`.
    pub mismatch_severity: f64,
}

/// Wires the tomography blocks into a `ProblemSpec` and derives the full
/// constants ledger (norms and λ_min by estimation, ρ by policy).
pub fn build_ct_problem(
    geometry: &Geometry,
    penalties: &CtPenalties,
    data: &Sinogram,
    schedule: MismatchSchedule,
    seed: u64,
) -> Result<CtProblem, TomoError> {
    if data.values.len() != geometry.n_rays() {
        return Err(TomoError::GeometryMismatch {
            got: data.values.len(),
            expected: geometry.n_rays(),
        });
    }
    let l = ray_driven_projector(geometry)?;
    let k = mismatched_backprojector(geometry)?;
    let fidelity = AnscombeFidelity::new(data.values.clone(), data.sigma)?;
    let zeta = anscombe_lipschitz(&fidelity);

    let spectra = measure_mismatch_spectra(&l, &k, 1e-8, 10_000)?;
    let zeta_tilde = zeta * spectra.norm_mismatch * spectra.norm_l;
    let rho = penalties
        .rho_policy
        .rho(penalties.alpha, spectra.lambda_min, zeta_tilde);
    let kappa_k = penalties.alpha * spectra.norm_kl + zeta * spectra.norm_k * spectra.norm_l;

    let ledger = ConstantsLedger::assemble(
        &LedgerInputs {
            alpha: penalties.alpha,
            beta: penalties.delta / penalties.weight,
            zeta,
            rho,
            lambda_min: spectra.lambda_min,
            norm_l: spectra.norm_l,
            norm_mismatch: spectra.norm_mismatch,
            kappa_k,
        },
        0.9975,
        0.999,
    )?;
    if ledger.rho_hat <= 0.0 {
        return Err(TomoError::LedgerInconsistent(ledger.rho_hat));
    }

    let w = haar_map(geometry.n_pixels(), penalties.haar_levels)?;
    let huber = HuberTransform::new(penalties.delta, penalties.weight, w)?;
    let huber_grad = huber.clone();
    let huber_prox = huber.clone();
    let beta = penalties.delta / penalties.weight;
    let cocoercive = CocoerciveBlock::with_resolvent(
        beta,
        move |x| grad_g(&huber_grad, x).expect("dimensions fixed at build"),
        move |gamma, y| prox_g(&huber_prox, gamma, y).expect("dimensions fixed at build"),
    );
    let fid = fidelity.clone();
    let lipschitz = LipschitzBlock::new(zeta, move |y| {
        anscombe_grad(&fid, y).expect("dimensions fixed at build")
    });

    let mismatch = MismatchFamily::from_schedule(k, schedule, seed)?;
    let spec = ProblemSpec {
        monotone: box_ridge_block(penalties.x_max, rho),
        cocoercive,
        lipschitz,
        forward: l,
        mismatch,
        offset: data.values.clone(),
        alpha: penalties.alpha,
    };
    spec.validate()?;

    Ok(CtProblem {
        spec,
        ledger,
        estimates: spectra.estimates(),
        fov_mask: geometry.fov_mask(),
        mismatch_severity: spectra.norm_mismatch / spectra.norm_l.max(f64::MIN_POSITIVE),
    })
}

/// Writes `stem.bin` (f64 little-endian), `stem.json` (header), and
/// `stem.csv` (`cols` values per row) into `dir`.
pub fn export_vector(
    dir: &Path,
    stem: &str,
    values: &Array1<f64>,
    cols: usize,
    header: serde_json::Value,
) -> Result<(), TomoError> {
    std::fs::create_dir_all(dir)?;
    let mut bin = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
    for &v in values.iter() {
        bin.write_all(&v.to_le_bytes())?;
    }
    let mut meta = serde_json::json!({
        "dtype": "f64le",
        "len": values.len(),
        "csv_cols": cols,
    });
    if let (Some(obj), Some(extra)) = (meta.as_object_mut(), header.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    let mut csv = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            csv.push(if i % cols == 0 { '\n' } else { ',' });
        }
        csv.push_str(&format!("{v}"));
    }
    csv.push('\n');
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    Ok(())
}

impl From<serde_json::Error> for TomoError {
    fn from(e: serde_json::Error) -> Self {
        TomoError::Io(std::io::Error::other(e))
    }
}
