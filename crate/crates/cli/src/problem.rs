//! Problem assembly from a validated configuration.

use ndarray::{Array1, Array2};

use msplit::linops::SpectralEstimates;
use msplit::operators::ProblemSpec;
use msplit::stepsize::ConstantsLedger;
use msplit::synthetic::{
    assemble_dense_instance, build_quadratic, DenseParts, QuadraticConfig, QuadraticInstance,
};
use msplit::tomo::{
    make_phantom, ray_driven_projector, synthesize_data, Geometry,
};

use crate::config::{CustomProblemFile, ProblemKind, RunConfig};
use crate::CliError;

/// Tomography artifacts kept around for metrics.
pub struct CtArtifacts {
    pub geometry: Geometry,
    /// Region-of-interest mask: the field-of-view circle.
    pub fov_mask: Vec<bool>,
    pub input_snr_db: f64,
    pub mismatch_severity: f64,
}

pub struct Assembled {
    pub spec: ProblemSpec,
    pub ledger: ConstantsLedger,
    pub estimates: SpectralEstimates,
    /// Ground truth for quality metrics: the phantom for tomography, the
    /// matched dense reference solution for quadratic problems.
    pub truth: Option<Array1<f64>>,
    pub ct: Option<CtArtifacts>,
    /// Dense instance (quadratic and custom problems) for gap reports.
    pub quadratic: Option<QuadraticInstance>,
}

fn dense_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>, CliError> {
    if rows.is_empty() {
        return Err(CliError::Config(format!("{what}: matrix is empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("{what}: ragged or empty rows")));
    }
    let mut m = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

pub fn assemble(config: &RunConfig) -> Result<Assembled, CliError> {
    match config.problem.kind {
        ProblemKind::CtDesk => {
            let geometry = config.geometry.geometry();
            let phantom = make_phantom(&geometry, config.geometry.phantom, config.problem.seed);
            let l = ray_driven_projector(&geometry)?;
            let clean = l
                .apply(&phantom)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let sinogram = synthesize_data(
                &l,
                &phantom,
                config.penalties.sigma,
                config.problem.seed.wrapping_add(1),
                &geometry,
            )?;
            let input_snr_db = msplit::diagnostics::input_snr_db(&clean, &sinogram.values);
            let problem = msplit::tomo::build_ct_problem(
                &geometry,
                &config.penalties.ct_penalties(),
                &sinogram,
                config.mismatch.schedule(),
                config.problem.seed.wrapping_add(2),
            )?;
            Ok(Assembled {
                spec: problem.spec,
                ledger: problem.ledger,
                estimates: problem.estimates,
                truth: Some(phantom),
                ct: Some(CtArtifacts {
                    geometry,
                    fov_mask: problem.fov_mask,
                    input_snr_db,
                    mismatch_severity: problem.mismatch_severity,
                }),
                quadratic: None,
            })
        }
        ProblemKind::QuadraticSynthetic => {
            let q = &config.quadratic;
            let instance = build_quadratic(&QuadraticConfig {
                dim: q.dim,
                data_dim: q.data_dim,
                seed: config.problem.seed,
                alpha: q.alpha,
                mismatch_strength: q.mismatch_strength,
                b_scale: q.b_scale,
                c_scale: q.c_scale,
                x_max: q.x_max,
                rho_policy: q.rho_policy(),
                schedule: config.mismatch.schedule(),
                safety_fbhf: config.solver.safety_fbhf,
                safety_fdrf: config.solver.safety_fdrf,
            })?;
            finish_dense(instance)
        }
        ProblemKind::CustomFile => {
            let path = config.problem.path.as_ref().expect("validated");
            let file = CustomProblemFile::load(path)?;
            let l_mat = dense_from_rows(&file.l, "l")?;
            let k_mat = match &file.k {
                Some(rows) => dense_from_rows(rows, "k")?,
                None => l_mat.t().to_owned(),
            };
            let c_mat = dense_from_rows(&file.c, "c")?;
            let b_mat = match &file.b {
                Some(rows) => dense_from_rows(rows, "b")?,
                None => Array2::zeros((l_mat.nrows(), l_mat.nrows())),
            };
            let instance = assemble_dense_instance(DenseParts {
                l_mat,
                k_mat,
                c_mat,
                b_mat,
                offset: Array1::from_vec(file.offset.clone()),
                alpha: file.alpha,
                x_max: file.x_max,
                rho_policy: file.rho_policy(),
                schedule: config.mismatch.schedule(),
                schedule_seed: config.problem.seed,
                safety_fbhf: config.solver.safety_fbhf,
                safety_fdrf: config.solver.safety_fdrf,
            })?;
            finish_dense(instance)
        }
    }
}

fn finish_dense(instance: QuadraticInstance) -> Result<Assembled, CliError> {
    // The matched dense solve acts as the ground truth for metrics. It may
    // legitimately be unavailable (e.g. a fixed rho too small for the
    // reference iteration), in which case metric columns stay empty.
    let truth = instance.reference_solution(true).ok();
    Ok(Assembled {
        spec: instance.spec.clone(),
        ledger: instance.ledger.clone(),
        estimates: instance.estimates.clone(),
        truth,
        ct: None,
        quadratic: Some(instance),
    })
}
