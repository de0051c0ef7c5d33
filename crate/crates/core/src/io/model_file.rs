//! Persisted models. Frequencies and phases are not stored; they are
//! regenerated from the seed on load and verified against the checksum.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::container::{Array, Container};
use crate::model::{Algorithm, BaseMeasure, ModelMeta, PredictiveForm, Scoring, TgpModel};
use crate::rff::{self, FrequencyCovariance, RNG_NAME};
use crate::scalar::Real;

pub const MODEL_KIND: &str = "tgp-model";

pub fn model_to_container<T: Real>(model: &TgpModel<T>) -> Container {
    let mut c = Container::new(MODEL_KIND);
    let basis = model.basis();
    let meta = model.meta();
    c.set("dtype", T::DTYPE);
    c.set("algorithm", meta.algorithm.tag());
    c.set("lambda", meta.lambda.as_f64());
    c.set("eta", meta.eta.map(|v| v.as_f64()));
    c.set("sigma_max", meta.sigma_max.map(|v| v.as_f64()));
    c.set("noise_levels", meta.noise_levels.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
    c.set("n_data", meta.n_data as u64);
    c.set("dim", basis.dim() as u64);
    c.set("n_features", basis.n_features() as u64);
    c.set("gamma", basis.gamma().as_f64());
    c.set("seed", basis.seed());
    c.set("rng", RNG_NAME);
    c.set("basis_checksum", basis.checksum());
    c.set("base_jitter", model.base().jitter().as_f64());
    c.push_array("base_mu", Array::from_vector(model.base().mean()));
    c.push_array("base_sigma", Array::from_matrix(model.base().cov()));
    if let Some(sz) = basis.sigma_z() {
        c.push_array("sigma_z", Array::from_matrix(sz.matrix()));
    }
    if let Some(off) = &meta.centering_offset {
        c.push_array("centering_offset", Array::from_vector(off));
    }
    match model.scoring() {
        Scoring::Theta(theta) => c.push_array("theta", Array::from_vector(theta)),
        Scoring::Predictive(p) => {
            c.push_array("m", Array::from_vector(&p.m));
            c.push_array("m_inv", Array::from_matrix(&p.m_inv));
        }
    }
    c
}

pub fn model_from_container<T: Real>(c: &Container) -> Result<TgpModel<T>> {
    c.expect_kind(MODEL_KIND)?;
    let dtype = c.get_str("dtype")?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!("model was saved as {dtype}, cannot load as {}", T::DTYPE)));
    }
    let rng = c.get_str("rng")?;
    if rng != RNG_NAME {
        return Err(Error::Format(format!("model basis uses generator '{rng}', this build has '{RNG_NAME}'")));
    }
    let algorithm: Algorithm = c
        .get_str("algorithm")?
        .parse()
        .map_err(|_| Error::Format("unknown algorithm tag".into()))?;
    let dim = c.get_u64("dim")? as usize;
    let s = c.get_u64("n_features")? as usize;
    let sigma_z = match c.array("sigma_z") {
        Some(a) => Some(FrequencyCovariance::new(a.to_matrix::<T>()?)?),
        None => None,
    };
    let basis = rff::regenerate(
        dim,
        s,
        T::of(c.get_f64("gamma")?),
        sigma_z.as_ref(),
        c.get_u64("seed")?,
        c.get_str("basis_checksum")?,
    )?;
    let base = BaseMeasure::new(
        c.require_array("base_mu")?.to_dvector()?,
        c.require_array("base_sigma")?.to_matrix()?,
    )?;
    let scoring = match c.array("theta") {
        Some(theta) => Scoring::Theta(theta.to_dvector()?),
        None => Scoring::Predictive(PredictiveForm {
            m: c.require_array("m")?.to_dvector()?,
            m_inv: c.require_array("m_inv")?.to_matrix()?,
        }),
    };
    let meta = ModelMeta {
        algorithm,
        lambda: T::of(c.get_f64("lambda")?),
        eta: c.get_opt_f64("eta")?.map(T::of),
        sigma_max: c.get_opt_f64("sigma_max")?.map(T::of),
        noise_levels: c.get_f64_list("noise_levels")?.into_iter().map(T::of).collect(),
        n_data: c.get_u64("n_data")? as usize,
        centering_offset: c.array("centering_offset").map(|a| a.to_dvector()).transpose()?,
    };
    TgpModel::new(basis, base, scoring, meta).map_err(|e| match e {
        Error::DimensionMismatch { .. } => Error::Format(format!("inconsistent model file: {e}")),
        other => other,
    })
}

pub fn save_model<T: Real>(model: &TgpModel<T>, path: &Path) -> Result<()> {
    model_to_container(model).write(path)
}

pub fn load_model<T: Real>(path: &Path) -> Result<TgpModel<T>> {
    model_from_container(&Container::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rff::RffBasis;
    use nalgebra::{DMatrix, DVector};

    fn model(predictive: bool) -> TgpModel<f64> {
        let sz = FrequencyCovariance::from_covariance(&DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let basis = RffBasis::sample(2, 6, 0.4, Some(&sz), 11).unwrap();
        let base = BaseMeasure::new(DVector::from_vec(vec![0.1, -0.2]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5])).unwrap();
        let scoring = if predictive {
            Scoring::Predictive(PredictiveForm {
                m_inv: DMatrix::from_fn(6, 6, |i, j| if i == j { 0.3 } else { 0.01 }),
                m: DVector::from_fn(6, |i, _| i as f64 * 0.1),
            })
        } else {
            Scoring::Theta(DVector::from_fn(6, |i, _| (i as f64).sin()))
        };
        let meta = ModelMeta {
            algorithm: if predictive { Algorithm::Fvpd } else { Algorithm::Ncfd },
            lambda: 0.1,
            eta: predictive.then_some(6.25),
            sigma_max: (!predictive).then_some(0.7),
            noise_levels: if predictive { vec![0.0] } else { vec![0.0, 0.35] },
            n_data: 123,
            centering_offset: Some(DVector::from_vec(vec![3.0, 4.0])),
        };
        TgpModel::new(basis, base, scoring, meta).unwrap()
    }

    #[test]
    fn save_load_save_identical() {
        for predictive in [false, true] {
            let m = model(predictive);
            let bytes = model_to_container(&m).to_bytes();
            let back: TgpModel<f64> = model_from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(model_to_container(&back).to_bytes(), bytes);
            assert_eq!(back.scoring(), m.scoring());
            assert_eq!(back.basis().freqs(), m.basis().freqs());
            assert_eq!(back.meta(), m.meta());
        }
    }

    #[test]
    fn checksum_mismatch_rejected() {
        let mut c = model_to_container(&model(false));
        c.set("seed", 12u64);
        assert!(matches!(model_from_container::<f64>(&c), Err(Error::Format(_))));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let c = model_to_container(&model(false));
        assert!(model_from_container::<f32>(&c).is_err());
    }
}
