//! Binary model files (`RBCM`).

use std::fs;
use std::path::Path;

use super::gmm::{ClassMixture, GaussianComponent, GenerativeModel};
use super::index::SpectralIndexKind;
use super::logreg::DiscriminativeModel;
use super::sic::{sic_from_thresholds, SicModel};
use super::ClassifierModel;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RBCM";
const VERSION: u8 = 1;

pub fn encode_model(model: &ClassifierModel) -> Result<Vec<u8>> {
    let mut w = Writer::new(MAGIC, VERSION);
    match model {
        ClassifierModel::Sic(m) => {
            w.u8(1);
            encode_sic(&mut w, m)?;
        }
        ClassifierModel::Gmm(m) => {
            w.u8(2);
            encode_gmm(&mut w, m)?;
        }
        ClassifierModel::Lr(m) => {
            w.u8(3);
            w.u32(m.num_classes())?;
            w.u32(m.dim())?;
            w.bands(m.bands());
            w.f64s(m.mean());
            w.f64s(m.scale());
            w.f64s(m.weights());
        }
        ClassifierModel::External { num_classes } => {
            w.u8(4);
            w.u32(*num_classes)?;
        }
    }
    Ok(w.finish())
}

fn encode_sic(w: &mut Writer, m: &SicModel) -> Result<()> {
    w.u8(m.index().tag());
    let tau = m.thresholds().as_slice();
    w.u32(tau.len())?;
    w.f64s(tau);
    Ok(())
}

fn encode_gmm(w: &mut Writer, m: &GenerativeModel) -> Result<()> {
    w.u32(m.num_classes())?;
    w.u32(m.dim())?;
    w.bands(m.bands());
    for class in m.classes() {
        w.u32(class.components().len())?;
        for c in class.components() {
            w.f64s(&[c.weight()]);
            w.f64s(c.mean());
            w.f64s(c.covariance());
        }
    }
    Ok(())
}

pub fn decode_model(bytes: &[u8]) -> Result<ClassifierModel> {
    let (mut r, version) = Reader::open(bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let model = match r.u8()? {
        1 => {
            let index = SpectralIndexKind::from_tag(r.u8()?)?;
            let n = r.u32()?;
            let tau = r.f64s(n)?;
            ClassifierModel::Sic(sic_from_thresholds(&tau, index)?)
        }
        2 => {
            let k = r.u32()?;
            let d = r.u32()?;
            let bands = r.bands()?;
            let mut classes = Vec::with_capacity(k);
            for _ in 0..k {
                let m = r.u32()?;
                let mut comps = Vec::with_capacity(m);
                for _ in 0..m {
                    let weight = r.f64s(1)?[0];
                    let mean = r.f64s(d)?;
                    let cov = r.f64s(d * d)?;
                    comps.push(GaussianComponent::new(weight, mean, cov)?);
                }
                classes.push(ClassMixture::new(comps)?);
            }
            ClassifierModel::Gmm(GenerativeModel::new(bands, classes)?)
        }
        3 => {
            let k = r.u32()?;
            let d = r.u32()?;
            let bands = r.bands()?;
            let mean = r.f64s(d)?;
            let scale = r.f64s(d)?;
            let weights = r.f64s(k * (d + 1))?;
            ClassifierModel::Lr(DiscriminativeModel::new(bands, k, mean, scale, weights)?)
        }
        4 => ClassifierModel::External { num_classes: r.u32()? },
        t => return Err(Error::Format(format!("unknown model kind {t}"))),
    };
    r.finish()?;
    Ok(model)
}

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    let bytes = fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_model(&bytes).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
