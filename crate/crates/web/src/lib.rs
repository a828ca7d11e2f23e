//! Browser bindings for the recursive classifier demo page.

use wasm_bindgen::prelude::*;

use rbc_core::classifiers::{sic_from_thresholds, sic_posterior, ClassifierModel, InstantaneousSeries, SpectralIndexKind};
use rbc_core::evaluation::balanced_accuracy;
use rbc_core::recursion::{classify_series, rbdm_step, regularize, Mode, RecursionSettings};
use rbc_core::synth::{generate_synthetic, SynthSpec};
use rbc_core::types::{ImageStack, LabelRaster, ProbabilityVector, TransitionModel};

fn js(e: rbc_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Class probabilities of the index classifier on `samples` evenly spaced
/// index values in [-1, 1], flattened sample-major.
#[wasm_bindgen(js_name = sicCurve)]
pub fn sic_curve(thresholds: &[f64], samples: usize) -> Result<Vec<f64>, JsError> {
    let model = sic_from_thresholds(thresholds, SpectralIndexKind::Mndwi).map_err(js)?;
    let n = samples.max(2);
    let mut out = Vec::with_capacity(n * model.num_classes());
    for i in 0..n {
        let y = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        out.extend_from_slice(sic_posterior(y, &model).as_slice());
    }
    Ok(out)
}

/// Recursive water probability of one pixel given its instantaneous water
/// probabilities over time.
#[wasm_bindgen(js_name = pixelTrajectory)]
pub fn pixel_trajectory(water: &[f64], epsilon: f64, lambda: f64) -> Result<Vec<f64>, JsError> {
    let t = TransitionModel::new(2, epsilon).map_err(js)?;
    let marginal = ProbabilityVector::uniform(2).map_err(js)?;
    let mut post = marginal.clone();
    let mut out = Vec::with_capacity(water.len());
    for &p in water {
        let p = p.clamp(0.0, 1.0);
        let inst = regularize(&ProbabilityVector::new(vec![1.0 - p, p]).map_err(js)?, lambda).map_err(js)?;
        post = rbdm_step(&inst, &marginal, &post, &t).map_err(js)?;
        out.push(post.as_slice()[1]);
    }
    Ok(out)
}

const SCENE: &str = r#"
seed = 3
width = 48
height = 48
frames = 16
start_date = "2022-05-01"

[[classes]]
name = "land"
bands = { B3 = [0.08, 0.015], B11 = [0.22, 0.03] }

[[classes]]
name = "water"
bands = { B3 = [0.09, 0.015], B11 = [0.03, 0.01] }

[[regions]]
class = 1
x = 6
y = 8
w = 22
h = 26

[[changes]]
frame = 9
class = 1
x = 28
y = 20
w = 14
h = 12

[[corruptions]]
frame = 4
fraction = 0.35

[[corruptions]]
frame = 12
fraction = 0.35
"#;

/// A small synthetic lake scene classified by the index classifier, with
/// and without the recursion.
#[wasm_bindgen]
pub struct Scene {
    stack: ImageStack,
    series: InstantaneousSeries,
    recursive: Vec<LabelRaster>,
    instantaneous: Vec<LabelRaster>,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Scene, JsError> {
        let mut spec = SynthSpec::from_toml(SCENE).map_err(js)?;
        spec.seed = seed;
        let stack = generate_synthetic(&spec).map_err(js)?.stack;
        let model = ClassifierModel::Sic(sic_from_thresholds(&[-1.0, 0.13, 1.0], SpectralIndexKind::Mndwi).map_err(js)?);
        let series = model.instantaneous_series(&stack, 1).map_err(js)?;
        let mut scene = Scene {
            stack,
            series,
            recursive: Vec::new(),
            instantaneous: Vec::new(),
        };
        scene.classify(0.01, 0.8)?;
        Ok(scene)
    }

    pub fn classify(&mut self, epsilon: f64, lambda: f64) -> Result<(), JsError> {
        let t = TransitionModel::new(2, epsilon).map_err(js)?;
        let result = classify_series(&self.series, &RecursionSettings::new(t, lambda, Mode::Rbdm)).map_err(js)?;
        self.recursive = result.recursive;
        self.instantaneous = result.instantaneous;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.series.width
    }

    pub fn height(&self) -> usize {
        self.series.height
    }

    pub fn frames(&self) -> usize {
        self.series.len()
    }

    pub fn date(&self, t: usize) -> String {
        self.series.dates.get(t).map(|d| d.to_string()).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = truthMap)]
    pub fn truth_map(&self, t: usize) -> Vec<u8> {
        self.stack.frames()[t].truth.as_ref().map(|r| r.labels().to_vec()).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = recursiveMap)]
    pub fn recursive_map(&self, t: usize) -> Vec<u8> {
        self.recursive[t].labels().to_vec()
    }

    #[wasm_bindgen(js_name = instantaneousMap)]
    pub fn instantaneous_map(&self, t: usize) -> Vec<u8> {
        self.instantaneous[t].labels().to_vec()
    }

    /// Balanced accuracy per date: recursive then instantaneous.
    pub fn accuracy(&self, t: usize) -> Result<Vec<f64>, JsError> {
        let truth = self.stack.frames()[t].truth.as_ref().ok_or_else(|| JsError::new("no truth"))?;
        Ok(vec![
            balanced_accuracy(&self.recursive[t], truth).map_err(js)?,
            balanced_accuracy(&self.instantaneous[t], truth).map_err(js)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_rows_are_pmfs() {
        let c = sic_curve(&[-1.0, 0.13, 1.0], 11).unwrap();
        assert_eq!(c.len(), 22);
        for row in c.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
        assert!(c[0] > 0.5 && c[21] > 0.5);
    }

    #[test]
    fn trajectory_resists_a_single_outlier() {
        let water = [0.9, 0.9, 0.9, 0.05, 0.9];
        let traj = pixel_trajectory(&water, 0.01, 0.8).unwrap();
        assert!(traj[3] > 0.5);
        let memoryless = pixel_trajectory(&water, 0.5, 0.0).unwrap();
        assert!((memoryless[3] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn scene_recursion_beats_instantaneous_on_corrupted_dates() {
        let scene = Scene::new(3).unwrap();
        assert_eq!(scene.frames(), 16);
        let acc = scene.accuracy(4).unwrap();
        assert!(acc[0] > acc[1] + 0.05, "{acc:?}");
    }
}
