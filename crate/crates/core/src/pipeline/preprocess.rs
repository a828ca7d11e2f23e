//! Resampling, cropping, bias correction, frame filtering and date splits.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Frame, Grid, ImageStack, LabelRaster, MultibandImage};

/// Pixel rectangle `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRegion {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl ReferenceRegion {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::Bounds(format!("region {self:?} has zero area")));
        }
        let fits = self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height);
        if !fits {
            return Err(Error::Bounds(format!("region {self:?} exceeds the {width}x{height} image")));
        }
        Ok(())
    }

    fn pixels(&self, width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| y * width + x))
    }
}

/// Replicates every pixel into a `factor × factor` block.
pub fn resample_nearest<T: Copy>(grid: &Grid<T>, factor: usize) -> Result<Grid<T>> {
    if factor < 1 {
        return Err(Error::InvalidArgument("resampling factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (w, h) = (grid.width() * factor, grid.height() * factor);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(grid.get(x / factor, y / factor));
        }
    }
    Grid::new(w, h, out)
}

fn crop_values<T: Copy>(values: &[T], width: usize, rect: &ReferenceRegion) -> Vec<T> {
    rect.pixels(width).map(|i| values[i]).collect()
}

pub fn crop(image: &MultibandImage, rect: &ReferenceRegion) -> Result<MultibandImage> {
    rect.check(image.width(), image.height())?;
    let bands = image
        .bands()
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, crop_values(image.band_at(i), image.width(), rect)))
        .collect();
    MultibandImage::new(rect.w, rect.h, bands)
}

/// Crops images, truths and external posteriors of every frame.
pub fn crop_stack(stack: &ImageStack, rect: &ReferenceRegion) -> Result<ImageStack> {
    let frames = stack
        .frames()
        .iter()
        .map(|f| {
            let width = f.image.width();
            let mut out = Frame::new(f.date, crop(&f.image, rect)?);
            out.cloud_fraction = f.cloud_fraction;
            out.truth = f
                .truth
                .as_ref()
                .map(|t| LabelRaster::new(rect.w, rect.h, t.num_classes(), crop_values(t.labels(), width, rect)))
                .transpose()?;
            out.external_posterior = f
                .external_posterior
                .as_ref()
                .map(|planes| planes.iter().map(|p| crop_values(p, width, rect)).collect());
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    ImageStack::from_sorted(frames)
}

fn region_mean(values: &[f64], width: usize, rect: &ReferenceRegion) -> f64 {
    let sum: f64 = rect.pixels(width).map(|i| values[i]).sum();
    sum / (rect.w * rect.h) as f64
}

/// Adds a per-frame, per-band offset so that the mean over `region` matches
/// the first frame's.
pub fn bias_correct(stack: &ImageStack, region: &ReferenceRegion) -> Result<ImageStack> {
    let Some(first) = stack.frames().first() else {
        return Ok(stack.clone());
    };
    let width = first.image.width();
    region.check(width, first.image.height())?;
    let reference: Vec<f64> = (0..first.image.bands().len())
        .map(|b| region_mean(first.image.band_at(b), width, region))
        .collect();
    let mut frames = stack.frames().to_vec();
    for frame in frames.iter_mut().skip(1) {
        for (b, &ref_mean) in reference.iter().enumerate() {
            let offset = ref_mean - region_mean(frame.image.band_at(b), width, region);
            if offset != 0.0 {
                frame.image.band_at_mut(b).iter_mut().for_each(|v| *v += offset);
            }
        }
    }
    ImageStack::from_sorted(frames)
}

/// Drops frames above `max_cloud_fraction` or listed in `excluded`. Frames
/// without cloud metadata are kept.
pub fn filter_frames(stack: &ImageStack, max_cloud_fraction: f64, excluded: &[NaiveDate]) -> Result<ImageStack> {
    if !(0.0..=1.0).contains(&max_cloud_fraction) {
        return Err(Error::InvalidArgument(format!(
            "cloud threshold {max_cloud_fraction} outside [0, 1]"
        )));
    }
    let excluded: BTreeSet<_> = excluded.iter().collect();
    let frames: Vec<Frame> = stack
        .frames()
        .iter()
        .filter(|f| f.cloud_fraction.is_none_or(|c| c <= max_cloud_fraction) && !excluded.contains(&f.date))
        .cloned()
        .collect();
    if frames.is_empty() {
        log::warn!("frame filter removed every frame");
    }
    ImageStack::from_sorted(frames)
}

/// Partitions a stack into training and test stacks by date.
pub fn split_dates(stack: &ImageStack, train: &[NaiveDate], test: &[NaiveDate]) -> Result<(ImageStack, ImageStack)> {
    let train_set: BTreeSet<_> = train.iter().copied().collect();
    let test_set: BTreeSet<_> = test.iter().copied().collect();
    if let Some(d) = train_set.intersection(&test_set).next() {
        return Err(Error::Split(format!("{d} is listed as both training and test date")));
    }
    let available: BTreeSet<_> = stack.dates().into_iter().collect();
    if let Some(d) = train_set.union(&test_set).find(|d| !available.contains(d)) {
        return Err(Error::Split(format!("{d} is not a date of the stack")));
    }
    let pick = |set: &BTreeSet<NaiveDate>| {
        ImageStack::from_sorted(stack.frames().iter().filter(|f| set.contains(&f.date)).cloned().collect())
    };
    Ok((pick(&train_set)?, pick(&test_set)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Band;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn image(w: usize, h: usize, f: impl Fn(usize) -> f64) -> MultibandImage {
        let n = w * h;
        MultibandImage::new(
            w,
            h,
            vec![
                (Band::Green, (0..n).map(&f).collect()),
                (Band::Swir1, (0..n).map(|i| 2.0 * f(i)).collect()),
            ],
        )
        .unwrap()
    }

    fn stack(dates: &[&str], clouds: &[Option<f64>]) -> ImageStack {
        ImageStack::new(
            dates
                .iter()
                .zip(clouds)
                .map(|(d, &c)| {
                    let mut f = Frame::new(date(d), image(3, 2, |i| i as f64 * 0.1));
                    f.cloud_fraction = c;
                    f
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn resample_block_replicates() {
        let g = Grid::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let r = resample_nearest(&g, 2).unwrap();
        assert_eq!(r.data(), &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
        assert_eq!(resample_nearest(&g, 1).unwrap(), g);
        let r3 = resample_nearest(&g, 3).unwrap();
        assert_eq!((r3.width(), r3.height()), (6, 6));
        assert_eq!(r3.get(5, 5), 4);
        assert_eq!(r3.get(2, 3), 3);
        assert!(matches!(resample_nearest(&g, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn crop_shapes() {
        let img = image(4, 3, |i| i as f64);
        assert_eq!(crop(&img, &ReferenceRegion::full(4, 3)).unwrap(), img);
        let c = crop(&img, &ReferenceRegion::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.band(Band::Green).unwrap(), &[5.0, 6.0, 9.0, 10.0]);
        assert_eq!(c.band(Band::Swir1).unwrap(), &[10.0, 12.0, 18.0, 20.0]);
        assert!(matches!(crop(&img, &ReferenceRegion::new(0, 0, 0, 2)), Err(Error::Bounds(_))));
        assert!(matches!(crop(&img, &ReferenceRegion::new(3, 0, 2, 1)), Err(Error::Bounds(_))));
    }

    #[test]
    fn large_crop() {
        let img = MultibandImage::new(2229, 3341, vec![(Band::Green, vec![0.1; 2229 * 3341])]).unwrap();
        let c = crop(&img, &ReferenceRegion::new(100, 200, 200, 500)).unwrap();
        assert_eq!((c.width(), c.height()), (200, 500));
    }

    #[test]
    fn bias_recovers_shift() {
        let base = image(3, 2, |i| 0.1 + i as f64 * 0.05);
        let shifted = image(3, 2, |i| 0.15 + i as f64 * 0.05);
        let s = ImageStack::new(vec![
            Frame::new(date("2020-01-01"), base.clone()),
            Frame::new(date("2020-02-01"), shifted),
        ])
        .unwrap();
        let out = bias_correct(&s, &ReferenceRegion::new(0, 0, 2, 2)).unwrap();
        assert_eq!(out.frames()[0].image, base);
        for (a, b) in out.frames()[1].image.band(Band::Green).unwrap().iter().zip(base.band(Band::Green).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_offset_arithmetic() {
        let s = ImageStack::new(vec![
            Frame::new(date("2020-01-01"), image(2, 1, |_| 0.30)),
            Frame::new(date("2020-02-01"), image(2, 1, |_| 0.25)),
        ])
        .unwrap();
        let out = bias_correct(&s, &ReferenceRegion::full(2, 1)).unwrap();
        let g = out.frames()[1].image.band(Band::Green).unwrap();
        assert!(g.iter().all(|v| (v - 0.30).abs() < 1e-15));
    }

    #[test]
    fn cloud_filter() {
        let s = stack(&["2020-01-01", "2020-01-02", "2020-01-03"], &[Some(0.05), Some(0.12), None]);
        let kept = filter_frames(&s, 0.10, &[]).unwrap();
        assert_eq!(kept.dates(), vec![date("2020-01-01"), date("2020-01-03")]);
        assert_eq!(filter_frames(&s, 1.0, &[]).unwrap(), s);
        let kept = filter_frames(&s, 1.0, &[date("2020-01-02")]).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn splits() {
        let s = stack(&["2020-01-01", "2020-01-02", "2020-01-03"], &[None; 3]);
        let (train, test) = split_dates(&s, &[date("2020-01-02")], &[date("2020-01-01"), date("2020-01-03")]).unwrap();
        assert_eq!(train.len() + test.len(), 3);
        assert!(matches!(
            split_dates(&s, &[date("2020-01-01")], &[date("2020-01-01")]),
            Err(Error::Split(_))
        ));
        assert!(matches!(split_dates(&s, &[date("2021-01-01")], &[]), Err(Error::Split(_))));
        let (train, test) = split_dates(&s, &[], &s.dates()).unwrap();
        assert!(train.is_empty());
        assert_eq!(test, s);
    }
}
