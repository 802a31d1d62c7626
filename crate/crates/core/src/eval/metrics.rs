use crate::domain_mix::LabelMap;
use crate::error::{DtsError, Result};
use crate::segmodel::SegNet;
use crate::synth::SceneSample;

/// `counts[gt * C + pred]` pixel tallies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction. Ignored ground-truth pixels are skipped; the
    /// prediction itself must label every pixel.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if !pred.same_size(gt) {
            return Err(DtsError::dim(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let c = self.num_classes;
        if pred.data().iter().any(|&p| p as usize >= c) {
            return Err(DtsError::InvalidArgument(
                "prediction contains ignore or out-of-range labels".into(),
            ));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == LabelMap::IGNORE {
                continue;
            }
            if g as usize >= c {
                return Err(DtsError::InvalidArgument(format!(
                    "ground truth label {g} out of range"
                )));
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    /// Per-class IoU (`None` for classes absent from both ground truth and
    /// predictions) and their mean over the remaining classes.
    pub fn miou(&self) -> Result<(Vec<Option<f64>>, f64)> {
        if self.total() == 0 {
            return Err(DtsError::InvalidArgument(
                "mIoU of an empty confusion matrix".into(),
            ));
        }
        let c = self.num_classes;
        let ious: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..c).map(|i| self.get(i, k)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = ious.iter().flatten().copied().collect();
        Ok((ious, present.iter().sum::<f64>() / present.len() as f64))
    }
}

/// Confusion matrix of a model's predictions over labeled samples.
pub fn evaluate(net: &SegNet, samples: &[SceneSample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.arch().num_classes);
    for s in samples {
        cm.accumulate(&net.predict(&s.image)?, &s.label)?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = lm(2, 2, &[0, 1, 2, 1]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&gt, &gt).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.get(i, j), 0);
                }
            }
        }
        let (ious, m) = cm.miou().unwrap();
        assert_eq!(ious, vec![Some(1.0); 3]);
        assert_eq!(m, 1.0);
    }

    #[test]
    fn ignored_ground_truth_is_skipped() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&lm(1, 2, &[0, 1]), &lm(1, 2, &[255, 255]))
            .unwrap();
        assert_eq!(cm, ConfusionMatrix::new(3));
        assert!(cm.miou().is_err());
        assert!(cm
            .accumulate(&lm(1, 2, &[255, 1]), &lm(1, 2, &[0, 1]))
            .is_err());
    }

    #[test]
    fn hand_tallied_matrix() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&lm(2, 2, &[0, 2, 2, 1]), &lm(2, 2, &[0, 1, 2, 2]))
            .unwrap();
        let want = [[1, 0, 0], [0, 0, 1], [0, 1, 1]];
        for (i, row) in want.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(cm.get(i, j), v);
            }
        }
    }

    #[test]
    fn constant_prediction_two_equal_classes() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&lm(1, 4, &[0; 4]), &lm(1, 4, &[0, 0, 1, 1]))
            .unwrap();
        let (ious, m) = cm.miou().unwrap();
        assert_eq!(ious, vec![Some(0.5), Some(0.0)]);
        assert_eq!(m, 0.25);
    }

    #[test]
    fn predicted_but_absent_class_scores_zero() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&lm(1, 2, &[0, 2]), &lm(1, 2, &[0, 0]))
            .unwrap();
        let (ious, m) = cm.miou().unwrap();
        assert_eq!(ious, vec![Some(0.5), None, Some(0.0)]);
        assert_eq!(m, 0.25);
    }
}
