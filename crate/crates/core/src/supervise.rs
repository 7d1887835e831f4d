//! Point-level supervision: labels from boxes, the persistence-guided label
//! rewrite (FB-S), and the one-vs-all focal loss with its logit gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{
    one_hot, ClassMask, LabelSource, LabeledBox, Point3, PointLabelSet, ALL_FOREGROUND, BACKGROUND,
    NUM_CLASSES,
};

/// Probabilities are clipped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbsConfig {
    pub tau_upper: f64,
    pub tau_lower: f64,
}

impl Default for FbsConfig {
    fn default() -> Self {
        FbsConfig {
            tau_upper: 0.7,
            tau_lower: 0.3,
        }
    }
}

impl FbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_lower < self.tau_upper) {
            return Err(Error::InvalidConfig(format!(
                "tau_lower ({}) must be below tau_upper ({})",
                self.tau_lower, self.tau_upper
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal alpha must be in (0, 1] and gamma >= 0, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Rewrites one point label from its persistence score. Both comparisons
/// are strict, so scores equal to a threshold keep the original label.
pub fn fbs_rewrite_one(label: ClassMask, tau: f64, config: &FbsConfig) -> ClassMask {
    if tau > config.tau_upper {
        BACKGROUND
    } else if tau < config.tau_lower && label == BACKGROUND {
        ALL_FOREGROUND
    } else {
        label
    }
}

pub fn fbs_rewrite(
    labels: &PointLabelSet,
    tau: &[f64],
    config: &FbsConfig,
) -> Result<PointLabelSet> {
    if labels.len() != tau.len() {
        return Err(Error::Invalid(format!(
            "{} labels but {} persistence scores",
            labels.len(),
            tau.len()
        )));
    }
    Ok(PointLabelSet {
        labels: labels
            .labels
            .iter()
            .zip(tau)
            .map(|(&l, &t)| fbs_rewrite_one(l, t, config))
            .collect(),
        source: LabelSource::RewrittenFbs,
    })
}

/// `x^g`, exact for the small integer exponents used in practice.
fn pow_gamma(x: f64, g: f64) -> f64 {
    if g == 2.0 {
        x * x
    } else if g == 1.0 {
        x
    } else if g == 0.0 {
        1.0
    } else {
        x.powf(g)
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `-α Σ_c [y_c (1-p_c)^γ ln p_c + (1-y_c) p_c^γ ln(1-p_c)]`.
pub fn focal_loss(p: &[f64; NUM_CLASSES], y: &ClassMask, config: &FocalConfig) -> f64 {
    let mut sum = 0.0;
    for c in 0..NUM_CLASSES {
        let pc = clip(p[c]);
        sum += if y[c] {
            pow_gamma(1.0 - pc, config.gamma) * pc.ln()
        } else {
            pow_gamma(pc, config.gamma) * (1.0 - pc).ln()
        };
    }
    -config.alpha * sum
}

/// Gradient of [`focal_loss`] with respect to the logits `z_c`, where
/// `p_c = sigmoid(z_c)`.
pub fn focal_loss_grad(
    p: &[f64; NUM_CLASSES],
    y: &ClassMask,
    config: &FocalConfig,
) -> [f64; NUM_CLASSES] {
    let (a, g) = (config.alpha, config.gamma);
    let mut out = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let pc = clip(p[c]);
        let qc = 1.0 - pc;
        out[c] = if y[c] {
            a * pow_gamma(qc, g) * (g * pc * pc.ln() - qc)
        } else {
            a * pow_gamma(pc, g) * (pc - g * qc * qc.ln())
        };
    }
    out
}

/// One-hot labels from the most confident box containing each point.
pub fn labels_from_boxes(points: &[Point3], boxes: &[LabeledBox]) -> PointLabelSet {
    let labels = Execution::default().map(points, |p| {
        let mut best: Option<&LabeledBox> = None;
        for b in boxes {
            if b.contains(p) && best.is_none_or(|cur| b.confidence > cur.confidence) {
                best = Some(b);
            }
        }
        best.map_or(BACKGROUND, |b| one_hot(b.class))
    });
    PointLabelSet {
        labels,
        source: LabelSource::FromBoxes,
    }
}
