//! Edge/cloud classifiers and the two-threshold edge decision rule.
//!
//! The edge classifier is synthetic: its confidence for a package is a Beta
//! draw whose shape depends on whether the package really is the query
//! class. The draw is keyed on `(seed, package_id)` so it does not depend on
//! which device classifies the package or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vision::BoundingBox;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("thresholds must satisfy 0 <= beta <= 0.5 <= alpha <= 1 (alpha={alpha}, beta={beta})")]
    ThresholdOrder { alpha: f64, beta: f64 },
    #[error("beta shape parameters must be positive: {0:?}")]
    Shape((f64, f64)),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePackage {
    pub package_id: u64,
    pub camera_id: u32,
    pub capture_time: f64,
    pub bbox: BoundingBox,
    pub byte_size: u64,
    /// Ground truth. Only the cloud oracle and the metrics look at this.
    pub true_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(Confidence(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Positive,
    Negative,
    Uncertain,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Positive => "positive",
            Decision::Negative => "negative",
            Decision::Uncertain => "uncertain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticClassifierSpec {
    /// Beta shape for packages of the query class.
    pub positive_shape: (f64, f64),
    /// Beta shape for everything else.
    pub negative_shape: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticClassifierSpec {
    fn default() -> Self {
        SyntheticClassifierSpec {
            positive_shape: (8.0, 2.0),
            negative_shape: (2.0, 8.0),
            seed: 0,
        }
    }
}

impl SyntheticClassifierSpec {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        for shape in [self.positive_shape, self.negative_shape] {
            if !(shape.0 > 0.0 && shape.1 > 0.0 && shape.0.is_finite() && shape.1.is_finite()) {
                return Err(ClassifyError::Shape(shape));
            }
        }
        Ok(())
    }
}

/// Stream id reserved for classifier draws; other per-package draws use
/// different words so the sequences never overlap.
const CLASSIFIER_WORD: u64 = 0x636c_6173;

/// A generator dedicated to one package and one purpose.
pub fn package_rng(seed: u64, package_id: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.rotate_left(32));
    rng.set_stream(package_id);
    rng
}

pub fn edge_classify(
    pkg: &ImagePackage,
    query_class: &str,
    spec: &SyntheticClassifierSpec,
) -> Result<Confidence, ClassifyError> {
    spec.validate()?;
    let (a, b) = if pkg.true_label == query_class {
        spec.positive_shape
    } else {
        spec.negative_shape
    };
    let beta = Beta::new(a, b).map_err(|_| ClassifyError::Shape((a, b)))?;
    let mut rng = package_rng(spec.seed, pkg.package_id, CLASSIFIER_WORD);
    Ok(Confidence(beta.sample(&mut rng).clamp(0.0, 1.0)))
}

pub fn check_thresholds(alpha: f64, beta: f64) -> Result<(), ClassifyError> {
    if (0.0..=0.5).contains(&beta) && (0.5..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(ClassifyError::ThresholdOrder { alpha, beta })
    }
}

/// `f > alpha` is positive, `f < beta` negative, anything in `[beta, alpha]`
/// is uncertain.
pub fn decide(f: Confidence, alpha: f64, beta: f64) -> Result<Verdict, ClassifyError> {
    check_thresholds(alpha, beta)?;
    let decision = if f.0 > alpha {
        Decision::Positive
    } else if f.0 < beta {
        Decision::Negative
    } else {
        Decision::Uncertain
    };
    Ok(Verdict {
        decision,
        confidence: f,
    })
}

/// Ground-truth oracle standing in for the large cloud model.
pub fn cloud_classify(pkg: &ImagePackage, query_class: &str) -> Verdict {
    if pkg.true_label == query_class {
        Verdict {
            decision: Decision::Positive,
            confidence: Confidence(1.0),
        }
    } else {
        Verdict {
            decision: Decision::Negative,
            confidence: Confidence(0.0),
        }
    }
}
