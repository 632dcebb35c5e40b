//! Tooling around a trained policy: symmetry and seed averaging, an
//! orientation classifier and Hough-based fine alignment.

pub mod classifier;
pub mod hough;
pub mod tta;

pub use classifier::{label_for, train_classifier, Classifier, ClassifierConfig, Dataset, DatasetSpec, OrientationClass};
pub use hough::{hough_fine_align, Calibration, FineAlignment, HoughSpace};
pub use tta::{ensemble_action, tta_action, DihedralTransform, MeanPolicy};
