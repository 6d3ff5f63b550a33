//! Synthetic datasets and the q-space to propagator transform.

pub mod eap;
pub mod spd;
pub mod volumes;

pub use eap::{eap_matrix, eap_transform, volume_weights};
pub use spd::{make_p3_dataset, nearest_centroid_accuracy, sample_spd_gaussian, P3Dataset, P3Spec, SpdGaussianSpec};
pub use volumes::{make_synthetic_volumes, roi_labels, VolumeDataset, VolumeSpec, ROI_COUNT};
