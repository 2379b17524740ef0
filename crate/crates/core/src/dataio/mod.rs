//! Volume and crop-dataset persistence, corpus manifests and the synthetic
//! phantom corpus.

pub mod crops;
pub mod manifest;
pub mod phantom;
pub mod sgvol;

pub use crops::{load_crop_dataset, save_crop_dataset};
pub use manifest::{CorpusManifest, ManifestEntry, Split};
pub use phantom::{generate_phantom_corpus, generate_phantoms, render_patient, PhantomPatient, PhantomSpec};
pub use sgvol::{load_volume, save_volume};
