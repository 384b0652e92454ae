//! Text-specific object proposals: MSER segmentation over several channels
//! and scales, single-linkage grouping under several similarity cues, and
//! ranking of every hierarchy node.

pub mod boost;
pub mod error;
pub mod eval;
pub mod geom;
pub mod grouping;
pub mod imageio;
pub mod mser;
pub mod pipeline;
pub mod ranking;
pub mod regionfeat;
pub mod synth;

pub use boost::{StumpEnsemble, TrainingSet};
pub use error::{Error, Result};
pub use eval::{GroundTruth, GtFormat, RankedBoxes};
pub use geom::{BBox, PixelBox};
pub use grouping::{CueId, Hierarchy, HierarchySource};
pub use imageio::{ChannelId, PyramidLevel, Raster, RgbImage};
pub use mser::{MserParams, Polarity, Region};
pub use pipeline::{DiversificationConfig, OutputFormat, Preset};
pub use ranking::{Proposal, ProposalList, Strategy};
pub use regionfeat::RegionFeatures;
