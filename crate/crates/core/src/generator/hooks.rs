use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// A feature-map rewrite applied after a layer.
pub type FeatureTransform = Arc<dyn Fn(&FeatureMap) -> Result<FeatureMap> + Send + Sync>;

/// What happens to `f_i` before it is passed to layer `i + 1`.
#[derive(Clone)]
pub enum Intervention {
    /// Replace `f_i` outright.
    Replace(FeatureMap),
    /// Replace `f_i` with a function of itself.
    Transform(FeatureTransform),
}

impl Intervention {
    pub(crate) fn apply(&self, current: &FeatureMap) -> Result<FeatureMap> {
        match self {
            Intervention::Replace(f) => Ok(f.clone()),
            Intervention::Transform(t) => t(current),
        }
    }
}

impl fmt::Debug for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intervention::Replace(m) => write!(f, "Replace({:?})", m.shape()),
            Intervention::Transform(_) => write!(f, "Transform(..)"),
        }
    }
}

/// Capture and injection points for one synthesis pass.
///
/// Captures record `f_i` as produced by layer `i`, before any intervention at
/// that layer. Interventions run in insertion order; their result is what
/// layer `i + 1` (or the RGB head, after the last layer) consumes.
#[derive(Debug, Clone, Default)]
pub struct HookSet {
    capture: BTreeSet<usize>,
    interventions: BTreeMap<usize, Vec<Intervention>>,
}

impl HookSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capture(mut self, layer: usize) -> Self {
        self.capture.insert(layer);
        self
    }

    pub fn capture_all(mut self, num_layers: usize) -> Self {
        self.capture.extend(0..num_layers);
        self
    }

    /// Replaces `f_{feature.layer_index}` with `feature`.
    pub fn inject(mut self, feature: FeatureMap) -> Self {
        self.interventions
            .entry(feature.layer_index)
            .or_default()
            .push(Intervention::Replace(feature));
        self
    }

    pub fn transform<F>(mut self, layer: usize, f: F) -> Self
    where
        F: Fn(&FeatureMap) -> Result<FeatureMap> + Send + Sync + 'static,
    {
        self.interventions
            .entry(layer)
            .or_default()
            .push(Intervention::Transform(Arc::new(f)));
        self
    }

    pub fn captures(&self, layer: usize) -> bool {
        self.capture.contains(&layer)
    }

    pub fn interventions(&self, layer: usize) -> &[Intervention] {
        self.interventions.get(&layer).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.capture.is_empty() && self.interventions.is_empty()
    }

    pub(crate) fn validate(&self, num_layers: usize) -> Result<()> {
        let max = self
            .capture
            .iter()
            .chain(self.interventions.keys())
            .max()
            .copied();
        match max {
            Some(m) if m >= num_layers => Err(Error::Injection {
                layer: m,
                reason: format!("generator has {num_layers} layers"),
            }),
            _ => Ok(()),
        }
    }
}
