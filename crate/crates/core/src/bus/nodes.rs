use serde::{Deserialize, Serialize};

use super::BusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Classifier,
    Heatmap,
    Captioner,
    Camera,
}

/// Required start order: the classifier must be up before anything that
/// feeds it.
pub const INIT_ORDER: [NodeKind; 4] = [
    NodeKind::Classifier,
    NodeKind::Heatmap,
    NodeKind::Captioner,
    NodeKind::Camera,
];

/// Tracks which nodes have started and rejects out-of-order starts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeRegistry {
    started: Vec<NodeKind>,
}

impl NodeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, node: NodeKind) -> Result<(), BusError> {
        if self.started.contains(&node) {
            return Err(BusError::AlreadyStarted(node));
        }
        let position = INIT_ORDER
            .iter()
            .position(|&n| n == node)
            .expect("every node is in INIT_ORDER");
        if let Some(&missing) = INIT_ORDER[..position].iter().find(|n| !self.started.contains(n)) {
            return Err(BusError::InitOrderViolation { node, missing });
        }
        self.started.push(node);
        Ok(())
    }

    /// Starts every remaining node in order.
    pub fn start_all(&mut self) -> Result<(), BusError> {
        for node in INIT_ORDER {
            if !self.started.contains(&node) {
                self.start(node)?;
            }
        }
        Ok(())
    }

    pub fn started(&self) -> &[NodeKind] {
        &self.started
    }

    pub fn is_started(&self, node: NodeKind) -> bool {
        self.started.contains(&node)
    }

    pub fn classifier_ready(&self) -> bool {
        self.is_started(NodeKind::Classifier)
    }

    pub fn is_ready(&self) -> bool {
        self.started.len() == INIT_ORDER.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_first_is_rejected() {
        let mut r = NodeRegistry::new();
        assert!(matches!(
            r.start(NodeKind::Camera),
            Err(BusError::InitOrderViolation {
                node: NodeKind::Camera,
                missing: NodeKind::Classifier
            })
        ));
        assert!(r.started().is_empty());
    }

    #[test]
    fn in_order_start() {
        let mut r = NodeRegistry::new();
        for n in INIT_ORDER {
            r.start(n).unwrap();
        }
        assert!(r.is_ready());
        assert!(matches!(r.start(NodeKind::Heatmap), Err(BusError::AlreadyStarted(_))));
    }

    #[test]
    fn skipping_heatmap_fails() {
        let mut r = NodeRegistry::new();
        r.start(NodeKind::Classifier).unwrap();
        assert!(matches!(
            r.start(NodeKind::Captioner),
            Err(BusError::InitOrderViolation {
                missing: NodeKind::Heatmap,
                ..
            })
        ));
    }
}
