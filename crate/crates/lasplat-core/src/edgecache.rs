//! Per-view Laplacian edge maps, computed once before training and shared
//! read-only afterwards.

use alloc::vec::Vec;

use crate::imaging::{laplacian_edge_map, EdgeWeightMap, Image};
use crate::scenes::Dataset;

/// FNV-1a over the image bits, used to detect stale cache entries.
fn image_hash(img: &Image) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    };
    mix(&(img.width as u64).to_le_bytes());
    mix(&(img.height as u64).to_le_bytes());
    for v in &img.data {
        mix(&v.to_bits().to_le_bytes());
    }
    h
}

/// Edge maps for every training view, keyed by view index.
#[derive(Clone, Debug)]
pub struct EdgeCache {
    entries: Vec<Option<(u64, EdgeWeightMap)>>,
}

impl EdgeCache {
    /// Computes a Laplacian edge map for each training view; test views get
    /// no entry.
    pub fn build(ds: &Dataset) -> EdgeCache {
        let entries = ds
            .views
            .iter()
            .zip(ds.test_mask.iter())
            .map(|(v, &is_test)| {
                if is_test {
                    None
                } else {
                    Some((image_hash(&v.image), laplacian_edge_map(&v.image)))
                }
            })
            .collect();
        EdgeCache { entries }
    }

    pub fn map(&self, view_index: usize) -> Option<&EdgeWeightMap> {
        self.entries.get(view_index).and_then(|e| e.as_ref().map(|(_, m)| m))
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every cached entry against the current image contents.
    pub fn is_valid_for(&self, ds: &Dataset) -> bool {
        if self.entries.len() != ds.views.len() {
            return false;
        }
        self.entries.iter().zip(ds.views.iter()).all(|(e, v)| match e {
            None => true,
            Some((hash, _)) => *hash == image_hash(&v.image),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_synthetic, SceneKind, SyntheticSpec};

    #[test]
    fn one_entry_per_training_view() {
        let (ds, _) =
            generate_synthetic(&SyntheticSpec::new(SceneKind::BlobField, 32, 8, 9)).unwrap();
        let cache = EdgeCache::build(&ds);
        assert_eq!(cache.len(), 7);
        assert!(cache.map(0).is_none()); // test view
        assert!(cache.map(1).is_some());
        assert!(cache.is_valid_for(&ds));
    }

    #[test]
    fn rebuild_is_identical_and_edits_invalidate() {
        let (mut ds, _) =
            generate_synthetic(&SyntheticSpec::new(SceneKind::CheckerBox, 32, 8, 9)).unwrap();
        let a = EdgeCache::build(&ds);
        let b = EdgeCache::build(&ds);
        for i in 0..ds.views.len() {
            match (a.map(i), b.map(i)) {
                (Some(ma), Some(mb)) => assert_eq!(ma.weights, mb.weights),
                (None, None) => {}
                _ => panic!("cache shape mismatch"),
            }
        }
        ds.views[1].image.data[0] += 0.25;
        assert!(!a.is_valid_for(&ds));
    }

    #[test]
    fn constant_view_yields_zero_map() {
        let (mut ds, _) =
            generate_synthetic(&SyntheticSpec::new(SceneKind::BlobField, 16, 8, 9)).unwrap();
        for v in &mut ds.views[1].image.data {
            *v = 0.5;
        }
        let cache = EdgeCache::build(&ds);
        assert!(cache.map(1).unwrap().weights.iter().all(|&w| w == 0.0));
    }
}
