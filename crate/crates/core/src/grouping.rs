//! Partition of training views into disjoint groups of neighboring cameras.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::Camera;

/// Views stylized jointly; indices sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewGroup {
    pub view_indices: Vec<usize>,
}

impl ViewGroup {
    pub fn len(&self) -> usize {
        self.view_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_indices.is_empty()
    }
}

/// Greedy farthest-seed clustering by camera-center distance.
///
/// The first seed is view 0. Each later seed is the unassigned view whose
/// distance to the nearest existing group centroid is largest. A seed takes
/// its `n - 1` nearest unassigned views. Ties go to the lower index.
pub fn group_views(cameras: &[Camera], n: usize) -> Result<Vec<ViewGroup>> {
    if cameras.is_empty() {
        return Err(Error::EmptyCameraList);
    }
    if n == 0 {
        return Err(Error::InvalidGroupSize);
    }
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    Ok(group_centers(&centers, n))
}

pub fn group_centers(centers: &[Vector3<f64>], n: usize) -> Vec<ViewGroup> {
    let mut assigned = vec![false; centers.len()];
    let mut centroids: Vec<Vector3<f64>> = Vec::new();
    let mut groups = Vec::new();
    let mut remaining = centers.len();

    while remaining > 0 {
        let seed = if centroids.is_empty() {
            0
        } else {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (i, c) in centers.iter().enumerate() {
                if assigned[i] {
                    continue;
                }
                let d = centroids.iter().map(|g| (c - g).norm()).fold(f64::INFINITY, f64::min);
                if d > best.1 {
                    best = (i, d);
                }
            }
            best.0
        };

        let mut candidates: Vec<(f64, usize)> = (0..centers.len())
            .filter(|&i| !assigned[i] && i != seed)
            .map(|i| ((centers[i] - centers[seed]).norm(), i))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut members = vec![seed];
        members.extend(candidates.iter().take(n - 1).map(|&(_, i)| i));
        for &i in &members {
            assigned[i] = true;
        }
        remaining -= members.len();
        let centroid = members.iter().map(|&i| centers[i]).sum::<Vector3<f64>>() / members.len() as f64;
        centroids.push(centroid);
        members.sort_unstable();
        groups.push(ViewGroup { view_indices: members });
    }
    groups
}

/// Mean pairwise camera-center distance inside groups, averaged over
/// groups with at least two members.
pub fn mean_within_group_distance(centers: &[Vector3<f64>], groups: &[ViewGroup]) -> f64 {
    let mut total = 0.0;
    let mut counted = 0usize;
    for g in groups {
        let v = &g.view_indices;
        if v.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for a in 0..v.len() {
            for b in a + 1..v.len() {
                sum += (centers[v[a]] - centers[v[b]]).norm();
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// One view per group; used when neighboring-view sharing is disabled.
pub fn singleton_groups(n_views: usize) -> Vec<ViewGroup> {
    (0..n_views).map(|i| ViewGroup { view_indices: vec![i] }).collect()
}
