//! Propagates subject height labels to face detections.
//!
//! Labels attached to an image say who is present, not where. To decide
//! which detection belongs to which labeled subject, we build the matrix of
//! Euclidean distances between detection descriptors and the subjects'
//! profile descriptors, keep pairs whose distance is strictly minimal in
//! both their row and their column, and accept a pair only when its best
//! distance is clearly better than the runner-up in the same column
//! (ratio test). Everything else stays unassigned: a missed label is
//! cheaper than a wrong one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, Detection, DetectionSet, SubjectStore};

/// Default ratio-test threshold.
pub const DEFAULT_TAU: f64 = 0.9;

/// Detection-by-subject distance matrix. Row index is the detection,
/// column index is the candidate subject.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeError(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::SpecError("distances must be finite and non-negative".into()));
        }
        Ok(DistanceMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.cols + j]
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// D[k, j] = Euclidean distance between detection k's descriptor and
/// subject j's profile descriptor.
pub fn build_distance_matrix(detections: &[Detection], subjects: &[&crate::model::Subject]) -> Result<DistanceMatrix> {
    if detections.is_empty() {
        return Err(Error::EmptyInput("detections"));
    }
    if subjects.is_empty() {
        return Err(Error::EmptyInput("subjects"));
    }
    let dim = subjects[0].descriptor.len();
    for s in subjects {
        if s.descriptor.len() != dim {
            return Err(Error::DescriptorDimMismatch {
                context: format!("subject '{}'", s.id),
                expected: dim,
                got: s.descriptor.len(),
            });
        }
    }
    let mut values = Vec::with_capacity(detections.len() * subjects.len());
    for (k, det) in detections.iter().enumerate() {
        if det.descriptor.len() != dim {
            return Err(Error::DescriptorDimMismatch {
                context: format!("detection {k}"),
                expected: dim,
                got: det.descriptor.len(),
            });
        }
        for s in subjects {
            values.push(euclidean(&det.descriptor, &s.descriptor));
        }
    }
    DistanceMatrix::from_values(detections.len(), subjects.len(), values)
}

/// All (k, j) whose distance is strictly smaller than every other entry in
/// row k and in column j. A tied minimum yields no pair for that row or
/// column.
pub fn mutual_best_pairs(d: &DistanceMatrix) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for k in 0..d.rows() {
        // Unique row minimum.
        let mut best_j = 0usize;
        let mut best = f64::INFINITY;
        let mut tied = false;
        for j in 0..d.cols() {
            let v = d.get(k, j);
            if v < best {
                best = v;
                best_j = j;
                tied = false;
            } else if v == best {
                tied = true;
            }
        }
        if tied {
            continue;
        }
        // Strict column minimum at (k, best_j).
        let strict_col_min =
            (0..d.rows()).all(|k2| k2 == k || d.get(k2, best_j) > best);
        if strict_col_min {
            pairs.push((k, best_j));
        }
    }
    pairs
}

/// Ratio test for the pair (k_star, j): the quotient of the pair's distance
/// over the best distance of the *other* detections in column j. Accepted
/// when the quotient is below `tau`.
///
/// Conventions: a single detection (empty denominator set) gets q = 0 and is
/// accepted; a zero denominator with a positive numerator rejects with
/// q = infinity; both zero (duplicate descriptors) gets q = 0 and accepts.
pub fn ratio_test(d: &DistanceMatrix, k_star: usize, j: usize, tau: f64) -> (bool, f64) {
    let numerator = d.get(k_star, j);
    let mut denominator = f64::INFINITY;
    for k in 0..d.rows() {
        if k != k_star {
            denominator = denominator.min(d.get(k, j));
        }
    }
    if denominator.is_infinite() {
        return (true, 0.0);
    }
    if denominator == 0.0 {
        return if numerator == 0.0 { (true, 0.0) } else { (false, f64::INFINITY) };
    }
    let q = numerator / denominator;
    (q < tau, q)
}

/// Mutual best match plus ratio test over a distance matrix. Returns
/// accepted (detection, subject-column, quotient) triples.
pub fn assign_matrix(d: &DistanceMatrix, tau: f64) -> Vec<(usize, usize, f64)> {
    mutual_best_pairs(d)
        .into_iter()
        .filter_map(|(k, j)| {
            let (accept, q) = ratio_test(d, k, j, tau);
            accept.then_some((k, j, q))
        })
        .collect()
}

/// Exhaustive reference implementation of the assignment rule, written
/// without any of the helpers above. Only for verification; capped at 8x8.
pub fn brute_force_assign(d: &DistanceMatrix, tau: f64) -> Result<Vec<(usize, usize, f64)>> {
    if d.rows() > 8 || d.cols() > 8 {
        return Err(Error::OracleTooLarge { rows: d.rows(), cols: d.cols() });
    }
    let mut accepted = Vec::new();
    for k in 0..d.rows() {
        for j in 0..d.cols() {
            let v = d.get(k, j);
            let mut minimal = true;
            for j2 in 0..d.cols() {
                if j2 != j && d.get(k, j2) <= v {
                    minimal = false;
                }
            }
            for k2 in 0..d.rows() {
                if k2 != k && d.get(k2, j) <= v {
                    minimal = false;
                }
            }
            if !minimal {
                continue;
            }
            let mut others: Vec<f64> = Vec::new();
            for k2 in 0..d.rows() {
                if k2 != k {
                    others.push(d.get(k2, j));
                }
            }
            let (ok, q) = match others.iter().cloned().fold(None::<f64>, |m, x| {
                Some(match m {
                    None => x,
                    Some(m) => m.min(x),
                })
            }) {
                None => (true, 0.0),
                Some(second) if second == 0.0 && v == 0.0 => (true, 0.0),
                Some(second) if second == 0.0 => (false, f64::INFINITY),
                Some(second) => (v / second < tau, v / second),
            };
            if ok {
                accepted.push((k, j, q));
            }
        }
    }
    Ok(accepted)
}

/// One accepted (detection, subject) pair with the ratio-test quotient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub detection: usize,
    pub subject: String,
    pub q: f64,
}

/// Result of propagating one image's labels: a partial matching plus the
/// leftovers on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub image_id: String,
    pub pairs: Vec<AssignedPair>,
    pub unassigned_subjects: Vec<String>,
    pub unassigned_detections: Vec<usize>,
}

/// Propagates the candidate subjects' height labels onto the detections of
/// one image. A single detection with a single candidate is attributed
/// directly (q = 0); otherwise the mutual-best + ratio-test rule applies.
pub fn propagate_labels(set: &DetectionSet, store: &SubjectStore, tau: f64) -> Result<Assignment> {
    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    for id in &set.candidate_subjects {
        let subject = store.get(id).ok_or_else(|| Error::UnknownSubject {
            image_id: set.image_id.clone(),
            subject_id: id.clone(),
        })?;
        if seen.insert(id.clone()) {
            candidates.push(subject);
        }
    }
    for (k, det) in set.detections.iter().enumerate() {
        if det.descriptor.len() != store.d_face() {
            return Err(Error::DescriptorDimMismatch {
                context: format!("image '{}' detection {k}", set.image_id),
                expected: store.d_face(),
                got: det.descriptor.len(),
            });
        }
    }

    let assigned: Vec<(usize, usize, f64)> = if set.detections.is_empty() || candidates.is_empty()
    {
        Vec::new()
    } else if set.detections.len() == 1 && candidates.len() == 1 {
        // Single face, single label: attribute directly.
        vec![(0, 0, 0.0)]
    } else {
        let d = build_distance_matrix(&set.detections, &candidates)?;
        assign_matrix(&d, tau)
    };

    let taken_dets: BTreeSet<usize> = assigned.iter().map(|(k, _, _)| *k).collect();
    let taken_subs: BTreeSet<usize> = assigned.iter().map(|(_, j, _)| *j).collect();
    Ok(Assignment {
        image_id: set.image_id.clone(),
        pairs: assigned
            .iter()
            .map(|&(k, j, q)| AssignedPair { detection: k, subject: candidates[j].id.clone(), q })
            .collect(),
        unassigned_subjects: candidates
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken_subs.contains(j))
            .map(|(_, s)| s.id.clone())
            .collect(),
        unassigned_detections: (0..set.detections.len()).filter(|k| !taken_dets.contains(k)).collect(),
    })
}

/// Flat wire record for `assignments.jsonl`: one row per accepted pair,
/// carrying the detection geometry and descriptor so that preprocessing can
/// run from the assignment file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedDetection {
    pub image_id: String,
    pub detection: usize,
    pub subject: String,
    pub q: f64,
    pub bbox: BBox,
    pub descriptor: Vec<f64>,
    pub image_size: (u32, u32),
}

pub fn flatten_assignment(assignment: &Assignment, set: &DetectionSet) -> Vec<AssignedDetection> {
    assignment
        .pairs
        .iter()
        .map(|p| {
            let det = &set.detections[p.detection];
            AssignedDetection {
                image_id: assignment.image_id.clone(),
                detection: p.detection,
                subject: p.subject.clone(),
                q: p.q,
                bbox: det.bbox,
                descriptor: det.descriptor.clone(),
                image_size: set.image_size,
            }
        })
        .collect()
}

/// Ground-truth row: which subject (if any) detection `detection` of
/// `image_id` really is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub image_id: String,
    pub detection: usize,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub n_labels: usize,
    pub n_assigned: usize,
    pub n_wrong: usize,
    /// Undefined (None) when nothing was assigned.
    pub precision: Option<f64>,
    pub recall: f64,
}

/// Compares assignments against ground truth. Precision is correct over
/// assigned, recall is correct over the number of true labels.
pub fn audit_assignments(assignments: &[AssignedDetection], truth: &[TruthRecord]) -> AuditReport {
    let mut truth_map = std::collections::BTreeMap::new();
    let mut n_labels = 0usize;
    for t in truth {
        if t.subject.is_some() {
            n_labels += 1;
        }
        truth_map.insert((t.image_id.clone(), t.detection), t.subject.clone());
    }
    let n_assigned = assignments.len();
    let mut n_wrong = 0usize;
    for a in assignments {
        let actual = truth_map.get(&(a.image_id.clone(), a.detection));
        match actual {
            Some(Some(subject)) if *subject == a.subject => {}
            _ => n_wrong += 1,
        }
    }
    let correct = n_assigned - n_wrong;
    AuditReport {
        n_labels,
        n_assigned,
        n_wrong,
        precision: if n_assigned > 0 { Some(correct as f64 / n_assigned as f64) } else { None },
        recall: if n_labels > 0 { correct as f64 / n_labels as f64 } else { 0.0 },
    }
}
