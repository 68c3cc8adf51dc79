//! Pixel-wise voting across views.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Majority vote over per-view label maps; ties go to the lowest class id.
pub fn fuse_labels(views: &[&[u16]], num_classes: usize) -> Result<Vec<u16>> {
    fuse(views, num_classes, None)
}

/// Majority vote over the argmax of each view's `K x H x W` (or `1 x K x H x W`)
/// logits. Ties are broken by the larger summed softmax probability among the
/// tied classes, then by the lowest class id.
pub fn fuse_logits(views: &[Tensor]) -> Result<Vec<u16>> {
    let Some(first) = views.first() else {
        return Err(Error::InvalidArgument("fusion needs at least one view".into()));
    };
    let (k, plane) = class_dims(first)?;
    let mut labels = Vec::with_capacity(views.len());
    let mut probs = Vec::with_capacity(views.len());
    for v in views {
        if class_dims(v)? != (k, plane) {
            return Err(Error::shape(
                "fuse_logits",
                format!("view shape {:?} differs from {:?}", v.shape(), first.shape()),
            ));
        }
        let (l, p) = softmax_argmax(v.data(), k, plane);
        labels.push(l);
        probs.push(p);
    }
    let refs: Vec<&[u16]> = labels.iter().map(Vec::as_slice).collect();
    let prob_refs: Vec<&[f32]> = probs.iter().map(Vec::as_slice).collect();
    fuse(&refs, k, Some(&prob_refs))
}

fn class_dims(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [k, h, w] | [1, k, h, w] => Ok((k, h * w)),
        _ => Err(Error::shape(
            "fuse_logits",
            format!("expected K x H x W logits, got {:?}", t.shape()),
        )),
    }
}

/// Per-pixel argmax and class-major softmax probabilities.
fn softmax_argmax(logits: &[f32], k: usize, plane: usize) -> (Vec<u16>, Vec<f32>) {
    let mut labels = vec![0u16; plane];
    let mut probs = vec![0.0f32; k * plane];
    for p in 0..plane {
        let mut best = (f32::NEG_INFINITY, 0usize);
        for c in 0..k {
            let v = logits[c * plane + p];
            if v > best.0 {
                best = (v, c);
            }
        }
        labels[p] = best.1 as u16;
        let z: f64 = (0..k).map(|c| ((logits[c * plane + p] - best.0) as f64).exp()).sum();
        for c in 0..k {
            probs[c * plane + p] = (((logits[c * plane + p] - best.0) as f64).exp() / z) as f32;
        }
    }
    (labels, probs)
}

fn fuse(views: &[&[u16]], k: usize, probs: Option<&[&[f32]]>) -> Result<Vec<u16>> {
    let Some(first) = views.first() else {
        return Err(Error::InvalidArgument("fusion needs at least one view".into()));
    };
    let plane = first.len();
    if views.iter().any(|v| v.len() != plane) {
        return Err(Error::shape("fuse_views", "views differ in size".to_string()));
    }
    let mut out = vec![0u16; plane];
    let mut votes = vec![0u32; k];
    for (p, slot) in out.iter_mut().enumerate() {
        votes.fill(0);
        for v in views {
            let l = v[p] as usize;
            if l >= k {
                return Err(Error::LabelOutOfRange {
                    label: v[p],
                    num_classes: k,
                });
            }
            votes[l] += 1;
        }
        let top = *votes.iter().max().unwrap_or(&0);
        let mut best: Option<(f64, usize)> = None;
        for c in (0..k).filter(|&c| votes[c] == top) {
            let score = probs.map_or(0.0, |ps| ps.iter().map(|pv| pv[c * plane + p] as f64).sum());
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, c));
            }
        }
        *slot = best.map_or(0, |(_, c)| c as u16);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_view_is_its_argmax() {
        let t = Tensor::new(&[3, 1, 2], vec![0.1, 2.0, 0.9, 0.0, 0.3, 1.0]).unwrap();
        assert_eq!(fuse_logits(&[t]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn majority_wins() {
        let (a, b, c) = ([1u16], [1u16], [2u16]);
        assert_eq!(fuse_labels(&[&a, &b, &c], 3).unwrap(), vec![1]);
    }

    #[test]
    fn tie_broken_by_summed_probability_then_id() {
        // one vote each for 0 and 1; view voting 1 is far more confident
        let v0 = Tensor::new(&[2, 1, 1], vec![0.1, 0.0]).unwrap();
        let v1 = Tensor::new(&[2, 1, 1], vec![0.0, 3.0]).unwrap();
        assert_eq!(fuse_logits(&[v0.clone(), v1.clone()]).unwrap(), vec![1]);
        assert_eq!(fuse_logits(&[v1, v0]).unwrap(), vec![1]);
        assert_eq!(fuse_labels(&[&[1], &[0]], 2).unwrap(), vec![0]);
    }

    #[test]
    fn errors() {
        assert!(fuse_labels(&[], 2).is_err());
        assert!(fuse_labels(&[&[0, 1], &[0]], 2).is_err());
        assert!(fuse_labels(&[&[3]], 2).is_err());
        let a = Tensor::zeros(&[2, 2, 2]);
        let b = Tensor::zeros(&[3, 2, 2]);
        assert!(fuse_logits(&[a, b]).is_err());
    }
}
