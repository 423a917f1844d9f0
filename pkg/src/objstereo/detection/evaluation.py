"""Average precision over scenes, KITTI style (11-point interpolation)."""

from __future__ import annotations

import numpy as np

from .boxes import DIFFICULTIES, bev_iou, iou_3d

RECALL_POINTS = np.linspace(0.0, 1.0, 11)


def interpolated_ap(tp_flags, n_positive):
    """11-point interpolated AP from TP/FP flags sorted by descending confidence."""
    if n_positive == 0:
        return None
    tp = np.cumsum(np.asarray(tp_flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(tp_flags, dtype=float))
    if tp.size == 0:
        return 0.0
    recall = tp / n_positive
    precision = tp / np.maximum(tp + fp, 1e-12)
    ap = 0.0
    for r in RECALL_POINTS:
        sel = precision[recall >= r - 1e-12]
        ap += sel.max() if sel.size else 0.0
    return ap / len(RECALL_POINTS)


def _match_scene(dets, labels, care, iou_fn, threshold):
    """Per-detection outcome: 1 true positive, 0 false positive, -1 ignored."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(labels.boxes)
    outcome = {}
    for i in order:
        best, best_iou = -1, threshold
        ignored = False
        for j, gt in enumerate(labels.boxes):
            iou = iou_fn(dets[i], gt)
            if iou < threshold:
                continue
            if not care[j]:
                ignored = True
                continue
            if not taken[j] and iou >= best_iou:
                best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
            outcome[i] = 1
        else:
            outcome[i] = -1 if ignored else 0
    return outcome


def average_precision(detections, labels, iou_threshold=0.7, mode="bev"):
    """AP per difficulty bin.

    ``detections`` and ``labels`` are per-scene lists of ObjectBox lists and
    DetectionLabelSets. A bin counts ground truths of its own or an easier
    difficulty; detections matching only other ground truths are ignored.
    A bin without ground truths is reported as None.
    """
    if mode not in ("bev", "3d"):
        raise ValueError(f"mode must be bev or 3d, got {mode!r}")
    if len(detections) != len(labels):
        raise ValueError("one detection list per labelled scene required")
    iou_fn = bev_iou if mode == "bev" else iou_3d
    result = {}
    for level, name in enumerate(DIFFICULTIES):
        scored = []
        n_pos = 0
        for dets, lab in zip(detections, labels):
            care = [DIFFICULTIES.index(t) <= level for t in lab.difficulties]
            n_pos += sum(care)
            outcome = _match_scene(dets, lab, care, iou_fn, iou_threshold)
            scored += [(dets[i].confidence, o) for i, o in outcome.items() if o >= 0]
        scored.sort(key=lambda t: -t[0])
        result[name] = interpolated_ap([o for _, o in scored], n_pos)
    return result
