"""Auxiliary cost-volume 3D detection: anchors, RPN, header, boxes, AP."""

from .anchors import Anchors, assign_anchors, decode, encode, generate_anchors, iou_matrix
from .boxes import DIFFICULTIES, DetectionLabelSet, ObjectBox, bev_iou, iou_3d, nms
from .evaluation import average_precision, interpolated_ap
from .header import decode_output, encode_target, header_forward, header_loss, init_header
from .rpn import init_rpn, proposals, rpn_forward, rpn_loss

__all__ = [
    "DIFFICULTIES",
    "Anchors",
    "DetectionLabelSet",
    "ObjectBox",
    "assign_anchors",
    "average_precision",
    "bev_iou",
    "decode",
    "decode_output",
    "encode",
    "encode_target",
    "generate_anchors",
    "header_forward",
    "header_loss",
    "init_header",
    "init_rpn",
    "interpolated_ap",
    "iou_3d",
    "iou_matrix",
    "nms",
    "proposals",
    "rpn_forward",
    "rpn_loss",
    "total_loss",
]

from .losses import total_loss  # noqa: E402
