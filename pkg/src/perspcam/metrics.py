"""Camera-parameter errors, mesh/joint errors and mask IoU, plus a dataset harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("e_f", "e_tz", "e_inv_tz", "e_txy", "pve_mm", "mpjpe_mm", "pa_mpjpe_mm",
                  "miou_pct")


def e_f(f_pred: float, f_gt: float) -> float:
    """Relative focal-length error."""
    if not f_gt > 0:
        raise InvalidArgumentError(f"f_gt must be positive, got {f_gt}")
    return abs(f_pred - f_gt) / f_gt


def e_tz(tz_pred: float, tz_gt: float) -> float:
    return abs(tz_pred - tz_gt)


def e_inv_tz(tz_pred: float, tz_gt: float) -> float:
    if not (tz_pred > 0 and tz_gt > 0):
        raise InvalidArgumentError(f"depths must be positive, got {tz_pred}, {tz_gt}")
    return abs(1.0 / tz_pred - 1.0 / tz_gt)


def e_txy(txy_pred, txy_gt) -> float:
    d = np.asarray(txy_pred, dtype=float)[:2] - np.asarray(txy_gt, dtype=float)[:2]
    return float(np.hypot(d[0], d[1]))


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise InvalidArgumentError(f"point sets must both be (M, 3); got {a.shape} and {b.shape}")
    return a, b


def _mean_dist_mm(a, b) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis=1)) * 1000.0)


def pve(v_pred, v_gt, pelvis_pred=None, pelvis_gt=None) -> float:
    """Mean per-vertex Euclidean error in millimetres.

    When pelvis positions are given each mesh is shifted to put its pelvis at
    the origin first; meshes from :func:`~perspcam.body_model.synthesize` are
    already pelvis-centred.
    """
    a, b = _check_pair(v_pred, v_gt)
    if pelvis_pred is not None:
        a = a - np.asarray(pelvis_pred, dtype=float)
    if pelvis_gt is not None:
        b = b - np.asarray(pelvis_gt, dtype=float)
    return _mean_dist_mm(a, b)


def mpjpe(j_pred, j_gt, root: int | None = 0) -> float:
    """Mean per-joint position error (mm), root-relative unless ``root`` is None."""
    a, b = _check_pair(j_pred, j_gt)
    if root is not None:
        a = a - a[root]
        b = b - b[root]
    return _mean_dist_mm(a, b)


def similarity_align(source, target):
    """Least-squares similarity transform mapping ``source`` onto ``target``.

    Returns ``(scale, rotation, translation, aligned_source)``; the rotation is
    proper (det = +1).
    """
    a, b = _check_pair(source, target)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    xa, xb = a - mu_a, b - mu_b
    for pts, name in ((xa, "source"), (xb, "target")):
        sv = np.linalg.svd(pts, compute_uv=False)
        if len(pts) < 3 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise DegenerateGeometryError(f"{name} joints are collinear or coincident")
    cov = xb.T @ xa
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rot = u @ np.diag(d) @ vt
    scale = float(np.sum(s * d) / np.sum(xa * xa))
    trans = mu_b - scale * rot @ mu_a
    return scale, rot, trans, scale * a @ rot.T + trans


def pa_mpjpe(j_pred, j_gt) -> float:
    """MPJPE after the best similarity alignment of the prediction (mm)."""
    *_, aligned = similarity_align(j_pred, j_gt)
    gt = np.asarray(j_gt, dtype=float)
    if np.array_equal(np.asarray(j_pred, dtype=float), gt):
        return 0.0  # skip the round-off of an identity alignment
    return _mean_dist_mm(aligned, gt)


def miou(pred_mask, gt_mask) -> float:
    """Binary mask IoU as a percentage; soft masks are thresholded at 0.5."""
    a = _as_binary(pred_mask)
    b = _as_binary(gt_mask)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"mask size mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        warnings.warn("miou of two empty masks is undefined; returning 0", RuntimeWarning,
                      stacklevel=2)
        return 0.0
    return 100.0 * np.count_nonzero(a & b) / union


def _as_binary(mask) -> np.ndarray:
    if hasattr(mask, "values"):
        return mask.values >= 0.5
    arr = np.asarray(mask)
    return arr if arr.dtype == bool else arr >= 0.5


@dataclass
class BodyState:
    """One side of an :class:`EvalPair`."""

    f_px: float
    translation: tuple  # (tx, ty, tz) in metres
    joints: np.ndarray
    vertices: np.ndarray
    mask: object


@dataclass
class EvalPair:
    pred: BodyState
    gt: BodyState

    def __post_init__(self):
        for name in ("joints", "vertices"):
            a = np.shape(getattr(self.pred, name))
            b = np.shape(getattr(self.gt, name))
            if a != b:
                raise InvalidArgumentError(f"{name} shape mismatch: pred {a}, gt {b}")
        pm = np.shape(_as_binary(self.pred.mask))
        gm = np.shape(_as_binary(self.gt.mask))
        if pm != gm:
            raise InvalidArgumentError(f"mask size mismatch: pred {pm}, gt {gm}")

    def metrics(self) -> dict:
        p, g = self.pred, self.gt
        return {
            "e_f": e_f(p.f_px, g.f_px),
            "e_tz": e_tz(p.translation[2], g.translation[2]),
            "e_inv_tz": e_inv_tz(p.translation[2], g.translation[2]),
            "e_txy": e_txy(p.translation, g.translation),
            "pve_mm": pve(p.vertices, g.vertices, p.joints[0], g.joints[0]),
            "mpjpe_mm": mpjpe(p.joints, g.joints),
            "pa_mpjpe_mm": pa_mpjpe(p.joints, g.joints),
            "miou_pct": miou(p.mask, g.mask),
        }


# --- dataset evaluation --------------------------------------------------------

@dataclass
class Prediction:
    id: str
    f_px: float
    translation: tuple
    shape: np.ndarray | None = None
    pose: np.ndarray | None = None
    mask_path: str | None = None

    @classmethod
    def from_json(cls, doc: dict) -> "Prediction":
        return cls(
            id=doc["id"],
            f_px=float(doc["f_px"]),
            translation=(float(doc["tx_m"]), float(doc["ty_m"]), float(doc["tz_m"])),
            shape=None if doc.get("shape") is None else np.asarray(doc["shape"], dtype=float),
            pose=None if doc.get("pose") is None else np.asarray(doc["pose"], dtype=float),
            mask_path=doc.get("mask_path"),
        )

    def to_json(self) -> dict:
        doc = {"id": self.id, "f_px": self.f_px, "tx_m": self.translation[0],
               "ty_m": self.translation[1], "tz_m": self.translation[2]}
        if self.shape is not None:
            doc["shape"] = np.asarray(self.shape).tolist()
        if self.pose is not None:
            doc["pose"] = np.asarray(self.pose).tolist()
        if self.mask_path is not None:
            doc["mask_path"] = self.mask_path
        return doc


def read_predictions(path) -> dict:
    preds = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            p = Prediction.from_json(json.loads(line))
            preds[p.id] = p
    return preds


def fmt(x) -> str:
    """Format numbers with 9 significant digits, the precision of every output file."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def _json_num(x):
    return float(f"{float(x):.9g}") if np.isfinite(x) else None


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    @property
    def warning_count(self) -> int:
        return len(self.missing)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("id",) + METRIC_COLUMNS)
        for row in self.rows:
            writer.writerow([row["id"]] + [fmt(row[c]) for c in METRIC_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "rows": [{"id": r["id"], **{c: _json_num(r[c]) for c in METRIC_COLUMNS}}
                     for r in self.rows],
            "aggregates": {c: {k: _json_num(v) for k, v in agg.items()}
                           for c, agg in self.aggregates.items()},
            "missing": list(self.missing),
            "warning_count": self.warning_count,
        }

    def write(self, out_dir, stem: str = "metrics") -> None:
        out = Path(out_dir)
        (out / f"{stem}.csv").write_text(self.to_csv())
        (out / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


def aggregate(rows) -> dict:
    out = {}
    for c in METRIC_COLUMNS:
        vals = np.array([r[c] for r in rows], dtype=float)
        if vals.size == 0:
            out[c] = {"mean": float("nan"), "median": float("nan")}
        else:
            out[c] = {"mean": float(np.mean(vals)), "median": float(np.median(vals))}
    return out


def evaluate_record(record, pred: Prediction, model, gt_mask=None, pred_mask=None) -> dict:
    """Full metric battery for one record/prediction pair."""
    from .body_model import synthesize
    from .projection import Translation
    from .rasterizer import rasterize

    gt_mesh = synthesize(model, record.shape, record.pose)
    shape = record.shape if pred.shape is None else pred.shape
    pose = record.pose if pred.pose is None else pred.pose
    pred_mesh = synthesize(model, shape, pose)
    t_gt = record.translation
    tx, ty, tz = pred.translation

    if gt_mask is None:
        gt_mask = rasterize(gt_mesh, record.camera, t_gt)
    if pred_mask is None:
        try:
            pred_mask = rasterize(pred_mesh, record.camera.with_focal(pred.f_px),
                                  Translation(tx, ty, tz))
        except Exception as exc:  # an unrenderable prediction simply scores zero overlap
            log.warning("%s: prediction cannot be rendered (%s)", record.id, exc)
            pred_mask = np.zeros((record.camera.height, record.camera.width), bool)
    pair = EvalPair(
        BodyState(pred.f_px, (tx, ty, tz), pred_mesh.joints, pred_mesh.vertices, pred_mask),
        BodyState(record.camera.focal_px, (t_gt.tx, t_gt.ty, t_gt.tz), gt_mesh.joints,
                  gt_mesh.vertices, gt_mask),
    )
    return {"id": record.id, **pair.metrics()}


def evaluate_dataset(records, predictions: dict, model, mask_root=None,
                     threads: int = 1) -> MetricReport:
    """Score every record that has a prediction; others are listed as missing.

    ``mask_root`` is the dataset directory holding the ground-truth masks;
    without it the ground truth is re-rendered from the record.
    """
    from .rasterizer import read_pgm

    matched = [r for r in records if r.id in predictions]
    missing = [r.id for r in records if r.id not in predictions]
    if missing:
        log.warning("%d record(s) have no prediction and are excluded", len(missing))

    def job(record):
        pred = predictions[record.id]
        gt_mask = None
        if mask_root is not None and (Path(mask_root) / record.mask_path).exists():
            gt_mask = read_pgm(Path(mask_root) / record.mask_path)
        pred_mask = None
        if pred.mask_path and mask_root is not None:
            pred_mask = read_pgm(Path(mask_root) / pred.mask_path)
        return evaluate_record(record, pred, model, gt_mask, pred_mask)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, matched))
    else:
        rows = [job(r) for r in matched]
    return MetricReport(rows=rows, missing=missing, aggregates=aggregate(rows))
