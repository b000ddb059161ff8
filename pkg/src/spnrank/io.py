"""File formats shared by the command-line tools.

All writers are deterministic: floats use the shortest repr that round-trips
and rows keep their input order.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import AffineTransform, ClusterModel
from .mtl import MtlModel, MtlTrainSet, check_groups
from .ranking import PairSets, TrainRecord

FEATURE_MAGIC = b"SPNF"
FEATURE_VERSION = 1
CLUSTER_FORMAT = "cluster-model"
MTL_FORMAT = "mtl-model"


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, message: str, line: int | None = None):
        where = "%s:%d" % (path, line) if line is not None else str(path)
        super().__init__("%s: %s" % (where, message))
        self.path = str(path)
        self.line = line


def _f(x: float) -> str:
    return repr(float(x))


def _open_out(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def _read_rows(path, header: list[str] | None = None, prefix: bool = False):
    """Yield ``(line_number, row)``; checks the header when given."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(path, exc.strerror or str(exc)) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError(path, "empty file", 1) from None
        if header is not None:
            got = first[: len(header)] if prefix else first
            if got != header:
                raise DataFormatError(path, "expected header %s, got %s" % (",".join(header), ",".join(first)), 1)
        yield 1, first
        for row in reader:
            if row:
                yield reader.line_num, row


def write_json(path, obj) -> None:
    with _open_out(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(path, exc.strerror or str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, "invalid JSON: %s" % exc.msg, exc.lineno) from exc


# --------------------------------------------------------------------------
# ranking datasets


@dataclass
class Dataset:
    ids: list
    like_counts: np.ndarray
    X: np.ndarray

    def index(self) -> dict:
        return {k: i for i, k in enumerate(self.ids)}


DATASET_HEADER = ["id", "like_count", "bits"]


def write_dataset(path, ids, like_counts, X) -> None:
    X = np.asarray(X, dtype=np.uint8)
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for i, n, row in zip(ids, like_counts, X):
            w.writerow([i, int(n), "".join("1" if b else "0" for b in row)])


def read_dataset(path) -> Dataset:
    ids, likes, rows = [], [], []
    width = None
    seen = set()
    rows_iter = _read_rows(path, DATASET_HEADER)
    next(rows_iter)
    for line, row in rows_iter:
        if len(row) != 3:
            raise DataFormatError(path, "expected 3 fields, got %d" % len(row), line)
        ident, count, bits = row
        if ident in seen:
            raise DataFormatError(path, "duplicate id %r" % ident, line)
        seen.add(ident)
        try:
            n = int(count)
        except ValueError:
            raise DataFormatError(path, "like_count %r is not an integer" % count, line) from None
        if n < 0:
            raise DataFormatError(path, "like_count must be nonnegative", line)
        if not bits or set(bits) - {"0", "1"}:
            raise DataFormatError(path, "bits must be a non-empty string of 0/1", line)
        if width is None:
            width = len(bits)
        elif len(bits) != width:
            raise DataFormatError(path, "bits has length %d, expected %d" % (len(bits), width), line)
        ids.append(ident)
        likes.append(n)
        rows.append(np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0"))
    if not ids:
        raise DataFormatError(path, "no data rows")
    return Dataset(ids, np.asarray(likes, dtype=np.int64), np.vstack(rows).astype(np.uint8))


PAIRS_HEADER = ["id_a", "id_b", "set"]


def write_pairs(path, pairs: PairSets, ids) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIRS_HEADER)
        for name, block in (("P1", pairs.p1), ("P2", pairs.p2)):
            for a, b in block:
                w.writerow([ids[a], ids[b], name])


def read_pairs(path, dataset: Dataset, C1: int = 0, C2: int = 0) -> PairSets:
    index = dataset.index()
    p1, p2 = [], []
    rows = _read_rows(path, PAIRS_HEADER)
    next(rows)
    for line, row in rows:
        if len(row) != 3:
            raise DataFormatError(path, "expected 3 fields, got %d" % len(row), line)
        a, b, kind = row
        if a not in index or b not in index:
            raise DataFormatError(path, "unknown item id %r" % (a if a not in index else b), line)
        if kind == "P1":
            p1.append((index[a], index[b]))
        elif kind == "P2":
            p2.append((index[a], index[b]))
        else:
            raise DataFormatError(path, "set must be P1 or P2, got %r" % kind, line)
    return PairSets(np.asarray(p1, dtype=np.int64).reshape(-1, 2), np.asarray(p2, dtype=np.int64).reshape(-1, 2), C1, C2)


HISTORY_HEADER = ["iteration", "objective", "p1_term", "p2_term", "edge_count", "train_pair_accuracy"]


def write_history(path, history: list[TrainRecord]) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.iteration, _f(r.objective), _f(r.p1_term), _f(r.p2_term), r.edge_count, _f(r.train_pair_accuracy)])


def read_history(path) -> list[TrainRecord]:
    out = []
    rows = _read_rows(path, HISTORY_HEADER)
    next(rows)
    for line, row in rows:
        try:
            out.append(TrainRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3]), int(row[4]), float(row[5])))
        except (ValueError, IndexError):
            raise DataFormatError(path, "malformed history row", line) from None
    return out


# --------------------------------------------------------------------------
# patch features


@dataclass
class PatchFeatures:
    image_ids: np.ndarray
    patch_index: np.ndarray
    features: np.ndarray

    def by_image(self, p: int | None = None) -> tuple[list, np.ndarray]:
        """Group rows into ``(n_images, p, D)`` ordered by image id then patch index."""
        images, inverse = np.unique(self.image_ids, return_inverse=True)
        counts = np.bincount(inverse)
        p = int(counts[0]) if p is None else p
        if np.any(counts != p):
            raise ValueError("every image needs exactly %d patches" % p)
        order = np.lexsort((self.patch_index, inverse))
        if np.any(self.patch_index[order].reshape(-1, p) != np.arange(p)):
            raise ValueError("patch indices must be 0..%d for every image" % (p - 1))
        return images.tolist(), self.features[order].reshape(len(images), p, -1)


def write_features_csv(path, image_ids, patch_index, features) -> None:
    features = np.asarray(features, dtype=np.float64)
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "patch_index"] + ["f_%d" % j for j in range(features.shape[1])])
        for img, p, row in zip(image_ids, patch_index, features):
            w.writerow([int(img), int(p)] + [_f(v) for v in row])


def _record_dtype(D: int) -> np.dtype:
    return np.dtype([("image_id", "<i8"), ("patch_index", "<i4"), ("f", "<f8", (D,))])


def write_features_bin(path, image_ids, patch_index, features) -> None:
    """Little-endian blocks: ``SPNF``, u32 version, u32 D, u64 count, then records.

    Each record is i64 image id, i32 patch index and D f64 features.
    """
    features = np.asarray(features, dtype=np.float64)
    rec = np.empty(len(features), dtype=_record_dtype(features.shape[1]))
    rec["image_id"], rec["patch_index"], rec["f"] = image_ids, patch_index, features
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(np.array([FEATURE_VERSION, features.shape[1]], dtype="<u4").tobytes())
        fh.write(np.array([len(features)], dtype="<u8").tobytes())
        fh.write(rec.tobytes())


def read_features(path) -> PatchFeatures:
    """Read the CSV or binary feature format, chosen by the file's first bytes."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise DataFormatError(path, exc.strerror or str(exc)) from exc
    if head == FEATURE_MAGIC:
        return _read_features_bin(path)
    return _read_features_csv(path)


def _read_features_bin(path) -> PatchFeatures:
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise DataFormatError(path, "truncated header")
    version, D = np.frombuffer(raw, dtype="<u4", count=2, offset=4)
    (count,) = np.frombuffer(raw, dtype="<u8", count=1, offset=12)
    if version != FEATURE_VERSION:
        raise DataFormatError(path, "unsupported feature format version %d" % version)
    dt = _record_dtype(int(D))
    if len(raw) - 20 != int(count) * dt.itemsize:
        raise DataFormatError(path, "expected %d records of %d bytes" % (count, dt.itemsize))
    rec = np.frombuffer(raw, dtype=dt, count=int(count), offset=20)
    return PatchFeatures(rec["image_id"].astype(np.int64), rec["patch_index"].astype(np.int64), rec["f"].astype(np.float64))


def _read_features_csv(path) -> PatchFeatures:
    rows = _read_rows(path, ["image_id", "patch_index"], prefix=True)
    _, header = next(rows)
    D = len(header) - 2
    if D < 1 or header[2:] != ["f_%d" % j for j in range(D)]:
        raise DataFormatError(path, "feature columns must be f_0..f_{D-1}", 1)
    imgs, pidx, feats = [], [], []
    for line, row in rows:
        if len(row) != D + 2:
            raise DataFormatError(path, "expected %d fields, got %d" % (D + 2, len(row)), line)
        try:
            imgs.append(int(row[0]))
            pidx.append(int(row[1]))
            feats.append([float(v) for v in row[2:]])
        except ValueError:
            raise DataFormatError(path, "non-numeric field", line) from None
    if not feats:
        raise DataFormatError(path, "no data rows")
    F = np.asarray(feats)
    if not np.all(np.isfinite(F)):
        raise DataFormatError(path, "features must be finite")
    return PatchFeatures(np.asarray(imgs, dtype=np.int64), np.asarray(pidx, dtype=np.int64), F)


# --------------------------------------------------------------------------
# cluster model


def cluster_model_to_dict(model: ClusterModel, patches_per_image: int | None = None) -> dict:
    out = {
        "format": CLUSTER_FORMAT,
        "version": 1,
        "n_clusters": model.n_clusters,
        "dim": int(model.centroids.shape[1]),
        "patches_per_image": patches_per_image,
        "centroids": model.centroids.tolist(),
        "radii": None if model.radii is None else model.radii.tolist(),
        "support": None if model.support is None else [int(s) for s in model.support],
        "transform": None,
    }
    if model.transform is not None:
        if not isinstance(model.transform, AffineTransform):
            raise TypeError("only affine feature transforms can be saved")
        out["transform"] = {"matrix": model.transform.matrix.tolist(), "bias": model.transform.bias.tolist()}
    return out


def cluster_model_from_dict(d: dict, path="<cluster model>") -> tuple[ClusterModel, int | None]:
    if d.get("format") != CLUSTER_FORMAT or d.get("version") != 1:
        raise DataFormatError(path, "not a version-1 cluster model")
    try:
        C = np.asarray(d["centroids"], dtype=np.float64).reshape(len(d["centroids"]), -1)
        radii = None if d.get("radii") is None else np.asarray(d["radii"], dtype=np.float64)
        support = None if d.get("support") is None else np.asarray(d["support"], dtype=np.int64)
        t = d.get("transform")
        transform = None if t is None else AffineTransform(t["matrix"], t["bias"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(path, "malformed cluster model: %s" % exc) from exc
    if radii is not None and len(radii) != len(C):
        raise DataFormatError(path, "radii and centroids disagree in length")
    model = ClusterModel(C, np.full(0, -1, dtype=np.int64), support=support, radii=radii, transform=transform)
    return model, d.get("patches_per_image")


def save_cluster_model(path, model: ClusterModel, patches_per_image: int | None = None) -> None:
    write_json(path, cluster_model_to_dict(model, patches_per_image))


def load_cluster_model(path) -> tuple[ClusterModel, int | None]:
    return cluster_model_from_dict(read_json(path), path)


# --------------------------------------------------------------------------
# multi-task data and models


def write_task_csv(path, X, y) -> None:
    X = np.asarray(X, dtype=np.float64)
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + ["f_%d" % j for j in range(X.shape[1])])
        for label, row in zip(y, X):
            w.writerow([int(label)] + [_f(v) for v in row])


def read_task_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path, ["label"], prefix=True)
    _, header = next(rows)
    d = len(header) - 1
    if d < 1 or header[1:] != ["f_%d" % j for j in range(d)]:
        raise DataFormatError(path, "feature columns must be f_0..f_{d-1}", 1)
    labels, feats = [], []
    for line, row in rows:
        if len(row) != d + 1:
            raise DataFormatError(path, "expected %d fields, got %d" % (d + 1, len(row)), line)
        try:
            y = int(row[0])
            x = [float(v) for v in row[1:]]
        except ValueError:
            raise DataFormatError(path, "non-numeric field", line) from None
        if y not in (-1, 1):
            raise DataFormatError(path, "label must be -1 or +1, got %d" % y, line)
        labels.append(y)
        feats.append(x)
    if not labels:
        raise DataFormatError(path, "task has no examples")
    return np.asarray(feats), np.asarray(labels, dtype=np.int64)


def task_files(directory) -> list[Path]:
    files = sorted(Path(directory).glob("task_*.csv"))
    if not files:
        raise DataFormatError(directory, "no task_*.csv files")
    return files


def write_task_dir(directory, X, Y) -> None:
    """One ``task_NNN.csv`` per column of ``Y`` over the shared inputs ``X``."""
    os.makedirs(directory, exist_ok=True)
    for m in range(Y.shape[1]):
        write_task_csv(Path(directory) / ("task_%03d.csv" % m), X, Y[:, m])


def read_task_dir(directory) -> list[tuple[np.ndarray, np.ndarray]]:
    tasks = [read_task_csv(p) for p in task_files(directory)]
    widths = {X.shape[1] for X, _ in tasks}
    if len(widths) > 1:
        raise DataFormatError(directory, "task files have different feature widths %s" % sorted(widths))
    return tasks


def load_train_set(directory) -> MtlTrainSet:
    return MtlTrainSet.from_tasks(read_task_dir(directory))


def write_groups(path, groups) -> None:
    write_json(path, {"groups": [list(map(int, g)) for g in groups]})


def read_groups(path, M: int) -> list[list[int]]:
    d = read_json(path)
    if not isinstance(d, dict) or set(d) != {"groups"}:
        raise DataFormatError(path, 'expected {"groups": [[task indices]...]}')
    try:
        return check_groups(d["groups"], M)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(path, str(exc)) from exc


def mtl_model_to_dict(model: MtlModel) -> dict:
    return {
        "format": MTL_FORMAT,
        "version": 1,
        "L": model.L.tolist(),
        "S": model.S.tolist(),
        "mu": model.mu,
        "gamma": model.gamma,
        "lam": model.lam,
        "groups": model.groups,
    }


def mtl_model_from_dict(d: dict, path="<mtl model>") -> MtlModel:
    if d.get("format") != MTL_FORMAT or d.get("version") != 1:
        raise DataFormatError(path, "not a version-1 multi-task model")
    try:
        return MtlModel(np.asarray(d["L"], dtype=np.float64), np.asarray(d["S"], dtype=np.float64), float(d["mu"]), float(d["gamma"]), float(d["lam"]), d["groups"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(path, "malformed multi-task model: %s" % exc) from exc


def save_mtl_model(path, model: MtlModel) -> None:
    write_json(path, mtl_model_to_dict(model))


def load_mtl_model(path) -> MtlModel:
    return mtl_model_from_dict(read_json(path), path)
