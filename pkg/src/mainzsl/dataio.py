"""Dataset bundles on disk, the synthetic generator, the external-archive
converter, and run configuration.

Bundle layout (one directory)::

    features.bin     b"ZSLFEAT1", u64 N, u64 d (little endian), N*d float32 row-major
    labels.csv       one integer class id per line
    attributes.csv   header row, then C rows of D reals
    meta.json        class names, seen/unseen ids, train sample indices, dims
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, LabelError

MAGIC = b"ZSLFEAT1"
_HEADER = struct.Struct("<8sQQ")
FORMAT_TAG = "zslbundle/1"


@dataclass
class FeatureDataset:
    """Visual features with global class labels and the task each sample came from."""

    features: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.task_ids is None:
            self.task_ids = np.zeros(len(self.labels), dtype=np.int64)
        self.task_ids = np.asarray(self.task_ids, dtype=np.int64)
        if not (len(self.features) == len(self.labels) == len(self.task_ids)):
            raise DataError("features, labels and task ids differ in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "FeatureDataset":
        return FeatureDataset(self.features[index], self.labels[index], self.task_ids[index])

    def with_classes(self, class_ids) -> "FeatureDataset":
        return self.subset(np.isin(self.labels, np.asarray(list(class_ids), dtype=np.int64)))

    @staticmethod
    def concat(parts, feat_dim: int) -> "FeatureDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return FeatureDataset(np.zeros((0, feat_dim)), np.zeros(0, dtype=np.int64))
        return FeatureDataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.task_ids for p in parts]),
        )


@dataclass
class DatasetBundle:
    features: np.ndarray  # N x d
    labels: np.ndarray  # N global class ids
    attributes: np.ndarray  # C x D
    class_names: list
    seen_ids: list
    unseen_ids: list
    train_indices: np.ndarray  # samples usable for training when their class is seen
    name: str = "bundle"
    provenance: str = ""
    val_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.seen_ids = [int(c) for c in self.seen_ids]
        self.unseen_ids = [int(c) for c in self.unseen_ids]
        self.val_ids = [int(c) for c in self.val_ids]
        self.validate()

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    def validate(self) -> None:
        C = self.n_classes
        if self.features.ndim != 2 or self.attributes.ndim != 2:
            raise DataError("features and attributes must be 2-D")
        if len(self.labels) != len(self.features):
            raise DataError(f"{len(self.labels)} labels for {len(self.features)} feature rows")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= C):
            row = int(np.argmax((self.labels < 0) | (self.labels >= C)))
            raise LabelError(f"label {self.labels[row]} at row {row + 1} outside [0, {C})")
        if not np.isfinite(self.attributes).all():
            r, c = np.argwhere(~np.isfinite(self.attributes))[0]
            raise DataError(f"non-finite attribute at class {r}, dim {c}")
        if not np.isfinite(self.features).all():
            r, c = np.argwhere(~np.isfinite(self.features))[0]
            raise DataError(f"non-finite feature at sample {r}, dim {c}")
        seen, unseen = set(self.seen_ids), set(self.unseen_ids)
        if seen & unseen:
            raise DataError(f"classes both seen and unseen: {sorted(seen & unseen)}")
        if seen | unseen != set(range(C)):
            raise DataError("seen and unseen ids must cover every class exactly once")
        if len(self.class_names) != C:
            raise DataError(f"{len(self.class_names)} class names for {C} classes")
        if len(self.train_indices):
            if self.train_indices.min() < 0 or self.train_indices.max() >= len(self.labels):
                raise DataError("train index out of range")
            if len(np.unique(self.train_indices)) != len(self.train_indices):
                raise DataError("duplicate train indices")

    def train_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.labels), dtype=bool)
        mask[self.train_indices] = True
        return mask

    def dataset(self, mask=None) -> FeatureDataset:
        if mask is None:
            return FeatureDataset(self.features, self.labels)
        return FeatureDataset(self.features[mask], self.labels[mask])

    def gzsl_split(self):
        """(train, seen test, unseen test) sets under the bundle's own split."""
        mask = self.train_mask()
        seen = np.isin(self.labels, self.seen_ids)
        return self.dataset(mask & seen), self.dataset(~mask & seen), self.dataset(~mask & ~seen)

    def l2_normalized(self) -> "DatasetBundle":
        norms = np.linalg.norm(self.attributes, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return DatasetBundle(self.features, self.labels, self.attributes / norms, self.class_names,
                             self.seen_ids, self.unseen_ids, self.train_indices, self.name,
                             self.provenance, self.val_ids)


# --- on-disk format --------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_bundle(bundle: DatasetBundle, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    N, d = bundle.features.shape
    with open(path / "features.bin", "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, N, d))
        fh.write(np.ascontiguousarray(bundle.features, dtype="<f4").tobytes())
    with open(path / "labels.csv", "w", newline="") as fh:
        fh.write("".join(f"{int(y)}\n" for y in bundle.labels))
    with open(path / "attributes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"a{j}" for j in range(bundle.attr_dim)])
        for row in bundle.attributes:
            w.writerow([_fmt(v) for v in row])
    meta = {
        "format": FORMAT_TAG,
        "name": bundle.name,
        "provenance": bundle.provenance,
        "d": d,
        "D": bundle.attr_dim,
        "class_names": list(bundle.class_names),
        "seen_ids": bundle.seen_ids,
        "unseen_ids": bundle.unseen_ids,
        "val_ids": bundle.val_ids,
        "train_indices": [int(i) for i in bundle.train_indices],
    }
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_features(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: header truncated ({len(raw)} of {_HEADER.size} bytes)")
    magic, N, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    expected = _HEADER.size + 4 * N * d
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {N}x{d} float32 payload, found {len(raw)}")
    feats = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(N, d).astype(np.float64)
    bad = ~np.isfinite(feats)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        offset = _HEADER.size + 4 * (r * d + c)
        raise DataError(f"{path}: non-finite value at byte offset {offset} (sample {r}, dim {c})")
    return feats


def _read_labels(path: Path, n_classes: int) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            try:
                y = int(s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: not an integer label: {s!r}") from None
            if not 0 <= y < n_classes:
                raise LabelError(f"{path}:{lineno}: label {y} outside [0, {n_classes})")
            out.append(y)
    return np.asarray(out, dtype=np.int64)


def _read_attributes(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file (missing header)")
    D = len(rows[0])
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != D:
            raise DataError(f"{path}:{lineno}: {len(row)} values, header declares {D}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"{path}:{lineno}: non-finite attribute value")
        out.append(vals)
    return np.asarray(out, dtype=np.float64).reshape(len(out), D)


def load_bundle(path) -> DatasetBundle:
    path = Path(path)
    for name in ("features.bin", "labels.csv", "attributes.csv", "meta.json"):
        if not (path / name).is_file():
            raise DataError(f"{path / name}: missing bundle file")
    try:
        meta = json.loads((path / "meta.json").read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path / 'meta.json'}: {exc}") from None
    feats = _read_features(path / "features.bin")
    attrs = _read_attributes(path / "attributes.csv")
    labels = _read_labels(path / "labels.csv", attrs.shape[0])
    if len(labels) != len(feats):
        raise DataError(f"{path / 'labels.csv'}: {len(labels)} labels but features.bin holds {len(feats)} rows")
    for key, actual in (("d", feats.shape[1]), ("D", attrs.shape[1])):
        if key in meta and int(meta[key]) != actual:
            raise DataError(f"{path / 'meta.json'}: {key}={meta[key]} but data has {actual}")
    return DatasetBundle(
        feats, labels, attrs,
        class_names=list(meta.get("class_names", [f"class_{i}" for i in range(attrs.shape[0])])),
        seen_ids=meta["seen_ids"],
        unseen_ids=meta["unseen_ids"],
        train_indices=np.asarray(meta.get("train_indices", []), dtype=np.int64),
        name=meta.get("name", path.name),
        provenance=meta.get("provenance", ""),
        val_ids=meta.get("val_ids", []),
    )


# --- synthetic data --------------------------------------------------------

@dataclass
class SynthSpec:
    n_seen: int = 15
    n_unseen: int = 5
    attr_dim: int = 16
    feat_dim: int = 32
    samples_per_class: int = 200
    noise: float = 0.05
    map_kind: str = "linear"
    train_fraction: float = 0.8
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth fields: {sorted(unknown)}")
        return cls(**d)


def synth_generate(spec: SynthSpec) -> DatasetBundle:
    """Classes with attributes ~ U(-1, 1)^D, prototypes G(a) for a hidden seeded map G,
    and Gaussian noise around the prototypes.

    Seen classes are split into train/test samples; unseen classes get test
    samples only. Features are rounded to float32 so bundles round-trip bit-exactly.
    """
    C = spec.n_seen + spec.n_unseen
    if C < 2 or spec.n_seen < 1 or spec.n_unseen < 1:
        raise ConfigError("synthetic data needs at least one seen and one unseen class")
    if spec.map_kind not in ("linear", "mlp"):
        raise ConfigError(f"unknown map kind {spec.map_kind!r}")
    if not 0 < spec.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(spec.seed)
    D, d = spec.attr_dim, spec.feat_dim
    attrs = rng.uniform(-1.0, 1.0, (C, D))
    if spec.map_kind == "linear":
        W = rng.normal(0.0, 1.0 / np.sqrt(D), (d, D))
        protos = attrs @ W.T
    else:
        W1 = rng.normal(0.0, 1.0 / np.sqrt(D), (2 * d, D))
        W2 = rng.normal(0.0, 1.0 / np.sqrt(2 * d), (d, 2 * d))
        protos = np.tanh(2.0 * attrs @ W1.T) @ W2.T

    n = spec.samples_per_class
    labels = np.repeat(np.arange(C), n)
    feats = protos[labels] + rng.normal(0.0, spec.noise, (C * n, d))
    feats = feats.astype(np.float32).astype(np.float64)
    attrs = attrs.astype(np.float32).astype(np.float64)

    n_train = int(round(spec.train_fraction * n))
    train = []
    for c in range(spec.n_seen):
        idx = c * n + rng.permutation(n)[:n_train]
        train.extend(np.sort(idx).tolist())
    return DatasetBundle(
        feats, labels, attrs,
        class_names=[f"class_{i}" for i in range(C)],
        seen_ids=list(range(spec.n_seen)),
        unseen_ids=list(range(spec.n_seen, C)),
        train_indices=np.asarray(train, dtype=np.int64),
        name="synth",
        provenance=f"synth_generate {json.dumps(asdict(spec), sort_keys=True)}",
    )


# --- external archives -----------------------------------------------------

def convert_xlsa17(res101_path, att_splits_path, out_dir, name: str | None = None) -> DatasetBundle:
    """Convert a ``res101.mat`` / ``att_splits.mat`` pair into a bundle.

    Expected fields: ``features`` (d x N), ``labels`` (N, 1-based) in the
    first file; ``att`` (D x C), ``trainval_loc``, ``test_seen_loc``,
    ``test_unseen_loc`` (1-based sample indices) and optionally
    ``allclasses_names`` and ``train_loc``/``val_loc`` in the second.
    """
    from scipy.io import loadmat

    res = loadmat(res101_path)
    att = loadmat(att_splits_path)
    for key in ("features", "labels"):
        if key not in res:
            raise DataError(f"{res101_path}: missing field {key!r}")
    for key in ("att", "trainval_loc", "test_seen_loc", "test_unseen_loc"):
        if key not in att:
            raise DataError(f"{att_splits_path}: missing field {key!r}")

    feats = np.asarray(res["features"], dtype=np.float64).T
    labels = np.asarray(res["labels"]).reshape(-1).astype(np.int64) - 1
    attrs = np.asarray(att["att"], dtype=np.float64).T
    trainval = np.asarray(att["trainval_loc"]).reshape(-1).astype(np.int64) - 1
    test_unseen = np.asarray(att["test_unseen_loc"]).reshape(-1).astype(np.int64) - 1
    seen = sorted(set(labels[trainval].tolist()))
    unseen = sorted(set(labels[test_unseen].tolist()) - set(seen))
    rest = sorted(set(range(attrs.shape[0])) - set(seen) - set(unseen))
    unseen = sorted(unseen + rest)
    val_ids = []
    if "val_loc" in att:
        val_loc = np.asarray(att["val_loc"]).reshape(-1).astype(np.int64) - 1
        val_ids = sorted(set(labels[val_loc].tolist()))
    if "allclasses_names" in att:
        names = [str(np.asarray(x).reshape(-1)[0]) for x in np.asarray(att["allclasses_names"]).reshape(-1)]
    else:
        names = [f"class_{i}" for i in range(attrs.shape[0])]
    bundle = DatasetBundle(
        feats, labels, attrs, names, seen, unseen, np.sort(trainval),
        name=name or Path(res101_path).parent.name or "converted",
        provenance=f"converted from {Path(res101_path).name} + {Path(att_splits_path).name}",
        val_ids=val_ids,
    )
    write_bundle(bundle, out_dir)
    return bundle


# --- run configuration -----------------------------------------------------

PROTOCOLS = ("gzsl", "fixed", "dynamic")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run.

    Exactly one of ``bundle`` (a directory) or ``synth`` (generator fields)
    names the data source. ``train`` mirrors :class:`mainzsl.trainer.TrainConfig`.
    """

    bundle: str | None = None
    synth: dict | None = None
    protocol: str = "gzsl"
    tasks: int | None = None
    dynamic_seen_counts: list | None = None
    dynamic_unseen_counts: list | None = None
    reservoir_b: float | None = None
    normalize_attributes: bool = False
    class_order_seed: int | None = None
    output_dir: str | None = None
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if (self.bundle is None) == (self.synth is None):
            raise ConfigError("exactly one data source (bundle or synth) is required")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.tasks is not None and self.tasks < 1:
            raise ConfigError("tasks must be >= 1")
        if self.reservoir_b is not None and self.reservoir_b < 0:
            raise ConfigError("reservoir_b must be non-negative")
        if self.synth is not None:
            SynthSpec.from_dict(self.synth)
        from .trainer import TrainConfig

        TrainConfig.from_dict(self.train)

    def train_config(self):
        from .trainer import TrainConfig

        return TrainConfig.from_dict(self.train)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def load_data(self) -> DatasetBundle:
        if self.bundle is not None:
            bundle = load_bundle(self.bundle)
        else:
            bundle = synth_generate(SynthSpec.from_dict(self.synth))
        return bundle.l2_normalized() if self.normalize_attributes else bundle


def bundle_digest(path) -> str:
    """SHA-256 over the four bundle files, in a fixed order."""
    import hashlib

    h = hashlib.sha256()
    for name in ("features.bin", "labels.csv", "attributes.csv", "meta.json"):
        h.update((Path(path) / name).read_bytes())
    return h.hexdigest()


__all__ = [
    "DatasetBundle",
    "FeatureDataset",
    "RunConfig",
    "SynthSpec",
    "bundle_digest",
    "convert_xlsa17",
    "load_bundle",
    "synth_generate",
    "write_bundle",
]
