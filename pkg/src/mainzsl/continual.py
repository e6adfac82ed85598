"""Task streams for the fixed and dynamic continual protocols, reservoir
replay memory, and the augmented training pool."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataio import DatasetBundle, FeatureDataset
from .errors import DataError, ProtocolError

# total classes -> task count for the published class-incremental splits
FIXED_SPLITS = {"AWA1": (50, 5), "AWA2": (50, 5), "CUB": (200, 20), "APY": (32, 4), "SUN": (717, 15)}

DYNAMIC_SPLITS = {
    "CUB": ([7] * 10 + [8] * 10, [3] * 10 + [2] * 10),
}

# reservoir samples per class
RESERVOIR_B = {"AWA1": 25, "AWA2": 25, "CUB": 10, "SUN": 5, "APY": 25}

# classes left without a bundle-level train split get this fraction for training
RESPLIT_TRAIN_FRACTION = 0.8


def even_counts(total: int, parts: int) -> list:
    """Split ``total`` into ``parts`` near-equal sizes, smaller sizes first."""
    if parts < 1 or total < parts:
        raise ProtocolError(f"cannot split {total} classes into {parts} tasks")
    q, r = divmod(total, parts)
    return [q] * (parts - r) + [q + 1] * r


@dataclass
class TaskView:
    task_id: int  # 1-based
    train_set: FeatureDataset
    test_set: FeatureDataset
    seen_class_ids: tuple  # cumulative seen classes
    unseen_class_ids: tuple
    current_class_ids: tuple  # seen classes whose data arrive with this task
    attribute_table: np.ndarray  # rows aligned with class_ids

    def __post_init__(self):
        seen, unseen = set(self.seen_class_ids), set(self.unseen_class_ids)
        if seen & unseen:
            raise ProtocolError(f"task {self.task_id}: classes both seen and unseen: {sorted(seen & unseen)}")
        if not set(self.current_class_ids) <= seen:
            raise ProtocolError(f"task {self.task_id}: current classes must be seen")
        if len(self.train_set) and not set(np.unique(self.train_set.labels).tolist()) <= set(self.current_class_ids):
            raise ProtocolError(f"task {self.task_id}: training labels outside the current seen classes")
        if len(self.test_set) and not set(np.unique(self.test_set.labels).tolist()) <= seen | unseen:
            raise ProtocolError(f"task {self.task_id}: test labels outside the view's classes")
        if len(self.attribute_table) != len(self.class_ids):
            raise ProtocolError(f"task {self.task_id}: attribute table rows != class count")

    @property
    def class_ids(self) -> tuple:
        return tuple(self.seen_class_ids) + tuple(self.unseen_class_ids)

    def attributes_of(self, ids) -> np.ndarray:
        pos = {c: i for i, c in enumerate(self.class_ids)}
        return self.attribute_table[[pos[c] for c in ids]]

    @property
    def seen_attributes(self) -> np.ndarray:
        return self.attribute_table[: len(self.seen_class_ids)]

    def seen_test(self) -> FeatureDataset:
        return self.test_set.with_classes(self.seen_class_ids)

    def unseen_test(self) -> FeatureDataset:
        return self.test_set.with_classes(self.unseen_class_ids)


@dataclass
class TaskStream:
    protocol: str
    views: list

    @property
    def K(self) -> int:
        return len(self.views)

    def manifest(self) -> dict:
        return {
            "protocol": self.protocol,
            "K": self.K,
            "tasks": [
                {
                    "task": v.task_id,
                    "seen": [int(c) for c in v.seen_class_ids],
                    "unseen": [int(c) for c in v.unseen_class_ids],
                    "current": [int(c) for c in v.current_class_ids],
                    "n_train": len(v.train_set),
                    "n_test": len(v.test_set),
                }
                for v in self.views
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.manifest(), indent=1) + "\n"


def _class_order(ids, seed):
    ids = list(ids)
    if seed is None:
        return ids
    return [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]


def _per_class_split(bundle: DatasetBundle, seed: int = 0):
    """Train/test masks with a split for every class.

    Classes lacking train samples in the bundle (the usual case for unseen
    classes) are split by a seeded per-class shuffle.
    """
    train = bundle.train_mask()
    rng = np.random.default_rng(seed)
    for c in range(bundle.n_classes):
        idx = np.nonzero(bundle.labels == c)[0]
        if len(idx) and not train[idx].any():
            n_train = int(round(RESPLIT_TRAIN_FRACTION * len(idx)))
            train[rng.permutation(idx)[:n_train]] = True
    return train, ~train


def _view(bundle, t, seen, unseen, current, train_mask, test_mask):
    seen, unseen, current = tuple(seen), tuple(unseen), tuple(current)
    train = FeatureDataset(
        bundle.features[train_mask & np.isin(bundle.labels, current)],
        bundle.labels[train_mask & np.isin(bundle.labels, current)],
    )
    train.task_ids[:] = t
    sel = test_mask & np.isin(bundle.labels, seen + unseen)
    test = FeatureDataset(bundle.features[sel], bundle.labels[sel])
    table = bundle.attributes[list(seen + unseen)]
    return TaskView(t, train, test, seen, unseen, current, table)


def dataset_key(bundle: DatasetBundle) -> str:
    return bundle.name.upper().replace("-", "").split("_")[0]


def build_fixed_stream(bundle: DatasetBundle, K: int, class_order_seed: int | None = None) -> TaskStream:
    """All classes split into ``K`` ordered subsets; task ``t`` sees the first ``t``."""
    C = bundle.n_classes
    key = dataset_key(bundle)
    if key in FIXED_SPLITS:
        total, k_ref = FIXED_SPLITS[key]
        if (C, K) != (total, k_ref):
            raise ProtocolError(f"{bundle.name}: published split is {total} classes in {k_ref} tasks, got {C} in {K}")
    sizes = even_counts(C, K)
    order = _class_order(range(C), class_order_seed)
    train_mask, test_mask = _per_class_split(bundle)
    views, start = [], 0
    for t, n in enumerate(sizes, 1):
        seen, unseen = order[: start + n], order[start + n:]
        views.append(_view(bundle, t, seen, unseen, order[start: start + n], train_mask, test_mask))
        start += n
    return TaskStream("fixed", views)


def build_dynamic_stream(bundle: DatasetBundle, seen_counts=None, unseen_counts=None,
                         K: int | None = None, class_order_seed: int | None = None) -> TaskStream:
    """Each task brings its own seen and unseen classes; evaluation is cumulative."""
    S, U = len(bundle.seen_ids), len(bundle.unseen_ids)
    if seen_counts is None or unseen_counts is None:
        key = dataset_key(bundle)
        if key in DYNAMIC_SPLITS and K in (None, len(DYNAMIC_SPLITS[key][0])):
            seen_counts, unseen_counts = DYNAMIC_SPLITS[key]
        else:
            if K is None:
                raise ProtocolError("dynamic stream needs per-task counts or a task count")
            seen_counts, unseen_counts = even_counts(S, K), even_counts(U, K)
    seen_counts, unseen_counts = list(seen_counts), list(unseen_counts)
    if len(seen_counts) != len(unseen_counts):
        raise ProtocolError("seen and unseen count lists differ in length")
    if sum(seen_counts) != S or sum(unseen_counts) != U:
        raise ProtocolError(
            f"counts sum to {sum(seen_counts)}/{sum(unseen_counts)}, bundle has {S} seen / {U} unseen"
        )
    if min(seen_counts) < 1:
        raise ProtocolError("every task needs at least one seen class")
    seen_order = _class_order(bundle.seen_ids, class_order_seed)
    unseen_order = _class_order(bundle.unseen_ids, class_order_seed)
    train_mask = bundle.train_mask() & np.isin(bundle.labels, bundle.seen_ids)
    test_mask = ~train_mask
    views, s, u = [], 0, 0
    for t, (ns, nu) in enumerate(zip(seen_counts, unseen_counts), 1):
        views.append(_view(bundle, t, seen_order[: s + ns], unseen_order[: u + nu],
                           seen_order[s: s + ns], train_mask, test_mask))
        s, u = s + ns, u + nu
    return TaskStream("dynamic", views)


def build_gzsl_view(bundle: DatasetBundle) -> TaskView:
    """The standard split as a single task with every seen and unseen class."""
    return build_dynamic_stream(bundle, [len(bundle.seen_ids)], [len(bundle.unseen_ids)]).views[0]


# --- reservoir -------------------------------------------------------------

class ReservoirItem(NamedTuple):
    feature: np.ndarray
    label: int
    attribute: np.ndarray
    task_id: int


@dataclass
class Reservoir:
    capacity: int
    stream_count: int = 0
    items: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def as_dataset(self, feat_dim: int) -> FeatureDataset:
        if not self.items:
            return FeatureDataset(np.zeros((0, feat_dim)), np.zeros(0, dtype=np.int64))
        return FeatureDataset(
            np.stack([it.feature for it in self.items]),
            np.array([it.label for it in self.items]),
            np.array([it.task_id for it in self.items]),
        )


def reservoir_capacity(b: float, n_classes: int) -> int:
    return int(round(b * n_classes))


def reservoir_offer(res: Reservoir, sample: ReservoirItem, rng: np.random.Generator) -> Reservoir:
    """Offer one sample; after N offers every sample is held with probability M/N."""
    res.stream_count += 1
    if len(res.items) < res.capacity:
        res.items.append(sample)
    elif res.capacity > 0:
        j = int(rng.integers(0, res.stream_count))
        if j < res.capacity:
            res.items[j] = sample
    return res


def offer_dataset(res: Reservoir, data: FeatureDataset, attributes: np.ndarray, rng) -> Reservoir:
    for x, y, t in zip(data.features, data.labels, data.task_ids):
        reservoir_offer(res, ReservoirItem(x, int(y), attributes[int(y)], int(t)), rng)
    return res


def augmented_pool(res: Reservoir, current: FeatureDataset, attributes: np.ndarray | None = None) -> FeatureDataset:
    """Replay memory followed by the current task's training set (global labels)."""
    if attributes is not None:
        for i, it in enumerate(res.items):
            if not np.array_equal(it.attribute, attributes[it.label]):
                raise DataError(f"reservoir item {i}: attribute row disagrees with class {it.label}")
    feat_dim = current.features.shape[1] if current.features.ndim == 2 else 0
    return FeatureDataset.concat([res.as_dataset(feat_dim), current], feat_dim)
