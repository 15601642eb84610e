"""Interaction logs: ingestion, n-core filtering, tie shuffling and splits.

Events are held as parallel numpy arrays sorted by (user index, timestamp),
with equal timestamps kept in file order. Users and items are indexed densely
in order of first appearance. Category index 0 is reserved for "unknown".
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, EmptyDatasetError, ParseError

logger = logging.getLogger(__name__)

UNKNOWN_CATEGORY = ""

SEQUENTIAL = "sequential"
RANDOM = "random"

TRAIN, VALID, TEST = 0, 1, 2


@dataclass(frozen=True, eq=False)
class InteractionLog:
    user: np.ndarray
    item: np.ndarray
    timestamp: np.ndarray
    user_ids: tuple
    item_ids: tuple
    category_ids: tuple
    item_category: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    @property
    def n_events(self) -> int:
        return len(self.user)

    def __len__(self):
        return self.n_events

    @property
    def indptr(self) -> np.ndarray:
        """Offsets of each user's run of events (events are grouped by user)."""
        counts = np.bincount(self.user, minlength=self.n_users)
        return np.concatenate(([0], np.cumsum(counts)))

    def sequences(self):
        """Yield ``(user_index, items, timestamps)`` per user, chronologically."""
        ptr = self.indptr
        for u in range(self.n_users):
            lo, hi = ptr[u], ptr[u + 1]
            if hi > lo:
                yield u, self.item[lo:hi], self.timestamp[lo:hi]

    def item_index(self) -> dict:
        return {iid: i for i, iid in enumerate(self.item_ids)}

    def user_index(self) -> dict:
        return {uid: i for i, uid in enumerate(self.user_ids)}

    def category_of(self, item_id) -> str:
        return self.category_ids[self.item_category[self.item_index()[item_id]]]

    def subset(self, mask) -> "InteractionLog":
        """Keep the masked events; index spaces are left untouched."""
        mask = np.asarray(mask, dtype=bool)
        return InteractionLog(
            self.user[mask], self.item[mask], self.timestamp[mask],
            self.user_ids, self.item_ids, self.category_ids, self.item_category,
        )

    def compact(self) -> "InteractionLog":
        """Drop users/items without events and re-index the survivors densely.

        Relative index order is preserved, so first-appearance order survives.
        The category table is shared unchanged.
        """
        users_alive = np.bincount(self.user, minlength=self.n_users) > 0
        items_alive = np.bincount(self.item, minlength=self.n_items) > 0
        user_map = np.cumsum(users_alive) - 1
        item_map = np.cumsum(items_alive) - 1
        return InteractionLog(
            user_map[self.user],
            item_map[self.item],
            self.timestamp,
            tuple(u for u, a in zip(self.user_ids, users_alive) if a),
            tuple(i for i, a in zip(self.item_ids, items_alive) if a),
            self.category_ids,
            self.item_category[items_alive],
        )

    def to_records(self) -> list:
        """Events as ``(user_id, item_id, timestamp, category_id)`` tuples."""
        return [
            (self.user_ids[u], self.item_ids[i], int(t),
             self.category_ids[self.item_category[i]])
            for u, i, t in zip(self.user, self.item, self.timestamp)
        ]

    @classmethod
    def from_records(cls, records: Iterable) -> "InteractionLog":
        """Build a log from ``(user, item, timestamp[, category])`` records in file order."""
        users, items, cats = {}, {}, {UNKNOWN_CATEGORY: 0}
        item_cat = []
        u_col, i_col, t_col = [], [], []
        for rec in records:
            user, item, ts = rec[0], rec[1], rec[2]
            cat = rec[3] if len(rec) > 3 and rec[3] is not None else UNKNOWN_CATEGORY
            if not user or not item:
                raise ParseError("empty user or item identifier")
            ts = int(ts)
            if ts < 0:
                raise ParseError(f"negative timestamp {ts}")
            u = users.setdefault(user, len(users))
            i = items.get(item)
            c = cats.setdefault(cat, len(cats))
            if i is None:
                i = items[item] = len(items)
                item_cat.append(c)
            elif item_cat[i] == 0 and c != 0:
                item_cat[i] = c
            u_col.append(u)
            i_col.append(i)
            t_col.append(ts)
        return cls._sorted(
            np.asarray(u_col, dtype=np.int64),
            np.asarray(i_col, dtype=np.int64),
            np.asarray(t_col, dtype=np.int64),
            tuple(users), tuple(items), tuple(cats),
            np.asarray(item_cat, dtype=np.int64),
        )

    @classmethod
    def _sorted(cls, user, item, ts, user_ids, item_ids, category_ids, item_category):
        order = np.lexsort((ts, user))  # stable: ties keep input order
        return cls(user[order], item[order], ts[order],
                   user_ids, item_ids, category_ids, item_category)


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".json", ".ndjson"):
        return "jsonl"
    if suffix in (".tsv", ".tab", ".txt"):
        return "tsv"
    return "csv"


def _parse_timestamp(value, line):
    if isinstance(value, bool):
        raise ParseError(f"non-numeric timestamp {value!r}", line)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    try:
        return int(str(value).strip())
    except ValueError:
        raise ParseError(f"non-numeric timestamp {value!r}", line) from None


def _iter_delimited(path: Path, delimiter: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            return
        header = [h.strip() for h in header]
        missing = {"user", "item", "timestamp"} - set(header)
        if missing:
            raise ParseError(f"header lacks columns {sorted(missing)}", 1)
        cols = {name: header.index(name) for name in header}
        has_cat = "category" in cols
        required = 1 + max(cols["user"], cols["item"], cols["timestamp"])
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < required or len(row) > len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            user, item = row[cols["user"]].strip(), row[cols["item"]].strip()
            ts = row[cols["timestamp"]]
            cat = row[cols["category"]].strip() if has_cat and cols["category"] < len(row) else ""
            yield line, user, item, ts, cat


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = json.loads(text)
                user, item, ts = rec["user"], rec["item"], rec["timestamp"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed record ({exc})", line) from None
            yield line, str(user), str(item), ts, str(rec.get("category") or "")


def load_interactions(path, format: str | None = None) -> InteractionLog:
    """Read a CSV, TSV or JSONL interaction file.

    Delimited files need a header naming ``user``, ``item`` and ``timestamp``
    (``category`` optional); JSONL records use the same keys.
    """
    path = Path(path)
    fmt = (format or _infer_format(path)).lower()
    if fmt == "jsonl":
        rows = _iter_jsonl(path)
    elif fmt in ("csv", "tsv"):
        rows = _iter_delimited(path, "\t" if fmt == "tsv" else ",")
    else:
        raise ConfigError(f"unsupported format {format!r}")

    def records():
        for line, user, item, ts, cat in rows:
            if not user or not item:
                raise ParseError("empty user or item identifier", line)
            ts = _parse_timestamp(ts, line)
            if ts < 0:
                raise ParseError(f"negative timestamp {ts}", line)
            yield user, item, ts, cat

    log = InteractionLog.from_records(records())
    if log.n_events == 0:
        raise EmptyDatasetError(f"{path}: no interactions")
    logger.info("loaded %d events, %d users, %d items from %s",
                log.n_events, log.n_users, log.n_items, path)
    return log


def save_interactions(log: InteractionLog, path, format: str | None = None):
    path = Path(path)
    fmt = (format or _infer_format(path)).lower()
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for user, item, ts, cat in log.to_records():
                fh.write(json.dumps({"user": user, "item": item,
                                     "timestamp": ts, "category": cat}) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t" if fmt == "tsv" else ",",
                            lineterminator="\n")
        writer.writerow(["user", "item", "timestamp", "category"])
        writer.writerows(log.to_records())


def k_core_filter(log: InteractionLog, n: int, iterative: bool = True) -> InteractionLog:
    """Keep users and items with at least ``n`` interactions.

    With ``iterative`` (default) removal repeats until a fixed point, giving
    a true n-core; otherwise a single pass over the original counts is made.
    """
    if n < 1:
        raise ConfigError("n-core threshold must be >= 1")
    keep = np.ones(log.n_events, dtype=bool)
    while True:
        ucount = np.bincount(log.user[keep], minlength=log.n_users)
        icount = np.bincount(log.item[keep], minlength=log.n_items)
        new_keep = keep & (ucount[log.user] >= n) & (icount[log.item] >= n)
        if np.array_equal(new_keep, keep) or not iterative:
            keep = new_keep
            break
        keep = new_keep
    if not keep.any():
        raise EmptyDatasetError(f"{n}-core filtering removed every interaction")
    return log.subset(keep).compact()


def shuffle_timestamp_ties(log: InteractionLog, seed: int) -> InteractionLog:
    """Uniformly permute each user's runs of equal-timestamp events."""
    rng = np.random.default_rng(seed)
    keys = rng.permutation(log.n_events)
    order = np.lexsort((keys, log.timestamp, log.user))
    return InteractionLog(
        log.user[order], log.item[order], log.timestamp[order],
        log.user_ids, log.item_ids, log.category_ids, log.item_category,
    )


@dataclass(frozen=True)
class SplitSpec:
    mode: str = SEQUENTIAL
    train_fraction: float = 0.8
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (SEQUENTIAL, RANDOM):
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if self.mode == RANDOM:
            fr = (self.train_fraction, self.valid_fraction, self.test_fraction)
            if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
                raise ConfigError("split fractions must be positive and sum to 1")


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """A log whose events are tagged train / validation / test.

    Targets and queries are keyed by user index and hold item indices of
    ``log``. ``valid_query[u]`` is the item immediately preceding the
    validation target(s) of user ``u``; likewise ``test_query``.
    """

    log: InteractionLog
    part: np.ndarray
    mode: str
    validation: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)
    valid_query: dict = field(default_factory=dict)
    test_query: dict = field(default_factory=dict)
    n_skipped: int = 0

    @property
    def train(self) -> InteractionLog:
        return self.log.subset(self.part == TRAIN)

    @property
    def train_valid(self) -> InteractionLog:
        return self.log.subset(self.part <= VALID)

    def targets(self, which: str) -> tuple[dict, dict]:
        """``(targets, queries)`` for ``"validation"`` or ``"test"``."""
        if which == "validation":
            return self.validation, self.valid_query
        if which == "test":
            return self.test, self.test_query
        raise ConfigError(f"unknown split part {which!r}")


def _dedupe(items):
    return tuple(dict.fromkeys(int(i) for i in items))


def split(log: InteractionLog, spec: SplitSpec) -> DatasetSplit:
    """Partition each user's events into train, validation and test.

    Users too short for the protocol stay entirely in train and are counted
    in ``n_skipped``.
    """
    part = np.zeros(log.n_events, dtype=np.int8)
    validation, test, vq, tq = {}, {}, {}, {}
    skipped = 0
    ptr = log.indptr
    rng = np.random.default_rng(spec.seed)
    for u in range(log.n_users):
        lo, hi = int(ptr[u]), int(ptr[u + 1])
        n = hi - lo
        seq = log.item[lo:hi]
        if spec.mode == SEQUENTIAL:
            if n < 3:
                skipped += 1
                continue
            part[hi - 2] = VALID
            part[hi - 1] = TEST
            validation[u] = (int(seq[-2]),)
            vq[u] = int(seq[-3])
            test[u] = (int(seq[-1]),)
            tq[u] = int(seq[-2])
            continue

        n_train = math.floor(spec.train_fraction * n + 1e-9)
        rest = n - n_train
        n_valid = math.floor(rest * spec.valid_fraction
                             / (spec.valid_fraction + spec.test_fraction) + 1e-9)
        n_test = rest - n_valid
        if n_train < 1 or n_valid < 1 or n_test < 1:
            skipped += 1
            continue
        perm = rng.permutation(n)
        local = np.zeros(n, dtype=np.int8)
        local[perm[n_train:n_train + n_valid]] = VALID
        local[perm[n_train + n_valid:]] = TEST
        part[lo:hi] = local
        for tag, targets, queries in ((VALID, validation, vq), (TEST, test, tq)):
            pos = np.flatnonzero(local == tag)
            with_pred = pos[pos > 0]
            if len(with_pred) == 0:
                continue
            targets[u] = _dedupe(seq[pos])
            queries[u] = int(seq[with_pred[0] - 1])
    if skipped:
        warnings.warn(f"{skipped} users too short for the {spec.mode} split were kept in train only",
                      stacklevel=2)
    return DatasetSplit(log, part, spec.mode, validation, test, vq, tq, skipped)
