"""Interaction logs, modality feature files, and the temporal leave-one-out split."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"TMMF1"


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class InteractionLog:
    """Timestamped (user, item, time) triples with dense ids.

    Triples are stored grouped by user and sorted by time within each user;
    ties keep input order. ``user_ptr[u]:user_ptr[u+1]`` spans user ``u``.
    """

    users: np.ndarray  # int64
    items: np.ndarray  # int64
    times: np.ndarray  # float64
    n_users: int
    n_items: int
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    seq: np.ndarray | None = None  # original input position of each triple

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.times)):
            raise DataError("triple arrays differ in length")
        if len(self.users):
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise DataError("user id out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise DataError("item id out of range")
            if not np.all(np.isfinite(self.times)) or self.times.min() < 0:
                raise DataError("timestamps must be finite and non-negative")

    @property
    def n_interactions(self) -> int:
        return len(self.users)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def user_ptr(self) -> np.ndarray:
        return np.searchsorted(self.users, np.arange(self.n_users + 1))

    def with_times(self, times: np.ndarray) -> "InteractionLog":
        """Same interaction identities and order, new timestamps."""
        return InteractionLog(self.users, self.items, np.asarray(times, dtype=np.float64),
                              self.n_users, self.n_items, self.user_ids, self.item_ids, self.seq)


def from_triples(users, items, times, n_users=None, n_items=None) -> InteractionLog:
    """Build a log from dense integer triples (grouped and time-sorted per user)."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    order = np.lexsort((np.arange(len(users)), times, users))
    n_users = int(users.max()) + 1 if n_users is None else n_users
    n_items = int(items.max()) + 1 if n_items is None else n_items
    return InteractionLog(users[order], items[order], times[order], n_users, n_items,
                          [str(u) for u in range(n_users)], [str(i) for i in range(n_items)], order)


def load_interactions(path) -> InteractionLog:
    """Read ``user<TAB>item<TAB>timestamp`` lines.

    Ids are mapped densely in first-appearance order and identical lines are
    kept once. Raises :class:`DataError` naming the offending line number.
    """
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    seen: set[tuple[int, int, float]] = set()
    us, its, ts = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                t = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: timestamp {parts[2]!r} is not a number") from None
            if not np.isfinite(t) or t < 0:
                raise DataError(f"{path}:{lineno}: timestamp must be finite and >= 0")
            u = user_map.setdefault(parts[0], len(user_map))
            i = item_map.setdefault(parts[1], len(item_map))
            key = (u, i, t)
            if key in seen:
                continue
            seen.add(key)
            us.append(u)
            its.append(i)
            ts.append(t)
    if not us:
        raise DataError(f"{path}: no interactions")
    log = from_triples(us, its, ts, len(user_map), len(item_map))
    return InteractionLog(log.users, log.items, log.times, log.n_users, log.n_items,
                          list(user_map), list(item_map), log.seq)


def write_interactions(log: InteractionLog, path) -> None:
    # input order is restored so that reloading rebuilds identical dense ids
    order = np.argsort(log.seq, kind="stable") if log.seq is not None else np.arange(log.n_interactions)
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, t in zip(log.users[order], log.items[order], log.times[order]):
            fh.write(f"{log.user_ids[u]}\t{log.item_ids[i]}\t{float(t)!r}\n")


# ---------------------------------------------------------------- features

def load_features(path) -> np.ndarray:
    """Load one modality matrix (binary ``TMMF1`` or the text fallback)."""
    raw = Path(path).read_bytes()
    if raw.startswith(FEATURE_MAGIC):
        head = len(FEATURE_MAGIC)
        if len(raw) < head + 8:
            raise DataError(f"{path}: truncated header")
        rows, cols = struct.unpack_from("<II", raw, head)
        payload = raw[head + 8:]
        if len(payload) != rows * cols * 4:
            raise DataError(f"{path}: payload is {len(payload)} bytes, expected {rows * cols * 4} "
                            f"for shape {rows}x{cols}")
        mat = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    else:
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise DataError(f"{path}: bad magic, expected {FEATURE_MAGIC!r}") from None
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError(f"{path}: empty feature file")
        try:
            rows, cols = (int(x) for x in lines[0].split())
        except ValueError:
            raise DataError(f"{path}: bad magic, expected {FEATURE_MAGIC!r} or a 'rows cols' header") from None
        try:
            values = [float(x) for ln in lines[1:] for x in ln.split()]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        if len(values) != rows * cols:
            raise DataError(f"{path}: got {len(values)} values, expected {rows * cols} "
                            f"for shape {rows}x{cols}")
        mat = np.asarray(values, dtype=np.float64).reshape(rows, cols)
        bad = ~np.isfinite(mat)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"{path}: non-finite value at row {r}, col {c}")
        mat = mat.astype(np.float32)
    bad = ~np.isfinite(mat)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{path}: non-finite value at row {r}, col {c}")
    return mat


def write_features(mat: np.ndarray, path, binary: bool = True) -> None:
    mat = np.asarray(mat, dtype=np.float32)
    rows, cols = mat.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<II", rows, cols))
            fh.write(mat.astype("<f4").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{rows} {cols}\n")
            for row in mat:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


# ---------------------------------------------------------------- split

@dataclass(frozen=True)
class TemporalSplit:
    """Index sets into an :class:`InteractionLog`.

    ``valid[u]`` / ``test[u]`` hold a triple index, or -1 for users that have
    fewer than three interactions (those are trained on but never evaluated).
    """

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @property
    def eval_users(self) -> np.ndarray:
        return np.flatnonzero(self.test >= 0)


@dataclass(frozen=True)
class TrainView:
    """Train partition only; the one view downstream statistics may read."""

    users: np.ndarray
    items: np.ndarray
    times: np.ndarray
    n_users: int
    n_items: int

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def __len__(self) -> int:
        return len(self.users)


def make_temporal_split(log: InteractionLog) -> TemporalSplit:
    ptr = log.user_ptr
    counts = np.diff(ptr)
    valid = np.full(log.n_users, -1, dtype=np.int64)
    test = np.full(log.n_users, -1, dtype=np.int64)
    evaluated = counts >= 3
    test[evaluated] = ptr[1:][evaluated] - 1
    valid[evaluated] = ptr[1:][evaluated] - 2
    mask = np.ones(log.n_interactions, dtype=bool)
    mask[test[evaluated]] = False
    mask[valid[evaluated]] = False
    return TemporalSplit(np.flatnonzero(mask), valid, test)


def train_view(log: InteractionLog, split: TemporalSplit) -> TrainView:
    idx = split.train
    return TrainView(log.users[idx], log.items[idx], log.times[idx], log.n_users, log.n_items)


class NegativeSampler:
    """Uniform sampling of items a user has no train interaction with."""

    def __init__(self, view: TrainView):
        self.n_items = view.n_items
        keys = np.unique(view.users * view.n_items + view.items)
        self._keys = keys
        self._pos_count = np.bincount(keys // view.n_items, minlength=view.n_users)

    def is_positive(self, users, items) -> np.ndarray:
        q = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._keys, q)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == q

    def pool_size(self, u: int) -> int:
        return self.n_items - int(self._pos_count[u])

    def sample(self, u: int, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        pool = self.pool_size(u)
        if pool < n:
            raise DataError(f"user {u}: only {pool} candidate negatives, {n} requested")
        start, stop = np.searchsorted(self._keys, [u * self.n_items, (u + 1) * self.n_items])
        seen = self._keys[start:stop] - u * self.n_items
        candidates = np.setdiff1d(np.arange(self.n_items), seen, assume_unique=True)
        return rng.choice(candidates, size=n, replace=False)

    def sample_batch(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One negative per entry of ``users``, by rejection."""
        if np.any(self._pos_count[users] >= self.n_items):
            raise DataError("a user has interacted with every item")
        out = rng.integers(0, self.n_items, size=len(users))
        bad = np.flatnonzero(self.is_positive(users, out))
        while len(bad):
            out[bad] = rng.integers(0, self.n_items, size=len(bad))
            bad = bad[self.is_positive(users[bad], out[bad])]
        return out


def sample_negatives(log: InteractionLog, split: TemporalSplit, u: int, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` distinct non-train items for user ``u`` (deterministic per seed)."""
    sampler = NegativeSampler(train_view(log, split))
    return sampler.sample(u, n, np.random.default_rng(seed))
