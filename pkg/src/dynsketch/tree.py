"""Complete binary trees of squared weights with proportional sampling.

A tree with ``l`` leaves uses the implicit heap layout: node ``t`` has
children ``2t+1`` and ``2t+2``, the internal nodes are ``0 .. l-2`` and
the leaves are ``l-1 .. 2l-2``. Leaves are therefore at depth
``ceil(log2 l)`` or one above it. Insertion splits the first leaf into
two; deletion swaps the doomed leaf with the last one and folds the last
pair back into their parent, so the shape stays complete.
"""

from __future__ import annotations

import math
from typing import Hashable, Iterable, Iterator

import numpy as np

from .errors import EmptyStructureError


def _depth(node: int) -> int:
    return (node + 1).bit_length() - 1


class WeightedTree:
    """Maintains ``L = sum_i u_i**2`` and samples ``i`` with probability ``u_i**2 / L``.

    ``node_visits`` counts tree nodes read or written by updates and
    samples; tests use it to check that work stays logarithmic.
    """

    def __init__(self, capacity: int = 1, id_dtype=object):
        cap = max(1, 2 * int(capacity) - 1)
        self._w = np.zeros(cap)
        self._val = np.zeros(cap)
        self._ids = np.empty(cap, dtype=id_dtype)
        self._node: dict[Hashable, int] = {}
        self._n = 0
        self.node_visits = 0

    @classmethod
    def from_items(cls, ids: Iterable[Hashable], values, id_dtype=object) -> WeightedTree:
        """Bulk build in O(l) from ids and signed values (weights are squares)."""
        ids = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids)
        values = np.asarray(values, dtype=float)
        if ids.shape != values.shape or ids.ndim != 1:
            raise ValueError("ids and values must be 1-d and the same length")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        tree = cls(capacity=max(1, len(ids)), id_dtype=id_dtype)
        n = len(ids)
        if n == 0:
            return tree
        first = n - 1
        tree._ids[first : first + n] = ids
        tree._val[first : first + n] = values
        tree._w[first : first + n] = values * values
        tree._node = {k: first + p for p, k in enumerate(ids.tolist())}
        if len(tree._node) != n:
            raise ValueError("duplicate ids")
        tree._n = n
        tree.rebuild()
        return tree

    @classmethod
    def from_weights(cls, ids, weights, id_dtype=object) -> WeightedTree:
        """Bulk build from squared weights; stored values are their square roots."""
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        tree = cls.from_items(ids, np.sqrt(weights), id_dtype=id_dtype)
        if len(tree):
            tree._w[tree._leaf_slice()] = weights
            tree.rebuild()
        return tree

    # -- inspection ---------------------------------------------------------

    def __len__(self) -> int:
        return self._n

    def __contains__(self, key: Hashable) -> bool:
        return key in self._node

    @property
    def nbytes(self) -> int:
        """Bytes held by the node arrays; the id lookup dict is not counted."""
        return self._w.nbytes + self._val.nbytes + self._ids.nbytes

    @property
    def total(self) -> float:
        return float(self._w[0]) if self._n else 0.0

    @property
    def depth(self) -> int:
        return math.ceil(math.log2(self._n)) if self._n > 1 else 0

    def value(self, key: Hashable) -> float:
        return float(self._val[self._node[key]])

    def weight(self, key: Hashable) -> float:
        return float(self._w[self._node[key]])

    def get(self, key: Hashable, default: float = 0.0) -> float:
        node = self._node.get(key)
        return default if node is None else float(self._val[node])

    def _leaf_slice(self) -> slice:
        return slice(self._n - 1, 2 * self._n - 1) if self._n else slice(0, 0)

    def leaf_ids(self) -> np.ndarray:
        return self._ids[self._leaf_slice()].copy()

    def leaf_values(self) -> np.ndarray:
        return self._val[self._leaf_slice()].copy()

    def leaf_weights(self) -> np.ndarray:
        return self._w[self._leaf_slice()].copy()

    def items(self) -> Iterator[tuple[Hashable, float]]:
        sl = self._leaf_slice()
        return zip(self._ids[sl].tolist(), self._val[sl].tolist())

    def path_probabilities(self) -> dict[Hashable, float]:
        """Exact probability that the root-to-leaf walk ends at each leaf.

        Computed as the product of branch ratios, without sampling.
        """
        n = self._n
        if n == 0 or self._w[0] <= 0:
            raise EmptyStructureError("tree has zero total weight")
        m = 2 * n - 1
        prob = np.zeros(m)
        prob[0] = 1.0
        for t in range(n - 1):
            left, right = 2 * t + 1, 2 * t + 2
            s = self._w[left] + self._w[right]
            if s > 0:
                prob[left] = prob[t] * self._w[left] / s
                prob[right] = prob[t] * self._w[right] / s
        sl = self._leaf_slice()
        return dict(zip(self._ids[sl].tolist(), prob[sl].tolist()))

    def check(self, rtol: float = 1e-9) -> bool:
        """Full walk verifying the heap-sum property at every internal node."""
        n = self._n
        if n <= 1:
            return True
        t = np.arange(n - 1)
        child = self._w[2 * t + 1] + self._w[2 * t + 2]
        return bool(np.all(np.abs(self._w[t] - child) <= rtol * np.maximum(child, 1e-300)))

    # -- mutation -----------------------------------------------------------

    def _grow(self, needed: int) -> None:
        cap = len(self._w)
        if needed <= cap:
            return
        new_cap = max(needed, 2 * cap + 1)
        for name in ("_w", "_val"):
            arr = np.zeros(new_cap)
            arr[:cap] = getattr(self, name)
            setattr(self, name, arr)
        ids = np.empty(new_cap, dtype=self._ids.dtype)
        ids[:cap] = self._ids
        self._ids = ids

    def _set_leaf(self, node: int, key: Hashable, value: float, weight: float) -> None:
        self._ids[node] = key
        self._val[node] = value
        self._w[node] = weight
        self._node[key] = node

    def _fix_up(self, node: int) -> None:
        w = self._w
        visits = 1
        while node > 0:
            node = (node - 1) >> 1
            w[node] = w[2 * node + 1] + w[2 * node + 2]
            visits += 2
        self.node_visits += visits

    def upsert(self, key: Hashable, value: float) -> None:
        """Insert or change the value stored under ``key``; its weight is ``value**2``."""
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value!r}")
        self._upsert(key, value, value * value)

    def upsert_weight(self, key: Hashable, weight: float) -> None:
        """Like :meth:`upsert` but sets the squared weight directly."""
        weight = float(weight)
        if not math.isfinite(weight) or weight < 0:
            raise ValueError(f"weight must be finite and nonnegative, got {weight!r}")
        self._upsert(key, math.sqrt(weight), weight)

    def _upsert(self, key: Hashable, value: float, weight: float) -> None:
        node = self._node.get(key)
        if node is not None:
            self._val[node] = value
            self._w[node] = weight
            self._fix_up(node)
            return
        n = self._n
        if n == 0:
            self._grow(1)
            self._set_leaf(0, key, value, weight)
            self._n = 1
            self.node_visits += 1
            return
        self._grow(2 * n + 1)
        # split the first leaf p into children 2p+1 (old content) and 2p+2 (new)
        p = n - 1
        self._set_leaf(2 * p + 1, self._ids[p], self._val[p], self._w[p])
        self._ids[p] = None if self._ids.dtype == object else 0
        self._val[p] = 0.0
        self._set_leaf(2 * p + 2, key, value, weight)
        self._n = n + 1
        self._fix_up(2 * p + 2)

    def delete(self, key: Hashable) -> None:
        node = self._node.pop(key, None)
        if node is None:
            raise KeyError(key)
        n = self._n
        if n == 1:
            self._w[0] = 0.0
            self._val[0] = 0.0
            self._n = 0
            self.node_visits += 1
            return
        last = 2 * n - 2
        if node != last:
            self._set_leaf(node, self._ids[last], self._val[last], self._w[last])
        # fold the last pair (last-1, last) into their parent
        sib, parent = last - 1, n - 2
        self._set_leaf(parent, self._ids[sib], self._val[sib], self._w[sib])
        self._w[sib] = self._w[last] = 0.0
        self._n = n - 1
        self._fix_up(parent)
        if node < sib:
            self._fix_up(node)

    def rebuild(self) -> None:
        """Recompute every internal sum bottom-up in O(l)."""
        n = self._n
        if n <= 1:
            return
        w = self._w
        for h in range(_depth(n - 2), -1, -1):
            lo, hi = (1 << h) - 1, min((1 << (h + 1)) - 1, n - 1)
            t = np.arange(lo, hi)
            w[t] = w[2 * t + 1] + w[2 * t + 2]

    # -- sampling -----------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> Hashable:
        """One root-to-leaf walk picking each child proportionally to its weight."""
        n = self._n
        if n == 0 or self._w[0] <= 0:
            raise EmptyStructureError("cannot sample from a tree with zero total weight")
        w = self._w
        node = 0
        visits = 1
        while node < n - 1:
            left = 2 * node + 1
            wl, wr = w[left], w[left + 1]
            node = left if rng.random() * (wl + wr) < wl else left + 1
            visits += 1
        self.node_visits += visits
        return self._ids[node].item() if hasattr(self._ids[node], "item") else self._ids[node]

    def sample_many(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """``size`` independent walks, vectorized level by level."""
        n = self._n
        if n == 0 or self._w[0] <= 0:
            raise EmptyStructureError("cannot sample from a tree with zero total weight")
        nodes = np.zeros(size, dtype=np.int64)
        w = self._w
        for _ in range(self.depth):
            inner = nodes < n - 1
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            left = 2 * nodes[idx] + 1
            wl, wr = w[left], w[left + 1]
            go_right = rng.random(idx.size) * (wl + wr) >= wl
            nodes[idx] = left + go_right
        self.node_visits += size * (self.depth + 1)
        return self._ids[nodes]


class StaticForest:
    """A stack of immutable trees sharing one leaf count, sampled in batches.

    Row ``t`` of ``values`` gives the signed leaf values of tree ``t``; leaf
    ``i`` of every tree carries id ``i``.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] == 0:
            raise ValueError("values must be a non-empty 2-d array")
        self.n_trees, n = values.shape
        self._n = n
        w = np.zeros((self.n_trees, 2 * n - 1))
        w[:, n - 1 :] = values * values
        if n > 1:
            for h in range(_depth(n - 2), -1, -1):
                lo, hi = (1 << h) - 1, min((1 << (h + 1)) - 1, n - 1)
                t = np.arange(lo, hi)
                w[:, t] = w[:, 2 * t + 1] + w[:, 2 * t + 2]
        self._w = w
        # leaf position -> leaf id (identity order)
        self.depth = math.ceil(math.log2(n)) if n > 1 else 0

    def totals(self) -> np.ndarray:
        return self._w[:, 0].copy()

    def sample(self, trees: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One leaf from each tree listed in ``trees`` (repeats allowed)."""
        trees = np.asarray(trees, dtype=np.int64)
        if np.any(self._w[trees, 0] <= 0):
            raise EmptyStructureError("cannot sample from a tree with zero total weight")
        n = self._n
        nodes = np.zeros(trees.size, dtype=np.int64)
        w = self._w
        for _ in range(self.depth):
            idx = np.flatnonzero(nodes < n - 1)
            if idx.size == 0:
                break
            left = 2 * nodes[idx] + 1
            tr = trees[idx]
            wl, wr = w[tr, left], w[tr, left + 1]
            nodes[idx] = left + (rng.random(idx.size) * (wl + wr) >= wl)
        return nodes - (n - 1)
