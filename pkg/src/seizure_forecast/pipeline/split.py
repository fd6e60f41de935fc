"""Seeded, stratified train/validation/test partitioning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from ..errors import ContractError
from .windows import SampleSet

DEFAULT_RATIOS = (0.6, 0.2, 0.2)


@dataclass
class SplitSet:
    train: SampleSet
    validation: SampleSet
    test: SampleSet
    split_seed: int

    def parts(self) -> dict[str, SampleSet]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def allocate(sizes, ratios=DEFAULT_RATIOS) -> np.ndarray:
    """Integer part sizes per stratum, shape ``[strata, parts]``.

    Every entry is the floor or ceiling of the stratum's exact share, each
    row sums to its stratum size, and the column totals are the half-up
    rounded global cut points.  The rounding choices are found as a
    bipartite max-flow (strata -> parts) over the cells with a fractional
    share.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    ratios = np.asarray(ratios, dtype=np.float64)
    n = int(sizes.sum())
    cuts = [_round_half_up(c * n) for c in np.cumsum(ratios)[:-1]] + [n]
    targets = np.diff([0] + cuts)
    exact = sizes[:, None] * ratios[None, :]
    base = np.floor(exact + 1e-9).astype(np.int64)
    fractional = exact - base > 1e-9
    row_need = sizes - base.sum(axis=1)
    col_need = targets - base.sum(axis=0)
    k, m = base.shape
    if row_need.sum() == 0:
        return base
    # nodes: 0 source, 1..k strata, k+1..k+m parts, k+m+1 sink
    sink = k + m + 1
    rows, cols, caps = [], [], []
    for i in range(k):
        rows.append(0), cols.append(1 + i), caps.append(int(row_need[i]))
        for j in range(m):
            if fractional[i, j]:
                rows.append(1 + i), cols.append(1 + k + j), caps.append(1)
    for j in range(m):
        rows.append(1 + k + j), cols.append(sink), caps.append(int(col_need[j]))
    graph = csr_matrix((np.asarray(caps, dtype=np.int32), (rows, cols)), shape=(sink + 1, sink + 1))
    result = maximum_flow(graph, 0, sink)
    if result.flow_value != row_need.sum():
        raise ContractError("no stratified allocation meets the global split sizes")
    flow = result.flow.toarray()
    return base + (flow[1 : 1 + k, 1 + k : 1 + k + m] > 0).astype(np.int64)


def split_indices(strata: list, ratios=DEFAULT_RATIOS, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assign indices to three parts, stratified by ``strata``.

    Each stratum (taken in sorted order) is shuffled and cut contiguously
    into the sizes given by :func:`allocate`, so the overall part sizes
    equal the rounded global targets and every stratum deviates from its
    exact share by less than one sample per part.
    """
    n = len(strata)
    if n < 5:
        raise ContractError(f"need at least 5 samples to split, got {n}")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    keys = [tuple(s) if isinstance(s, (list, tuple)) else s for s in strata]
    groups: dict = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    order = sorted(groups, key=repr)
    counts = allocate([len(groups[key]) for key in order], ratios)
    parts: tuple[list, list, list] = ([], [], [])
    for key, (n_train, n_val, _) in zip(order, counts):
        members = np.asarray(groups[key])
        members = members[rng.permutation(len(members))]
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train : n_train + n_val])
        parts[2].extend(members[n_train + n_val :])
    return tuple(np.sort(np.asarray(p, dtype=np.int64)) for p in parts)


def split(samples: SampleSet, ratios=DEFAULT_RATIOS, seed: int = 0, by_patient: bool = False) -> SplitSet:
    """Partition samples 60/20/20 (by default), stratified by label.

    With ``by_patient`` the strata are (patient, label) pairs, so every
    patient is itself split in the same proportions.
    """
    if by_patient:
        strata = list(zip(samples.patient_ids.tolist(), samples.labels.tolist()))
    else:
        strata = samples.labels.tolist()
    tr, va, te = split_indices(strata, ratios, seed)
    return SplitSet(samples.subset(tr), samples.subset(va), samples.subset(te), seed)
