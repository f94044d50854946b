"""Balanced and top-layer-unbalanced nested designs.

Observations inside one level of the top factor are stored in lexicographic
order of ``(l_{Q-1}, ..., l_0)``, i.e. the level-0 index runs fastest.  Every
vector and matrix in the package uses that row order, so a level-``q``
cluster always occupies ``s_q`` consecutive rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import LayoutError

__all__ = ["NestedLayout", "derive_sizes", "build_incidence"]


@dataclass(frozen=True)
class NestedLayout:
    """Nesting structure of a Q-way nested design.

    Parameters
    ----------
    n : tuple of int
        Nesting vector ``(n_0, ..., n_{Q-1})``: ``n_q`` levels of factor ``q``
        inside each level of factor ``q + 1``.  For a top-layer-unbalanced
        layout the last entry is the maximum group count ``max(top_counts)``.
    top_counts : tuple of int, optional
        Number of factor ``Q-1`` levels inside each top-level unit (group).
        Only the top layer may vary.
    require_identifiable : bool, default True
        Reject layouts in which some factor never has two nested sub-levels.
    """

    n: tuple
    top_counts: tuple | None = None
    require_identifiable: bool = True

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        if len(n) < 1:
            raise LayoutError("nesting vector must have at least one factor")
        if any(v < 1 for v in n):
            raise LayoutError(f"nesting vector entries must be >= 1, got {n}")
        object.__setattr__(self, "n", n)
        if self.top_counts is not None:
            tc = tuple(int(v) for v in np.atleast_1d(self.top_counts))
            if len(tc) == 0 or any(v < 1 for v in tc):
                raise LayoutError(f"top_counts entries must be >= 1, got {tc}")
            if n[-1] != max(tc):
                raise LayoutError(
                    f"last nesting entry {n[-1]} must equal max(top_counts)={max(tc)}"
                )
            object.__setattr__(self, "top_counts", tc)
        if self.require_identifiable:
            # factor q+1 needs a level with >= 2 nested levels of factor q
            bad = [q + 1 for q, v in enumerate(n) if v < 2]
            if bad:
                raise LayoutError(
                    f"factor(s) {bad} have no level with two nested sub-levels; "
                    "covariance parameters are not identifiable"
                )

    @classmethod
    def top_unbalanced(cls, lower, top_counts, **kwargs):
        """Layout with balanced lower factors ``lower`` and varying top counts."""
        lower = tuple(int(v) for v in np.atleast_1d(lower))
        top_counts = tuple(int(v) for v in np.atleast_1d(top_counts))
        return cls(lower + (max(top_counts),), top_counts, **kwargs)

    @property
    def Q(self):
        return len(self.n)

    @property
    def is_balanced(self):
        return self.top_counts is None or len(set(self.top_counts)) == 1

    @property
    def n_groups(self):
        """Number of top-level units described by the layout (1 if balanced)."""
        return 1 if self.top_counts is None else len(self.top_counts)

    @property
    def s(self):
        return derive_sizes(self)[0]

    @property
    def m(self):
        return derive_sizes(self)[1]

    @property
    def max_s(self):
        """Cluster sizes of the maximal balanced layout (``s-bar``)."""
        return self.s

    def group_layout(self, i):
        """Balanced layout of group ``i`` (identity for balanced layouts)."""
        if self.top_counts is None:
            return self
        return NestedLayout(self.n[:-1] + (self.top_counts[i],), None, False)

    def group_sizes(self):
        """Number of observations in every group."""
        s_lower = int(np.prod(self.n[:-1])) if self.Q > 1 else 1
        if self.top_counts is None:
            return np.array([s_lower * self.n[-1]])
        return s_lower * np.asarray(self.top_counts)

    def to_dict(self):
        return {"n": list(self.n), "top_counts": None if self.top_counts is None else list(self.top_counts)}

    @classmethod
    def from_dict(cls, d, **kwargs):
        return cls(tuple(d["n"]), None if d.get("top_counts") is None else tuple(d["top_counts"]), **kwargs)


def derive_sizes(layout):
    """Cluster sizes ``s_q`` and cluster counts ``m_q`` for ``q = 0..Q``.

    ``s_q`` is the number of observations in one level of factor ``q`` and
    ``m_q = s_Q / s_q`` the number of factor-``q`` levels in one top-level
    unit.  For top-layer-unbalanced layouts the maximal balanced sizes are
    returned.
    """
    s = np.concatenate([[1], np.cumprod(layout.n)]).astype(np.int64)
    m = s[-1] // s
    return s, m


def build_incidence(layout, q, group=None):
    """Binary membership matrix ``N_q`` of observations to factor-``q`` levels.

    For a balanced layout the matrix covers one top-level unit
    (``s_Q x m_q``).  For a top-layer-unbalanced layout it covers group
    ``group``, or all groups stacked block-diagonally when ``group`` is None.
    """
    if not 1 <= q <= layout.Q:
        raise IndexError(f"factor index q={q} outside 1..{layout.Q}")
    if layout.top_counts is not None:
        if group is not None:
            return build_incidence(layout.group_layout(group), q)
        blocks = [build_incidence(layout.group_layout(i), q) for i in range(layout.n_groups)]
        rows = sum(b.shape[0] for b in blocks)
        cols = sum(b.shape[1] for b in blocks)
        out = np.zeros((rows, cols))
        r = c = 0
        for b in blocks:
            out[r : r + b.shape[0], c : c + b.shape[1]] = b
            r += b.shape[0]
            c += b.shape[1]
        return out
    s, m = derive_sizes(layout)
    return np.kron(np.eye(m[q]), np.ones((s[q], 1)))
