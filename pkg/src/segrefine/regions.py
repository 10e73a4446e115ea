"""Region proposals from an uncertainty map.

Pixels at or above a per-image percentile threshold are grouped into
8-connected components; components of at least ``min_area`` pixels become
region proposals with a tight bounding box and a mean-uncertainty score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PERCENTILE = 75.0
DEFAULT_MIN_AREA = 100

# 8-neighborhood offsets
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class RegionProposal:
    region_id: str
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    mask: np.ndarray  # bool [H, W], true only on the component
    area: int
    score: float  # mean uncertainty over mask pixels

    @property
    def bbox_slices(self) -> tuple[slice, slice]:
        x0, y0, x1, y1 = self.bbox
        return slice(y0, y1 + 1), slice(x0, x1 + 1)


def percentile_threshold(values: np.ndarray, q: float) -> tuple[float, np.ndarray]:
    """Linear-interpolation percentile of the whole map, and the >= mask.

    rank = (n - 1) * q / 100; the threshold interpolates between the floor
    and ceil ranks of the sorted values. The comparison is inclusive, so a
    constant map yields an all-true mask at any q.
    """
    if values.size == 0:
        raise ValueError("cannot threshold an empty map")
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"percentile q={q} outside [0, 100]")
    flat = np.sort(values.reshape(-1).astype(np.float64))
    rank = (flat.size - 1) * q / 100.0
    lo = int(np.floor(rank))
    hi = int(np.ceil(rank))
    threshold = float(flat[lo] + (rank - lo) * (flat[hi] - flat[lo]))
    return threshold, values >= threshold


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components of a boolean mask.

    Returns one (row, col) index array per component, ordered by the raster
    position of each component's first pixel; pixels within a component are
    in raster order.
    """
    h, w = mask.shape
    visited = np.zeros((h, w), dtype=bool)
    components: list[np.ndarray] = []
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or visited[y0, x0]:
                continue
            stack = [(y0, x0)]
            visited[y0, x0] = True
            pixels = []
            while stack:
                y, x = stack.pop()
                pixels.append((y, x))
                for dy, dx in _NEIGHBORS:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not visited[ny, nx]:
                        visited[ny, nx] = True
                        stack.append((ny, nx))
            idx = np.array(sorted(pixels), dtype=np.int64)
            components.append(idx)
    return components


def extract_regions(
    values: np.ndarray,
    scene_id: str,
    q: float = DEFAULT_PERCENTILE,
    min_area: int = DEFAULT_MIN_AREA,
) -> list[RegionProposal]:
    """Threshold, label, filter by area, and score region proposals.

    Output is sorted by score descending with ties broken by the raster
    position of the component's first pixel; region ids are assigned after
    sorting as ``<scene_id>:<ordinal>``.
    """
    _, mask = percentile_threshold(values, q)
    candidates = []
    for pixels in connected_components(mask):
        if pixels.shape[0] < min_area:
            continue
        ys, xs = pixels[:, 0], pixels[:, 1]
        score = float(values[ys, xs].astype(np.float64).mean())
        candidates.append((score, (int(ys[0]), int(xs[0])), pixels))
    candidates.sort(key=lambda c: (-c[0], c[1]))

    h, w = values.shape
    proposals = []
    for ordinal, (score, _first, pixels) in enumerate(candidates):
        ys, xs = pixels[:, 0], pixels[:, 1]
        region_mask = np.zeros((h, w), dtype=bool)
        region_mask[ys, xs] = True
        proposals.append(
            RegionProposal(
                region_id=f"{scene_id}:{ordinal:03d}",
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                mask=region_mask,
                area=int(pixels.shape[0]),
                score=score,
            )
        )
    return proposals
