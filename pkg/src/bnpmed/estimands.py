"""The seven potential-outcome configurations and the estimand algebra."""

from __future__ import annotations

import numpy as np

ESTIMANDS = ("TE", "NDE", "NIE", "EIE1", "EIE2", "INT", "ESME1", "ESME2", "EIME1", "EIME2")

# (treatment, arm of own M1, arm of others' M1, arm of own M2, arm of others' M2)
CONFIGS = (
    (1, 1, 1, 1, 1),  # Y(1, M1(1), M2(1))
    (1, 1, 1, 0, 0),  # Y(1, M1(1), M2(0))
    (1, 1, 1, 1, 0),  # Y(1, M1(1), M2_j(1), M2_-j(0))
    (1, 0, 0, 1, 1),  # Y(1, M1(0), M2(1))
    (1, 1, 0, 1, 1),  # Y(1, M1_j(1), M1_-j(0), M2(1))
    (1, 0, 0, 0, 0),  # Y(1, M1(0), M2(0))
    (0, 0, 0, 0, 0),  # Y(0, M1(0), M2(0))
)


def estimands_from_configs(y: np.ndarray) -> np.ndarray:
    """Map mean potential outcomes (..., 7) to the ten estimands (..., 10).

    Columns follow :data:`CONFIGS`; output columns follow :data:`ESTIMANDS`.
    INT is computed as EIE1 + EIE2 - NIE so the decomposition holds exactly.
    """
    y = np.asarray(y, dtype=float)
    y1, y2, y3, y4, y5, y6, y7 = (y[..., k] for k in range(7))
    te = y1 - y7
    nie = y1 - y6
    nde = y6 - y7
    eie1 = y1 - y4
    eie2 = y1 - y2
    esme1 = y1 - y5
    eime1 = y5 - y4
    esme2 = y1 - y3
    eime2 = y3 - y2
    inter = eie1 + eie2 - nie
    return np.stack([te, nde, nie, eie1, eie2, inter, esme1, esme2, eime1, eime2], axis=-1)


def identity_residuals(est: np.ndarray) -> np.ndarray:
    """Absolute residuals of the four decomposition identities, (..., 4)."""
    e = dict(zip(ESTIMANDS, np.moveaxis(np.asarray(est), -1, 0)))
    return np.abs(np.stack([
        e["TE"] - e["NIE"] - e["NDE"],
        e["NIE"] - (e["EIE1"] + e["EIE2"] - e["INT"]),
        e["EIE1"] - e["ESME1"] - e["EIME1"],
        e["EIE2"] - e["ESME2"] - e["EIME2"],
    ], axis=-1))


def cluster_then_overall_mean(values: np.ndarray, starts: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Equal-weight mean over clusters of within-cluster means (axis 0 is units)."""
    per_cluster = np.add.reduceat(values, starts, axis=0) / np.asarray(sizes).reshape(
        -1, *([1] * (np.ndim(values) - 1)))
    return per_cluster.mean(axis=0)
