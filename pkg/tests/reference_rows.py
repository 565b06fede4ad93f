"""Reference (F1, precision, recall) rows of the single-model and ensemble tables.

Every recall is a multiple of 1/17, so each row maps back to integer
confusion counts with 17 anomalous rows in the scored set.
"""

from __future__ import annotations

N_POSITIVE = 17

SINGLE_ROWS = [
    ("Baseline", "-", 0.06759, 0.03498, 1.00000),
    ("MLP", "D1", 0.09390, 0.05102, 0.58824),
    ("XGB", "D2", 0.21622, 0.20000, 0.23529),
    ("SVM", "D2", 0.16185, 0.08974, 0.82353),
    ("TCN", "D1", 0.09816, 0.05479, 0.47059),
    ("TCN", "D2", 0.07792, 0.04206, 0.52941),
    ("LSTM", "D1", 0.06759, 0.03498, 1.00000),
    ("LSTM", "D2", 0.10046, 0.05446, 0.64706),
    ("LSTM", "D3", 0.16923, 0.09735, 0.64706),
    ("GRU", "D1", 0.06759, 0.03498, 1.00000),
    ("GRU", "D2", 0.07362, 0.04110, 0.35294),
    ("GRU", "D3", 0.16250, 0.09091, 0.76471),
    ("SA", "D1", 0.07203, 0.03736, 1.00000),
    ("SA", "D2", 0.09028, 0.04797, 0.76471),
    ("SA", "D3", 0.22018, 0.13043, 0.70588),
]

ENSEMBLE_ROWS = [
    ("XGB+IF", "soft D2", 0.34286, 0.33333, 0.35294),
    ("SVM+IF", "hard,unanimous D2", 0.19802, 0.11905, 0.58824),
    ("XGB+SVM+IF", "soft D2", 0.38596, 0.275, 0.64706),
    ("XGB+SVM+SA+IF", "hard,unanimous D2+D3", 0.36364, 0.2963, 0.47059),
    ("XGB+SVM+SA", "soft D2+D3", 0.51429, 0.5, 0.52941),
]

ALL_ROWS = SINGLE_ROWS + ENSEMBLE_ROWS


def counts_for(precision: float, recall: float) -> tuple[int, int, int]:
    """(tp, fp, fn) reproducing the printed precision and recall."""
    tp = round(recall * N_POSITIVE)
    fp = round(tp / precision - tp)
    return tp, fp, N_POSITIVE - tp
