"""
Shared test helpers
"""

# Standard
from typing import Dict, Iterable, Sequence
import os

# Local
from prodloom import constants

# A hand-built panel: two markets, three plants, two years
OUTPUT_ROWS = [
    ("A", 2000, "10101", 10, 20),
    ("A", 2000, "10102", 5, 15),
    ("A", 2001, "10101", 12, 24),
    ("A", 2001, "10102", 4, 14),
    ("B", 2000, "10101", 8, 12),
    ("B", 2001, "10101", 9, 13.5),
    ("C", 2000, "20201", 3, 9),
    ("C", 2001, "20201", 4, 10),
]
INPUT_ROWS = [
    ("A", 2000, 10, 50, 30, constants.SECTOR_MACHINERY),
    ("A", 2001, 11, 52, 31, constants.SECTOR_MACHINERY),
    ("B", 2000, 8, 40, 20, constants.SECTOR_OTHER),
    ("B", 2001, 8, 41, 21, constants.SECTOR_OTHER),
    ("C", 2000, 4, 20, 10, constants.SECTOR_OTHER),
    ("C", 2001, 5, 21, 11, constants.SECTOR_OTHER),
]
PURCHASE_ROWS = [
    ("A", 2000, "X1", 10, 30),
    ("A", 2001, "X1", 10, 33),
    ("B", 2000, "X1", 5, 15),
    ("B", 2001, "X1", 5, 16),
    ("C", 2000, "X2", 2, 4),
    ("C", 2001, "X2", 2, 5),
]


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Write a CSV file with the given header and rows"""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(str(val) for val in row) + "\n")
    return path


def write_panel_files(
    workdir: str,
    outputs: Iterable[Sequence] = OUTPUT_ROWS,
    inputs: Iterable[Sequence] = INPUT_ROWS,
    purchases: Iterable[Sequence] = PURCHASE_ROWS,
) -> Dict[str, str]:
    """Write outputs.csv, inputs.csv and purchases.csv into workdir"""
    return {
        "outputs": write_csv(os.path.join(workdir, "outputs.csv"), constants.OUTPUT_COLUMNS, outputs),
        "inputs": write_csv(os.path.join(workdir, "inputs.csv"), constants.INPUT_COLUMNS, inputs),
        "purchases": write_csv(
            os.path.join(workdir, "purchases.csv"), constants.PURCHASE_COLUMNS, purchases
        ),
    }


def read_bytes(path: str) -> bytes:
    with open(path, "rb") as handle:
        return handle.read()
