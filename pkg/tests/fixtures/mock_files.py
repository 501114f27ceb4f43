"""Utilities for writing instance, point, plan and returns files for testing."""

import json
import os

import numpy as np
import pandas as pd


def write_json(directory: str, name: str, payload) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    return path


def write_text(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def write_point_file(directory: str, x, y=None, z=None, name: str = "point.json") -> str:
    payload = {"x": list(np.atleast_1d(x).astype(float))}
    if y is not None:
        payload["y"] = list(map(float, y))
    if z is not None:
        payload["z"] = list(map(float, z))
    return write_json(directory, name, payload)


def write_returns_csv(directory: str, S: int = 30, n: int = 4, seed: int = 0, name: str = "returns.csv") -> str:
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame(
        0.01 + 0.05 * rng.standard_normal((S, n)),
        columns=[f"asset_{j}" for j in range(n)],
    )
    frame.insert(0, "date", pd.date_range("2020-01-01", periods=S).strftime("%Y-%m-%d"))
    path = os.path.join(directory, name)
    frame.to_csv(path, index=False)
    return path
