"""Sampled space-time fields and their CSV/JSON export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROVENANCES = ("nsoliton", "perturbed", "cn-evolved", "closed-form", "residual")


def uniform_axis(start: float, stop: float, step: float) -> np.ndarray:
    """Uniform axis from ``start`` to ``stop`` (inclusive) with spacing ``step``.

    ``(stop - start) / step`` must be an integer up to rounding; the axis is
    built as ``start + k * step`` so repeated construction is bit-stable.
    """
    if step <= 0:
        raise ValueError("axis step must be positive")
    if stop < start:
        raise ValueError("axis stop must not precede start")
    count = (stop - start) / step
    n = int(round(count))
    if abs(count - n) > 1e-9 * max(1.0, abs(count)):
        raise ValueError(f"({stop} - {start}) is not an integer multiple of {step}")
    return start + step * np.arange(n + 1)


@dataclass(frozen=True)
class GridSpec:
    t_min: float
    t_max: float
    tau: float
    x_min: float
    x_max: float
    h: float

    def __post_init__(self):
        if not (self.tau > 0 and self.h > 0):
            raise ValueError("grid steps must be positive")
        self.t_axis()
        self.x_axis()

    def t_axis(self) -> np.ndarray:
        return uniform_axis(self.t_min, self.t_max, self.tau)

    def x_axis(self) -> np.ndarray:
        return uniform_axis(self.x_min, self.x_max, self.h)

    def halved(self) -> "GridSpec":
        return GridSpec(self.t_min, self.t_max, self.tau / 2, self.x_min, self.x_max, self.h / 2)

    @classmethod
    def from_dict(cls, raw: dict) -> "GridSpec":
        keys = ("t_min", "t_max", "tau", "x_min", "x_max", "h")
        missing = [k for k in keys if k not in raw]
        if missing:
            raise ValueError(f"grid block is missing {missing}")
        return cls(**{k: float(raw[k]) for k in keys})

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max, "tau": self.tau,
                "x_min": self.x_min, "x_max": self.x_max, "h": self.h}


@dataclass
class FieldGrid:
    """Complex samples ``u[i, j] = u(t[i], x[j])`` on a uniform grid."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    provenance: str = "nsoliton"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=complex)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        for name, ax in (("t", self.t), ("x", self.x)):
            if ax.ndim != 1 or ax.size == 0:
                raise ValueError(f"{name}-axis must be a non-empty 1-D array")
            if ax.size > 1 and not np.all(np.diff(ax) > 0):
                raise ValueError(f"{name}-axis must be strictly increasing")
        if self.u.shape != (self.t.size, self.x.size):
            raise ValueError(f"sample shape {self.u.shape} does not match axes ({self.t.size}, {self.x.size})")

    @property
    def tau(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else math.nan

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0]) if self.x.size > 1 else math.nan

    def same_axes(self, other: "FieldGrid", atol: float = 1e-12) -> bool:
        return (self.t.shape == other.t.shape and self.x.shape == other.x.shape
                and np.allclose(self.t, other.t, atol=atol, rtol=0)
                and np.allclose(self.x, other.x, atol=atol, rtol=0))

    def slice_t(self, i: int) -> np.ndarray:
        return self.u[i]

    def to_csv(self, path: str | Path, extra_meta: dict | None = None) -> Path:
        """Write ``t,x,re_u,im_u,abs_u`` rows plus a ``<path>.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        T, X = np.meshgrid(self.t, self.x, indexing="ij")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "re_u", "im_u", "abs_u"])
            for tt, xx, uu in zip(T.ravel(), X.ravel(), self.u.ravel()):
                w.writerow([_fmt(tt), _fmt(xx), _fmt(uu.real), _fmt(uu.imag), _fmt(abs(uu))])
        meta = {"provenance": self.provenance, "nt": int(self.t.size), "nx": int(self.x.size),
                "t_min": _jnum(self.t[0]), "t_max": _jnum(self.t[-1]),
                "x_min": _jnum(self.x[0]), "x_max": _jnum(self.x[-1]),
                "tau": _jnum(self.tau), "h": _jnum(self.h)}
        meta.update(_jsonable(self.meta))
        if extra_meta:
            meta.update(_jsonable(extra_meta))
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "FieldGrid":
        path = Path(path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = np.unique(rows[:, 0])
        x = np.unique(rows[:, 1])
        if rows.shape[0] != t.size * x.size:
            raise ValueError("CSV rows do not form a full t-x grid")
        u = (rows[:, 2] + 1j * rows[:, 3]).reshape(t.size, x.size)
        meta = {}
        side = sidecar_path(path)
        provenance = "nsoliton"
        if side.exists():
            meta = json.loads(side.read_text())
            provenance = meta.get("provenance", provenance)
        return cls(t, x, u, provenance=provenance, meta=meta)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _fmt(v: float) -> str:
    return repr(float(v))


def _jnum(v: float):
    v = float(v)
    return None if not math.isfinite(v) else v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _jnum(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [_jnum(obj.real), _jnum(obj.imag)]
    return obj


def write_rows(path: str | Path, header: list[str], rows, meta: dict | None = None) -> Path:
    """Write a generic CSV table (floats at full precision) and optional sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return path
