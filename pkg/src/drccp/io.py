"""File formats: samples (CSV / JSON), distributions, problem files, and
atomic report writing."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .constraints import (PiecewiseBilinearConstraint, PolyhedralSupport, PolytopeX, load_oracle)
from .core import DiscreteDistribution, SampleSet, Tolerances

_NUM = {"type": ["number", "null"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_BOX = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["objective", "X", "constraint", "theta", "alpha"],
    "properties": {
        "objective": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "X": {
            "type": "object",
            "properties": {"D": _MATRIX, "g": {"type": "array", "items": {"type": "number"}}, "box": _BOX},
            "additionalProperties": False,
        },
        "constraint": {
            "type": "object",
            "oneOf": [
                {"required": ["pieces"]},
                {"required": ["oracle"]},
            ],
            "properties": {
                "pieces": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "object", "required": ["a", "A", "d", "e"]},
                },
                "oracle": {"type": "object", "required": ["id"],
                           "properties": {"id": {"type": "string"}, "params": {"type": "object"}}},
                "lipschitz": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "support": {
            "oneOf": [
                {"const": "free"},
                {"type": "object", "required": ["C", "h"]},
                {"type": "object", "required": ["box"], "properties": {"box": _BOX}},
            ]
        },
        "samples": {"oneOf": [_MATRIX, {"type": "array", "items": {"type": "number"}}]},
        "samples_path": {"type": "string"},
        "theta": {"type": "number", "minimum": 0},
        "p": {"enum": [1, 2]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "delta": {"type": "number", "minimum": 0},
        "grid_resolution": {"type": "number", "exclusiveMinimum": 0},
        "tolerances": {
            "type": "object",
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("feas_tol", "opt_tol", "oracle_tol")},
            "additionalProperties": False,
        },
        "algorithm": {"type": "object"},
    },
    "oneOf": [{"required": ["samples"]}, {"required": ["samples_path"]}],
}


class ProblemError(ValueError):
    """Problem file failed validation or references a missing file."""


def load_samples(path) -> SampleSet:
    """Samples from JSON (array of arrays) or CSV (one row per sample, optional header)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return SampleSet(np.asarray(json.loads(text), float))
    rows = [r for r in csv.reader(text.splitlines()) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path} holds no samples")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    return SampleSet(np.array([[float(c) for c in r] for r in rows], float))


def save_distribution(dist: DiscreteDistribution, path):
    atomic_write_json(path, dist.to_dict())


def load_distribution(path) -> DiscreteDistribution:
    """A distribution JSON ``{atoms, weights}``, or a sample file read as empirical."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        if isinstance(doc, dict):
            return DiscreteDistribution.from_dict(doc)
    s = load_samples(path)
    return DiscreteDistribution(s.samples, np.full(s.count, 1.0 / s.count))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def digest(obj) -> str:
    data = obj if isinstance(obj, bytes) else json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(data).hexdigest()


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj):
    atomic_write_text(path, canonical_json(obj))


def write_csv(path, header, rows):
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    atomic_write_text(path, buf.getvalue())


class Problem:
    """Parsed problem file."""

    def __init__(self, doc: dict, base: Path | None = None):
        try:
            jsonschema.validate(doc, PROBLEM_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ProblemError(f"schema: {exc.message}") from exc
        self.doc = doc
        base = base or Path(".")
        if "samples" in doc:
            self.samples = SampleSet(np.asarray(doc["samples"], float)).samples
        else:
            sp = base / doc["samples_path"]
            if not sp.exists():
                raise ProblemError(f"samples file {sp} does not exist")
            self.samples = load_samples(sp).samples
        con = doc["constraint"]
        try:
            if "pieces" in con:
                self.F = PiecewiseBilinearConstraint.from_dict(con)
            else:
                self.F = load_oracle(con["oracle"])
            self.c = np.asarray(doc["objective"], float)
            self.X = PolytopeX.from_dict(doc["X"])
            m = self.F.m
            if self.samples.shape[1] != m:
                if self.samples.shape[1] == 1 and self.samples.size % m == 0:
                    self.samples = self.samples.reshape(-1, m)
                else:
                    raise ProblemError(f"samples have dimension {self.samples.shape[1]}, constraint expects {m}")
            self.support = PolyhedralSupport.from_dict(doc.get("support", "free"), m)
            self.support.check_samples(self.samples)
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ProblemError):
                raise
            raise ProblemError(str(exc)) from exc
        if self.c.size != self.F.n or self.X.n != self.F.n:
            raise ProblemError("objective, X and constraint disagree on the dimension of x")
        self.lipschitz = con.get("lipschitz")
        self.theta = float(doc["theta"])
        self.alpha = float(doc["alpha"])
        self.p = int(doc.get("p", 1))
        self.delta = float(doc.get("delta", 0.0))
        self.grid_resolution = doc.get("grid_resolution")
        self.tol = Tolerances(**doc.get("tolerances", {}))
        self.algorithm = dict(doc.get("algorithm", {}))

    @classmethod
    def load(cls, path) -> "Problem":
        path = Path(path)
        if not path.exists():
            raise ProblemError(f"problem file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ProblemError(f"invalid JSON: {exc}") from exc
        return cls(doc, path.parent)

    def digest(self) -> str:
        doc = {k: v for k, v in self.doc.items() if k != "samples_path"}
        doc["samples"] = self.samples.tolist()
        return digest(doc)

    def with_overrides(self, theta=None, alpha=None) -> "Problem":
        if theta is not None:
            self.theta = float(theta)
        if alpha is not None:
            if not 0 < alpha < 1:
                raise ProblemError("alpha must lie in (0, 1)")
            self.alpha = float(alpha)
        return self
