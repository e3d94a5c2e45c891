"""File formats: model documents, atomic writes, digests."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qfacts.channels import (
    CycleConfig,
    MixtureChannel,
    NonDemolitionModel,
    StepDynamics,
    build_cycle_dynamics,
    build_hamiltonian_perturbation,
    build_mixture_channel,
    build_nd_model,
    nd_dynamics,
)
from qfacts.qcore import ProjectorFamily


def encode_matrix(a) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def decode_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValueError("matrix must be a list of rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_complex(z) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ModelDocument:
    """A loaded model file: the non-demolition model plus optional extras.

    ``perturbation`` and ``cycle`` keep their decoded JSON content (matrices
    as complex arrays) so that saving reproduces the numbers exactly.
    """

    model: NonDemolitionModel
    perturbation: dict | None = None
    cycle: dict | None = None
    extra: dict = field(default_factory=dict)

    def dynamics(self) -> StepDynamics:
        """Step dynamics described by the file (cycle takes precedence)."""
        if self.cycle is not None:
            return build_cycle_dynamics(self.cycle_config())
        pert = self.perturbation
        if pert is not None and pert["type"] == "hamiltonian":
            return build_hamiltonian_perturbation(self.model, pert["H"], pert.get("d1"))
        return nd_dynamics(self.model)

    def cycle_config(self, **overrides) -> CycleConfig:
        if self.cycle is None and not overrides:
            raise ValueError("model file has no cycle section")
        c = dict(self.cycle or {})
        c.update(overrides)
        return CycleConfig(float(c["lambda1"]), float(c["lambda2"]), int(c["M"]),
                           np.asarray(c["H_P"]), self.model)

    def mixture(self) -> MixtureChannel:
        pert = self.perturbation
        if pert is None or pert["type"] != "mixture":
            raise ValueError("model file has no mixture perturbation")
        return build_mixture_channel(pert["upsilon"], pert["deviations"], pert.get("norms"))


def _decode_perturbation(p):
    if p is None:
        return None
    kind = p.get("type")
    if kind == "hamiltonian":
        h = p["H"]
        hs = decode_matrix(h) if np.asarray(h).ndim == 3 else np.stack([decode_matrix(x) for x in h])
        out = {"type": "hamiltonian", "H": hs}
        if "d1" in p:
            out["d1"] = float(p["d1"])
        return out
    if kind == "mixture":
        out = {"type": "mixture", "upsilon": [float(u) for u in p["upsilon"]],
               "deviations": [decode_matrix(m) for m in p["deviations"]]}
        if "norms" in p:
            out["norms"] = [float(x) for x in p["norms"]]
        return out
    raise ValueError(f"unknown perturbation type {kind!r}")


def _encode_perturbation(p):
    if p is None:
        return None
    if p["type"] == "hamiltonian":
        h = np.asarray(p["H"])
        out = {"type": "hamiltonian",
               "H": encode_matrix(h) if h.ndim == 2 else [encode_matrix(x) for x in h]}
        if "d1" in p:
            out["d1"] = p["d1"]
        return out
    out = {"type": "mixture", "upsilon": list(p["upsilon"]),
           "deviations": [encode_matrix(m) for m in p["deviations"]]}
    if "norms" in p:
        out["norms"] = list(p["norms"])
    return out


def model_from_dict(doc: dict) -> ModelDocument:
    dim = int(doc["dim"])
    facts = doc["facts"]
    labels = tuple(facts["labels"])
    projs = tuple(decode_matrix(p) for p in facts["projectors"])
    if any(p.shape != (dim, dim) for p in projs):
        raise ValueError("projector shape does not match dim")
    alphabet = tuple(doc["alphabet"])
    amps = np.asarray(doc["amplitudes"], dtype=float)
    table = amps[..., 0] + 1j * amps[..., 1]
    model = build_nd_model(ProjectorFamily(labels, projs), table, alphabet=alphabet,
                           strict=bool(doc.get("strict", False)))
    cycle = None
    if doc.get("cycle") is not None:
        c = doc["cycle"]
        cycle = {"lambda1": float(c["lambda1"]), "lambda2": float(c["lambda2"]),
                 "M": int(c["M"]), "H_P": decode_matrix(c["H_P"])}
    known = {"dim", "facts", "alphabet", "amplitudes", "perturbation", "cycle", "strict"}
    extra = {k: v for k, v in doc.items() if k not in known}
    return ModelDocument(model, _decode_perturbation(doc.get("perturbation")), cycle, extra)


def model_to_dict(md: ModelDocument) -> dict:
    m = md.model
    doc = {
        "dim": m.dim,
        "facts": {"labels": list(m.labels),
                  "projectors": [encode_matrix(p) for p in m.projectors.projectors]},
        "alphabet": list(m.alphabet),
        "amplitudes": [[encode_complex(z) for z in row] for row in m.amplitudes],
    }
    if md.perturbation is not None:
        doc["perturbation"] = _encode_perturbation(md.perturbation)
    if md.cycle is not None:
        c = md.cycle
        doc["cycle"] = {"lambda1": c["lambda1"], "lambda2": c["lambda2"], "M": c["M"],
                        "H_P": encode_matrix(c["H_P"])}
    doc.update(md.extra)
    return doc


def load_model(path) -> ModelDocument:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_model(path, md: ModelDocument) -> None:
    write_json(path, model_to_dict(md))
