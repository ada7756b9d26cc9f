"""Observation containers for the four modalities plus JSON ingestion.

A Dataset is immutable after construction and safe to share across worker
processes. Two documented repairs happen at load time (and only there):
VLM probability mass functions are renormalized when their sum is within
1e-6 of one, and SAR damage percentages are clamped to [0.5, 99.5] so the
later logit transform stays finite. Everything else that violates an
invariant is rejected with an error naming the offending field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

MODALITIES = ("seismic", "crater", "sar", "vlm")

DAMAGE_CLAMP_LO = 0.5
DAMAGE_CLAMP_HI = 99.5
PMF_SUM_TOL = 1.0e-6


class DatasetError(ValueError):
    """Malformed dataset file or record."""


def _require_finite(name: str, value: float) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DatasetError(f"{name} must be a number, got {value!r}")
    if isinstance(value, bool) or not math.isfinite(x):
        raise DatasetError(f"{name} must be a finite number, got {value!r}")
    return x


@dataclass(frozen=True)
class SeismicObs:
    mw_obs: float

    def __post_init__(self) -> None:
        mw = _require_finite("seismic.mw_obs", self.mw_obs)
        # plausibility window; symmetric so synthetic stress datasets with
        # deliberately mismatched generator links still load
        if not (-10.0 < mw < 10.0):
            raise DatasetError(f"seismic.mw_obs={mw} outside plausible (-10, 10)")
        object.__setattr__(self, "mw_obs", mw)


@dataclass(frozen=True)
class CraterObs:
    width_m: float
    length_m: float

    def __post_init__(self) -> None:
        w = _require_finite("crater.width_m", self.width_m)
        l = _require_finite("crater.length_m", self.length_m)
        if w <= 0 or l <= 0:
            raise DatasetError("crater dimensions must be positive")
        if w > l:
            raise DatasetError(
                f"crater.width_m={w} exceeds crater.length_m={l}")
        object.__setattr__(self, "width_m", w)
        object.__setattr__(self, "length_m", l)


@dataclass(frozen=True)
class SarBox:
    """One aggregation box: epicentral distance of its center and the
    percentage of pixels flagged damaged. Stored as given in [0, 100];
    the clamp away from the saturated endpoints happens at load time and
    again just before the logit transform."""

    range_m: float
    damage_pct: float

    def __post_init__(self) -> None:
        r = _require_finite("sar.range_m", self.range_m)
        d = _require_finite("sar.damage_pct", self.damage_pct)
        if r <= 0:
            raise DatasetError(f"sar.range_m={r} must be positive")
        if not (0.0 <= d <= 100.0):
            raise DatasetError(f"sar.damage_pct={d} outside [0, 100]")
        object.__setattr__(self, "range_m", r)
        object.__setattr__(self, "damage_pct", d)


@dataclass(frozen=True, eq=False)
class VlmRecord:
    """One ground-image record: epicentral distance and a nine-category
    damage PMF (renormalized on construction when within tolerance)."""

    range_m: float
    pmf: np.ndarray

    def __post_init__(self) -> None:
        r = _require_finite("vlm.range_m", self.range_m)
        if r <= 0:
            raise DatasetError(f"vlm.range_m={r} must be positive")
        q = np.asarray(self.pmf, dtype=float)
        if q.shape != (9,):
            raise DatasetError(f"vlm.pmf must have 9 entries, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise DatasetError("vlm.pmf entries must be finite")
        if np.any(q < 0):
            raise DatasetError("vlm.pmf entries must be nonnegative")
        s = float(q.sum())
        # inclusive boundary with a float-representation allowance
        if abs(s - 1.0) > PMF_SUM_TOL * (1.0 + 1e-6):
            raise DatasetError(f"vlm.pmf sums to {s}, outside 1 +/- {PMF_SUM_TOL}")
        q = q / s
        q.setflags(write=False)
        object.__setattr__(self, "range_m", r)
        object.__setattr__(self, "pmf", q)


@dataclass(frozen=True)
class Dataset:
    seismic: SeismicObs | None = None
    crater: CraterObs | None = None
    sar: tuple[SarBox, ...] = ()
    vlm: tuple[VlmRecord, ...] = ()
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sar", tuple(self.sar))
        object.__setattr__(self, "vlm", tuple(self.vlm))
        if not self.modalities:
            raise DatasetError("dataset contains no modality")

    @property
    def n_sar(self) -> int:
        return len(self.sar)

    @property
    def n_vlm(self) -> int:
        return len(self.vlm)

    @property
    def modalities(self) -> tuple[str, ...]:
        present = []
        if self.seismic is not None:
            present.append("seismic")
        if self.crater is not None:
            present.append("crater")
        if self.sar:
            present.append("sar")
        if self.vlm:
            present.append("vlm")
        return tuple(present)

    def has(self, modality: str) -> bool:
        return modality in self.modalities

    def subset(self, modalities: tuple[str, ...] | list[str]) -> "Dataset":
        """Dataset restricted to the named modalities (others dropped)."""
        keep = set(modalities)
        unknown = keep - set(MODALITIES)
        if unknown:
            raise DatasetError(f"unknown modalities: {sorted(unknown)}")
        return Dataset(
            seismic=self.seismic if "seismic" in keep else None,
            crater=self.crater if "crater" in keep else None,
            sar=self.sar if "sar" in keep else (),
            vlm=self.vlm if "vlm" in keep else (),
            meta=dict(self.meta),
        )

    def drop(self, modality: str) -> "Dataset":
        keep = [m for m in self.modalities if m != modality]
        return self.subset(keep)


def _clamped(box: SarBox) -> SarBox:
    d = min(max(box.damage_pct, DAMAGE_CLAMP_LO), DAMAGE_CLAMP_HI)
    return SarBox(box.range_m, d)


def dataset_to_dict(ds: Dataset) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if ds.seismic is not None:
        out["seismic"] = {"mw_obs": ds.seismic.mw_obs}
    if ds.crater is not None:
        out["crater"] = {"width_m": ds.crater.width_m,
                         "length_m": ds.crater.length_m}
    if ds.sar:
        out["sar"] = [{"range_m": b.range_m, "damage_pct": b.damage_pct}
                      for b in ds.sar]
    if ds.vlm:
        out["vlm"] = [{"range_m": v.range_m, "pmf": [float(q) for q in v.pmf]}
                      for v in ds.vlm]
    if ds.meta:
        out["meta"] = ds.meta
    return out


def dataset_from_dict(payload: dict[str, Any]) -> Dataset:
    if not isinstance(payload, dict):
        raise DatasetError("dataset must be a JSON object at top level")
    allowed = set(MODALITIES) | {"meta"}
    unknown = set(payload) - allowed
    if unknown:
        raise DatasetError(f"unknown top-level keys: {sorted(unknown)}")

    seismic = None
    if payload.get("seismic") is not None:
        block = payload["seismic"]
        if not isinstance(block, dict) or "mw_obs" not in block:
            raise DatasetError("seismic block must be an object with mw_obs")
        seismic = SeismicObs(block["mw_obs"])

    crater = None
    if payload.get("crater") is not None:
        block = payload["crater"]
        if not isinstance(block, dict) or {"width_m", "length_m"} - set(block):
            raise DatasetError("crater block must contain width_m and length_m")
        crater = CraterObs(block["width_m"], block["length_m"])

    sar = []
    for i, rec in enumerate(payload.get("sar") or []):
        if not isinstance(rec, dict) or {"range_m", "damage_pct"} - set(rec):
            raise DatasetError(f"sar[{i}] must contain range_m and damage_pct")
        sar.append(_clamped(SarBox(rec["range_m"], rec["damage_pct"])))

    vlm = []
    for i, rec in enumerate(payload.get("vlm") or []):
        if not isinstance(rec, dict) or {"range_m", "pmf"} - set(rec):
            raise DatasetError(f"vlm[{i}] must contain range_m and pmf")
        vlm.append(VlmRecord(rec["range_m"], np.asarray(rec["pmf"], dtype=float)))

    meta = payload.get("meta") or {}
    if not isinstance(meta, dict):
        raise DatasetError("meta must be an object")

    if seismic is None and crater is None and not sar and not vlm:
        raise DatasetError("dataset contains no modality")
    return Dataset(seismic=seismic, crater=crater, sar=tuple(sar),
                   vlm=tuple(vlm), meta=meta)


def load_dataset(path: str) -> Dataset:
    """Read and validate the documented JSON dataset schema."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"dataset file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DatasetError(f"parse error in {path} at line {exc.lineno}: {exc.msg}")
    return dataset_from_dict(payload)


def save_dataset(ds: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(ds), fh, indent=2)
        fh.write("\n")


def beirut_summary_dataset() -> Dataset:
    """Bundled two-modality summary of the 2020 Port of Beirut event.

    Carries the published scalar observations only (moment magnitude and
    the fitted crater ellipse axes); per-box SAR and per-image VLM records
    are not publicly available, so those lists are empty here and full
    four-modality runs use the synthetic generator instead.
    """
    return Dataset(
        seismic=SeismicObs(4.50),
        crater=CraterObs(width_m=46.7, length_m=108.1),
        meta={
            "label": "beirut-2020-summary",
            "epicenter": {"lat": 33.9016, "lon": 35.5195},
        },
    )
