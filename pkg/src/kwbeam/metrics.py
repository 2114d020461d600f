"""
Signal-level scores.

sdri(): frequency-averaged, mask-weighted desired/undesired power ratio
minus the same ratio without the mask. output_sir(): beamformer SIR gain,
measured by filtering the clean target and interference separately.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .beamformer import apply_filter
from .errors import ValidationError

POWER_FLOOR = 1e-20

__all__ = ["SdriReport", "SirResult", "sdri", "output_sir", "aggregate",
           "write_report_csv", "write_report_json", "MASK_TYPES"]

MASK_TYPES = ("m_k", "ibm_k", "m_n", "ibm_n")


@dataclass
class SdriReport:
    sdri_db: float
    xi_db: float
    per_bin: np.ndarray
    excluded_bins: list = field(default_factory=list)

    def to_dict(self):
        return {"sdri_db": self.sdri_db, "xi_db": self.xi_db,
                "per_bin": [None if np.isnan(v) else float(v)
                            for v in self.per_bin],
                "excluded_bins": list(self.excluded_bins)}


def sdri(mask, desired, undesired, frames=None, mask_power=1):
    """
    Arguments:
        mask: T x F in [0, 1]
        desired, undesired: T x F spectrograms (complex or magnitude)
        frames: frame indices to sum over (all frames when None)
        mask_power: 1 uses the mask linearly in the power sums; 2 squares it
    Return:
        SdriReport; bins whose power sums fall below 1e-20 x the peak power
        are left out of the frequency average and listed in excluded_bins
    """
    mask = np.asarray(mask, dtype=np.float64)
    desired = np.asarray(desired)
    undesired = np.asarray(undesired)
    if not (mask.shape == desired.shape == undesired.shape):
        raise ValidationError(
            f"shape mismatch: mask {mask.shape}, desired {desired.shape}, "
            f"undesired {undesired.shape}")
    if frames is None:
        frames = np.arange(mask.shape[0])
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ValidationError("empty frame region")

    m = mask[frames] ** mask_power
    px = np.abs(desired[frames]) ** 2
    pn = np.abs(undesired[frames]) ** 2
    num_masked = (m * px).sum(axis=0)
    den_masked = (m * pn).sum(axis=0)
    num = px.sum(axis=0)
    den = pn.sum(axis=0)

    floor = POWER_FLOOR * max(px.max(), pn.max())
    bad = ((den_masked < floor) | (den < floor)
           | (num_masked < floor) | (num < floor))
    if floor == 0 or bad.all():
        raise ValidationError("every frequency bin excluded (no signal power)")
    keep = ~bad
    masked_db = 10 * np.log10(num_masked[keep] / den_masked[keep])
    xi_bins = 10 * np.log10(num[keep] / den[keep])
    per_bin = np.full(mask.shape[1], np.nan)
    per_bin[keep] = masked_db - xi_bins
    return SdriReport(float(np.mean(per_bin[keep])), float(np.mean(xi_bins)),
                      per_bin, np.flatnonzero(bad).tolist())


@dataclass
class SirResult:
    sir_in_db: float
    sir_out_db: float
    improvement_db: float


def output_sir(gamma, clean_target, clean_interf, frames=None):
    """
    Arguments:
        gamma: BeamformerFilter or F x C weights
        clean_target, clean_interf: C x T x F spectrograms of the components
    Return:
        SirResult; input SIR is measured on channel 1
    """
    clean_target = np.asarray(clean_target)
    clean_interf = np.asarray(clean_interf)
    if clean_target.shape != clean_interf.shape:
        raise ValidationError("target and interference spectrograms differ")
    if frames is None:
        frames = np.arange(clean_target.shape[1])
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ValidationError("empty frame region")
    out_t = apply_filter(gamma, clean_target)[frames]
    out_i = apply_filter(gamma, clean_interf)[frames]
    p_in_t = np.sum(np.abs(clean_target[0, frames]) ** 2)
    p_in_i = np.sum(np.abs(clean_interf[0, frames]) ** 2)
    p_out_t = np.sum(np.abs(out_t) ** 2)
    p_out_i = np.sum(np.abs(out_i) ** 2)
    if p_in_i == 0 or p_out_i == 0:
        raise ValidationError("zero interference power; SIR undefined")
    if p_in_t == 0 or p_out_t == 0:
        raise ValidationError("zero target power; SIR undefined")
    sir_in = 10 * np.log10(p_in_t / p_in_i)
    sir_out = 10 * np.log10(p_out_t / p_out_i)
    return SirResult(float(sir_in), float(sir_out), float(sir_out - sir_in))


def aggregate(rows, keys):
    """Mean and population std of each key over a list of dict rows."""
    summary = {}
    for key in keys:
        values = np.array([r[key] for r in rows if r.get(key) is not None],
                          dtype=np.float64)
        if values.size:
            summary[key] = {"mean": float(values.mean()),
                            "std": float(values.std()),
                            "count": int(values.size)}
    return summary


def write_report_csv(rows, path):
    """One line per (scene, mask type)."""
    fields = ["scene_id", "mask_type", "sdri_db", "xi_db", "sir_improvement_db"]
    with open(path, "w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fields})


def write_report_json(report, path):
    def default(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        if hasattr(obj, "__dataclass_fields__"):
            return asdict(obj)
        raise TypeError(f"cannot serialise {type(obj)}")

    with open(path, "w") as fp:
        json.dump(report, fp, indent=2, default=default)
