"""Report figures written next to the CSV/JSON outputs."""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MASK_TYPES

MASK_LABELS = {"m_k": "$m^{(k)}$", "ibm_k": "IBM$^{(k)}$",
               "m_n": "$m^{(n)}$", "ibm_n": "IBM$^{(n)}$"}

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_sdri_summary(summary, path):
    """Bar chart of mean +- std SDRi for the four mask types."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        keys = [k for k in MASK_TYPES if k in summary]
        means = [summary[k]["mean"] for k in keys]
        stds = [summary[k]["std"] for k in keys]
        colors = ["#4c72b0", "#a1c9f4", "#dd8452", "#ffb482"][: len(keys)]
        ax.bar(range(len(keys)), means, yerr=stds, capsize=3, color=colors)
        ax.set_xticks(range(len(keys)))
        ax.set_xticklabels([MASK_LABELS[k] for k in keys])
        ax.axhline(0, color="k", lw=0.6)
        ax.set_ylabel("SDRi (dB)")
        fig.savefig(path)
        plt.close(fig)


def plot_sir_improvements(rows, path):
    """Per-scene output SIR gain of estimated-mask vs. IBM filters."""
    est = {r["scene_id"]: r["sir_improvement_db"] for r in rows
           if r["mask_type"] == "m_k"}
    ibm = {r["scene_id"]: r["sir_improvement_db"] for r in rows
           if r["mask_type"] == "ibm_k"}
    ids = sorted(set(est) & set(ibm))
    x = np.array([ibm[i] for i in ids])
    y = np.array([est[i] for i in ids])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.4))
        ax.scatter(x, y, s=10)
        if ids:
            lo = min(0.0, x.min(), y.min())
            hi = max(x.max(), y.max())
            ax.plot([lo, hi], [lo, hi], "k--", lw=0.6)
        ax.axhline(0, color="grey", lw=0.5)
        ax.set_xlabel("IBM MVDR SIR gain (dB)")
        ax.set_ylabel("estimated-mask MVDR SIR gain (dB)")
        fig.savefig(path)
        plt.close(fig)


def plot_mask_example(example, path):
    """Mixture magnitude and the four keyword-region masks of one scene."""
    panels = [("mixture (dB)", 20 * np.log10(example["mixture_mag"] + 1e-8)),
              (MASK_LABELS["m_k"], example["m_k"]),
              (MASK_LABELS["m_n"], example["m_n"]),
              (MASK_LABELS["ibm_k"], example["ibm_k"]),
              (MASK_LABELS["ibm_n"], example["ibm_n"])]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(12, 2.6),
                                 sharey=True)
        for ax, (title, data) in zip(axes, panels):
            kwargs = {} if title.startswith("mixture") else {"vmin": 0,
                                                            "vmax": 1}
            ax.imshow(np.asarray(data).T, origin="lower", aspect="auto",
                      cmap="magma", **kwargs)
            ax.set_title(title)
            ax.set_xlabel("frame")
        axes[0].set_ylabel("bin")
        fig.savefig(path)
        plt.close(fig)


def plot_loss(losses, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean BCE per frame")
        fig.savefig(path)
        plt.close(fig)
