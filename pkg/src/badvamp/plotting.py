"""Figures for experiment summaries. matplotlib is imported lazily and runs headless."""
from pathlib import Path

import numpy as np

# which summary column goes on the x axis, and which medians to draw
LAYOUT = {
    "csmu_sweep_mn": ("m_ratio", ("nmse_b_db", "nmse_c_db"), ("oracle_b_db", "oracle_c_db")),
    "csmu_sweep_mu": ("mu", ("nmse_b_db", "nmse_c_db"), ("oracle_b_db", "oracle_c_db")),
    "dl_cond": ("kappa", ("nmse_A_db", "nmse_X_db"), ("oracle_A_db", "oracle_X_db")),
}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _curves(ax, rows, xkey, metric, oracle=None):
    xs = np.array([float(r[xkey]) for r in rows])
    order = np.argsort(xs)
    ys = np.array([r[f"median_{metric}"] for r in rows], dtype=float)
    ax.plot(xs[order], ys[order], "o-", label="BAd-VAMP")
    if oracle is not None:
        yo = np.array([r[f"median_{oracle}"] for r in rows], dtype=float)
        ax.plot(xs[order], yo[order], "k--", label="oracle")
    ax.set_xlabel(xkey)
    ax.set_ylabel(f"median {metric.replace('_db', '')} [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)


def _heatmap(fig, ax, rows, xkey, ykey, zkey, label):
    xs = sorted({r[xkey] for r in rows})
    ys = sorted({r[ykey] for r in rows})
    Z = np.full((len(ys), len(xs)), np.nan)
    for r in rows:
        Z[ys.index(r[ykey]), xs.index(r[xkey])] = r[zkey]
    im = ax.imshow(Z, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(xs)), [str(x) for x in xs])
    ax.set_yticks(range(len(ys)), [str(y) for y in ys])
    ax.set_xlabel(xkey)
    ax.set_ylabel(ykey)
    fig.colorbar(im, ax=ax, label=label)


def render(experiment, summary_rows, out_path):
    """Draw one figure for a summary table and save it as PNG; returns the list of paths."""
    plt = _pyplot()
    out_path = Path(out_path).with_suffix(".png")
    rows = list(summary_rows)
    if not rows:
        return []
    if experiment in LAYOUT:
        xkey, metrics, oracles = LAYOUT[experiment]
        fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.4))
        for ax, m, o in zip(np.atleast_1d(axes), metrics, oracles):
            _curves(ax, rows, xkey, m, o)
    elif experiment == "selfcal_grid":
        fig, ax = plt.subplots(figsize=(4.8, 3.8))
        _heatmap(fig, ax, rows, "K", "Q", "success_rate", "success rate")
    elif experiment == "dl_phase":
        modes = sorted({r["mode"] for r in rows})
        fig, axes = plt.subplots(1, len(modes), figsize=(4.8 * len(modes), 3.8), squeeze=False)
        for ax, mode in zip(axes[0], modes):
            sub = [r for r in rows if r["mode"] == mode]
            if len({r["N"] for r in sub}) > 1 or len({r["L"] for r in sub}) > 1:
                _heatmap(fig, ax, sub, "N", "L", "median_nmse_A_db", "median NMSE(A) [dB]")
            else:
                ax.bar([mode], [sub[0]["median_nmse_A_db"]])
                ax.set_ylabel("median NMSE(A) [dB]")
            ax.set_title(mode)
    else:
        raise ValueError(f"no figure layout for {experiment!r}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return [out_path]
