"""Report figures written to files (non-interactive backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_loss_curve(iterations, losses, path, splats=None, title="training loss"):
    """Loss against iteration, with the splat count on a twin axis."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(iterations, losses, lw=1.0, color="tab:blue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    if np.all(np.asarray(losses) > 0):
        ax.set_yscale("log")
    ax.set_title(title)
    if splats is not None:
        ax2 = ax.twinx()
        ax2.plot(iterations, splats, lw=1.0, color="tab:orange")
        ax2.set_ylabel("splats", color="tab:orange")
    return _save(fig, path)


def plot_trait_scatter(truth, estimates, path, units="cm"):
    """Estimated against true value, one panel per trait.

    ``truth`` and ``estimates`` map trait name to equal-length sequences.
    """
    names = list(truth)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        y = np.asarray(truth[name], dtype=float)
        y_hat = np.asarray(estimates[name], dtype=float)
        lo = min(y.min(), y_hat.min())
        hi = max(y.max(), y_hat.max())
        pad = 0.05 * (hi - lo or 1.0)
        ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=0.8)
        ax.scatter(y, y_hat, s=16)
        ax.set_xlabel(f"true {name} ({units})")
        ax.set_ylabel(f"estimated {name} ({units})")
        ax.set_aspect("equal")
    return _save(fig, path)


def plot_eval_views(names, preds, targets, scores, path):
    """Prediction above target for each view, titled with its PSNR/SSIM.

    ``scores`` is a list of (psnr, ssim).
    """
    n = len(names)
    fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.6), squeeze=False)
    for k in range(n):
        axes[0, k].imshow(np.clip(preds[k], 0, 1))
        axes[1, k].imshow(np.clip(targets[k], 0, 1))
        p, s = scores[k]
        axes[0, k].set_title(f"{names[k]}\n{p:.1f} dB / {s:.3f}", fontsize=8)
        for ax in axes[:, k]:
            ax.set_xticks([])
            ax.set_yticks([])
    axes[0, 0].set_ylabel("render")
    axes[1, 0].set_ylabel("target")
    return _save(fig, path)
