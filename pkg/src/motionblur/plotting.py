"""Report figures for the deblurring command (rendered off-screen)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _show(ax, img, title):
    img = np.clip(img, 0.0, 1.0)
    if img.ndim == 3 and img.shape[2] == 1:
        ax.imshow(img[..., 0], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    else:
        ax.imshow(img, interpolation="nearest")
    ax.set_title(title, fontsize=9)
    ax.set_axis_off()


def flow_to_rgb(flow, max_mag=None):
    """Hue encodes direction, value encodes magnitude (normalized by ``max_mag``)."""
    u, v = flow[..., 0], flow[..., 1]
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = max(float(mag.max()), 1e-12)
    hue = (np.arctan2(v, u) / (2 * np.pi)) % 1.0
    hsv = np.stack([hue, np.ones_like(hue), np.clip(mag / max_mag, 0, 1)], axis=2)
    return matplotlib.colors.hsv_to_rgb(hsv)


def plot_loss_history(history, path, level_histories=None):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if level_histories:
        offset = 0
        for lvl, hist in enumerate(level_histories):
            xs = np.arange(offset, offset + len(hist))
            ax.plot(xs, [r.objective for r in hist], lw=1.2, label=f"level {lvl}")
            offset += len(hist)
        ax.legend(fontsize=8, frameon=False)
    else:
        ax.plot([r.objective for r in history], lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_panels(state, path):
    """Blurry inputs, recovered latents and both flows in one figure."""
    fig, axes = plt.subplots(2, 3, figsize=(8, 5.4))
    _show(axes[0, 0], state.blur_a, "blur a")
    _show(axes[0, 1], state.I_a, "latent a")
    _show(axes[1, 0], state.blur_b, "blur b")
    _show(axes[1, 1], state.I_b, "latent b")
    top = max(float(np.hypot(*np.moveaxis(f, 2, 0)).max()) for f in (state.flow_ab, state.flow_ba))
    axes[0, 2].imshow(flow_to_rgb(state.flow_ab, top or None), interpolation="nearest")
    axes[0, 2].set_title("flow a->b", fontsize=9)
    axes[1, 2].imshow(flow_to_rgb(state.flow_ba, top or None), interpolation="nearest")
    axes[1, 2].set_title("flow b->a", fontsize=9)
    for ax in axes[:, 2]:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
