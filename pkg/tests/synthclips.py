"""Procedural clean test clips: smooth backgrounds with moving shapes.

Gives training-scale tests real temporal structure (objects translate between
frames) without shipping any image assets.
"""

import numpy as np

from videodehaze.frames import Frame, FrameSequence


def make_clean_clip(seed: int, n_frames: int, height: int, width: int,
                    clip_id: str = "") -> FrameSequence:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    # smooth background: a few low-frequency colour gradients
    background = np.zeros((height, width, 3))
    for c in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        background[:, :, c] = 0.5 + 0.25 * np.sin(2 * np.pi * fy * yy / height + phase[0]) \
            * np.cos(2 * np.pi * fx * xx / width + phase[1])

    # moving discs with per-clip colours and velocities
    n_shapes = 4
    centers = rng.uniform(0, 1, size=(n_shapes, 2)) * [height, width]
    velocity = rng.uniform(-2.0, 2.0, size=(n_shapes, 2))
    radius = rng.uniform(0.1, 0.25, size=n_shapes) * min(height, width)
    colors = rng.uniform(0.05, 0.95, size=(n_shapes, 3))

    frames = []
    for t in range(n_frames):
        img = background.copy()
        for s in range(n_shapes):
            cy = (centers[s, 0] + velocity[s, 0] * t) % height
            cx = (centers[s, 1] + velocity[s, 1] * t) % width
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius[s] ** 2
            img[mask] = colors[s]
        frames.append(Frame(np.clip(img, 0.0, 1.0).astype(np.float32)))
    return FrameSequence(tuple(frames), clip_id=clip_id or f"clip{seed}")
