"""PPM rendering: cluster maps, displacement arrows, mask overlays.

Binary PPM (P6) keeps outputs dependency-free and byte-stable, so runs can
be diffed directly.
"""

import numpy as np

# 32 visually distinct colors; instance id k > 0 uses entry (k-1) mod 32
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
    (255, 255, 255), (255, 105, 97), (119, 221, 119), (174, 198, 207),
    (255, 179, 71), (203, 153, 201), (100, 149, 237), (189, 183, 107),
    (143, 188, 143), (216, 191, 216), (188, 143, 143), (46, 139, 87),
], dtype=np.uint8)


def write_ppm(path, rgb):
    """Write an [H,W,3] uint8 array as binary PPM."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError("expected an [H,W,3] uint8 array")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError("not a binary PPM file")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("unsupported PPM depth")
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return data.reshape(h, w, 3).copy()


def render_labels(labels):
    """Instance labeling to a color image: background black, fixed palette."""
    arr = np.asarray(getattr(labels, "labels", labels))
    rgb = np.zeros((*arr.shape, 3), dtype=np.uint8)
    fg = arr > 0
    rgb[fg] = PALETTE[(arr[fg] - 1) % len(PALETTE)]
    return rgb


def grayscale_base(image, lo=0.0, hi=1.0):
    """Image channel to a dim gray backdrop for overlays."""
    arr = np.asarray(getattr(image, "data", image))
    if arr.ndim == 3:
        arr = arr[0]
    scaled = np.clip((arr - lo) / (hi - lo + 1e-12), 0.0, 1.0)
    gray = (scaled * 140).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def draw_line(rgb, y0, x0, y1, x1, color):
    """Integer line rasterization, clipped at the image border."""
    h, w = rgb.shape[:2]
    y0, x0, y1, x1 = int(round(y0)), int(round(x0)), int(round(y1)), int(round(x1))
    steps = max(abs(y1 - y0), abs(x1 - x0), 1)
    for t in range(steps + 1):
        y = y0 + (y1 - y0) * t // steps
        x = x0 + (x1 - x0) * t // steps
        if 0 <= y < h and 0 <= x < w:
            rgb[y, x] = color
    return rgb


def render_arrows(image, displacement, stride=4, color=(255, 60, 60)):
    """Overlay displacement vectors as line segments from each sampled pixel.

    Each arrow runs from pixel u to u + d(u); pixels where the displacement
    ends mark the location the embedding voted for.
    """
    disp = np.asarray(getattr(displacement, "data", displacement))
    if disp.ndim != 3 or disp.shape[0] != 2:
        raise ValueError("expected a [2,H,W] displacement field")
    rgb = grayscale_base(image)
    h, w = disp.shape[1:]
    col = np.array(color, dtype=np.uint8)
    for y in range(0, h, stride):
        for x in range(0, w, stride):
            dx, dy = disp[0, y, x], disp[1, y, x]
            draw_line(rgb, y, x, y + dy, x + dx, col)
    return rgb


def render_mask_overlay(image, mask, color=(0, 200, 80), alpha=0.6):
    """Tint masked pixels on top of the grayscale image."""
    rgb = grayscale_base(image).astype(np.float64)
    m = np.asarray(mask, dtype=bool)
    rgb[m] = (1 - alpha) * rgb[m] + alpha * np.array(color, dtype=np.float64)
    return rgb.astype(np.uint8)
