"""Synthetic particle images and window cross-correlation displacement recovery.

Coordinates are image coordinates in mm: x to the right (the insertion
direction), y downward, origin at the top-left corner of the field of
view. Pixel (row i, col j) covers [j, j+1) x [i, i+1) in pixel units, so
its centre sits at (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf

MAX_GREY = 65535


@dataclass(frozen=True)
class OpticsSpec:
    field_of_view: tuple = (27.58, 39.42)  # (height, width) mm
    resolution: float = 27.4  # um / pixel
    particle_diameter_px: float = 2.0  # e^-2 intensity diameter
    particle_density: float = 0.02  # particles / pixel^2
    noise_std: float = 1.0  # grey levels
    peak_intensity: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if not self.particle_density > 0:
            raise ValueError("particle_density must be > 0")
        if not self.particle_diameter_px > 0 or self.noise_std < 0:
            raise ValueError("particle diameter must be > 0 and noise_std >= 0")
        h, w = self.field_of_view
        if not (h > 0 and w > 0):
            raise ValueError("field of view must be positive")

    @property
    def mm_per_px(self) -> float:
        return self.resolution * 1e-3

    @property
    def shape(self) -> tuple[int, int]:
        h, w = self.field_of_view
        return int(round(h / self.mm_per_px)), int(round(w / self.mm_per_px))


@dataclass(frozen=True)
class ImageFrame:
    intensities: np.ndarray  # uint16, (height, width)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


def seed_particles(opts: OpticsSpec) -> np.ndarray:
    """Uniformly scattered particle positions (mm), ``(n, 2)`` as (x, y)."""
    h_px, w_px = opts.shape
    n = int(round(opts.particle_density * h_px * w_px))
    rng = np.random.default_rng([opts.seed, 0x5EED])
    px = rng.random((n, 2)) * np.array([w_px, h_px])
    return px * opts.mm_per_px


def synth_frame(particles, opts: OpticsSpec, frame_index: int = 0, mask=None) -> ImageFrame:
    """Render particles as pixel-integrated Gaussian spots plus sensor noise.

    ``mask`` (bool image) blanks pixels where no seeded material exists,
    e.g. the probe footprint. Noise is drawn from a generator keyed on
    ``(opts.seed, frame_index)``.
    """
    h, w = opts.shape
    img = np.zeros(h * w)
    pts = np.asarray(particles, dtype=float).reshape(-1, 2) / opts.mm_per_px
    if pts.size:
        sigma = opts.particle_diameter_px / 4.0
        r = int(math.ceil(3.0 * sigma)) + 1
        inside = (pts[:, 0] > -r) & (pts[:, 0] < w + r) & (pts[:, 1] > -r) & (pts[:, 1] < h + r)
        pts = pts[inside]
        offs = np.arange(-r, r + 1)
        cx = np.floor(pts[:, 0]).astype(int)[:, None] + offs
        cy = np.floor(pts[:, 1]).astype(int)[:, None] + offs
        s = math.sqrt(2.0) * sigma
        # fraction of the spot's energy landing in each pixel row/column
        ex = 0.5 * (erf((cx + 1 - pts[:, :1]) / s) - erf((cx - pts[:, :1]) / s))
        ey = 0.5 * (erf((cy + 1 - pts[:, 1:]) / s) - erf((cy - pts[:, 1:]) / s))
        amp = opts.peak_intensity * 2.0 * math.pi * sigma**2
        vals = amp * ey[:, :, None] * ex[:, None, :]
        yy = np.broadcast_to(cy[:, :, None], vals.shape)
        xx = np.broadcast_to(cx[:, None, :], vals.shape)
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        img += np.bincount((yy[ok] * w + xx[ok]), weights=vals[ok], minlength=h * w)
    img = img.reshape(h, w)
    if mask is not None:
        img[np.asarray(mask, dtype=bool)] = 0.0
    if opts.noise_std > 0:
        rng = np.random.default_rng([opts.seed, int(frame_index)])
        img += rng.normal(0.0, opts.noise_std, img.shape)
    return ImageFrame(np.clip(np.rint(img), 0, MAX_GREY).astype(np.uint16))


@dataclass(frozen=True)
class GriddedField:
    """Displacement samples (mm) on a rectilinear grid, bilinear in between.

    ``u`` has shape ``(len(y), len(x), 2)``; outside the grid the nearest
    edge value is used.
    """

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return _bilinear(self.x, self.y, self.u, pts[:, 0], pts[:, 1])


def _bilinear(xg, yg, values, xq, yq, valid=None):
    """Bilinear interpolation on a rectilinear grid with edge clamping.

    With ``valid`` given, invalid corners are dropped and the remaining
    weights renormalised; points with no valid corner come back NaN.
    """
    xg = np.asarray(xg, dtype=float)
    yg = np.asarray(yg, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = v[..., None]

    def locate(g, q):
        if g.size == 1:
            z = np.zeros(q.shape, dtype=int)
            return z, z, np.zeros(q.shape)
        q = np.clip(q, g[0], g[-1])
        i = np.clip(np.searchsorted(g, q, side="right") - 1, 0, g.size - 2)
        f = (q - g[i]) / (g[i + 1] - g[i])
        return i, i + 1, f

    i0, i1, fx = locate(xg, np.asarray(xq, dtype=float))
    j0, j1, fy = locate(yg, np.asarray(yq, dtype=float))
    corners = [(j0, i0, (1 - fx) * (1 - fy)), (j0, i1, fx * (1 - fy)),
               (j1, i0, (1 - fx) * fy), (j1, i1, fx * fy)]
    acc = np.zeros(fx.shape + v.shape[-1:])
    wsum = np.zeros(fx.shape)
    for j, i, wgt in corners:
        if valid is not None:
            wgt = np.where(valid[j, i], wgt, 0.0)
        val = np.nan_to_num(v[j, i])
        acc += wgt[..., None] * val
        wsum += wgt
    if valid is None:
        return acc.squeeze(-1) if values.ndim == 2 else acc
    with np.errstate(invalid="ignore", divide="ignore"):
        out = acc / wsum[..., None]
    out[wsum <= 1e-12] = np.nan
    return out.squeeze(-1) if np.asarray(values).ndim == 2 else out


def warp_particles(particles, field: Callable) -> np.ndarray:
    """Displace each particle by ``field`` evaluated at its position."""
    p = np.asarray(particles, dtype=float).reshape(-1, 2)
    if p.size == 0:
        return p.copy()
    d = np.asarray(field(p), dtype=float).reshape(p.shape)
    if not np.all(np.isfinite(d)):
        raise ValueError("displacement field is not finite at every particle")
    return p + d


@dataclass(frozen=True)
class VectorField:
    x: np.ndarray  # window centres, px (1-D, columns)
    y: np.ndarray  # window centres, px (1-D, rows)
    dx: np.ndarray  # px, (len(y), len(x)); NaN where invalid
    dy: np.ndarray
    quality: np.ndarray
    valid: np.ndarray
    mm_per_px: float

    @property
    def dx_mm(self) -> np.ndarray:
        return self.dx * self.mm_per_px

    @property
    def dy_mm(self) -> np.ndarray:
        return self.dy * self.mm_per_px

    def sample(self, pts_px) -> np.ndarray:
        """Bilinear displacement (px) at points given in pixel units."""
        pts = np.asarray(pts_px, dtype=float).reshape(-1, 2)
        u = np.stack([self.dx, self.dy], axis=-1)
        return _bilinear(self.x, self.y, u, pts[:, 0], pts[:, 1], valid=self.valid)


def _window_grid(size, window, step, radius):
    start = radius
    stop = size - window - radius
    if stop < start:
        return np.array([], dtype=int)
    return np.arange(start, stop + 1, step)


def _box_sums(stack, w):
    """Sums over every w x w sub-window of each image in ``stack``."""
    c = np.cumsum(np.cumsum(stack, axis=1), axis=2)
    c = np.pad(c, ((0, 0), (1, 0), (1, 0)))
    return c[:, w:, w:] - c[:, :-w, w:] - c[:, w:, :-w] + c[:, :-w, :-w]


def _gauss3v(cm, c0, cp):
    """Three-point Gaussian peak offset, parabolic where logs are undefined."""
    with np.errstate(invalid="ignore", divide="ignore"):
        pos = (cm > 0) & (c0 > 0) & (cp > 0)
        lm = np.log(np.where(pos, cm, 1.0))
        l0 = np.log(np.where(pos, c0, 1.0))
        lp = np.log(np.where(pos, cp, 1.0))
        den_g = 2.0 * (lm - 2.0 * l0 + lp)
        g = np.where(pos & (den_g < 0), (lm - lp) / np.where(den_g < 0, den_g, -1.0), np.nan)
        cm_f = np.where(np.isfinite(cm), cm, 0.0)
        den_p = 2.0 * (cm_f - 2.0 * c0 + cp)
        par = np.where(den_p < 0, (cm_f - cp) / np.where(den_p < 0, den_p, -1.0), 0.0)
    out = np.where(np.isfinite(g), g, par)
    return np.clip(out, -1.0, 1.0)


def compute_field(
    f0: ImageFrame,
    f1: ImageFrame,
    window: int = 32,
    overlap: float = 0.5,
    search_radius: int | None = None,
    mask=None,
    mm_per_px: float = OpticsSpec().mm_per_px,
    roi=None,
    chunk: int = 256,
) -> VectorField:
    """Windowed zero-normalised cross-correlation between two frames.

    For each interrogation window of ``f0`` the correlation against ``f1``
    is evaluated for every integer shift within ``search_radius`` (default
    ``window // 4``). The integer peak is refined with an independent
    three-point Gaussian fit in x and y. Quality is
    ``(peak - second peak) / peak`` with the second peak taken outside the
    primary's 5x5 neighbourhood. Windows that are flat or touch ``mask``
    are marked invalid. ``roi = (points_px, half_width_px)`` restricts the
    work to windows centred near the given points; the rest stay invalid.
    """
    if window < 16:
        raise ValueError("window must be >= 16 px")
    if not 0 <= overlap <= 0.75:
        raise ValueError("overlap must lie in [0, 0.75]")
    a = f0.intensities.astype(float)
    b = f1.intensities.astype(float)
    if a.shape != b.shape:
        raise ValueError("frames differ in size")
    r = window // 4 if search_radius is None else int(search_radius)
    step = max(1, int(round(window * (1 - overlap))))
    rows = _window_grid(a.shape[0], window, step, r)
    cols = _window_grid(a.shape[1], window, step, r)
    ny, nx = rows.size, cols.size
    dx = np.full((ny, nx), np.nan)
    dy = np.full((ny, nx), np.nan)
    quality = np.zeros((ny, nx))
    valid = np.zeros((ny, nx), dtype=bool)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    yy, xx = np.meshgrid(rows, cols, indexing="ij")
    yy, xx = yy.ravel(), xx.ravel()
    todo = np.ones(yy.size, dtype=bool)
    if mask is not None:
        # integral image of the mask: any masked pixel inside a window
        ii = np.pad(np.cumsum(np.cumsum(mask, 0), 1), ((1, 0), (1, 0)))
        hits = ii[yy + window, xx + window] - ii[yy, xx + window] - ii[yy + window, xx] + ii[yy, xx]
        todo &= hits == 0
    if roi is not None:
        pts = np.asarray(roi[0], dtype=float).reshape(-1, 2)
        cx, cy = xx + window / 2.0, yy + window / 2.0
        near = np.zeros(yy.size, dtype=bool)
        for px, py in pts:
            near |= (np.abs(cx - px) <= roi[1]) & (np.abs(cy - py) <= roi[1])
        todo &= near
    idx_all = np.flatnonzero(todo)

    n = window * window
    side = 2 * r + 1
    iw = np.arange(window)
    isr = np.arange(window + 2 * r)
    flat_dx = dx.ravel()
    flat_dy = dy.ravel()
    flat_q = quality.ravel()
    flat_v = valid.ravel()

    def windows(img, y0, x0, span):
        return img[y0[:, None, None] + span[None, :, None], x0[:, None, None] + span[None, None, :]]

    def zncc_batch(p, q):
        p = p - p.mean(axis=(1, 2), keepdims=True)
        q = q - q.mean(axis=(1, 2), keepdims=True)
        den = np.sqrt(np.sum(p * p, axis=(1, 2)) * np.sum(q * q, axis=(1, 2)))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, np.sum(p * q, axis=(1, 2)) / den, -np.inf)

    for s0 in range(0, idx_all.size, chunk):
        idx = idx_all[s0 : s0 + chunk]
        ys, xs = yy[idx], xx[idx]
        T = windows(a, ys, xs, iw)
        S = windows(b, ys - r, xs - r, isr)
        T = T - T.mean(axis=(1, 2), keepdims=True)
        t_norm = np.sqrt(np.sum(T * T, axis=(1, 2)))
        num = fftconvolve(S, T[:, ::-1, ::-1], mode="valid", axes=(1, 2))
        s1 = _box_sums(S, window)
        s2 = _box_sums(S * S, window)
        var = np.maximum(s2 - s1 * s1 / n, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = num / (t_norm[:, None, None] * np.sqrt(var))
        corr = np.where(np.isfinite(corr), corr, -np.inf).reshape(idx.size, -1)
        best = np.argmax(corr, axis=1)
        pi, pj = np.divmod(best, side)
        rows_k = np.arange(idx.size)
        peak = corr[rows_k, best]
        ok = (t_norm > 1e-9) & np.isfinite(peak) & (peak > 0)

        c3 = corr.reshape(idx.size, side, side)
        # the lower neighbour pairs the reference window moved one pixel on
        # with the peak window, so a pure integer shift fits symmetrically
        peak_win = windows(b, ys + pi - r, xs + pj - r, iw)
        cm_y = zncc_batch(windows(a, ys + 1, xs, iw), peak_win)
        cm_x = zncc_batch(windows(a, ys, xs + 1, iw), peak_win)
        cp_y = c3[rows_k, np.minimum(pi + 1, side - 1), pj]
        cp_x = c3[rows_k, pi, np.minimum(pj + 1, side - 1)]
        sub_y = np.where((pi > 0) & (pi < side - 1), _gauss3v(cm_y, peak, cp_y), 0.0)
        sub_x = np.where((pj > 0) & (pj < side - 1), _gauss3v(cm_x, peak, cp_x), 0.0)

        # second peak outside the primary's 5x5 neighbourhood
        di = np.arange(side)
        far = (np.abs(di[None, :, None] - pi[:, None, None]) > 2) | (
            np.abs(di[None, None, :] - pj[:, None, None]) > 2)
        second = np.max(np.where(far, c3, -np.inf).reshape(idx.size, -1), axis=1)
        second = np.where(np.isfinite(second), np.maximum(second, 0.0), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.clip((peak - second) / peak, 0.0, 1.0)

        tgt = idx[ok]
        flat_dy[tgt] = (pi - r + sub_y)[ok]
        flat_dx[tgt] = (pj - r + sub_x)[ok]
        flat_q[tgt] = q[ok]
        flat_v[tgt] = True

    centers_x = cols + window / 2.0
    centers_y = rows + window / 2.0
    return VectorField(centers_x, centers_y, dx, dy, quality, valid, mm_per_px)


@dataclass(frozen=True)
class TrackSeries:
    """Cumulative displacement (mm) of a grid of tracked points over frames.

    ``disp`` has shape ``(frames, rows, cols, 2)`` with (x, y) last; frame 0
    is the reference (all zero). ``lost[r, c]`` marks points that left the
    measurable region; their traces are NaN from that frame on.
    """

    disp: np.ndarray
    start: np.ndarray  # (rows, cols, 2) mm
    lost: np.ndarray
    axial_spacing: float = 6.6
    radial_offsets: tuple = ()

    def __post_init__(self):
        if self.disp.ndim != 4 or self.disp.shape[-1] != 2:
            raise ValueError("disp must be (frames, rows, cols, 2)")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.disp.shape[1], self.disp.shape[2]

    def trace(self, row: int, col: int, axis: str = "x") -> np.ndarray:
        return self.disp[:, row - 1, col - 1, 0 if axis == "x" else 1]


def track_matrix(fields, start_mm, axial_spacing: float = 6.6, radial_offsets=(),
                 expect_shape=(5, 6)) -> TrackSeries:
    """Follow grid points through a sequence of frame-pair vector fields.

    Each point's displacement for a pair is sampled (bilinearly, from valid
    vectors only) at its current position, then added to its track.
    """
    start = np.asarray(start_mm, dtype=float)
    if expect_shape is not None and start.shape[:2] != tuple(expect_shape):
        raise ValueError(f"tracking grid must be {expect_shape[0]}x{expect_shape[1]}")
    fields = list(fields)
    n_r, n_c = start.shape[:2]
    disp = np.zeros((len(fields) + 1, n_r, n_c, 2))
    lost = np.zeros((n_r, n_c), dtype=bool)
    pos = start.reshape(-1, 2).copy()
    cum = np.zeros_like(pos)
    for k, vf in enumerate(fields):
        px = pos / vf.mm_per_px
        outside = ((px[:, 0] < vf.x[0]) | (px[:, 0] > vf.x[-1])
                   | (px[:, 1] < vf.y[0]) | (px[:, 1] > vf.y[-1]))
        d = vf.sample(px) * vf.mm_per_px
        bad = outside | ~np.all(np.isfinite(d), axis=1) | lost.ravel()
        lost |= bad.reshape(n_r, n_c)
        d[bad] = np.nan
        cum = cum + d
        pos = pos + np.nan_to_num(d)
        disp[k + 1] = cum.reshape(n_r, n_c, 2)
    return TrackSeries(disp, start, lost, axial_spacing, tuple(radial_offsets))


# --------------------------------------------------------------------------
# file formats


def write_pgm(path, frame: ImageFrame) -> None:
    """Binary 16-bit PGM (P5), big-endian samples."""
    data = np.asarray(frame.intensities, dtype=">u2")
    header = f"P5\n{frame.width} {frame.height}\n{MAX_GREY}\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> ImageFrame:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    pos += 1  # single whitespace byte after maxval
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise ValueError(f"not a binary PGM: {magic!r}")
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return ImageFrame(arr.astype(np.uint16))


def field_rows(vf: VectorField):
    """CSV rows for a vector field: x_px, y_px, dx_px, dy_px, dx_mm, dy_mm, quality, valid."""
    yield ["x_px", "y_px", "dx_px", "dy_px", "dx_mm", "dy_mm", "quality", "valid"]
    for i, yc in enumerate(vf.y):
        for j, xc in enumerate(vf.x):
            yield [xc, yc, vf.dx[i, j], vf.dy[i, j], vf.dx_mm[i, j], vf.dy_mm[i, j],
                   vf.quality[i, j], int(vf.valid[i, j])]


# --------------------------------------------------------------------------
# closed loop: simulated displacement -> images -> recovered tracks


@dataclass(frozen=True)
class ViewGeometry:
    """Where the tissue and probe sit in the camera frame (mm).

    Image x = axial position - ``x_offset``; the probe axis lies
    ``axis_from_bottom`` above the lower image edge.
    """

    x_offset: float = 18.5
    axis_from_bottom: float = 13.0
    probe_radius: float = 3.0

    def axis_y(self, opts: OpticsSpec) -> float:
        return opts.field_of_view[0] - self.axis_from_bottom

    def node_positions(self, grid, opts: OpticsSpec) -> np.ndarray:
        """Reference image positions (mm) of the tracked nodes, ``(rows, cols, 2)``."""
        st = np.asarray(grid.stations, dtype=float)
        off = np.asarray(grid.radial_offsets, dtype=float)
        # offsets are measured from the probe surface; negative is above the axis
        y = self.axis_y(opts) + np.sign(off) * (self.probe_radius + np.abs(off))
        xg, yg = np.meshgrid(st - self.x_offset, y, indexing="ij")
        return np.stack([xg, yg], axis=-1)

    def probe_mask(self, tip: float, opts: OpticsSpec) -> np.ndarray:
        h, w = opts.shape
        mpp = opts.mm_per_px
        xc = (np.arange(w) + 0.5) * mpp
        yc = (np.arange(h) + 0.5) * mpp
        inside_y = np.abs(yc - self.axis_y(opts)) <= self.probe_radius
        inside_x = xc <= tip - self.x_offset
        return inside_y[:, None] & inside_x[None, :]


def node_field(ref_pos, ux, uy) -> GriddedField:
    """Gridded displacement from node values on the reference node lattice.

    Columns are ordered by image y; rows by image x.
    """
    ref_pos = np.asarray(ref_pos, dtype=float)
    x = ref_pos[:, 0, 0]
    y = ref_pos[0, :, 1]
    u = np.stack([np.asarray(ux, dtype=float).reshape(ref_pos.shape[:2]),
                  np.asarray(uy, dtype=float).reshape(ref_pos.shape[:2])], axis=-1)
    # GriddedField wants (len(y), len(x), 2)
    return GriddedField(x=x, y=y, u=np.transpose(u, (1, 0, 2)))


def pick_frames(ux, uy, max_step_mm: float, max_gap: int | None = None) -> np.ndarray:
    """Sample indices so no node moves more than ``max_step_mm`` between frames."""
    n = ux.shape[0]
    out = [0]
    last = 0
    for k in range(1, n):
        step = np.max(np.hypot(ux[k] - ux[last], uy[k] - uy[last]))
        if step > max_step_mm or (max_gap is not None and k - last >= max_gap):
            prev = k - 1 if k - 1 > last else k
            out.append(prev)
            last = prev
    if out[-1] != n - 1:
        out.append(n - 1)
    return np.array(out)


@dataclass
class RoundTrip:
    times: np.ndarray
    tracks: TrackSeries
    sim_x: np.ndarray  # simulator (rows, cols) x-trace at frame times, (frames, rows, cols)
    sim_y: np.ndarray
    node: tuple
    rms: float
    peak: float
    n_pairs: int

    @property
    def rms_fraction(self) -> float:
        return self.rms / self.peak if self.peak > 0 else float("inf")


def roundtrip(result, opts: OpticsSpec | None = None, view: ViewGeometry | None = None,
              window: int = 32, overlap: float = 0.5, max_px_per_pair: float = 4.0,
              max_gap: int | None = 200, mask_probe: bool = True, node=(5, 3),
              frames_dir=None) -> RoundTrip:
    """Render the simulated tissue motion, recover it, and score node ``node``.

    Particles are seeded once in the reference configuration and carried by
    the node displacement field, interpolated bilinearly between nodes.
    Frames are spaced so that no node moves more than ``max_px_per_pair``.
    """
    opts = opts or OpticsSpec()
    view = view or ViewGeometry()
    grid = result.grid
    ref = view.node_positions(grid, opts)
    n_r, n_c = grid.shape
    ux = np.asarray(result.node_u_x).reshape(-1, n_r, n_c)
    uy = np.asarray(result.node_u_y).reshape(-1, n_r, n_c)
    # radial displacement already carries the side sign, matching image y
    uy_img = uy
    mpp = opts.mm_per_px
    idx = pick_frames(ux.reshape(len(ux), -1), uy_img.reshape(len(ux), -1),
                      max_px_per_pair * mpp, max_gap)
    seeds = seed_particles(opts)
    roi_half = 2.0 * window
    tip = np.asarray(result.segment_pos).max(axis=1)

    fields = []
    prev = None
    for f_no, k in enumerate(idx):
        gf = node_field(ref, ux[k], uy_img[k])
        moved = warp_particles(seeds, gf)
        mask = view.probe_mask(tip[k], opts) if mask_probe else None
        frame = synth_frame(moved, opts, frame_index=f_no, mask=mask)
        if frames_dir is not None:
            write_pgm(Path(frames_dir) / f"frame_{f_no:05d}.pgm", frame)
        if prev is not None:
            prev_frame, prev_mask = prev
            both = None
            if mask_probe:
                both = prev_mask | mask
            # windows around where the tracked points currently are
            cur = ref.reshape(-1, 2) + np.stack([ux[idx[f_no - 1]].ravel(),
                                                 uy_img[idx[f_no - 1]].ravel()], axis=1)
            fields.append(compute_field(prev_frame, frame, window, overlap, mask=both,
                                        mm_per_px=mpp, roi=(cur / mpp, roi_half)))
        prev = (frame, mask)
    tracks = track_matrix(fields, ref, axial_spacing=grid.spacing,
                          radial_offsets=grid.radial_offsets, expect_shape=None)
    r, c = node
    rec = tracks.trace(r, c, "x")
    sim = ux[idx, r - 1, c - 1]
    ok = np.isfinite(rec)
    rms = float(np.sqrt(np.mean((rec[ok] - sim[ok]) ** 2))) if ok.any() else float("inf")
    if not ok.all():
        rms = float("inf")
    return RoundTrip(times=np.asarray(result.t)[idx], tracks=tracks, sim_x=ux[idx], sim_y=uy_img[idx],
                     node=tuple(node), rms=rms, peak=float(np.max(np.abs(sim))), n_pairs=len(fields))


def track_rows(rt: RoundTrip):
    """CSV rows for recovered tracks: t, p_<row>_<col>_x, p_<row>_<col>_y, ..."""
    n_r, n_c = rt.tracks.grid_shape
    head = ["t"]
    for i in range(n_r):
        for j in range(n_c):
            head += [f"p_{i + 1}_{j + 1}_x", f"p_{i + 1}_{j + 1}_y"]
    yield head
    d = rt.tracks.disp
    for f, t in enumerate(rt.times):
        row = [t]
        for i in range(n_r):
            for j in range(n_c):
                row += [d[f, i, j, 0], d[f, i, j, 1]]
        yield row
