"""Background domain, inclusion phantoms, boundary sampling and the interior grid."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_D0 = 0.5
_POLY_VERTICES = 4096


class PhantomError(ValueError):
    pass


class ParamCurve:
    """Closed counter-clockwise curve ``t in [0, 1) -> R^2`` (mm).

    Subclasses provide the position and its first two derivatives; the
    outward normal follows from the tangent by a clockwise quarter turn.
    """

    def point(self, t):
        raise NotImplementedError

    def deriv(self, t):
        raise NotImplementedError

    def deriv2(self, t):
        raise NotImplementedError

    def normal(self, t):
        d = self.deriv(t)
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def polygon(self, n: int = _POLY_VERTICES) -> np.ndarray:
        return self.point(np.arange(n) / n)

    def arc_length(self, n: int = _POLY_VERTICES) -> float:
        t = np.arange(n) / n
        return float(np.linalg.norm(self.deriv(t), axis=-1).mean())

    def to_dict(self) -> dict:
        raise NotImplementedError


def _rot(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class EllipseCurve(ParamCurve):
    center: tuple = (0.0, 0.0)
    a: float = 1.0
    b: float = 1.0
    angle: float = 0.0

    def _apply(self, v, shift):
        out = v @ _rot(self.angle).T
        return out + np.asarray(self.center) if shift else out

    def point(self, t):
        th = 2 * np.pi * np.asarray(t, dtype=float)
        return self._apply(np.stack([self.a * np.cos(th), self.b * np.sin(th)], -1), True)

    def deriv(self, t):
        th = 2 * np.pi * np.asarray(t, dtype=float)
        w = 2 * np.pi
        return self._apply(np.stack([-w * self.a * np.sin(th), w * self.b * np.cos(th)], -1), False)

    def deriv2(self, t):
        th = 2 * np.pi * np.asarray(t, dtype=float)
        w2 = (2 * np.pi) ** 2
        return self._apply(np.stack([-w2 * self.a * np.cos(th), -w2 * self.b * np.sin(th)], -1), False)

    def to_dict(self):
        if self.a == self.b:
            return {"shape": "disk", "center": list(self.center), "radius": self.a}
        return {"shape": "ellipse", "center": list(self.center), "semi_axes": [self.a, self.b],
                "angle": self.angle}


@dataclass(frozen=True)
class KiteCurve(ParamCurve):
    """``c + s (cos 2pi t + 0.65 cos 4pi t - 0.65, 1.5 sin 2pi t)``."""

    center: tuple = (0.0, 0.0)
    scale: float = 1.0

    def point(self, t):
        th = 2 * np.pi * np.asarray(t, dtype=float)
        x = np.cos(th) + 0.65 * np.cos(2 * th) - 0.65
        y = 1.5 * np.sin(th)
        return self.scale * np.stack([x, y], -1) + np.asarray(self.center)

    def deriv(self, t):
        th = 2 * np.pi * np.asarray(t, dtype=float)
        w = 2 * np.pi
        x = -np.sin(th) - 1.3 * np.sin(2 * th)
        y = 1.5 * np.cos(th)
        return w * self.scale * np.stack([x, y], -1)

    def deriv2(self, t):
        th = 2 * np.pi * np.asarray(t, dtype=float)
        w2 = (2 * np.pi) ** 2
        x = -np.cos(th) - 2.6 * np.cos(2 * th)
        y = -1.5 * np.sin(th)
        return w2 * self.scale * np.stack([x, y], -1)

    def to_dict(self):
        return {"shape": "kite", "center": list(self.center), "scale": self.scale}


@dataclass(frozen=True)
class ArcStadiumCurve(ParamCurve):
    """Thin band of width ``width`` around a centreline, closed by semicircular caps.

    The centreline is a straight segment of length ``length`` when
    ``bend_radius`` is infinite, otherwise an arc of that radius and the same
    length. Parametrised proportionally to arc length.
    """

    center: tuple = (0.0, 0.0)
    length: float = 8.0
    width: float = 0.8
    angle: float = 0.0
    bend_radius: float = float("inf")

    def _pieces(self):
        h = 0.5 * self.width
        cap = np.pi * h
        if np.isinf(self.bend_radius):
            outer = inner = self.length
        else:
            span = self.length / self.bend_radius
            outer = (self.bend_radius + h) * span
            inner = (self.bend_radius - h) * span
        # order: lower side (left->right), right cap, upper side (right->left), left cap
        lens = np.array([inner, cap, outer, cap])
        return lens, lens.sum()

    def _local(self, t, order):
        t = np.mod(np.asarray(t, dtype=float), 1.0)
        lens, total = self._pieces()
        s = t * total
        edges = np.concatenate([[0.0], np.cumsum(lens)])
        h = 0.5 * self.width
        out = np.zeros(t.shape + (2,))
        straight = np.isinf(self.bend_radius)
        half = 0.5 * self.length
        for k in range(4):
            m = (s >= edges[k]) & (s < edges[k + 1]) if k < 3 else (s >= edges[3])
            if not np.any(m):
                continue
            u = (s[m] - edges[k]) / lens[k]  # in [0, 1)
            dus = total / lens[k]  # du/dt
            if straight:
                out[m] = self._straight_piece(k, u, dus, h, half, order)
            else:
                out[m] = self._arc_piece(k, u, dus, h, order)
        return out

    def _straight_piece(self, k, u, dus, h, half, order):
        if k in (0, 2):
            sgn = 1.0 if k == 0 else -1.0
            y = -h if k == 0 else h
            if order == 0:
                return np.stack([sgn * (-half + 2 * half * u), np.full_like(u, y)], -1)
            if order == 1:
                return np.stack([np.full_like(u, sgn * 2 * half * dus), np.zeros_like(u)], -1)
            return np.zeros(u.shape + (2,))
        c = half if k == 1 else -half
        phi0 = -0.5 * np.pi if k == 1 else 0.5 * np.pi
        phi = phi0 + np.pi * u
        w = np.pi * dus
        return self._circle(c, 0.0, h, phi, w, order)

    def _arc_piece(self, k, u, dus, h, order):
        rb = self.bend_radius
        span = self.length / rb
        # centreline arc centred at (0, -rb), apex at the origin
        th0 = 0.5 * np.pi + 0.5 * span  # left end
        th1 = 0.5 * np.pi - 0.5 * span  # right end
        if k == 0:  # inner side, left -> right (clockwise about arc centre)
            th = th0 + (th1 - th0) * u
            return self._circle(0.0, -rb, rb - h, th, (th1 - th0) * dus, order)
        if k == 2:  # outer side, right -> left
            th = th1 + (th0 - th1) * u
            return self._circle(0.0, -rb, rb + h, th, (th0 - th1) * dus, order)
        end = th1 if k == 1 else th0
        cx, cy = rb * np.cos(end), -rb + rb * np.sin(end)
        # cap goes from the inner side to the outer side, around the tip
        phi0 = end + np.pi if k == 1 else end
        phi = phi0 + np.pi * u
        return self._circle(cx, cy, h, phi, np.pi * dus, order)

    @staticmethod
    def _circle(cx, cy, r, phi, w, order):
        c, s = np.cos(phi), np.sin(phi)
        if order == 0:
            return np.stack([cx + r * c, cy + r * s], -1)
        if order == 1:
            return np.stack([-r * w * s, r * w * c], -1)
        return np.stack([-r * w * w * c, -r * w * w * s], -1)

    def _world(self, v, shift):
        out = v @ _rot(self.angle).T
        return out + np.asarray(self.center) if shift else out

    def point(self, t):
        return self._world(self._local(t, 0), True)

    def deriv(self, t):
        return self._world(self._local(t, 1), False)

    def deriv2(self, t):
        return self._world(self._local(t, 2), False)

    def to_dict(self):
        d = {"shape": "stadium", "center": list(self.center), "length": self.length,
             "width": self.width, "angle": self.angle}
        if not np.isinf(self.bend_radius):
            d["bend_radius"] = self.bend_radius
        return d


def curve_from_dict(spec: dict) -> ParamCurve:
    shape = spec["shape"]
    center = tuple(float(c) for c in spec.get("center", (0.0, 0.0)))
    if shape == "disk":
        r = float(spec["radius"])
        return EllipseCurve(center, r, r)
    if shape == "ellipse":
        a, b = spec["semi_axes"]
        return EllipseCurve(center, float(a), float(b), float(spec.get("angle", 0.0)))
    if shape == "kite":
        return KiteCurve(center, float(spec["scale"]))
    if shape == "stadium":
        return ArcStadiumCurve(center, float(spec["length"]), float(spec["width"]),
                               float(spec.get("angle", 0.0)),
                               float(spec.get("bend_radius", float("inf"))))
    raise PhantomError(f"unknown curve shape {shape!r}")


# ---------------------------------------------------------------------------
# point location


def _segments(curve: ParamCurve, n: int):
    p = curve.polygon(n)
    return p, np.roll(p, -1, axis=0)


def _seg_distance(pts, a, b):
    """Distance from points to a closed polyline with vertices ``a`` (``b`` = next vertex).

    The nearest vertex is found with a k-d tree; the exact distance is then
    taken over the few segments around the nearest candidates.
    """
    n = len(a)
    tree = cKDTree(a)
    _, idx = tree.query(pts, k=min(4, n))
    idx = np.atleast_2d(idx.T).T if idx.ndim == 1 else idx
    cand = np.concatenate([idx, (idx - 1) % n], axis=1)  # segments starting at or before
    sa, sb = a[cand], b[cand]
    ab = sb - sa
    q = pts[:, None, :] - sa
    u = np.clip(np.einsum("qij,qij->qi", q, ab) / np.einsum("qij,qij->qi", ab, ab), 0.0, 1.0)
    r = q - u[..., None] * ab
    return np.sqrt(np.einsum("qij,qij->qi", r, r).min(axis=1))


def distance_to_curve(curve: ParamCurve, pts, n: int = _POLY_VERTICES) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    a, b = _segments(curve, n)
    return _seg_distance(pts, a, b)


def winding_number(curve: ParamCurve, pts, n: int = _POLY_VERTICES, chunk=1024) -> np.ndarray:
    """Integer winding number of the polygonal curve around each point (signed crossings)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    a, b = _segments(curve, n)
    out = np.zeros(len(pts), dtype=int)
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        left = ((b[None, :, 0] - a[None, :, 0]) * (p[..., 1] - a[None, :, 1])
                - (p[..., 0] - a[None, :, 0]) * (b[None, :, 1] - a[None, :, 1]))
        up = (a[None, :, 1] <= p[..., 1]) & (b[None, :, 1] > p[..., 1]) & (left > 0)
        down = (b[None, :, 1] <= p[..., 1]) & (a[None, :, 1] > p[..., 1]) & (left < 0)
        out[s:s + chunk] = up.sum(axis=1) - down.sum(axis=1)
    return out


def contains(curve: ParamCurve, x, n: int = _POLY_VERTICES):
    """Winding-number test; points within 1e-12 of the polygonal curve count as inside."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    inside = winding_number(curve, pts, n) != 0
    a, b = _segments(curve, n)
    near = _seg_distance(pts, a, b) <= 1e-12
    res = inside | near
    return bool(res[0]) if single else res


# ---------------------------------------------------------------------------
# boundary sampling


@dataclass(frozen=True, eq=False)
class DiscretizedBoundary:
    t: np.ndarray
    nodes: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    speed: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    curve: ParamCurve | None = None

    @property
    def P(self) -> int:
        return len(self.t)

    @property
    def jac(self) -> np.ndarray:
        """Quadrature weights including the curve speed, ``|x'(t_p)| w_p``."""
        return self.speed * self.weights

    @property
    def tangents(self) -> np.ndarray:
        return self.d1 / self.speed[:, None]

    @property
    def curvature(self) -> np.ndarray:
        cross = self.d1[:, 0] * self.d2[:, 1] - self.d1[:, 1] * self.d2[:, 0]
        return cross / self.speed ** 3

    @property
    def length(self) -> float:
        return float(self.jac.sum())

    def integrate(self, f) -> np.ndarray:
        return np.tensordot(self.jac, np.asarray(f), axes=(0, 0))


def sample_boundary(curve: ParamCurve, P: int) -> DiscretizedBoundary:
    if P < 16 or P % 2:
        raise ValueError(f"boundary sample count must be even and >= 16, got {P}")
    t = np.arange(P) / P
    d1 = curve.deriv(t)
    speed = np.linalg.norm(d1, axis=1)
    return DiscretizedBoundary(t=t, nodes=curve.point(t), d1=d1, d2=curve.deriv2(t), speed=speed,
                               normals=curve.normal(t), weights=np.full(P, 1.0 / P),
                               curve=curve)


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class Inclusion:
    curve: ParamCurve
    lam: float
    mu: float


@dataclass(frozen=True)
class Phantom:
    name: str
    semi_axes: tuple
    lam0: float
    mu0: float
    inclusions: tuple = ()
    d0: float = DEFAULT_D0

    @property
    def boundary(self) -> EllipseCurve:
        return EllipseCurve((0.0, 0.0), float(self.semi_axes[0]), float(self.semi_axes[1]))

    def check(self, allow_matched: bool = False) -> None:
        """Raise :class:`PhantomError` unless hypotheses H1-H4 hold.

        ``allow_matched`` accepts inclusions whose parameters equal the
        background (zero contrast), which the forward solver handles.
        """
        if not (self.mu0 > 0 and 2 * self.lam0 + 2 * self.mu0 > 0):
            raise PhantomError("background Lamé pair is not strongly convex")
        polys = []
        for n, inc in enumerate(self.inclusions):
            if not (inc.mu > 0 and 2 * inc.lam + 2 * inc.mu > 0):
                raise PhantomError(f"inclusion {n}: Lamé bounds (H3) violated")
            matched = inc.lam == self.lam0 and inc.mu == self.mu0
            if not (allow_matched and matched) and not (self.lam0 - inc.lam) * (self.mu0 - inc.mu) > 0:
                raise PhantomError(f"inclusion {n}: degenerate contrast (H4) violated")
            poly = inc.curve.polygon(512)
            if not np.all(contains(self.boundary, poly)):
                raise PhantomError(f"inclusion {n} is not inside the background domain")
            if distance_to_curve(self.boundary, poly).min() < self.d0:
                raise PhantomError(f"inclusion {n} is closer than d0 to the outer boundary (H1)")
            polys.append(poly)
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if (np.any(contains(self.inclusions[j].curve, polys[i]))
                        or distance_to_curve(self.inclusions[j].curve, polys[i]).min() < self.d0):
                    raise PhantomError(f"inclusions {i} and {j} are closer than d0 (H1)")

    def to_dict(self) -> dict:
        return {"name": self.name, "semi_axes": list(self.semi_axes), "lam0": self.lam0,
                "mu0": self.mu0, "d0": self.d0,
                "inclusions": [dict(inc.curve.to_dict(), lam=inc.lam, mu=inc.mu)
                               for inc in self.inclusions]}


def load_catalog() -> dict:
    with resources.files("elg").joinpath("data/phantoms.json").open() as fh:
        return json.load(fh)


def phantom_names() -> list:
    return sorted(load_catalog()["phantoms"])


def _patch_inclusions(incs: list, patch) -> list:
    if isinstance(patch, list):
        if len(patch) != len(incs):
            return copy.deepcopy(patch)
        return [dict(a, **b) for a, b in zip(incs, patch)]
    if isinstance(patch, dict):
        out = list(incs)
        for key, upd in patch.items():
            out[int(key)] = dict(out[int(key)], **upd)
        return out
    raise PhantomError("inclusion overrides must be a list or an index-keyed mapping")


def make_phantom(name: str, params: dict | None = None, allow_matched: bool = False) -> Phantom:
    """Build a catalog phantom, optionally with overrides, and validate it.

    ``allow_matched`` admits zero-contrast inclusions (see :meth:`Phantom.check`).

    Recognised override keys: ``semi_axes``, ``lam0``, ``mu0``, ``d0`` and
    ``inclusions`` (a full list, or a list/mapping of per-inclusion patches).
    """
    catalog = load_catalog()
    if name not in catalog["phantoms"]:
        raise PhantomError(f"unknown phantom {name!r}; known: {sorted(catalog['phantoms'])}")
    spec = dict(catalog["background"])
    spec["inclusions"] = copy.deepcopy(catalog["phantoms"][name]["inclusions"])
    params = dict(params or {})
    unknown = set(params) - {"semi_axes", "lam0", "mu0", "d0", "inclusions"}
    if unknown:
        raise PhantomError(f"unknown phantom override keys: {sorted(unknown)}")
    if "inclusions" in params:
        spec["inclusions"] = _patch_inclusions(spec["inclusions"], params.pop("inclusions"))
    spec.update(params)
    incs = tuple(Inclusion(curve_from_dict(i), float(i["lam"]), float(i["mu"]))
                 for i in spec["inclusions"])
    ph = Phantom(name=name, semi_axes=tuple(float(v) for v in spec["semi_axes"]),
                 lam0=float(spec["lam0"]), mu0=float(spec["mu0"]), inclusions=incs,
                 d0=float(spec["d0"]))
    ph.check(allow_matched=allow_matched)
    return ph


# ---------------------------------------------------------------------------
# interior grid


@dataclass(frozen=True, eq=False)
class InteriorGrid:
    h: float
    points: np.ndarray
    ij: np.ndarray
    labels: np.ndarray = field(default=None)

    @property
    def L(self) -> int:
        return len(self.points)

    @property
    def truth(self) -> np.ndarray:
        return self.labels >= 0

    def index_of(self) -> dict:
        return {(int(i), int(j)): n for n, (i, j) in enumerate(self.ij)}

    def lattice_points(self, ij) -> np.ndarray:
        return np.asarray(ij, dtype=float) * self.h


def interior_grid(phantom: Phantom, h: float, d0: float | None = None) -> InteriorGrid:
    """Lattice points ``h * (i, j)`` inside the background at distance >= d0 from it.

    The grid is empty when ``h`` is at least the smallest width of the domain.

    Points are ordered row by row (``j`` then ``i``); ``labels`` holds the index
    of the true inclusion containing each point, or -1.
    """
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    d0 = phantom.d0 if d0 is None else d0
    a, b = phantom.semi_axes
    if h >= 2 * min(a, b):
        # no grid cell fits inside the domain
        return InteriorGrid(h=float(h), points=np.zeros((0, 2)), ij=np.zeros((0, 2), dtype=int),
                            labels=np.zeros(0, dtype=int))
    ni, nj = int(np.floor(a / h)), int(np.floor(b / h))
    I, J = np.meshgrid(np.arange(-ni, ni + 1), np.arange(-nj, nj + 1))
    ij = np.stack([I.ravel(), J.ravel()], -1)
    pts = ij * h
    inside = (pts[:, 0] / a) ** 2 + (pts[:, 1] / b) ** 2 < 1.0
    ij, pts = ij[inside], pts[inside]
    if len(pts):
        keep = distance_to_curve(phantom.boundary, pts) >= d0
        ij, pts = ij[keep], pts[keep]
    labels = np.full(len(pts), -1, dtype=int)
    for n, inc in enumerate(phantom.inclusions):
        if len(pts):
            labels[contains(inc.curve, pts) & (labels < 0)] = n
    return InteriorGrid(h=float(h), points=pts.reshape(-1, 2), ij=ij.reshape(-1, 2), labels=labels)
