"""Procedural triangle-mesh object models with surface colour functions.

Meshes are centred on their bounding-box centre, which fixes the object
coordinate frame the neural field is aligned to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pose import Pose, exp_so3, identity


def _max_pairwise_distance(verts: np.ndarray) -> float:
    n = len(verts)
    best = 0.0
    step = 512
    for i in range(0, n, step):
        chunk = verts[i:i + step]
        d2 = np.sum((chunk[:, None, :] - verts[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


@dataclass
class ObjectModel:
    """Watertight triangle mesh + procedural colour; the CAD-model stand-in."""

    vertices: np.ndarray                 # (V, 3) object frame, meters
    triangles: np.ndarray                # (T, 3) int indices
    colour_fn: Callable[[np.ndarray], np.ndarray]   # (N,3) pts -> (N,3) rgb
    name: str = "object"
    symmetry_group: Sequence[Pose] = field(default_factory=lambda: [identity()])
    diameter: float = field(init=False)
    bbox_min: np.ndarray = field(init=False)
    bbox_max: np.ndarray = field(init=False)
    bound_radius: float = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        # recentre on the bounding-box centre
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        centre = 0.5 * (lo + hi)
        if np.max(np.abs(centre)) > 1e-12:
            self.vertices = self.vertices - centre
        self.bbox_min = self.vertices.min(axis=0)
        self.bbox_max = self.vertices.max(axis=0)
        self.diameter = _max_pairwise_distance(self.vertices)
        self.bound_radius = float(np.max(np.linalg.norm(self.vertices, axis=1)))

    @property
    def bbox_extent(self) -> np.ndarray:
        return self.bbox_max - self.bbox_min

    def edge_counts(self):
        """Undirected edge -> incident triangle count (2 everywhere iff watertight)."""
        counts: dict[tuple, int] = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        return all(c == 2 for c in self.edge_counts().values())


def nocs(model: ObjectModel, points: np.ndarray, tol=1e-6) -> np.ndarray:
    """Normalised object coordinates: bounding box mapped to the unit cube."""
    pts = np.asarray(points, dtype=np.float64)
    rel = (pts - model.bbox_min) / model.bbox_extent
    if np.any(rel < -tol / np.min(model.bbox_extent)) or \
            np.any(rel > 1.0 + tol / np.min(model.bbox_extent)):
        raise ValueError("point outside bounding box beyond tolerance")
    return np.clip(rel, 0.0, 1.0)


def nocs_inverse(model: ObjectModel, coords: np.ndarray) -> np.ndarray:
    return np.asarray(coords, dtype=np.float64) * model.bbox_extent + model.bbox_min


# --- colour functions --------------------------------------------------------


def checker_colour(cell: float, c1=(0.9, 0.25, 0.2), c2=(0.95, 0.92, 0.85)):
    c1 = np.asarray(c1)
    c2 = np.asarray(c2)

    def fn(pts: np.ndarray) -> np.ndarray:
        parity = np.sum(np.floor(pts / cell), axis=-1).astype(np.int64) % 2
        return np.where(parity[..., None] == 0, c1, c2)

    return fn


def gradient_colour(axis=2, c1=(0.15, 0.3, 0.8), c2=(0.95, 0.8, 0.2), scale=0.1):
    c1 = np.asarray(c1)
    c2 = np.asarray(c2)

    def fn(pts: np.ndarray) -> np.ndarray:
        a = np.clip(pts[..., axis] / scale + 0.5, 0.0, 1.0)
        return c1 + a[..., None] * (c2 - c1)

    return fn


def uniform_colour(c=(0.6, 0.6, 0.6)):
    c = np.asarray(c, dtype=np.float64)

    def fn(pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(c, pts.shape).copy()

    return fn


def noise_colour(seed=0, base=(0.5, 0.5, 0.5), amplitude=0.35, frequency=60.0):
    """Smooth pseudo-random surface colour from a fixed bank of 3-D waves."""
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(3, 6, 3)) * frequency
    phase = rng.uniform(0, 2 * np.pi, size=(3, 6))
    base = np.asarray(base)

    def fn(pts: np.ndarray) -> np.ndarray:
        out = np.empty(pts.shape[:-1] + (3,))
        for ch in range(3):
            waves = np.sin(pts @ k[ch].T + phase[ch])
            out[..., ch] = base[ch] + amplitude * waves.mean(axis=-1)
        return np.clip(out, 0.0, 1.0)

    return fn


def blend_colours(fns, weights):
    weights = np.asarray(weights, dtype=np.float64)

    def fn(pts):
        acc = np.zeros(pts.shape[:-1] + (3,))
        for f, w in zip(fns, weights):
            acc += w * f(pts)
        return np.clip(acc, 0.0, 1.0)

    return fn


# --- mesh generators -----------------------------------------------------------


def make_cube(side=0.08, colour_fn=None) -> ObjectModel:
    s = side / 2.0
    verts = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)])
    # faces as index triples, outward-facing
    quads = [
        (0, 1, 3, 2),   # x = -s
        (4, 6, 7, 5),   # x = +s
        (0, 4, 5, 1),   # y = -s
        (2, 3, 7, 6),   # y = +s
        (0, 2, 6, 4),   # z = -s
        (1, 5, 7, 3),   # z = +s
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    if colour_fn is None:
        colour_fn = checker_colour(cell=side / 4.0)
    return ObjectModel(verts, np.array(tris), colour_fn, name="cube")


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = np.array([
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ])
    return verts, tris


def _subdivide(verts, tris):
    verts = list(map(tuple, verts))
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = 0.5 * (np.array(verts[i]) + np.array(verts[j]))
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(tuple(m))
        return cache[key]

    out = []
    for a, b, c in tris:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(verts, dtype=np.float64), np.array(out)


def icosphere(radius=0.05, subdivisions=3) -> tuple:
    verts, tris = _icosahedron()
    for _ in range(subdivisions):
        verts, tris = _subdivide(verts, tris)
    return verts * radius, tris


def make_sphere(radius=0.05, subdivisions=3, colour_fn=None) -> ObjectModel:
    verts, tris = icosphere(radius, subdivisions)
    if colour_fn is None:
        colour_fn = checker_colour(cell=radius * 0.45)
    return ObjectModel(verts, tris, colour_fn, name="sphere")


def make_cylinder(radius=0.035, height=0.09, segments=36, colour_fn=None) -> ObjectModel:
    angles = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2.0)], axis=1)
    bot = np.concatenate([ring, np.full((segments, 1), -height / 2.0)], axis=1)
    verts = np.concatenate([top, bot,
                            [[0.0, 0.0, height / 2.0]], [[0.0, 0.0, -height / 2.0]]])
    ctop, cbot = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append((i, segments + j, segments + i))      # side
        tris.append((i, j, segments + j))
        tris.append((ctop, i, j))                          # top cap
        tris.append((cbot, segments + j, segments + i))    # bottom cap
    if colour_fn is None:
        colour_fn = gradient_colour(axis=2, scale=height)
    sym = [Pose(exp_so3([0.0, 0.0, np.radians(a)]), np.zeros(3))
           for a in np.arange(0.0, 360.0, 10.0)]
    return ObjectModel(np.asarray(verts), np.array(tris), colour_fn,
                       name="cylinder", symmetry_group=sym)


def make_blob(radius=0.05, subdivisions=3, seed=5, bump=0.22,
              colour_fn=None) -> ObjectModel:
    """Low-texture, asymmetric smooth blob (the textureless-object analog)."""
    verts, tris = icosphere(1.0, subdivisions)
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(5, 3)) * 2.2
    phase = rng.uniform(0, 2 * np.pi, size=5)
    amp = rng.uniform(0.4, 1.0, size=5)
    waves = np.sin(verts @ k.T + phase) @ amp / amp.sum()
    radial = 1.0 + bump * waves
    verts = verts * radial[:, None] * radius
    if colour_fn is None:
        colour_fn = blend_colours(
            [uniform_colour((0.82, 0.72, 0.28)),
             gradient_colour(axis=1, c1=(-0.03, -0.02, 0.0), c2=(0.03, 0.02, 0.0),
                             scale=radius * 2.5),
             noise_colour(seed=seed + 1, base=(0.0, 0.0, 0.0), amplitude=0.035,
                          frequency=40.0)],
            [1.0, 1.0, 1.0])
    return ObjectModel(verts, tris, colour_fn, name="blob")


GENERATORS = {
    "cube": make_cube,
    "sphere": make_sphere,
    "cylinder": make_cylinder,
    "blob": make_blob,
}


def make_object(kind: str, **kwargs) -> ObjectModel:
    if kind not in GENERATORS:
        raise ValueError(f"unknown object kind {kind!r}; options: {sorted(GENERATORS)}")
    return GENERATORS[kind](**kwargs)
