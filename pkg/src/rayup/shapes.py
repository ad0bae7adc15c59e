"""Analytic surfaces for synthetic training data and tests."""
from __future__ import annotations

import numpy as np


def sample_sphere(n: int, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_torus(n: int, rng: np.random.Generator, major: float = 1.0,
                 minor: float = 0.4) -> np.ndarray:
    """Area-uniform samples on a torus around the z axis."""
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        tube = rng.uniform(0, 2 * np.pi, m)
        # density of the tube angle is proportional to the local ring radius
        keep = rng.uniform(0, major + minor, m) < major + minor * np.cos(tube)
        tube = tube[keep]
        ring = rng.uniform(0, 2 * np.pi, len(tube))
        rr = major + minor * np.cos(tube)
        pts = np.column_stack([rr * np.cos(ring), rr * np.sin(ring), minor * np.sin(tube)])
        out = np.vstack([out, pts])
    return out[:n]


def sample_plane(n: int, rng: np.random.Generator, normal=(0.0, 0.0, 1.0),
                 offset: float = 0.0, extent: float = 1.0) -> np.ndarray:
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0, 0]) if abs(normal[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    ab = rng.uniform(-extent, extent, (n, 2))
    return offset * normal + ab[:, :1] * u + ab[:, 1:] * v


def uv_sphere_mesh(radius: float = 1.0, n_lat: int = 32, n_lon: int = 64):
    """Triangle mesh of a sphere: (vertices, faces)."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((radius * np.sin(th) * np.cos(ph), radius * np.sin(th) * np.sin(ph),
                          radius * np.cos(th)))
    verts.append((0.0, 0.0, -radius))
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)
    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, c, d), (a, d, b)]
    south = len(verts) - 1
    for j in range(n_lon):
        faces.append((south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    return np.array(verts), np.array(faces, dtype=np.int64)
