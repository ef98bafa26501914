"""Simplicial meshes of truncated exterior domains.

The computational domain is the region between an obstacle boundary
(tag OBSTACLE) and an outer truncation sphere (tag OUTER).  Generators
cover the desk-scale geometries used throughout: a graded polar annulus in
2D and a layered icosphere shell in 3D.  Meshes are immutable after
construction; all derived geometry (volumes, P1 gradients, face data) is
cached lazily on first use.

ASCII format, shared by reader and writer::

    dim nv nc nb
    <nv coordinate lines>
    <nc cell index lines, 0-based>
    <nb lines: face vertex indices followed by the tag name>

The boundary normal convention is outward with respect to the flow region
everywhere: on OBSTACLE faces normals point into the obstacle, on OUTER
faces radially outward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError, ParseError, ValidationError

__all__ = [
    "OBSTACLE",
    "OUTER",
    "SimplexMesh",
    "ExteriorMesh",
    "generate_annulus_2d",
    "generate_shell_3d",
    "generate_ball_3d",
    "load_mesh",
    "save_mesh",
    "boundary_normals",
]

OBSTACLE = "OBSTACLE"
OUTER = "OUTER"
_TAGS = (OBSTACLE, OUTER)


def _simplex_volumes(vertices, cells):
    """Signed volumes of simplices (area in 2D)."""
    x = vertices[cells]
    edges = x[:, 1:, :] - x[:, :1, :]
    dim = vertices.shape[1]
    det = np.linalg.det(edges)
    return det / (2.0 if dim == 2 else 6.0)


@dataclass(eq=False)
class SimplexMesh:
    """Bare simplicial mesh (used for obstacle interiors)."""

    vertices: np.ndarray
    cells: np.ndarray

    @cached_property
    def volumes(self):
        return np.abs(_simplex_volumes(self.vertices, self.cells))

    @cached_property
    def barycenters(self):
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def diameters(self):
        x = self.vertices[self.cells]
        n_loc = x.shape[1]
        d = np.zeros(len(self.cells))
        for i in range(n_loc):
            for j in range(i + 1, n_loc):
                d = np.maximum(d, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return d

    @property
    def dimension(self):
        return self.vertices.shape[1]


@dataclass(eq=False)
class ExteriorMesh:
    """Simplicial mesh of the truncated exterior domain with tagged boundary."""

    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray  # array of tag strings, one per boundary face
    obstacle_mesh: SimplexMesh | None = None
    quadrature_order: int = 1

    # ------------------------------------------------------------- geometry
    @cached_property
    def volumes(self):
        return _simplex_volumes(self.vertices, self.cells)

    @cached_property
    def barycenters(self):
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def grad_ops(self):
        """P1 shape-function gradients, shape (nc, dim+1, dim)."""
        x = self.vertices[self.cells]
        edges = np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)  # (nc, dim, dim) columns
        inv = np.linalg.inv(edges)  # rows of inv are grad of local verts 1..dim
        grads = np.empty((len(self.cells), self.dimension + 1, self.dimension))
        grads[:, 1:, :] = inv
        grads[:, 0, :] = -inv.sum(axis=1)
        return grads

    @cached_property
    def cell_diameters(self):
        x = self.vertices[self.cells]
        n_loc = x.shape[1]
        d = np.zeros(len(self.cells))
        for i in range(n_loc):
            for j in range(i + 1, n_loc):
                d = np.maximum(d, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return d

    @cached_property
    def quality(self):
        """Inradius/circumradius ratio per cell."""
        x = self.vertices[self.cells]
        vol = np.abs(self.volumes)
        if self.dimension == 2:
            a = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
            b = np.linalg.norm(x[:, 0] - x[:, 2], axis=1)
            c = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
            peri = a + b + c
            inr = 2.0 * vol / peri
            circ = a * b * c / (4.0 * vol)
            return inr / circ
        # tetrahedra: inradius 3V / (total face area), circumcenter from
        # the linear system 2 (p_i - p_0) . c = |p_i|^2 - |p_0|^2
        def tri_area(p, q, r):
            return 0.5 * np.linalg.norm(np.cross(q - p, r - p), axis=1)

        area = (
            tri_area(x[:, 1], x[:, 2], x[:, 3])
            + tri_area(x[:, 0], x[:, 2], x[:, 3])
            + tri_area(x[:, 0], x[:, 1], x[:, 3])
            + tri_area(x[:, 0], x[:, 1], x[:, 2])
        )
        inr = 3.0 * vol / area
        rhs = np.einsum("cid,cid->ci", x[:, 1:], x[:, 1:]) - np.einsum(
            "cd,cd->c", x[:, 0], x[:, 0]
        )[:, None]
        mat = 2.0 * (x[:, 1:] - x[:, :1])
        center = np.linalg.solve(mat, rhs[:, :, None])[:, :, 0]
        circ = np.linalg.norm(center - x[:, 0], axis=1)
        return inr / circ

    # ------------------------------------------------------------ faces
    def _face_array(self):
        """All cell faces as sorted vertex tuples, (nc*(dim+1), dim)."""
        nc = len(self.cells)
        n_loc = self.dimension + 1
        faces = np.empty((nc * n_loc, self.dimension), dtype=np.int64)
        owners = np.empty(nc * n_loc, dtype=np.int64)
        for i in range(n_loc):
            idx = [j for j in range(n_loc) if j != i]
            faces[i * nc : (i + 1) * nc] = self.cells[:, idx]
            owners[i * nc : (i + 1) * nc] = np.arange(nc)
        faces = np.sort(faces, axis=1)
        return faces, owners

    @cached_property
    def _face_tables(self):
        """(boundary faces, owner cell) and (interior faces, both cells)."""
        faces, owners = self._face_array()
        order = np.lexsort(faces.T[::-1])
        faces = faces[order]
        owners = owners[order]
        same = np.all(faces[1:] == faces[:-1], axis=1)
        is_first = np.concatenate(([True], ~same))
        group_id = np.cumsum(is_first) - 1
        counts = np.bincount(group_id)
        if np.any(counts > 2):
            raise ValidationError("a face is shared by more than two cells")
        first_idx = np.flatnonzero(is_first)
        single = first_idx[counts == 1]
        double = first_idx[counts == 2]
        bfaces = faces[single]
        bowners = owners[single]
        ifaces = faces[double]
        icells = np.stack([owners[double], owners[double + 1]], axis=1)
        return (bfaces, bowners), (ifaces, icells)

    @cached_property
    def boundary_owner_cells(self):
        """Adjacent cell of each stored boundary face, aligned with tags."""
        (bfaces, bowners), _ = self._face_tables
        key = {tuple(f): c for f, c in zip(bfaces, bowners)}
        out = np.empty(len(self.boundary_faces), dtype=np.int64)
        for i, f in enumerate(np.sort(self.boundary_faces, axis=1)):
            try:
                out[i] = key[tuple(f)]
            except KeyError:
                raise ValidationError(
                    f"tagged face {f.tolist()} is not a boundary face of the cell complex"
                ) from None
        return out

    @cached_property
    def interior_faces(self):
        """(faces, cell pairs, areas, unit normals oriented cell0 -> cell1)."""
        _, (ifaces, icells) = self._face_tables
        area, normal = self._face_geometry(ifaces)
        direction = self.barycenters[icells[:, 1]] - self.barycenters[icells[:, 0]]
        flip = np.einsum("fd,fd->f", normal, direction) < 0.0
        normal[flip] *= -1.0
        return ifaces, icells, area, normal

    def _face_geometry(self, faces):
        x = self.vertices[faces]
        if self.dimension == 2:
            tangent = x[:, 1] - x[:, 0]
            area = np.linalg.norm(tangent, axis=1)
            normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / area[:, None]
        else:
            cr = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
            area = 0.5 * np.linalg.norm(cr, axis=1)
            normal = cr / (2.0 * area[:, None])
        return area, normal

    @cached_property
    def boundary_areas(self):
        area, _ = self._face_geometry(self.boundary_faces)
        return area

    @cached_property
    def boundary_centroids(self):
        return self.vertices[self.boundary_faces].mean(axis=1)

    @cached_property
    def boundary_normals(self):
        """Unit normals, outward with respect to the flow region."""
        _, normal = self._face_geometry(self.boundary_faces)
        away = self.boundary_centroids - self.barycenters[self.boundary_owner_cells]
        flip = np.einsum("fd,fd->f", normal, away) < 0.0
        normal = normal.copy()
        normal[flip] *= -1.0
        return normal

    # ------------------------------------------------------------ vertex sets
    @cached_property
    def outer_vertex_mask(self):
        mask = np.zeros(len(self.vertices), dtype=bool)
        sel = self.boundary_tags == OUTER
        mask[np.unique(self.boundary_faces[sel])] = True
        return mask

    @cached_property
    def obstacle_vertex_mask(self):
        mask = np.zeros(len(self.vertices), dtype=bool)
        sel = self.boundary_tags == OBSTACLE
        mask[np.unique(self.boundary_faces[sel])] = True
        return mask

    @cached_property
    def obstacle_radius(self):
        sel = self.boundary_tags == OBSTACLE
        verts = np.unique(self.boundary_faces[sel])
        return float(np.max(np.linalg.norm(self.vertices[verts], axis=1)))

    @cached_property
    def outer_radius(self):
        sel = self.boundary_tags == OUTER
        verts = np.unique(self.boundary_faces[sel])
        return float(np.mean(np.linalg.norm(self.vertices[verts], axis=1)))

    # ------------------------------------------------------------ validation
    def validate(self, quality_floor=1e-3):
        """Check all structural invariants; raise ValidationError naming the first failure."""
        nv = len(self.vertices)
        if np.any(self.cells < 0) or np.any(self.cells >= nv):
            raise ValidationError("cell vertex index out of range")
        if np.any(self.boundary_faces < 0) or np.any(self.boundary_faces >= nv):
            raise ValidationError("boundary face vertex index out of range")
        if not np.all(self.volumes > 0.0):
            raise ValidationError("negative-orientation cell found")
        (bfaces, _), _ = self._face_tables
        tagged = {tuple(f) for f in np.sort(self.boundary_faces, axis=1)}
        actual = {tuple(f) for f in bfaces}
        if len(tagged) != len(self.boundary_faces):
            raise ValidationError("a boundary face is tagged more than once")
        if tagged != actual:
            raise ValidationError("tagged faces do not match the boundary of the cell complex")
        for tag in set(self.boundary_tags.tolist()):
            if tag not in _TAGS:
                raise ValidationError(f"unknown boundary tag {tag!r}")
        _ = self.boundary_owner_cells
        q = float(np.min(self.quality))
        if q <= quality_floor:
            raise ValidationError(
                f"minimum cell quality {q:g} is at or below the floor {quality_floor:g}"
            )
        return self


def boundary_normals(mesh):
    """Per-face unit normals, outward with respect to the flow region."""
    return mesh.boundary_normals


# ----------------------------------------------------------------- generators


def _graded_radii(inner, outer, n, grading):
    if grading == 1.0:
        return np.linspace(inner, outer, n + 1)
    steps = grading ** np.arange(n)
    steps = steps / steps.sum() * (outer - inner)
    return inner + np.concatenate(([0.0], np.cumsum(steps)))


def generate_annulus_2d(inner_radius, outer_radius, n_radial, n_angular, grading=1.0):
    """Graded polar triangulation of the annulus inner <= |x| <= outer.

    Radial spacing is geometric with the given ratio (1 means uniform).
    Produces 2 * n_radial * n_angular triangles with the inner ring tagged
    OBSTACLE and the outer ring tagged OUTER.
    """
    if not 0.0 < inner_radius < outer_radius:
        raise GeometryError("need 0 < inner_radius < outer_radius")
    if n_radial < 4 or n_angular < 4:
        raise GeometryError("need n_radial >= 4 and n_angular >= 4")
    if grading < 1.0:
        raise GeometryError("grading must be >= 1")
    radii = _graded_radii(inner_radius, outer_radius, n_radial, grading)
    angles = 2.0 * np.pi * np.arange(n_angular) / n_angular
    rr, aa = np.meshgrid(radii, angles, indexing="ij")
    vertices = np.stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()], axis=1)

    def vid(k, j):
        return k * n_angular + (j % n_angular)

    cells = []
    for k in range(n_radial):
        for j in range(n_angular):
            v00, v10 = vid(k, j), vid(k + 1, j)
            v01, v11 = vid(k, j + 1), vid(k + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    faces = []
    tags = []
    for j in range(n_angular):
        faces.append((vid(0, j), vid(0, j + 1)))
        tags.append(OBSTACLE)
        faces.append((vid(n_radial, j), vid(n_radial, j + 1)))
        tags.append(OUTER)
    mesh = ExteriorMesh(
        dimension=2,
        vertices=vertices,
        cells=np.asarray(cells, dtype=np.int64),
        boundary_faces=np.asarray(faces, dtype=np.int64),
        boundary_tags=np.asarray(tags),
    )
    return mesh.validate()


def _icosphere(level):
    """Unit icosphere: vertices and triangles, 20 * 4**level faces."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
            (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
            (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(level):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(verts[i]) + np.asarray(verts[j])
                m /= np.linalg.norm(m)
                verts.append(tuple(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts, dtype=float), np.asarray(faces, dtype=np.int64)


def _split_prism(p):
    """Split a prism into 3 tets, consistently across shared quad faces.

    ``p`` holds six global ids, bottom (p0,p1,p2) below top (p3,p4,p5).
    Each quad-face diagonal runs through the face's smallest global id, so
    neighboring prisms agree on shared faces.
    """
    p = list(p)
    k = int(np.argmin(p))
    if k >= 3:  # swap bottom and top, mirroring to keep the pairing
        p = [p[3], p[5], p[4], p[0], p[2], p[1]]
        k = int(np.argmin(p))
    rot = [[0, 1, 2, 3, 4, 5], [1, 2, 0, 4, 5, 3], [2, 0, 1, 5, 3, 4]][k]
    v = [p[i] for i in rot]
    if min(v[1], v[5]) < min(v[2], v[4]):
        return [
            (v[0], v[1], v[2], v[5]),
            (v[0], v[1], v[5], v[4]),
            (v[0], v[4], v[5], v[3]),
        ]
    return [
        (v[0], v[1], v[2], v[4]),
        (v[0], v[4], v[2], v[5]),
        (v[0], v[4], v[5], v[3]),
    ]


def _fix_orientation(vertices, cells):
    vol = _simplex_volumes(vertices, cells)
    cells = cells.copy()
    flip = vol < 0.0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()
    return cells


def generate_shell_3d(inner_radius, outer_radius, refinement_level, n_radial):
    """Layered icosphere shell between two radii, split into tetrahedra.

    Radial layers are geometric (each layer a scaled copy of the previous),
    each prism between consecutive layers splits into 3 tets with diagonals
    chosen by smallest-global-id so neighbors stay conforming.  Produces
    20 * 4**level * n_radial * 3 tets.
    """
    if not 0.0 < inner_radius < outer_radius:
        raise GeometryError("need 0 < inner_radius < outer_radius")
    if refinement_level < 0 or refinement_level > 3:
        raise GeometryError("refinement_level must lie in [0, 3] (desk scale)")
    if n_radial < 1:
        raise GeometryError("n_radial must be >= 1")
    pts, tris = _icosphere(refinement_level)
    ns = len(pts)
    ratio = (outer_radius / inner_radius) ** (1.0 / n_radial)
    radii = inner_radius * ratio ** np.arange(n_radial + 1)
    radii[-1] = outer_radius
    vertices = np.concatenate([pts * r for r in radii], axis=0)
    cells = []
    for k in range(n_radial):
        lo = k * ns
        hi = (k + 1) * ns
        for a, b, c in tris:
            cells.extend(_split_prism((lo + a, lo + b, lo + c, hi + a, hi + b, hi + c)))
    cells = _fix_orientation(vertices, np.asarray(cells, dtype=np.int64))
    faces = []
    tags = []
    for a, b, c in tris:
        faces.append((a, b, c))
        tags.append(OBSTACLE)
        off = n_radial * ns
        faces.append((off + a, off + b, off + c))
        tags.append(OUTER)
    mesh = ExteriorMesh(
        dimension=3,
        vertices=vertices,
        cells=cells,
        boundary_faces=np.asarray(faces, dtype=np.int64),
        boundary_tags=np.asarray(tags),
    )
    return mesh.validate()


def generate_ball_3d(radius, refinement_level, n_radial):
    """Tetrahedral mesh of a ball, used as an obstacle interior.

    Built as a vertex fan inside the first icosphere layer plus prism
    layers outward.  Vertices are inflated radially so the faceted mesh
    encloses exactly the analytic ball volume, keeping the total mass of a
    uniform body faithful.
    """
    if radius <= 0.0:
        raise GeometryError("radius must be positive")
    if refinement_level < 0 or refinement_level > 3:
        raise GeometryError("refinement_level must lie in [0, 3] (desk scale)")
    if n_radial < 1:
        raise GeometryError("n_radial must be >= 1")
    pts, tris = _icosphere(refinement_level)
    ns = len(pts)
    radii = radius * (np.arange(n_radial) + 1.0) / n_radial
    vertices = np.concatenate([np.zeros((1, 3))] + [pts * r for r in radii], axis=0)
    cells = []
    for a, b, c in tris:  # fan from the center to the first layer
        cells.append((0, 1 + a, 1 + b, 1 + c))
    for k in range(n_radial - 1):
        lo = 1 + k * ns
        hi = 1 + (k + 1) * ns
        for a, b, c in tris:
            cells.extend(_split_prism((lo + a, lo + b, lo + c, hi + a, hi + b, hi + c)))
    cells = _fix_orientation(vertices, np.asarray(cells, dtype=np.int64))
    mesh = SimplexMesh(vertices=vertices, cells=cells)
    scale = (4.0 / 3.0 * np.pi * radius**3 / float(mesh.volumes.sum())) ** (1.0 / 3.0)
    return SimplexMesh(vertices=vertices * scale, cells=cells)


# ------------------------------------------------------------------------- io


def save_mesh(mesh, path):
    """Write the documented ASCII format (drops any obstacle interior mesh)."""
    with open(path, "w") as fh:
        fh.write(
            f"{mesh.dimension} {len(mesh.vertices)} {len(mesh.cells)} "
            f"{len(mesh.boundary_faces)}\n"
        )
        for v in mesh.vertices:
            fh.write(" ".join(f"{x:.17g}" for x in v) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")
        for f, tag in zip(mesh.boundary_faces, mesh.boundary_tags):
            fh.write(" ".join(str(int(i)) for i in f) + f" {tag}\n")


def load_mesh(path, quality_floor=1e-3):
    """Read the ASCII format and validate every invariant."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")

    def fail(lineno, msg):
        raise ParseError(f"{path}:{lineno}: {msg}")

    head = lines[0].split()
    if len(head) != 4:
        fail(1, "header must be 'dim nv nc nb'")
    try:
        dim, nv, nc, nb = (int(x) for x in head)
    except ValueError:
        fail(1, "header fields must be integers")
    if dim not in (2, 3):
        fail(1, f"dimension must be 2 or 3, got {dim}")
    need = 1 + nv + nc + nb
    if len(lines) < need:
        fail(len(lines), f"truncated file: expected {need} lines")

    def parse_block(start, count, width, conv, what):
        rows = []
        for i in range(count):
            parts = lines[start + i].split()
            if len(parts) != width:
                fail(start + i + 1, f"{what} line needs {width} fields")
            try:
                rows.append([conv(x) for x in parts])
            except ValueError:
                fail(start + i + 1, f"bad {what} value")
        return rows

    verts = np.asarray(parse_block(1, nv, dim, float, "vertex"), dtype=float)
    cells = np.asarray(parse_block(1 + nv, nc, dim + 1, int, "cell"), dtype=np.int64)
    faces = []
    tags = []
    for i in range(nb):
        lineno = 1 + nv + nc + i
        parts = lines[lineno].split()
        if len(parts) != dim + 1:
            fail(lineno + 1, f"boundary line needs {dim} indices and a tag")
        try:
            faces.append([int(x) for x in parts[:dim]])
        except ValueError:
            fail(lineno + 1, "bad face index")
        if parts[dim] not in _TAGS:
            fail(lineno + 1, f"unknown tag {parts[dim]!r}")
        tags.append(parts[dim])
    mesh = ExteriorMesh(
        dimension=dim,
        vertices=verts,
        cells=cells,
        boundary_faces=np.asarray(faces, dtype=np.int64),
        boundary_tags=np.asarray(tags),
    )
    return mesh.validate(quality_floor=quality_floor)
