"""Interval partitions and triangulations with face connectivity.

A mesh is assembled from (vertices, cells, boundary tags) by a single
routine that derives faces, outward normals, measures, vertex adjacency
and periodic pairings, and validates the topology.  Periodic boundaries
are realized by face pairing: a periodic face stores its partner cell as
the neighbor, so assembly never special-cases them.  Vertices glued by
periodicity share one equivalence class, which the viscosity smoother
averages over.

Face measure in 1D: faces are points, and the penalty scaling needs a
length, so ``|F|`` is defined as the mean of the adjacent cell sizes.

Meshes are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MeshTopology", "MeshFormatError", "TopologyError",
    "build_uniform_1d", "build_structured_tri_2d",
    "load_mesh", "save_mesh", "refine",
    "INTERIOR", "DIRICHLET", "NEUMANN", "PERIODIC",
]

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2
PERIODIC = 3

_TAG_NAMES = {DIRICHLET: "dirichlet", NEUMANN: "neumann"}


class MeshFormatError(ValueError):
    """Unparseable mesh file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TopologyError(ValueError):
    """Invalid connectivity; carries the offending cell or face index."""

    def __init__(self, message, cell=None):
        if cell is not None:
            message = f"cell {cell}: {message}"
        super().__init__(message)
        self.cell = cell


@dataclass(eq=False)
class MeshTopology:
    """Connectivity and geometry of an interval partition or triangulation.

    ``face_cells[f] = (minus, plus)`` with ``plus = -1`` on true boundary
    faces; normals point out of the minus cell.  ``face_kind`` is one of
    INTERIOR / DIRICHLET / NEUMANN / PERIODIC, and ``face_group[f]``
    names the boundary group of non-interior faces.
    """

    dimension: int
    vertices: np.ndarray          # (nv, dim)
    cells: np.ndarray             # (nc, dim+1)
    cell_measure: np.ndarray      # (nc,)
    cell_diameter: np.ndarray     # (nc,)
    face_vertices: np.ndarray     # (nf, dim)
    face_cells: np.ndarray        # (nf, 2)
    face_local: np.ndarray        # (nf, 2) local face id in minus/plus cell
    face_flip: np.ndarray         # (nf,) plus-side trace runs backwards
    face_normal: np.ndarray       # (nf, dim), unit, outward from minus
    face_measure: np.ndarray      # (nf,)
    face_kind: np.ndarray         # (nf,) int8
    face_group: list              # (nf,) str or None
    vertex_class: np.ndarray      # (nv,) periodic-glued vertex classes
    n_vertex_classes: int
    vclass_cell_indptr: np.ndarray   # CSR: cells adjacent to each class
    vclass_cell_data: np.ndarray

    def __post_init__(self):
        self.h = float(self.cell_diameter.max())

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_cells.shape[0]

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @property
    def is_periodic(self) -> bool:
        return bool(np.all(self.face_cells[:, 1] >= 0)) and \
            bool(np.any(self.face_kind == PERIODIC))

    def cells_at_vertex_class(self, c: int) -> np.ndarray:
        lo, hi = self.vclass_cell_indptr[c], self.vclass_cell_indptr[c + 1]
        return self.vclass_cell_data[lo:hi]


# ---------------------------------------------------------------------
# assembly from raw arrays
# ---------------------------------------------------------------------

def _face_key(verts):
    return tuple(sorted(int(v) for v in verts))


def _assemble(dimension, vertices, cells, boundary_tags):
    """Derive all topology arrays; ``boundary_tags`` maps a face key to
    (kind, group)."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    nv = vertices.shape[0]
    nc = cells.shape[0]
    if vertices.ndim == 1:
        vertices = vertices.reshape(-1, 1)

    for c in range(nc):
        if len(set(cells[c].tolist())) != cells.shape[1]:
            raise TopologyError("duplicate vertex index", cell=c)
        if cells[c].min() < 0 or cells[c].max() >= nv:
            raise TopologyError("vertex index out of range", cell=c)

    if dimension == 1:
        measure = vertices[cells[:, 1], 0] - vertices[cells[:, 0], 0]
        diameter = measure.copy()
        local_faces = [(0,), (1,)]
    else:
        p0 = vertices[cells[:, 0]]
        p1 = vertices[cells[:, 1]]
        p2 = vertices[cells[:, 2]]
        cross = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                 - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))
        measure = 0.5 * cross
        e01 = np.linalg.norm(p1 - p0, axis=1)
        e12 = np.linalg.norm(p2 - p1, axis=1)
        e20 = np.linalg.norm(p0 - p2, axis=1)
        diameter = np.maximum(np.maximum(e01, e12), e20)
        local_faces = [(0, 1), (1, 2), (2, 0)]

    bad = np.flatnonzero(measure <= 0)
    if bad.size:
        raise TopologyError("non-positive measure (inverted element)",
                            cell=int(bad[0]))

    incidence: dict[tuple, list] = {}
    for c in range(nc):
        for le, lf in enumerate(local_faces):
            key = _face_key(cells[c, list(lf)])
            incidence.setdefault(key, []).append((c, le))

    faces = []
    for key, touch in incidence.items():
        if len(touch) > 2:
            raise TopologyError(
                f"face {key} shared by {len(touch)} cells", cell=touch[0][0])
        faces.append((key, touch))
    faces.sort(key=lambda kt: _sort_key(vertices, kt[0]))

    nf = len(faces)
    face_vertices = np.zeros((nf, dimension), dtype=np.int64)
    face_cells = np.full((nf, 2), -1, dtype=np.int64)
    face_local = np.full((nf, 2), -1, dtype=np.int64)
    face_flip = np.zeros(nf, dtype=bool)
    face_normal = np.zeros((nf, dimension))
    face_measure = np.zeros(nf)
    face_kind = np.zeros(nf, dtype=np.int8)
    face_group: list = [None] * nf

    for f, (key, touch) in enumerate(faces):
        (c0, le0) = touch[0]
        lf = local_faces[le0]
        fverts = cells[c0, list(lf)]
        face_vertices[f] = fverts
        face_cells[f, 0] = c0
        face_local[f, 0] = le0
        normal, fmeas = _face_geometry(dimension, vertices, cells, c0, le0,
                                       measure)
        face_normal[f] = normal
        face_measure[f] = fmeas
        if len(touch) == 2:
            (c1, le1) = touch[1]
            if c1 == c0:
                raise TopologyError("face repeated inside one cell", cell=c0)
            face_cells[f, 1] = c1
            face_local[f, 1] = le1
            if dimension == 2:
                # plus side walks the shared edge in the opposite direction
                plus = cells[c1, list(local_faces[le1])]
                face_flip[f] = plus[0] == fverts[1]
                if not (set(plus.tolist()) == set(fverts.tolist())):
                    raise TopologyError("inconsistent shared edge", cell=c1)
            face_measure[f] = _interface_measure(dimension, measure, c0, c1,
                                                 face_measure[f])
        else:
            tag = boundary_tags.get(key)
            if tag is None:
                face_kind[f] = DIRICHLET
                face_group[f] = "dirichlet"
            else:
                face_kind[f] = tag[0]
                face_group[f] = tag[1]

    pairs = _pair_periodic(dimension, vertices, faces, face_cells,
                           face_local, face_flip, face_normal, face_measure,
                           face_kind, face_group, cells, measure,
                           local_faces)

    vertex_class = _vertex_classes(nv, vertices, faces, pairs)
    n_classes = int(vertex_class.max()) + 1 if nv else 0
    indptr, data = _class_cell_adjacency(vertex_class, cells, n_classes)

    # a periodic pair is one physical interface: keep the first face only
    if pairs:
        drop = np.zeros(nf, dtype=bool)
        for _, fb, _ in pairs:
            drop[fb] = True
        keep = ~drop
        face_vertices = face_vertices[keep]
        face_cells = face_cells[keep]
        face_local = face_local[keep]
        face_flip = face_flip[keep]
        face_normal = face_normal[keep]
        face_measure = face_measure[keep]
        face_kind = face_kind[keep]
        face_group = [g for g, k in zip(face_group, keep) if k]

    mesh = MeshTopology(
        dimension=dimension, vertices=vertices, cells=cells,
        cell_measure=measure, cell_diameter=diameter,
        face_vertices=face_vertices, face_cells=face_cells,
        face_local=face_local, face_flip=face_flip,
        face_normal=face_normal, face_measure=face_measure,
        face_kind=face_kind, face_group=face_group,
        vertex_class=vertex_class, n_vertex_classes=n_classes,
        vclass_cell_indptr=indptr, vclass_cell_data=data,
    )
    _validate(mesh)
    return mesh


def _sort_key(vertices, key):
    centroid = vertices[list(key)].mean(axis=0)
    return tuple(np.round(centroid, 12))


def _face_geometry(dimension, vertices, cells, c, local_edge, measure):
    if dimension == 1:
        x0, x1 = vertices[cells[c, 0], 0], vertices[cells[c, 1], 0]
        normal = np.array([-1.0]) if local_edge == 0 else np.array([1.0])
        return normal, measure[c]  # may be replaced for interior faces
    a = cells[c, local_edge]
    b = cells[c, (local_edge + 1) % 3]
    pa, pb = vertices[a], vertices[b]
    t = pb - pa
    length = np.linalg.norm(t)
    normal = np.array([t[1], -t[0]]) / length  # outward for CCW cells
    return normal, length


def _interface_measure(dimension, cell_measure, c0, c1, fmeas):
    if dimension == 1:
        return 0.5 * (cell_measure[c0] + cell_measure[c1])
    return fmeas


def _pair_periodic(dimension, vertices, faces, face_cells, face_local,
                   face_flip, face_normal, face_measure, face_kind,
                   face_group, cells, measure, local_faces):
    groups: dict[str, list[int]] = {}
    for f, (key, touch) in enumerate(faces):
        if face_kind[f] == PERIODIC and face_cells[f, 1] < 0:
            groups.setdefault(face_group[f], []).append(f)
    pairs = []
    for name, fids in groups.items():
        if len(fids) % 2:
            raise TopologyError(f"periodic group {name!r} has an odd "
                                f"number of faces ({len(fids)})")
        n0 = face_normal[fids[0]]
        side_a = [f for f in fids if np.dot(face_normal[f], n0) > 0]
        side_b = [f for f in fids if np.dot(face_normal[f], n0) <= 0]
        if len(side_a) != len(side_b):
            raise TopologyError(f"periodic group {name!r} is unbalanced")
        cent = {f: vertices[list(faces[f][0])].mean(axis=0) for f in fids}
        offset = (np.mean([cent[f] for f in side_b], axis=0)
                  - np.mean([cent[f] for f in side_a], axis=0))
        tol = 1e-9 * (1.0 + np.abs(vertices).max())
        used = set()
        for fa in side_a:
            target = cent[fa] + offset
            match = None
            for fb in side_b:
                if fb in used:
                    continue
                if np.linalg.norm(cent[fb] - target) < max(
                        tol, 1e-7 * face_measure[fa]):
                    match = fb
                    break
            if match is None:
                raise TopologyError(
                    f"periodic group {name!r}: no partner for face {fa}")
            used.add(match)
            if not np.isclose(face_measure[fa], face_measure[match],
                              rtol=1e-12, atol=1e-14):
                raise TopologyError(
                    f"periodic partners {fa},{match} differ in measure")
            _glue(dimension, vertices, cells, face_cells, face_local,
                  face_flip, fa, match, offset, measure, face_measure,
                  local_faces)
            pairs.append((fa, match, offset))
    return pairs


def _walk_vertices(cells, face_cells, face_local, local_faces, f):
    """Vertex ids of face ``f`` in the order its minus cell walks them."""
    c = face_cells[f, 0]
    lf = local_faces[face_local[f, 0]]
    return [int(cells[c, i]) for i in lf]


def _glue(dimension, vertices, cells, face_cells, face_local, face_flip,
          fa, fb, offset, measure, face_measure, local_faces):
    ca, cb = face_cells[fa, 0], face_cells[fb, 0]
    walk_a = _walk_vertices(cells, face_cells, face_local, local_faces, fa)
    walk_b = _walk_vertices(cells, face_cells, face_local, local_faces, fb)
    face_cells[fa, 1] = cb
    face_local[fa, 1] = face_local[fb, 0]
    face_cells[fb, 1] = ca
    face_local[fb, 1] = face_local[fa, 0]
    if dimension == 1:
        face_measure[fa] = face_measure[fb] = 0.5 * (measure[ca]
                                                     + measure[cb])
        return
    pa0 = vertices[walk_a[0]]
    pb0 = vertices[walk_b[0]]
    pb1 = vertices[walk_b[1]]
    if np.allclose(pa0 + offset, pb1, atol=1e-9):
        # anti-parallel walks, same as a regular interior face
        face_flip[fa] = face_flip[fb] = True
    elif np.allclose(pa0 + offset, pb0, atol=1e-9):
        face_flip[fa] = face_flip[fb] = False
    else:
        raise TopologyError(
            f"periodic partners {fa},{fb}: vertex offsets do not match")


def _vertex_classes(nv, vertices, faces, pairs):
    parent = np.arange(nv)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for fa, fb, offset in pairs:
        for va in faces[fa][0]:
            for vb in faces[fb][0]:
                if np.allclose(vertices[va] + offset, vertices[vb],
                               atol=1e-9):
                    union(va, vb)
    roots = np.array([find(v) for v in range(nv)])
    _, classes = np.unique(roots, return_inverse=True)
    return classes



def _class_cell_adjacency(vertex_class, cells, n_classes):
    pairs = []
    for c in range(cells.shape[0]):
        for v in cells[c]:
            pairs.append((vertex_class[v], c))
    pairs = sorted(set(pairs))
    counts = np.zeros(n_classes, dtype=np.int64)
    for cls, _ in pairs:
        counts[cls] += 1
    indptr = np.concatenate(([0], np.cumsum(counts)))
    data = np.array([c for _, c in pairs], dtype=np.int64)
    return indptr, data


def _validate(mesh: MeshTopology) -> None:
    if np.any(mesh.cell_measure <= 0):
        raise TopologyError("non-positive cell measure")
    if np.any(mesh.face_measure <= 0):
        raise TopologyError("non-positive face measure")
    norms = np.linalg.norm(mesh.face_normal, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-12):
        raise TopologyError("non-unit face normal")
    inter = mesh.interior_faces
    if np.any(mesh.face_cells[inter, 0] == mesh.face_cells[inter, 1]):
        raise TopologyError("interior face references one cell twice")
    for f in mesh.boundary_faces:
        if mesh.face_group[f] is None:
            raise TopologyError(f"untagged boundary face {f}")


# ---------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------

def build_uniform_1d(domain, n_cells: int, periodic: bool = False
                     ) -> MeshTopology:
    """Equal-length partition of an interval, faces ordered left to right."""
    a, b = float(domain[0]), float(domain[1])
    if n_cells < 2:
        raise ValueError("n_cells must be at least 2")
    if not b > a:
        raise ValueError("degenerate interval")
    vertices = np.linspace(a, b, n_cells + 1).reshape(-1, 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    if periodic:
        tags = {(0,): (PERIODIC, "x"), (n_cells,): (PERIODIC, "x")}
    else:
        tags = {(0,): (DIRICHLET, "left"), (n_cells,): (DIRICHLET, "right")}
    return _assemble(1, vertices, cells, tags)


def build_structured_tri_2d(domain, nx: int, ny: int, periodic: bool = False
                            ) -> MeshTopology:
    """Rectangle split into 2*nx*ny CCW triangles (diagonals SW to NE)."""
    (x0, x1), (y0, y1) = domain
    if nx < 2 or ny < 2:
        raise ValueError("nx and ny must be at least 2")
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    vid = lambda i, j: j * (nx + 1) + i
    vertices = np.array([[xs[i], ys[j]]
                         for j in range(ny + 1) for i in range(nx + 1)])
    cells = []
    for j in range(ny):
        for i in range(nx):
            bl, br = vid(i, j), vid(i + 1, j)
            tr, tl = vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((bl, br, tr))
            cells.append((bl, tr, tl))
    tags = {}
    for j in range(ny):
        kind = (PERIODIC, "x") if periodic else (DIRICHLET, "left")
        tags[_face_key((vid(0, j), vid(0, j + 1)))] = kind
        kind = (PERIODIC, "x") if periodic else (DIRICHLET, "right")
        tags[_face_key((vid(nx, j), vid(nx, j + 1)))] = kind
    for i in range(nx):
        kind = (PERIODIC, "y") if periodic else (DIRICHLET, "bottom")
        tags[_face_key((vid(i, 0), vid(i + 1, 0)))] = kind
        kind = (PERIODIC, "y") if periodic else (DIRICHLET, "top")
        tags[_face_key((vid(i, ny), vid(i + 1, ny)))] = kind
    return _assemble(2, vertices, np.array(cells), tags)


def refine(mesh: MeshTopology) -> MeshTopology:
    """Halve h: split intervals in two, triangles in four (red split)."""
    if mesh.dimension == 1:
        old = mesh.vertices[:, 0]
        mids = 0.5 * (old[mesh.cells[:, 0]] + old[mesh.cells[:, 1]])
        vertices = np.concatenate([old, mids]).reshape(-1, 1)
        nv = old.shape[0]
        cells = []
        for c in range(mesh.n_cells):
            a, b = mesh.cells[c]
            m = nv + c
            cells.append((a, m))
            cells.append((m, b))
        tags = _boundary_tag_map(mesh)
        return _assemble(1, vertices, np.array(cells), tags)

    verts = [tuple(p) for p in mesh.vertices]
    nv = len(verts)
    new_vertices = list(mesh.vertices)
    mid_of = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid_of:
            mid_of[key] = len(new_vertices)
            new_vertices.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return mid_of[key]

    cells = []
    for c in range(mesh.n_cells):
        a, b, d = mesh.cells[c]
        mab, mbd, mda = midpoint(a, b), midpoint(b, d), midpoint(d, a)
        cells.extend([(a, mab, mda), (mab, b, mbd),
                      (mda, mbd, d), (mab, mbd, mda)])
    parent_tags = _boundary_tag_map(mesh)
    tags = {}
    for (va, vb), tag in parent_tags.items():
        m = mid_of.get((min(va, vb), max(va, vb)))
        if m is None:
            continue
        tags[_face_key((va, m))] = tag
        tags[_face_key((m, vb))] = tag
    return _assemble(2, np.array(new_vertices), np.array(cells), tags)


def _boundary_tag_map(mesh: MeshTopology) -> dict:
    local_faces = [(0,), (1,)] if mesh.dimension == 1 \
        else [(0, 1), (1, 2), (2, 0)]
    tags = {}
    for f in range(mesh.n_faces):
        kind = int(mesh.face_kind[f])
        if kind == INTERIOR:
            continue
        key = _face_key(mesh.face_vertices[f])
        tags[key] = (kind, mesh.face_group[f])
        if kind == PERIODIC:
            cp, lp = mesh.face_cells[f, 1], mesh.face_local[f, 1]
            plus_key = _face_key([mesh.cells[cp, i] for i in local_faces[lp]])
            tags[plus_key] = (kind, mesh.face_group[f])
    return tags


# ---------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------

def load_mesh(path) -> MeshTopology:
    """Read the plain-text mesh format.

    Header ``dim n_vertices n_cells``, one vertex per line, one cell per
    line (0-based vertex ids), then an optional ``boundary`` section with
    ``vertex-ids tag`` lines where tag is ``dirichlet``, ``neumann`` or
    ``periodic:<group>``.  Untagged boundary faces default to Dirichlet.
    """
    with open(path) as fh:
        lines = fh.readlines()

    def parse_error(msg, ln):
        raise MeshFormatError(msg, line=ln + 1)

    idx = 0
    while idx < len(lines) and not lines[idx].split():
        idx += 1
    if idx >= len(lines):
        raise MeshFormatError("empty mesh file")
    head = lines[idx].split()
    if len(head) != 3:
        parse_error("header must be 'dim n_vertices n_cells'", idx)
    try:
        dim, nv, nc = (int(t) for t in head)
    except ValueError:
        parse_error("non-integer header fields", idx)
    if dim not in (1, 2):
        parse_error(f"unsupported dimension {dim}", idx)
    idx += 1

    vertices = np.zeros((nv, dim))
    for i in range(nv):
        ln = idx + i
        if ln >= len(lines):
            raise MeshFormatError("unexpected end of file in vertices")
        toks = lines[ln].split()
        if len(toks) != dim:
            parse_error(f"expected {dim} coordinates", ln)
        try:
            vertices[i] = [float(t) for t in toks]
        except ValueError:
            parse_error("bad coordinate", ln)
    idx += nv

    cells = np.zeros((nc, dim + 1), dtype=np.int64)
    for i in range(nc):
        ln = idx + i
        if ln >= len(lines):
            raise MeshFormatError("unexpected end of file in cells")
        toks = lines[ln].split()
        if len(toks) != dim + 1:
            parse_error(f"expected {dim + 1} vertex indices", ln)
        try:
            cells[i] = [int(t) for t in toks]
        except ValueError:
            parse_error("bad vertex index", ln)
    idx += nc

    tags = {}
    if idx < len(lines):
        rest = [ln for ln in range(idx, len(lines)) if lines[ln].split()]
        if rest:
            if lines[rest[0]].split() != ["boundary"]:
                parse_error("expected 'boundary' section", rest[0])
            for ln in rest[1:]:
                toks = lines[ln].split()
                if len(toks) != dim + 1:
                    parse_error(f"expected {dim} vertex ids and a tag", ln)
                try:
                    verts = [int(t) for t in toks[:dim]]
                except ValueError:
                    parse_error("bad vertex index", ln)
                tag = toks[dim]
                if tag == "dirichlet":
                    tags[_face_key(verts)] = (DIRICHLET, "dirichlet")
                elif tag == "neumann":
                    tags[_face_key(verts)] = (NEUMANN, "neumann")
                elif tag.startswith("periodic:"):
                    tags[_face_key(verts)] = (PERIODIC,
                                              tag.split(":", 1)[1])
                else:
                    parse_error(f"unknown boundary tag {tag!r}", ln)
    return _assemble(dim, vertices, cells, tags)


def save_mesh(mesh: MeshTopology, path) -> None:
    """Write a mesh in the plain-text format read by :func:`load_mesh`."""
    with open(path, "w") as fh:
        nv = mesh.vertices.shape[0]
        fh.write(f"{mesh.dimension} {nv} {mesh.n_cells}\n")
        for p in mesh.vertices:
            fh.write(" ".join(repr(float(x)) for x in p) + "\n")
        for cell in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in cell) + "\n")
        local_faces = [(0,), (1,)] if mesh.dimension == 1 \
            else [(0, 1), (1, 2), (2, 0)]
        lines = []
        for f in range(mesh.n_faces):
            kind = int(mesh.face_kind[f])
            if kind == INTERIOR:
                continue
            verts = " ".join(str(int(v)) for v in mesh.face_vertices[f])
            if kind == PERIODIC:
                # a merged periodic face covers two physical boundary
                # faces; emit both sides of the pairing
                tag = f"periodic:{mesh.face_group[f]}"
                cp, lp = mesh.face_cells[f, 1], mesh.face_local[f, 1]
                plus = " ".join(str(int(mesh.cells[cp, i]))
                                for i in local_faces[lp])
                lines.append(f"{verts} {tag}")
                lines.append(f"{plus} {tag}")
            else:
                lines.append(f"{verts} {_TAG_NAMES[kind]}")
        if lines:
            fh.write("boundary\n")
            fh.write("\n".join(lines) + "\n")
