"""
Procedural object library used by the synthetic dataset generator.

The objects stand in for a household-object model set at desk scale: boxes, a
can, a ball, a wedge and an L-shaped bracket. Symmetric objects are flagged so
evaluation scores them with ADD-S.
"""

from dataclasses import dataclass

import numpy as np

from stereo_pose.rasterizer import DEFAULT_REGIONS, TriMesh, merge_meshes, region_partition


@dataclass(frozen=True, eq=False)
class ObjectModel:

    obj_id   : int
    name     : str
    mesh     : TriMesh
    symmetric: bool


def _grid_face(axis:int, sign:float, half:np.ndarray, n:int) -> tuple:

    b, c = [a for a in range(3) if a != axis]

    s = np.linspace(-half[b], half[b], n + 1)
    r = np.linspace(-half[c], half[c], n + 1)
    S, Rr = np.meshgrid(s, r, indexing='ij')

    vertices = np.zeros(((n + 1) ** 2, 3))
    vertices[:, axis] = sign * half[axis]
    vertices[:, b] = S.ravel()
    vertices[:, c] = Rr.ravel()

    faces = []
    for i in range(n):
        for j in range(n):
            v00 = i * (n + 1) + j
            v10 = (i + 1) * (n + 1) + j
            v01 = i * (n + 1) + j + 1
            v11 = (i + 1) * (n + 1) + j + 1
            if sign > 0:
                faces += [[v00, v10, v11], [v00, v11, v01]]
            else:
                faces += [[v00, v11, v10], [v00, v01, v11]]

    return vertices, np.array(faces)


def make_box(size_x:float, size_y:float, size_z:float, subdiv:int=1, name:str='box') -> TriMesh:

    """Axis-aligned box centred at the origin; every face split into a ``subdiv`` x ``subdiv`` grid."""

    half = 0.5 * np.array([size_x, size_y, size_z], dtype=np.float64)

    parts = []
    for axis in range(3):
        for sign in [1.0, -1.0]:
            v, f = _grid_face(axis, sign, half, subdiv)
            parts.append(TriMesh(v, f))

    mesh = merge_meshes(parts, name=name)

    return TriMesh(mesh.vertices, mesh.faces, None, name)


def make_cylinder(radius:float, height:float, segments:int=32, name:str='cylinder') -> TriMesh:

    """Closed cylinder around the z axis, centred at the origin."""

    angles = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    h = 0.5 * height

    bottom = np.column_stack([ring, np.full(segments, -h)])
    top    = np.column_stack([ring, np.full(segments, h)])
    vertices = np.vstack([bottom, top, [[0.0, 0.0, -h], [0.0, 0.0, h]]])
    c_bottom, c_top = 2 * segments, 2 * segments + 1

    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [[i, j, segments + j], [i, segments + j, segments + i]]
        faces += [[c_bottom, j, i], [c_top, segments + i, segments + j]]

    return TriMesh(vertices, np.array(faces), None, name)


def make_uv_sphere(radius:float, rings:int=12, segments:int=24, name:str='sphere') -> TriMesh:

    vertices = [[0.0, 0.0, radius]]
    for i in range(1, rings):
        theta = np.pi * i / rings
        for j in range(segments):
            phi = 2 * np.pi * j / segments
            vertices.append([radius * np.sin(theta) * np.cos(phi), radius * np.sin(theta) * np.sin(phi), radius * np.cos(theta)])
    vertices.append([0.0, 0.0, -radius])
    vertices = np.array(vertices)

    south = len(vertices) - 1
    faces = []

    def idx(ring, seg):
        return 1 + (ring - 1) * segments + (seg % segments)

    for j in range(segments):
        faces.append([0, idx(1, j), idx(1, j + 1)])
        faces.append([south, idx(rings - 1, j + 1), idx(rings - 1, j)])
    for i in range(1, rings - 1):
        for j in range(segments):
            faces += [[idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)], [idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]]

    return TriMesh(vertices, np.array(faces), None, name)


def make_wedge(size_x:float, size_y:float, size_z:float, name:str='wedge') -> TriMesh:

    """Right triangular prism (right-angle edge along y), centred on its bounding box."""

    a, b, c = 0.5 * size_x, 0.5 * size_y, 0.5 * size_z
    vertices = np.array([
        [-a, -b, -c], [a, -b, -c], [-a, -b, c],
        [-a,  b, -c], [a,  b, -c], [-a,  b, c],
    ])
    faces = np.array([
        [0, 2, 1], [3, 4, 5],
        [0, 1, 4], [0, 4, 3],
        [0, 3, 5], [0, 5, 2],
        [1, 2, 5], [1, 5, 4],
    ])

    return TriMesh(vertices, faces, None, name)


def _translated(mesh:TriMesh, offset) -> TriMesh:
    return TriMesh(mesh.vertices + np.asarray(offset, dtype=np.float64), mesh.faces, mesh.region_of_face, mesh.name)


def make_bracket(length:float=90.0, height:float=60.0, thickness:float=18.0, name:str='bracket') -> TriMesh:

    """L-shaped bracket from two overlapping boxes; the shape has no symmetry."""

    base = make_box(length, thickness, thickness, subdiv=2)
    post = make_box(thickness, thickness, height, subdiv=2)

    parts = [
        _translated(base, [0.0, 0.0, -0.5 * height + 0.5 * thickness]),
        _translated(post, [-0.5 * length + 0.5 * thickness, 0.0, 0.0]),
    ]
    mesh = merge_meshes(parts, name=name)

    # centre on the bounding box
    center = 0.5 * (mesh.vertices.max(axis=0) + mesh.vertices.min(axis=0))

    return TriMesh(mesh.vertices - center, mesh.faces, None, name)


def with_default_regions(mesh:TriMesh, k:int=DEFAULT_REGIONS, seed:int=0) -> TriMesh:
    return mesh.with_regions(region_partition(mesh, min(k, mesh.n_faces), seed=seed))


def default_library(n_regions:int=DEFAULT_REGIONS) -> dict:

    """Object models keyed by BOP-style integer object id."""

    specs = [
        (1, 'block',   make_box(90.0, 60.0, 40.0, subdiv=3, name='block'),       False),
        (2, 'cube',    make_box(60.0, 60.0, 60.0, subdiv=3, name='cube'),         True),
        (3, 'can',     make_cylinder(33.0, 100.0, segments=32, name='can'),       True),
        (4, 'ball',    make_uv_sphere(35.0, rings=12, segments=24, name='ball'),  True),
        (5, 'wedge',   make_wedge(80.0, 50.0, 45.0, name='wedge'),                False),
        (6, 'bracket', make_bracket(name='bracket'),                              False),
    ]

    return {
        obj_id: ObjectModel(obj_id, name, with_default_regions(mesh, n_regions, seed=obj_id), symmetric)
        for obj_id, name, mesh, symmetric in specs
    }
