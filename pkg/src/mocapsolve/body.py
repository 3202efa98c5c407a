"""Minimal parametric body model.

Shape blendshapes, linear blend skinning over a kinematic tree, and linear
landmark regression with marker extrusion along vertex normals. Pose
correctives are deliberately absent.

The forward pass can keep its intermediates so that :func:`landmarks_vjp`
can push landmark gradients back to shape, pose and root (used by the fitter).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .rotations import rodrigues, rodrigues_with_jacobian

DEFAULT_MARKER_RADIUS = 0.0095


class ParameterError(ValueError):
    """Raised on malformed inputs (dimension mismatch, invalid ranges, ...)."""


@dataclass(frozen=True, eq=False)
class BodyModel:
    template: np.ndarray          # (V, 3)
    faces: np.ndarray             # (F, 3) int
    shapedirs: np.ndarray         # (S, V, 3)
    weights: np.ndarray           # (V, P)
    joint_regressor: np.ndarray   # (P, V)
    parents: np.ndarray           # (P,), root has -1
    landmark_regressor: np.ndarray  # (L, V), resolved to vertex weights
    landmark_names: tuple
    landmark_kinds: tuple         # "marker" | "joint"
    extrude: np.ndarray           # (L,) bool
    marker_radius: float = DEFAULT_MARKER_RADIUS
    joint_names: tuple = ()
    symmetry: tuple = ()          # ((left, right), ...) joint index pairs
    anchor_markers: tuple = ()    # names used for rigid initialization
    order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("template", "shapedirs", "weights", "joint_regressor",
                     "landmark_regressor"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("faces", "parents"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ext = np.array(self.extrude, dtype=bool)
        ext.setflags(write=False)
        object.__setattr__(self, "extrude", ext)
        object.__setattr__(self, "order", _topological_order(self.parents))
        self._validate()
        object.__setattr__(self, "_incidence", _incidence(self.faces, self.template.shape[0]))
        object.__setattr__(self, "_levels", _depth_levels(self.parents, self.order))

    # sizes
    @property
    def n_vertices(self):
        return self.template.shape[0]

    @property
    def n_shape(self):
        return self.shapedirs.shape[0]

    @property
    def n_joints(self):
        return self.parents.shape[0]

    @property
    def n_landmarks(self):
        return self.landmark_regressor.shape[0]

    @property
    def marker_indices(self):
        return np.array([i for i, k in enumerate(self.landmark_kinds) if k == "marker"], dtype=int)

    @property
    def joint_indices(self):
        return np.array([i for i, k in enumerate(self.landmark_kinds) if k == "joint"], dtype=int)

    @property
    def marker_names(self):
        return [self.landmark_names[i] for i in self.marker_indices]

    def landmark_index(self, name):
        return self.landmark_names.index(name)

    def _validate(self):
        V, P = self.weights.shape
        if self.template.shape != (V, 3):
            raise ParameterError("template must be V x 3 matching skinning weights")
        if self.shapedirs.ndim != 3 or self.shapedirs.shape[1:] != (V, 3):
            raise ParameterError("shapedirs must be S x V x 3")
        if self.joint_regressor.shape != (P, V):
            raise ParameterError("joint_regressor must be P x V")
        if self.landmark_regressor.shape[1] != V:
            raise ParameterError("landmark_regressor must have V columns")
        if np.any(self.weights < -1e-12) or not np.allclose(self.weights.sum(1), 1.0, atol=1e-9):
            raise ParameterError("skinning weight rows must be non-negative and sum to 1")
        if not np.allclose(self.joint_regressor.sum(1), 1.0, atol=1e-9):
            raise ParameterError("joint_regressor rows must sum to 1")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise ParameterError("face indices out of range")
        L = self.landmark_regressor.shape[0]
        if not (len(self.landmark_names) == len(self.landmark_kinds) == len(self.extrude) == L):
            raise ParameterError("landmark metadata length mismatch")


def _incidence(faces, V):
    """Sparse V x F vertex/face incidence per face slot."""
    F = len(faces)
    cols = np.arange(F)
    slots = [sp.csr_matrix((np.ones(F), (faces[:, k], cols)), shape=(V, F)) for k in range(3)]
    return slots, (slots[0] + slots[1] + slots[2]).tocsr()


def _depth_levels(parents, order):
    """Non-root joints grouped by tree depth, as (joints, parents) index arrays."""
    depth = np.zeros(len(parents), dtype=int)
    for j in order:
        if parents[j] >= 0:
            depth[j] = depth[parents[j]] + 1
    levels = []
    for d in range(1, depth.max() + 1 if len(depth) else 1):
        js = np.flatnonzero(depth == d)
        levels.append((js, np.asarray(parents)[js]))
    return levels


def _cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def _topological_order(parents):
    parents = np.asarray(parents)
    roots = np.flatnonzero(parents < 0)
    if roots.size != 1:
        raise ParameterError("kinematic tree must have exactly one root")
    children = {i: [] for i in range(parents.size)}
    for j, p in enumerate(parents):
        if p >= 0:
            if p >= parents.size:
                raise ParameterError("parent index out of range")
            children[int(p)].append(j)
    order, stack = [], [int(roots[0])]
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    if len(order) != parents.size:
        raise ParameterError("kinematic tree has a cycle or disconnected joints")
    return np.array(order, dtype=np.int64)


@dataclass
class BodyParams:
    beta: np.ndarray
    theta: np.ndarray               # (P, 3) axis-angle
    root_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))     # axis-angle
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # meters

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1, 3)
        self.root_rotation = np.asarray(self.root_rotation, dtype=float).reshape(3)
        self.root_translation = np.asarray(self.root_translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.root_rotation))):
            raise ParameterError("rotations must be finite")

    @classmethod
    def zeros(cls, model):
        return cls(np.zeros(model.n_shape), np.zeros((model.n_joints, 3)))

    @property
    def root_matrix(self):
        return rodrigues(self.root_rotation)

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "root": {"rotation": self.root_rotation.tolist(),
                     "translation": self.root_translation.tolist()},
        }

    @classmethod
    def from_dict(cls, d):
        root = d.get("root") or {}
        return cls(d["beta"], d["theta"], root.get("rotation", np.zeros(3)),
                   root.get("translation", np.zeros(3)))


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray


@dataclass
class LandmarkSet:
    positions: np.ndarray   # (L, 3)
    kinds: tuple
    labels: tuple

    @property
    def markers(self):
        return self.positions[[i for i, k in enumerate(self.kinds) if k == "marker"]]

    @property
    def joints(self):
        return self.positions[[i for i, k in enumerate(self.kinds) if k == "joint"]]


# ---------------------------------------------------------------- model file

def _resolve_landmark_row(entry, faces, V, joint_regressor):
    row = np.zeros(V)
    if "vertex_weights" in entry:
        for idx, w in entry["vertex_weights"]:
            row[int(idx)] += float(w)
    elif "face" in entry:
        bary = np.asarray(entry["bary"], dtype=float)
        if bary.shape != (3,) or not np.isclose(bary.sum(), 1.0) or np.any(bary < 0):
            raise ParameterError(f"bad barycentric weights for {entry.get('name')}")
        for idx, w in zip(faces[int(entry["face"])], bary):
            row[idx] += w
    elif "joint" in entry:
        row[:] = joint_regressor[int(entry["joint"])]
    else:
        raise ParameterError(f"landmark {entry.get('name')} has no regressor definition")
    return row


def model_from_dict(d):
    template = np.asarray(d["template"], dtype=float)
    faces = np.asarray(d["faces"], dtype=np.int64).reshape(-1, 3)
    V = template.shape[0]
    shapedirs = np.asarray(d.get("blendshapes", np.zeros((0, V, 3))), dtype=float).reshape(-1, V, 3)
    joint_regressor = np.asarray(d["joint_regressor"], dtype=float)
    rows, names, kinds, extrude = [], [], [], []
    for entry in d["landmarks"]:
        rows.append(_resolve_landmark_row(entry, faces, V, joint_regressor))
        names.append(entry["name"])
        kinds.append(entry["kind"])
        extrude.append(bool(entry.get("extrude", entry["kind"] == "marker")))
    return BodyModel(
        template=template,
        faces=faces,
        shapedirs=shapedirs,
        weights=np.asarray(d["weights"], dtype=float),
        joint_regressor=joint_regressor,
        parents=np.asarray(d["parents"], dtype=np.int64),
        landmark_regressor=np.array(rows).reshape(len(rows), V),
        landmark_names=tuple(names),
        landmark_kinds=tuple(kinds),
        extrude=np.array(extrude, dtype=bool),
        marker_radius=float(d.get("marker_radius", DEFAULT_MARKER_RADIUS)),
        joint_names=tuple(d.get("joint_names", ())),
        symmetry=tuple(tuple(p) for p in d.get("symmetry", ())),
        anchor_markers=tuple(d.get("anchor_markers", ())),
    )


def load_model(path=None, layout="53_18"):
    """Load a model file; with no path, the bundled desk model for `layout`."""
    if path is None:
        text = resources.files("mocapsolve").joinpath(f"data/desk_model_{layout}.json").read_text()
    else:
        text = Path(path).read_text()
    return model_from_dict(json.loads(text))


# ------------------------------------------------------------------- forward

def _check_params(model, params):
    if params.beta.shape != (model.n_shape,):
        raise ParameterError(f"beta has {params.beta.size} entries, model expects {model.n_shape}")
    if params.theta.shape != (model.n_joints, 3):
        raise ParameterError(f"theta has {params.theta.shape[0]} joints, model expects {model.n_joints}")


@dataclass
class ForwardPass:
    """Intermediates of one forward evaluation, enough for a reverse sweep."""
    v_shaped: np.ndarray
    joints_rest: np.ndarray
    R_local: np.ndarray
    dR_local: np.ndarray | None
    R_global: np.ndarray
    t_global: np.ndarray
    M: np.ndarray          # per-vertex blended rotation part
    v_posed: np.ndarray    # before root transform
    root_R: np.ndarray
    vertices: np.ndarray
    face_normals: np.ndarray
    normals_raw: np.ndarray
    normals: np.ndarray
    reg_normals: np.ndarray
    landmarks: np.ndarray


def forward(model, beta, theta, root_R=None, root_t=None, keep_jacobian=False):
    beta = np.asarray(beta, dtype=float)
    theta = np.asarray(theta, dtype=float).reshape(-1, 3)
    root_R = np.eye(3) if root_R is None else np.asarray(root_R, dtype=float)
    root_t = np.zeros(3) if root_t is None else np.asarray(root_t, dtype=float)

    v_shaped = model.template + np.tensordot(beta, model.shapedirs, axes=1)
    J = model.joint_regressor @ v_shaped
    if keep_jacobian:
        R_local, dR_local = rodrigues_with_jacobian(theta)
    else:
        R_local, dR_local = rodrigues(theta), None

    P = model.n_joints
    Rg = np.empty((P, 3, 3))
    tg = np.empty((P, 3))
    r = model.order[0]
    Rg[r] = R_local[r]
    tg[r] = J[r]
    for js, ps in model._levels:
        Rg[js] = Rg[ps] @ R_local[js]
        tg[js] = (Rg[ps] @ (J[js] - J[ps])[:, :, None])[:, :, 0] + tg[ps]
    A_t = tg - (Rg @ J[:, :, None])[:, :, 0]
    W = model.weights
    M = (W @ Rg.reshape(P, 9)).reshape(-1, 3, 3)
    v_posed = (M @ v_shaped[:, :, None])[:, :, 0] + W @ A_t
    vertices = v_posed @ root_R.T + root_t

    fn, nu, n = _normals(vertices, model.faces, model._incidence[1])
    lm, rn = _regress(model, vertices, n)
    return ForwardPass(v_shaped, J, R_local, dR_local, Rg, tg, M, v_posed, root_R,
                       vertices, fn, nu, n, rn, lm)


def _normals(vertices, faces, incidence=None):
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    fn = _cross(v1 - v0, v2 - v0)  # twice the area-weighted face normal
    if incidence is None:
        incidence = _incidence(faces, len(vertices))[1]
    nu = incidence @ fn
    norm = np.linalg.norm(nu, axis=1, keepdims=True)
    n = np.divide(nu, norm, out=np.zeros_like(nu), where=norm > 0)
    return fn, nu, n


def _regress(model, vertices, normals):
    R = model.landmark_regressor
    surf = R @ vertices
    rn = R @ normals
    norm = np.linalg.norm(rn, axis=1, keepdims=True)
    rn_hat = np.divide(rn, norm, out=np.zeros_like(rn), where=norm > 0)
    offset = model.marker_radius * model.extrude[:, None]
    return surf + offset * rn_hat, rn


def _safe_inverse(x):
    return np.divide(1.0, x, out=np.zeros_like(x), where=x > 0)


def landmarks_vjp(model, fp, g_landmarks):
    """Pull landmark cotangents back through a kept forward pass.

    ``g_landmarks`` is (L, 3), or (K, L, 3) for K cotangents at once (rows of
    a Jacobian). Returns a dict with ``beta`` (S,), ``theta`` (P, 3),
    ``root_R`` (3, 3) and ``root_t`` (3,), each with a leading K axis in the
    batched case. ``root_R`` is the plain matrix gradient dE/dR.
    """
    if fp.dR_local is None:
        raise ValueError("forward pass was run without keep_jacobian=True")
    g = np.asarray(g_landmarks, dtype=float)
    single = g.ndim == 2
    if single:
        g = g[None]
    K = g.shape[0]
    # item-first layout (N, K, 3) so sparse/dense operators act on axis 0
    g = np.ascontiguousarray(np.swapaxes(g, 0, 1))
    L, V, P = g.shape[0], model.n_vertices, model.n_joints
    R = model.landmark_regressor
    faces = model.faces

    def apply(op, x):
        return (op @ x.reshape(x.shape[0], -1)).reshape((op.shape[0],) + x.shape[1:])

    # extrusion: marker = R v + d * normalize(R n)
    rn = fp.reg_normals
    rinv = _safe_inverse(np.linalg.norm(rn, axis=1))[:, None, None]
    rn_hat = (rn * rinv[:, 0])[:, None, :]
    g_hat = g * (model.marker_radius * model.extrude)[:, None, None]
    g_rn = (g_hat - rn_hat * np.sum(rn_hat * g_hat, axis=-1, keepdims=True)) * rinv
    g_v = apply(R.T, g)
    g_n = apply(R.T, g_rn)

    # vertex normal normalization and area-weighted accumulation
    nu, n = fp.normals_raw, fp.normals[:, None, :]
    ninv = _safe_inverse(np.linalg.norm(nu, axis=1))[:, None, None]
    g_nu = (g_n - n * np.sum(n * g_n, axis=-1, keepdims=True)) * ninv
    (S0, S1, S2), S = model._incidence
    g_fn = apply(S.T, g_nu)
    v = fp.vertices
    e1 = (v[faces[:, 1]] - v[faces[:, 0]])[:, None, :]
    e2 = (v[faces[:, 2]] - v[faces[:, 0]])[:, None, :]
    g_e1 = _cross(e2, g_fn)
    g_e2 = _cross(g_fn, e1)
    g_v = g_v + apply(S1, g_e1) + apply(S2, g_e2) - apply(S0, g_e1 + g_e2)

    # root transform
    g_root_t = g_v.sum(axis=0)
    g_root_R = (g_v.reshape(V, K * 3).T @ fp.v_posed).reshape(K, 3, 3)
    g_vp = g_v @ fp.root_R

    # skinning
    W = model.weights
    g_M = g_vp[..., :, None] * fp.v_shaped[:, None, None, :]
    g_vs = (g_vp[:, :, None, :] @ fp.M[:, None])[:, :, 0, :]
    g_AR = apply(W.T, g_M)
    g_At = apply(W.T, g_vp)
    J = fp.joints_rest
    Rg = fp.R_global
    g_tg = g_At.copy()
    g_Rg = g_AR - g_At[..., :, None] * J[:, None, None, :]
    g_J = -(g_At[:, :, None, :] @ Rg[:, None])[:, :, 0, :]

    # kinematic chain, reverse topological order
    g_Rl = np.empty((P, K, 3, 3))
    Rl = fp.R_local
    for js, ps in reversed(model._levels):
        RpT = np.swapaxes(Rg[ps], 1, 2)[:, None]
        np.add.at(g_Rg, ps, g_Rg[js] @ np.swapaxes(Rl[js], 1, 2)[:, None]
                  + g_tg[js][..., :, None] * (J[js] - J[ps])[:, None, None, :])
        g_Rl[js] = RpT @ g_Rg[js]
        back = (RpT @ g_tg[js][..., None])[..., 0]
        g_J[js] += back
        np.add.at(g_J, ps, -back)
        np.add.at(g_tg, ps, g_tg[js])
    r = model.order[0]
    g_Rl[r] = g_Rg[r]
    g_J[r] += g_tg[r]
    g_theta = g_Rl.reshape(P, K, 9) @ fp.dR_local.reshape(P, 9, 3)

    g_vs = g_vs + apply(model.joint_regressor.T, g_J)
    g_beta = np.tensordot(g_vs, model.shapedirs, axes=([0, 2], [1, 2]))
    out = {"beta": g_beta, "theta": np.swapaxes(g_theta, 0, 1), "root_R": g_root_R,
           "root_t": g_root_t}
    if single:
        out = {k: val[0] for k, val in out.items()}
    return out


def landmarks_jvp(model, fp, d_beta, d_theta, d_root_R, d_root_t, rows=None):
    """Push K tangent directions forward through a kept forward pass.

    Tangents are batched on the leading axis: ``d_beta`` (K, S), ``d_theta``
    (K, P, 3), ``d_root_R`` (K, 3, 3) and ``d_root_t`` (K, 3). Returns the
    landmark tangents (K, len(rows), 3); all landmarks when ``rows`` is None.
    """
    if fp.dR_local is None:
        raise ValueError("forward pass was run without keep_jacobian=True")
    d_beta = np.asarray(d_beta, dtype=float)
    K = d_beta.shape[0]
    S, V, P = model.n_shape, model.n_vertices, model.n_joints
    faces = model.faces

    def apply(op, x):
        return (op @ x.reshape(x.shape[0], -1)).reshape((op.shape[0],) + x.shape[1:])

    # item-first layout (N, K, ...) throughout
    d_vs = (model.shapedirs.reshape(S, V * 3).T @ d_beta.T).reshape(V, 3, K).transpose(0, 2, 1)
    d_J = apply(model.joint_regressor, d_vs)
    d_th = np.asarray(d_theta, dtype=float).reshape(K, P, 3).transpose(1, 2, 0)
    d_Rl = (fp.dR_local.reshape(P, 9, 3) @ d_th).transpose(0, 2, 1).reshape(P, K, 3, 3)

    Rg, J, Rl = fp.R_global, fp.joints_rest, fp.R_local
    d_Rg = np.empty((P, K, 3, 3))
    d_tg = np.empty((P, K, 3))
    r = model.order[0]
    d_Rg[r] = d_Rl[r]
    d_tg[r] = d_J[r]
    for js, ps in model._levels:
        Rp = Rg[ps][:, None]
        d_Rg[js] = d_Rg[ps] @ Rl[js][:, None] + Rp @ d_Rl[js]
        d_tg[js] = ((d_Rg[ps] @ (J[js] - J[ps])[:, None, :, None])[..., 0]
                    + (Rp @ (d_J[js] - d_J[ps])[..., None])[..., 0] + d_tg[ps])
    d_At = d_tg - (d_Rg @ J[:, None, :, None])[..., 0] - (Rg[:, None] @ d_J[..., None])[..., 0]

    W = model.weights
    d_M = apply(W, d_Rg)
    d_vp = ((d_M @ fp.v_shaped[:, None, :, None])[..., 0]
            + (fp.M[:, None] @ d_vs[..., None])[..., 0] + apply(W, d_At))
    d_root_R = np.asarray(d_root_R, dtype=float)
    d_v = (d_vp @ fp.root_R.T + np.einsum("vc,kdc->vkd", fp.v_posed, d_root_R)
           + np.asarray(d_root_t, dtype=float)[None])

    # area-weighted normals
    v = fp.vertices
    e1 = (v[faces[:, 1]] - v[faces[:, 0]])[:, None, :]
    e2 = (v[faces[:, 2]] - v[faces[:, 0]])[:, None, :]
    d_e1 = d_v[faces[:, 1]] - d_v[faces[:, 0]]
    d_e2 = d_v[faces[:, 2]] - d_v[faces[:, 0]]
    d_nu = apply(model._incidence[1], _cross(d_e1, e2) + _cross(e1, d_e2))
    n = fp.normals[:, None, :]
    ninv = _safe_inverse(np.linalg.norm(fp.normals_raw, axis=1))[:, None, None]
    d_n = (d_nu - n * np.sum(n * d_nu, axis=-1, keepdims=True)) * ninv

    # regression and extrusion
    R = model.landmark_regressor
    rn = fp.reg_normals
    extrude = model.extrude
    if rows is not None:
        R, rn, extrude = R[rows], rn[rows], extrude[rows]
    rinv = _safe_inverse(np.linalg.norm(rn, axis=1))[:, None, None]
    rn_hat = (rn * rinv[:, 0])[:, None, :]
    d_rn = apply(R, d_n)
    d_hat = (d_rn - rn_hat * np.sum(rn_hat * d_rn, axis=-1, keepdims=True)) * rinv
    d_lm = apply(R, d_v) + (model.marker_radius * extrude)[:, None, None] * d_hat
    return np.swapaxes(d_lm, 0, 1)


# ---------------------------------------------------------- public operations

def skin(model, params):
    """Posed mesh for `params` (shape blend, LBS over the tree, then root)."""
    _check_params(model, params)
    fp = forward(model, params.beta, params.theta, params.root_matrix, params.root_translation)
    return Mesh(fp.vertices, model.faces)


def vertex_normals(mesh, return_degenerate=False):
    """Unit area-weighted vertex normals.

    Vertices whose incident faces all have zero area get a zero normal; pass
    ``return_degenerate=True`` to also receive that boolean mask.
    """
    verts = np.asarray(mesh.vertices, dtype=float)
    faces = np.asarray(mesh.faces, dtype=np.int64).reshape(-1, 3)
    if verts.size == 0 or faces.size == 0:
        raise ParameterError("empty mesh")
    if faces.min() < 0 or faces.max() >= len(verts):
        raise ParameterError("face indices out of range")
    _, nu, n = _normals(verts, faces)
    degenerate = np.linalg.norm(nu, axis=1) == 0
    if degenerate.all():
        raise ParameterError("mesh has zero total area")
    return (n, degenerate) if return_degenerate else n


def extract_landmarks(model, mesh, normals):
    verts = np.asarray(mesh.vertices, dtype=float)
    normals = np.asarray(normals, dtype=float)
    if verts.shape != (model.n_vertices, 3) or normals.shape != verts.shape:
        raise ParameterError("mesh does not match model vertex count")
    pos, _ = _regress(model, verts, normals)
    return LandmarkSet(pos, model.landmark_kinds, model.landmark_names)


def landmarks(model, params):
    """Convenience: skin -> normals -> landmarks, as an (L, 3) array."""
    _check_params(model, params)
    fp = forward(model, params.beta, params.theta, params.root_matrix, params.root_translation)
    return fp.landmarks


def posed_joints(model, params):
    """Joint landmark positions (the joint-kind rows) for `params`."""
    return landmarks(model, params)[model.joint_indices]
