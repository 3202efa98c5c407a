"""Procedural desk-scale body model used by the tests and examples.

Every bone is a closed hexagonal tube (three rings plus two cap centres).
Cap centres sit exactly on joints, so the joint regressor (the mean of the
caps meeting at a joint) reproduces the kinematic joint under any pose.
The rest pose is a T-pose, +y up, facing +z, with the body's left on +x.
The vertex set and every left/right marker pair mirror exactly across x = 0;
only the quads straddling the midline cannot be split symmetrically, so
normals there are mirror symmetric to a few degrees.

Two layouts are provided: 53 markers / 18 joints and 56 markers / 24 joints.
"""
import json

import numpy as np

HEX = 6
RING_T = (0.1, 0.5, 0.9)

# name, parent, offset from parent (rest pose, meters)
_SKELETON_18 = [
    ("pelvis", None, (0.0, 0.95, 0.0)),
    ("spine1", "pelvis", (0.0, 0.10, 0.0)),
    ("spine2", "spine1", (0.0, 0.12, 0.0)),
    ("spine3", "spine2", (0.0, 0.12, 0.0)),
    ("neck", "spine3", (0.0, 0.15, 0.0)),
    ("head", "neck", (0.0, 0.10, 0.0)),
    ("l_shoulder", "spine3", (0.17, 0.08, 0.0)),
    ("l_elbow", "l_shoulder", (0.28, 0.0, 0.0)),
    ("l_wrist", "l_elbow", (0.25, 0.0, 0.0)),
    ("r_shoulder", "spine3", (-0.17, 0.08, 0.0)),
    ("r_elbow", "r_shoulder", (-0.28, 0.0, 0.0)),
    ("r_wrist", "r_elbow", (-0.25, 0.0, 0.0)),
    ("l_hip", "pelvis", (0.09, -0.06, 0.0)),
    ("l_knee", "l_hip", (0.0, -0.40, 0.0)),
    ("l_ankle", "l_knee", (0.0, -0.40, 0.0)),
    ("r_hip", "pelvis", (-0.09, -0.06, 0.0)),
    ("r_knee", "r_hip", (0.0, -0.40, 0.0)),
    ("r_ankle", "r_knee", (0.0, -0.40, 0.0)),
]

_SKELETON_24 = [
    ("pelvis", None, (0.0, 0.95, 0.0)),
    ("spine1", "pelvis", (0.0, 0.10, 0.0)),
    ("spine2", "spine1", (0.0, 0.12, 0.0)),
    ("spine3", "spine2", (0.0, 0.12, 0.0)),
    ("neck", "spine3", (0.0, 0.15, 0.0)),
    ("head", "neck", (0.0, 0.10, 0.0)),
    ("l_collar", "spine3", (0.07, 0.07, 0.0)),
    ("l_shoulder", "l_collar", (0.10, 0.01, 0.0)),
    ("l_elbow", "l_shoulder", (0.28, 0.0, 0.0)),
    ("l_wrist", "l_elbow", (0.25, 0.0, 0.0)),
    ("l_hand", "l_wrist", (0.08, 0.0, 0.0)),
    ("r_collar", "spine3", (-0.07, 0.07, 0.0)),
    ("r_shoulder", "r_collar", (-0.10, 0.01, 0.0)),
    ("r_elbow", "r_shoulder", (-0.28, 0.0, 0.0)),
    ("r_wrist", "r_elbow", (-0.25, 0.0, 0.0)),
    ("r_hand", "r_wrist", (-0.08, 0.0, 0.0)),
    ("l_hip", "pelvis", (0.09, -0.06, 0.0)),
    ("l_knee", "l_hip", (0.0, -0.40, 0.0)),
    ("l_ankle", "l_knee", (0.0, -0.40, 0.0)),
    ("l_foot", "l_ankle", (0.0, -0.04, 0.10)),
    ("r_hip", "pelvis", (-0.09, -0.06, 0.0)),
    ("r_knee", "r_hip", (0.0, -0.40, 0.0)),
    ("r_ankle", "r_knee", (0.0, -0.40, 0.0)),
    ("r_foot", "r_ankle", (0.0, -0.04, 0.10)),
]

# leaf joint -> offset of the extension bone tip
_EXTENSIONS = {
    "head": (0.0, 0.20, 0.0),
    "l_wrist": (0.10, 0.0, 0.0), "r_wrist": (-0.10, 0.0, 0.0),
    "l_hand": (0.06, 0.0, 0.0), "r_hand": (-0.06, 0.0, 0.0),
    "l_ankle": (0.0, -0.05, 0.14), "r_ankle": (0.0, -0.05, 0.14),
    "l_foot": (0.0, -0.01, 0.06), "r_foot": (0.0, -0.01, 0.06),
}

# tube radius keyed by the bone's end joint (or "<leaf>_ext")
_RADIUS = {
    "spine1": 0.12, "spine2": 0.12, "spine3": 0.13, "neck": 0.05, "head": 0.05,
    "head_ext": 0.09, "collar": 0.045, "shoulder": 0.05, "elbow": 0.045, "wrist": 0.04,
    "hand": 0.035, "wrist_ext": 0.035, "hand_ext": 0.03, "hip": 0.07, "knee": 0.07,
    "ankle": 0.05, "ankle_ext": 0.04, "foot": 0.04, "foot_ext": 0.035,
}

_DIRS = {
    "front": (0, 0, 1), "back": (0, 0, -1), "top": (0, 1, 0), "down": (0, -1, 0),
    "out": None, "left": (1, 0, 0), "right": (-1, 0, 0),
}

# bone key -> [(ring, direction, barycentric?)]; side bones use "l_"/"r_" keys
# resolved per side, "out" meaning laterally outwards.
_MARKERS_18 = {
    "spine1": [(0, "front", False), (0, "back", False), (1, "left", False), (1, "right", False)],
    "spine2": [(1, "front", False), (1, "back", False)],
    "spine3": [(2, "front", False), (2, "back", False)],
    "neck": [(0, "back", False), (1, "front", False)],
    "head": [(1, "back", False)],
    "head_ext": [(2, "front", False), (2, "left", False), (2, "right", False), (1, "back", True)],
    "side": {
        "shoulder": [(2, "top", False)],
        "elbow": [(0, "top", False), (1, "front", False), (2, "back", False)],
        "wrist": [(0, "back", False), (1, "top", False), (2, "front", False)],
        "wrist_ext": [(1, "top", True), (2, "front", False)],
        "hip": [(2, "front", False)],
        "knee": [(0, "out", False), (1, "front", False), (2, "out", False)],
        "ankle": [(0, "front", False), (1, "out", False), (2, "back", False)],
        "ankle_ext": [(0, "back", False), (1, "out", False), (2, "top", True)],
    },
}

_MARKERS_24 = {
    "spine1": [(0, "front", False), (0, "back", False), (1, "left", False), (1, "right", False)],
    "spine2": [(1, "front", False), (1, "back", False), (2, "front", False)],
    "spine3": [(2, "front", False), (2, "back", False)],
    "neck": [(0, "back", False), (1, "front", False)],
    "head": [(1, "back", False)],
    "head_ext": [(2, "front", False), (2, "left", False), (2, "right", False), (1, "back", True)],
    "side": {
        "collar": [(1, "front", False)],
        "shoulder": [(2, "top", False)],
        "elbow": [(0, "top", False), (1, "front", False), (2, "back", False)],
        "wrist": [(0, "back", False), (1, "top", False), (2, "front", False)],
        "hand": [(1, "top", True)],
        "hand_ext": [(2, "front", False)],
        "hip": [(2, "front", False)],
        "knee": [(0, "out", False), (1, "front", False), (2, "out", False)],
        "ankle": [(0, "front", False), (1, "out", False), (2, "back", False)],
        "foot": [(0, "back", False), (1, "out", False)],
        "foot_ext": [(2, "top", True)],
    },
}

LAYOUTS = {"53_18": (_SKELETON_18, _MARKERS_18), "56_24": (_SKELETON_24, _MARKERS_24)}


def _perp_basis(d):
    d = d / np.linalg.norm(d)
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(ref, d)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def _bone_key(end_name):
    if end_name.startswith(("l_", "r_")):
        return end_name[2:]
    return end_name


def build_model_dict(layout="53_18", n_shape=10):
    skeleton, marker_table = LAYOUTS[layout]
    names = [s[0] for s in skeleton]
    index = {n: i for i, n in enumerate(names)}
    parents = [-1 if s[1] is None else index[s[1]] for s in skeleton]
    joints = np.zeros((len(names), 3))
    for i, (_, parent, off) in enumerate(skeleton):
        joints[i] = np.asarray(off) + (joints[index[parent]] if parent else 0.0)
    has_child = {p for p in parents if p >= 0}

    # bones: (skinning joint a, end joint b or None, start pos, end pos, key, side)
    bones = []
    for j, p in enumerate(parents):
        if p >= 0:
            bones.append((p, j, joints[p], joints[j], _bone_key(names[j]), names[j][:2]))
    for j, n in enumerate(names):
        if j not in has_child and n in _EXTENSIONS:
            bones.append((j, None, joints[j], joints[j] + _EXTENSIONS[n], _bone_key(n) + "_ext", n[:2]))

    verts, weights, faces = [], [], []
    caps_at = {j: [] for j in range(len(names))}
    rings_of = []
    P = len(names)

    def w_row(pairs):
        row = np.zeros(P)
        for jj, ww in pairs:
            row[jj] += ww
        return row

    for a, b, start, end, key, side in bones:
        pa = parents[a]
        d = end - start
        e1, e2 = _perp_basis(d)
        r = _RADIUS[key]
        base = len(verts)
        rings = []
        for k, t in enumerate(RING_T):
            centre = start + t * d
            if k == 0 and pa >= 0:
                wr = w_row([(a, 0.7), (pa, 0.3)])
            elif k == 2 and b is not None:
                wr = w_row([(a, 0.75), (b, 0.25)])
            else:
                wr = w_row([(a, 1.0)])
            ring = []
            for h in range(HEX):
                phi = 2 * np.pi * h / HEX
                ring.append(len(verts))
                verts.append(centre + r * (np.cos(phi) * e1 + np.sin(phi) * e2))
                weights.append(wr)
            rings.append(ring)
        c0 = len(verts)
        verts.append(start.copy())
        weights.append(w_row([(a, 0.5), (pa, 0.5)]) if pa >= 0 else w_row([(a, 1.0)]))
        c1 = len(verts)
        verts.append(end.copy())
        weights.append(w_row([(a, 0.5), (b, 0.5)]) if b is not None else w_row([(a, 1.0)]))
        caps_at[a].append(c0)
        if b is not None:
            caps_at[b].append(c1)
        # outward-facing triangles (counter-clockwise seen from outside); quads
        # on the -x side split along the other diagonal, since reflection
        # swaps diagonal types
        for k in range(len(RING_T) - 1):
            lo, hi = rings[k], rings[k + 1]
            for h in range(HEX):
                h2 = (h + 1) % HEX
                if verts[lo[h]][0] + verts[lo[h2]][0] < -1e-9:
                    faces.append((lo[h], lo[h2], hi[h]))
                    faces.append((lo[h2], hi[h2], hi[h]))
                else:
                    faces.append((lo[h], lo[h2], hi[h2]))
                    faces.append((lo[h], hi[h2], hi[h]))
        for h in range(HEX):
            h2 = (h + 1) % HEX
            faces.append((c0, rings[0][h2], rings[0][h]))
            faces.append((c1, rings[-1][h], rings[-1][h2]))
        rings_of.append((a, b, key, side, rings, base, np.asarray(d), e1, e2))

    verts = np.array(verts)
    weights = np.array(weights)
    V = len(verts)
    Jreg = np.zeros((P, V))
    for j, caps in caps_at.items():
        Jreg[j, caps] = 1.0 / len(caps)

    # markers
    landmarks = []
    face_lookup = {}
    for fi, f in enumerate(faces):
        for slot, vi in enumerate(f):
            face_lookup.setdefault(vi, (fi, slot))

    def pick(rings, ring_idx, direction, side):
        if direction == "out":
            vec = np.array([1.0, 0.0, 0.0]) if side == "l_" else np.array([-1.0, 0.0, 0.0])
        else:
            vec = np.asarray(_DIRS[direction], dtype=float)
            if side == "r_" and direction in ("left", "right"):
                vec = -vec
        ids = rings[ring_idx]
        centre = verts[ids].mean(axis=0)
        scores = [(verts[i] - centre) @ vec for i in ids]
        return ids[int(np.argmax(scores))]

    used = set()
    for a, b, key, side, rings, base, d, e1, e2 in rings_of:
        if side in ("l_", "r_"):
            spec = marker_table["side"].get(key, [])
            prefix = side.upper()
        else:
            spec = marker_table.get(key, [])
            prefix = ""
        for ring_idx, direction, bary in spec:
            vid = pick(rings, ring_idx, direction, side)
            if vid in used:
                raise RuntimeError(f"marker vertex collision on {key}")
            used.add(vid)
            name = f"{prefix}{key.upper()}_{direction.upper()}{ring_idx}"
            entry = {"name": name, "kind": "marker", "extrude": True}
            if bary:
                fi, slot = face_lookup[vid]
                bary = [0.2, 0.2, 0.2]
                bary[slot] = 0.6
                entry["face"] = int(fi)
                entry["bary"] = bary
            else:
                entry["vertex_weights"] = [[int(vid), 1.0]]
            landmarks.append(entry)
    landmarks = _mirror_right_markers(landmarks, verts, faces)
    for j, n in enumerate(names):
        landmarks.append({
            "name": n.upper(), "kind": "joint", "extrude": False,
            "vertex_weights": [[int(i), float(Jreg[j, i])] for i in np.flatnonzero(Jreg[j])],
        })

    shapedirs = _blendshapes(verts, rings_of, joints, index)[:n_shape]
    symmetry = [[index[n], index["r_" + n[2:]]] for n in names if n.startswith("l_")]
    return {
        "layout": layout,
        "template": verts.tolist(),
        "faces": [list(map(int, f)) for f in faces],
        "blendshapes": shapedirs.tolist(),
        "weights": weights.tolist(),
        "joint_regressor": Jreg.tolist(),
        "parents": parents,
        "joint_names": names,
        "symmetry": symmetry,
        "landmarks": landmarks,
        "anchor_markers": ["SPINE1_FRONT0", "SPINE1_LEFT1", "SPINE1_RIGHT1"],
        "marker_radius": 0.0095,
    }


def _mirror_right_markers(landmarks, verts, faces):
    """Redefine every R_ marker as the exact x-mirror of its L_ counterpart.

    Tie-breaking in vertex picking is not mirror-aware, so the right side is
    derived from the left through the mesh's vertex mirror map instead.
    """
    key = {tuple(np.round(v, 9)): i for i, v in enumerate(verts)}
    mirror = np.array([key[tuple(np.round(v * [-1, 1, 1], 9))] for v in verts])
    by_name = {e["name"]: e for e in landmarks}
    out = []
    for e in landmarks:
        left = by_name.get("L_" + e["name"][2:]) if e["name"].startswith("R_") else None
        if left is None:
            out.append(e)
            continue
        m = {"name": e["name"], "kind": "marker", "extrude": True}
        if "face" in left:
            # quad diagonals flip under reflection, so the mirrored triangle is
            # generally not a face; the same point as plain vertex weights
            src = faces[left["face"]]
            m["vertex_weights"] = [[int(mirror[v]), float(w)] for v, w in zip(src, left["bary"])]
        else:
            m["vertex_weights"] = [[int(mirror[v]), w] for v, w in left["vertex_weights"]]
        out.append(m)
    return out


def _blendshapes(verts, rings_of, joints, index):
    """Ten mirror-symmetric displacement fields, roughly centimetre scale."""
    V = len(verts)
    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    pelvis_y = joints[index["pelvis"]][1]
    sx = np.sign(x)
    dirs = np.zeros((10, V, 3))
    dirs[0] = 0.04 * verts                                           # stature
    dirs[1, :, 1] = np.where(y < pelvis_y, 0.06 * (y - pelvis_y), 0.0)  # leg length
    dirs[2, :, 0] = np.where(np.abs(x) > 0.17, 0.08 * sx * (np.abs(x) - 0.17), 0.0)  # arms
    for a, b, key, side, rings, base, d, e1, e2 in rings_of:          # girth
        dn = d / np.linalg.norm(d)
        for ring in rings:
            for i in ring:
                rel = verts[i] - joints[a]
                radial = rel - (rel @ dn) * dn
                dirs[3, i] = 0.15 * radial
    dirs[4, :, 1] = np.where(y > pelvis_y, 0.05 * (y - pelvis_y), 0.0)  # torso height
    dirs[5, :, 0] = np.where((np.abs(x) > 0.1) & (y > 1.2), 0.02 * sx, 0.0)  # shoulders
    dirs[6, :, 0] = np.where(y < pelvis_y, 0.015 * sx, 0.0)           # hips
    head = joints[index["head"]]
    dirs[7] = np.where((y > head[1] - 1e-9)[:, None], 0.1 * (verts - head), 0.0)
    dirs[8, :, 2] = np.where((y > pelvis_y) & (y < 1.35) & (z > 0.01), 0.02, 0.0)  # belly
    dirs[9] = 0.01 * np.stack([np.sin(4 * y) * x, 0.5 * np.cos(3 * y), 0.3 * np.sin(5 * y) * z], axis=1)
    return dirs


def write_model(path, layout="53_18"):
    with open(path, "w") as fh:
        json.dump(build_model_dict(layout), fh)
