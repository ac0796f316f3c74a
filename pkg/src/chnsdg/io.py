"""Output writers: legacy-ASCII VTK, exact state snapshots and diagnostics CSV."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

VTK_TRIANGLE = 5
DISPLAY_CAP = 5e-2


def _fmt(a: np.ndarray) -> str:
    # 17 significant digits round-trip doubles exactly
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(a))


def write_vtk_grid(path, mesh, cell_data=None, point_data=None, title="chnsdg") -> Path:
    """Write a triangle mesh with attached data as a legacy-ASCII unstructured grid.

    ``cell_data`` / ``point_data`` map names to arrays of shape ``(n,)``
    (scalars) or ``(n, 2)`` (vectors, padded with a zero z-component).
    """
    path = Path(path)
    nv, nel = mesh.n_vertices, mesh.n_elements
    pts = np.column_stack([mesh.vertices, np.zeros(nv)])
    cells = np.column_stack([np.full(nel, 3), mesh.elements])
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
        _fmt(pts),
        f"CELLS {nel} {4 * nel}",
        "\n".join(" ".join(str(int(v)) for v in row) for row in cells),
        f"CELL_TYPES {nel}",
        "\n".join([str(VTK_TRIANGLE)] * nel),
    ]
    for header, n, data in (("CELL_DATA", nel, cell_data), ("POINT_DATA", nv, point_data)):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"{name}: expected {n} rows, got {arr.shape}")
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", "\n".join(f"{v:.17g}" for v in arr)]
            else:
                lines += [f"VECTORS {name} double", _fmt(np.column_stack([arr, np.zeros(n)]))]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Minimal reader for files produced by :func:`write_vtk_grid`.

    Returns a dict with ``points``, ``cells``, ``cell_data`` and ``point_data``.
    """
    tokens = Path(path).read_text().split("\n")
    out = {"title": tokens[1], "cell_data": {}, "point_data": {}}
    words = " ".join(tokens[2:]).split()
    i = 0
    section = None
    counts = {}
    while i < len(words):
        w = words[i]
        if w == "POINTS":
            n = int(words[i + 1])
            out["points"] = np.array(words[i + 3 : i + 3 + 3 * n], dtype=float).reshape(n, 3)
            i += 3 + 3 * n
        elif w == "CELLS":
            n, size = int(words[i + 1]), int(words[i + 2])
            out["cells"] = np.array(words[i + 3 : i + 3 + size], dtype=np.int64).reshape(n, 4)[:, 1:]
            i += 3 + size
        elif w == "CELL_TYPES":
            n = int(words[i + 1])
            i += 2 + n
        elif w in ("CELL_DATA", "POINT_DATA"):
            section = "cell_data" if w == "CELL_DATA" else "point_data"
            counts[section] = int(words[i + 1])
            i += 2
        elif w == "SCALARS":
            name, n = words[i + 1], counts[section]
            # SCALARS name type ncomp LOOKUP_TABLE default
            out[section][name] = np.array(words[i + 6 : i + 6 + n], dtype=float)
            i += 6 + n
        elif w == "VECTORS":
            name, n = words[i + 1], counts[section]
            out[section][name] = np.array(words[i + 3 : i + 3 + 3 * n], dtype=float).reshape(n, 3)[:, :2]
            i += 3 + 3 * n
        else:
            i += 1
    return out


def scaled_velocity(u: np.ndarray, cap: float = DISPLAY_CAP) -> np.ndarray:
    """Rescale point velocities ``(n, 2)`` so the largest magnitude is at most ``cap``."""
    umax = float(np.max(np.hypot(u[:, 0], u[:, 1]))) if len(u) else 0.0
    if umax >= cap:
        return u * (cap / umax)
    return u.copy()


def write_vtk(state, disc, path, title=None) -> Path:
    """Write a state: cell phi and mean pressure, point Pi_1^h phi, mu, u and u_s."""
    mesh = disc.mesh
    nv = mesh.n_vertices
    nds = disc.V.dof_count
    phih = disc.lumped_projector @ state.phi if state.phih is None else state.phih
    # P2 vertex dofs are nodal values and the bubble vanishes at vertices
    u = np.column_stack([state.u[:nv], state.u[nds : nds + nv]])
    p_mean = state.p[disc.Q.dof_map].mean(axis=1)
    return write_vtk_grid(
        path,
        mesh,
        cell_data={"phi": state.phi, "p": p_mean},
        point_data={"phi_h": phih, "mu": state.mu, "u": u, "u_s": scaled_velocity(u)},
        title=title or f"chnsdg t={state.t:.17g}",
    )


def save_state(path, state, step: int) -> Path:
    """Exact binary snapshot used for restarts and invariant replays."""
    path = Path(path)
    np.savez(path, u=state.u, p=state.p, phi=state.phi, mu=state.mu, t=np.float64(state.t), step=np.int64(step))
    return path


def load_state(path):
    from .system import State

    with np.load(path) as z:
        st = State(z["u"].copy(), z["p"].copy(), z["phi"].copy(), z["mu"].copy(), float(z["t"]))
        return st, int(z["step"])


class DiagnosticsWriter:
    """Append-only CSV; flushed every row so partial runs keep their history."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, row) -> None:
        self._w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, j] for j, name in enumerate(header)}
