"""Model files and artifact files.

Model files are YAML key-value trees; probabilities may be decimals or
exact rationals written "a/b" (rationals are kept exact downstream).

Artifacts are JSON with insertion-ordered keys and every float rendered
with 17 significant digits, so identical runs produce identical bytes and
diffs are meaningful.  Timestamps never go into artifacts.
"""

from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from .errors import ModelValidationError
from .model import MatingFunction, ModelSpec, OffspringLaw


# ---------------------------------------------------------------------------
# Deterministic JSON
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return json.dumps(None)
    if x == int(x) and abs(x) < 1e16:
        # keep integral floats readable but unambiguous
        return format(x, ".1f")
    return format(x, ".17g")


def _encode(obj, out: list[str]) -> None:
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, v in enumerate(seq):
            if i:
                out.append(", ")
            _encode(v, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, Fraction):
        out.append(format_float(float(obj)))
    else:
        out.append(json.dumps(str(obj)))


def dumps(obj) -> str:
    """JSON text with fixed key order and 17-significant-digit floats."""
    out: list[str] = []
    _encode(obj, out)
    return "".join(out) + "\n"


def write_artifact(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_artifact(path: str | Path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def model_from_dict(doc: dict) -> ModelSpec:
    try:
        p, q = int(doc["p"]), int(doc["q"])
        mdoc = doc["mating"]
        kind = mdoc["kind"]
    except (KeyError, TypeError) as exc:
        raise ModelValidationError(f"model file is missing required field: {exc}") from exc

    params = mdoc.get("params") or {}
    table = None
    box = None
    if kind == "custom_table":
        box = int(params["box"])
        table = {}
        for w, val in params["table"]:
            w = tuple(int(c) for c in (w if isinstance(w, (list, tuple)) else [w]))
            val = tuple(int(c) for c in (val if isinstance(val, (list, tuple)) else [val]))
            table[w] = val
    cert = mdoc.get("certificate") or {}
    alpha = cert.get("alpha")
    beta = cert.get("beta")
    mating = MatingFunction(
        kind=kind, p=p, q=q, table=table, box=box,
        alpha=None if alpha is None else np.asarray(alpha, dtype=float),
        beta=None if beta is None else np.asarray(beta, dtype=float),
    )

    laws = []
    for entry in doc["offspring"]:
        support = [(tuple(int(c) for c in v), pr) for v, pr in entry["support"]]
        laws.append(OffspringLaw(support))
    return ModelSpec(p=p, q=q, mating=mating, offspring=laws)


def model_to_dict(spec: ModelSpec) -> dict:
    mdoc: dict = {"kind": spec.mating.kind}
    if spec.mating.kind == "custom_table":
        mdoc["params"] = {
            "box": spec.mating.box,
            "table": [[list(k), list(v)] for k, v in sorted(spec.mating.table.items())],
        }
    if spec.mating.alpha is not None:
        mdoc["certificate"] = {
            "alpha": [float(a) for a in spec.mating.alpha],
            "beta": [float(b) for b in spec.mating.beta],
        }
    return {
        "p": spec.p,
        "q": spec.q,
        "mating": mdoc,
        "offspring": [
            {"support": [[list(v), str(pr) if isinstance(pr, Fraction) else float(pr)]
                         for v, pr in law.support]}
            for law in spec.offspring
        ],
    }


def load_model(path: str | Path) -> ModelSpec:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ModelValidationError(f"{path} does not contain a model mapping")
    return model_from_dict(doc)


def save_model(spec: ModelSpec, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(model_to_dict(spec), sort_keys=False))
    return path


def model_digest(spec: ModelSpec) -> str:
    """Stable hash of the model description, recorded in batch artifacts."""
    canon = json.dumps(model_to_dict(spec), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Kernel files: sparse triplets + state-index sidecar + metadata
# ---------------------------------------------------------------------------

def write_kernel(K, directory: str | Path, stem: str = "kernel") -> dict[str, Path]:
    """Write a kernel as `<stem>.txt` triplets, `<stem>_states.txt`, `<stem>_meta.json`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    coo = K.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[k]}\t{coo.col[k]}\t{format_float(float(coo.data[k]))}"
             for k in order]
    triplets = directory / f"{stem}.txt"
    triplets.write_text("\n".join(lines) + ("\n" if lines else ""))
    states = directory / f"{stem}_states.txt"
    states.write_text("".join(f"{i}\t{' '.join(str(c) for c in z)}\n"
                              for i, z in enumerate(K.states)))
    meta = directory / f"{stem}_meta.json"
    write_artifact(meta, {
        "radius": K.radius,
        "p": K.p,
        "n_states": K.n_states,
        "build_mode": K.build_mode,
        "samples": K.samples,
        "seed": K.seed,
        "absorbed": K.absorbed,
        "escaped": K.escaped,
    })
    return {"triplets": triplets, "states": states, "meta": meta}


def read_kernel(directory: str | Path, stem: str = "kernel"):
    from scipy.sparse import csr_matrix

    from .kernel import TruncatedKernel

    directory = Path(directory)
    meta = read_artifact(directory / f"{stem}_meta.json")
    states = []
    for line in (directory / f"{stem}_states.txt").read_text().splitlines():
        _, coords = line.split("\t")
        states.append(tuple(int(c) for c in coords.split()))
    rows, cols, vals = [], [], []
    text = (directory / f"{stem}.txt").read_text()
    for line in text.splitlines():
        i, j, v = line.split("\t")
        rows.append(int(i))
        cols.append(int(j))
        vals.append(float(v))
    n = meta["n_states"]
    matrix = csr_matrix((vals, (rows, cols)), shape=(n, n))
    return TruncatedKernel(
        radius=meta["radius"], p=meta["p"], states=states, matrix=matrix,
        absorbed=np.array(meta["absorbed"], dtype=float),
        escaped=np.array(meta["escaped"], dtype=float),
        build_mode=meta["build_mode"], samples=meta["samples"], seed=meta["seed"],
    )
