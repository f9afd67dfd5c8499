"""Model serialization: strict, canonical JSON documents.

A model file is a single JSON object with exactly the keys ``family``,
``version``, ``backend``, ``dims``, and ``params``.  Arrays are stored as
``{"shape": [...], "data": [flat row-major floats]}``.  Serialization is
canonical — sorted keys, no whitespace, floats printed with 17 significant
digits — so save/load/save is byte-identical.  Unknown keys anywhere are
rejected.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .hypergraph import BandedLowRankScore, DenseScore, LowRankScore
from .hmm import BernoulliEmission, CategoricalEmission, HmmModel
from .hsmm import HsmmModel
from .lowrank import BandedLowRankFactors, BandMatrix, LowRankFactors
from .pcfg import PcfgModel

__all__ = [
    "ModelFileError",
    "MODEL_VERSION",
    "save_model",
    "load_model",
    "model_to_doc",
    "doc_to_model",
    "canonical_json",
]

MODEL_VERSION = 1


class ModelFileError(ValueError):
    """The document is not a valid model file."""


def canonical_json(doc) -> str:
    """Deterministic JSON text: sorted keys, 17-significant-digit floats."""
    return _encode(doc)


def _encode(x) -> str:
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if not math.isfinite(v):
            raise ModelFileError("model files cannot store non-finite numbers")
        return format(v, ".17g")
    if isinstance(x, dict):
        items = sorted(x.items())
        return "{" + ",".join(f"{json.dumps(k)}:{_encode(v)}" for k, v in items) + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in x) + "]"
    raise ModelFileError(f"cannot serialize {type(x).__name__}")


def _array_doc(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _read_array(doc, name: str, shape: tuple) -> np.ndarray:
    if not isinstance(doc, dict) or set(doc) != {"shape", "data"}:
        raise ModelFileError(f"param {name!r} must be an object with keys shape/data")
    got_shape = doc["shape"]
    if not (isinstance(got_shape, list) and all(isinstance(s, int) for s in got_shape)):
        raise ModelFileError(f"param {name!r} has an invalid shape")
    if tuple(got_shape) != shape:
        raise ModelFileError(f"param {name!r} has shape {got_shape}, expected {list(shape)}")
    data = doc["data"]
    n = int(np.prod(shape)) if shape else 1
    if not isinstance(data, list) or len(data) != n:
        raise ModelFileError(f"param {name!r} data length does not match its shape")
    arr = np.array(data, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ModelFileError(f"param {name!r} contains non-finite values")
    return arr


def _require_keys(obj, keys: set, what: str) -> None:
    if not isinstance(obj, dict):
        raise ModelFileError(f"{what} must be a JSON object")
    if set(obj) != keys:
        unknown = set(obj) - keys
        missing = keys - set(obj)
        parts = []
        if unknown:
            parts.append(f"unknown keys {sorted(unknown)}")
        if missing:
            parts.append(f"missing keys {sorted(missing)}")
        raise ModelFileError(f"{what}: " + ", ".join(parts))


def _int_field(dims, key) -> int:
    v = dims.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ModelFileError(f"dims[{key!r}] must be a positive integer")
    return v


def _transition_doc(score) -> tuple[str, dict, dict]:
    """(backend, extra dims, named params) for a square transition handle."""
    if isinstance(score, DenseScore):
        if score.head_scale is not None:
            raise ModelFileError("cannot serialize a transition with fused constants")
        return "dense", {}, {"transition": _array_doc(score.matrix)}
    if isinstance(score, LowRankScore):
        f = score.factors
        if score.head_scale is not None or f.c_side != "head":
            raise ModelFileError("cannot serialize a transition with fused constants")
        return "lowrank", {"N": f.n_features}, {
            "trans_u": _array_doc(f.U),
            "trans_v": _array_doc(f.V),
            "trans_c": _array_doc(f.c),
        }
    if isinstance(score, BandedLowRankScore):
        f = score.factors
        if score.head_scale is not None:
            raise ModelFileError("cannot serialize a transition with fused constants")
        return "banded", {
            "N": f.n_features,
            "band_half_width": f.theta.half_width,
        }, {
            "trans_u": _array_doc(f.low_rank.effective_u()),
            "trans_v": _array_doc(f.low_rank.effective_v()),
            "trans_band": _array_doc(f.theta.data),
            "trans_z": _array_doc(f.Z),
        }
    raise ModelFileError(f"unsupported transition backend {type(score).__name__}")


def _transition_from_doc(backend: str, dims, params, L: int, consumed: set):
    if backend == "dense":
        consumed.add("transition")
        return DenseScore(_read_array(params.get("transition"), "transition", (L, L)))
    if backend == "lowrank":
        n = _int_field(dims, "N")
        consumed.update(("trans_u", "trans_v", "trans_c"))
        u = _read_array(params.get("trans_u"), "trans_u", (L, n))
        v = _read_array(params.get("trans_v"), "trans_v", (L, n))
        c = _read_array(params.get("trans_c"), "trans_c", (L,))
        return LowRankScore(LowRankFactors(u, v, c, "head"))
    if backend == "banded":
        n = _int_field(dims, "N")
        h = dims.get("band_half_width")
        if not isinstance(h, int) or isinstance(h, bool) or h < 0:
            raise ModelFileError("dims['band_half_width'] must be a nonnegative integer")
        consumed.update(("trans_u", "trans_v", "trans_band", "trans_z"))
        u = _read_array(params.get("trans_u"), "trans_u", (L, n))
        v = _read_array(params.get("trans_v"), "trans_v", (L, n))
        band = _read_array(params.get("trans_band"), "trans_band", (L, 2 * h + 1))
        z = _read_array(params.get("trans_z"), "trans_z", (L,))
        factors = BandedLowRankFactors(
            LowRankFactors(u, v, np.ones(L), "head"), BandMatrix(h, band), z
        )
        return BandedLowRankScore(factors)
    raise ModelFileError(f"unknown backend {backend!r}")


def model_to_doc(model) -> dict:
    if isinstance(model, HmmModel):
        backend, extra_dims, params = _transition_doc(model.transition)
        if isinstance(model.emission, CategoricalEmission):
            kind, width = "categorical", model.emission.vocab
        elif isinstance(model.emission, BernoulliEmission):
            kind, width = "bernoulli", model.emission.n_bits
        else:
            raise ModelFileError("unsupported emission type")
        dims = {"L": model.n_states, "vocab": width, "emission": kind, **extra_dims}
        params.update({
            "start": _array_doc(model.start),
            "emission": _array_doc(model.emission.probs),
        })
        return {"family": "hmm", "version": MODEL_VERSION, "backend": backend,
                "dims": dims, "params": params}

    if isinstance(model, HsmmModel):
        backend, extra_dims, params = _transition_doc(model.transition)
        dims = {"L": model.n_states, "frame_dim": model.frame_dim,
                "max_duration": model.max_duration, **extra_dims}
        params.update({
            "start": _array_doc(model.start),
            "log_lambda": _array_doc(model.log_lambda),
            "means": _array_doc(model.means),
            "variances": _array_doc(model.variances),
        })
        return {"family": "hsmm", "version": MODEL_VERSION, "backend": backend,
                "dims": dims, "params": params}

    if isinstance(model, PcfgModel):
        nN, nP = model.n_nonterminals, model.n_preterminals
        if isinstance(model.rules_nn, DenseScore):
            backend = "dense"
            extra_dims = {}
            nn_params = {"rules_nn": _array_doc(model.rules_nn.matrix)}
        elif isinstance(model.rules_nn, LowRankScore):
            f = model.rules_nn.factors
            if f.c_side != "head":
                raise ModelFileError("cannot serialize tail-side constants")
            backend = "lowrank"
            extra_dims = {"N": f.n_features}
            nn_params = {
                "nn_u": _array_doc(f.U),
                "nn_v": _array_doc(f.V),
                "nn_c": _array_doc(f.c),
            }
        else:
            raise ModelFileError("unsupported NN-block backend for serialization")
        for name in ("rules_np", "rules_pn", "rules_pp"):
            block = getattr(model, name)
            if not isinstance(block, DenseScore):
                raise ModelFileError(f"{name} must be dense")
        params = {
            "start": _array_doc(model.start),
            "rules_np": _array_doc(model.rules_np.matrix),
            "rules_pn": _array_doc(model.rules_pn.matrix),
            "rules_pp": _array_doc(model.rules_pp.matrix),
            "terminal": _array_doc(model.terminal),
            **nn_params,
        }
        return {"family": "pcfg", "version": MODEL_VERSION, "backend": backend,
                "dims": {"nN": nN, "nP": nP, "vocab": model.vocab, **extra_dims},
                "params": params}

    raise ModelFileError(f"unsupported model type {type(model).__name__}")


def doc_to_model(doc):
    """Validate a parsed document and build the model. Returns (family, model)."""
    _require_keys(doc, {"family", "version", "backend", "dims", "params"}, "model file")
    if doc["version"] != MODEL_VERSION:
        raise ModelFileError(f"unsupported version {doc['version']!r}")
    family = doc["family"]
    backend = doc["backend"]
    dims = doc["dims"]
    params = doc["params"]
    if backend not in ("dense", "lowrank", "banded"):
        raise ModelFileError(f"unknown backend {backend!r}")
    if not isinstance(dims, dict) or not isinstance(params, dict):
        raise ModelFileError("dims and params must be JSON objects")

    backend_dims = {"lowrank": {"N"}, "banded": {"N", "band_half_width"}}.get(backend, set())
    try:
        if family == "hmm":
            _require_keys(dims, {"L", "vocab", "emission"} | backend_dims, "dims")
            L = _int_field(dims, "L")
            width = _int_field(dims, "vocab")
            kind = dims["emission"]
            if kind not in ("categorical", "bernoulli"):
                raise ModelFileError(f"unknown emission kind {kind!r}")
            consumed = {"start", "emission"}
            transition = _transition_from_doc(backend, dims, params, L, consumed)
            _require_keys(params, consumed, "params")
            start = _read_array(params["start"], "start", (L,))
            probs = _read_array(params["emission"], "emission", (L, width))
            emission = (CategoricalEmission(probs) if kind == "categorical"
                        else BernoulliEmission(probs))
            return family, HmmModel(start, transition, emission)

        if family == "hsmm":
            _require_keys(dims, {"L", "frame_dim", "max_duration"} | backend_dims, "dims")
            L = _int_field(dims, "L")
            d = _int_field(dims, "frame_dim")
            M = _int_field(dims, "max_duration")
            consumed = {"start", "log_lambda", "means", "variances"}
            transition = _transition_from_doc(backend, dims, params, L, consumed)
            _require_keys(params, consumed, "params")
            return family, HsmmModel(
                _read_array(params["start"], "start", (L,)),
                transition,
                _read_array(params["log_lambda"], "log_lambda", (L,)),
                M,
                _read_array(params["means"], "means", (L, d)),
                _read_array(params["variances"], "variances", (L, d)),
            )

        if family == "pcfg":
            if backend == "banded":
                raise ModelFileError("the NN block has no banded form")
            _require_keys(dims, {"nN", "nP", "vocab"} | backend_dims, "dims")
            nN = _int_field(dims, "nN")
            nP = _int_field(dims, "nP")
            vocab = _int_field(dims, "vocab")
            base = {"start", "rules_np", "rules_pn", "rules_pp", "terminal"}
            if backend == "dense":
                _require_keys(params, base | {"rules_nn"}, "params")
                nn = DenseScore(_read_array(params["rules_nn"], "rules_nn", (nN, nN * nN)))
            else:
                _require_keys(params, base | {"nn_u", "nn_v", "nn_c"}, "params")
                n = _int_field(dims, "N")
                nn = LowRankScore(LowRankFactors(
                    _read_array(params["nn_u"], "nn_u", (nN, n)),
                    _read_array(params["nn_v"], "nn_v", (nN * nN, n)),
                    _read_array(params["nn_c"], "nn_c", (nN,)),
                    "head",
                ))
            return family, PcfgModel(
                _read_array(params["start"], "start", (nN,)),
                nn,
                DenseScore(_read_array(params["rules_np"], "rules_np", (nN, nN * nP))),
                DenseScore(_read_array(params["rules_pn"], "rules_pn", (nN, nP * nN))),
                DenseScore(_read_array(params["rules_pp"], "rules_pp", (nN, nP * nP))),
                _read_array(params["terminal"], "terminal", (nP, vocab)),
            )
    except ModelFileError:
        raise
    except ValueError as exc:
        raise ModelFileError(str(exc)) from exc
    raise ModelFileError(f"unknown family {family!r}")


def save_model(model, path) -> None:
    text = canonical_json(model_to_doc(model))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def load_model(path):
    """Returns (family, model); raises ModelFileError on any defect."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelFileError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"model file is not valid JSON: {exc}") from exc
    return doc_to_model(doc)
