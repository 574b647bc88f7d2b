"""Versioned JSON model archives.

Archives carry a format version and a sha256 content fingerprint; loading
validates both. Floats round-trip exactly through JSON's shortest-repr
encoding, so a saved model predicts bit-identically to the original.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .baselines import SmootherModel, TwoStepModel
from .forest import SpatialForest
from .geometry import KnotSet, SpatialBasis
from .tree import SpatialTree, SplitRecord

FORMAT_VERSION = 1


class ModelArchiveError(ValueError):
    """Raised for unreadable, corrupted, or unsupported model files."""


def _basis_to_dict(basis: SpatialBasis | None):
    if basis is None:
        return None
    return {
        "knots": basis.knot_set.knots.tolist(),
        "selection_seed": basis.knot_set.selection_seed,
        "kind": basis.kind,
        "scale": basis.scale,
        "column_norms": basis.column_norms.tolist(),
        "kept": basis.kept.tolist(),
    }


def _basis_from_dict(d) -> SpatialBasis | None:
    if d is None:
        return None
    return SpatialBasis(
        knot_set=KnotSet(knots=np.asarray(d["knots"], dtype=float),
                         selection_seed=int(d["selection_seed"])),
        kind=d["kind"],
        scale=d["scale"],
        column_norms=np.asarray(d["column_norms"], dtype=float),
        kept=np.asarray(d["kept"], dtype=int),
    )


def _tree_to_dict(tree: SpatialTree) -> dict:
    return {
        "splits": [
            {"node_id": rec.node_id, "covariate_index": rec.covariate_index,
             "cutpoint": rec.cutpoint,
             "member_indices": np.asarray(rec.member_indices).tolist()}
            for rec in tree.splits
        ],
        "leaf_weights": tree.leaf_weights.tolist(),
        "eta_hat": tree.eta_hat.tolist(),
        "basis": _basis_to_dict(tree.basis),
        "delta": tree.delta,
        "in_bag_indices": np.asarray(tree.in_bag_indices).tolist(),
        "internal_nodes": [[int(k), int(v[0]), float(v[1]), int(v[2]), int(v[3])]
                           for k, v in sorted(tree.internal_nodes.items())],
        "leaf_values": [[int(k), float(v)] for k, v in sorted(tree.leaf_values.items())],
        "n_covariates": tree.n_covariates,
    }


def _tree_from_dict(d) -> SpatialTree:
    return SpatialTree(
        splits=[
            SplitRecord(node_id=int(s["node_id"]),
                        covariate_index=int(s["covariate_index"]),
                        cutpoint=float(s["cutpoint"]),
                        member_indices=np.asarray(s["member_indices"], dtype=np.intp))
            for s in d["splits"]
        ],
        leaf_weights=np.asarray(d["leaf_weights"], dtype=float),
        eta_hat=np.asarray(d["eta_hat"], dtype=float),
        basis=_basis_from_dict(d["basis"]),
        delta=float(d["delta"]),
        in_bag_indices=np.asarray(d["in_bag_indices"], dtype=np.intp),
        internal_nodes={int(row[0]): (int(row[1]), float(row[2]), int(row[3]), int(row[4]))
                        for row in d["internal_nodes"]},
        leaf_values={int(k): float(v) for k, v in d["leaf_values"]},
        n_covariates=int(d["n_covariates"]),
    )


def _forest_to_dict(forest: SpatialForest) -> dict:
    return {
        "trees": [_tree_to_dict(t) for t in forest.trees],
        "bags": [np.asarray(b).tolist() for b in forest.bags],
        "delta_selected": forest.delta_selected,
        "variant": forest.variant,
        "global_eta": None if forest.global_eta is None else forest.global_eta.tolist(),
        "global_basis": _basis_to_dict(forest.global_basis),
        "kappa_hat": forest.kappa_hat,
        "covariate_basis": _basis_to_dict(forest.covariate_basis),
        "n_train": forest.n_train,
    }


def _forest_from_dict(d) -> SpatialForest:
    return SpatialForest(
        trees=[_tree_from_dict(t) for t in d["trees"]],
        bags=[np.asarray(b, dtype=np.intp) for b in d["bags"]],
        delta_selected=float(d["delta_selected"]),
        variant=d["variant"],
        global_eta=None if d["global_eta"] is None
        else np.asarray(d["global_eta"], dtype=float),
        global_basis=_basis_from_dict(d["global_basis"]),
        kappa_hat=d["kappa_hat"],
        covariate_basis=_basis_from_dict(d["covariate_basis"]),
        n_train=int(d["n_train"]),
    )


def _model_to_typed_dict(model) -> dict:
    if isinstance(model, SpatialForest):
        return {"model_type": "forest", "payload": _forest_to_dict(model)}
    if isinstance(model, SmootherModel):
        return {"model_type": "smoother",
                "payload": {"basis": _basis_to_dict(model.basis),
                            "coefficients": model.coefficients.tolist(),
                            "intercept": model.intercept,
                            "lambda_selected": model.lambda_selected}}
    if isinstance(model, TwoStepModel):
        return {"model_type": "two_step",
                "payload": {"order": model.order,
                            "stage1": _model_to_typed_dict(model.stage1),
                            "stage2": _model_to_typed_dict(model.stage2)}}
    raise ModelArchiveError(f"cannot archive model of type {type(model).__name__}")


def _model_from_typed_dict(d):
    kind = d["model_type"]
    if kind == "forest":
        return _forest_from_dict(d["payload"])
    if kind == "smoother":
        p = d["payload"]
        return SmootherModel(basis=_basis_from_dict(p["basis"]),
                             coefficients=np.asarray(p["coefficients"], dtype=float),
                             intercept=float(p["intercept"]),
                             lambda_selected=float(p["lambda_selected"]))
    if kind == "two_step":
        p = d["payload"]
        return TwoStepModel(order=p["order"],
                            stage1=_model_from_typed_dict(p["stage1"]),
                            stage2=_model_from_typed_dict(p["stage2"]))
    raise ModelArchiveError(f"unknown model_type {kind!r}")


def _canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_model(model, path, covariate_names=None, coord_names=None,
               response_name=None, seed: int | None = None) -> None:
    """Write a fingerprinted, versioned model archive."""
    doc = {
        "format_version": FORMAT_VERSION,
        "column_names": {
            "covariates": list(covariate_names or []),
            "coords": list(coord_names or []),
            "response": response_name,
        },
        "seed": seed,
    }
    doc.update(_model_to_typed_dict(model))
    doc["fingerprint"] = hashlib.sha256(_canonical(doc).encode()).hexdigest()
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path):
    """Read an archive back; returns ``(model, meta)``.

    Raises ModelArchiveError on parse failure, version mismatch, or a
    fingerprint that does not match the content.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelArchiveError(f"corrupted model file (not parseable): {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelArchiveError("corrupted model file: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelArchiveError(
            f"unsupported format_version {doc['format_version']} "
            f"(this build reads version {FORMAT_VERSION})"
        )
    stored = doc.pop("fingerprint", None)
    actual = hashlib.sha256(_canonical(doc).encode()).hexdigest()
    if stored != actual:
        raise ModelArchiveError("fingerprint mismatch: model file is corrupted")
    model = _model_from_typed_dict(doc)
    meta = {"column_names": doc["column_names"], "seed": doc["seed"],
            "model_type": doc["model_type"]}
    return model, meta
