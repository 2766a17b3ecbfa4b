"""Versioned text format for fitted ensembles.

Line 1 is a JSON header (format name and version, dimension, fit config,
preprocessing record, improvements, importance). Each following line is one
tree as a JSON array of its nodes in pre-order:

    ["S", dim, fraction, cut, theta, count, empirical_left]   interior node
    ["L", count]                                              leaf

Keys are sorted and floats written in round-trip form, so reading and
re-writing a file reproduces it byte for byte.
"""
import json
import logging

import numpy as np

from boosting.geometry import PartitionTree, SplitNode, unit_cube
from boosting.logic import Ensemble, FitConfig
from boosting.tree_cdf import TreeMeasure
from pipeline.preprocess import PreprocessRecord
from utils.constants import FORMAT_VERSION
from utils.errors import ModelError

logger = logging.getLogger(__name__)

FORMAT_NAME = "treeboost-model"


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode_tree(measure):
    nodes = []
    for node in measure.tree.root.iter_nodes():
        if node.is_leaf:
            nodes.append(["L", int(node.count)])
        else:
            nodes.append(["S", int(node.dim), float(node.fraction), float(node.cut), float(node.theta),
                          int(node.count), float(node.empirical_left)])
    return {"restriction": measure.restriction, "nodes": nodes}


def decode_tree(payload, dim):
    tokens = iter(payload["nodes"])
    root = SplitNode(unit_cube(dim))

    def build(node):
        token = next(tokens)
        if token[0] == "L":
            node.count = int(token[1])
            return
        if token[0] != "S" or len(token) != 7:
            raise ModelError(f"Malformed tree node {token!r}")
        _, split_dim, fraction, cut, theta, count, empirical_left = token
        left, right = node.divide(int(split_dim), float(fraction), float(cut))
        node.theta, node.count, node.empirical_left = float(theta), int(count), float(empirical_left)
        build(left)
        build(right)

    try:
        build(root)
    except StopIteration:
        raise ModelError("Tree ended before every node was closed") from None
    if next(tokens, None) is not None:
        raise ModelError("Tree has trailing nodes")
    restriction = payload.get("restriction")
    return TreeMeasure(PartitionTree(root), None if restriction is None else int(restriction))


def dumps(ensemble):
    header = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "dimension": ensemble.dim,
        "trees": len(ensemble),
        "config": ensemble.config.to_dict(),
        "preprocess": ensemble.preprocess.to_dict(),
        "improvements": [float(v) for v in ensemble.improvements],
        "importance": [float(v) for v in ensemble.importance],
        "training_log_density": ensemble.training_log_density,
    }
    lines = [_dumps(header)] + [_dumps(encode_tree(m)) for m in ensemble.measures]
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.splitlines()
    if not lines:
        raise ModelError("Model file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ModelError(f"Model header is not valid JSON: {e}") from e
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ModelError("Not a tree-boosting model file")
    version = header.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
        raise ModelError(f"Unsupported model format_version {version!r} (this build reads up to {FORMAT_VERSION})")
    try:
        dim = int(header["dimension"])
        measures = [decode_tree(json.loads(line), dim) for line in lines[1:]]
        ensemble = Ensemble(
            dim,
            measures=measures,
            improvements=[float(v) for v in header["improvements"]],
            importance=np.array(header["importance"], dtype=np.float64),
            preprocess=PreprocessRecord.from_dict(header["preprocess"]),
            config=FitConfig.from_dict(header["config"]),
        )
    except ModelError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ModelError(f"Model file is inconsistent: {e}") from e
    if len(measures) != header.get("trees") or len(ensemble.improvements) != len(measures):
        raise ModelError(f"Header announces {header.get('trees')} trees but the file holds {len(measures)}")
    return ensemble


def save_model(ensemble, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(dumps(ensemble))
    logger.info(f"Wrote model with {len(ensemble)} trees to {path}")


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise ModelError(f"Cannot read model {path}: {e}") from e
    return loads(text)
