"""Save and load trained pipeline artifacts (model directories).

A model directory holds ``manifest.json`` plus DMAT1 matrices: every
network parameter (biases stored as 1 x k), the all-node neighbor
predictions, and the embedding table in embedding mode.  DMAT1 stores f32,
so reloaded parameters are float32-rounded; predictions agree to that
precision.
"""

import json
import os

import numpy as np

from .dmat import read_dmat, write_dmat
from .errors import FormatError
from .nn import BranchNet, NetConfig, SparseLinear
from .pipeline import PipelineArtifacts, SoftLabels, StageResult


def _net_spec(net):
    return {
        "branch_layers": net.cfg.branch_layers,
        "out_dim": net.cfg.out_dim,
        "hidden": net.cfg.hidden,
        "agg_layers": net.cfg.agg_layers,
        "dropout": net.cfg.dropout,
        "seed": net.cfg.seed,
        "branch_dims": {name: net.branches[name].layers[0].W.shape[0]
                        for name in net.branch_names},
        "branch_kinds": {
            name: ("csr" if isinstance(net.branches[name].layers[0],
                                       SparseLinear) else "dense")
            for name in net.branch_names
        },
    }


def _param_file(stage, name):
    return f"{stage}__{name.replace('.', '_')}.dmat"


def _save_net(net, stage, out_dir):
    for name, arr in net.params():
        mat = arr if arr.ndim == 2 else arr[None, :]
        write_dmat(os.path.join(out_dir, _param_file(stage, name)), mat)


class _SpecSource:
    """Shape-only stand-in used to rebuild a net from a manifest."""

    def __init__(self, dim, kind):
        self.dim = dim
        self.kind = kind


def _load_net(spec, stage, model_dir):
    sources = {name: _SpecSource(spec["branch_dims"][name],
                                 spec["branch_kinds"][name])
               for name in spec["branch_layers"]}
    net = BranchNet(
        NetConfig(
            branch_layers={k: int(v) for k, v in spec["branch_layers"].items()},
            out_dim=spec["out_dim"], hidden=spec["hidden"],
            agg_layers=spec["agg_layers"], dropout=spec["dropout"],
            seed=spec["seed"],
        ),
        sources,
    )
    state = {}
    for name, arr in net.params():
        mat = read_dmat(os.path.join(model_dir, _param_file(stage, name)))
        state[name] = (mat.astype(np.float64) if arr.ndim == 2
                       else mat.astype(np.float64)[0])
    net.load_state(state)
    return net


def save_artifacts(artifacts, out_dir, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format": "glinkx-model-v1",
        "pe_mode": artifacts.pe_mode,
        "message_width": artifacts.message_width,
        "stage2_dropped": artifacts.stage2_dropped,
        "test_accuracy": artifacts.test_accuracy,
        "stage3": _net_spec(artifacts.stage3.net),
    }
    if extra:
        manifest.update(extra)
    _save_net(artifacts.stage3.net, "stage3", out_dir)
    if artifacts.stage2 is not None:
        manifest["stage2"] = _net_spec(artifacts.stage2.net)
        _save_net(artifacts.stage2.net, "stage2", out_dir)
        write_dmat(os.path.join(out_dir, "ytilde.dmat"), artifacts.ytilde)
    if artifacts.pe_mode == "kge" and artifacts.pe_matrix is not None:
        write_dmat(os.path.join(out_dir, "pe.dmat"), artifacts.pe_matrix)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_artifacts(model_dir):
    manifest_path = os.path.join(model_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FormatError(f"{model_dir}: not a model directory")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "glinkx-model-v1":
        raise FormatError(f"{model_dir}: unknown model format")
    stage3 = StageResult(net=_load_net(manifest["stage3"], "stage3",
                                       model_dir),
                         best_epoch=-1, log=[], param_count=0)
    stage2 = None
    ytilde = None
    if "stage2" in manifest:
        stage2 = StageResult(net=_load_net(manifest["stage2"], "stage2",
                                           model_dir),
                             best_epoch=-1, log=[], param_count=0)
        ytilde = read_dmat(os.path.join(model_dir, "ytilde.dmat")).astype(
            np.float64
        )
    pe_matrix = None
    pe_path = os.path.join(model_dir, "pe.dmat")
    if manifest["pe_mode"] == "kge" and os.path.exists(pe_path):
        pe_matrix = read_dmat(pe_path).astype(np.float64)
    n = ytilde.shape[0] if ytilde is not None else None
    c = manifest["message_width"]
    yprime = None
    if n is not None:
        yprime = SoftLabels(probs=np.full((n, c), 1.0 / c),
                            valid=np.zeros(n, dtype=bool))
    return PipelineArtifacts(
        stage2=stage2, stage3=stage3, ytilde=ytilde, yprime=yprime,
        probs=None, test_accuracy=manifest.get("test_accuracy", float("nan")),
        edge_passes=0, message_width=c, pe_mode=manifest["pe_mode"],
        pe_matrix=pe_matrix, stage2_dropped=manifest["stage2_dropped"],
        logs={},
    ), manifest
