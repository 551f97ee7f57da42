"""Command-line front end: file-in, file-out workflows over one config.

Subcommands
    ingest       repair + standardize a CSV, export dataset and report
    cluster      group the input series spectrally, export assignment
    train        build and fit a model, export checkpoint and history
    eval         score a checkpoint on a data slice, export predictions
    compare      baselines vs candidate nets over repeated target picks
    param-count  layer plan and parameter count, no data needed

A single YAML document (the one positional argument) configures every
command; ``--seed``, ``--out`` and repeatable ``--override key=value``
adjust it without editing the file.  The resolved settings are hashed
(sha256 over canonical JSON, output directory excluded) and the hash is
stamped into every artifact: a ``# config <hash>`` first line on CSV
files, a ``config_hash`` key in JSON files, a ``meta`` block in
checkpoints.  Nothing records wall-clock data, so rerunning a command
over identical inputs reproduces byte-identical files.

Exit codes: 0 success, 2 bad configuration, 3 bad data, 4 numerical
failure (divergence, singular systems, non-convergence).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import data as D
from . import models as M
from . import spectral as S
from . import training as R
from .errors import ConfigError, DataError, GcnnError, NumericalError, ShapeError

COMMANDS = ("ingest", "cluster", "train", "eval", "compare", "param-count")

_TOP_KEYS = ("data", "split", "model", "train", "eval", "compare", "seed", "out")

# model keys a config may set; geometry defaults are desk-scale, not the
# full-size presets, so a bare config trains something in minutes
_MODEL_DEFAULTS: dict = {
    "preset": None,
    "family": "cnn",
    "grouping": "none",
    "groups": 1,
    "iterations": 2,
    "stage_channels": [32, 32],
    "kernel_width": 3,
    "pool_window": 4,
    "pool_stride": 4,
    "pool_before": [],
    "dense_units": [16, 1],
    "hidden_activation": "relu",
    "output_activation": "linear",
    "input_channels": None,
    "input_width": None,
}

_DATA_DEFAULTS: dict = {"path": None, "target": None, "window": None, "max_gap": D.DEFAULT_MAX_GAP}
_SPLIT_DEFAULTS: dict = {"train_fraction": 0.9, "mode": "chronological"}
_TRAIN_DEFAULTS: dict = {
    "epochs": 200,
    "batch_size": 16,
    "learning_rate": 1e-3,
    "momentum": 0.0,
    "val_fraction": 0.1,
    "clip_norm": 10.0,
    "assignment": None,
}
_EVAL_DEFAULTS: dict = {"checkpoint": None, "split": "test"}
_COMPARE_DEFAULTS: dict = {"repeats": 3, "ridge_penalty": 1.0, "targets": None, "candidates": []}

# reserved row names in compare summaries
_BASELINES = ("linear", "ridge")


def _type_name(v) -> str:
    return type(v).__name__


def _as_int(path: str, v) -> int:
    # bool is an int subclass; reject it explicitly
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {_type_name(v)}")
    return v


def _as_float(path: str, v) -> float:
    # YAML 1.1 leaves bare exponents like 1e-3 as strings; the schema
    # knows this field is numeric, so finish the parse here
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{path}: expected a number, got {v!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {_type_name(v)}")
    return float(v)


def _as_str(path: str, v) -> str:
    if not isinstance(v, str) or not v:
        raise ConfigError(f"{path}: expected a non-empty string, got {v!r}")
    return v


def _as_int_list(path: str, v) -> list[int]:
    if not isinstance(v, list):
        raise ConfigError(f"{path}: expected a list of integers, got {_type_name(v)}")
    return [_as_int(f"{path}[{i}]", x) for i, x in enumerate(v)]


def _reject_unknown(section: dict, known, where: str) -> None:
    extra = sorted(set(section) - set(known))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}: unknown setting")


def _resolve_model(section: dict, where: str = "model") -> dict:
    """Merge a model section over its preset (or the defaults).

    Returns a fully-populated dict in config vocabulary: ``family`` is
    cnn/rcnn, geometry keys may stay None until data supplies them.
    """
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping, got {_type_name(section)}")
    _reject_unknown(section, _MODEL_DEFAULTS, where)
    preset_name = section.get("preset")
    if preset_name is not None:
        spec = M.preset(_as_str(f"{where}.preset", preset_name))
        base = spec.to_dict()
        base["family"] = "rcnn" if base.pop("recurrent") else "cnn"
    else:
        base = {k: v for k, v in _MODEL_DEFAULTS.items() if k != "preset"}
    for key, value in section.items():
        if key != "preset":
            base[key] = value

    out: dict = {"preset": preset_name}
    out["family"] = _as_str(f"{where}.family", base["family"])
    if out["family"] not in ("cnn", "rcnn"):
        raise ConfigError(f"{where}.family: must be cnn or rcnn, got {out['family']!r}")
    out["grouping"] = _as_str(f"{where}.grouping", base["grouping"])
    if out["grouping"] not in M.GROUPING_MODES:
        raise ConfigError(f"{where}.grouping: must be one of {M.GROUPING_MODES}, got {out['grouping']!r}")
    for key in ("groups", "iterations", "kernel_width", "pool_window", "pool_stride"):
        out[key] = _as_int(f"{where}.{key}", base[key])
    for key in ("stage_channels", "pool_before", "dense_units"):
        out[key] = _as_int_list(f"{where}.{key}", list(base[key]))
    for key in ("hidden_activation", "output_activation"):
        out[key] = _as_str(f"{where}.{key}", base[key])
    for key in ("input_channels", "input_width"):
        out[key] = None if base[key] is None else _as_int(f"{where}.{key}", base[key])
    if out["grouping"] == "explicit" and out["groups"] < 2:
        raise ConfigError(f"{where}.groups: explicit grouping needs at least 2 groups")
    if out["family"] == "rcnn" and out["iterations"] < 1:
        raise ConfigError(f"{where}.iterations: rcnn needs at least 1 iteration")
    return out


def _resolve_section(section, defaults: dict, where: str, floats, strs) -> dict:
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping, got {_type_name(section)}")
    _reject_unknown(section, defaults, where)
    out = dict(defaults)
    out.update(section)
    for key, value in out.items():
        path = f"{where}.{key}"
        if value is None and defaults[key] is None:
            continue
        if key in floats:
            out[key] = _as_float(path, value)
        elif key in strs:
            out[key] = _as_str(path, value)
        else:
            out[key] = _as_int(path, value)
    return out


def _resolve_compare(section, where: str = "compare") -> dict:
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping, got {_type_name(section)}")
    _reject_unknown(section, _COMPARE_DEFAULTS, where)
    out = dict(_COMPARE_DEFAULTS)
    out.update(section)
    out["repeats"] = _as_int(f"{where}.repeats", out["repeats"])
    out["ridge_penalty"] = _as_float(f"{where}.ridge_penalty", out["ridge_penalty"])
    if out["repeats"] < 1:
        raise ConfigError(f"{where}.repeats: must be >= 1, got {out['repeats']}")
    if out["targets"] is not None:
        if not isinstance(out["targets"], list) or not out["targets"]:
            raise ConfigError(f"{where}.targets: expected a non-empty list of series names")
        out["targets"] = [_as_str(f"{where}.targets[{i}]", t) for i, t in enumerate(out["targets"])]
    if not isinstance(out["candidates"], list):
        raise ConfigError(f"{where}.candidates: expected a list")
    resolved = []
    seen = set(_BASELINES)
    for i, entry in enumerate(out["candidates"]):
        here = f"{where}.candidates[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{here}: expected a mapping with name and model")
        _reject_unknown(entry, ("name", "model"), here)
        name = _as_str(f"{here}.name", entry.get("name"))
        if name in seen:
            raise ConfigError(f"{here}.name: {name!r} already taken (linear/ridge are reserved)")
        seen.add(name)
        resolved.append({"name": name, "model": _resolve_model(entry.get("model") or {}, f"{here}.model")})
    out["candidates"] = resolved
    return out


@dataclass
class RunConfig:
    """Fully-resolved settings for one command invocation.

    ``doc`` is the canonical tree the config hash is computed over; the
    output directory lives outside it so relocating a run's artifacts
    does not change their content.
    """

    command: str
    doc: dict
    config_hash: str
    out_dir: Path

    @classmethod
    def load(
        cls,
        command: str,
        config_path: str,
        seed: int | None = None,
        out: str | None = None,
        overrides: list[str] | None = None,
    ) -> "RunConfig":
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config: no such file: {config_path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"config: not valid YAML: {e}") from e
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config: expected a mapping at the top level, got {_type_name(raw)}")
        for item in overrides or []:
            _apply_override(raw, item)
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["out"] = out
        return cls.resolve(command, raw)

    @classmethod
    def resolve(cls, command: str, raw: dict) -> "RunConfig":
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        _reject_unknown(raw, _TOP_KEYS, "config")
        doc = {
            "data": _resolve_section(raw.get("data"), _DATA_DEFAULTS, "data",
                                     floats=(), strs=("path", "target")),
            "split": _resolve_section(raw.get("split"), _SPLIT_DEFAULTS, "split",
                                      floats=("train_fraction",), strs=("mode",)),
            "model": _resolve_model(raw.get("model") or {}),
            "train": _resolve_section(raw.get("train"), _TRAIN_DEFAULTS, "train",
                                      floats=("learning_rate", "momentum", "val_fraction", "clip_norm"),
                                      strs=("assignment",)),
            "eval": _resolve_section(raw.get("eval"), _EVAL_DEFAULTS, "eval",
                                     floats=(), strs=("checkpoint", "split")),
            "compare": _resolve_compare(raw.get("compare")),
            "seed": _as_int("seed", raw.get("seed", 0)),
        }
        if doc["split"]["mode"] not in ("chronological", "shuffled"):
            raise ConfigError(f"split.mode: must be chronological or shuffled, got {doc['split']['mode']!r}")
        if doc["eval"]["split"] not in ("test", "val", "train"):
            raise ConfigError(f"eval.split: must be test, val or train, got {doc['eval']['split']!r}")
        out_dir = raw.get("out", "out")
        cfg = cls(command, doc, _hash_doc(doc), Path(_as_str("out", out_dir)))
        cfg._validate_for_command()
        return cfg

    # -- typed accessors ------------------------------------------------

    @property
    def seed(self) -> int:
        return self.doc["seed"]

    @property
    def data_path(self) -> str:
        return self.doc["data"]["path"]

    @property
    def target(self) -> str:
        return self.doc["data"]["target"]

    @property
    def window(self) -> int | None:
        """Input window length; data.window and a preset's width must agree."""
        w = self.doc["data"]["window"]
        return w if w is not None else self.doc["model"]["input_width"]

    @property
    def model(self) -> dict:
        return self.doc["model"]

    @property
    def grouping(self) -> str:
        return self.doc["model"]["grouping"]

    def split_spec(self) -> D.SplitSpec:
        s = self.doc["split"]
        return D.SplitSpec(train_fraction=s["train_fraction"], mode=s["mode"], seed=self.seed)

    def train_config(self) -> R.TrainConfig:
        t = self.doc["train"]
        return R.TrainConfig(
            epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
            momentum=t["momentum"], seed=self.seed, val_fraction=t["val_fraction"],
            clip_norm=t["clip_norm"],
        )

    def model_spec(self, section: dict | None = None,
                   input_channels: int | None = None, input_width: int | None = None) -> M.ModelSpec:
        """Build and validate a ModelSpec, filling geometry from the data."""
        m = section if section is not None else self.doc["model"]
        ic = m["input_channels"] if m["input_channels"] is not None else input_channels
        iw = m["input_width"] if m["input_width"] is not None else input_width
        if ic is None:
            raise ConfigError("model.input_channels: required here (set it or name a preset)")
        if iw is None:
            raise ConfigError("model.input_width: required here (set data.window or name a preset)")
        spec = M.ModelSpec(
            input_channels=ic,
            input_width=iw,
            grouping=m["grouping"],
            groups=m["groups"],
            stage_channels=tuple(m["stage_channels"]),
            kernel_width=m["kernel_width"],
            pool_window=m["pool_window"],
            pool_stride=m["pool_stride"],
            pool_before=tuple(m["pool_before"]),
            dense_units=tuple(m["dense_units"]),
            recurrent=m["family"] == "rcnn",
            iterations=m["iterations"],
            hidden_activation=m["hidden_activation"],
            output_activation=m["output_activation"],
        )
        spec.validate()
        return spec

    # -- validation -----------------------------------------------------

    def _require_file(self, path_value: str | None, field: str) -> Path:
        if path_value is None:
            raise ConfigError(f"{field}: required for {self.command}")
        p = Path(path_value)
        if not p.is_file():
            raise ConfigError(f"{field}: no such file: {path_value}")
        return p

    def _validate_for_command(self) -> None:
        cmd = self.command
        if cmd == "param-count":
            self.model_spec()
            return
        self._require_file(self.data_path, "data.path")
        if self.window is None and cmd != "ingest":
            raise ConfigError("data.window: required (or name a preset that sets the width)")
        if self.window is not None:
            _as_int("data.window", self.window)
            if self.window < 1:
                raise ConfigError(f"data.window: must be >= 1, got {self.window}")
            preset_width = self.doc["model"]["input_width"]
            dw = self.doc["data"]["window"]
            if dw is not None and preset_width is not None and dw != preset_width:
                raise ConfigError(f"data.window: {dw} does not match the model input width {preset_width}")
        if self.doc["data"]["max_gap"] < 0:
            raise ConfigError(f"data.max_gap: must be >= 0, got {self.doc['data']['max_gap']}")
        if cmd in ("cluster", "train", "eval") and self.target is None:
            raise ConfigError(f"data.target: required for {cmd}")
        if cmd == "cluster" and self.grouping != "explicit":
            raise ConfigError(f"model.grouping: cluster needs explicit grouping, got {self.grouping!r}")
        if cmd == "train" and self.grouping == "explicit":
            self._require_file(self.doc["train"]["assignment"], "train.assignment")
        if cmd == "eval":
            self._require_file(self.eval_checkpoint_path(), "eval.checkpoint")
            if self.doc["eval"]["split"] == "val" and self.doc["train"]["val_fraction"] == 0.0:
                raise ConfigError("eval.split: no validation slice when train.val_fraction is 0")

    def eval_checkpoint_path(self) -> str:
        return self.doc["eval"]["checkpoint"] or str(self.out_dir / "checkpoint.json")


def _apply_override(doc: dict, item: str) -> None:
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override: expected key=value, got {item!r}")
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override: {key!r} descends into a non-mapping")
    try:
        node[parts[-1]] = yaml.safe_load(value) if value else None
    except yaml.YAMLError as e:
        raise ConfigError(f"override: cannot parse value for {key!r}: {e}") from e


def _hash_doc(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# -- shared pipeline ------------------------------------------------------


@dataclass
class Prepared:
    """A dataset after repair and standardization, plus how it got there."""

    dataset: D.TimeSeriesDataset
    stats: D.StandardizeStats
    train_steps: int
    filled: list[tuple[str, int, int]]
    dropped: list[tuple[str, str]]  # (series, reason), repair and scaling drops merged


def _prepare(cfg: RunConfig) -> Prepared:
    raw = D.load_csv(cfg.data_path)
    repaired, report = D.repair_gaps(raw, max_gap=cfg.doc["data"]["max_gap"])
    # training range = leading fraction of the time axis; scaling and the
    # similarity graph must not see the evaluation tail
    train_steps = min(repaired.n_steps, max(2, int(repaired.n_steps * cfg.doc["split"]["train_fraction"])))
    scaled, stats, flat = D.standardize(repaired, train_steps)
    dropped = list(report.dropped) + [(name, "constant over the training range") for name in flat]
    return Prepared(scaled, stats, train_steps, list(report.filled), dropped)


def _input_series(prep: Prepared, target: str) -> tuple[list[str], np.ndarray]:
    """Names and training-range values of every series except the target."""
    ds = prep.dataset
    ds.index_of(target)  # unknown target fails here with the name list
    rows = [i for i, name in enumerate(ds.names) if name != target]
    names = [ds.names[i] for i in rows]
    return names, ds.values[np.array(rows), : prep.train_steps]


def _cluster_inputs(prep: Prepared, target: str, k: int, seed: int) -> tuple[list[str], S.GroupAssignment, float]:
    names, values = _input_series(prep, target)
    graph = S.similarity_from_series(values, names)
    assignment = S.spectral_cluster(graph, k, seed=seed)
    return names, assignment, S.ncut_value(graph, assignment)


def _read_assignment(path: Path) -> dict[str, int]:
    mapping: dict[str, int] = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#") or s == "series_name,group_id":
            continue
        name, sep, label = s.rpartition(",")
        if not sep or not name:
            raise DataError(f"{path}:{line_no}: expected series_name,group_id")
        try:
            mapping[name.strip()] = int(label)
        except ValueError:
            raise DataError(f"{path}:{line_no}: group id {label!r} is not an integer") from None
    if not mapping:
        raise DataError(f"{path}: no assignments found")
    return mapping


def _aligned_labels(mapping: dict[str, int], channel_names: list[str]) -> list[int]:
    missing = [n for n in channel_names if n not in mapping]
    if missing:
        raise DataError(f"assignment lacks series {missing}")
    extra = sorted(set(mapping) - set(channel_names))
    if extra:
        raise DataError(f"assignment names unknown series {extra}")
    return [mapping[n] for n in channel_names]


def _val_slice(train_set: D.WindowedRegressionSet, val_fraction: float) -> tuple[D.WindowedRegressionSet, D.WindowedRegressionSet]:
    """(fit, val) carve used by the trainer: chronological tail, >= 1 sample."""
    n = train_set.n_samples
    n_val = max(1, int(n * val_fraction)) if val_fraction > 0.0 else 0
    return train_set.subset(range(n - n_val)), train_set.subset(range(n - n_val, n))


def _build_for(cfg: RunConfig, wset: D.WindowedRegressionSet, section: dict,
               labels: list[int] | None) -> M.Model:
    m = section
    if m["input_channels"] is not None and m["input_channels"] != wset.n_channels:
        raise ShapeError(
            f"model expects {m['input_channels']} input channels, dataset provides {wset.n_channels}")
    spec = cfg.model_spec(m, input_channels=wset.n_channels, input_width=wset.window)
    return M.build_model(spec, labels, seed=cfg.seed)


# -- artifact helpers -----------------------------------------------------


def _write_json(cfg: RunConfig, name: str, doc: dict) -> Path:
    path = cfg.out_dir / name
    payload = {"config_hash": cfg.config_hash, **doc}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def _write_csv(cfg: RunConfig, name: str, body: str) -> Path:
    path = cfg.out_dir / name
    path.write_text(f"# config {cfg.config_hash}\n{body}")
    return path


def _vanilla_twin(spec: M.ModelSpec) -> int:
    """Parameter count of the same geometry without any grouping."""
    plain = M.ModelSpec(**{**spec.to_dict(), "grouping": "none", "groups": 1})
    return M.count_params(M.build_model(plain, seed=0))


def _plan_lines(spec: M.ModelSpec, n_params: int, vanilla: int | None) -> list[str]:
    lines = [
        f"widths {spec.layer_widths()}",
        f"channels {[spec.input_channels, *spec.stage_channels]}",
    ]
    if vanilla is None:
        lines.append(f"parameters {n_params}")
    else:
        lines.append(f"parameters {n_params} (ungrouped equivalent {vanilla})")
    return lines


# -- commands -------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    ds = prep.dataset
    dataset_path = _write_csv(cfg, "dataset.csv", D.dumps_csv(ds))
    report = {
        "source": cfg.data_path,
        "series": ds.names,
        "steps": ds.n_steps,
        "train_steps": prep.train_steps,
        "filled": [{"series": n, "start": s, "length": ln} for n, s, ln in prep.filled],
        "dropped": [{"series": n, "reason": r} for n, r in prep.dropped],
        "stats": {n: {"mean": float(m), "std": float(s)}
                  for n, m, s in zip(prep.stats.names, prep.stats.mean, prep.stats.std)},
    }
    report_path = _write_json(cfg, "ingest.json", report)
    print(f"config {cfg.config_hash[:12]}")
    print(f"kept {ds.n_series} series over {ds.n_steps} steps "
          f"({len(prep.dropped)} dropped, {len(prep.filled)} gaps filled, train range {prep.train_steps})")
    print(f"wrote {dataset_path} {report_path}")
    return 0


def cmd_cluster(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    k = cfg.model["groups"]
    names, assignment, ncut = _cluster_inputs(prep, cfg.target, k, cfg.seed)
    table_path = _write_csv(cfg, "assignment.csv", S.assignment_table(assignment, names))
    report_path = _write_json(cfg, "cluster.json", {
        "target": cfg.target,
        "k": k,
        "ncut": ncut,
        "sizes": assignment.group_sizes(),
        "groups": {name: label for name, label in zip(names, assignment.labels)},
    })
    print(f"config {cfg.config_hash[:12]}")
    print(f"{k} groups of sizes {assignment.group_sizes()}, ncut {ncut!r}")
    print(f"wrote {table_path} {report_path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    wset = D.make_windows(prep.dataset, cfg.target, cfg.window)
    train_set, test_set = D.split(wset, cfg.split_spec())

    labels = None
    if cfg.grouping == "explicit":
        mapping = _read_assignment(Path(cfg.doc["train"]["assignment"]))
        labels = _aligned_labels(mapping, wset.channel_names)
    model = _build_for(cfg, wset, cfg.model, labels)
    n_params = M.count_params(model)
    vanilla = _vanilla_twin(model.spec) if cfg.grouping != "none" else None
    if cfg.grouping == "explicit":
        assert n_params < vanilla, "grouping must shrink the parameter count"

    print(f"config {cfg.config_hash[:12]}")
    for line in _plan_lines(model.spec, n_params, vanilla):
        print(line)

    result = R.train(model, train_set, cfg.train_config())
    ckpt_path = cfg.out_dir / "checkpoint.json"
    M.save_checkpoint(result.model, ckpt_path, meta={"config": cfg.config_hash})
    history_path = _write_csv(cfg, "history.csv", R.history_csv(result.history))
    report = {
        "target": cfg.target,
        "parameters": n_params,
        "widths": model.spec.layer_widths(),
        "best_epoch": result.best_epoch,
        "best_val_srmse": result.best_val_srmse,
        "train_samples": train_set.n_samples,
        "test_samples": test_set.n_samples,
        "checkpoint": ckpt_path.name,
    }
    if vanilla is not None:
        report["ungrouped_parameters"] = vanilla
    paths = [ckpt_path, history_path]
    coeffs = result.model.coefficients()
    if coeffs is not None:
        header = "series_name," + ",".join(f"u{j + 1}" for j in range(coeffs.shape[1]))
        rows = [header]
        for name, row in zip(wset.channel_names, coeffs):
            rows.append(name + "," + ",".join(repr(float(u)) for u in row))
        paths.append(_write_csv(cfg, "coefficients.csv", "\n".join(rows) + "\n"))
    paths.append(_write_json(cfg, "train.json", report))
    print(f"best epoch {result.best_epoch} val srmse {result.best_val_srmse!r}")
    print("wrote " + " ".join(str(p) for p in paths))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    wset = D.make_windows(prep.dataset, cfg.target, cfg.window)
    train_set, test_set = D.split(wset, cfg.split_spec())
    which = cfg.doc["eval"]["split"]
    if which == "test":
        chosen = test_set
    else:
        fit_set, val_set = _val_slice(train_set, cfg.doc["train"]["val_fraction"])
        chosen = val_set if which == "val" else fit_set

    model = M.load_checkpoint(cfg.eval_checkpoint_path())
    spec = model.spec
    if (spec.input_channels, spec.input_width) != (wset.n_channels, wset.window):
        raise ShapeError(
            f"checkpoint expects {spec.input_channels}x{spec.input_width} windows, "
            f"dataset provides {wset.n_channels}x{wset.window}")

    report = R.evaluate(model, chosen, model_id=cfg.config_hash[:12])
    report_path = _write_json(cfg, "eval.json", {"split": which, **report.to_dict()})
    pred_path = _write_csv(cfg, "predictions.csv", R.predictions_csv(report))
    print(f"config {cfg.config_hash[:12]}")
    print(f"{which} srmse {report.srmse!r} (rmse {report.rmse!r}) over {len(report.targets)} samples")
    print(f"wrote {report_path} {pred_path}")
    return 0


def _pick_targets(cfg: RunConfig, names: list[str]) -> list[str]:
    wanted = cfg.doc["compare"]["targets"]
    if wanted is not None:
        unknown = [t for t in wanted if t not in names]
        if unknown:
            raise DataError(f"compare.targets: unknown series {unknown}; have {names}")
        return list(wanted)
    repeats = cfg.doc["compare"]["repeats"]
    if repeats > len(names):
        raise ConfigError(f"compare.repeats: {repeats} picks from only {len(names)} series")
    rng = np.random.default_rng(cfg.seed)
    picked = rng.choice(len(names), size=repeats, replace=False)
    return [names[i] for i in picked]


def cmd_compare(cfg: RunConfig) -> int:
    prep = _prepare(cfg)
    picks = _pick_targets(cfg, prep.dataset.names)
    candidates = cfg.doc["compare"]["candidates"]
    order = list(_BASELINES) + [c["name"] for c in candidates]
    results: dict[str, dict[str, float]] = {name: {} for name in order}
    try:
        for target in picks:
            wset = D.make_windows(prep.dataset, target, cfg.window)
            train_set, test_set = D.split(wset, cfg.split_spec())
            results["linear"][target] = R.linear_baseline(train_set, test_set, 0.0).srmse
            results["ridge"][target] = R.linear_baseline(
                train_set, test_set, cfg.doc["compare"]["ridge_penalty"]).srmse
            for cand in candidates:
                labels = None
                if cand["model"]["grouping"] == "explicit":
                    _, assignment, _ = _cluster_inputs(prep, target, cand["model"]["groups"], cfg.seed)
                    labels = assignment.labels
                model = _build_for(cfg, wset, cand["model"], labels)
                fitted = R.train(model, train_set, cfg.train_config())
                results[cand["name"]][target] = R.evaluate(fitted.model, test_set).srmse
    finally:
        # a failing member keeps whatever finished before it
        complete = all(len(results[name]) == len(picks) for name in order)
        lines = ["model,mean_srmse,std_srmse,repeats"]
        for name in order:
            scores = [results[name][t] for t in picks if t in results[name]]
            if scores:
                mean = float(np.mean(scores))
                std = float(np.std(scores))  # population spread across picks
                lines.append(f"{name},{mean!r},{std!r},{len(scores)}")
        summary_path = _write_csv(cfg, "summary.csv", "\n".join(lines) + "\n")
        detail_path = _write_json(cfg, "compare.json", {
            "targets": picks,
            "ridge_penalty": cfg.doc["compare"]["ridge_penalty"],
            "complete": complete,
            "results": results,
        })
    print(f"config {cfg.config_hash[:12]}")
    for line in lines:
        print(line)
    print(f"wrote {summary_path} {detail_path}")
    return 0


def cmd_param_count(cfg: RunConfig) -> int:
    spec = cfg.model_spec()
    labels = None
    if spec.grouping == "explicit":
        # any valid partition gives the same count; round-robin is always valid
        labels = [i % spec.groups + 1 for i in range(spec.input_channels)]
    model = M.build_model(spec, labels, seed=cfg.seed)
    n_params = M.count_params(model)
    vanilla = _vanilla_twin(spec) if spec.grouping != "none" else None
    if spec.grouping == "explicit":
        assert n_params < vanilla, "grouping must shrink the parameter count"
    lines = _plan_lines(spec, n_params, vanilla)
    path = _write_csv(cfg, "params.txt", "\n".join(lines) + "\n")
    print(f"config {cfg.config_hash[:12]}")
    for line in lines:
        print(line)
    print(f"wrote {path}")
    return 0


_HANDLERS = {
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "param-count": cmd_param_count,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcnn", description="grouped time-series CNNs: ingest, cluster, train, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} step")
        p.add_argument("config", help="YAML settings document")
        p.add_argument("--seed", type=int, default=None, help="replace the config seed")
        p.add_argument("--out", default=None, help="replace the output directory")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="replace one setting, e.g. train.epochs=50")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.command, args.config,
                             seed=args.seed, out=args.out, overrides=args.override)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        # overflow on the way to the divergence guard is reported via the
        # exit code; numpy warning spam would only obscure it
        with np.errstate(over="ignore", invalid="ignore"):
            return _HANDLERS[args.command](cfg)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except GcnnError as e:
        # config and shape problems are both "fix the config" failures
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
