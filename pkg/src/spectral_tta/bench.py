"""Synthetic corruption benchmark: dataset generation, a corruption bank
with five severity levels, end-to-end error grids, and the rank / step
ablations. Everything is a pure function of (config, seed, checkpoints).
"""

import copy
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .adapt import (
    AdaptConfig,
    RunRecord,
    baseline_bn_stats,
    baseline_no_adapt,
    baseline_bn_modulators,
    run_adaptation,
)
from .errors import ConfigError, ContractViolationError
from .filters import NEG_EXP, RELU_RIDGE, SpectralFilter
from .network import (
    Model,
    build_model,
    fit_pca_from_source,
    insert_adapter,
    load_model,
    save_model,
    train_model,
)
from .pca import PcaBasis

# rank used by full-scale variants of the adapter; the desk-scale default
# below is min(64, p)
FULL_SCALE_RANK = 2000

GENERATORS = ("gaussian-textures", "shape-patterns")

CORRUPTION_KINDS = (
    "gaussian-noise",
    "impulse-noise",
    "blur",
    "contrast",
    "brightness",
)

# per-kind severity parameter grids (artifact-chosen; validated only via
# the monotone mean-displacement invariant)
SEVERITY_GRIDS = {
    "gaussian-noise": [0.04, 0.08, 0.12, 0.16, 0.20],   # noise sigma
    "impulse-noise": [0.02, 0.05, 0.09, 0.14, 0.20],    # flip probability
    "blur": [0.4, 0.6, 0.8, 1.0, 1.3],                  # gaussian sigma
    "contrast": [0.75, 0.60, 0.45, 0.35, 0.25],         # contrast factor
    "brightness": [0.08, 0.16, 0.24, 0.32, 0.40],       # additive shift
}

METHODS = ("no-adapt", "bn-stats", "bn-modulators", "spectral-relu", "spectral-exp")

_FILTER_KIND = {"spectral-relu": RELU_RIDGE, "spectral-exp": NEG_EXP}

TABLE_FORMAT_VERSION = 1


# ---- dataset -------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 2000
    n_test: int = 1000
    channels: int = 3
    height: int = 8
    width: int = 8
    n_classes: int = 4
    generator: str = "shape-patterns"
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ContractViolationError(f"unknown generator {self.generator!r}")
        if min(self.n_train, self.n_test, self.channels, self.height, self.width) < 1:
            raise ContractViolationError("all dataset dimensions must be positive")


# orientation/frequency pairs for the pattern generator; more classes than
# entries is infeasible by construction
_PATTERNS = [
    (0.0, 2.0), (90.0, 2.0), (45.0, 2.0), (135.0, 2.0),
    (0.0, 4.0), (90.0, 4.0), (45.0, 4.0), (135.0, 4.0),
]

# low-contrast gratings keep the classes separable on clean data while
# leaving severity-5 corruptions genuinely damaging
_PATTERN_AMPLITUDE = 0.15


def _class_templates(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    c, h, w = spec.channels, spec.height, spec.width
    k = spec.n_classes
    templates = np.empty((k, c, h, w))
    if spec.generator == "shape-patterns":
        if k > len(_PATTERNS):
            raise ContractViolationError(
                f"at most {len(_PATTERNS)} pattern classes are expressible, got {k}"
            )
        ys, xs = np.mgrid[0:h, 0:w]
        for cls in range(k):
            angle, freq = _PATTERNS[cls]
            rad = np.deg2rad(angle)
            phase = 2 * np.pi * freq * (xs * np.cos(rad) + ys * np.sin(rad)) / max(h, w)
            grating = 0.5 + _PATTERN_AMPLITUDE * np.cos(phase)
            # slight per-channel amplitude variation keeps channels distinct
            for ch in range(c):
                templates[cls, ch] = 0.5 + (grating - 0.5) * (1.0 - 0.15 * ch / max(1, c - 1))
    else:
        for cls in range(k):
            field = rng.normal(size=(c, h, w))
            field = ndimage.gaussian_filter(field, sigma=(0, 1.2, 1.2), mode="wrap")
            lo, hi = field.min(), field.max()
            templates[cls] = 0.25 + 0.5 * (field - lo) / (hi - lo)
    return templates


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    labels = np.repeat(np.arange(k), counts)
    rng.shuffle(labels)
    return labels


def _sample(templates, labels, rng):
    amp = rng.uniform(0.85, 1.15, size=(len(labels), 1, 1, 1))
    jitter = rng.normal(0.0, 0.05, size=(len(labels),) + templates.shape[1:])
    base = templates[labels]
    x = 0.5 + (base - 0.5) * amp + jitter
    return np.clip(x, 0.0, 1.0)


def gen_dataset(spec: DatasetSpec):
    """Deterministic synthetic dataset; returns ((train_x, train_y), (test_x, test_y))."""
    rng = np.random.default_rng(spec.seed)
    templates = _class_templates(spec, rng)
    train_y = _balanced_labels(spec.n_train, spec.n_classes, rng)
    train_x = _sample(templates, train_y, rng)
    test_y = _balanced_labels(spec.n_test, spec.n_classes, rng)
    test_x = _sample(templates, test_y, rng)
    return (train_x, train_y), (test_x, test_y)


# ---- corruptions ----------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ContractViolationError(f"unknown corruption kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ContractViolationError(f"severity must be 1..5, got {self.severity}")


def corrupt(images: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Apply one corruption at one severity; the input is left untouched."""
    x = np.asarray(images, dtype=np.float64)
    level = SEVERITY_GRIDS[spec.kind][spec.severity - 1]
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian-noise":
        out = x + rng.normal(0.0, level, size=x.shape)
    elif spec.kind == "impulse-noise":
        out = x.copy()
        mask = rng.random(x.shape) < level
        out[mask] = (rng.random(x.shape) < 0.5)[mask].astype(np.float64)
    elif spec.kind == "blur":
        out = ndimage.gaussian_filter(x, sigma=(0, 0, level, level), mode="nearest")
    elif spec.kind == "contrast":
        out = 0.5 + (x - 0.5) * level
    else:  # brightness
        out = x + level
    return np.clip(out, 0.0, 1.0)


# ---- configuration ---------------------------------------------------------


DEFAULT_CONFIG = {
    "seed": 0,
    "dataset": {
        "n_train": 2000,
        "n_test": 1000,
        "channels": 3,
        "height": 8,
        "width": 8,
        "n_classes": 4,
        "generator": "shape-patterns",
    },
    "model": {
        "conv_channels": [8, 8],
        "kernel": 3,
        "insert_index": 3,
        "train_epochs": 20,
        "train_lr": 0.05,
        "train_batch": 64,
    },
    "pca": {
        "rank": 64,
        "fit_samples": 512,
        "fit_batch": 64,
    },
    "adapt": {
        "protocol": "episodic",
        "learning_rate": 0.25,
        "steps_per_batch": 10,
        "batch_size": 64,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "gamma_init": 1e-3,
    },
    "methods": list(METHODS),
    "corruptions": list(CORRUPTION_KINDS),
    "severities": [1, 2, 3, 4, 5],
    "ablation": {
        "method": "spectral-relu",
        "n_seeds": 3,
    },
}


def _merge_config(defaults: dict, override: dict, prefix: str = "", bad: list | None = None) -> dict:
    top = bad is None
    bad = [] if top else bad
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            bad.append(prefix + key)
            continue
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix + key!r} must be a mapping", [prefix + key])
            merged[key] = _merge_config(defaults[key], value, prefix + key + ".", bad)
        else:
            merged[key] = copy.deepcopy(value)
    if top and bad:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(bad))}", sorted(bad))
    return merged


def load_config(override: dict | None = None) -> dict:
    """Merge a partial config over the defaults and validate it."""
    cfg = _merge_config(DEFAULT_CONFIG, override or {})
    bad = []
    for m in cfg["methods"]:
        if m not in METHODS:
            bad.append(f"methods:{m}")
    for c in cfg["corruptions"]:
        if c not in CORRUPTION_KINDS:
            bad.append(f"corruptions:{c}")
    for s in cfg["severities"]:
        if not (isinstance(s, int) and 1 <= s <= 5):
            bad.append(f"severities:{s}")
    if bad:
        raise ConfigError(f"invalid config values: {', '.join(bad)}", bad)
    return cfg


def _dataset_spec(cfg: dict) -> DatasetSpec:
    return DatasetSpec(seed=cfg["seed"], **cfg["dataset"])


def _adapt_config(cfg: dict) -> AdaptConfig:
    a = cfg["adapt"]
    return AdaptConfig(
        protocol=a["protocol"],
        learning_rate=a["learning_rate"],
        steps_per_batch=a["steps_per_batch"],
        batch_size=a["batch_size"],
        adam_beta1=a["adam_beta1"],
        adam_beta2=a["adam_beta2"],
        adam_eps=a["adam_eps"],
        seed=cfg["seed"],
    )


def make_batches(x: np.ndarray, y: np.ndarray, batch_size: int):
    """Split into ordered batches; a smaller tail batch is kept as-is."""
    return [
        (x[i : i + batch_size], y[i : i + batch_size])
        for i in range(0, len(x), batch_size)
    ]


# ---- training / fitting entry points ---------------------------------------


def train_from_config(cfg: dict) -> Model:
    (train_x, train_y), _ = gen_dataset(_dataset_spec(cfg))
    m = cfg["model"]
    model = build_model(
        seed=cfg["seed"],
        input_shape=(cfg["dataset"]["channels"], cfg["dataset"]["height"], cfg["dataset"]["width"]),
        conv_channels=tuple(m["conv_channels"]),
        n_classes=cfg["dataset"]["n_classes"],
        kernel=m["kernel"],
    )
    return train_model(
        model,
        train_x,
        train_y,
        epochs=m["train_epochs"],
        lr=m["train_lr"],
        batch_size=m["train_batch"],
        seed=cfg["seed"],
    )


def fit_basis_from_config(cfg: dict, model: Model, rank: int | None = None) -> PcaBasis:
    (train_x, _), _ = gen_dataset(_dataset_spec(cfg))
    pca_cfg = cfg["pca"]
    n_fit = min(pca_cfg["fit_samples"], len(train_x))
    fit_x = train_x[:n_fit]
    batch = pca_cfg["fit_batch"]
    batches = [fit_x[i : i + batch] for i in range(0, n_fit, batch)]
    j = cfg["model"]["insert_index"] - 1  # adapter consumes this layer's output
    rank = rank if rank is not None else pca_cfg["rank"]
    shapes = model.layer_output_shapes()
    p = int(np.prod(shapes[j]))
    return fit_pca_from_source(model, batches, j, min(rank, n_fit, p))


def train_checkpoint(cfg: dict, path) -> Model:
    model = train_from_config(cfg)
    save_model(model, path)
    return model


def fit_basis_checkpoint(cfg: dict, model_path, basis_path, rank: int | None = None) -> PcaBasis:
    model = load_model(model_path)
    basis = fit_basis_from_config(cfg, model, rank)
    basis.save(basis_path)
    return basis


# ---- benchmark --------------------------------------------------------------


@dataclass
class ErrorTable:
    methods: list
    corruptions: list
    severities: list
    errors: dict  # (method, corruption, severity) -> float

    def row(self, method, corruption):
        return [self.errors[(method, corruption, s)] for s in self.severities]

    def row_mean(self, method, corruption):
        return float(np.mean(self.row(method, corruption)))

    def severity_mean(self, method, severity):
        return float(
            np.mean([self.errors[(method, c, severity)] for c in self.corruptions])
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "corruption"] + [f"sev{s}" for s in self.severities] + ["mean"])
            for method in self.methods:
                for corruption in self.corruptions:
                    row = self.row(method, corruption)
                    writer.writerow(
                        [method, corruption] + [repr(v) for v in row] + [repr(float(np.mean(row)))]
                    )
                sev_means = [self.severity_mean(method, s) for s in self.severities]
                writer.writerow(
                    [method, "ALL"] + [repr(v) for v in sev_means] + [repr(float(np.mean(sev_means)))]
                )


def _spectral_model(model: Model, cfg: dict, basis: PcaBasis, method: str) -> Model:
    kind = _FILTER_KIND[method]
    gamma0 = np.full(basis.rank, cfg["adapt"]["gamma_init"])
    filt = SpectralFilter(kind, basis.singular_values, gamma0)
    return insert_adapter(model, cfg["model"]["insert_index"], basis, filt)


def _evaluate_cell(model, basis, cfg, method, batches) -> RunRecord:
    acfg = _adapt_config(cfg)
    if method == "no-adapt":
        return baseline_no_adapt(model, batches)
    if method == "bn-stats":
        return baseline_bn_stats(model, batches)
    if method == "bn-modulators":
        return baseline_bn_modulators(model, batches, acfg)
    if method in _FILTER_KIND:
        if basis is None:
            raise ContractViolationError(f"method {method!r} needs a fitted basis")
        work = _spectral_model(model.clone(), cfg, basis, method)
        return run_adaptation(work, batches, acfg, method=method)
    raise ConfigError(f"unknown method {method!r}", [f"methods:{method}"])


def _cell_seed(base_seed: int, corruption: str, severity: int) -> int:
    return base_seed * 1009 + CORRUPTION_KINDS.index(corruption) * 13 + severity


def run_benchmark(cfg: dict, model: Model, basis: PcaBasis | None, out_dir=None):
    """Evaluate every configured method on every (corruption, severity).

    Returns (ErrorTable, {cell key: RunRecord}). With ``out_dir`` set,
    also writes table.csv and one records JSON-lines file per cell.
    """
    _, (test_x, test_y) = gen_dataset(_dataset_spec(cfg))
    batch_size = cfg["adapt"]["batch_size"]
    errors = {}
    records = {}
    for corruption in cfg["corruptions"]:
        for severity in cfg["severities"]:
            cspec = CorruptionSpec(
                kind=corruption,
                severity=severity,
                seed=_cell_seed(cfg["seed"], corruption, severity),
            )
            cx = corrupt(test_x, cspec)
            batches = make_batches(cx, test_y, batch_size)
            for method in cfg["methods"]:
                rec = _evaluate_cell(model, basis, cfg, method, batches)
                errors[(method, corruption, severity)] = rec.mean_error()
                records[f"{method}__{corruption}__sev{severity}"] = rec
    table = ErrorTable(
        methods=list(cfg["methods"]),
        corruptions=list(cfg["corruptions"]),
        severities=list(cfg["severities"]),
        errors=errors,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "table.csv")
        for key in sorted(records):
            records[key].to_jsonl(out / f"records__{key}.jsonl")
    return table, records


def run_benchmark_from_files(cfg: dict, model_path, basis_path, out_dir=None):
    model_path = Path(model_path)
    if not model_path.exists():
        raise FileNotFoundError(f"model checkpoint not found: {model_path}")
    model = load_model(model_path)
    basis = None
    needs_basis = any(m in _FILTER_KIND for m in cfg["methods"])
    if needs_basis:
        basis_path = Path(basis_path)
        if not basis_path.exists():
            raise FileNotFoundError(f"PCA basis file not found: {basis_path}")
        basis = PcaBasis.load(basis_path)
    return run_benchmark(cfg, model, basis, out_dir)


# ---- ablations ---------------------------------------------------------------


def _ablation_seeds(cfg: dict):
    return [cfg["seed"] + i for i in range(cfg["ablation"]["n_seeds"])]


def _severity5_mean_error(cfg: dict, model, basis, method: str) -> float:
    sub = copy.deepcopy(cfg)
    sub["methods"] = [method]
    sub["severities"] = [5]
    table, _ = run_benchmark(sub, model, basis)
    return float(np.mean([table.errors[(method, c, 5)] for c in sub["corruptions"]]))


def ablate_rank(cfg: dict, ranks: list[int]):
    """Severity-5 episodic mean error vs PCA rank, seed-averaged."""
    if not ranks or any(r < 1 for r in ranks):
        raise ContractViolationError("ranks must be positive")
    method = cfg["ablation"]["method"]
    curve = []
    per_seed = {r: [] for r in ranks}
    for seed in _ablation_seeds(cfg):
        scfg = copy.deepcopy(cfg)
        scfg["seed"] = seed
        scfg["adapt"]["protocol"] = "episodic"
        model = train_from_config(scfg)
        for r in ranks:
            basis = fit_basis_from_config(scfg, model, rank=r)
            per_seed[r].append(_severity5_mean_error(scfg, model, basis, method))
    for r in ranks:
        curve.append(
            {"rank": r, "mean_error": float(np.mean(per_seed[r])), "per_seed": per_seed[r]}
        )
    return curve


def ablate_steps(cfg: dict, steps: list[int]):
    """Severity-5 online mean error vs steps per batch, seed-averaged."""
    if not steps or any(s < 1 for s in steps):
        raise ContractViolationError("steps must be positive")
    if any(b >= a for a, b in zip(steps[1:], steps)):
        raise ContractViolationError("steps must be strictly increasing")
    method = cfg["ablation"]["method"]
    curve = []
    per_seed = {s: [] for s in steps}
    for seed in _ablation_seeds(cfg):
        scfg = copy.deepcopy(cfg)
        scfg["seed"] = seed
        scfg["adapt"]["protocol"] = "online"
        model = train_from_config(scfg)
        basis = fit_basis_from_config(scfg, model)
        for s in steps:
            run_cfg = copy.deepcopy(scfg)
            run_cfg["adapt"]["steps_per_batch"] = s
            per_seed[s].append(_severity5_mean_error(run_cfg, model, basis, method))
    for s in steps:
        curve.append(
            {"steps": s, "mean_error": float(np.mean(per_seed[s])), "per_seed": per_seed[s]}
        )
    return curve


def curve_to_json(curve, path) -> None:
    with open(path, "w") as fh:
        json.dump(curve, fh, indent=2, sort_keys=True)
