"""Command-line front end: config-driven, deterministic experiment stages.

    tripath gen-noise --config exp.json    corrupt the corpus
    tripath pretrain  --config exp.json    stack RBMs on the noisy data
    tripath train     --config exp.json    fine-tune the joint model
    tripath eval      --config exp.json    metrics + montages
    tripath pipeline  --config exp.json    joint vs two-stage baseline

Each stage is a pure function of (config file, input files): outputs get
fixed names inside out_dir, and a manifest JSON records the seeds plus
sha256 hashes of inputs and outputs (no timestamps), so identical runs
produce identical bytes. --set key.path=value overrides config entries;
values are parsed as JSON with plain-string fallback.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric divergence.

This module imports only the stdlib at import time: numpy first loads
inside the stage functions, after --threads has seeded the BLAS
thread-count environment variables.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")

_DEFAULTS = {
    "out_dir": None,
    "data": {
        "train_images": None, "train_labels": None,
        "test_images": None, "test_labels": None,
        "images": None, "labels": None,
        "split": {"fraction": 0.8, "seed": 99},
        "num_classes": None,
        "binarize": False,
    },
    "noise": {"kind": "type1", "seed": 17, "test_seed": None,
              "replicate": 1, "intensity": 1.0, "type1": {}, "type2": {}},
    "arch": {"layer_sizes": None, "label_head": "deep"},
    "lambda": 1.0,
    "train_subset": None,
    "pretrain": {"epochs": 10, "learning_rate": 0.05, "batch_size": 100,
                 "seed": 3},
    "no_pretrain": False,
    "resume_from": None,
    "init_seed": 5,
    "optimizer": {"kind": "lbfgs"},
}


class ConfigError(Exception):
    """Configuration is missing, malformed, or self-contradictory."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_override(cfg: dict, spec: str):
    if "=" not in spec:
        raise ConfigError(f"--set needs KEY=VALUE, got {spec!r}")
    keypath, raw = spec.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = keypath.split(".")
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def load_config(path, overrides=()) -> dict:
    try:
        with open(path) as f:
            user = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    # deep-copy so --set on an unset section cannot mutate _DEFAULTS
    cfg = _deep_merge(copy.deepcopy(_DEFAULTS), user)
    for spec in overrides:
        _apply_override(cfg, spec)
    if not cfg.get("out_dir"):
        raise ConfigError("out_dir is required")
    if cfg["lambda"] < 0:
        raise ConfigError(f"lambda must be nonnegative, got {cfg['lambda']}")
    return cfg


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(cfg, stage, inputs, outputs):
    doc = {
        "stage": stage,
        "config": cfg,
        "inputs": {name: _sha256(path) for name, path in inputs.items()},
        "outputs": {name: _sha256(path) for name, path in outputs.items()},
    }
    path = os.path.join(cfg["out_dir"], f"manifest_{stage.replace('-', '_')}.json")
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _data_mode(data: dict) -> str:
    two = all(data.get(k) for k in ("train_images", "train_labels",
                                    "test_images", "test_labels"))
    single = all(data.get(k) for k in ("images", "labels"))
    if two and single:
        raise ConfigError("data: give train_*/test_* paths OR images/labels, "
                          "not both")
    if not two and not single:
        raise ConfigError("data: need train_images/train_labels/test_images/"
                          "test_labels, or images/labels with a split")
    return "two" if two else "single"


def _noise_spec(noise: dict):
    """None for kind "none", else the validated NoiseSpec."""
    if noise.get("kind") == "none":
        return None
    from .noise import NoiseSpec

    return NoiseSpec.from_dict(noise)


def _arch(cfg):
    from .network import ArchSpec

    sizes = cfg["arch"].get("layer_sizes")
    if not sizes:
        raise ConfigError("arch.layer_sizes is required")
    num_classes = cfg["data"].get("num_classes")
    if not num_classes:
        raise ConfigError("data.num_classes is required for model stages")
    return ArchSpec(tuple(sizes), int(num_classes),
                    cfg["arch"].get("label_head", "deep"))


def _optimizer(cfg):
    from .optim import LbfgsConfig, SgdConfig

    opt = dict(cfg["optimizer"])
    kind = opt.pop("kind", "lbfgs")
    try:
        if kind == "lbfgs":
            return LbfgsConfig(**opt)
        if kind == "sgd":
            return SgdConfig(**opt)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimizer: {exc}") from exc
    raise ConfigError(f"optimizer.kind must be lbfgs or sgd, got {kind!r}")


def _corpus_paths(out_dir):
    names = ["train_clean_images", "train_clean_labels", "train_noisy_images",
             "test_clean_images", "test_clean_labels", "test_noisy_images"]
    return {n: os.path.join(out_dir, f"{n}.idx") for n in names}


def _load_triplets(cfg, prefix, subset=None):
    import numpy as np

    from .dataio import make_triplets, read_idx_images, read_idx_labels, \
        ImageDataset

    paths = _corpus_paths(cfg["out_dir"])
    clean, width, height = read_idx_images(paths[f"{prefix}_clean_images"])
    noisy, _, _ = read_idx_images(paths[f"{prefix}_noisy_images"])
    labels = read_idx_labels(paths[f"{prefix}_clean_labels"])
    k = cfg["data"].get("num_classes") or int(labels.max()) + 1
    dataset = ImageDataset(clean, labels, width, height, int(k))
    trip = make_triplets(dataset, noisy)
    if subset is not None and subset < trip.n:
        trip = trip.subset(np.arange(subset))
    return trip


def cmd_gen_noise(cfg) -> int:
    from .dataio import load_image_dataset, replicate_dataset, \
        write_idx_images, write_idx_labels
    from .noise import corrupt_dataset
    from .numerics import Rng

    data = cfg["data"]
    noise = cfg["noise"]
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    spec = _noise_spec(noise)
    mode = _data_mode(data)
    paths = _corpus_paths(out_dir)
    test_seed = noise["test_seed"]
    if test_seed is None:
        test_seed = noise["seed"] + 1

    if mode == "two":
        train = load_image_dataset(data["train_images"], data["train_labels"],
                                   data["num_classes"], data["binarize"])
        test = load_image_dataset(data["test_images"], data["test_labels"],
                                  data["num_classes"], data["binarize"])
        train_rep = replicate_dataset(train, noise["replicate"])
        if spec is None:
            noisy_train = train_rep.images
            noisy_test = test.images
        else:
            noisy_train = corrupt_dataset(train, spec, noise["seed"])
            test_spec = _noise_spec({**noise, "replicate": 1})
            noisy_test = corrupt_dataset(test, test_spec, test_seed)
        sides = {
            "train": (train_rep.images, train_rep.labels, noisy_train,
                      train.width, train.height),
            "test": (test.images, test.labels, noisy_test,
                     test.width, test.height),
        }
        inputs = {k: data[k] for k in ("train_images", "train_labels",
                                       "test_images", "test_labels")}
    else:
        base = load_image_dataset(data["images"], data["labels"],
                                  data["num_classes"], data["binarize"])
        rep = replicate_dataset(base, noise["replicate"])
        if spec is None:
            noisy_all = rep.images
        else:
            noisy_all = corrupt_dataset(base, spec, noise["seed"])
        split = data["split"]
        fraction = split.get("fraction", 0.8)
        if not 0.0 < fraction < 1.0:
            raise ConfigError(f"data.split.fraction must be in (0, 1), "
                              f"got {fraction}")
        n = rep.n
        perm = list(range(n))
        rng = Rng(split.get("seed", 99))
        for i in range(n - 1, 0, -1):
            j = rng.randint(0, i)
            perm[i], perm[j] = perm[j], perm[i]
        n_train = int(fraction * n + 0.5)
        idx = {"train": perm[:n_train], "test": perm[n_train:]}
        sides = {
            name: (rep.images[rows], rep.labels[rows], noisy_all[rows],
                   rep.width, rep.height)
            for name, rows in idx.items()
        }
        inputs = {"images": data["images"], "labels": data["labels"]}

    for name, (clean, labels, noisy, width, height) in sides.items():
        write_idx_images(clean, width, height, paths[f"{name}_clean_images"])
        write_idx_labels(labels, paths[f"{name}_clean_labels"])
        write_idx_images(noisy, width, height, paths[f"{name}_noisy_images"])
        print(f"{name}: {clean.shape[0]} triplets "
              f"({width}x{height}, noise={noise['kind']})")

    _write_manifest(cfg, "gen-noise", inputs, paths)
    return EXIT_OK


def cmd_pretrain(cfg) -> int:
    from .dataio import read_idx_images
    from .rbm import pretrain_stack, save_stack

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    paths = _corpus_paths(out_dir)
    noisy, width, height = read_idx_images(paths["train_noisy_images"])
    subset = cfg["train_subset"]
    if subset is not None:
        noisy = noisy[:subset]

    sizes = cfg["arch"].get("layer_sizes")
    if not sizes:
        raise ConfigError("arch.layer_sizes is required")
    if sizes[0] != width * height:
        raise ConfigError(f"arch.layer_sizes[0] = {sizes[0]} but images "
                          f"have {width * height} pixels")

    pre = cfg["pretrain"]
    curve = []
    stack = pretrain_stack(sizes, noisy, epochs=pre["epochs"],
                           lr=pre["learning_rate"],
                           batch_size=pre["batch_size"], seed=pre["seed"],
                           report=lambda l, e, ce: curve.append((l, e, ce)))

    stack_path = os.path.join(out_dir, "rbm_stack.rbs")
    curve_path = os.path.join(out_dir, "pretrain_curve.csv")
    save_stack(stack, stack_path)
    with open(curve_path, "w") as f:
        f.write("layer,epoch,mean_ce\n")
        for layer, epoch, ce in curve:
            f.write(f"{layer},{epoch},{ce!r}\n")
    for layer, epoch, ce in curve:
        if epoch == pre["epochs"] - 1:
            print(f"layer {layer}: final reconstruction CE {ce:.4f}")

    _write_manifest(cfg, "pretrain",
                    {"train_noisy_images": paths["train_noisy_images"]},
                    {"rbm_stack": stack_path, "pretrain_curve": curve_path})
    return EXIT_OK


def _initial_net(cfg):
    from .network import init_from_pretrain, init_random, load
    from .rbm import load_stack

    if cfg["resume_from"]:
        return load(cfg["resume_from"]), {"resume_from": cfg["resume_from"]}
    arch = _arch(cfg)
    if cfg["no_pretrain"]:
        return init_random(arch, cfg["lambda"], cfg["init_seed"]), {}
    stack_path = os.path.join(cfg["out_dir"], "rbm_stack.rbs")
    stack = load_stack(stack_path)
    net = init_from_pretrain(stack, arch, cfg["lambda"], cfg["init_seed"])
    return net, {"rbm_stack": stack_path}


def cmd_train(cfg) -> int:
    from .network import save
    from .optim import LbfgsConfig, lbfgs_train, sgd_train

    out_dir = cfg["out_dir"]
    trip = _load_triplets(cfg, "train", cfg["train_subset"])
    net, extra_inputs = _initial_net(cfg)
    if trip.clean.shape[1] != net.input_dim:
        raise ConfigError(f"model expects {net.input_dim} pixels but corpus "
                          f"has {trip.clean.shape[1]}")

    opt = _optimizer(cfg)
    if isinstance(opt, LbfgsConfig):
        trained, history = lbfgs_train(net, trip, opt)
    else:
        trained, history = sgd_train(net, trip, opt)

    model_path = os.path.join(out_dir, "model.tpn")
    history_path = os.path.join(out_dir, "train_history.csv")
    save(trained, model_path)
    history.to_csv(history_path)
    print(f"trained on {trip.n} triplets: loss "
          f"{history.records[0].loss:.4f} -> {history.final_loss:.4f} "
          f"({history.status})")

    paths = _corpus_paths(out_dir)
    inputs = {k: paths[k] for k in ("train_clean_images", "train_clean_labels",
                                    "train_noisy_images")}
    inputs.update(extra_inputs)
    _write_manifest(cfg, "train", inputs,
                    {"model": model_path, "train_history": history_path})
    return EXIT_OK


def cmd_eval(cfg) -> int:
    from .eval import evaluate
    from .network import load

    out_dir = cfg["out_dir"]
    model_path = os.path.join(out_dir, "model.tpn")
    net = load(model_path)
    test = _load_triplets(cfg, "test")
    report = evaluate(net, test, montage_dir=out_dir)

    metrics_path = os.path.join(out_dir, "metrics.json")
    with open(metrics_path, "w") as f:
        f.write(report.to_json())
        f.write("\n")
    print(f"PSNR {report.psnr_db:.2f} dB (noisy floor "
          f"{report.noisy_floor_db:.2f} dB), error rate "
          f"{report.error_rate:.4f} on {report.n_examples} examples")

    paths = _corpus_paths(out_dir)
    inputs = {k: paths[k] for k in ("test_clean_images", "test_clean_labels",
                                    "test_noisy_images")}
    inputs["model"] = model_path
    outputs = {"metrics": metrics_path}
    for name in ("clean", "noisy", "denoised"):
        outputs[f"montage_{name}"] = os.path.join(out_dir, f"{name}.pgm")
    _write_manifest(cfg, "eval", inputs, outputs)
    return EXIT_OK


def cmd_pipeline(cfg) -> int:
    from .eval import evaluate, evaluate_predictor
    from .network import load, save
    from .optim import pipeline_baseline_train

    out_dir = cfg["out_dir"]
    trip = _load_triplets(cfg, "train", cfg["train_subset"])
    test = _load_triplets(cfg, "test")
    model_path = os.path.join(out_dir, "model.tpn")
    joint = load(model_path)
    init_net, extra_inputs = _initial_net(cfg)

    result = pipeline_baseline_train(init_net, trip, _optimizer(cfg))
    joint_report = evaluate(joint, test)
    pipeline_report = evaluate_predictor(result.predict, test)

    denoiser_path = os.path.join(out_dir, "pipeline_denoiser.tpn")
    classifier_path = os.path.join(out_dir, "pipeline_classifier.tpn")
    comparison_path = os.path.join(out_dir, "comparison.json")
    save(result.denoiser, denoiser_path)
    save(result.classifier, classifier_path)
    with open(comparison_path, "w") as f:
        json.dump({"joint": json.loads(joint_report.to_json()),
                   "pipeline": json.loads(pipeline_report.to_json())},
                  f, indent=2)
        f.write("\n")
    print(f"joint error {joint_report.error_rate:.4f} vs pipeline "
          f"{pipeline_report.error_rate:.4f}; joint PSNR "
          f"{joint_report.psnr_db:.2f} vs {pipeline_report.psnr_db:.2f} dB")

    paths = _corpus_paths(out_dir)
    inputs = dict(paths)
    inputs["model"] = model_path
    inputs.update(extra_inputs)
    _write_manifest(cfg, "pipeline", inputs,
                    {"pipeline_denoiser": denoiser_path,
                     "pipeline_classifier": classifier_path,
                     "comparison": comparison_path})
    return EXIT_OK


COMMANDS = {
    "gen-noise": cmd_gen_noise,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripath",
        description="Joint restoration and recognition of corrupted "
                    "handwritten characters.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-noise": "corrupt a corpus into aligned clean/noisy IDX files",
        "pretrain": "greedy RBM pretraining of the encoder stack",
        "train": "fine-tune the joint model",
        "eval": "metrics and montages for a trained model",
        "pipeline": "train the two-stage baseline and compare with the "
                    "joint model",
    }
    for name, help_text in helps.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")
        s.add_argument("--threads", type=int, default=1,
                       help="BLAS thread count (default 1, deterministic)")
        if name in ("train", "pipeline"):
            s.add_argument("--no-pretrain", action="store_true",
                           help="random init instead of the RBM stack")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("tripath: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    for var in _THREAD_VARS:  # must precede the first numpy import
        os.environ[var] = str(args.threads)

    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"tripath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "no_pretrain", False):
        cfg["no_pretrain"] = True

    from .dataio import IdxFormatError
    from .network import CheckpointError
    from .optim import DivergenceError
    from .rbm import StackFormatError

    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"tripath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxFormatError, CheckpointError, StackFormatError) as exc:
        print(f"tripath: file format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TypeError, ValueError) as exc:
        print(f"tripath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"tripath: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, FloatingPointError) as exc:
        print(f"tripath: numeric failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
