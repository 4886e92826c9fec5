"""Command-line pipeline: synth, train, identify, eval, export-density.

Runs are configured by a JSON file (flags override specific values); every
command writes a manifest with the config hash and seed so the run can be
reproduced.  Results are deterministic for a given config and seed
regardless of the parallelism degree.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, corpus as corpus_mod, identify as identify_mod
from . import reader_model, synth as synth_mod


class ConfigError(ValueError):
    pass


# key -> (expected type(s), default); None default means required by the
# commands that use the key.
CONFIG_SCHEMA = {
    "corpus": (str, None),
    "test_corpus": (str, None),
    "models_dir": (str, None),
    "output_dir": (str, None),
    "seed": (int, 0),
    "jobs": (int, 1),
    "mode": (str, "semiparametric"),
    "lambda": ((int, float), 1.0),
    "rho": ((int, float), 1.0),
    "gp_amplitude": ((int, float, str), 1.0),
    "eta_step": ((int, float), 0.05),
    "iterations": (int, 10000),
    "burn_in": (int, 5000),
    "thinning": (int, 5),
    "quadrature_count": (int, 512),
    "extension_factor": ((int, float), 1.5),
    "eval_test_fractions": (list, [1.0]),
    "eval_subset_sizes": (list, []),
    "eval_repeats": (int, 1),
}

MODES = ("semiparametric", "gamma-baseline")


def load_config(path, overrides: dict) -> dict:
    raw = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    errors = []
    for key in raw:
        if key not in CONFIG_SCHEMA:
            errors.append(f"unknown config key {key!r}")
    config = {}
    for key, (types, default) in CONFIG_SCHEMA.items():
        if key in raw:
            value = raw[key]
            if isinstance(value, bool) or not isinstance(value, types):
                errors.append(f"config key {key!r}: expected {types}, got {value!r}")
            else:
                config[key] = value
        else:
            config[key] = default
    if config.get("mode") not in MODES:
        errors.append(f"config key 'mode': must be one of {MODES}")
    amp = config.get("gp_amplitude")
    if isinstance(amp, str) and amp != "tune":
        errors.append("config key 'gp_amplitude': must be a number or \"tune\"")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return config


def _require(config: dict, keys, command: str):
    missing = [k for k in keys if config.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required config keys: {missing}")


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_manifest(out_dir: Path, config: dict, command: str):
    body = json.dumps(config, sort_keys=True).encode()
    _write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "config": config,
            "config_hash": hashlib.sha256(body).hexdigest(),
            "seed": config.get("seed"),
            "jobs": config.get("jobs"),
            "version": __version__,
        },
    )


def _fit_config(config: dict, gp_amplitude: float) -> reader_model.FitConfig:
    return reader_model.FitConfig(
        lambda_=float(config["lambda"]),
        rho=float(config["rho"]),
        gp_amplitude=gp_amplitude,
        eta_step=float(config["eta_step"]),
        iterations=config["iterations"],
        burn_in=config["burn_in"],
        thinning=config["thinning"],
        quadrature_count=config["quadrature_count"],
        extension_factor=float(config["extension_factor"]),
        seed=config["seed"],
        keep_samples=False,
    )


def _group_by_reader(scanpaths):
    by_reader = {}
    for sp in scanpaths:
        by_reader.setdefault(sp.reader_id, []).append(sp)
    return by_reader


def _fit_one_reader(args):
    reader_id, sps, texts, cfg, mode, out_path = args
    if mode == "gamma-baseline":
        model = reader_model.fit_gamma_baseline(sps, texts, cfg)
    else:
        model = reader_model.fit(sps, texts, cfg).mean_model
    reader_model.save_model(out_path, model)
    return reader_id


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec_doc = json.load(fh)
    spec_doc["words_per_sentence"] = tuple(spec_doc.get("words_per_sentence", (5, 9)))
    spec_doc["word_length"] = tuple(spec_doc.get("word_length", (2.0, 10.0)))
    spec = synth_mod.PopulationSpec(**spec_doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    texts = synth_mod.make_corpus(spec, rng)
    models = synth_mod.make_population(
        spec, np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    )
    train, test = synth_mod.generate_dataset(models, texts, spec, spec.seed)
    corpus_mod.save_corpus(out / "train.jsonl", texts[: spec.sentences_train], train)
    corpus_mod.save_corpus(
        out / "test.jsonl",
        texts[spec.sentences_train: spec.sentences_train + spec.sentences_test],
        test,
    )
    truth_dir = out / "ground_truth"
    truth_dir.mkdir(exist_ok=True)
    for m in models:
        reader_model.save_model(truth_dir / f"{m.reader_id}.json", m)
    _write_json(
        out / "manifest.json",
        {"command": "synth", "spec": {**spec_doc,
                                      "words_per_sentence": list(spec.words_per_sentence),
                                      "word_length": list(spec.word_length)},
         "seed": spec.seed, "version": __version__},
    )
    print(f"wrote {len(train)} train and {len(test)} test scanpaths to {out}")
    return 0


def cmd_train(args, config) -> int:
    _require(config, ("corpus", "models_dir"), "train")
    texts_list, scanpaths = corpus_mod.load_corpus(config["corpus"])
    texts = {t.text_id: t for t in texts_list}
    by_reader = _group_by_reader(scanpaths)
    models_dir = Path(config["models_dir"])
    models_dir.mkdir(parents=True, exist_ok=True)

    amp = config["gp_amplitude"]
    if amp == "tune":
        tune_cfg = _fit_config(config, 1.0)
        amp = reader_model.tune_gp_amplitude(by_reader, texts, tune_cfg)
        print(f"tuned gp_amplitude = {amp}")
    cfg = _fit_config(config, float(amp))

    jobs = [
        (rid, sps, texts, cfg, config["mode"], models_dir / f"{rid}.json")
        for rid, sps in sorted(by_reader.items())
    ]
    if config["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=config["jobs"]) as pool:
            done = list(pool.map(_fit_one_reader, jobs))
    else:
        done = [_fit_one_reader(j) for j in jobs]
    log = {"fitted_readers": sorted(done), "mode": config["mode"],
           "gp_amplitude": amp}
    _write_json(models_dir / "training_log.json", log)
    write_manifest(models_dir, config, "train")
    print(f"fitted {len(done)} readers into {models_dir}")
    return 0


def _load_models(models_dir: Path) -> dict:
    models = {}
    for path in sorted(models_dir.glob("r*.json")):
        m = reader_model.load_model(path)
        models[m.reader_id] = m
    if not models:
        raise ConfigError(f"no model files found in {models_dir}")
    return models


def _load_units(test_corpus_path):
    texts_list, scanpaths = corpus_mod.load_corpus(test_corpus_path)
    texts = {t.text_id: t for t in texts_list}
    units = {}
    for sp in scanpaths:
        units.setdefault(sp.reader_id, []).append((sp, texts[sp.text_id]))
    return units


def _write_score_csv(path, matrix):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("unit," + ",".join(matrix.readers) + "\n")
        for uid, row in zip(matrix.test_units, matrix.log_scores):
            fh.write(uid + "," + ",".join(repr(v) for v in row) + "\n")


def cmd_identify(args, config) -> int:
    _require(config, ("models_dir", "test_corpus", "output_dir"), "identify")
    models = _load_models(Path(config["models_dir"]))
    units = _load_units(config["test_corpus"])
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    matrix = identify_mod.score_matrix(models, units)
    preds = identify_mod.identify(matrix)
    _write_score_csv(out / "score_matrix.csv", matrix)
    _write_json(out / "predictions.json", preds)
    truth = {u: u for u in matrix.test_units}  # units are keyed by true reader
    correct = sum(preds[u] == truth[u] for u in truth)
    write_manifest(out, config, "identify")
    print(f"identified {correct}/{len(truth)} units correctly")
    return 0


def cmd_eval(args, config) -> int:
    _require(config, ("models_dir", "test_corpus", "output_dir"), "eval")
    models = _load_models(Path(config["models_dir"]))
    units = _load_units(config["test_corpus"])
    truth = {u: u for u in units}
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)

    matrix = identify_mod.score_matrix(models, units)
    preds = identify_mod.identify(matrix)
    accuracy = identify_mod.multiclass_accuracy(preds, truth)
    norm = identify_mod.normalized_verification_scores(matrix)
    mask = identify_mod.genuine_mask(matrix, truth)
    curve = identify_mod.verification_curve(norm, mask)

    with open(out / "far_frr_curve.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("tau,far,frr\n")
        for t, fa, fr in zip(curve.thresholds, curve.far, curve.frr):
            fh.write(f"{t!r},{fa!r},{fr!r}\n")
    _write_score_csv(out / "score_matrix.csv", matrix)

    repeats = config["eval_repeats"]
    with open(out / "accuracy_vs_test_fraction.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("test_fraction,accuracy,se\n")
        for frac in config["eval_test_fractions"]:
            rep = identify_mod.evaluate(
                models, units, truth, test_fraction=float(frac),
                repeats=repeats, seed=config["seed"],
            )
            fh.write(f"{frac!r},{rep['accuracy']!r},{rep['accuracy_se']!r}\n")
    with open(out / "accuracy_vs_reader_count.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("reader_count,accuracy,se\n")
        for size in config["eval_subset_sizes"]:
            rep = identify_mod.evaluate(
                models, units, truth, subset_size=int(size),
                repeats=repeats, seed=config["seed"],
            )
            fh.write(f"{size},{rep['accuracy']!r},{rep['accuracy_se']!r}\n")

    _write_json(
        out / "report.json",
        {"accuracy": accuracy, "auc": curve.auc, "predictions": preds,
         "units": list(matrix.test_units), "readers": list(matrix.readers)},
    )
    write_manifest(out, config, "eval")
    print(f"accuracy {accuracy:.4f}, verification AUC {curve.auc:.6f}")
    return 0


def cmd_export_density(args) -> int:
    model = reader_model.load_model(args.model)
    if args.role not in reader_model.ROLES:
        raise ConfigError(
            f"unknown role {args.role!r}; choose from {reader_model.ROLES}"
        )
    model.densities[args.role].export_csv(args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gazeid")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("--spec", required=True, help="population spec JSON")
    sp.add_argument("--out", required=True, help="output directory")

    for name in ("train", "identify", "eval"):
        cp = sub.add_parser(name)
        cp.add_argument("--config", help="run config JSON")
        cp.add_argument("--seed", type=int)
        cp.add_argument("--jobs", type=int)
        cp.add_argument("--mode", choices=MODES)

    ep = sub.add_parser("export-density", help="dump one density as CSV")
    ep.add_argument("--model", required=True)
    ep.add_argument("--role", required=True)
    ep.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "export-density":
            return cmd_export_density(args)
        config = load_config(
            args.config,
            {"seed": args.seed, "jobs": args.jobs, "mode": args.mode},
        )
        if args.command == "train":
            return cmd_train(args, config)
        if args.command == "identify":
            return cmd_identify(args, config)
        return cmd_eval(args, config)
    except (ConfigError, corpus_mod.CorpusError, reader_model.ModelError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
