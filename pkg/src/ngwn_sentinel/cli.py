"""Command-line entry point: ``ngwn-sentinel <verb> [options]``.

Exit codes: 0 success, 1 runtime failure (one-line diagnostic on stderr),
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import aids_dcrnn as aids
from . import bliss_sig
from . import honeynet as hn
from . import ledger_auth as la
from . import sids_irf as irf
from . import sim as simmod
from . import trust_hbo as hbo
from .data_ingest import (FeatureSchema, MinMaxScaler, default_schema, images_from_matrix,
                          load_flow_csv, synth_traffic, write_flow_csv)

OUT_ENV = "NGWN_SENTINEL_OUT"


class CliError(Exception):
    pass


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ngwn-sentinel", description="Edge-IoT intrusion defence simulator.")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="INI scenario file")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")

    sp = sub.add_parser("ingest", help="load and validate a flow CSV")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--schema", default=None)

    for verb, helptext in (("train-sids", "train the signature forest"),
                           ("train-aids", "train the anomaly classifier")):
        sp = sub.add_parser(verb, help=helptext)
        common(sp)
        sp.add_argument("--dataset", default=None, help="training CSV (default: synthetic traffic)")
        sp.add_argument("--test", default=None, help="optional evaluation CSV")
        sp.add_argument("--schema", default=None)

    sp = sub.add_parser("simulate", help="run a scenario")
    common(sp, config_required=True)
    sp.add_argument("--feedback", choices=("on", "off"), default=None)
    sp.add_argument("--sweep", type=int, default=1, help="run N consecutive seeds")

    sp = sub.add_parser("report", help="summarize a run directory")
    sp.add_argument("run_dir")

    sp = sub.add_parser("verify-log", help="decrypt and verify a sealed honeypot log")
    sp.add_argument("log")
    sp.add_argument("--keys", default=None, help="keys file (default: honeynet.keys next to the log)")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _out_dir(args) -> Path:
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schema(args) -> FeatureSchema:
    return FeatureSchema.from_file(args.schema) if getattr(args, "schema", None) else default_schema()


def _config(args) -> simmod.SimConfig:
    cfg = simmod.load_config(args.config) if args.config else simmod.SimConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "feedback", None) is not None:
        cfg = replace(cfg, feedback=args.feedback == "on")
    return cfg


def _training_data(args, cfg):
    if args.dataset:
        return load_flow_csv(args.dataset, _schema(args), allow_extra_columns=True)
    model = cfg.traffic_model()
    return synth_traffic(replace(model, benign=cfg.train_benign,
                                 attacks={f: cfg.train_per_family for f in cfg.known_families}), cfg.seed)


def cmd_ingest(args) -> int:
    data = load_flow_csv(args.dataset, _schema(args), allow_extra_columns=True)
    out = _out_dir(args)
    write_flow_csv(data, out / "dataset.csv")
    fams: dict[str, int] = {}
    for f in data.family[data.y == 1]:
        fams[f or "ATTACK"] = fams.get(f or "ATTACK", 0) + 1
    summary = {"rows": len(data), "benign": data.n_benign, "attack": data.n_attack,
               "dropped": data.dropped_count, "families": dict(sorted(fams.items()))}
    (out / "ingest_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"ingested {len(data)} rows ({data.dropped_count} dropped) -> {out}")
    return 0


def cmd_train_sids(args) -> int:
    cfg = _config(args)
    train = _training_data(args, cfg)
    forest = irf.train_forest(train, Z0=cfg.Z0, seed=cfg.seed)
    if cfg.refine_passes:
        forest = irf.refine_forest(forest, train, h0=cfg.h0, max_passes=cfg.refine_passes)
    out = _out_dir(args)
    irf.save_forest(forest, out / "forest.irf")
    result = {"train_rows": len(train), "trees": forest.Z, "active_features": len(forest.feature_set),
              "train_accuracy": forest.accuracy(train)}
    if args.test:
        test = load_flow_csv(args.test, train.schema, allow_extra_columns=True)
        result["test_rows"] = len(test)
        result["test_accuracy"] = forest.accuracy(test)
    (out / "sids_eval.json").write_text(json.dumps(result, indent=2) + "\n")
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in result.items()))
    return 0


def cmd_train_aids(args) -> int:
    cfg = _config(args)
    train = _training_data(args, cfg)
    n = min(cfg.aids_train_samples, len(train))
    scaler = MinMaxScaler.fit(train.X)
    model = aids.DcrnnModel.init(aids.DcrnnConfig(filters=cfg.aids_filters, hidden=cfg.aids_hidden), cfg.seed)
    model, losses = aids.train(model, images_from_matrix(train.X[:n], scaler), train.y[:n],
                               aids.TrainConfig(learning_rate=cfg.aids_learning_rate,
                                                epochs=cfg.aids_epochs, seed=cfg.seed))
    out = _out_dir(args)
    model.save(out / "model.dcr")
    np.savez(out / "scaler.npz", lo=scaler.lo, hi=scaler.hi)
    result = {"train_rows": n, "final_loss": losses[-1],
              "train_accuracy": aids.accuracy(model, images_from_matrix(train.X[:n], scaler), train.y[:n])}
    if args.test:
        test = load_flow_csv(args.test, train.schema, allow_extra_columns=True)
        result["test_accuracy"] = aids.accuracy(model, images_from_matrix(test.X, scaler), test.y)
    (out / "aids_eval.json").write_text(json.dumps(result, indent=2) + "\n")
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in result.items()))
    return 0


def write_keys(net: hn.Honeynet, path: Path) -> None:
    doc = {"params": asdict(net.params), "public": net.keys.public.to_bytes().hex(),
           "cipher_key": net.cipher_key.hex()}
    path.write_text(json.dumps(doc, indent=2) + "\n")


def read_keys(path: Path) -> tuple[bliss_sig.PublicKey, bliss_sig.SignParams, bytes]:
    if not path.is_file():
        raise CliError(f"{path}: keys file not found")
    doc = json.loads(path.read_text())
    return (bliss_sig.PublicKey.from_bytes(bytes.fromhex(doc["public"])),
            bliss_sig.SignParams(**doc["params"]), bytes.fromhex(doc["cipher_key"]))


def cmd_simulate(args) -> int:
    if args.sweep < 1:
        raise CliError("--sweep must be >= 1")
    base = _config(args)
    out = _out_dir(args)
    reports = []
    for k in range(args.sweep):
        cfg = replace(base, seed=base.seed + k)
        sim = simmod.build_topology(cfg)
        report = simmod.run(sim)
        reports.append(report)
        run_dir = out if args.sweep == 1 else out / f"seed{cfg.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        la.export_chain(sim.ledger, run_dir / "ledger.jsonl")
        sim.honeynet.log.to_file(run_dir / "honeylog.hlog")
        write_keys(sim.honeynet, run_dir / "honeynet.keys")
        hbo.export_snapshot(sim.fleet, run_dir / "fleet.csv")
        m = report.metrics
        print(f"seed={cfg.seed} packets={report.packets} accuracy={simmod.format_value(m.accuracy)} "
              f"detection_rate={simmod.format_value(m.detection_rate)} wall={report.wall_time_s:.1f}s")
    simmod.write_reports(reports, out)
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "metrics.csv"
    if not path.is_file():
        raise CliError(f"{run_dir}: no metrics.csv (not a run directory?)")
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    for ln in lines[1:]:
        row = dict(zip(head, ln.split(",")))
        width = max(len(k) for k in head)
        for k in head:
            print(f"{k:<{width}}  {row.get(k, 'NA')}")
        print()
    return 0


def cmd_verify_log(args) -> int:
    log_path = Path(args.log)
    if not log_path.is_file():
        raise CliError(f"{log_path}: log file not found")
    keys = Path(args.keys) if args.keys else log_path.with_name("honeynet.keys")
    pub, params, cipher_key = read_keys(keys)
    log = hn.SealedLog.from_file(log_path)
    res = hn.harvest(log, pub, params, cipher_key)
    if res.failures:
        idx = ", ".join(str(i) for i, _ in res.failures)
        raise CliError(f"{log_path}: entry {idx} failed verification ({res.failures[0][1]})")
    print(f"{log_path}: {len(res.patterns)} entries verified")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train-sids": cmd_train_sids,
    "train-aids": cmd_train_aids,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "verify-log": cmd_verify_log,
}


def execute(args: argparse.Namespace) -> int:
    try:
        return COMMANDS[args.verb](args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        print(f"ngwn-sentinel {args.verb}: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return execute(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
