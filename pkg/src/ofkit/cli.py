"""``ofkit`` command line: genpool, adv, simulate, detect.

Exit codes: 0 success, 1 negative domain verdict (or failed scenario
assertion), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import detector, fmm, smarttag
from .crypto import unhex
from .scanlog import read_scanlog, write_scanlog
from .sim.scenarios import SCENARIO_NAMES, UnknownScenario, load_scenario_file, run_scenario

EXIT_OK, EXIT_NEGATIVE, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("ofkit")


class CliError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _fmm_config(path) -> fmm.PrivateIdConfig:
    try:
        return fmm.PrivateIdConfig.from_json(_read_json(path))
    except (KeyError, ValueError) as exc:
        raise CliError(f"malformed FMM config {path}: {exc!r}") from exc


def _tag_config(path) -> smarttag.PrivacyConfig:
    try:
        return smarttag.PrivacyConfig.from_json(_read_json(path))
    except (KeyError, ValueError) as exc:
        raise CliError(f"malformed SmartTag config {path}: {exc!r}") from exc


def cmd_genpool(args) -> int:
    if args.kind == "fmm":
        ids = fmm.fmm_pool(_fmm_config(args.config)).hex_ids()
    else:
        ids = smarttag.st_privacy_pool(_tag_config(args.config)).hex_ids()
    _emit(ids, args.output)
    return EXIT_OK


def _fields(text: str) -> dict:
    if text.startswith("@"):
        return _read_json(text[1:])
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid field JSON: {exc}") from exc


def cmd_adv(args) -> int:
    try:
        if args.action == "decode":
            data = unhex(args.input)
            if args.kind == "fmm":
                obj = fmm.fmm_decode_adv(data).to_json()
            elif args.kind == "smarttag":
                obj = smarttag.st_decode_adv(data).to_json()
            else:
                u = smarttag.st_unreg_decode(data)
                obj = {"mn_id": u.mn_id, "setup_id": u.setup_id, "mac_suffix": u.mac_suffix.decode("latin-1")}
            _emit(obj, None)
            return EXIT_OK
        if args.action == "encode":
            f = _fields(args.input)
            if args.kind == "fmm":
                print(fmm.fmm_encode_adv(fmm.FmmAdvertisement.from_json(f)).hex())
            elif args.kind == "smarttag":
                adv = smarttag.SmartTagAdvertisement.from_json(f)
                print(smarttag.st_encode_adv(adv, _tag_config(args.config)).hex() if args.config
                      else adv.to_bytes().hex())
            else:
                print(smarttag.st_unreg_encode(smarttag.UnregisteredAdvertisement(
                    f.get("mn_id", "0AFD"), f.get("setup_id", "430"), f["mac_suffix"].encode())).hex())
            return EXIT_OK
        # verify
        data = unhex(args.input)
        if not args.config:
            raise CliError("verify needs --config")
        if args.kind == "fmm":
            adv = fmm.fmm_decode_adv(data)
            verdict = "ok" if adv.private_id in fmm.fmm_pool(_fmm_config(args.config)) else "unknown-id"
        elif args.kind == "smarttag":
            counter = args.counter
            if counter is None and args.now is not None:
                counter = smarttag.aging_counter(args.now)
            verdict = smarttag.st_verify_adv(data, _tag_config(args.config), counter, window=args.window).value
        else:
            raise CliError("verify supports --kind fmm or smarttag")
        print(verdict)
        return EXIT_OK if verdict == "ok" else EXIT_NEGATIVE
    except (ValueError, KeyError) as exc:
        raise CliError(f"malformed input: {exc!r}") from exc


def cmd_simulate(args) -> int:
    name, seed, params = args.scenario, args.seed, {}
    if args.scenario_file:
        name, seed, params = load_scenario_file(args.scenario_file)
        if args.seed_given:
            seed = args.seed
    if name is None:
        raise CliError("scenario name or --scenario-file required")
    if args.params:
        params.update(_read_json(args.params))
    if args.strict:
        params["strict"] = True
    try:
        res = run_scenario(name, seed, params)
    except UnknownScenario:
        raise CliError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    text = res.transcript_text()
    if args.output:
        Path(args.output).write_text(text)
    if args.scanlog:
        with open(args.scanlog, "w") as fh:
            write_scanlog(res.scanlog, fh)
    print(res.report())
    return EXIT_OK if res.ok else EXIT_NEGATIVE


def _load_pools(paths):
    fmm_pools, tag_pools = [], []
    for path in paths:
        obj = _read_json(path)
        device_id = Path(path).stem
        if isinstance(obj, dict):
            device_id, obj = obj.get("device_id", device_id), obj["ids"]
        ids = [unhex(x) for x in obj]
        if ids and len(ids[0]) == 12:
            fmm_pools.append(fmm.FmmPool(device_id, tuple(fmm.FmmPrivateId(v, i + 1) for i, v in enumerate(ids))))
        else:
            tag_pools.append(smarttag.SmartTagPrivacyPool(tuple(ids), device_id))
    return fmm_pools, tag_pools


def cmd_detect(args) -> int:
    try:
        with open(args.scanlog) as fh:
            records = list(read_scanlog(fh))
    except OSError as exc:
        raise CliError(f"cannot read scan log: {exc}") from exc
    fmm_pools, tag_pools = _load_pools(args.pools or [])
    irks = {}
    for spec in args.irk or []:
        name, _, hexkey = spec.rpartition("=")
        irks[name or f"irk{len(irks)}"] = unhex(hexkey)
    hyps = detector.detect_following(records, window=args.window, min_sightings=args.min_sightings,
                                     fmm_pools=fmm_pools, tag_pools=tag_pools, irks=irks)
    out = {"hypotheses": [h.to_json() for h in hyps]}
    if args.harvest:
        out["candidate_pools"] = [c.to_json() for c in detector.harvest_fmm_pools(records)]
    if irks:
        out["resolved"] = {n: len(detector.resolve_with_irk(records, k)) for n, k in irks.items()}
    _emit(out, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    env_seed = os.environ.get("OFKIT_SEED")
    p = argparse.ArgumentParser(prog="ofkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genpool", help="write a device's privacy-ID pool as a JSON list of hex IDs")
    g.add_argument("kind", choices=["fmm", "smarttag"])
    g.add_argument("config")
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_genpool)

    a = sub.add_parser("adv", help="encode, decode or verify an advertisement payload")
    a.add_argument("action", choices=["encode", "decode", "verify"])
    a.add_argument("input", help="payload hex (decode/verify) or field JSON / @file (encode)")
    a.add_argument("--kind", choices=["fmm", "smarttag", "unregistered"], default="smarttag")
    a.add_argument("--config", help="PrivateIdConfig or PrivacyConfig JSON")
    a.add_argument("--counter", type=int, help="server aging counter for the freshness check")
    a.add_argument("--now", type=int, help="server unix time (alternative to --counter)")
    a.add_argument("--window", type=int, default=smarttag.DEFAULT_FRESHNESS_WINDOW)
    a.set_defaults(fn=cmd_adv)

    s = sub.add_parser("simulate", help="run a scenario and write its transcript")
    s.add_argument("scenario", nargs="?", help=", ".join(SCENARIO_NAMES))
    s.add_argument("--scenario-file")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--params", help="JSON file of scenario parameters")
    s.add_argument("--strict", action="store_true", help="enable server plausibility checking")
    s.add_argument("-o", "--output", help="transcript JSON-lines path")
    s.add_argument("--scanlog", help="write the scenario's scan log here")
    s.set_defaults(fn=cmd_simulate)

    d = sub.add_parser("detect", help="run the tracker detector over a scan log")
    d.add_argument("scanlog")
    d.add_argument("--pools", nargs="*", help="pool JSON files (as written by genpool)")
    d.add_argument("--irk", action="append", help="[name=]hex IRK; repeatable")
    d.add_argument("--window", type=float, default=detector.DEFAULT_WINDOW)
    d.add_argument("--min-sightings", type=int, default=detector.DEFAULT_MIN_SIGHTINGS)
    d.add_argument("--harvest", action="store_true", help="include harvested FMM candidate pools")
    d.add_argument("-o", "--output")
    d.set_defaults(fn=cmd_detect)
    p.set_defaults(env_seed=env_seed)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    warnings.simplefilter("default")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    if args.command == "simulate":
        args.seed_given = args.seed is not None
        if args.seed is None:
            args.seed = int(args.env_seed) if args.env_seed else 0
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"ofkit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
