"""Operator command line.

Subcommands: ``dei serve``, ``ipe run``, ``nameservice serve``,
``synth generate``, ``experiment run``, ``metrics report``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from resight.synthpop import SyntheticSpec


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except BrokenPipeError:
        return 0
    except Exception as exc:  # surfaced as a diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resight", description=__doc__)
    sub = parser.add_subparsers(required=True)

    dei = sub.add_parser("dei", help="data exchange and interaction server")
    dei_sub = dei.add_subparsers(required=True)
    dei_serve = dei_sub.add_parser("serve", help="run a DEI")
    dei_serve.add_argument("--listen", default=os.environ.get("DEI_LISTEN_ADDR", "127.0.0.1:8400"))
    dei_serve.add_argument("--data-dir", default=os.environ.get("DEI_DATA_DIR", "./dei-data"))
    dei_serve.add_argument("--nameservice-url", default=os.environ.get("DEI_NAMESERVICE_URL", ""))
    dei_serve.add_argument("--lease-ttl", type=float, default=float(os.environ.get("DEI_LEASE_TTL", "300")))
    dei_serve.add_argument("--name", default="dei-main")
    dei_serve.add_argument("--principal", action="append", default=[], metavar="NAME:SECRET:CAP1+CAP2",
                           help="seed a principal (repeatable)")
    dei_serve.set_defaults(handler=cmd_dei_serve)

    ns = sub.add_parser("nameservice", help="DEI registry")
    ns_sub = ns.add_subparsers(required=True)
    ns_serve = ns_sub.add_parser("serve", help="run the name service")
    ns_serve.add_argument("--listen", default="127.0.0.1:8399")
    ns_serve.set_defaults(handler=cmd_nameservice_serve)

    ipe = sub.add_parser("ipe", help="image processing engine worker")
    ipe_sub = ipe.add_subparsers(required=True)
    ipe_run = ipe_sub.add_parser("run", help="poll a DEI for machine work")
    ipe_run.add_argument("--dei-url", default="")
    ipe_run.add_argument("--nameservice-url", default=os.environ.get("DEI_NAMESERVICE_URL", ""))
    ipe_run.add_argument("--principal", default="ipe")
    ipe_run.add_argument("--secret", default="ipe-secret")
    ipe_run.add_argument("--workflow", default="synthetic")
    ipe_run.add_argument("--seed", type=int, default=0)
    ipe_run.add_argument("--once", action="store_true", help="drain the queue and exit")
    ipe_run.set_defaults(handler=cmd_ipe_run)

    synth = sub.add_parser("synth", help="synthetic population tools")
    synth_sub = synth.add_subparsers(required=True)
    synth_gen = synth_sub.add_parser("generate", help="render a dataset")
    synth_gen.add_argument("--out", required=True)
    synth_gen.add_argument("--individuals", type=int, default=64)
    synth_gen.add_argument("--sightings", type=int, default=4)
    synth_gen.add_argument("--seed", type=int, default=7)
    synth_gen.set_defaults(handler=cmd_synth_generate)

    experiment = sub.add_parser("experiment", help="end-to-end indexing experiments")
    exp_sub = experiment.add_subparsers(required=True)
    exp_run = exp_sub.add_parser("run", help="generate/load, ingest, index, iterate feedback")
    exp_run.add_argument("--config", default="", help="JSON config file (flags override)")
    exp_run.add_argument("--dataset", default="", help="existing dataset directory")
    exp_run.add_argument("--individuals", type=int, default=64)
    exp_run.add_argument("--sightings", type=int, default=4)
    exp_run.add_argument("--workflow", default="synthetic")
    exp_run.add_argument("--seed", type=int, default=7)
    exp_run.add_argument("--iterations", type=int, default=2)
    exp_run.add_argument("--budget", type=float, default=0.01)
    exp_run.add_argument("--annotators", default="oracle", help="oracle | simulated:<accuracy> | live")
    exp_run.add_argument("--annotator-count", type=int, default=3)
    exp_run.add_argument("--out", required=True)
    exp_run.set_defaults(handler=cmd_experiment_run)

    metrics = sub.add_parser("metrics", help="experiment outputs")
    met_sub = metrics.add_subparsers(required=True)
    met_report = met_sub.add_parser("report", help="pretty-print a metrics.csv")
    met_report.add_argument("--out", required=True, help="experiment output directory")
    met_report.set_defaults(handler=cmd_metrics_report)

    return parser


def _split_listen(listen: str):
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_dei_serve(args) -> int:
    import uvicorn

    from resight.dei.core import DeiCore
    from resight.dei.nameservice import register_dei
    from resight.dei.server import create_dei_app
    from resight.workflow import shipped_workflow

    core = DeiCore(args.data_dir, lease_ttl=args.lease_ttl)
    for name in ("default", "synthetic"):
        core.register_workflow(shipped_workflow(name))
    for spec in args.principal:
        principal, secret, caps = spec.split(":")
        core.add_principal(principal, secret, caps.split("+"))
    if args.nameservice_url:
        ack = register_dei(
            args.nameservice_url,
            {"name": args.name, "address": f"http://{args.listen}", "workflows": ["default", "synthetic"]},
        )
        if not ack.get("ok"):
            print(f"warning: running degraded, {ack.get('reason')}", file=sys.stderr)
    host, port = _split_listen(args.listen)
    uvicorn.run(create_dei_app(core), host=host, port=port, log_level="warning")
    return 0


def cmd_nameservice_serve(args) -> int:
    import uvicorn

    from resight.dei.nameservice import create_nameservice_app

    host, port = _split_listen(args.listen)
    uvicorn.run(create_nameservice_app(), host=host, port=port, log_level="warning")
    return 0


def cmd_ipe_run(args) -> int:
    import time

    import httpx

    from resight.dei.client import DeiClient
    from resight.ipe import IpeWorker, MACHINE_STEPS

    url = args.dei_url
    if not url:
        if not args.nameservice_url:
            raise SystemExit("need --dei-url or --nameservice-url")
        listing = httpx.get(f"{args.nameservice_url}/list", timeout=10.0).json()
        if not listing:
            raise SystemExit("no DEI registered")
        url = listing[0]["address"]
    client = DeiClient(url)
    client.authenticate(args.principal, args.secret, MACHINE_STEPS)
    params = {}
    worker = IpeWorker(client, workflow_params=params, seed=args.seed)
    print(f"ipe: polling {url}")
    while True:
        handled = worker.run_until_idle()
        if args.once:
            print(f"ipe: handled {handled} items")
            return 0
        time.sleep(1.0)


def cmd_synth_generate(args) -> int:
    from resight.synthpop import generate_population

    spec = SyntheticSpec(n_individuals=args.individuals, sightings_per_individual=args.sightings, seed=args.seed)
    population = generate_population(spec, out_dir=args.out)
    print(f"wrote {len(population.images)} images to {args.out}")
    return 0


def cmd_experiment_run(args) -> int:
    from resight.pipeline import ExperimentConfig, run_experiment

    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    dataset = args.dataset or overrides.get("dataset") or SyntheticSpec(
        n_individuals=args.individuals, sightings_per_individual=args.sightings, seed=args.seed
    )
    config = ExperimentConfig(
        dataset=dataset,
        workflow=overrides.get("workflow", args.workflow),
        budget_fraction=overrides.get("budget", args.budget),
        iterations=overrides.get("iterations", args.iterations),
        annotator_mode=overrides.get("annotators", args.annotators),
        annotators=overrides.get("annotator_count", args.annotator_count),
        seed=overrides.get("seed", args.seed),
        out_dir=args.out,
    )
    result = run_experiment(config)
    states = result.core.metrics()["states"]
    not_indexed = {s: n for s, n in states.items() if s != "indexed"}
    print(f"experiment: {len(result.rows)} metric rows -> {args.out}/metrics.csv")
    for row in result.rows:
        print(
            f"  iteration {row['iteration']}: auc {row['auc']:.4f} recall@1 {row['recall@1']:.4f} "
            f"pairs_verified {row['pairs_verified']} conflicts {row['conflicts']}"
        )
    if not_indexed:
        print(f"error: images stuck outside 'indexed': {not_indexed}", file=sys.stderr)
        return 1
    return 0


def cmd_metrics_report(args) -> int:
    path = Path(args.out) / "metrics.csv"
    if not path.exists():
        raise SystemExit(f"no metrics.csv under {args.out}")
    rows = path.read_text().strip().split("\n")
    header = rows[0].split(",")
    widths = [max(len(h), 12) for h in header]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for line in rows[1:]:
        print("  ".join(c.ljust(w) for c, w in zip(line.split(","), widths)))
    cmc = Path(args.out) / "cmc.csv"
    if cmc.exists():
        print(f"\nCMC points: {cmc}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
