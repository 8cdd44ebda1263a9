"""Command-line entry points.

`run` drives a whole session into a directory that the service could
equally have produced: same state.json, same evaluation log, same report
artifacts. That keeps scripted runs and console-driven runs comparable
row for row.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import shlex
import sys
from pathlib import Path

from . import deck as deckmod
from . import paramspace as P
from . import pipeline as PL
from .errors import NotFinished, PetromatchError
from .persist import PersistedSession

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="petromatch",
                     description="Reservoir history-matching workbench")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def backend_flags(p):
        p.add_argument("--backend", choices=("proxy", "external"),
                       default="proxy")
        p.add_argument("--runner", help="external simulator command template "
                       "(must reference {deck} and {outdir})")
        p.add_argument("--runner-timeout", type=float, default=3600.0)

    p = sub.add_parser("inspect", help="print the deck description as JSON")
    p.add_argument("--deck", required=True)

    p = sub.add_parser("parameterize",
                       help="plan and scan a deck, print the manifest")
    p.add_argument("--deck", required=True)
    p.add_argument("--obs", required=True)
    backend_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the manifest here instead of stdout")

    p = sub.add_parser("run", help="execute a session into a directory")
    p.add_argument("--deck", help="required unless resuming")
    p.add_argument("--obs", help="required unless resuming")
    backend_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, help="total evaluation budget")
    p.add_argument("--n-initial", type=int,
                   help="space-filling points within the budget")
    p.add_argument("--auto-approve", action="store_true",
                   help="pass both checkpoints without stopping")
    p.add_argument("--until", help="stop after reaching this phase")
    p.add_argument("--resume", action="store_true",
                   help="continue the session already in --out")
    p.add_argument("--out", default="petromatch-run",
                   help="session directory (default: petromatch-run)")

    p = sub.add_parser("report", help="print a finished run's report JSON")
    p.add_argument("--out", required=True, help="session directory")

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--data-dir", help="session store "
                   "(default: $PETROMATCH_DATA_DIR or ./petromatch-data)")
    p.add_argument("--bind", help="host:port "
                   "(default: $PETROMATCH_BIND_ADDR or 127.0.0.1:8866)")
    p.add_argument("--ui-dir", help="static console assets to serve at /ui")

    return parser


def _config_from_args(args) -> dict:
    config: dict = {"seed": args.seed, "backend": args.backend}
    if args.backend == "external":
        if not args.runner:
            raise SystemExit(_usage("--backend external needs --runner"))
        config["command"] = shlex.split(args.runner)
        config["timeout_s"] = args.runner_timeout
    if getattr(args, "budget", None) is not None:
        config["budget"] = args.budget
    if getattr(args, "n_initial", None) is not None:
        config["n_initial"] = args.n_initial
    if getattr(args, "auto_approve", False):
        config["auto_approve"] = True
    return config


def _usage(message: str) -> int:
    sys.stderr.write(f"error: {message}\n")
    return EXIT_USAGE


def _read(path: str, what: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise SystemExit(_usage(f"{what} file not found: {path}"))
    return p.read_text()


def cmd_inspect(args) -> int:
    deck = deckmod.parse_deck(_read(args.deck, "deck"))
    description, warnings = PL.describe_deck(deck)
    for w in warnings:
        sys.stderr.write(w + "\n")
    print(json.dumps(dataclasses.asdict(description), indent=2))
    return EXIT_OK


def _fresh_session(args, tmpdir: Path) -> PersistedSession:
    return PersistedSession.create(
        tmpdir, _read(args.deck, "deck"), _read(args.obs, "observations"),
        _config_from_args(args))


def cmd_parameterize(args) -> int:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        session = _fresh_session(args, Path(tmp) / "scan")
        session.advance(until="checkpoint_params")
        state = session.state
    if state.phase == "failed":
        sys.stderr.write(f"parameterization failed: {state.failure}\n")
        return EXIT_FAILED
    manifest = P.manifest_json(state.space)
    if args.out:
        Path(args.out).write_text(manifest)
    else:
        sys.stdout.write(manifest)
    return EXIT_OK


def cmd_run(args) -> int:
    out = Path(args.out)
    if (out / "state.json").exists():
        if not args.resume:
            return _usage(f"{out} already holds a session; "
                          "pass --resume to continue it")
        session = PersistedSession.load(out)
        if args.auto_approve and not session.config.get("auto_approve"):
            session.config["auto_approve"] = True
            session.save()
    elif args.resume:
        return _usage(f"--resume given but {out} holds no session")
    else:
        if not args.deck or not args.obs:
            return _usage("run needs --deck and --obs to start a session")
        session = PersistedSession.create(
            out, _read(args.deck, "deck"), _read(args.obs, "observations"),
            _config_from_args(args))

    status = session.advance(until=args.until)
    state = session.state
    if state.phase == "done":
        report = session.report_json()
        (out / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"done: wNRMSE {report['initial']:.6g} -> {report['best']:.6g} "
              f"({report['improvement_pct']}% improvement); "
              f"report in {out / 'report'}")
        return EXIT_OK
    if state.phase == "failed":
        sys.stderr.write(f"run failed: {state.failure}\n")
        return EXIT_FAILED
    print(f"stopped at phase {state.phase} (status {status}); "
          f"continue with --resume or through the service")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    if not (out / "state.json").exists():
        return _usage(f"{out} holds no session")
    session = PersistedSession.load(out)
    try:
        report = session.report_json()
    except NotFinished as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_FAILED
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    serve(data_dir=args.data_dir, bind=args.bind, ui_dir=args.ui_dir)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handler = {
        "inspect": cmd_inspect,
        "parameterize": cmd_parameterize,
        "run": cmd_run,
        "report": cmd_report,
        "serve": cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except PetromatchError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
