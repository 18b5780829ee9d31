"""integrator-twin: run simulated shots, fit reference drift, serve and drive the controller.

Exit codes: 0 success, 2 usage, 3 controller replied ERR, 4 I/O or connection
failure, 5 threshold check failed, 6 timeout, 7 missing reference / bad config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .controller import ChannelBank, Controller, ControllerServer, ControllerState, ParameterStore
from .controller.server import DEFAULT_PORT
from .controller.state import DEFAULT_GAIN_TABLE, StoreError
from .drift import DriftFit, fit_drift_slope
from .integrator import PRESETS, Mode, format_cmrr
from .signals import PULSE_WIDTH_PRESETS, add_noise

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PROTOCOL = 3
EXIT_IO = 4
EXIT_THRESHOLD = 5
EXIT_TIMEOUT = 6
EXIT_CONFIG = 7

log = logging.getLogger("integrator_twin")


def _pulse_width(text: str) -> float:
    if text in PULSE_WIDTH_PRESETS:
        return PULSE_WIDTH_PRESETS[text]
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"pulse width must be seconds or one of {', '.join(PULSE_WIDTH_PRESETS)}"
        ) from None


def _add_shot_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--duration", type=float, default=400.0, help="shot length, s")
    p.add_argument("--rate", type=float, default=1000.0, help="sample rate, Hz")
    p.add_argument("--source", choices=harness.SOURCES, default="zero-input")
    p.add_argument("--pulse-width", type=_pulse_width, default=1.0, help="s, or a preset like 10ms / 1s")
    p.add_argument("--common-mode", type=float, default=0.0, help="common-mode input, V")
    p.add_argument("--preset", choices=sorted(PRESETS), default="fig5")
    p.add_argument("--cmrr-db", type=float, default=None, help="override the preset CMRR")
    p.add_argument("--noise-rms", type=float, default=0.0, help="digitizer noise, V rms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gain", type=float, default=1.0, help="gain-stage multiplier after the integrator")


def _shot_config(args, **extra) -> harness.ShotConfig:
    return harness.ShotConfig(
        duration=args.duration,
        sample_rate=args.rate,
        source=args.source,
        common_mode=args.common_mode,
        preset=args.preset,
        cmrr_db=args.cmrr_db,
        noise_rms=args.noise_rms,
        seed=args.seed,
        pulse_width=args.pulse_width,
        gain=args.gain,
        **extra,
    )


def _emit(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def cmd_run_shot(args) -> int:
    fit = None
    if args.reference:
        fit = DriftFit.from_dict(json.loads(Path(args.reference).read_text()))
    config = _shot_config(
        args,
        correction="reference" if (fit or args.correct) else "none",
        reference_fit=fit,
        remove_intercept=not args.keep_intercept,
        max_span=args.max_span,
        max_normalized=args.max_normalized,
    )
    result = harness.run_shot(config)
    if args.raw_csv:
        harness.export_trace(result.raw, args.raw_csv)
    if args.corrected_csv and result.corrected is not None:
        harness.export_trace(result.corrected, args.corrected_csv)
    _emit(result.report.to_dict(), args.report_json)
    return EXIT_OK if result.report.passed else EXIT_THRESHOLD


def cmd_fit_reference(args) -> int:
    window = tuple(args.window) if args.window else None
    if args.csv:
        trace = harness.import_trace(args.csv)
        fit = fit_drift_slope(trace, window)
    else:
        trace, fit = harness.fit_reference(_shot_config(args), window)
    if args.trace_csv:
        harness.export_trace(trace, args.trace_csv)
    _emit(fit.to_dict(), args.out)
    return EXIT_OK


def cmd_cmrr_test(args) -> int:
    params = PRESETS[args.preset]
    if args.cmrr_db is not None:
        params = params.with_(cmrr_db=args.cmrr_db)
    value = harness.measure_cmrr(args.v_cm, args.window, params, args.rate, args.floor)
    print(json.dumps({
        "v_cm": args.v_cm,
        "window": args.window,
        "cmrr_db": value if isinstance(value, float) else str(value),
        "reported": format_cmrr(value),
    }))
    return EXIT_OK


def cmd_export(args) -> int:
    config = _shot_config(args)
    trace = harness.make_source(config)
    if args.noise_rms:
        trace = add_noise(trace, args.noise_rms, args.seed)
    harness.export_trace(trace, args.out)
    print(f"wrote {len(trace)} samples to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    raw = harness.import_trace(args.raw)
    corrected = harness.import_trace(args.corrected) if args.corrected else None
    rc = args.rc if args.rc is not None else PRESETS[args.preset].rc
    report = harness.build_report(raw, corrected, rc, args.max_span, args.max_normalized)
    _emit(report.to_dict(), args.report_json)
    return EXIT_OK if report.passed else EXIT_THRESHOLD


def _load_gain_table(path: str | None) -> dict[int, float]:
    if not path:
        return dict(DEFAULT_GAIN_TABLE)
    raw = json.loads(Path(path).read_text())
    return {int(k): float(v) for k, v in raw.items()}


def _console(controller: Controller, stream) -> None:
    """Local injections: ``trigger <reset|integrate|hold>`` or ``switch <...>``."""
    for line in stream:
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("trigger", "switch"):
            print("usage: trigger|switch reset|integrate|hold", file=sys.stderr)
            continue
        try:
            event = Mode(parts[1])
        except ValueError:
            print(f"unknown event {parts[1]!r}", file=sys.stderr)
            continue
        entry = controller.hardware_trigger if parts[0] == "trigger" else controller.manual_switch
        entry(event)
        print(f"outputs: {controller.bank.outputs()}", file=sys.stderr)


def cmd_serve(args) -> int:
    store = ParameterStore(args.store)
    default = ControllerState(gain_table=_load_gain_table(args.gain_table))
    bank = ChannelBank(args.preset, noise_rms=args.noise_rms, seed=args.seed)
    controller = Controller(store, bank, pulse_width=args.pulse_width, default_state=default)
    server = ControllerServer(controller, host=args.host, port=args.port)
    server.start()
    print(f"serving on {server.address[0]}:{server.address[1]}", file=sys.stderr)
    try:
        if args.console:
            _console(controller, sys.stdin)
        else:
            server._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


def cmd_send(args) -> int:
    address = harness.parse_address(args.address, DEFAULT_PORT)
    if args.script:
        lines = Path(args.script).read_text().splitlines()
    elif args.command:
        lines = [" ".join(args.command)]
    else:
        print("send: give a command or --script", file=sys.stderr)
        return EXIT_USAGE
    transcript = harness.replay(address, lines, args.timeout)
    text = harness.format_transcript(transcript)
    if args.transcript:
        Path(args.transcript).write_text(text)
    if args.script:
        sys.stdout.write(text)
    else:
        print(transcript[-1][1])
    if args.script and not args.strict:
        return EXIT_OK
    return EXIT_PROTOCOL if any(reply.startswith("ERR") for _, reply in transcript) else EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    for path in args.csv:
        trace = harness.import_trace(path)
        ax.plot(trace.times(), trace.samples * 1e3, label=Path(path).stem)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("integrator output (mV)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="integrator-twin", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of flag defaults (top level or per subcommand)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command_name", required=True)

    p = sub.add_parser("run-shot", help="simulate one shot and report drift")
    _add_shot_args(p)
    p.add_argument("--reference", help="fit JSON from fit-reference; enables causal correction")
    p.add_argument("--correct", action="store_true", help="require correction (fails without --reference)")
    p.add_argument("--keep-intercept", action="store_true", help="subtract the slope only")
    p.add_argument("--raw-csv")
    p.add_argument("--corrected-csv")
    p.add_argument("--report-json")
    p.add_argument("--max-span", type=float, help="V; fail (exit 5) above this")
    p.add_argument("--max-normalized", type=float, help="V*s per 1000 s; fail (exit 5) above this")
    p.set_defaults(func=cmd_run_shot)

    p = sub.add_parser("fit-reference", help="fit the drift line of a reference shot")
    _add_shot_args(p)
    p.add_argument("--csv", help="fit an exported trace instead of simulating")
    p.add_argument("--window", type=float, nargs=2, metavar=("T_LO", "T_HI"))
    p.add_argument("--trace-csv", help="also export the reference trace")
    p.add_argument("--out", help="write the fit JSON here")
    p.set_defaults(func=cmd_fit_reference)

    p = sub.add_parser("cmrr-test", help="measure CMRR from a common-mode drift shot")
    p.add_argument("--v-cm", type=float, default=1.5)
    p.add_argument("--window", type=float, default=100.0)
    p.add_argument("--preset", choices=sorted(PRESETS), default="cmrr125")
    p.add_argument("--cmrr-db", type=float, default=None)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--floor", type=float, default=harness.MEASURABILITY_FLOOR, help="V; smaller drift is unmeasurable")
    p.set_defaults(func=cmd_cmrr_test)

    p = sub.add_parser("serve", help="run the controller on TCP")
    p.add_argument("--host", default=None, help="bind address (default: stored IP)")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--store", default="controller.eeprom", help="parameter store file")
    p.add_argument("--gain-table", help="JSON {code: multiplier} used when the store is empty")
    p.add_argument("--preset", choices=sorted(PRESETS), default="ideal")
    p.add_argument("--noise-rms", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pulse-width", type=_pulse_width, default=1.0)
    p.add_argument("--console", action="store_true", help="read trigger/switch injections from stdin")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("send", help="send commands to a running controller")
    p.add_argument("command", nargs="*")
    p.add_argument("--address", default=f"127.0.0.1:{DEFAULT_PORT}")
    p.add_argument("--script", help="file of commands, one per line")
    p.add_argument("--strict", action="store_true", help="with --script, exit 3 if any reply is ERR")
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--transcript", help="write '> request / < reply' pairs here")
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("export", help="export a source waveform as CSV")
    _add_shot_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="recompute a shot report from exported CSVs")
    p.add_argument("--raw", required=True)
    p.add_argument("--corrected")
    p.add_argument("--preset", choices=sorted(PRESETS), default="fig5")
    p.add_argument("--rc", type=float, help="time constant, s (overrides --preset)")
    p.add_argument("--max-span", type=float)
    p.add_argument("--max-normalized", type=float)
    p.add_argument("--report-json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="plot exported CSV traces to an image")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", default="traces.png")
    p.set_defaults(func=cmd_plot)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = json.loads(Path(known.config).read_text())
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subparsers.choices.items():
        flat = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
        section = {k.replace("-", "_"): v for k, v in cfg.get(name, {}).items()}
        sp.set_defaults(**{**flat, **section})


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except harness.ClientTimeout as exc:
        print(f"error: timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except harness.ClientConnectionError as exc:
        print(f"error: connection: {exc}", file=sys.stderr)
        return EXIT_IO
    except harness.MissingReferenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, StoreError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
