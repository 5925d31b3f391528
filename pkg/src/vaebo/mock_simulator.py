"""Reference external simulator for protocol conformance.

Reads one request line from stdin, writes one response line to stdout::

    python -m vaebo.mock_simulator --model reactor

Extra models exercise the failure paths: ``constant`` (echo a fixed value),
``sleep`` (never answers in time), ``fail`` (error record), ``crash``
(nonzero exit), ``garbage`` (non-JSON output).
"""

import argparse
import json
import sys
import time

from .simulators import MOCK_MODELS, SimulatorResponse


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="vaebo-mock-simulator")
    ap.add_argument("--model", default="reactor",
                    choices=sorted(MOCK_MODELS) + ["constant", "sleep", "fail", "crash", "garbage"])
    ap.add_argument("--value", type=float, default=1.0, help="objective for --model constant")
    ap.add_argument("--seconds", type=float, default=3600.0, help="delay for --model sleep")
    args = ap.parse_args(argv)

    line = sys.stdin.readline()
    req = json.loads(line)
    rid = req.get("id", 0)

    if args.model == "sleep":
        time.sleep(args.seconds)
        resp = SimulatorResponse(rid, True, (args.value,))
    elif args.model == "crash":
        print("mock simulator crashed on purpose", file=sys.stderr)
        return 3
    elif args.model == "garbage":
        sys.stdout.write("this is not json\n")
        return 0
    elif args.model == "fail":
        resp = SimulatorResponse(rid, False, reason="mock failure")
    elif args.model == "constant":
        resp = SimulatorResponse(rid, True, (args.value,))
    else:
        try:
            objs = MOCK_MODELS[args.model](req["variables"])
            resp = SimulatorResponse(rid, True, tuple(float(v) for v in objs))
        except (KeyError, ValueError, TypeError) as exc:
            resp = SimulatorResponse(rid, False, reason=f"{type(exc).__name__}: {exc}")
    sys.stdout.write(resp.to_line())
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
