"""Run the pipeline and the three comparison tables on a toy-sized config.

The numbers are near chance at this size; the point is to see every stage,
artifact and table in a few seconds. Use ``--config desk`` for real runs.
"""
import argparse
import json
import tempfile
from pathlib import Path

from cinesync.cli.main import run

HERE = Path(__file__).resolve().parent


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(HERE / "tiny.json"))
    p.add_argument("--out", default=None, help="artifact root (default: a temporary directory)")
    args = p.parse_args()
    out = Path(args.out or tempfile.mkdtemp(prefix="cinesync-demo-"))

    for cmd in ("pipeline", "ablate-fusion", "ablate-alignment", "modality-compare"):
        print(f"\n$ cinesync {cmd} --config {args.config} --out {out}")
        code = run([cmd, "--config", args.config, "--out", str(out)])
        if code:
            raise SystemExit(code)

    for csv in sorted(out.glob("*/*/table.csv")):
        print(f"\n{csv.relative_to(out)}\n{csv.read_text()}")
    markers = [json.loads(m.read_text()) for m in out.glob("*/*/stage.json")]
    print(f"{len(markers)} stages, {sum(m['cpu_s'] for m in markers):.1f} CPU-s, artifacts under {out}")

if __name__ == "__main__":
    main()
