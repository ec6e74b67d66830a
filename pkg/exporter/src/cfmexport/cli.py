"""cfmexport export --spec spec.json"""

from __future__ import annotations

import argparse
import sys

from .export import export_feature_maps, export_person_scores, load_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cfmexport",
        description="Dump stub-model feature maps and person score maps "
                    "as CFT1 tensors.")
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export")
    exp.add_argument("--spec", required=True)
    args = parser.parse_args(argv)

    try:
        spec = load_spec(args.spec)
        written = []
        if spec.layers:
            written += export_feature_maps(spec)
        if spec.person_scores:
            written += export_person_scores(spec)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} tensor files to {spec.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
