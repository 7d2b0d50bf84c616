import argparse
import sys

from .export import ExportError, ExportJob, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Convert a title->description mapping file into a unit-norm embedding file.",
    )
    parser.add_argument("--mapping", required=True, help="input mapping file (JSONL)")
    parser.add_argument("--out", required=True, help="output embedding file (JSONL)")
    parser.add_argument(
        "--encoder", default="hashing:256",
        help="encoder id: hashing:<dim> or st:<sentence-transformers model>",
    )
    parser.add_argument("--batch-size", type=int, default=64)
    args = parser.parse_args(argv)
    try:
        count = export(
            ExportJob(
                mapping_path=args.mapping,
                output_path=args.out,
                encoder=args.encoder,
                batch_size=args.batch_size,
            )
        )
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} embedding records to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
