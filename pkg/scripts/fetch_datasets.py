#!/usr/bin/env python3
"""Download the public airline networks into the dataset cache.

    python3 scripts/fetch_datasets.py brazil euro usa [--dest DIR]

Files land in $DPGCN_DATA (default ~/.cache/dpgcn), which is where the CLI
and the acceptance suite look for them.
"""

import argparse

from dpgcn.datasets import PUBLIC_SOURCES, data_dir, fetch_public, load_public


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("names", nargs="*", default=sorted(PUBLIC_SOURCES), choices=sorted(PUBLIC_SOURCES))
    p.add_argument("--dest", default=None)
    args = p.parse_args()
    for name in args.names:
        e, l = fetch_public(name, args.dest)
        b = load_public(name, args.dest or data_dir())
        print(f"{name}: {e.name}, {l.name} -> {b.stats()}")


if __name__ == "__main__":
    main()
