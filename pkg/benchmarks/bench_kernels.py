"""Compiled versus pure-Python kernels on the generation and search hot paths.

    python3 benchmarks/bench_kernels.py --count 20000
"""
import argparse
import time

import numpy as np

from honeyvault import kernels
from honeyvault.authn import enrollment_template, sample_shell
from honeyvault.facespace import fit_face_space
from honeyvault.streams import substream
from honeyvault.synth import (
    REFERENCE_MIN_DIST,
    REFERENCE_SIGMA_MAX,
    SeparationIndex,
    generate_honey,
    make_toy_corpus,
    min_pairwise_distance,
    nearest_distances,
)


def bench(backend, space, real, count, min_dist, queries, seed):
    index = SeparationIndex.from_templates(real, min_dist, backend)
    templates, stats = generate_honey(space, index, count, min_dist, seed)
    start = time.perf_counter()
    nearest_distances(queries, templates, backend)
    search = (time.perf_counter() - start) / len(queries)
    start = time.perf_counter()
    min_pairwise_distance(templates[:2000], backend)
    pairwise = time.perf_counter() - start
    return stats, search, pairwise, templates


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=20_000, help="honey templates per backend")
    ap.add_argument("--queries", type=int, default=500, help="nearest-neighbour queries")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    pairs, _ = make_toy_corpus(args.seed, 500, 50, 200, 80)
    space = fit_face_space(pairs, 80, 80, 80)
    real = np.array([enrollment_template(space, x, g) for x, g in pairs])
    min_dist = REFERENCE_MIN_DIST * space.sigma[0] / REFERENCE_SIGMA_MAX
    queries = sample_shell(space, args.queries, substream(args.seed, "bench-queries"))

    print(f"d={space.dim}, {len(real)} real templates, {args.count} honey templates, min_dist {min_dist:.0f}")
    print(f"{'backend':<8} {'s/template':>11} {'rejection':>10} {'s/query':>10} {'pairwise 2k':>12}")
    results = {}
    for backend in kernels.available_backends():
        stats, search, pairwise, templates = bench(backend, space, real, args.count, min_dist, queries, args.seed)
        results[backend] = templates
        print(
            f"{backend:<8} {stats.seconds_per_template:>11.3e} {stats.rejection_rate:>10.3%} "
            f"{search:>10.3e} {pairwise:>11.3f}s"
        )
    if len(results) == 2:
        same = np.array_equal(*results.values())
        print(f"backends produced identical templates: {same}")


if __name__ == "__main__":
    main()
