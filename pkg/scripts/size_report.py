#!/usr/bin/env python3
"""Print the parameter budget for a model configuration.

Shows per-tensor shapes and counts, the embedding share of the total, and the
on-disk footprint at float32 and int8 precision. The default configuration is
the phone-scale target: 10k vocabulary, 96-dim embedding, 670 hidden units,
which lands a hair over 1.4M weights with more than two thirds of them in the
tied input/output embedding.
"""

import argparse
import sys

from fedlm.cifg import CifgConfig, init_model, param_count, quantize, tensor_shapes


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--vocab-size", type=int, default=10000)
    p.add_argument("--embed-dim", type=int, default=96)
    p.add_argument("--hidden", type=int, default=670)
    args = p.parse_args(argv)

    cfg = CifgConfig(V=args.vocab_size, D=args.embed_dim, H=args.hidden)
    shapes = tensor_shapes(cfg)
    total = param_count(cfg)

    print(f"configuration: V={cfg.V} D={cfg.D} H={cfg.H}")
    print(f"{'tensor':<12} {'shape':<14} {'params':>10} {'share':>7}")
    for name, shape in shapes.items():
        n = 1
        for s in shape:
            n *= s
        print(f"{name:<12} {str(shape):<14} {n:>10,} {n / total:>6.1%}")
    print(f"{'total':<12} {'':<14} {total:>10,}")

    model = init_model(cfg, seed=0)
    q = quantize(model)
    print()
    print(f"float32 size: {4 * total:>10,} bytes")
    print(f"int8 size:    {q.serialized_nbytes():>10,} bytes "
          f"({q.serialized_nbytes() / (4 * total):.1%} of float32)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
