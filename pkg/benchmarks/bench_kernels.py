"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Kernel rows call both modules directly in this process. The end-to-end rows
run a small workload in a subprocess per backend (selected via QSTROM_PUREPY).
"""

import argparse
import json
import os
import random
import subprocess
import sys
import timeit

from qstrom import _purepy
from qstrom.crypto import DEMO

try:
    from qstrom import _native
except ImportError:
    _native = None

END_TO_END = r"""
import random, time
from qstrom.kernels import BACKEND
from qstrom.crypto import DEMO, keygen, lsag_sign, lsag_verify
from qstrom.market import Order, OrderBook, Side, Tariffs, clear
keys = [keygen(DEMO, i) for i in range(11)]
ring = [k.public for k in keys]
t = time.perf_counter()
for i in range(200):
    sig = lsag_sign(DEMO, b"m%d" % i, ring, i % 11, keys[i % 11].secret, i)
    assert lsag_verify(DEMO, b"m%d" % i, ring, sig)
lsag = time.perf_counter() - t
rng = random.Random(1)
books = []
for b in range(300):
    book = OrderBook(0)
    for k in range(40):
        book.submit(Order(k.to_bytes(32, "big"), rng.choice([Side.BUY, Side.SELL]),
                          rng.randint(5000, 30000), rng.randint(1, 3000), 0))
    book.close()
    books.append(book)
t = time.perf_counter()
for book in books:
    clear(book, Tariffs())
print(BACKEND, lsag, time.perf_counter() - t)
"""


def kernel_cases(rng):
    p, q, g = DEMO.p, DEMO.q, DEMO.G
    exps = [rng.randrange(q) for _ in range(2000)]
    buys = sorted((rng.randint(5000, 30000), rng.randint(1, 3000)) for _ in range(200))[::-1]
    sells = sorted((rng.randint(5000, 30000), rng.randint(1, 3000)) for _ in range(200))
    book = ([b[0] for b in buys], [b[1] for b in buys], [s[0] for s in sells], [s[1] for s in sells])
    return {
        "powmod x2000": lambda m: [m.powmod(g, e, p) for e in exps],
        "dual_powmod x1000": lambda m: [m.dual_powmod(g, exps[i], g, exps[-i - 1], p) for i in range(1000)],
        "match_sorted 200x200": lambda m: m.match_sorted(*book),
    }


def bench(repeat):
    rows = []
    for name, fn in kernel_cases(random.Random(0)).items():
        py = min(timeit.repeat(lambda: fn(_purepy), number=1, repeat=repeat))
        nat = min(timeit.repeat(lambda: fn(_native), number=1, repeat=repeat)) if _native else None
        if _native:
            assert fn(_purepy) == fn(_native), name
        rows.append({"case": name, "python_s": py, "native_s": nat})
    e2e = {}
    for flag in ("1", "0"):
        env = dict(os.environ, QSTROM_PUREPY=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        backend, lsag, clearing = out.stdout.split()
        e2e[backend] = (float(lsag), float(clearing))
    for i, case in enumerate(("lsag sign+verify x200, ring 11", "clear x300 books of 40")):
        rows.append({"case": case, "python_s": e2e["python"][i], "native_s": e2e.get("native", (None, None))[i]})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    rows = bench(args.repeat)
    print(f"{'case':34} {'python':>10} {'native':>10} {'speedup':>8}")
    for r in rows:
        nat = r["native_s"]
        speed = f"{r['python_s'] / nat:7.1f}x" if nat else "     n/a"
        print(f"{r['case']:34} {r['python_s']:9.4f}s {nat if nat is None else format(nat, '9.4f') + 's':>10} {speed}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
