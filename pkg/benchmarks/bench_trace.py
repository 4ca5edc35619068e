"""Compare the compiled and pure-Python trace kernels on a synthetic log.

    python benchmarks/bench_trace.py [--lines N] [--repeat R]
"""

import argparse
import random
import statistics
import time

from depprune.trace import DEFAULT_EXTENSIONS, OPEN_SYSCALLS, _prefixes, _pykernel

try:
    from depprune.trace import _ckernel
except ImportError:
    _ckernel = None

ROOT = "/srv/app"
NAMES = ["express", "lodash", "@babel/core", "debug", "ms", "chalk", "yargs", "@types/node"]


def synthetic_log(n: int, seed: int = 1) -> list[str]:
    rng = random.Random(seed)
    lines = []
    for i in range(n):
        pid = 1000 + rng.randrange(8)
        kind = rng.random()
        name = rng.choice(NAMES)
        nested = f"node_modules/{rng.choice(NAMES)}/" if rng.random() < 0.3 else ""
        path = f"{ROOT}/node_modules/{nested}{name}/lib/f{i % 50}.js"
        if kind < 0.45:
            lines.append(f'{pid} openat(AT_FDCWD, "{path}", O_RDONLY|O_CLOEXEC) = {3 + i % 90}')
        elif kind < 0.6:
            lines.append(f'{pid} openat(AT_FDCWD, "{path}", O_RDONLY) = -1 ENOENT (No such file or directory)')
        elif kind < 0.75:
            lines.append(f'{pid} newfstatat(AT_FDCWD, "{path}", {{st_mode=S_IFREG|0644}}, 0) = 0')
        elif kind < 0.8:
            lines.append(f"{pid} openat(AT_FDCWD, '{path}', O_RDONLY|O_CLOEXEC (0o2000000)) = 5")
        else:
            lines.append(f'{pid} read(3, "\\177ELF\\2\\1\\1", 832) = 832')
    return lines


def time_kernel(kernel, lines, prefixes, repeat):
    runs = []
    found = None
    for _ in range(repeat):
        start = time.perf_counter()
        found, _ = kernel.collect_modules(lines, frozenset(OPEN_SYSCALLS), prefixes, tuple(DEFAULT_EXTENSIONS))
        runs.append(time.perf_counter() - start)
    return statistics.median(runs), found


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lines", type=int, default=500_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    lines = synthetic_log(args.lines)
    prefixes = _prefixes(ROOT)
    py_t, py_found = time_kernel(_pykernel, lines, prefixes, args.repeat)
    print(f"python  {py_t:8.3f}s  {args.lines / py_t:12,.0f} lines/s")
    if _ckernel is None:
        print("cython  not built")
        return
    c_t, c_found = time_kernel(_ckernel, lines, prefixes, args.repeat)
    assert c_found == py_found, "kernels disagree"
    print(f"cython  {c_t:8.3f}s  {args.lines / c_t:12,.0f} lines/s")
    print(f"speedup {py_t / c_t:.2f}x  ({len(py_found)} module files matched)")


if __name__ == "__main__":
    main()
