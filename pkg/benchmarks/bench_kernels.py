"""Compare the compiled assembly kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from mgalerkin import _pykernels
from mgalerkin.fnspace import build_space
from mgalerkin.problems import taylor_hood

try:
    from mgalerkin import _ckernels
except ImportError:
    _ckernels = None


def cases():
    """(name, callable taking a kernel module) pairs on desk-scale meshes."""
    rng = np.random.default_rng(0)
    out = []
    for ref in (4, 6):
        space = build_space(2, ref, degree=2, p=1.5)
        u = rng.standard_normal(space.dim)
        grad = space.gradients(u)
        elem = rng.standard_normal(space.cell_dofs.shape)
        out.append((f"scatter_add ref={ref}", lambda m, s=space, e=elem: m.scatter_add(s.cell_dofs, e, s.ntotal)))
        out.append((
            f"duality_elements ref={ref}",
            lambda m, s=space, g=grad: m.duality_elements(g, s.dphi, s.wq, 1.5),
        ))
    for ref in (3, 4):
        th = taylor_hood(ref)
        w = rng.standard_normal(2 * th.n)
        vals, grads = th.velocity_values(w)
        V = th.V
        out.append((
            f"convection_local ref={ref}",
            lambda m, v=vals, g=grads, V=V: m.convection_local(v, g, V.phi, V.dphi, V.wq),
        ))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':28s} {'numpy [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:28s} {t_py:12.3f}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        a, b = fn(_pykernels), fn(_ckernels)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        diff = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))
        print(f"{name:28s} {t_py:12.3f} {t_c:12.3f} {t_py / t_c:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
