"""End-to-end KRR benchmark runs and their JSON reports.

Methods:

* ``adaptive``: the recursive leverage-score driver with the kernel's fast
  row sampler in every round.
* ``rownorm``: a single round of the fast row sampler with ``B`` empty,
  i.e. plain squared-row-norm sampling of the lifting.
* ``exact``: exact KRR on the full kernel matrix (small ``n`` only).
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ksembed._rowsampler import TaylorRowSampler
from ksembed.data import Dataset
from ksembed.errors import InvalidArgumentError
from ksembed.krr import fit_approx, fit_exact, predict, rmse
from ksembed.linalg import spectral_approx_check
from ksembed.sampling import SamplerConfig, recursive_leverage_sampling
from ksembed.taylor import TaylorKernelSpec, taylor_embed_rows, truncation_degree

SCHEMA_VERSION = 1
METHODS = ("adaptive", "rownorm", "exact")
EXACT_LIMIT = 20_000
SPECTRAL_CHECK_LIMIT = 2_000


def parse_kernel(text: str, X=None) -> TaylorKernelSpec:
    """Parse ``poly:q=3``, ``gaussian:r=1.0[,q=12]``, ``invpoly:q=20`` or ``taylor:coeffs=1/0.5/0.25``.

    A Gaussian without ``q`` gets the truncation degree for radius ``r`` and
    ``n = X.n_cols`` (``X`` is then required); without ``r`` the radius is
    read off the data.
    """
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise InvalidArgumentError(f"kernel parameter {item!r} is not key=value")
        params[key.strip()] = val.strip()

    def number(key, cast=float, default=None):
        if key not in params:
            if default is None:
                raise InvalidArgumentError(f"kernel {name!r} needs parameter {key}")
            return default
        try:
            return cast(params.pop(key))
        except ValueError:
            raise InvalidArgumentError(f"kernel parameter {key} is not a valid number") from None

    if name == "poly":
        spec = TaylorKernelSpec.polynomial(number("q", int))
    elif name == "invpoly":
        spec = TaylorKernelSpec.inverse_polynomial(number("q", int))
    elif name == "taylor":
        raw = params.pop("coeffs", None)
        if raw is None:
            raise InvalidArgumentError("taylor kernel needs coeffs=a0/a1/...")
        try:
            coeffs = [float(c) for c in raw.split("/")]
        except ValueError:
            raise InvalidArgumentError("taylor coefficients must be numbers") from None
        spec = TaylorKernelSpec.from_coefficients(coeffs)
    elif name == "gaussian":
        if "r" in params:
            r = number("r")
        elif X is not None:
            r = float(np.max(X.column_sq_norms))
        else:
            raise InvalidArgumentError("gaussian kernel needs r=<squared radius> or data")
        if "q" in params:
            q = number("q", int)
        elif X is not None:
            q = truncation_degree(r, X.n_cols)
        else:
            raise InvalidArgumentError("gaussian kernel needs q=<degree> or data")
        spec = TaylorKernelSpec.gaussian(q, radius=r)
    else:
        raise InvalidArgumentError(f"unknown kernel {name!r}; use poly, gaussian, invpoly or taylor")
    if params:
        raise InvalidArgumentError(f"unused kernel parameters: {', '.join(sorted(params))}")
    return spec


def describe_kernel(spec: TaylorKernelSpec) -> str:
    if spec.family == "polynomial":
        return f"poly:q={spec.q}"
    if spec.family == "gaussian":
        r = "" if spec.radius is None else f"r={spec.radius:g},"
        return f"gaussian:{r}q={spec.q}"
    if spec.family == "inverse_polynomial":
        return f"invpoly:q={spec.q}"
    return "taylor:coeffs=" + "/".join(f"{c:g}" for c in spec.coeffs)


@dataclass
class RunReport:
    """Outcome of one benchmark run; times are wall-clock milliseconds."""

    method: str
    kernel: str
    s: int
    epsilon: float
    lam: float
    seed: int
    n_train: int
    n_test: int
    d: int
    rounds: int
    sampling_ms: float
    embedding_ms: float
    solve_ms: float
    predict_ms: float
    train_rmse: float
    test_rmse: float | None = None
    spectral_passed: bool | None = None
    spectral_deviation: float | None = None
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    TIMING_FIELDS = ("sampling_ms", "embedding_ms", "solve_ms", "predict_ms")

    def without_timings(self) -> dict:
        out = asdict(self)
        for key in self.TIMING_FIELDS:
            out.pop(key)
        return out


@contextmanager
def _timer(sink: dict, key: str):
    start = time.perf_counter()
    yield
    sink[key] = (time.perf_counter() - start) * 1000.0


def run_benchmark(
    train: Dataset,
    method: str,
    kernel: TaylorKernelSpec,
    epsilon: float = 1.0 / 3.0,
    lam: float = 1e-3,
    mu: float | None = None,
    s: int | None = None,
    seed: int = 0,
    test: Dataset | None = None,
    config: SamplerConfig | None = None,
    spectral_check: bool | None = None,
) -> RunReport:
    """Sample, embed, fit and predict; report RMSE and phase timings.

    Exactly one of ``mu`` and ``s`` sizes the sampler for the approximate
    methods (``s`` wins if both are given).  ``spectral_check`` defaults to
    on for ``n <= 2000`` and compares ``Z^T Z`` with the exact kernel matrix.
    """
    if method not in METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}; use one of {', '.join(METHODS)}")
    X, y = train.features, train.targets
    n = X.n_cols
    kernel.check_radius(X)
    if test is not None:
        if test.d != train.d:
            raise InvalidArgumentError(f"test data has d={test.d}, training data d={train.d}")
        kernel.check_radius(test.features)
    config = (config or SamplerConfig()).replace(seed=seed)
    if s is not None:
        config = config.replace(sample_count=int(s))
    elif mu is None and method != "exact":
        raise InvalidArgumentError("give either mu or s for approximate methods")
    times = {"sampling_ms": 0.0, "embedding_ms": 0.0, "solve_ms": 0.0, "predict_ms": 0.0}
    rounds = 0
    spectral = (None, None)
    if spectral_check is None:
        spectral_check = n <= SPECTRAL_CHECK_LIMIT and method != "exact"

    if method == "exact":
        if n > EXACT_LIMIT:
            raise InvalidArgumentError(f"exact method is limited to n <= {EXACT_LIMIT}, got {n}")
        with _timer(times, "embedding_ms"):
            K = kernel.kernel_matrix(X)
        with _timer(times, "solve_ms"):
            model = fit_exact(K, y, lam, X=X, kernel=kernel)
        s_used = n
    else:
        sampler = TaylorRowSampler(X, kernel, config)
        frob = kernel.frobenius_sq(X)
        with _timer(times, "sampling_ms"):
            if method == "adaptive":
                Pi = recursive_leverage_sampling(sampler, frob, lam, epsilon, mu if mu is not None else 1.0, n, config)
                rounds = Pi.rounds
            else:
                s_used = config.sample_size(mu if mu is not None else 1.0, epsilon, n)
                Pi = sampler.sample(np.zeros((0, n)), frob / epsilon, s_used, 1)
                rounds = 1
        with _timer(times, "embedding_ms"):
            Z = taylor_embed_rows(X, kernel, Pi)
        with _timer(times, "solve_ms"):
            model = fit_approx(Z, y, lam, Pi=Pi, kernel=kernel)
        s_used = Pi.s
        if spectral_check:
            spectral = spectral_approx_check(kernel.kernel_matrix(X), Z, lam, epsilon)
    train_rmse = rmse(model.fitted, y)
    test_rmse = None
    if test is not None:
        with _timer(times, "predict_ms"):
            pred = predict(model, test.features)
        test_rmse = rmse(pred, test.targets)
    return RunReport(
        method=method,
        kernel=describe_kernel(kernel),
        s=int(s_used),
        epsilon=float(epsilon),
        lam=float(lam),
        seed=int(seed),
        n_train=n,
        n_test=0 if test is None else test.n,
        d=train.d,
        rounds=int(rounds),
        train_rmse=train_rmse,
        test_rmse=test_rmse,
        spectral_passed=None if spectral[0] is None else bool(spectral[0]),
        spectral_deviation=None if spectral[1] is None else float(spectral[1]),
        **times,
    )


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def emit_report(reports, path) -> None:
    """Write reports as a JSON array (fields in declaration order)."""
    payload = [{k: _clean(v) for k, v in asdict(r).items()} for r in reports]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_reports(path) -> list[RunReport]:
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise InvalidArgumentError("report file must hold a JSON array")
    names = {f.name for f in fields(RunReport)}
    out = []
    for item in payload:
        version = item.get("schema_version")
        if version != SCHEMA_VERSION:
            raise InvalidArgumentError(f"unsupported report schema version {version}")
        unknown = set(item) - names
        if unknown:
            raise InvalidArgumentError(f"unknown report fields: {', '.join(sorted(unknown))}")
        out.append(RunReport(**item))
    return out
