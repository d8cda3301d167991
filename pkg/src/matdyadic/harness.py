"""Experiment configs, seeded instance generation and the per-instance certificate suite.

An instance is a filtration, two matrix measures ``W`` and ``V``, and a
shift operator, generated from a seed tuple so that any single instance
can be rebuilt from the config alone. ``certify`` runs every selected
family of inequalities on one instance and returns flat certificates.
"""
from __future__ import annotations

import fnmatch
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from .filtration import Filtration, random_tree
from .measure import MatrixMeasure, random_measure
from .paraproduct import build_paraproduct, check_replacement, paraproduct_norm_bound
from .shift import ShiftOperator, check_well_localized, make_generalized_shift, make_haar_shift

KINDS = ("haar", "generalized")
FAMILIES = (
    "normalization", "localization", "replacement", "paraproduct",
    "well-loc-rel", "well-loc-est-02", "band-rel", "testing-le-norm",
    "lemma-block", "lemma-truncation-gap", "lemma-nec", "lemma-testhaar",
    "intermediate", "carleson",
)
CSV_COLUMNS = ("name", "instance", "d", "depth", "branching", "r", "kind", "seed",
               "lhs", "rhs", "slack", "pass", "applicable")
WORKERS_ENV = "MATDYADIC_WORKERS"


def _inclusive(rng, key: str) -> list[int]:
    if isinstance(rng, int):
        return [rng]
    if len(rng) != 2 or rng[0] > rng[1]:
        raise ValueError(f"{key} must be [lo, hi] with lo <= hi")
    return list(range(int(rng[0]), int(rng[1]) + 1))


@dataclass
class ExperimentConfig:
    """Sweep description; every range is inclusive ``[lo, hi]``.

    Only tuples with ``r < depth`` are generated, since a shift of
    complexity ``r`` has no blocks otherwise.
    """

    seeds: list = field(default_factory=lambda: [0])
    d_range: list = field(default_factory=lambda: [1, 3])
    depth_range: list = field(default_factory=lambda: [1, 4])
    branching_range: list = field(default_factory=lambda: [2, 3])
    r_range: list = field(default_factory=lambda: [0, 2])
    condition_cap: float = 10.0
    variants: list = field(default_factory=lambda: list(FAMILIES))
    kinds: list = field(default_factory=lambda: list(KINDS))
    irregular_prob: float = 0.3
    zero_sigma_prob: float = 0.15
    rank_deficient_prob: float = 0.2
    zero_mass_prob: float = 0.05
    output: str = "results"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        for key in ("d_range", "depth_range", "branching_range", "r_range"):
            _inclusive(getattr(self, key), key)
        unknown = set(self.variants) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown variants: {sorted(unknown)}")
        bad = set(self.kinds) - set(KINDS)
        if bad or not self.kinds:
            raise ValueError(f"kinds must be a nonempty subset of {KINDS}")
        if self.condition_cap < 1:
            raise ValueError("condition_cap must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def tuples(self):
        """``(seed, d, depth, branching, r, kind)`` in a fixed order."""
        for seed in self.seeds:
            for d in _inclusive(self.d_range, "d_range"):
                for depth in _inclusive(self.depth_range, "depth_range"):
                    for b in _inclusive(self.branching_range, "branching_range"):
                        for r in _inclusive(self.r_range, "r_range"):
                            if r >= depth:
                                continue
                            for kind in self.kinds:
                                yield int(seed), d, depth, b, r, kind


@dataclass(eq=False)
class Instance:
    name: str
    params: dict
    F: Filtration
    W: MatrixMeasure
    V: MatrixMeasure
    T: ShiftOperator

    def to_files(self) -> dict:
        """The three JSON documents written by ``gen``."""
        return {
            "filtration": {"params": self.params, "filtration": self.F.to_dict()},
            "measures": {"params": self.params, "W": self.W.to_list(), "V": self.V.to_list()},
            "operator": {"params": self.params, "operator": self.T.to_dict()},
        }

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for part, doc in self.to_files().items():
            p = directory / f"{self.name}.{part}.json"
            p.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
            paths.append(p)
        return paths

    @classmethod
    def read(cls, directory, name: str) -> "Instance":
        directory = Path(directory)
        docs = {part: json.loads((directory / f"{name}.{part}.json").read_text())
                for part in ("filtration", "measures", "operator")}
        params = docs["filtration"]["params"]
        F = Filtration.from_dict(docs["filtration"]["filtration"])
        W = MatrixMeasure.from_list(F, docs["measures"]["W"])
        V = MatrixMeasure.from_list(F, docs["measures"]["V"])
        T = ShiftOperator.from_dict(F, docs["operator"]["operator"])
        return cls(name, params, F, W, V, T)


def instance_name(seed, d, depth, branching, r, kind) -> str:
    return f"s{seed}-d{d}-L{depth}-b{branching}-r{r}-{kind}"


def make_instance(seed: int, d: int, depth: int, branching: int, r: int, kind: str,
                  cfg: ExperimentConfig | None = None) -> Instance:
    """Deterministic instance for one sweep tuple."""
    cfg = cfg or ExperimentConfig()
    ss = np.random.SeedSequence([seed, d, depth, branching, r, KINDS.index(kind)])
    tree_ss, w_ss, v_ss, op_ss = ss.spawn(4)
    rng = np.random.default_rng(tree_ss)
    irregular = bool(rng.random() < cfg.irregular_prob)
    zero_leaf = bool(rng.random() < cfg.zero_sigma_prob)
    small = int(rng.integers(0, r + 1))
    m, n = (r, small) if rng.random() < 0.5 else (small, r)
    F = random_tree(rng, depth, branching, irregular=irregular, zero_leaf=zero_leaf)
    opts = dict(rank_deficient_prob=cfg.rank_deficient_prob, zero_prob=cfg.zero_mass_prob)
    W = random_measure(w_ss, F, d, cfg.condition_cap, **opts)
    V = random_measure(v_ss, F, d, cfg.condition_cap, **opts)
    make = make_haar_shift if kind == "haar" else make_generalized_shift
    T = make(op_ss, F, m, n)
    params = {"seed": seed, "d": d, "depth": depth, "branching": branching, "r": r,
              "kind": kind, "m": m, "n": n, "irregular": irregular, "zero_leaf": zero_leaf}
    return Instance(instance_name(seed, d, depth, branching, r, kind), params, F, W, V, T)


def generate(cfg: ExperimentConfig) -> list[Instance]:
    return [make_instance(*t, cfg=cfg) for t in cfg.tuples()]


def carleson_sequence(inst: Instance) -> np.ndarray:
    p = inst.params
    ss = np.random.SeedSequence([p["seed"], p["d"], p["depth"], p["branching"], p["r"],
                                 KINDS.index(p["kind"]) if p["kind"] in KINDS else 9, 7])
    return an.random_carleson_sequence(ss, inst.F, inst.W.dim)


# -- certificate suite ----------------------------------------------------------

def certify(inst: Instance, families=FAMILIES) -> list[an.Certificate]:
    """Run the selected certificate families on one instance."""
    families = set(families)
    T, W, V, F = inst.T, inst.W, inst.V, inst.F
    params = {"instance": inst.name, **{k: inst.params.get(k) for k in
                                        ("seed", "d", "depth", "branching", "r", "kind")}}
    out: list[an.Certificate] = []
    if not families:
        return out

    if "normalization" in families:
        excess = T.normalization_excess()
        out.append(an.Certificate("normalization", excess, 1.0, dict(params),
                                  applicable=T.is_big_haar,
                                  note="" if T.is_big_haar else "operator does not claim big Haar normalization"))

    loc = check_well_localized(T, W, V)
    localized = loc.passed
    if "localization" in families:
        c = an.Certificate("localization", loc.max_ratio, loc.tolerance, dict(params))
        if loc.witness:
            c.note = json.dumps(loc.witness, sort_keys=True)
        out.append(c)
    pre_note = "" if localized else "operator is not well localized"

    def mark(certs):
        for c in certs:
            if not localized:
                c.applicable = False
                c.note = pre_note
        return certs

    need_profiles = families & {"well-loc-rel", "well-loc-est-02", "band-rel", "testing-le-norm",
                                "lemma-nec", "lemma-testhaar", "intermediate", "paraproduct"}
    a2 = None
    try:
        a2 = an.a2_characteristic(V, W)
    except ValueError:
        pass
    tr = te = None
    if need_profiles:
        tr = an.testing_constants(T, W, V, "well-loc-rel")
        te = an.testing_constants(T, W, V, "well-loc-est-02", profiles=tr.profiles)
    if "well-loc-rel" in families:
        out += mark([an.theorem_bound_well_localized(tr, params=params)])
    if "well-loc-est-02" in families:
        out += mark([an.theorem_bound_well_localized(te, params=params)])
    if "testing-le-norm" in families:
        out += an.testing_below_norm(tr, params=params) + an.testing_below_norm(te, params=params)
    if "band-rel" in families and a2 is not None:
        c = an.theorem_bound_band(te.frakT, te.frakT_star, a2, T.r, W.dim, norm=te.norm, params=params)
        c.applicable = T.is_big_haar and localized
        out.append(c)

    if families & {"replacement", "paraproduct"}:
        PiW = build_paraproduct(T, W, V, "W", check=False)
        PiV = build_paraproduct(T, W, V, "V", check=False)
        if "replacement" in families:
            rep = check_replacement(T, W, V, PiW, Pi_V=PiV)
            worst = max(list(rep.clause_residuals.values()) + [rep.t_para_residual, rep.decomposition_residual])
            c = an.Certificate("replacement", worst, rep.tolerance * rep.scale, dict(params))
            if rep.witness:
                c.note = json.dumps(rep.witness, sort_keys=True)
            out += mark([c])
        if "paraproduct" in families:
            p, q = tr.profiles
            out += mark([paraproduct_norm_bound(PiW, W, V, float(p.t1_deep.max(initial=0.0)), params=params),
                         paraproduct_norm_bound(PiV, W, V, float(q.t1_deep.max(initial=0.0)), params=params)])

    if a2 is not None:
        if "lemma-block" in families:
            out.append(an.lemma_block_bound(T, W, V, a2=a2, params=params))
        if "lemma-truncation-gap" in families:
            c = an.lemma_truncation_gap(T, W, V, a2=a2, params=params)
            c.applicable = T.is_big_haar
            out.append(c)
        if "lemma-nec" in families:
            out += an.lemma_nec_gap(T, W, V, a2=a2, frak=(te.frakT, te.frakT_star), params=params)
        if "lemma-testhaar" in families:
            out += an.lemma_test_haar_transfer(T, W, V, tc_est=te, a2=a2, params=params)
    if "intermediate" in families:
        out += mark(an.intermediate_estimate(T, W, V, te, params=params))
    if "carleson" in families:
        out += an.carleson_constants(F, W, carleson_sequence(inst), params=params)[2]
    return out


def filter_certificates(certs, pattern: str | None):
    if not pattern:
        return list(certs)
    return [c for c in certs if fnmatch.fnmatch(c.name, pattern)]


def certificate_row(c: an.Certificate) -> dict:
    p = c.params
    return {"name": c.name, "instance": p.get("instance"), "d": p.get("d"), "depth": p.get("depth"),
            "branching": p.get("branching"), "r": p.get("r"), "kind": p.get("kind"),
            "seed": p.get("seed"), "lhs": float(c.lhs), "rhs": float(c.rhs), "slack": float(c.slack),
            "pass": c.passed, "applicable": c.applicable}


def _certify_job(args):
    inst, families = args
    return certify(inst, families)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_suite(instances, families=FAMILIES, *, workers: int | None = None) -> list[list[an.Certificate]]:
    """Certificates per instance, in instance order whatever the worker count."""
    workers = worker_count() if workers is None else workers
    jobs = [(inst, tuple(families)) for inst in instances]
    if workers <= 1 or len(jobs) <= 1:
        return [_certify_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_certify_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def format_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return repr(float(x))
