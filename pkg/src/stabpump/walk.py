"""Random-walk model of the pumping schedule over the 2**M sign subspaces.

Pumping stabilizer ``mu`` moves population with ``s_mu = -1`` into
``s_mu = +1`` and redistributes every sign in ``affects[mu]`` uniformly.
Rounds run in cyclic member order; the all-+1 state absorbs.

Sign vectors are encoded as integers: bit ``mu`` set means ``s_mu = -1``,
so the absorbing state is 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .stabilizer import StabilizerSet

RULE_REFINED = "refined"
RULE_COARSE = "coarse"
MAX_EXACT_M = 20
_EXPLICIT_M = 14


@dataclass(frozen=True)
class WalkModel:
    m: int
    affects: tuple[frozenset[int], ...]
    rule: str = RULE_REFINED

    def __post_init__(self):
        if len(self.affects) != self.m:
            raise ValueError("need one affects set per stabilizer")
        for mu, a in enumerate(self.affects):
            if mu in a:
                raise ValueError(f"affects[{mu}] contains {mu} itself")
            if any(not 0 <= nu < self.m for nu in a):
                raise ValueError(f"affects[{mu}] has out-of-range members")

    @property
    def l_max(self) -> int:
        """Largest number of other stabilizers disturbed by one round."""
        return max((len(a) for a in self.affects), default=0)

    def scaling_bound(self) -> float:
        """``M * (2**l_max)**M``."""
        return float(self.m * (2.0**self.l_max) ** self.m)

    def describe(self) -> dict:
        return {
            "M": self.m,
            "rule": self.rule,
            "affects": [sorted(nu + 1 for nu in a) for a in self.affects],
            "l_max": self.l_max,
        }


def overlap_model(sset: StabilizerSet, rule: str = RULE_REFINED) -> WalkModel:
    """Which signs each pumping round randomizes.

    ``refined``: nu is affected when some pumped atom carries a non-identity
    letter in S_nu that differs from S_mu's.  ``coarse``: any non-identity
    letter of S_nu on a pumped atom suffices.
    """
    if rule not in (RULE_REFINED, RULE_COARSE):
        raise ValueError(f"unknown overlap rule {rule!r}")
    members = sset.members
    affects = []
    for mu, s in enumerate(members):
        hit = set()
        for nu, other in enumerate(members):
            if nu == mu:
                continue
            for j in s.support:
                u = other.letters[j]
                if u == "I":
                    continue
                if rule == RULE_COARSE or u != s.letters[j]:
                    hit.add(nu)
                    break
        affects.append(frozenset(hit))
    return WalkModel(len(members), tuple(affects), rule)


def signs_to_index(signs: Sequence[int]) -> int:
    idx = 0
    for mu, s in enumerate(signs):
        if s == -1:
            idx |= 1 << mu
        elif s != 1:
            raise ValueError(f"sign must be +1 or -1, got {s}")
    return idx


def index_to_signs(idx: int, m: int) -> np.ndarray:
    return np.where((idx >> np.arange(m)) & 1, -1, 1)


def step(signs: Sequence[int], mu: int, model: WalkModel, rng: np.random.Generator) -> np.ndarray:
    """One pumping round of stabilizer ``mu`` (zero-based)."""
    out = np.array(signs, dtype=int)
    if out[mu] == 1:
        return out
    out[mu] = 1
    for nu in sorted(model.affects[mu]):
        out[nu] = rng.choice((-1, 1))
    return out


def initial_distribution(model: WalkModel, spec="uniform") -> np.ndarray:
    """Probability vector over the 2**M sign states.

    ``spec`` is ``"uniform"``, ``"worst"`` (all -1), a sign vector, or an
    explicit probability vector.
    """
    n = 2**model.m
    if isinstance(spec, str):
        if spec == "uniform":
            return np.full(n, 1.0 / n)
        if spec == "worst":
            p = np.zeros(n)
            p[n - 1] = 1.0
            return p
        raise ValueError(f"unknown initial distribution {spec!r}")
    arr = np.asarray(spec, dtype=float)
    if arr.shape == (model.m,):
        p = np.zeros(n)
        p[signs_to_index(arr.astype(int))] = 1.0
        return p
    if arr.shape == (n,) and np.all(arr >= 0) and abs(arr.sum() - 1) < 1e-12:
        return arr
    raise ValueError("initial distribution must be a keyword, a sign vector or a probability vector")


@dataclass
class MonteCarloResult:
    mean_rounds: float
    stderr_rounds: float
    mean_cycles: float
    stderr_cycles: float
    trials: int


def expected_rounds_mc(
    model: WalkModel,
    initial="uniform",
    trials: int = 10000,
    seed: int | None = 0,
    max_rounds: int = 10**7,
) -> MonteCarloResult:
    """Monte Carlo estimate of rounds (and cycles) until absorption."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    m = model.m
    p0 = initial_distribution(model, initial)
    start = rng.choice(p0.size, size=trials, p=p0)
    minus = ((start[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    rounds = np.zeros(trials, dtype=np.int64)
    alive = minus.any(axis=1)
    affected = [np.array(sorted(a), dtype=np.int64) for a in model.affects]
    r = 0
    while alive.any():
        if r >= max_rounds:
            raise RuntimeError(f"walk did not absorb within {max_rounds} rounds")
        mu = r % m
        r += 1
        rounds[alive] = r
        hit = np.flatnonzero(alive & minus[:, mu])
        if hit.size:
            minus[hit, mu] = False
            if affected[mu].size:
                minus[np.ix_(hit, affected[mu])] = rng.random((hit.size, affected[mu].size)) < 0.5
            alive[hit] = minus[hit].any(axis=1)
    cycles = -(-rounds // m)
    se = lambda x: float(x.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
    return MonteCarloResult(
        float(rounds.mean()), se(rounds), float(cycles.mean()), se(cycles), trials
    )


def round_matrix(model: WalkModel, mu: int) -> sp.csr_matrix:
    """Row-stochastic transition matrix of one pumping round."""
    n = 2**model.m
    states = np.arange(n, dtype=np.int64)
    bit = 1 << mu
    aff = sorted(model.affects[mu])
    rows, cols, vals = [], [], []
    idle = (states & bit) == 0
    rows.append(states[idle])
    cols.append(states[idle])
    vals.append(np.ones(idle.sum()))
    pumped = states[~idle] & ~bit
    mask = 0
    for nu in aff:
        mask |= 1 << nu
    base = pumped & ~mask
    weight = 1.0 / 2 ** len(aff)
    for combo in range(2 ** len(aff)):
        add = 0
        for b, nu in enumerate(aff):
            if (combo >> b) & 1:
                add |= 1 << nu
        rows.append(states[~idle])
        cols.append(base | add)
        vals.append(np.full(base.size, weight))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


@dataclass
class ExactResult:
    rounds: float
    cycles: float
    rounds_by_state: np.ndarray
    cycles_by_state: np.ndarray


def expected_rounds_exact(model: WalkModel, initial="uniform") -> ExactResult:
    """Expected rounds and cycles to absorption via the cycle fundamental matrix.

    With ``T`` the one-cycle transition matrix restricted to transient states,
    cycles solve ``(I - T) c = 1`` and rounds solve ``(I - T) x = w`` where
    ``w(s)`` is the expected number of rounds run inside a single cycle.
    """
    m = model.m
    if m > MAX_EXACT_M:
        raise ValueError(f"exact solve limited to M <= {MAX_EXACT_M}, got {m}")
    n = 2**m
    p0 = initial_distribution(model, initial)
    mats = [round_matrix(model, mu) for mu in range(m)]
    transient = np.ones(n)
    transient[0] = 0.0
    # w = sum_{r<M} P_0..P_{r-1} 1_transient
    w = np.zeros(n)
    for r in range(m):
        v = transient
        for mu in reversed(range(r)):
            v = mats[mu] @ v
        w += v
    ones = transient.copy()
    keep = np.arange(1, n)
    if m <= _EXPLICIT_M:
        T = mats[0]
        for P in mats[1:]:
            T = (T @ P).tocsr()
        A = sp.identity(n - 1, format="csc") - T[keep][:, keep].tocsc()
        lu = spla.splu(A)
        x = lu.solve(w[keep])
        c = lu.solve(ones[keep])
    else:
        def cycle(v):
            full = np.zeros(n)
            full[keep] = v
            for P in reversed(mats):
                full = P @ full
            return full[keep]

        A = spla.LinearOperator((n - 1, n - 1), matvec=lambda v: v - cycle(v), dtype=float)
        x, info_x = spla.gmres(A, w[keep], rtol=1e-12, atol=0.0, restart=200, maxiter=10000)
        c, info_c = spla.gmres(A, ones[keep], rtol=1e-12, atol=0.0, restart=200, maxiter=10000)
        if info_x or info_c:
            raise RuntimeError("iterative absorption-time solve did not converge")
    rounds_by_state = np.zeros(n)
    cycles_by_state = np.zeros(n)
    rounds_by_state[keep] = x
    cycles_by_state[keep] = c
    return ExactResult(
        float(p0 @ rounds_by_state), float(p0 @ cycles_by_state), rounds_by_state, cycles_by_state
    )


def absorption_certain(model: WalkModel) -> bool:
    """True if the all-+1 state is reachable from every state (structural check)."""
    n = 2**model.m
    adj = sum((round_matrix(model, mu) for mu in range(model.m)), sp.csr_matrix((n, n)))
    # reverse reachability from the absorbing state
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = np.array([0])
    rev = adj.T.tocsr()
    while frontier.size:
        nxt = np.unique(rev[frontier].indices)
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    absorbing = all(round_matrix(model, mu)[0, 0] == 1.0 for mu in range(model.m))
    return bool(seen.all() and absorbing)


def growth_base(ms: Sequence[int], values: Sequence[float]) -> float:
    """``exp(slope)`` of a least-squares fit of ``log(values)`` against ``ms``."""
    slope, _ = np.polyfit(np.asarray(ms, dtype=float), np.log(np.asarray(values, dtype=float)), 1)
    return float(np.exp(slope))
