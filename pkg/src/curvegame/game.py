"""Monte Carlo simulation of the two-player cap game.

One round from position x: Paul picks a cap A, Carol a cap B (both of measure
half the sphere plus the margin delta_eps), a direction v is drawn uniformly
from A cap B, and the position moves to x + eps v.  The game stops on exit
from the domain and pays eps^2 * K * tau.

A Strategy is a callable (x, round_index, eps) -> Cap, optionally returning
(Cap, fallback_flag) so degenerate positions (zero gradient, x = z) can be
recorded in the episode trace.  Strategies must be stateless: episodes run
independently, each on its own counter-derived random stream, so estimates are
reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import sphere
from .errors import InvalidParameterError, RunawayEpisodeError

ROUND_CAP = 10**8

Strategy = Callable


@dataclass(frozen=True)
class Episode:
    """One full game trajectory."""

    positions: np.ndarray  # (tau + 1, N), first row x0, last row the exit point
    tau: int
    payoff: float
    eps: float
    seed: int | None = None
    index: int | None = None
    fallbacks: int = 0

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "index": self.index,
            "tau": self.tau,
            "payoff": self.payoff,
            "fallbacks": self.fallbacks,
            "positions": [[float(c) for c in row] for row in self.positions],
        }


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int


def _unpack(choice):
    if isinstance(choice, tuple):
        return choice
    return choice, False


def fixed_axis_strategy(axis) -> Strategy:
    """Always pick the cap around one fixed axis."""
    axis = sphere.unit_vector(np.asarray(axis, dtype=float))

    def strategy(x, k: int, eps: float):
        return sphere.game_cap(axis, eps), False

    return strategy


def mirrored_strategy(other: Strategy) -> Strategy:
    """Pick the cap opposite to another strategy's choice.

    Against the mirrored opponent the band is symmetric, so the sampled step
    has band-average <x - z, v> = 0 and the martingale increment is exactly
    eps^2.
    """

    def strategy(x, k: int, eps: float):
        cap, fb = _unpack(other(x, k, eps))
        return sphere.Cap(-np.asarray(cap.axis), cap.theta), fb

    return strategy


def radial_exit_strategy(z) -> Strategy:
    """Carol's escape strategy: aim straight away from z.

    At position x the cap axis is (x - z)/|x - z|; at x = z there is no
    outward direction and the strategy falls back to e1 (flagged).
    """
    z = np.asarray(z, dtype=float)

    def strategy(x, k: int, eps: float):
        d = np.asarray(x, dtype=float) - z
        norm = math.sqrt(float(d @ d))
        if norm < 1e-12:
            axis = np.zeros_like(z)
            axis[0] = 1.0
            return sphere.game_cap(axis, eps), True
        return sphere.game_cap(d / norm, eps), False

    return strategy


def _gradient_tables(field) -> list:
    # np.gradient: central differences inside, one-sided at the box edges
    return list(np.gradient(field.values, field.h))


def gradient_cap_strategy(field, player: str) -> Strategy:
    """Steer along the interpolated gradient of a value field.

    Paul (maximizer) picks the cap around +g/|g|, Carol around -g/|g|, with g
    the multilinear interpolation of central-difference node gradients.  Where
    |g| < 1e-10 the strategy falls back to the fixed axis e1 (flagged).
    """
    side = player.lower()
    if side not in ("paul", "carol"):
        raise InvalidParameterError("player must be 'paul' or 'carol'")
    sign = 1.0 if side == "paul" else -1.0
    grads = _gradient_tables(field)
    lo = [float(c) for c in field.lo]
    h = field.h
    shape = field.shape
    dim = field.domain.dim

    if dim == 2:
        # Nested lists: scalar indexing is several times cheaper than on
        # ndarrays, and this closure runs twice per game round.
        gx, gy = grads[0].tolist(), grads[1].tolist()

        def strategy(x, k: int, eps: float):
            u = (float(x[0]) - lo[0]) / h
            v = (float(x[1]) - lo[1]) / h
            i = min(int(u), shape[0] - 2)
            j = min(int(v), shape[1] - 2)
            tu = u - i
            tv = v - j
            w00 = (1.0 - tu) * (1.0 - tv)
            w10 = tu * (1.0 - tv)
            w01 = (1.0 - tu) * tv
            w11 = tu * tv
            r0, r1 = gx[i], gx[i + 1]
            a = w00 * r0[j] + w10 * r1[j] + w01 * r0[j + 1] + w11 * r1[j + 1]
            r0, r1 = gy[i], gy[i + 1]
            b = w00 * r0[j] + w10 * r1[j] + w01 * r0[j + 1] + w11 * r1[j + 1]
            norm = math.sqrt(a * a + b * b)
            if norm < 1e-10:
                return sphere.game_cap(np.array([1.0, 0.0]), eps), True
            axis = np.array([sign * a / norm, sign * b / norm])
            return sphere.game_cap(axis, eps), False

        return strategy

    gx, gy, gz = (t.tolist() for t in grads)

    def strategy(x, k: int, eps: float):
        coords = [(float(x[a]) - lo[a]) / h for a in range(3)]
        idx = [min(int(c), shape[a] - 2) for a, c in enumerate(coords)]
        t = [c - i for c, i in zip(coords, idx)]
        g = [0.0, 0.0, 0.0]
        i, j, l = idx
        for di in (0, 1):
            for dj in (0, 1):
                for dl in (0, 1):
                    w = ((t[0] if di else 1.0 - t[0])
                         * (t[1] if dj else 1.0 - t[1])
                         * (t[2] if dl else 1.0 - t[2]))
                    g[0] += w * gx[i + di][j + dj][l + dl]
                    g[1] += w * gy[i + di][j + dj][l + dl]
                    g[2] += w * gz[i + di][j + dj][l + dl]
        norm = math.sqrt(g[0] ** 2 + g[1] ** 2 + g[2] ** 2)
        if norm < 1e-10:
            return sphere.game_cap(np.array([1.0, 0.0, 0.0]), eps), True
        axis = sign / norm * np.array(g)
        return sphere.game_cap(axis, eps), False

    return strategy


def play_episode(x0, sp: Strategy, sc: Strategy, eps: float, domain, rng,
                 *, payoff_k: float | None = None, seed: int | None = None,
                 index: int | None = None,
                 max_rounds: int = ROUND_CAP) -> Episode:
    """Play one game from x0 until the position exits the domain.

    Every step has length exactly eps (|v| = 1 by construction).  Payoff is
    eps^2 * K * tau with K defaulting to constant_C(N).  Raises
    RunawayEpisodeError if max_rounds is reached, which signals a
    mis-specified strategy rather than a long game.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not domain.contains(x):
        raise InvalidParameterError("x0 must lie inside the domain")
    if not eps > 0:
        raise InvalidParameterError("eps must be positive")
    K = sphere.constant_C(domain.dim) if payoff_k is None else float(payoff_k)
    positions = [x]
    fallbacks = 0
    k = 0
    while True:
        cap_p, fb_p = _unpack(sp(x, k, eps))
        cap_c, fb_c = _unpack(sc(x, k, eps))
        fallbacks += int(fb_p) + int(fb_c)
        band = sphere.intersect_caps(cap_p, cap_c)
        v = band.sample(rng)
        assert band.contains(v), "sampled direction left the band"
        # x is rebound, never mutated, so the history list can alias it.
        x = x + eps * v
        positions.append(x)
        k += 1
        if not domain.contains(x):
            return Episode(
                positions=np.asarray(positions), tau=k,
                payoff=eps * eps * K * k, eps=eps,
                seed=seed, index=index, fallbacks=fallbacks,
            )
        if k >= max_rounds:
            raise RunawayEpisodeError(
                f"episode exceeded {max_rounds} rounds without exiting"
            )


def _episode_rng(seed: int, index: int):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    )


def run_episodes(x0, sp: Strategy, sc: Strategy, n: int, eps: float, domain,
                 seed: int, *, threads: int = 1,
                 payoff_k: float | None = None) -> list:
    """n independent episodes on counter-derived streams; order-stable output.

    Episode i always uses the stream split (seed, i), so the result is the
    same for any thread count.
    """
    if n < 1:
        raise InvalidParameterError("need at least one episode")

    def one(i: int) -> Episode:
        return play_episode(
            x0, sp, sc, eps, domain, _episode_rng(seed, i),
            payoff_k=payoff_k, seed=seed, index=i,
        )

    if threads <= 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n)))


def estimate_value(x0, sp: Strategy, sc: Strategy, n: int, eps: float,
                   domain, seed: int, *, threads: int = 1,
                   payoff_k: float | None = None) -> McEstimate:
    """Monte Carlo estimate of the expected payoff from x0."""
    if n < 2:
        raise InvalidParameterError("n must be at least 2 for a stderr")
    episodes = run_episodes(x0, sp, sc, n, eps, domain, seed,
                            threads=threads, payoff_k=payoff_k)
    payoffs = np.array([e.payoff for e in episodes])
    mean = float(np.mean(payoffs))
    stderr = float(np.std(payoffs, ddof=1) / math.sqrt(n))
    return McEstimate(mean=mean, stderr=stderr, n=n)


def martingale_diagnostic(x0, z, sc: Strategy | None = None,
                          sp: Strategy | None = None, n: int = 1000,
                          eps: float = 0.1, domain=None, seed: int = 0,
                          *, threads: int = 1) -> dict:
    """Check the submartingale structure of |x_k - z|^2 - eps^2 k empirically.

    Carol defaults to radial_exit_strategy(z) and Paul to its mirror (the
    symmetric band, whose one-round increment is exactly eps^2 in
    expectation).  Reports the pooled one-round increment of |x - z|^2 against
    eps^2, and eps^2 E[tau] against the optional-stopping bound
    E[|x_tau - z|^2] - |x0 - z|^2, plus the analytic version of that bound
    with the boundary fattened by one step (the exit point can overshoot the
    boundary by up to eps).
    """
    if domain is None:
        raise InvalidParameterError("domain is required")
    z = np.asarray(z, dtype=float)
    if sc is None:
        sc = radial_exit_strategy(z)
    if sp is None:
        sp = mirrored_strategy(sc)
    episodes = run_episodes(x0, sp, sc, n, eps, domain, seed, threads=threads)

    increments = []
    for e in episodes:
        d = e.positions - z
        sq = np.einsum("ij,ij->i", d, d)
        increments.append(np.diff(sq))
    pooled = np.concatenate(increments)
    inc_mean = float(np.mean(pooled))
    inc_stderr = float(np.std(pooled, ddof=1) / math.sqrt(pooled.size))

    taus = np.array([e.tau for e in episodes], dtype=float)
    x0 = np.asarray(x0, dtype=float)
    start_sq = float((x0 - z) @ (x0 - z))
    exit_sq = np.array([float((e.positions[-1] - z) @ (e.positions[-1] - z))
                        for e in episodes])
    # per-episode optional-stopping slack |x_tau - z|^2 - |x0 - z|^2 - eps^2 tau
    slack = exit_sq - start_sq - eps * eps * taus
    slack_mean = float(np.mean(slack))
    slack_stderr = float(np.std(slack, ddof=1) / math.sqrt(n))
    eps2_tau = float(eps * eps * np.mean(taus))
    eps2_tau_stderr = float(eps * eps * np.std(taus, ddof=1) / math.sqrt(n))
    analytic_bound = (domain.support_radius(z) + eps) ** 2 - start_sq

    return {
        "n": n,
        "eps": eps,
        "x0": [float(c) for c in x0],
        "z": [float(c) for c in z],
        "rounds_pooled": int(pooled.size),
        "increment_mean": inc_mean,
        "increment_stderr": inc_stderr,
        "increment_threshold": eps * eps - 3.0 * inc_stderr,
        "increment_pass": inc_mean >= eps * eps - 3.0 * inc_stderr,
        "eps2_mean_tau": eps2_tau,
        "eps2_mean_tau_stderr": eps2_tau_stderr,
        "osth_empirical_bound": float(np.mean(exit_sq)) - start_sq,
        "osth_slack_mean": slack_mean,
        "osth_slack_stderr": slack_stderr,
        "osth_pass": slack_mean >= -3.0 * slack_stderr,
        "osth_analytic_bound": float(analytic_bound),
        "osth_analytic_pass": eps2_tau <= analytic_bound + 3.0 * eps2_tau_stderr,
        "fallbacks": int(sum(e.fallbacks for e in episodes)),
    }
