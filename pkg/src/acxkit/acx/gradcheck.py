"""Central finite-difference verification of the head + loss gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import head, losses
from .head import AcxHeadParams
from .losses import LossBreakdown, loss_total

TERMS = ("l_c", "l_d", "l_nd", "l_nc", "total")


def evaluate(params: AcxHeadParams, emb: np.ndarray, p_max: float | None = None) -> LossBreakdown:
    z, _ = head.forward(params, emb)
    return loss_total(z, p_max=p_max)


def gradients(params: AcxHeadParams, emb: np.ndarray) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss breakdown and analytic parameter gradients for stacked encoder rows ``emb``."""
    z, cache = head.forward(params, emb)
    breakdown, gz = loss_total(z, need_grad=True)
    return breakdown, head.backward(params, cache, gz)


def term_gradients(params: AcxHeadParams, emb: np.ndarray, term: str, p_max: float) -> dict[str, np.ndarray]:
    """Analytic gradient of a single loss term (``total`` for the sum)."""
    z, cache = head.forward(params, emb)
    b = z.shape[0] // 3
    s, d = losses.pairwise(z)
    gs, gd = np.zeros_like(s), np.zeros_like(d)
    if term in ("l_c", "total"):
        gs += losses.loss_lc(s, b)[1]
    if term in ("l_d", "total"):
        gd += losses.loss_ld(d, b)[1]
    if term in ("l_nd", "total"):
        gd += losses.loss_lnd(d, b)[1]
    if term in ("l_nc", "total"):
        gs += losses.loss_lnc(s, b, p_max)[2]
    return head.backward(params, cache, losses.grad_embeddings(z, gs, gd, d))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GradcheckReport:
    max_rel_error: float = 0.0
    worst: tuple = ()
    per_term: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def lines(self) -> list[str]:
        out = [f"checked {self.n_checked} coordinates",
               f"max relative error: {self.max_rel_error:.3e}"]
        out += [f"  {t}: {e:.3e}" for t, e in self.per_term.items()]
        if self.worst:
            seed, term, name, idx = self.worst
            out.append(f"worst: seed={seed} term={term} param={name}{list(idx)}")
        return out


def random_problem(seed: int, batch: int = 3, dim_in: int = 8, hidden: int = 6, dim_out: int = 4,
                   normalize_output: bool = True) -> tuple[AcxHeadParams, np.ndarray]:
    rng = np.random.default_rng([seed, 0x6C4])
    params = AcxHeadParams.init(dim_in, hidden, dim_out, seed=seed, normalize_output=normalize_output)
    # nonzero biases so the check also covers them away from the symmetric start
    for name in ("b1", "b2", "bp"):
        getattr(params, name)[:] = 0.1 * rng.standard_normal(getattr(params, name).shape)
    return params, rng.standard_normal((3 * batch, dim_in))


def check(seeds=range(20), h: float = 1e-5, floor: float = 1e-8, terms=TERMS,
          corrupt: float = 0.0, **problem) -> GradcheckReport:
    """Compare analytic and central-difference gradients of every term and parameter.

    ``corrupt`` scales the analytic gradients by ``1 + corrupt``; it exists so the
    negative control can show the check actually fails on a wrong gradient.
    """
    report = GradcheckReport(per_term={t: 0.0 for t in terms})
    for seed in seeds:
        params, emb = random_problem(seed, **problem)
        p_max = evaluate(params, emb).p_max
        analytic = {t: term_gradients(params, emb, t, p_max) for t in terms}
        for name, arr in params.arrays().items():
            for idx in np.ndindex(arr.shape):
                # one pair of evaluations serves every term
                orig = arr[idx]
                arr[idx] = orig + h
                up = evaluate(params, emb, p_max)
                arr[idx] = orig - h
                down = evaluate(params, emb, p_max)
                arr[idx] = orig
                for term in terms:
                    num = (getattr(up, term) - getattr(down, term)) / (2 * h)
                    err = float(relative_error(analytic[term][name][idx] * (1.0 + corrupt), num, floor))
                    report.n_checked += 1
                    report.per_term[term] = max(report.per_term[term], err)
                    if err > report.max_rel_error:
                        report.max_rel_error = err
                        report.worst = (seed, term, name, idx)
    return report
