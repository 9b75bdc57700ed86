"""Robustness statistics over multi-seed trial results.

Everything here is computed from scratch (normal/Student-t/F distribution
functions, Shapiro-Wilk, Welch's t-test, the one-sided variance-ratio
F-test, and a Gaussian-fit Jensen-Shannon divergence) so the test suite can
hold it against an independent reference implementation.

The divergence between two 20-trial metric samples has no canonical
estimator; we fit a normal to each sample and integrate the JSD (natural
log) on a fine grid, and record that choice in the report metadata rather
than claiming comparability with anyone else's JSD numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .metrics import TrialResult

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Distribution functions
# ---------------------------------------------------------------------------

def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta (modified Lentz).
    max_iter, eps, fpmin = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) <= eps:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise ConfigError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ConfigError(f"t degrees of freedom must be > 0, got {df}")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * betainc_regularized(0.5 * df, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def f_cdf(f: float, df1: float, df2: float) -> float:
    if df1 <= 0 or df2 <= 0:
        raise ConfigError("F degrees of freedom must be > 0")
    if f <= 0:
        return 0.0
    if math.isinf(f):
        return 1.0
    return betainc_regularized(0.5 * df1, 0.5 * df2, df1 * f / (df1 * f + df2))


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston's AS R94 approximation)
# ---------------------------------------------------------------------------

def _normal_ppf_as111(p: float) -> float:
    split = 0.42
    a0, a1, a2, a3 = 2.50662823884, -18.61500062529, 41.39119773534, -25.44106049637
    b1, b2, b3, b4 = -8.47351093090, 23.08336743743, -21.06224101826, 3.13082909833
    c0, c1, c2, c3 = -2.78718931138, -2.29796479134, 4.85014127135, 2.32121276858
    d1, d2 = 3.54388924762, 1.63706781897
    q = p - 0.5
    if abs(q) <= split:
        r = q * q
        return q * (((a3 * r + a2) * r + a1) * r + a0) / (
            (((b4 * r + b3) * r + b2) * r + b1) * r + 1.0
        )
    r = p if q <= 0 else 1.0 - p
    if r <= 0:
        return 0.0
    r = math.sqrt(-math.log(r))
    temp = (((c3 * r + c2) * r + c1) * r + c0) / ((d2 * r + d1) * r + 1.0)
    return -temp if q < 0 else temp


def _normal_tail_as66(x: float, upper: bool) -> float:
    ltone, utzero, con = 7.0, 18.66, 1.28
    a1, a2, a3 = 0.398942280444, 0.399903438504, 5.75885480458
    a4, a5, a6, a7 = 29.8213557808, 2.62433121679, 48.6959930692, 5.92885724438
    b1, b2 = 0.398942280385, 3.8052e-8
    b3, b4, b5 = 1.00000615302, 3.98064794e-4, 1.98615381364
    b6, b7, b8 = 0.151679116635, 5.29330324926, 4.8385912808
    b9, b10, b11, b12 = 15.1508972451, 0.742380924027, 30.789933034, 3.99019417011
    up, z = upper, x
    if z < 0:
        up = not up
        z = -z
    if z <= ltone or (up and z <= utzero):
        y = 0.5 * z * z
        if z > con:
            tail = b1 * math.exp(-y) / (
                z - b2 + b3 / (z + b4 + b5 / (z - b6 + b7 / (z + b8 - b9 / (z + b10 + b11 / (z + b12)))))
            )
        else:
            tail = 0.5 - z * (a1 - a2 * y / (y + a3 - a4 / (y + a5 + a6 / (y + a7))))
    else:
        tail = 0.0
    return tail if up else 1.0 - tail


_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)


def _poly(coeffs: tuple, x: float) -> float:
    out = coeffs[0]
    power = 1.0
    for c in coeffs[1:]:
        power *= x
        out += c * power
    return out


def shapiro_wilk(sample: Sequence[float]) -> tuple[float, float]:
    """W statistic and p-value for the normality null hypothesis.

    Valid for 3 <= n <= 5000.  Expected normal order statistics use Blom
    scores with the top-two weights adjusted per Royston; the p-value comes
    from the log-normal / three-parameter transformations of 1 - W.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = len(x)
    if n < 3:
        raise DataError(f"Shapiro-Wilk needs n >= 3, got {n}")
    if n > 5000:
        raise DataError(f"Shapiro-Wilk p-value approximation unreliable for n > 5000 (n={n})")
    if x[-1] - x[0] <= 0:
        raise DataError("Shapiro-Wilk undefined for zero-variance samples")
    x = x - x[n // 2]  # center near the median for numerical stability

    nn2 = n // 2
    a = np.zeros(nn2)
    if n == 3:
        a[0] = math.sqrt(0.5)
    else:
        an25 = n + 0.25
        for i in range(1, nn2 + 1):
            a[i - 1] = _normal_ppf_as111((i - 0.375) / an25)
        summ2 = 2.0 * float(np.sum(a * a))
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_SW_C1, rsn) - a[0] / ssumm2
        if n > 5:
            i1 = 3
            a2 = -a[1] / ssumm2 + _poly(_SW_C2, rsn)
            fac = math.sqrt(
                (summ2 - 2.0 * a[0] ** 2 - 2.0 * a[1] ** 2)
                / (1.0 - 2.0 * a1 ** 2 - 2.0 * a2 ** 2)
            )
            a[1] = a2
        else:
            i1 = 2
            fac = math.sqrt((summ2 - 2.0 * a[0] ** 2) / (1.0 - 2.0 * a1 ** 2))
        a[0] = a1
        a[i1 - 1 :] = -a[i1 - 1 :] / fac

    # W is the squared correlation between the ordered data and the
    # antisymmetric coefficient vector (-a_1 ... a_1).
    scale = x[-1] - x[0]
    xs = x / scale
    coeff = np.empty(n)
    for i in range(1, n + 1):
        j = n + 1 - i
        if i == j:
            coeff[i - 1] = 0.0
        else:
            coeff[i - 1] = math.copysign(1.0, i - j) * a[min(i, j) - 1]
    asa = coeff - coeff.mean()
    xsx = xs - xs.mean()
    ssa = float(asa @ asa)
    ssx = float(xsx @ xsx)
    sax = float(asa @ xsx)
    ssassx = math.sqrt(ssa * ssx)
    w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx)
    w = 1.0 - w1

    if n == 3:
        pi6 = 1.90985931710274
        stqr = 1.04719755119660
        pw = pi6 * (math.asin(math.sqrt(w)) - stqr)
        return w, min(max(pw, 0.0), 1.0)
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_SW_G, n)
        if y >= gamma:
            return w, 1e-99
        y = -math.log(gamma - y)
        mu = _poly(_SW_C3, n)
        sigma = math.exp(_poly(_SW_C4, n))
    else:
        ln_n = math.log(n)
        mu = _poly(_SW_C5, ln_n)
        sigma = math.exp(_poly(_SW_C6, ln_n))
    return w, _normal_tail_as66((y - mu) / sigma, True)


# ---------------------------------------------------------------------------
# Hypothesis tests
# ---------------------------------------------------------------------------

def _sample_stats(x: Sequence[float], name: str) -> tuple[int, float, float]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or len(arr) < 2:
        raise DataError(f"{name} needs at least 2 observations")
    return len(arr), float(arr.mean()), float(arr.var(ddof=1))


def t_test_two_sided(
    a: Sequence[float], b: Sequence[float], pooled: bool = False
) -> tuple[float, float]:
    """Two-sided t-test between unpaired samples.

    Welch's unequal-variance form by default (the samples come from
    different test sets with no pairing and visibly different spreads);
    ``pooled=True`` switches to the equal-variance variant.
    """
    na, mean_a, var_a = _sample_stats(a, "sample a")
    nb, mean_b, var_b = _sample_stats(b, "sample b")
    if pooled:
        sp2 = ((na - 1) * var_a + (nb - 1) * var_b) / (na + nb - 2)
        se2 = sp2 * (1.0 / na + 1.0 / nb)
        df = float(na + nb - 2)
    else:
        se2 = var_a / na + var_b / nb
        if se2 > 0.0:
            df = se2 ** 2 / (
                (var_a / na) ** 2 / (na - 1) + (var_b / nb) ** 2 / (nb - 1)
            )
    if se2 == 0.0:
        # Degenerate: both samples constant.
        if mean_a == mean_b:
            return 0.0, 1.0
        return math.copysign(math.inf, mean_a - mean_b), 0.0
    t = (mean_a - mean_b) / math.sqrt(se2)
    p = 2.0 * (1.0 - student_t_cdf(abs(t), df))
    return t, min(p, 1.0)


def f_test_one_sided(baseline: Sequence[float], ours: Sequence[float]) -> tuple[float, float]:
    """Variance ratio baseline/ours with the upper-tail alternative
    (baseline variance greater)."""
    nb, _, var_b = _sample_stats(baseline, "baseline")
    no, _, var_o = _sample_stats(ours, "ours")
    if var_o == 0.0:
        raise DataError("F-test denominator sample has zero variance")
    f0 = var_b / var_o
    p = 1.0 - f_cdf(f0, nb - 1, no - 1)
    return f0, p


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "(ns)"


# ---------------------------------------------------------------------------
# Jensen-Shannon divergence between Gaussian fits
# ---------------------------------------------------------------------------

def _normal_logpdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def jsd_normal(
    mean_a: float, std_a: float, mean_b: float, std_b: float, min_points: int = 4096
) -> float:
    """JSD (natural log) between two normals via trapezoidal quadrature.

    The grid spans 8 pooled standard deviations past both means, refined
    with a dedicated fine grid across each component so the quadrature stays
    accurate when the two scales differ by orders of magnitude; the result
    lives in [0, ln 2].
    """
    if std_a <= 0 or std_b <= 0:
        raise DataError("JSD needs strictly positive standard deviations")
    spread = 8.0 * max(math.sqrt(0.5 * (std_a ** 2 + std_b ** 2)), std_a, std_b)
    grid = np.unique(np.concatenate([
        np.linspace(min(mean_a, mean_b) - spread, max(mean_a, mean_b) + spread,
                    min_points),
        np.linspace(mean_a - 8.0 * std_a, mean_a + 8.0 * std_a, min_points),
        np.linspace(mean_b - 8.0 * std_b, mean_b + 8.0 * std_b, min_points),
    ]))
    log_pa = _normal_logpdf(grid, mean_a, std_a)
    log_pb = _normal_logpdf(grid, mean_b, std_b)
    pa = np.exp(log_pa)
    pb = np.exp(log_pb)
    log_m = np.logaddexp(log_pa, log_pb) - LN2
    term_a = np.where(pa > 0.0, pa * (log_pa - log_m), 0.0)
    term_b = np.where(pb > 0.0, pb * (log_pb - log_m), 0.0)
    jsd = 0.5 * float(np.trapezoid(term_a, grid)) + 0.5 * float(np.trapezoid(term_b, grid))
    return max(jsd, 0.0)


def jsd_gaussian(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Fit a normal (mean, sample std) to each sample and take their JSD."""
    _, mean_a, var_a = _sample_stats(sample_a, "sample a")
    _, mean_b, var_b = _sample_stats(sample_b, "sample b")
    if var_a == 0.0 or var_b == 0.0:
        raise DataError("JSD needs non-degenerate samples (zero std)")
    return jsd_normal(mean_a, math.sqrt(var_a), mean_b, math.sqrt(var_b))


# ---------------------------------------------------------------------------
# Trial aggregation into the comparison report
# ---------------------------------------------------------------------------

@dataclass
class TrialGroup:
    """Trials sharing (model_tag, test_set, train_size)."""

    model_tag: str
    test_set: str
    train_size: int
    results: list[TrialResult] = field(default_factory=list)

    @property
    def auroc(self) -> np.ndarray:
        return np.array(sorted(r.auroc for r in self.results))

    @property
    def f1(self) -> np.ndarray:
        return np.array(sorted(r.macro_f1 for r in self.results))

    def summary(self) -> dict:
        auroc, f1 = self.auroc, self.f1
        out = {
            "n": len(self.results),
            "auroc_mean": float(auroc.mean()),
            "auroc_std": float(auroc.std(ddof=1)),
            "macro_f1_mean": float(f1.mean()),
            "macro_f1_std": float(f1.std(ddof=1)),
        }
        if len(self.results) >= 3 and auroc.max() > auroc.min():
            w, p = shapiro_wilk(auroc)
            out["shapiro_w"] = w
            out["shapiro_pvalue"] = p
        else:
            out["shapiro_w"] = None
            out["shapiro_pvalue"] = None
        return out


@dataclass(frozen=True)
class ComparisonSpec:
    baseline_tag: str
    ours_tag: str
    test_sets: tuple[str, ...] = ("test1", "test2")
    train_sizes: tuple[int, ...] | None = None

    @property
    def model_tags(self) -> tuple[str, str]:
        return (self.baseline_tag, self.ours_tag)


def group_trials(results: Sequence[TrialResult]) -> dict[tuple[str, str, int], TrialGroup]:
    groups: dict[tuple[str, str, int], TrialGroup] = {}
    for r in results:
        key = (r.model_tag, r.test_set, r.train_size)
        groups.setdefault(key, TrialGroup(*key)).results.append(r)
    return groups


def build_comparison_report(
    results: Sequence[TrialResult], spec: ComparisonSpec
) -> dict:
    """Assemble the two-model robustness table.

    Per (model, test set, size): AUROC / macro-F1 mean and sample std plus a
    Shapiro-Wilk normality check.  Per (model, size): the JSD and two-sided
    t-test between the two test sets' AUROC samples.  Per (test set, size):
    the one-sided F-test of baseline variance against ours.
    """
    groups = group_trials(results)
    sizes = spec.train_sizes
    if sizes is None:
        sizes = tuple(
            sorted({key[2] for key in groups if key[0] in spec.model_tags})
        )
    if not sizes:
        raise ConfigError("no trials found for the requested model tags")

    missing = []
    for size in sizes:
        for tag in spec.model_tags:
            for ts in spec.test_sets:
                group = groups.get((tag, ts, size))
                n = len(group.results) if group else 0
                if n < 2:
                    missing.append(f"(model={tag}, test_set={ts}, size={size}): {n} trial(s)")
    if missing:
        raise ConfigError(
            "cells with fewer than 2 trials:\n  " + "\n  ".join(missing)
        )

    report: dict = {
        "model_tags": list(spec.model_tags),
        "test_sets": list(spec.test_sets),
        "train_sizes": list(sizes),
        "metadata": {
            "auroc_reduction": "macro one-vs-rest, midrank ties",
            "t_test": "welch two-sided over AUROC (test1 vs test2)",
            "f_test": "one-sided variance ratio baseline/ours over AUROC",
            "jsd": "gaussian fit per sample, natural log, trapezoid quadrature",
            "std": "sample standard deviation (n-1)",
            "stars": {"*": "p<.05", "**": "p<.01", "***": "p<.001", "(ns)": "p>.05"},
        },
        "rows": [],
    }
    for size in sizes:
        row: dict = {"train_size": size, "models": {}, "f_test": {}}
        for tag in spec.model_tags:
            cells = {
                ts: groups[(tag, ts, size)].summary() for ts in spec.test_sets
            }
            entry: dict = {"cells": cells}
            if len(spec.test_sets) == 2:
                sample_a = groups[(tag, spec.test_sets[0], size)].auroc
                sample_b = groups[(tag, spec.test_sets[1], size)].auroc
                t_stat, t_p = t_test_two_sided(sample_a, sample_b)
                entry["jsd"] = jsd_gaussian(sample_a, sample_b)
                entry["t_stat"] = t_stat
                entry["t_pvalue"] = t_p
                entry["t_stars"] = significance_stars(t_p)
            row["models"][tag] = entry
        for ts in spec.test_sets:
            base = groups[(spec.baseline_tag, ts, size)].auroc
            ours = groups[(spec.ours_tag, ts, size)].auroc
            f0, f_p = f_test_one_sided(base, ours)
            row["f_test"][ts] = {
                "f0": f0,
                "f_pvalue": f_p,
                "stars": significance_stars(f_p),
            }
        report["rows"].append(row)
    return report


def render_report_text(report: dict) -> str:
    """Fixed-width text table: one block per train size, metric columns per
    model, the variance-ratio test on the right."""
    tags = report["model_tags"]
    test_sets = report["test_sets"]

    def cell(summary: dict) -> str:
        return (
            f"{summary['auroc_mean']:.4f} ({summary['auroc_std']:.4f})  "
            f"{summary['macro_f1_mean']:.4f} ({summary['macro_f1_std']:.4f})"
        )

    col_w = 34
    lines = []
    header1 = f"{'':>12}  " + "".join(f"{tag:<{col_w}}" for tag in tags) + "Var ratio (F-test)"
    header2 = (
        f"{'':>12}  "
        + "".join(f"{'AUROC (std)':<17}{'MacroF1 (std)':<{col_w - 17}}" for _ in tags)
    )
    lines.append(header1)
    lines.append(header2)
    lines.append("-" * len(header1))
    for row in report["rows"]:
        size = row["train_size"]
        for idx, ts in enumerate(test_sets):
            label = f"{size} {ts}" if idx == 0 else f"{'':>6}{ts}"
            parts = [f"{label:>12}  "]
            for tag in tags:
                parts.append(f"{cell(row['models'][tag]['cells'][ts]):<{col_w}}")
            f_entry = row["f_test"].get(ts)
            if f_entry:
                parts.append(f"{f_entry['f0']:.4f}{f_entry['stars']}")
            lines.append("".join(parts))
        if all("jsd" in row["models"][tag] for tag in tags):
            parts = [f"{'JSD (t-test)':>12}  "]
            for tag in tags:
                m = row["models"][tag]
                parts.append(f"{m['jsd']:.4f}{m['t_stars']:<{col_w - 6}}")
            parts.append("-")
            lines.append("".join(parts))
        lines.append("-" * len(header1))
    return "\n".join(lines) + "\n"


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
