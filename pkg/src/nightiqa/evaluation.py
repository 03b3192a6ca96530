"""IQA evaluation protocol: correlation/error criteria with the standard
5-parameter logistic mapping, content-disjoint k-fold cross-validation,
rank-n accuracy over enhancement groups, and pairwise significance
t-tests on per-run PLCC values.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

@dataclass
class CriteriaReport:
    srcc: float
    krcc: float
    plcc: float
    rmse: float
    n: int
    logistic_params: tuple
    fit_fallback: bool = False  # True when the logistic fit diverged


@dataclass(frozen=True)
class FoldPlan:
    assignments: dict  # content_id -> fold index in {1..k}
    k: int

    def fold_of(self, record):
        return self.assignments[record.content_id]


def _check_pair(pred, mos, min_n=3):
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    if pred.shape != mos.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: {pred.shape} vs {mos.shape}")
    if len(pred) < min_n:
        raise ValueError(f"need at least {min_n} samples, got {len(pred)}")
    if np.ptp(pred) == 0 or np.ptp(mos) == 0:
        raise ValueError("correlation undefined for a constant vector")
    return pred, mos


def srcc(pred, mos):
    """Spearman rank correlation (average ranks for ties)."""
    pred, mos = _check_pair(pred, mos)
    return float(stats.spearmanr(pred, mos).statistic)


def krcc(pred, mos):
    """Kendall rank correlation, tau-b (tie corrected)."""
    pred, mos = _check_pair(pred, mos)
    return float(stats.kendalltau(pred, mos).statistic)


def _logistic5(x, b1, b2, b3, b4, b5):
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(b2 * (x - b3)))) + b4 * x + b5


def plcc_rmse(pred, mos):
    """PLCC and RMSE after fitting the standard 5-parameter logistic
    mapping from predictions to MOS by damped least squares.

    Returns (plcc, rmse, logistic_params, fallback_flag); on fit
    divergence falls back to a linear fit and sets the flag.
    """
    pred, mos = _check_pair(pred, mos, min_n=6)
    slope, intercept = np.polyfit(pred, mos, 1)
    inv_std = 1.0 / max(float(np.std(pred)), 1e-6)
    span = float(np.ptp(mos))
    # LM is local; start from several plausible points and keep the best fit
    inits = [
        [span, inv_std, float(np.mean(pred)), slope, intercept],
        [span, inv_std, float(np.mean(pred)), 0.0, float(np.mean(mos))],
        [-span, inv_std, float(np.mean(pred)), slope, intercept],
        [span, 10.0 * inv_std, float(np.median(pred)), slope, intercept],
    ]
    best = None
    for init in inits:
        try:
            with np.errstate(over="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore", optimize.OptimizeWarning)
                params, _ = optimize.curve_fit(
                    _logistic5, pred, mos, p0=init, method="lm",
                    maxfev=500 * (len(init) + 1), xtol=1e-10, ftol=1e-10,
                )
            mapped = _logistic5(pred, *params)
            if not np.all(np.isfinite(mapped)) or np.ptp(mapped) == 0:
                continue
            sse = float(np.sum((mapped - mos) ** 2))
            if best is None or sse < best[0]:
                best = (sse, params, mapped)
        except (RuntimeError, optimize.OptimizeWarning):
            continue
    fallback = best is None
    if fallback:
        params = np.array([0.0, 1.0, 0.0, slope, intercept])
        mapped = _logistic5(pred, *params)
    else:
        _, params, mapped = best
    plcc = float(stats.pearsonr(mapped, mos).statistic)
    rmse = float(np.sqrt(np.mean((mapped - mos) ** 2)))
    return plcc, rmse, tuple(float(p) for p in params), fallback


def compute_criteria(pred, mos):
    plcc, rmse, params, fallback = plcc_rmse(pred, mos)
    return CriteriaReport(
        srcc=srcc(pred, mos),
        krcc=krcc(pred, mos),
        plcc=plcc,
        rmse=rmse,
        n=len(pred),
        logistic_params=params,
        fit_fallback=fallback,
    )


def make_folds(manifest, k=5, seed=0):
    """Shuffle content ids with the seed and deal them round-robin into
    k folds, so no image content straddles a fold boundary."""
    contents = sorted({rec.content_id for rec in manifest.records})
    if len(contents) < k:
        raise ValueError(f"need at least {k} contents, got {len(contents)}")
    rng = np.random.default_rng(seed)
    rng.shuffle(contents)
    assignments = {cid: (i % k) + 1 for i, cid in enumerate(contents)}
    return FoldPlan(assignments=assignments, k=k)


def split_by_fold(manifest, plan, test_fold):
    """(train records, test records) for one cross-validation round."""
    train = [r for r in manifest.records if plan.fold_of(r) != test_fold]
    test = [r for r in manifest.records if plan.fold_of(r) == test_fold]
    return train, test


def average_reports(reports):
    return CriteriaReport(
        srcc=float(np.mean([r.srcc for r in reports])),
        krcc=float(np.mean([r.krcc for r in reports])),
        plcc=float(np.mean([r.plcc for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        n=sum(r.n for r in reports),
        logistic_params=(),
        fit_fallback=any(r.fit_fallback for r in reports),
    )


def crossval(manifest, config, k=5, seed=0, progress=None):
    """Content-disjoint k-fold cross-validation: train on k-1 folds,
    test on the held-out one, average the criteria arithmetically.

    Returns (averaged report, per-fold reports, per-fold (pred, mos)).
    """
    from .training import predict_batch, train

    plan = make_folds(manifest, k=k, seed=seed)
    fold_reports = []
    fold_data = []
    for fold in range(1, k + 1):
        train_recs, test_recs = split_by_fold(manifest, plan, fold)
        ckpt, _ = train(manifest, config, records=train_recs)
        preds = predict_batch(ckpt, [r.image_path for r in test_recs])
        mos = [r.mos for r in test_recs]
        report = compute_criteria(preds, mos)
        fold_reports.append(report)
        fold_data.append((preds, mos))
        if progress is not None:
            progress(fold, report)
    return average_reports(fold_reports), fold_reports, fold_data


def rank_n_accuracy(groups, n):
    """Fraction of groups whose best-MOS candidate appears in the top-n
    by predicted score. Score ties go to the lower index."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not groups:
        raise ValueError("no groups")
    hits = 0
    for preds, mos in groups:
        preds = np.asarray(preds, dtype=np.float64)
        mos = np.asarray(mos, dtype=np.float64)
        if len(preds) != len(mos) or len(preds) == 0:
            raise ValueError("malformed group")
        if n > len(preds):
            raise ValueError(f"n={n} exceeds group size {len(preds)}")
        best_mos = int(np.argmax(mos))  # ties: lowest index
        order = sorted(range(len(preds)), key=lambda i: (-preds[i], i))
        if best_mos in order[:n]:
            hits += 1
    return hits / len(groups)


def significance_ttest(plcc_a, plcc_b, alpha=0.05):
    """Pooled-variance two-sample t-test between two sets of per-run
    PLCCs. Returns (t statistic, decision) with decision in
    {'a_better', 'b_better', 'indistinguishable'}."""
    a = np.asarray(plcc_a, dtype=np.float64)
    b = np.asarray(plcc_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 runs per method")
    var_a, var_b = a.var(ddof=1), b.var(ddof=1)
    if var_a == 0 and var_b == 0 and a.mean() == b.mean():
        return 0.0, "indistinguishable"
    pooled = ((len(a) - 1) * var_a + (len(b) - 1) * var_b) / (len(a) + len(b) - 2)
    if pooled == 0:
        # distinct constant vectors: infinitely significant
        t = math.inf if a.mean() > b.mean() else -math.inf
    else:
        t = (a.mean() - b.mean()) / math.sqrt(pooled * (1 / len(a) + 1 / len(b)))
    df = len(a) + len(b) - 2
    critical = stats.t.ppf(1.0 - alpha / 2.0, df)
    if t > critical:
        return float(t), "a_better"
    if t < -critical:
        return float(t), "b_better"
    return float(t), "indistinguishable"
