#!/usr/bin/env python
#
# metrics.py - Engagement, classification, rating and ranking metrics.
#
"""Metrics computed over simulation traces and task results.

All functions here are pure - they only depend on their arguments, so
every aggregate in a run directory can be recomputed from the raw
per-agent records.
"""


import dataclasses
import logging
import math

import numpy  as np
import scipy.stats as stats

from simuser.errors import EmptyReportError, ValidationError


log = logging.getLogger(__name__)


LIKE_THRESHOLD = 3
"""A watched item is liked when its rating is above this value. """


@dataclasses.dataclass(frozen=True)
class EngagementMetrics:
    """Engagement metrics averaged over completed agents. ``s_sat`` is the
    mean exit-interview opinion (1-5); ``s_rating`` is the mean overall
    rating of the recommender (1-10).
    """
    p_view   : float
    n_like   : float
    p_like   : float
    n_exit   : float
    s_sat    : float
    s_rating : float = None
    agents   : int   = 0
    failed   : int   = 0

    def to_dict(self):
        return dataclasses.asdict(self)


def completed(records):
    """Return the records of agents which completed their session. """
    return [r for r in records if r.get('status', 'completed') == 'completed']


def agent_engagement(record):
    """Engagement of a single agent, from its session record.

    Items are counted once, however often they are shown or watched. An
    item counts as liked when its latest rating in the session is above
    :data:`LIKE_THRESHOLD`.
    """

    shown   = []
    watched = []
    ratings = {}

    for turn in record['turns']:
        for iid in turn['shown']:
            if iid not in shown:
                shown.append(iid)
        for iid in turn['watched']:
            if iid not in watched:
                watched.append(iid)
        for verdict in turn['verdicts']:
            ratings[verdict['item_id']] = verdict['rating']

    liked     = [i for i in watched if ratings.get(i, 0) > LIKE_THRESHOLD]
    interview = record['interview']

    return {'shown'    : len(shown),
            'watched'  : len(watched),
            'liked'    : len(liked),
            'p_view'   : len(watched) / len(shown) if shown   else 0.0,
            'p_like'   : len(liked) / len(watched) if watched else 0.0,
            'n_like'   : len(liked),
            'n_exit'   : record['exit_page'],
            's_sat'    : interview['opinion'],
            's_rating' : interview['rating']}


def compute_metrics(records):
    """Average the engagement of every completed agent.

    :arg records: Sequence of per-agent session records, as stored in
                  ``traces.jsonl``
    :returns:     :class:`EngagementMetrics`
    :raises EmptyReportError: If no agent completed its session
    """

    done   = completed(records)
    failed = len(records) - len(done)

    if len(done) == 0:
        raise EmptyReportError('No completed agents to compute metrics '
                               'from ({} failed)'.format(failed))

    per   = [agent_engagement(r) for r in done]
    names = ['p_view', 'n_like', 'p_like', 'n_exit', 's_sat', 's_rating']
    means = {n : float(np.mean([p[n] for p in per])) for n in names}

    return EngagementMetrics(agents=len(done), failed=failed, **means)


def classification_metrics(truth, predicted):
    """Binary classification metrics, with ``True`` as the positive class.
    Undefined ratios (zero denominators) are reported as 0.
    """

    if len(truth) != len(predicted):
        raise ValidationError('truth and predicted differ in length')
    if len(truth) == 0:
        raise EmptyReportError('No predictions to evaluate')

    truth     = [bool(t) for t in truth]
    predicted = [bool(p) for p in predicted]
    pairs     = list(zip(truth, predicted))
    tp        = sum(1 for t, p in pairs if t     and p)
    fp        = sum(1 for t, p in pairs if not t and p)
    tn        = sum(1 for t, p in pairs if not t and not p)
    fn        = sum(1 for t, p in pairs if t     and not p)

    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall    = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1        = (2 * precision * recall / (precision + recall)
                 if precision + recall > 0 else 0.0)

    return {'accuracy'  : (tp + tn) / len(pairs),
            'precision' : precision,
            'recall'    : recall,
            'f1'        : f1,
            'tp'        : tp,
            'fp'        : fp,
            'tn'        : tn,
            'fn'        : fn}


def macro_classification(truth, predicted):
    """Multi-class accuracy, and precision/recall/F1 macro-averaged over
    the classes present in ``truth``.
    """

    if len(truth) != len(predicted):
        raise ValidationError('truth and predicted differ in length')
    if len(truth) == 0:
        raise EmptyReportError('No predictions to evaluate')

    labels  = sorted(set(truth), key=str)
    results = [classification_metrics([t == label for t in truth],
                                      [p == label for p in predicted])
               for label in labels]
    correct = sum(1 for t, p in zip(truth, predicted) if t == p)

    return {'accuracy'  : correct / len(truth),
            'precision' : float(np.mean([r['precision'] for r in results])),
            'recall'    : float(np.mean([r['recall']    for r in results])),
            'f1'        : float(np.mean([r['f1']        for r in results])),
            'classes'   : len(labels)}


def _errors(predicted, truth):
    if len(predicted) != len(truth):
        raise ValidationError('predicted and truth differ in length')
    if len(truth) == 0:
        raise EmptyReportError('No ratings to evaluate')
    return np.asarray(predicted, dtype=float) - np.asarray(truth, dtype=float)


def rmse(predicted, truth):
    return float(np.sqrt(np.mean(_errors(predicted, truth) ** 2)))


def mae(predicted, truth):
    return float(np.mean(np.abs(_errors(predicted, truth))))


def rating_histogram(ratings, low=1, high=5):
    """Count of each rating value, keyed by the value as a string. """
    hist = {str(v) : 0 for v in range(low, high + 1)}
    for r in ratings:
        hist[str(int(r))] = hist.get(str(int(r)), 0) + 1
    return hist


def dcg_at_k(relevances, k):
    """Discounted cumulative gain with binary relevance and a log2
    discount.
    """
    return sum(float(rel) / math.log2(i + 2)
               for i, rel in enumerate(relevances[:k]))


def ndcg_at_k(ranked, relevant, k=10):
    """nDCG@k of a ranked list of item ids against a set of relevant ids.

    :returns: A tuple containing the nDCG value, and a flag which is
              ``True`` when fewer than ``k`` items were ranked (in which
              case the metric is computed at the number of items
              available).
    """
    relevant = set(relevant)
    short    = len(ranked) < k
    if short:
        log.debug('Only %i items ranked, computing nDCG@%i', len(ranked),
                  len(ranked))
    k     = min(k, len(ranked))
    rels  = [1 if i in relevant else 0 for i in ranked]
    ideal = [1] * min(k, len(relevant))
    idcg  = dcg_at_k(ideal, k)
    if idcg == 0:
        return 0.0, short
    return dcg_at_k(rels, k) / idcg, short


def f1_at_k(ranked, relevant, k=10):
    """F1@k of a ranked list against a set of relevant ids. Returns the
    same ``(value, short)`` tuple as :func:`ndcg_at_k`.
    """
    relevant = set(relevant)
    short    = len(ranked) < k
    k        = min(k, len(ranked))
    hits     = sum(1 for i in ranked[:k] if i in relevant)
    if hits == 0:
        return 0.0, short
    precision = hits / k
    recall    = hits / len(relevant)
    return 2 * precision * recall / (precision + recall), short


def paired_ttest(a, b):
    """Paired t-test on two per-agent metric vectors. Returns a dict with
    the t statistic, p value and the mean difference ``a - b``. The
    statistic and p value are ``None`` when undefined (fewer than two
    pairs, or identical vectors).
    """
    if len(a) != len(b):
        raise ValidationError('Paired samples differ in length')
    if len(a) == 0:
        raise EmptyReportError('No samples to compare')

    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if len(a) < 2 or np.allclose(diff, diff[0]):
        return {'t' : None, 'p' : None, 'mean_diff' : float(diff.mean()),
                'n' : len(a)}

    result = stats.ttest_rel(a, b)
    return {'t'         : float(result.statistic),
            'p'         : float(result.pvalue),
            'mean_diff' : float(diff.mean()),
            'n'         : len(a)}
