#!/usr/bin/env python
#
# recommenders.py - Baseline recommendation strategies.
#
"""Baseline recommenders which the simulated users are exposed to.

Every recommender implements ``recommend(user_id, page, exclude, n)``,
returning up to ``n`` distinct item ids which are not in ``exclude``. When
fewer than ``n`` items are left, a short page is returned.
"""


import dataclasses
import logging

import numpy as np

import simuser.dataset as ds
from simuser.common import stable_seed
from simuser.errors import (ValidationError,
                            InsufficientDataError,
                            TrainingDivergedError)


log = logging.getLogger(__name__)


STRATEGIES = ('random', 'pop', 'mf')


def _short_page(name, user_id, page, got, n):
    if got < n:
        log.debug('%s recommender: only %i of %i items left for %s on page '
                  '%i', name, got, n, user_id, page)


class RandomRecommender(object):
    """Uniformly random items, seeded by user and page. """

    name = 'random'

    def __init__(self, item_ids, seed=0):
        self.item_ids = sorted(item_ids)
        self.seed     = seed

    def recommend(self, user_id, page, exclude=(), n=4):
        exclude    = set(exclude)
        candidates = [i for i in self.item_ids if i not in exclude]
        rng        = np.random.default_rng(stable_seed(self.seed, user_id,
                                                       page))
        count      = min(n, len(candidates))
        idxs       = rng.choice(len(candidates), count, replace=False)
        _short_page(self.name, user_id, page, count, n)
        return [candidates[i] for i in idxs]


class PopRecommender(object):
    """Items in descending order of interaction count, then item id. """

    name = 'pop'

    def __init__(self, train, item_ids=None):
        counts = ds.item_popularity(train)
        if item_ids is None:
            item_ids = counts.keys()
        self.ranking = sorted(item_ids, key=lambda i: (-counts.get(i, 0), i))

    def recommend(self, user_id, page, exclude=(), n=4):
        exclude = set(exclude)
        result  = []
        for iid in self.ranking:
            if len(result) == n:
                break
            if iid not in exclude:
                result.append(iid)
        _short_page(self.name, user_id, page, len(result), n)
        return result


@dataclasses.dataclass
class MFModel:
    """Learned user and item factors. """
    users  : dict
    items  : dict
    P      : np.ndarray
    Q      : np.ndarray
    losses : list

    def predict(self, user_id, item_id):
        """Predicted rating (the factor dot product). Users or items without
        factors are predicted from the mean user / item factor.
        """
        return float(np.dot(self.user_vector(user_id),
                            self.item_vector(item_id)))

    def user_vector(self, user_id):
        idx = self.users.get(user_id)
        if idx is None:
            return self.P.mean(axis=0)
        return self.P[idx]

    def item_vector(self, item_id):
        idx = self.items.get(item_id)
        if idx is None:
            return self.Q.mean(axis=0)
        return self.Q[idx]

    def rmse(self, interactions):
        errors = [self.predict(i.user_id, i.item_id) - i.rating
                  for i in interactions]
        return float(np.sqrt(np.mean(np.square(errors))))


def _mf_loss(P, Q, uidx, iidx, ratings, reg):
    preds = np.sum(P[uidx] * Q[iidx], axis=1)
    mse   = np.mean((ratings - preds) ** 2)
    return float(mse + reg * (np.sum(P ** 2) + np.sum(Q ** 2)) / len(ratings))


def train_mf(train,
             rank=16,
             epochs=30,
             learning_rate=0.01,
             regularization=0.05,
             init_scale=0.1,
             seed=0):
    """Train a matrix factorisation model with stochastic gradient descent,
    minimising squared error with L2 regularisation.

    Repeated ratings of the same item by the same user count once, with the
    most recent rating. The loss (mean squared error plus the penalty term)
    is recorded before training and after every epoch.

    :raises TrainingDivergedError: If the loss grows above ten times its
                                   initial value.
    """

    train = ds.latest_interactions(train)
    if len(train) == 0:
        raise InsufficientDataError('Cannot train on zero interactions')
    if rank < 1 or epochs < 0:
        raise ValidationError('Invalid rank or epoch count')

    users   = {u : i for i, u in enumerate(sorted({t.user_id for t in train}))}
    items   = {v : i for i, v in enumerate(sorted({t.item_id for t in train}))}
    uidx    = np.array([users[t.user_id] for t in train])
    iidx    = np.array([items[t.item_id] for t in train])
    ratings = np.array([t.rating for t in train], dtype=float)

    rng = np.random.default_rng(seed)
    P   = rng.normal(0, init_scale, (len(users), rank))
    Q   = rng.normal(0, init_scale, (len(items), rank))

    initial = _mf_loss(P, Q, uidx, iidx, ratings, regularization)
    losses  = [initial]

    for epoch in range(epochs):
        for n in rng.permutation(len(ratings)):
            u, i  = uidx[n], iidx[n]
            pu    = P[u].copy()
            err   = ratings[n] - np.dot(pu, Q[i])
            P[u] += learning_rate * (err * Q[i] - regularization * pu)
            Q[i] += learning_rate * (err * pu   - regularization * Q[i])

        loss = _mf_loss(P, Q, uidx, iidx, ratings, regularization)
        losses.append(loss)
        log.debug('MF epoch %i: loss %f', epoch + 1, loss)

        if not np.isfinite(loss) or loss > initial * 10:
            raise TrainingDivergedError('MF training diverged at epoch {} '
                                        '(loss {})'.format(epoch + 1, loss))

    return MFModel(users, items, P, Q, losses)


class MFRecommender(object):
    """Items in descending order of predicted rating. """

    name = 'mf'

    def __init__(self, model, item_ids):
        self.model    = model
        self.item_ids = sorted(item_ids)
        self.Q        = np.vstack([model.item_vector(i)
                                   for i in self.item_ids])

    def recommend(self, user_id, page, exclude=(), n=4):
        exclude = set(exclude)
        scores  = self.Q @ self.model.user_vector(user_id)
        order   = sorted(range(len(self.item_ids)),
                         key=lambda k: (-scores[k], self.item_ids[k]))
        result  = []
        for k in order:
            if len(result) == n:
                break
            if self.item_ids[k] not in exclude:
                result.append(self.item_ids[k])
        _short_page(self.name, user_id, page, len(result), n)
        return result


class GenreBiasedRecommender(object):
    """Restricts another recommender to items of the given genres. """

    def __init__(self, inner, genres, items):
        self.inner   = inner
        self.genres  = set(genres)
        self.outside = {i.item_id for i in items.values()
                        if not self.genres.intersection(i.genres)}
        self.name    = '{}-genres'.format(inner.name)

    def recommend(self, user_id, page, exclude=(), n=4):
        return self.inner.recommend(user_id, page,
                                    set(exclude) | self.outside, n)


def create_recommender(strategy,
                       train,
                       items,
                       seed=0,
                       rank=16,
                       epochs=30,
                       learning_rate=0.01,
                       regularization=0.05):
    """Create a recommender by name - ``random``, ``pop`` or ``mf``. """

    item_ids = sorted(items)

    if strategy == 'random':
        return RandomRecommender(item_ids, seed)
    if strategy == 'pop':
        return PopRecommender(train, item_ids)
    if strategy == 'mf':
        model = train_mf(train, rank, epochs, learning_rate,
                         regularization, seed=seed)
        return MFRecommender(model, item_ids)

    raise ValidationError('Unknown recommender: {}'.format(strategy))
