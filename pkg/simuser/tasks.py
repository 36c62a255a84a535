#!/usr/bin/env python
#
# tasks.py - Evaluation tasks run against simulated users.
#
"""Evaluation tasks.

Each task produces a :class:`TaskResult` holding the raw per-agent
records and the aggregates computed from them. Aggregates are always
computed by the functions registered in :data:`AGGREGATORS`, from the
records alone, so that :func:`recompute` can reproduce them from a saved
``task_results.json``.

The ``run_*`` functions build agents from a
:class:`simuser.simulator.Context` and then call the corresponding
``task_*`` function.
"""


import dataclasses
import logging

import numpy as np

import simuser.brain        as brain
import simuser.dataset      as ds
import simuser.metrics      as metrics
import simuser.persona      as persona
import simuser.recommenders as recommenders
import simuser.simulator    as simulator
from simuser.common import stable_seed
from simuser.errors import (ValidationError,
                            EmptyReportError,
                            LlmFormatError,
                            InsufficientDataError)


log = logging.getLogger(__name__)


TASKS = ('believability',
         'rating',
         'history_length',
         'hallucination',
         'coherence',
         'exposure',
         'reviews',
         'offline_compare',
         'demographics',
         'personality')


@dataclasses.dataclass
class TaskResult:
    task       : str
    params     : dict
    records    : list
    aggregates : dict

    def to_dict(self):
        return {'task'       : self.task,
                'params'     : self.params,
                'records'    : self.records,
                'aggregates' : self.aggregates}


def _result(task, params, records):
    params = dict(params)
    return TaskResult(task, params, records,
                      AGGREGATORS[task](records, params))


def recompute(result):
    """Recompute a saved task result dict from its records. """
    return _result(result['task'],
                   result['params'],
                   result['records']).to_dict()


def _rng(seed, *parts):
    return np.random.default_rng(stable_seed(seed, *parts))


# Believability


def believability_items(user_id,
                        train,
                        held_out,
                        items,
                        m,
                        items_per_agent=20,
                        seed=0,
                        popularity=None):
    """Sample the items an agent is asked about - positives from the
    user's held-out interactions, and ``m`` times as many distractors the
    user never interacted with.

    :arg popularity: Optional ``{item_id : count}``; if given, distractors
                     are sampled in proportion to popularity (plus one)
                     instead of uniformly.
    :returns:        A list of ``(item_id, interacted)`` tuples, or
                     ``None`` if the user has too few held-out items.
    """

    npos     = items_per_agent // (1 + m)
    nneg     = items_per_agent - npos
    trained  = {i.item_id for i in train    if i.user_id == user_id}
    touched  = {i.item_id for i in held_out if i.user_id == user_id}
    positive = sorted(touched - trained)
    negative = sorted(set(items) - trained - touched)

    if len(positive) < npos or len(negative) < nneg:
        return None

    rng = _rng(seed, user_id, 'believability', m)
    pos = list(rng.choice(positive, npos, replace=False))

    if popularity is None:
        neg = list(rng.choice(negative, nneg, replace=False))
    else:
        weights = np.array([popularity.get(i, 0) + 1 for i in negative],
                           dtype=float)
        neg     = list(rng.choice(negative, nneg, replace=False,
                                  p=weights / weights.sum()))

    return [(str(i), True) for i in pos] + [(str(i), False) for i in neg]


def task_believability(agents, samples, m):
    """Ask each agent whether its user interacted with each sampled item.

    :arg agents:  Sequence of :class:`simuser.brain.Agent` objects
    :arg samples: Dict of ``{agent_id : [(item_id, interacted)]}``;
                  agents without samples are skipped
    :arg m:       Distractor ratio
    """
    records = []
    for agent in agents:
        sample = samples.get(agent.agent_id)
        if sample is None:
            log.info('Skipping %s: not enough held-out items',
                     agent.agent_id)
            continue
        for item_id, truth in sample:
            records.append({'agent_id'  : agent.agent_id,
                            'user_id'   : agent.user_id,
                            'item_id'   : item_id,
                            'truth'     : truth,
                            'predicted' : agent.has_interacted(item_id)})
    return _result('believability', {'m' : m}, records)


def aggregate_believability(records, params):
    if len(records) == 0:
        raise EmptyReportError('No believability records')
    return metrics.classification_metrics([r['truth']     for r in records],
                                          [r['predicted'] for r in records])


# Rating prediction


def task_rating(agents, test, mode='zero', warmup=None):
    """Predict held-out ratings through each agent's rating path.

    :arg agents: Sequence of :class:`simuser.brain.Agent` objects
    :arg test:   Held-out interactions
    :arg mode:   ``'zero'``, or ``'sim'``, in which case ``warmup`` is called
                 with each agent and the items to exclude, before any
                 rating is predicted
    """
    if mode not in ('zero', 'sim'):
        raise ValidationError('Unknown rating mode: {}'.format(mode))

    test    = ds.latest_interactions(test)
    records = []

    for agent in agents:
        targets = [i for i in test if i.user_id == agent.user_id]
        if len(targets) == 0:
            continue
        if mode == 'sim' and warmup is not None:
            warmup(agent, {i.item_id for i in targets})
        for ixn in targets:
            records.append({'agent_id'  : agent.agent_id,
                            'user_id'   : agent.user_id,
                            'item_id'   : ixn.item_id,
                            'truth'     : ixn.rating,
                            'predicted' : agent.probe_rating(ixn.item_id)})

    return _result('rating', {'mode' : mode}, records)


def aggregate_rating(records, params):
    if len(records) == 0:
        raise EmptyReportError('No test interactions to predict')
    pred  = [r['predicted'] for r in records]
    truth = [r['truth']     for r in records]
    return {'rmse'            : metrics.rmse(pred, truth),
            'mae'             : metrics.mae(pred, truth),
            'n'               : len(records),
            'predicted_hist'  : metrics.rating_histogram(pred),
            'truth_hist'      : metrics.rating_histogram(truth)}


def aggregate_history_length(records, params):
    result = {}
    for length in params['lengths']:
        subset = [r for r in records if r['length'] == length]
        try:
            result[str(length)] = aggregate_rating(subset, params)
        except EmptyReportError:
            result[str(length)] = None
    return result


def classify_genres(gateway, item, genres):
    """Ask the LLM to classify an item's genres. Returns the predicted
    genre list, restricted to the known genres.
    """
    def validate(parsed):
        known = [g for g in parsed['genre'] if g in genres]
        if len(known) == 0:
            raise LlmFormatError('No known genre in reply')
        return dict(parsed, genre=known)

    resp = gateway.complete('genre_classify',
                            {'genres'  : ', '.join(genres),
                             'title'   : item.title,
                             'item_id' : item.item_id},
                            validate=validate)
    return resp.parsed['genre']


def task_hallucination(agents, test, gateway, items, genres):
    """Compare rating errors on items whose genre the LLM misclassifies
    against the remaining items.
    """
    test        = ds.latest_interactions(test)
    classified  = {}
    records     = []

    for ixn in test:
        if ixn.item_id not in classified:
            item = items[ixn.item_id]
            try:
                predicted = classify_genres(gateway, item, genres)
            except LlmFormatError as e:
                log.debug('Genre classification of %s failed: %s',
                          item.item_id, e)
                predicted = []
            classified[ixn.item_id] = (predicted,
                                       not set(predicted) & set(item.genres))

    for agent in agents:
        for ixn in test:
            if ixn.user_id != agent.user_id:
                continue
            predicted, hallucinated = classified[ixn.item_id]
            records.append({'agent_id'     : agent.agent_id,
                            'user_id'      : agent.user_id,
                            'item_id'      : ixn.item_id,
                            'truth'        : ixn.rating,
                            'predicted'    : agent.probe_rating(ixn.item_id),
                            'genres'       : list(predicted),
                            'hallucinated' : hallucinated})

    return _result('hallucination', {}, records)


def aggregate_hallucination(records, params):
    result = {}
    for name, flag in (('hallucinated', True), ('other', False)):
        subset = [r for r in records if r['hallucinated'] == flag]
        try:
            result[name] = aggregate_rating(subset, params)
        except EmptyReportError:
            result[name] = None
    return result


# Preference coherence


def coherence_pairs(agents, train, held_out, items, seed=0,
                    hard_negatives=None):
    """Build ``(agent, positive, negative)`` pairs. The positive is an item
    the user liked in the held-out interactions, the negative a random
    item the user never interacted with, or, if ``hard_negatives`` gives
    any for the agent, an item the agent was shown but ignored.

    :arg hard_negatives: Optional ``{agent_id : [item_id]}``
    """
    if hard_negatives is None:
        hard_negatives = {}

    pairs = []
    for agent in agents:
        touched = {i.item_id for i in held_out if i.user_id == agent.user_id}
        liked   = sorted({i.item_id for i in held_out
                          if i.user_id == agent.user_id and
                          i.rating >= ds.LIKE_THRESHOLD})
        hard    = sorted(set(hard_negatives.get(agent.agent_id, ())) -
                         touched)
        others  = sorted(set(items) - touched -
                         {i.item_id for i in train
                          if i.user_id == agent.user_id})
        pool    = hard or others
        if len(liked) == 0 or len(pool) == 0:
            log.info('Skipping %s: no coherence pair', agent.agent_id)
            continue
        rng = _rng(seed, agent.user_id, 'coherence')
        pairs.append((agent, str(rng.choice(liked)), str(rng.choice(pool))))
    return pairs


def task_coherence(pairs):
    """Present each agent with a positive and a negative recommendation.
    A decision is incoherent when the negative is accepted, or the positive
    rejected.

    :arg pairs: Sequence of ``(agent, positive, negative)`` tuples
    """
    records = []
    for pair in pairs:
        if len(pair) != 3 or any(p is None for p in pair):
            raise ValidationError('Coherence input must be (agent, '
                                  'positive, negative) triples')
    for agent, positive, negative in pairs:
        records.append({'agent_id'        : agent.agent_id,
                        'user_id'         : agent.user_id,
                        'positive'        : positive,
                        'negative'        : negative,
                        'accept_positive' : agent.accepts(positive),
                        'accept_negative' : agent.accepts(negative)})
    return _result('coherence', {}, records)


def aggregate_coherence(records, params):
    if len(records) == 0:
        raise EmptyReportError('No coherence pairs')
    incoherent = sum((not r['accept_positive']) + r['accept_negative']
                     for r in records)
    decisions  = 2 * len(records)
    return {'incoherence' : incoherent / decisions,
            'coherence'   : 1 - incoherent / decisions,
            'pairs'       : len(records)}


# Exposure effect


def exposure_probes(items, genres, per_genre=2, seed=0):
    """Pick items of each tracked genre to probe ratings with. Returns
    ``{genre : [item_id]}``.
    """
    probes = {}
    used   = set()
    for genre in genres:
        pool = sorted(i.item_id for i in items.values()
                      if genre in i.genres and i.item_id not in used)
        if len(pool) == 0:
            raise ValidationError('No items of genre {}'.format(genre))
        rng = _rng(seed, 'exposure', genre)
        ids = [str(i) for i in
               rng.choice(pool, min(per_genre, len(pool)), replace=False)]
        used.update(ids)
        probes[genre] = sorted(ids)
    return probes


def task_exposure(agents,
                  recommender,
                  items_per_page,
                  probes,
                  checkpoints=(5, 20, 50)):
    """Let agents browse a genre-restricted recommender, probing their
    ratings of fixed items at each checkpoint (number of pages browsed).
    Probe items are never recommended.

    :arg agents:      Agents whose settings allow enough pages, and do not
                      allow EXIT
    :arg recommender: Typically a
                      :class:`simuser.recommenders.GenreBiasedRecommender`
    :arg probes:      ``{genre : [item_id]}``, see :func:`exposure_probes`
    """

    checkpoints = sorted(checkpoints)
    excluded    = {i for ids in probes.values() for i in ids}
    records     = []

    for agent in agents:
        if agent.settings.page_cap < checkpoints[-1]:
            raise ValidationError('page_cap must be at least {} for the '
                                  'exposure task'.format(checkpoints[-1]))

        def probe(turns, agent=agent):
            if turns not in checkpoints:
                return
            for genre, ids in probes.items():
                for item_id in ids:
                    records.append({'agent_id'   : agent.agent_id,
                                    'user_id'    : agent.user_id,
                                    'checkpoint' : turns,
                                    'genre'      : genre,
                                    'item_id'    : item_id,
                                    'rating'     :
                                    agent.probe_rating(item_id)})

        simulator.run_agent(agent, recommender, items_per_page, excluded,
                            on_turn=probe)

    params = {'checkpoints' : checkpoints,
              'genres'      : sorted(probes)}
    return _result('exposure', params, records)


def aggregate_exposure(records, params):
    result = {}
    for genre in params['genres']:
        means = []
        for cp in params['checkpoints']:
            ratings = [r['rating'] for r in records
                       if r['genre'] == genre and r['checkpoint'] == cp]
            means.append(float(np.mean(ratings)) if ratings else None)
        result[genre] = means
    return result


# Review influence


REVIEW_FIELDS = {'with_count'    : 'review_count',
                 'with_negative' : 'review_negative',
                 'with_positive' : 'review_positive'}


def check_review_metadata(items, mode):
    """Raise a ValidationError if any item lacks the review metadata needed
    by a display mode.
    """
    if mode not in brain.REVIEW_MODES:
        raise ValidationError('Unknown review mode: {}'.format(mode))
    field = REVIEW_FIELDS.get(mode)
    if field is None:
        return
    missing = sorted(i.item_id for i in items.values()
                     if getattr(i, field) is None)
    if len(missing) > 0:
        raise ValidationError('Review mode {} needs {} on every item; '
                              'missing for {}'.format(
                                  mode, field, ', '.join(missing[:5])))


def task_review_influence(reports):
    """Compare engagement across review display modes.

    :arg reports: ``{mode : SimulationReport}``
    """
    records = []
    for mode in sorted(reports):
        for r in reports[mode].completed:
            row = {'mode' : mode, 'agent_id' : r['agent_id']}
            row.update(metrics.agent_engagement(r))
            records.append(row)
    return _result('reviews', {'modes' : sorted(reports)}, records)


def aggregate_reviews(records, params):
    result = {}
    base   = {r['agent_id'] : r for r in records if r['mode'] == 'origin'}
    for mode in params['modes']:
        rows = [r for r in records if r['mode'] == mode]
        if len(rows) == 0:
            result[mode] = None
            continue
        entry = {'p_view' : float(np.mean([r['p_view'] for r in rows])),
                 'p_like' : float(np.mean([r['p_like'] for r in rows])),
                 'agents' : len(rows)}
        paired = [r for r in rows if r['agent_id'] in base]
        if mode != 'origin' and len(paired) > 0:
            entry['ttest_p_view'] = metrics.paired_ttest(
                [r['p_view'] for r in paired],
                [base[r['agent_id']]['p_view'] for r in paired])
        result[mode] = entry
    return result


# Offline metrics comparison


def task_offline_compare(recs, agents, train, test, k=10):
    """Rank items with each recommender, and score the rankings against
    the held-out likes of each user, and against the likes of the
    simulated user (items in the ranking it would rate above 3).

    :arg recs:   ``{name : recommender}``
    :arg agents: Sequence of :class:`simuser.brain.Agent` objects
    :arg train:  Training interactions, excluded from the rankings
    :arg test:   Held-out interactions
    """
    records = []
    ratings = {}

    for agent in agents:
        seen  = {i.item_id for i in train if i.user_id == agent.user_id}
        liked = sorted({i.item_id for i in ds.latest_interactions(test)
                        if i.user_id == agent.user_id and
                        i.rating >= ds.LIKE_THRESHOLD})
        if len(liked) == 0:
            log.info('Skipping %s: no held-out likes', agent.agent_id)
            continue

        for name in sorted(recs):
            ranked = recs[name].recommend(agent.user_id, 1, seen, k)
            sim    = []
            for item_id in ranked:
                key = (agent.agent_id, item_id)
                if key not in ratings:
                    ratings[key] = agent.probe_rating(item_id)
                if ratings[key] > metrics.LIKE_THRESHOLD:
                    sim.append(item_id)
            records.append({'recommender' : name,
                            'agent_id'    : agent.agent_id,
                            'user_id'     : agent.user_id,
                            'ranked'      : list(ranked),
                            'truth'       : liked,
                            'simulated'   : sim})

    return _result('offline_compare', {'k' : k}, records)


def aggregate_offline_compare(records, params):
    if len(records) == 0:
        raise EmptyReportError('No rankings to evaluate')
    k      = params['k']
    result = {}
    for name in sorted({r['recommender'] for r in records}):
        rows  = [r for r in records if r['recommender'] == name]
        entry = {'short' : any(len(r['ranked']) < k for r in rows)}
        for source in ('truth', 'simulated'):
            ndcg = [metrics.ndcg_at_k(r['ranked'], r[source], k)[0]
                    for r in rows]
            f1   = [metrics.f1_at_k(r['ranked'], r[source], k)[0]
                    for r in rows]
            entry['ndcg_{}'.format(source)] = float(np.mean(ndcg))
            entry['f1_{}'.format(source)]   = float(np.mean(f1))
        result[name] = entry

    for source in ('truth', 'simulated'):
        key = 'ndcg_{}'.format(source)
        result['ranking_{}'.format(source)] = sorted(
            [n for n in result if not n.startswith('ranking_')],
            key=lambda n: (-result[n][key], n))
    return result


# Persona evaluation


def task_demographics(profiles, users):
    """Compare persona age and occupation with the true demographics.

    :arg profiles: ``{user_id : ProfileResult}``
    :arg users:    ``{user_id : (age, occupation)}``
    """
    records = []
    for user_id in sorted(profiles):
        if user_id not in users:
            continue
        age, occupation = users[user_id]
        p = profiles[user_id].persona
        records.append({'user_id'         : user_id,
                        'age'             : age,
                        'predicted_age'   : p.age,
                        'occupation'      : occupation,
                        'predicted_occupation' : p.occupation})
    return _result('demographics', {}, records)


def aggregate_demographics(records, params):
    if len(records) == 0:
        raise EmptyReportError('No users with demographics')
    return {
        'age'        : metrics.macro_classification(
            [r['age'] for r in records],
            [r['predicted_age'] for r in records]),
        'occupation' : metrics.macro_classification(
            [r['occupation'] for r in records],
            [r['predicted_occupation'] for r in records])}


def task_personality(profiles, personality):
    """Compare persona personality facets with true trait scores.

    :arg profiles:    ``{rho : {user_id : ProfileResult}}``
    :arg personality: ``{user_id : array of five traits in [0, 1]}``
    """
    records = []
    for rho in sorted(profiles):
        for user_id in sorted(profiles[rho]):
            if user_id not in personality:
                continue
            pred = persona.normalised_big_five(profiles[rho][user_id].persona)
            records.append({'rho'       : rho,
                            'user_id'   : user_id,
                            'truth'     : [float(v) for v in
                                           personality[user_id]],
                            'predicted' : [float(v) for v in pred]})
    return _result('personality', {'rhos' : sorted(profiles)}, records)


def aggregate_personality(records, params):
    if len(records) == 0:
        raise EmptyReportError('No users with personality scores')
    result = {}
    for rho in params['rhos']:
        rows = [r for r in records if r['rho'] == rho]
        if len(rows) == 0:
            result[str(rho)] = None
            continue
        err   = np.abs(np.array([r['predicted'] for r in rows]) -
                       np.array([r['truth']     for r in rows]))
        per   = err.mean(axis=0)
        entry = {t : float(v) for t, v in zip(persona.TRAITS, per)}
        entry['mean'] = float(per.mean())
        result[str(rho)] = entry
    return result


AGGREGATORS = {
    'believability'   : aggregate_believability,
    'rating'          : aggregate_rating,
    'history_length'  : aggregate_history_length,
    'hallucination'   : aggregate_hallucination,
    'coherence'       : aggregate_coherence,
    'exposure'        : aggregate_exposure,
    'reviews'         : aggregate_reviews,
    'offline_compare' : aggregate_offline_compare,
    'demographics'    : aggregate_demographics,
    'personality'     : aggregate_personality,
}


# Runners which build agents from a Context


def build_agents(ctx, users=None, settings=None):
    """Build agents for the given users (default: the configured number of
    users). Users whose agent cannot be built are logged and skipped.
    """
    if users is None:
        users = ctx.select_users()
    agents = []
    for i, uid in enumerate(users):
        aid = simulator.agent_id(i)
        try:
            agents.append(simulator.build_agent(ctx, aid, uid, settings))
        except (InsufficientDataError, LlmFormatError, ValidationError) as e:
            log.warning('Could not build agent for %s: %s', uid, e)
    return agents


def run_believability(ctx):
    opts   = ctx.config.task_settings('believability')
    ratios = opts.get('ratios', [1, 3, 9])
    n      = opts.get('items_per_agent', 20)
    pop    = None
    if opts.get('popularity_matched', False):
        pop = ds.item_popularity(ctx.train)

    agents  = build_agents(ctx)
    results = {}
    for m in ratios:
        samples = {}
        for agent in agents:
            sample = believability_items(agent.user_id, ctx.train,
                                         ctx.held_out, ctx.items, m, n,
                                         ctx.config.seed, pop)
            if sample is not None:
                samples[agent.agent_id] = sample
        results[str(m)] = task_believability(agents, samples, m)
    return results


def _warmup(ctx, pages):
    cfg = ctx.config

    def warmup(agent, exclude):
        simulator.run_agent(agent, ctx.recommender, cfg.items_per_page,
                            exclude)
    return warmup, cfg.brain_settings(page_cap=pages)


def run_rating(ctx):
    opts          = ctx.config.task_settings('rating')
    mode          = opts.get('mode', 'zero')
    warmup, brset = _warmup(ctx, opts.get('warmup_pages', 5))
    settings      = brset if mode == 'sim' else None
    agents        = build_agents(ctx, settings=settings)
    return {mode : task_rating(agents, ctx.split.test, mode, warmup)}


def run_history_length(ctx):
    opts    = ctx.config.task_settings('history_length')
    lengths = opts.get('lengths', [5, 10, 20, 50])
    records = []
    for length in lengths:
        agents = []
        for i, uid in enumerate(ctx.select_users()):
            history = ds.user_history(ctx.train, uid)[-length:]
            try:
                agents.append(simulator.build_agent(
                    ctx, simulator.agent_id(i), uid, history=history))
            except (InsufficientDataError, LlmFormatError) as e:
                log.warning('Could not build agent for %s with history '
                            'length %i: %s', uid, length, e)
        for r in task_rating(agents, ctx.split.test).records:
            r['length'] = length
            records.append(r)
    return {'history_length' : _result('history_length',
                                       {'lengths' : lengths},
                                       records)}


def run_hallucination(ctx):
    agents  = build_agents(ctx)
    gateway = ctx.gateway.fork('genre_classify')
    return {'hallucination' : task_hallucination(agents,
                                                 ctx.split.test,
                                                 gateway,
                                                 ctx.items,
                                                 ctx.dataset.genres)}


def run_coherence(ctx):
    agents = build_agents(ctx)
    pairs  = coherence_pairs(agents, ctx.train, ctx.held_out, ctx.items,
                             ctx.config.seed)
    return {'coherence' : task_coherence(pairs)}


def run_exposure(ctx):
    cfg         = ctx.config
    opts        = cfg.task_settings('exposure')
    checkpoints = opts.get('checkpoints', [5, 20, 50])
    exposed     = opts.get('genres', ['Action', 'Horror'])
    tracked     = opts.get('tracked', sorted(set(exposed) |
                                             set(ctx.dataset.genres)))
    probes      = exposure_probes(ctx.items, tracked,
                                  opts.get('per_genre', 2), cfg.seed)
    inner       = ctx.create_recommender(opts.get('recommender', 'random'))
    biased      = recommenders.GenreBiasedRecommender(inner, exposed,
                                                      ctx.items)
    settings    = cfg.brain_settings(page_cap=max(checkpoints),
                                     allow_exit=False)
    agents      = build_agents(ctx, settings=settings)
    return {'exposure' : task_exposure(agents, biased, cfg.items_per_page,
                                       probes, checkpoints)}


def run_reviews(ctx, progress=None):
    cfg     = ctx.config
    modes   = cfg.task_settings('reviews').get('modes',
                                               list(brain.REVIEW_MODES))
    for mode in modes:
        check_review_metadata(ctx.items, mode)
    ctx.finalise()
    reports = {}
    for mode in modes:
        settings      = cfg.brain_settings(review_mode=mode)
        agents        = simulator.pending_agents(ctx, settings=settings)
        reports[mode] = simulator.run_simulation(agents, cfg,
                                                 ctx.recommender,
                                                 progress=progress)
    return {'reviews' : task_review_influence(reports)}


def run_offline_compare(ctx):
    opts = ctx.config.task_settings('offline_compare')
    recs = {name : ctx.create_recommender(name)
            for name in opts.get('recommenders', recommenders.STRATEGIES)}
    agents = build_agents(ctx)
    return {'offline_compare' : task_offline_compare(recs, agents,
                                                     ctx.train,
                                                     ctx.split.test,
                                                     opts.get('k', 10))}


def _profiles(ctx, settings=None):
    profiles = {}
    for uid in ctx.select_users():
        try:
            profiles[uid] = ctx.profile(uid, settings=settings)
        except (InsufficientDataError, LlmFormatError) as e:
            log.warning('Could not build persona for %s: %s', uid, e)
    return profiles


def run_demographics(ctx):
    if ctx.config.users_file is None:
        raise ValidationError('The demographics task needs a users_file')
    users = ds.load_users(ctx.config.users_file, ctx.config.delimiter)
    return {'demographics' : task_demographics(_profiles(ctx), users)}


def run_personality(ctx):
    cfg = ctx.config
    if cfg.personality_file is None:
        raise ValidationError('The personality task needs a '
                              'personality_file')
    rhos  = cfg.task_settings('personality').get('rhos', [5, 10, 20])
    truth = ds.load_personality(cfg.personality_file, cfg.delimiter)
    profiles = {rho : _profiles(ctx, cfg.persona_settings(rho=rho))
                for rho in rhos}
    return {'personality' : task_personality(profiles, truth)}


RUNNERS = {
    'believability'   : run_believability,
    'rating'          : run_rating,
    'history_length'  : run_history_length,
    'hallucination'   : run_hallucination,
    'coherence'       : run_coherence,
    'exposure'        : run_exposure,
    'reviews'         : run_reviews,
    'offline_compare' : run_offline_compare,
    'demographics'    : run_demographics,
    'personality'     : run_personality,
}


def run_task(ctx, name):
    """Run a task by name. Returns ``{label : result dict}``; the label is
    the task name, or the task variant (e.g. the ratio ``m`` for the
    believability task).
    """
    if name not in RUNNERS:
        raise ValidationError('Unknown task: {}'.format(name))
    ctx.finalise()
    results = RUNNERS[name](ctx)
    return {'{}:{}'.format(name, label) if label != name else name :
            result.to_dict()
            for label, result in results.items()}
