#!/usr/bin/env python
#
# test_tasks.py -
#


import math

import pytest

import simuser.brain        as brain
import simuser.persona      as persona
import simuser.recommenders as recs
import simuser.simulator    as simulator
import simuser.tasks        as tasks
from simuser.errors import ValidationError, EmptyReportError

from . import (USERS,
               PERSONALITY,
               ixn,
               item,
               rule,
               scripted,
               persona_rules,
               session_rules,
               simple_persona,
               fixture_dataset,
               make_context)


class FakeAgent(object):
    """Stands in for a brain.Agent in the task functions. """

    def __init__(self, agent_id, user_id, ratings=None, interacted=(),
                 accepted=(), page_cap=5, stop_after=None):
        self.agent_id   = agent_id
        self.user_id    = user_id
        self.ratings    = dict(ratings or {})
        self.interacted = set(interacted)
        self.accepted   = set(accepted)
        self.settings   = brain.BrainSettings(page_cap=page_cap)
        self.stop_after = stop_after
        self.turn       = 0
        self.shown      = []

    def probe_rating(self, item_id):
        return self.ratings.get(item_id, 3)

    def has_interacted(self, item_id):
        return item_id in self.interacted

    def accepts(self, item_id):
        return item_id in self.accepted

    def run_session(self, recommend, on_turn=None):
        nturns = self.stop_after or self.settings.page_cap
        seen   = set()
        for t in range(nturns):
            page = recommend(self.user_id, t + 1, seen)
            seen.update(page)
            self.shown.extend(page)
            self.turn = t + 1
            if on_turn is not None:
                on_turn(self.turn)
        return {'turns'       : [],
                'interview'   : {'rating' : 5, 'opinion' : 3},
                'exit_page'   : nturns,
                'exit_reason' : 'page cap'}


class DriftingAgent(FakeAgent):
    """Rates every probe with the number of pages browsed so far. """
    def probe_rating(self, item_id):
        return min(5, self.turn)


def _catalogue(n=40):
    return {str(i) : item(i) for i in range(1, n + 1)}


def test_believability_items():
    items    = _catalogue()
    train    = [ixn('u', i, 3, i) for i in range(1, 11)]
    held_out = [ixn('u', i, 3, i) for i in range(11, 15)]

    sample = tasks.believability_items('u', train, held_out, items, m=9,
                                       items_per_agent=20, seed=1)
    pos = [i for i, t in sample if t]
    neg = [i for i, t in sample if not t]
    assert len(pos) == 2
    assert len(neg) == 18
    assert set(pos) <= {'11', '12', '13', '14'}
    assert not set(neg) & {str(i) for i in range(1, 15)}
    assert sample == tasks.believability_items('u', train, held_out, items,
                                               9, 20, 1)

    # popularity matched distractors are still never-seen items
    pop    = {str(i) : i for i in range(1, 41)}
    sample = tasks.believability_items('u', train, held_out, items, 1, 8,
                                       1, pop)
    assert len(sample) == 8
    assert not {i for i, t in sample if not t} & \
        {str(i) for i in range(1, 15)}

    # too few held-out items for 1:1
    assert tasks.believability_items('u', train, held_out, items, 1, 20) \
        is None


def test_believability_perfect_and_always_yes():
    items    = _catalogue()
    train    = [ixn('u', i, 3, i) for i in range(1, 11)]
    held_out = [ixn('u', i, 3, i) for i in range(11, 15)]
    sample   = tasks.believability_items('u', train, held_out, items, 9)

    perfect = FakeAgent('agent0000', 'u',
                        interacted=[i for i, t in sample if t])
    result  = tasks.task_believability([perfect], {'agent0000' : sample}, 9)
    agg     = result.aggregates
    assert agg['accuracy']  == 1
    assert agg['precision'] == 1
    assert agg['recall']    == 1
    assert result.params    == {'m' : 9}

    yes    = FakeAgent('agent0000', 'u', interacted=items)
    result = tasks.task_believability([yes], {'agent0000' : sample}, 9)
    assert result.aggregates['precision'] == pytest.approx(0.1)
    assert result.aggregates['recall']    == 1

    # agents without a sample are skipped
    with pytest.raises(EmptyReportError):
        tasks.task_believability([yes], {}, 9)


def test_rating_task():
    agents = [FakeAgent('agent0000', '1', ratings={'a' : 3, 'b' : 3}),
              FakeAgent('agent0001', '2')]
    test   = [ixn('1', 'a', 1, 1), ixn('1', 'b', 5, 2), ixn('1', 'b', 5, 3)]
    result = tasks.task_rating(agents, test)

    assert len(result.records) == 2
    agg = result.aggregates
    assert agg['rmse'] == pytest.approx(2)
    assert agg['mae']  == pytest.approx(2)
    assert agg['n']    == 2
    assert agg['predicted_hist']['3'] == 2

    warmed = []
    result = tasks.task_rating(agents, test, 'sim',
                               lambda a, ex: warmed.append((a.user_id, ex)))
    assert warmed == [('1', {'a', 'b'})]

    with pytest.raises(ValidationError):
        tasks.task_rating(agents, test, 'warm')
    with pytest.raises(EmptyReportError):
        tasks.task_rating(agents, [ixn('9', 'a', 1, 1)])


def test_history_length_aggregate():
    records = [{'length' : 5,  'predicted' : 3, 'truth' : 1},
               {'length' : 10, 'predicted' : 3, 'truth' : 3}]
    agg = tasks.aggregate_history_length(records, {'lengths' : [5, 10, 20]})
    assert agg['5']['rmse']  == pytest.approx(2)
    assert agg['10']['rmse'] == 0
    assert agg['20'] is None


def test_hallucination():
    items = {'a' : item('a', 'Alpha', genres=('Comedy',)),
             'b' : item('b', 'Beta',  genres=('Horror',)),
             'c' : item('c', 'Gamma', genres=('Drama',))}
    gateway = scripted(rule('genre_classify', 'GENRE: Comedy', repeat=True),
                       rule('genre_classify', 'GENRE: Jazz', repeat=True,
                            match={'item_id' : '^c$'}))
    test    = [ixn('1', 'a', 3, 1), ixn('1', 'b', 5, 2), ixn('1', 'c', 1, 3)]
    agent   = FakeAgent('agent0000', '1')
    result  = tasks.task_hallucination([agent], test, gateway, items,
                                       ['Comedy', 'Drama', 'Horror'])

    flags = {r['item_id'] : r['hallucinated'] for r in result.records}
    assert flags == {'a' : False, 'b' : True, 'c' : True}
    assert result.records[2]['genres'] == []
    agg = result.aggregates
    assert agg['other']['rmse']        == 0
    assert agg['hallucinated']['rmse'] == pytest.approx(2)
    assert agg['hallucinated']['n']    == 2


def test_coherence():
    agents = [FakeAgent('agent0000', '1', accepted=['p1', 'n1']),
              FakeAgent('agent0001', '2', accepted=['p2'])]
    result = tasks.task_coherence([(agents[0], 'p1', 'n1'),
                                   (agents[1], 'p2', 'n2')])
    assert result.aggregates['incoherence'] == pytest.approx(0.25)
    assert result.aggregates['coherence']   == pytest.approx(0.75)
    assert result.aggregates['pairs']       == 2

    accept_all = FakeAgent('agent0000', '1', accepted=['p1', 'n1'])
    result     = tasks.task_coherence([(accept_all, 'p1', 'n1')])
    assert result.aggregates['incoherence'] == pytest.approx(0.5)

    with pytest.raises(ValidationError):
        tasks.task_coherence([(accept_all, 'p1', None)])
    with pytest.raises(EmptyReportError):
        tasks.task_coherence([])


def test_coherence_pairs():
    items    = _catalogue(10)
    train    = [ixn('1', i, 3, i) for i in range(1, 5)]
    held_out = [ixn('1', 5, 5, 5), ixn('1', 6, 2, 6),
                ixn('2', 5, 1, 7)]
    agents   = [FakeAgent('agent0000', '1'), FakeAgent('agent0001', '2')]

    pairs = tasks.coherence_pairs(agents, train, held_out, items, seed=3)
    # user 2 liked nothing in the held-out set
    assert len(pairs) == 1
    agent, positive, negative = pairs[0]
    assert agent is agents[0]
    assert positive == '5'
    assert negative in {'7', '8', '9', '10'}

    pairs = tasks.coherence_pairs(agents, train, held_out, items,
                                  hard_negatives={'agent0000' : ['6', '9']})
    assert pairs[0][2] == '9'


def test_exposure_probes():
    data   = fixture_dataset()
    probes = tasks.exposure_probes(data.items, ['Horror', 'Comedy'], 2, 1)
    assert sorted(probes) == ['Comedy', 'Horror']
    for genre, ids in probes.items():
        assert len(ids) == 2
        assert all(genre in data.items[i].genres for i in ids)
    assert not set(probes['Horror']) & set(probes['Comedy'])
    with pytest.raises(ValidationError):
        tasks.exposure_probes(data.items, ['Western'])


def test_exposure_task():
    data   = fixture_dataset()
    probes = {'Horror' : ['3'], 'Comedy' : ['1']}
    inner  = recs.PopRecommender(data.interactions, sorted(data.items))
    biased = recs.GenreBiasedRecommender(inner, ['Horror'], data.items)
    agents = [DriftingAgent('agent0000', '1', page_cap=3),
              DriftingAgent('agent0001', '2', page_cap=3, stop_after=2)]

    result = tasks.task_exposure(agents, biased, 1, probes, (3, 1))
    assert result.params == {'checkpoints' : [1, 3],
                             'genres'      : ['Comedy', 'Horror']}
    assert result.aggregates == {'Comedy' : [1, 3], 'Horror' : [1, 3]}
    for agent in agents:
        assert '3' not in agent.shown
        assert all('Horror' in data.items[i].genres for i in agent.shown)

    # the second agent never reached the last checkpoint
    agent2 = [r for r in result.records if r['agent_id'] == 'agent0001']
    assert {r['checkpoint'] for r in agent2} == {1}

    short = [DriftingAgent('agent0000', '1', page_cap=2)]
    with pytest.raises(ValidationError):
        tasks.task_exposure(short, biased, 1, probes, (1, 3))

    agg = tasks.aggregate_exposure([], result.params)
    assert agg == {'Comedy' : [None, None], 'Horror' : [None, None]}


def test_check_review_metadata():
    data = fixture_dataset()
    for mode in brain.REVIEW_MODES:
        tasks.check_review_metadata(data.items, mode)
    items = {'1' : item('1', review_count=3)}
    tasks.check_review_metadata(items, 'with_count')
    with pytest.raises(ValidationError):
        tasks.check_review_metadata(items, 'with_negative')
    with pytest.raises(ValidationError):
        tasks.check_review_metadata(items, 'shouting')


def test_review_influence():
    def record(aid, watched):
        return {'agent_id'  : aid,
                'status'    : 'completed',
                'turns'     : [{'shown'    : ['a', 'b', 'c', 'd'],
                                'watched'  : watched,
                                'verdicts' : [{'item_id' : i, 'rating' : 4}
                                              for i in watched]}],
                'exit_page' : 1,
                'interview' : {'opinion' : 3, 'rating' : 5}}

    reports = {
        'origin'     : simulator.SimulationReport(
            {}, [record('a0', ['a']), record('a1', ['a']),
                 record('a2', [])]),
        'with_count' : simulator.SimulationReport(
            {}, [record('a0', ['a', 'b']), record('a1', ['a', 'c']),
                 record('a2', ['d'])]),
    }
    result = tasks.task_review_influence(reports)
    agg    = result.aggregates
    assert agg['origin']['p_view']     == pytest.approx(0.5 / 3)
    assert agg['with_count']['p_view'] == pytest.approx(1.25 / 3)
    assert agg['with_count']['agents'] == 3
    assert 'ttest_p_view' not in agg['origin']
    assert agg['with_count']['ttest_p_view']['mean_diff'] == \
        pytest.approx(0.25)


class ListRecommender(object):
    def __init__(self, ranking):
        self.ranking = ranking

    def recommend(self, user_id, page, exclude=(), n=4):
        return [i for i in self.ranking if i not in exclude][:n]


def test_offline_compare():
    train  = [ixn('1', 'x', 3, 1)]
    test   = [ixn('1', 'a', 5, 2), ixn('1', 'b', 4, 3), ixn('1', 'c', 1, 4)]
    agent  = FakeAgent('agent0000', '1', ratings={'a' : 2, 'c' : 5})
    good   = ListRecommender(['x', 'a', 'b', 'c'])
    bad    = ListRecommender(['c', 'x', 'b', 'a'])

    result = tasks.task_offline_compare({'good' : good, 'bad' : bad},
                                        [agent], train, test, k=4)
    agg    = result.aggregates

    assert agg['good']['ndcg_truth'] == pytest.approx(1)
    assert agg['good']['short']
    assert agg['bad']['ndcg_truth'] < 1
    assert agg['ranking_truth'] == ['good', 'bad']
    # the simulated user only likes c
    rows = {r['recommender'] : r for r in result.records}
    assert rows['good']['simulated'] == ['c']
    assert rows['bad']['simulated']  == ['c']
    assert agg['bad']['ndcg_simulated'] == pytest.approx(1)
    assert agg['good']['ndcg_simulated'] == pytest.approx(1 / math.log2(4))
    assert agg['ranking_simulated'] == ['bad', 'good']

    nolikes = FakeAgent('agent0001', '2')
    with pytest.raises(EmptyReportError):
        tasks.task_offline_compare({'good' : good}, [nolikes], train, test)


def test_demographics_and_personality():
    p        = simple_persona()
    profiles = {'1' : persona.ProfileResult('1', p, (), ()),
                '2' : persona.ProfileResult('2', p, (), ()),
                '9' : persona.ProfileResult('9', p, (), ())}
    users    = {'1' : (25, 'writer'), '2' : (35, 'programmer')}

    result = tasks.task_demographics(profiles, users)
    assert len(result.records) == 2
    assert result.aggregates['age']['accuracy']        == pytest.approx(0.5)
    assert result.aggregates['occupation']['accuracy'] == pytest.approx(0.5)
    assert result.aggregates['age']['precision']       == pytest.approx(0.25)

    truth  = {'1' : [1, 0.5, 0, 0.5, 1], '2' : [0, 1, 0.5, 0, 0.5]}
    result = tasks.task_personality({5 : profiles, 10 : {}}, truth)
    agg    = result.aggregates
    assert agg['5']['openness'] == pytest.approx(0.5)
    assert agg['5']['mean']     == pytest.approx(0.3)
    assert agg['10'] is None


def test_recompute():
    agents = [FakeAgent('agent0000', '1', accepted=['p1'])]
    result = tasks.task_coherence([(agents[0], 'p1', 'n1')]).to_dict()
    assert tasks.recompute(result) == result


def _task_context(**kwargs):
    rules = persona_rules() + session_rules()
    return make_context(rules, use_kg=False, **kwargs)


def test_run_rating_task():
    ctx     = _task_context()
    results = tasks.run_task(ctx, 'rating')
    assert list(results) == ['rating:zero']
    agg = results['rating:zero']['aggregates']
    # users 1 and 2 rated items 19 and 20 with 5, 3 and 2, 5
    assert agg['n']    == 4
    assert agg['rmse'] == pytest.approx(math.sqrt(7 / 4))
    assert agg['mae']  == pytest.approx(5 / 4)


NEVER_RATED = '^(2[1-9]|3[0-9]|40)$'


def test_run_believability_task():
    rules = persona_rules() + session_rules()
    rules.append(rule('believability', 'ANSWER: no', repeat=True,
                      match={'item_id' : NEVER_RATED}))
    ctx   = make_context(rules, use_kg=False,
                         tasks={'believability' : {'ratios'          : [1, 3],
                                                   'items_per_agent' : 4}})

    results = tasks.run_task(ctx, 'believability')
    assert sorted(results) == ['believability:1', 'believability:3']

    for label, npos in (('believability:1', 2), ('believability:3', 1)):
        result  = results[label]
        records = result['records']
        assert len(records) == 8
        for aid in ('agent0000', 'agent0001'):
            mine = [r for r in records if r['agent_id'] == aid]
            pos  = [r['item_id'] for r in mine if r['truth']]
            neg  = [r['item_id'] for r in mine if not r['truth']]
            assert len(pos) == npos
            assert set(pos) <= {'17', '18', '19', '20'}
            assert all(21 <= int(i) <= 40 for i in neg)
        agg = result['aggregates']
        assert agg['accuracy']  == 1
        assert agg['precision'] == 1
        assert agg['recall']    == 1

    # the default sample size needs more held-out items than users have
    ctx = make_context(rules, use_kg=False)
    with pytest.raises(EmptyReportError):
        tasks.run_task(ctx, 'believability')


def test_run_coherence_task():
    rules = persona_rules() + session_rules()
    rules.append(rule('accept_item', 'ANSWER: no', repeat=True,
                      match={'item_id'  : NEVER_RATED,
                             'agent_id' : '^agent0000$'}))
    ctx     = make_context(rules, use_kg=False)
    results = tasks.run_task(ctx, 'coherence')
    result  = results['coherence']

    pairs = {r['user_id'] : (r['positive'], r['negative'])
             for r in result['records']}
    # user 1 liked items 17 and 19, user 2 items 18 and 20
    assert pairs['1'][0] in {'17', '19'}
    assert pairs['2'][0] in {'18', '20'}
    assert all(21 <= int(neg) <= 40 for _, neg in pairs.values())

    agg = result['aggregates']
    assert agg['pairs']       == 2
    assert agg['incoherence'] == pytest.approx(0.25)
    assert agg['coherence']   == pytest.approx(0.75)


def test_run_persona_tasks():
    ctx     = _task_context(users_file=USERS, personality_file=PERSONALITY,
                            tasks={'personality' : {'rhos' : [5, 10]}})
    results = tasks.run_task(ctx, 'demographics')
    agg     = results['demographics']['aggregates']
    assert agg['age']['accuracy']        == pytest.approx(0.5)
    assert agg['occupation']['accuracy'] == pytest.approx(0.5)

    results = tasks.run_task(ctx, 'personality')
    agg     = results['personality']['aggregates']
    assert sorted(agg) == ['10', '5']
    assert agg['5']['mean']  == pytest.approx(0.3)
    assert agg['10']['mean'] == pytest.approx(0.3)


def test_run_task_errors():
    ctx = _task_context()
    with pytest.raises(ValidationError):
        tasks.run_task(ctx, 'astrology')
    with pytest.raises(ValidationError):
        tasks.run_task(ctx, 'demographics')
