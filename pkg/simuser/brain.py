#!/usr/bin/env python
#
# brain.py - The agent decision loop.
#
"""The agent decision loop.

An :class:`Agent` browses pages of recommendations. On each page it:

 1. perceives the page items (titles, genres, captions, reviews),
 2. retrieves relevant episodic memories and knowledge graph evidence,
 3. decides which items to watch, over up to ``r_max`` rounds which widen
    the retrieval budget whenever the decision contradicts the evidence,
 4. rates every watched item, citing knowledge graph paths,
 5. selects an action (EXIT, NEXT, PREVIOUS or CLICK) after estimating its
    satisfaction, fatigue and emotion, and validates it with causal
    "what if" questions,

then reflects on the page and records it in memory. The session ends on
EXIT, or when the page cap is reached, and is followed by an exit
interview.
"""


import dataclasses
import logging
import re

import numpy as np

import simuser.dataset  as ds
import simuser.episodic as episodic
import simuser.kg       as kg
from simuser.errors import (ValidationError,
                            LlmFormatError,
                            LlmTransportError,
                            ScriptExhaustedError)


log = logging.getLogger(__name__)


FATIGUE_LEVELS = ('low', 'medium', 'high')


REVIEW_MODES = ('origin', 'with_count', 'with_negative', 'with_positive')
"""How reviews are displayed alongside page items. """


STEPS = ('perceive', 'retrieve', 'watch', 'rate', 'action', 'reflect',
         'memory')
"""Order of the steps performed on each page. """


@dataclasses.dataclass(frozen=True)
class BrainSettings:
    """Parameters of the decision loop. """
    k1               : int   = 5
    k2               : int   = 3
    delta_k          : int   = 2
    r_max            : int   = 3
    alpha            : float = 0.8
    embed_weight     : float = 0.25
    path_length      : int   = 3
    max_paths        : int   = 3
    causal_threshold : float = 0.5
    reflection       : str   = 'page'
    max_clicks       : int   = 2
    page_cap         : int   = 20
    allow_exit       : bool  = True
    use_persona      : bool  = True
    use_kg           : bool  = True
    use_captions     : bool  = True
    review_mode      : str   = 'origin'
    item_type        : str   = 'movies'

    def __post_init__(self):
        if self.reflection not in ('page', 'end'):
            raise ValidationError('reflection must be "page" or "end"')
        if self.review_mode not in REVIEW_MODES:
            raise ValidationError('Unknown review mode: {}'.format(
                self.review_mode))
        if self.page_cap < 1 or self.r_max < 1:
            raise ValidationError('page_cap and r_max must be at least 1')


@dataclasses.dataclass
class AgentState:
    page         : int = 1
    satisfaction : int = None
    fatigue      : str = 'low'
    emotion      : str = None
    exit_reason  : str = None

    def snapshot(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class DecisionRound:
    watch         : tuple
    skip          : tuple
    contradiction : str
    evidence      : str
    k1            : int
    k2            : int

    @property
    def consistent(self):
        return is_consistent(self.contradiction)


@dataclasses.dataclass(frozen=True)
class WatchDecision:
    rounds : tuple

    @property
    def final(self):
        return self.rounds[-1].watch

    @property
    def k1_used(self):
        return self.rounds[-1].k1

    @property
    def k2_used(self):
        return self.rounds[-1].k2


@dataclasses.dataclass(frozen=True)
class ItemVerdict:
    item_id     : str
    rating      : int
    feeling     : str
    cited_paths : tuple = ()


@dataclasses.dataclass(frozen=True)
class Action:
    kind   : str
    target : str = None

    def __str__(self):
        if self.target is None:
            return '[{}]'.format(self.kind)
        return '[{} {}]'.format(self.kind, self.target)


@dataclasses.dataclass(frozen=True)
class CausalProbe:
    question : str
    score    : float
    verdict  : str


@dataclasses.dataclass(frozen=True)
class ActionPlan:
    tentative    : Action
    causal_probe : tuple
    final        : Action


@dataclasses.dataclass(frozen=True)
class Interview:
    rating   : int
    opinion  : int
    reason   : str
    raw_text : str


def is_consistent(contradiction):
    """True if the LLM reported no contradiction. """
    if contradiction is None:
        return True
    text = contradiction.strip().lower().strip('."\'')
    return text in ('', 'none', 'no', 'n/a', 'no contradiction',
                    'consistent', 'false')


def fatigue_hint(pages):
    """Fatigue level suggested to the agent after viewing pages pages. """
    if pages <= 3: return 'low'
    if pages <= 7: return 'medium'
    return 'high'


def normalise_score(score):
    """Map a causal outcome score onto [0, 1]. Scores above 1 are taken to
    be on a 0-10 scale.
    """
    if score > 1:
        score = score / 10
    return float(min(1.0, max(0.0, score)))


def parse_citations(text):
    """Return the record indices cited in an insight, e.g.
    ``"... [cites: 0, 2]"`` -> ``[0, 2]``.
    """
    cites = []
    for group in re.findall(r'\[(?:cites?:?\s*)?([\d,\s]+)\]', text):
        cites.extend(int(c) for c in re.findall(r'\d+', group))
    return sorted(set(cites))


def render_item(item, label=None, caption=None, review_mode='origin',
                detail=False):
    """Describe an item for a prompt. """

    head  = item.describe()
    if label is not None:
        head = '{} {}'.format(label, head)
    lines = [head]

    if caption is not None:
        lines.append('    Thumbnail: {}'.format(caption))

    if review_mode == 'with_count':
        if item.review_count is None:
            raise ValidationError('Item {} has no review count'.format(
                item.item_id))
        lines.append('    {} people have reviewed it.'.format(
            item.review_count))
    elif review_mode == 'with_negative':
        if item.review_negative is None:
            raise ValidationError('Item {} has no negative review'.format(
                item.item_id))
        lines.append('    A viewer wrote: "{}"'.format(item.review_negative))
    elif review_mode == 'with_positive':
        if item.review_positive is None:
            raise ValidationError('Item {} has no positive review'.format(
                item.item_id))
        lines.append('    A viewer wrote: "{}"'.format(item.review_positive))

    if detail:
        if item.description:
            lines.append('    Description: {}'.format(item.description))
        if item.people:
            lines.append('    Starring: {}'.format(', '.join(item.people)))

    return '\n'.join(lines)


@dataclasses.dataclass
class PageRecord:
    """What happened on one page. """
    page     : int
    shown    : tuple
    watched  : list = dataclasses.field(default_factory=list)
    verdicts : list = dataclasses.field(default_factory=list)

    def describe(self, items):
        ratings = {v.item_id : v.rating for v in self.verdicts}
        watched = ', '.join('{} (rated {})'.format(items[i].title,
                                                   ratings.get(i, '-'))
                            for i in self.watched) or 'nothing'
        shown   = ', '.join(items[i].title for i in self.shown)
        return 'Page {}: shown {}; watched {}'.format(self.page, shown,
                                                      watched)


class Agent(object):
    """A simulated user. """

    def __init__(self,
                 agent_id,
                 user_id,
                 gateway,
                 memory,
                 graph,
                 items,
                 persona=None,
                 settings=None,
                 captions=None,
                 aggregated=None,
                 rated=()):
        """Create an Agent.

        :arg agent_id:   Agent identifier
        :arg user_id:    Identifier of the user the agent stands in for
        :arg gateway:    :class:`simuser.gateway.Gateway` for this agent
        :arg memory:     :class:`simuser.episodic.EpisodicMemory`
        :arg graph:      :class:`simuser.kg.AgentGraph`
        :arg items:      Dict of ``{item_id : Item}``
        :arg persona:    :class:`simuser.persona.Persona`
        :arg settings:   :class:`BrainSettings`
        :arg captions:   Dict of ``{item_id : Caption}``
        :arg aggregated: Dict of ``{item_id : R_i}``
        :arg rated:      IDs of items the user rated in the training split.
                         These are never recommended to the agent.
        """
        if settings is None:
            settings = BrainSettings()

        self.agent_id   = agent_id
        self.user_id    = user_id
        self.gateway    = gateway
        self.memory     = memory
        self.graph      = graph
        self.items      = items
        self.persona    = persona
        self.settings   = settings
        self.captions   = captions or {}
        self.aggregated = aggregated or {}
        self.rated      = frozenset(rated)
        self.state      = AgentState()
        self.pages      = []
        self.clock      = 0

    # Prompt helpers

    def persona_text(self):
        s = self.settings
        if self.persona is None or not s.use_persona:
            return 'You are a user of a {} recommender system.'.format(
                s.item_type)
        return self.persona.describe(s.item_type)

    def caption_of(self, item_id):
        if not self.settings.use_captions:
            return None
        caption = self.captions.get(item_id)
        if caption is None:
            return None
        return caption.final

    def page_items_text(self, item_ids):
        return '\n'.join(render_item(self.items[iid],
                                     '#{}'.format(i + 1),
                                     self.caption_of(iid),
                                     self.settings.review_mode)
                         for i, iid in enumerate(item_ids))

    def history_text(self):
        if len(self.pages) == 0:
            return '(this is the first page)'
        return '\n'.join(p.describe(self.items) for p in self.pages)

    def resolve_item(self, ref, item_ids):
        """Resolve an item reference (a ``#k`` label, an item id, or a
        title) to an item id on the page. Raises a :exc:`LlmFormatError` if
        it cannot be resolved.
        """
        ref   = str(ref).strip().strip('[]"\'.')
        match = re.fullmatch(r'#\s*(\d+)', ref)
        if match is not None:
            idx = int(match.group(1)) - 1
            if 0 <= idx < len(item_ids):
                return item_ids[idx]
        elif ref in item_ids:
            return ref
        else:
            for iid in item_ids:
                if self.items[iid].title.lower() == ref.lower():
                    return iid
        raise LlmFormatError('Unknown item reference: {}'.format(ref))

    def kg_evidence(self, item_ids, k2):
        """Similar items and supporting paths for each page item. """
        s = self.settings
        if not s.use_kg:
            return '(no knowledge graph evidence)', []

        lines = []
        paths = []
        for iid in item_ids:
            results = kg.retrieve_similar(self.graph,
                                          self.gateway,
                                          self.user_id,
                                          iid,
                                          k2,
                                          s.alpha,
                                          s.embed_weight,
                                          s.path_length,
                                          s.max_paths,
                                          self.aggregated)
            lines.append('Items related to {}:'.format(
                self.items[iid].title))
            lines.append(kg.render_similar(self.graph, results,
                                           self.user_id))
            for r in results:
                paths.extend(self.render_paths(r))
        return '\n'.join(lines), paths

    def render_paths(self, result):
        me = kg.user_node(self.user_id)

        def label(node):
            if node == me:
                return 'You'
            return self.graph.label(node)

        return [p.render(label) for p in result.breakdown.supporting_paths]

    # Steps

    def perceive(self, item_ids):
        return self.page_items_text(item_ids)

    def retrieve(self, item_ids, k1, k2):
        titles = ', '.join(self.items[i].title for i in item_ids)
        query  = 'Which of these {} would I enjoy: {}?'.format(
            self.settings.item_type, titles)
        memories    = self.memory.self_ask_retrieve(query, k1)
        evidence, _ = self.kg_evidence(item_ids, k2)
        return memories.render(), evidence

    def elicit_watch(self, item_ids, page_text=None):
        """Decide which page items to watch.

        :returns: A :class:`WatchDecision`
        """

        s = self.settings
        if page_text is None:
            page_text = self.perceive(item_ids)

        def validate(parsed):
            watch = [self.resolve_item(r, item_ids)
                     for r in parsed['watch'] or []]
            watch = list(dict.fromkeys(watch))
            skip  = [self.resolve_item(r, item_ids)
                     for r in parsed['skip'] or []]
            skip  = [i for i in dict.fromkeys(skip) if i not in watch]
            return dict(parsed, watch=watch, skip=skip)

        rounds   = []
        previous = ''

        for t in range(s.r_max):
            k1 = s.k1 + t * s.delta_k
            k2 = s.k2 + t * s.delta_k

            memories, evidence = self.retrieve(item_ids, k1, k2)
            resp = self.gateway.complete('watch_decision',
                                         {'persona'  : self.persona_text(),
                                          'memories' : memories,
                                          'evidence' : evidence,
                                          'page'     : self.state.page,
                                          'items'    : page_text,
                                          'previous' : previous,
                                          'round'    : t},
                                         validate=validate)
            parsed = resp.parsed
            rnd    = DecisionRound(watch=tuple(parsed['watch']),
                                   skip=tuple(parsed['skip']),
                                   contradiction=parsed['contradiction'],
                                   evidence=parsed['evidence'],
                                   k1=k1,
                                   k2=k2)
            rounds.append(rnd)

            log.debug('[%s] page %i round %i: watch %s, contradiction %s',
                      self.agent_id, self.state.page, t, rnd.watch,
                      rnd.contradiction)

            if rnd.consistent:
                break

            previous = ('In your previous decision you chose to watch {}, '
                        'but noted this contradiction: {}. Reconsider your '
                        'decision using the additional memories and '
                        'evidence.\n').format(
                            ', '.join(self.items[i].title
                                      for i in rnd.watch) or 'nothing',
                            rnd.contradiction)

        return WatchDecision(tuple(rounds))

    def rate(self, item_id, k1=None):
        """Ask for a rating and feeling for one item, without recording
        anything. Returns an :class:`ItemVerdict`.
        """

        s    = self.settings
        item = self.items[item_id]
        k1   = s.k1 if k1 is None else k1

        memories = episodic.RetrievalResult(
            tuple(self.memory.search(item.describe(), k1)), ())
        paths    = []
        if s.use_kg:
            results = kg.retrieve_similar(self.graph, self.gateway,
                                          self.user_id, item_id, s.k2,
                                          s.alpha, s.embed_weight,
                                          s.path_length, s.max_paths,
                                          self.aggregated)
            for r in results:
                paths.extend(self.render_paths(r))

        resp = self.gateway.complete(
            'rate_item',
            {'persona'    : self.persona_text(),
             'memories'   : memories.render(),
             'paths'      : '\n'.join(paths) or '(no known connections)',
             'item'       : render_item(item,
                                        caption=self.caption_of(item_id),
                                        review_mode=s.review_mode),
             'item_id'    : item_id,
             'item_title' : item.title})

        return ItemVerdict(item_id=item_id,
                           rating=resp.parsed['rating'],
                           feeling=resp.parsed['feeling'],
                           cited_paths=tuple(paths))

    def probe_rating(self, item_id):
        """Rating an item would get, without changing the agent. """
        return self.rate(item_id).rating

    def evaluate_items(self, item_ids):
        """Rate watched items, recording a feeling memory and a knowledge
        graph edge for each.
        """
        verdicts = []
        for iid in item_ids:
            verdict = self.rate(iid)
            self.memory.record(episodic.feeling_text(self.items[iid].title,
                                                     verdict.rating,
                                                     verdict.feeling),
                               'feeling')
            self.clock += 1
            self.graph.grow(ds.Interaction(self.user_id, iid,
                                           verdict.rating, self.clock))
            verdicts.append(verdict)
        return verdicts

    def legal_actions(self, clicks=0, allow_click=True):
        s     = self.settings
        legal = []
        if s.allow_exit:
            legal.append('EXIT')
        if self.state.page < s.page_cap:
            legal.append('NEXT')
        if self.state.page > 1:
            legal.append('PREVIOUS')
        if allow_click and clicks < s.max_clicks:
            legal.append('CLICK')
        return legal

    def __action_validator(self, legal, item_ids):
        def validate(parsed):
            kind = parsed['action']
            if kind not in legal:
                raise LlmFormatError('Action {} is not allowed on page {} '
                                     '(allowed: {})'.format(
                                         kind, self.state.page,
                                         ', '.join(legal)))
            target = None
            if kind == 'CLICK':
                if parsed['target'] is None:
                    raise LlmFormatError('CLICK requires a TARGET')
                target = self.resolve_item(parsed['target'], item_ids)
            return dict(parsed, action=Action(kind, target))
        return validate

    def select_action(self, item_ids, page_text=None, clicks=0):
        """Estimate satisfaction, fatigue and emotion, and choose a
        tentative action.
        """

        s = self.settings
        if page_text is None:
            page_text = self.perceive(item_ids)

        persona = self.persona_text()
        history = self.history_text()

        resp = self.gateway.complete('satisfaction',
                                     {'persona' : persona,
                                      'history' : history})
        self.state.satisfaction = resp.parsed['satisfaction']

        resp = self.gateway.complete('fatigue',
                                     {'persona'      : persona,
                                      'pages'        : self.state.page,
                                      'fatigue_hint' : fatigue_hint(
                                          len(self.pages) + 1)})
        fatigue = resp.parsed['fatigue']
        if FATIGUE_LEVELS.index(fatigue) < \
           FATIGUE_LEVELS.index(self.state.fatigue):
            fatigue = self.state.fatigue
        self.state.fatigue = fatigue

        resp = self.gateway.complete('emotion',
                                     {'persona'      : persona,
                                      'satisfaction' : self.state.satisfaction,
                                      'fatigue'      : self.state.fatigue})
        self.state.emotion = resp.parsed['emotion'].split()[0].strip(
            '.,').upper()

        legal = self.legal_actions(clicks)
        resp  = self.gateway.complete(
            'action',
            {'persona'      : persona,
             'page'         : self.state.page,
             'history'      : history,
             'items'        : page_text,
             'satisfaction' : self.state.satisfaction,
             'fatigue'      : self.state.fatigue,
             'emotion'      : self.state.emotion,
             'legal'        : ', '.join(legal)},
            validate=self.__action_validator(legal, item_ids))

        return resp.parsed['action']

    def click(self, item_id):
        """Show an extended description. Returns True if the agent decides
        to watch the item.
        """
        resp = self.gateway.complete(
            'click_detail',
            {'persona' : self.persona_text(),
             'item'    : render_item(self.items[item_id],
                                     caption=self.caption_of(item_id),
                                     review_mode=self.settings.review_mode,
                                     detail=True),
             'item_id' : item_id})
        return resp.parsed['engage'] == 'yes'

    def refine_action(self, tentative):
        """Validate a tentative action with causal questions.

        :returns: An :class:`ActionPlan`
        """

        s       = self.settings
        persona = self.persona_text()
        history = self.history_text()
        probes  = []

        try:
            resp = self.gateway.complete('causal_questions',
                                         {'persona' : persona,
                                          'history' : history,
                                          'action'  : str(tentative)})
            questions = resp.parsed['question']

            for q in questions:
                resp = self.gateway.complete('causal_outcome',
                                             {'persona'  : persona,
                                              'history'  : history,
                                              'action'   : str(tentative),
                                              'question' : q})
                probes.append(CausalProbe(q,
                                          normalise_score(
                                              resp.parsed['score']),
                                          resp.parsed['verdict']))

            if len(probes) == 0 or \
               np.mean([p.score for p in probes]) >= s.causal_threshold:
                return ActionPlan(tentative, tuple(probes), tentative)

            legal = self.legal_actions(allow_click=False)
            lines = ['- {} -> {:.2f}: {}'.format(p.question, p.score,
                                                 p.verdict)
                     for p in probes]
            resp  = self.gateway.complete(
                'causal_action',
                {'persona' : persona,
                 'history' : history,
                 'action'  : str(tentative),
                 'probes'  : '\n'.join(lines),
                 'legal'   : ', '.join(legal)},
                validate=self.__action_validator(legal, []))
            final = resp.parsed['action']

        except (LlmFormatError,
                LlmTransportError,
                ScriptExhaustedError) as e:
            log.debug('[%s] causal refinement failed, keeping %s: %s',
                      self.agent_id, tentative, e)
            final = tentative

        return ActionPlan(tentative, tuple(probes), final)

    def reflect(self, records):
        """Reflect on a list of record texts, storing insights as
        reflection memories. Returns a list of ``(text, cites)`` tuples.
        """

        if len(records) == 0:
            return []

        persona  = self.persona_text()
        numbered = '\n'.join('[{}] {}'.format(i, r)
                             for i, r in enumerate(records))
        resp     = self.gateway.complete('reflection_topics',
                                         {'persona' : persona,
                                          'records' : numbered})
        stored   = []

        for topic in resp.parsed['topic']:
            resp = self.gateway.complete('reflection_insights',
                                         {'persona' : persona,
                                          'records' : numbered,
                                          'topic'   : topic})
            for insight in resp.parsed['insight']:
                text = episodic.reflection_text(insight)
                self.memory.record(text, 'reflection')
                stored.append((text, parse_citations(insight)))

        return stored

    def exit_interview(self):
        resp = self.gateway.complete('exit_interview',
                                     {'persona' : self.persona_text(),
                                      'history' : self.history_text()})
        return Interview(rating=resp.parsed['rating'],
                         opinion=resp.parsed['opinion'],
                         reason=resp.parsed['reason'],
                         raw_text=resp.raw_text)

    # Session

    def run_page(self, item_ids):
        """Perform one turn on a page of items. Returns a tuple containing
        the trace record for the turn, and the final :class:`Action`.
        """

        s      = self.settings
        page   = self.state.page
        steps  = []
        record = PageRecord(page, tuple(item_ids))

        page_text = self.perceive(item_ids)
        steps.append('perceive')

        # retrieval happens in each elicitation round
        steps.append('retrieve')
        decision = self.elicit_watch(item_ids, page_text)
        steps.append('watch')

        verdicts = self.evaluate_items(decision.final)
        record.watched.extend(decision.final)
        record.verdicts.extend(verdicts)
        steps.append('rate')

        clicks = []
        while True:
            tentative = self.select_action(item_ids, page_text, len(clicks))
            if tentative.kind != 'CLICK':
                break
            engaged = self.click(tentative.target)
            clicks.append({'item_id' : tentative.target,
                           'engage'  : engaged})
            if engaged and tentative.target not in record.watched:
                extra = self.evaluate_items([tentative.target])
                record.watched.append(tentative.target)
                record.verdicts.extend(extra)
                verdicts.extend(extra)

        plan = self.refine_action(tentative)
        steps.append('action')

        names    = [self.items[i].title for i in item_ids]
        watched  = [self.items[i].title for i in record.watched]
        ratings  = [v.rating for v in record.verdicts]
        pagetext = episodic.page_text(page, names, watched, ratings,
                                      s.item_type)
        feelings = [episodic.feeling_text(self.items[v.item_id].title,
                                          v.rating, v.feeling)
                    for v in record.verdicts]

        reflections = []
        if s.reflection == 'page':
            reflections = self.reflect(feelings + [pagetext])
            steps.append('reflect')

        self.memory.record(pagetext, 'page_interaction')
        self.pages.append(record)
        steps.append('memory')

        trace = {
            'agent_id'    : self.agent_id,
            'page'        : page,
            'turn'        : len(self.pages),
            'shown'       : list(item_ids),
            'rounds'      : [dataclasses.asdict(r) for r in decision.rounds],
            'k1_used'     : decision.k1_used,
            'k2_used'     : decision.k2_used,
            'watched'     : list(record.watched),
            'verdicts'    : [dataclasses.asdict(v) for v in record.verdicts],
            'clicks'      : clicks,
            'action'      : {'tentative' : dataclasses.asdict(plan.tentative),
                             'probes'    : [dataclasses.asdict(p)
                                            for p in plan.causal_probe],
                             'final'     : dataclasses.asdict(plan.final)},
            'state'       : self.state.snapshot(),
            'reflections' : [{'text' : t, 'cites' : c}
                             for t, c in reflections],
            'steps'       : steps,
        }
        return trace, plan.final

    def run_session(self, recommend, on_turn=None):
        """Browse pages until EXIT or the page cap.

        :arg recommend: Function ``recommend(user_id, page, exclude)``
                        returning a list of item ids
        :arg on_turn:   Optional function called with the number of turns
                        taken so far, after every turn
        :returns:       A dict with keys ``turns``, ``interview``,
                        ``exit_page`` and ``exit_reason``
        """

        s      = self.settings
        shown  = {}
        seen   = set()
        turns  = []
        reason = 'page cap'

        for _ in range(s.page_cap):
            page = self.state.page
            if page not in shown:
                item_ids = list(recommend(self.user_id, page, set(seen)))
                if len(item_ids) == 0:
                    reason = 'catalogue exhausted'
                    break
                shown[page] = item_ids
                seen.update(item_ids)

            trace, action = self.run_page(shown[page])
            turns.append(trace)

            if on_turn is not None:
                on_turn(len(turns))

            if action.kind == 'EXIT':
                reason = 'exit'
                break
            elif action.kind == 'NEXT':     self.state.page += 1
            elif action.kind == 'PREVIOUS': self.state.page -= 1

        exit_page = self.state.page
        if reason == 'catalogue exhausted':
            # the page which could not be filled was never shown
            exit_page = turns[-1]['page'] if len(turns) > 0 else 0
        self.state.exit_reason = reason

        if s.reflection == 'end':
            records = []
            for rec in self.pages:
                records.extend(
                    episodic.feeling_text(self.items[v.item_id].title,
                                          v.rating, v.feeling)
                    for v in rec.verdicts)
            reflections = self.reflect(records)
            if len(turns) > 0:
                turns[-1]['reflections'] = [{'text' : t, 'cites' : c}
                                            for t, c in reflections]

        interview = self.exit_interview()

        return {'turns'       : turns,
                'interview'   : dataclasses.asdict(interview),
                'exit_page'   : exit_page,
                'exit_reason' : reason}

    # Probes used by the evaluation tasks

    def __yes_no(self, tag, item_id):
        item     = self.items[item_id]
        memories = self.memory.self_ask_retrieve(item.describe(),
                                                 self.settings.k1)
        resp     = self.gateway.complete(tag,
                                         {'persona'    : self.persona_text(),
                                          'memories'   : memories.render(),
                                          'item'       : render_item(item),
                                          'item_id'    : item_id,
                                          'item_title' : item.title})
        return resp.parsed['answer'] == 'yes'

    def has_interacted(self, item_id):
        """Ask the agent whether its user has interacted with an item. """
        return self.__yes_no('believability', item_id)

    def accepts(self, item_id):
        """Ask the agent whether it accepts an item as a recommendation. """
        return self.__yes_no('accept_item', item_id)
