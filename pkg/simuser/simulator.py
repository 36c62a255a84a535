#!/usr/bin/env python
#
# simulator.py - Run configuration, agent construction and simulation runs.
#
"""Simulation runs.

A run is configured by a :class:`SessionConfig`, usually loaded from a JSON
file with :func:`load_config`. A :class:`Context` lazily loads and builds
everything a run needs (dataset, time split, knowledge graph, gateway,
recommender, captions, personas) exactly once.

:func:`run_simulation` runs agent sessions on a bounded worker pool and
returns a :class:`SimulationReport`, which :func:`write_run` saves into a
run directory::

    <run_dir>/config.json
    <run_dir>/traces.jsonl
    <run_dir>/interviews.jsonl
    <run_dir>/metrics.json

Every aggregate in ``metrics.json`` can be recomputed from ``traces.jsonl``
with :func:`recompute_report`.
"""


import concurrent.futures as futures
import                       dataclasses
import                       logging
import                       os
import                       re
import                       threading

import os.path as op

import pandas as pd

import simuser.brain        as brain
import simuser.dataset      as ds
import simuser.episodic     as episodic
import simuser.gateway      as gw
import simuser.kg           as kg
import simuser.metrics      as metrics
import simuser.perception   as perception
import simuser.persona      as persona
import simuser.recommenders as recommenders
from simuser.common import (read_json,
                            write_json,
                            write_jsonl,
                            read_jsonl,
                            warn_on_error,
                            WARNING)
from simuser.errors  import ValidationError, EmptyReportError
from simuser.metrics import EngagementMetrics


log = logging.getLogger(__name__)


PATH_KEYS = ('ratings', 'items', 'users_file', 'personality_file', 'script',
             'captions', 'thumbnails', 'personas')
"""Configuration keys which contain file paths. Relative paths are
interpreted relative to the configuration file.
"""


@dataclasses.dataclass
class SessionConfig:
    """All settings of a simulation run. """

    # data
    ratings          : str   = None
    items            : str   = None
    delimiter        : str   = '\t'
    split            : tuple = (0.8, 0.1, 0.1)
    users_file       : str   = None
    personality_file : str   = None

    # LLM
    backend          : str   = 'scripted'
    script           : str   = None
    num_retries      : int   = 3
    embed_dim        : int   = gw.DEFAULT_EMBED_DIM

    # session
    agents           : int   = 100
    items_per_page   : int   = 4
    page_cap         : int   = 20
    seed             : int   = 0
    worker_cap       : int   = 8
    recommender      : str   = 'mf'
    item_type        : str   = 'movies'

    # brain
    k1               : int   = 5
    k2               : int   = 3
    alpha            : float = 0.8
    embed_weight     : float = 0.25
    delta_k          : int   = 2
    r_max            : int   = 3
    path_length      : int   = 3
    max_paths        : int   = 3
    followups        : int   = 2
    causal_threshold : float = 0.5
    reflection       : str   = 'page'
    max_clicks       : int   = 2
    allow_exit       : bool  = True
    use_persona      : bool  = True
    use_kg           : bool  = True
    use_captions     : bool  = True
    review_mode      : str   = 'origin'

    # persona
    personas         : str   = None
    persona_m        : int   = 5
    persona_j        : int   = 3
    persona_rho      : int   = 10
    summary_sample   : int   = 50
    ages             : tuple = persona.DEFAULT_AGES
    occupations      : tuple = persona.DEFAULT_OCCUPATIONS

    # perception
    captions         : str   = None
    thumbnails       : str   = None
    claim_threshold  : float = perception.DEFAULT_THRESHOLD
    max_claims       : int   = perception.DEFAULT_MAX_CLAIMS

    # matrix factorisation
    mf_rank          : int   = 16
    mf_epochs        : int   = 30
    mf_lr            : float = 0.01
    mf_reg           : float = 0.05

    # per-task settings, keyed by task name
    tasks            : dict  = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.split       = tuple(self.split)
        self.ages        = tuple(self.ages)
        self.occupations = tuple(self.occupations)
        if self.items_per_page < 1:
            raise ValidationError('items_per_page must be at least 1')
        if self.page_cap < 1:
            raise ValidationError('page_cap must be at least 1')
        if not (0 <= self.alpha <= 1):
            raise ValidationError('alpha must be in [0, 1]')
        if not (0 <= self.embed_weight <= 1):
            raise ValidationError('embed_weight must be in [0, 1]')
        if self.worker_cap < 1:
            raise ValidationError('worker_cap must be at least 1')
        if self.recommender not in recommenders.STRATEGIES:
            raise ValidationError('Unknown recommender: {}'.format(
                self.recommender))

    def to_dict(self):
        return dataclasses.asdict(self)

    def task_settings(self, task):
        return dict(self.tasks.get(task, {}))

    def brain_settings(self, **overrides):
        settings = brain.BrainSettings(
            k1=self.k1,
            k2=self.k2,
            delta_k=self.delta_k,
            r_max=self.r_max,
            alpha=self.alpha,
            embed_weight=self.embed_weight,
            path_length=self.path_length,
            max_paths=self.max_paths,
            causal_threshold=self.causal_threshold,
            reflection=self.reflection,
            max_clicks=self.max_clicks,
            page_cap=self.page_cap,
            allow_exit=self.allow_exit,
            use_persona=self.use_persona,
            use_kg=self.use_kg,
            use_captions=self.use_captions,
            review_mode=self.review_mode,
            item_type=self.item_type)
        return dataclasses.replace(settings, **overrides)

    def persona_settings(self, **overrides):
        settings = persona.PersonaSettings(
            m=self.persona_m,
            j=self.persona_j,
            rho=self.persona_rho,
            summary_sample=self.summary_sample,
            seed=self.seed,
            vocab=persona.PersonaVocab(self.ages, self.occupations))
        return dataclasses.replace(settings, **overrides)


def load_config(path=None, **overrides):
    """Load a :class:`SessionConfig` from a JSON file. Lines starting with
    ``//`` are comments. Keyword arguments override values from the file.

    :raises ValidationError: If the file contains unknown keys
    """

    values = {}
    if path is not None:
        values = read_json(path)
        if not isinstance(values, dict):
            raise ValidationError('{}: configuration must be a JSON '
                                  'object'.format(path))
        basedir = op.dirname(op.abspath(path))
        for key in PATH_KEYS:
            if values.get(key) is not None:
                values[key] = op.join(basedir, values[key])

    values.update({k : v for k, v in overrides.items() if v is not None})

    known   = {f.name for f in dataclasses.fields(SessionConfig)}
    unknown = sorted(set(values) - known)
    if len(unknown) > 0:
        raise ValidationError('Unknown configuration keys: {}'.format(
            ', '.join(unknown)))

    return SessionConfig(**values)


class Context(object):
    """Everything a run needs, built on first access. Once built, values do
    not change. Call :meth:`finalise` before sharing a Context between
    threads.
    """

    def __init__(self, config, gateway=None):
        """Create a Context.

        :arg config:  :class:`SessionConfig`
        :arg gateway: Optional pre-built :class:`simuser.gateway.Gateway`,
                      used instead of the one described by ``config``
        """
        self.config      = config
        self.__gateway   = gateway
        self.__dataset   = None
        self.__split     = None
        self.__graph     = None
        self.__agg       = None
        self.__rec       = None
        self.__captions  = None
        self.__profiles  = None
        self.__lock      = threading.Lock()

    def finalise(self):
        self.dataset
        self.split
        self.aggregated
        self.graph
        self.gateway
        self.captions
        self.profiles

    @property
    def dataset(self):
        if self.__dataset is None:
            cfg = self.config
            if cfg.ratings is None or cfg.items is None:
                raise ValidationError('ratings and items files must be '
                                      'configured')
            self.__dataset = ds.load_dataset(cfg.ratings, cfg.items,
                                             cfg.delimiter)
        return self.__dataset

    @property
    def items(self):
        return self.dataset.items

    @property
    def split(self):
        if self.__split is None:
            self.__split = ds.time_split(self.dataset, self.config.split)
        return self.__split

    @property
    def train(self):
        return self.split.train

    @property
    def held_out(self):
        """Validation and test interactions. """
        return self.split.validation + self.split.test

    @property
    def aggregated(self):
        if self.__agg is None:
            self.__agg = ds.aggregated_ratings(self.train)
        return self.__agg

    @property
    def graph(self):
        if self.__graph is None:
            self.__graph = kg.build_graph(self.train, self.items)
        return self.__graph

    @property
    def gateway(self):
        if self.__gateway is None:
            cfg = self.config
            self.__gateway = gw.create_gateway(cfg.backend,
                                               cfg.script,
                                               cfg.num_retries,
                                               cfg.embed_dim)
        return self.__gateway

    @property
    def recommender(self):
        if self.__rec is None:
            self.__rec = self.create_recommender(self.config.recommender)
        return self.__rec

    def create_recommender(self, strategy):
        cfg = self.config
        return recommenders.create_recommender(strategy,
                                               self.train,
                                               self.items,
                                               seed=cfg.seed,
                                               rank=cfg.mf_rank,
                                               epochs=cfg.mf_epochs,
                                               learning_rate=cfg.mf_lr,
                                               regularization=cfg.mf_reg)

    @property
    def captions(self):
        """Dict of ``{item_id : Caption}``, empty if captions are off. """
        if self.__captions is None:
            path = self.config.captions
            if path is None or not self.config.use_captions:
                self.__captions = {}
            else:
                self.__captions = perception.load_captions(path)
        return self.__captions

    @property
    def profiles(self):
        """Pre-computed persona profiles, ``{user_id : ProfileResult}``.
        Profiles which are not pre-computed are built on demand by
        :meth:`profile`.
        """
        if self.__profiles is None:
            path = self.config.personas
            if path is None: self.__profiles = {}
            else:            self.__profiles = persona.load_profiles(path)
        return self.__profiles

    def profile(self, user_id, train=None, settings=None):
        """Return the persona profile for a user, building it if needed.
        Profiles built from a custom training set are not cached.
        """
        profiles = self.profiles
        custom   = train is not None or settings is not None

        if not custom:
            with self.__lock:
                if user_id in profiles:
                    return profiles[user_id]

        if train    is None: train    = self.train
        if settings is None: settings = self.config.persona_settings()

        result = persona.build_profile(
            self.gateway.fork('persona:{}'.format(user_id)),
            user_id, train, self.items, settings)

        if not custom:
            with self.__lock:
                result = profiles.setdefault(user_id, result)
        return result

    def select_users(self, n=None):
        """The first n users, in identifier order, who have training
        interactions.
        """
        if n is None:
            n = self.config.agents
        users = sorted({i.user_id for i in self.train})
        return users[:n]


def agent_id(index):
    return 'agent{:04d}'.format(index)


def build_agent(ctx, aid, user_id, settings=None, history=None):
    """Create an agent standing in for a user.

    The agent gets a persona (unless personas are disabled), an episodic
    memory seeded from the user's training history, and a private overlay
    on the base knowledge graph.

    :arg ctx:      :class:`Context`
    :arg aid:      Agent identifier
    :arg user_id:  User identifier
    :arg settings: :class:`simuser.brain.BrainSettings` (default from the
                   context configuration)
    :arg history:  Training interactions to use for this user, instead of
                   the full training history. Used by the history length
                   study.
    """

    cfg = ctx.config
    if settings is None:
        settings = cfg.brain_settings()

    train = None
    if history is None:
        history = ds.user_history(ctx.train, user_id)
    else:
        history = sorted(history, key=ds.Interaction.sort_key)
        train   = [i for i in ctx.train if i.user_id != user_id] + history

    profile = None
    if settings.use_persona:
        profile = ctx.profile(user_id, train=train)

    gateway = ctx.gateway.fork(aid)
    memory  = episodic.EpisodicMemory(gateway, cfg.followups)
    memory.seed_from_history(history, ctx.items)

    return brain.Agent(agent_id=aid,
                       user_id=user_id,
                       gateway=gateway,
                       memory=memory,
                       graph=kg.AgentGraph(ctx.graph),
                       items=ctx.items,
                       persona=None if profile is None else profile.persona,
                       settings=settings,
                       captions=ctx.captions,
                       aggregated=ctx.aggregated,
                       rated=[i.item_id for i in history])


@dataclasses.dataclass(frozen=True)
class PendingAgent:
    """An agent which is built inside the worker that runs it, so that
    construction failures are recorded like session failures.
    """
    agent_id : str
    user_id  : str
    build    : object


def pending_agents(ctx, users=None, settings=None):
    """Create a :class:`PendingAgent` for each user. """
    if users is None:
        users = ctx.select_users()

    def factory(aid, uid):
        return lambda: build_agent(ctx, aid, uid, settings)

    return [PendingAgent(agent_id(i), uid, factory(agent_id(i), uid))
            for i, uid in enumerate(users)]


def page_recommender(recommender, n, exclude=()):
    """Adapt a recommender to the ``recommend(user_id, page, seen)``
    function expected by :meth:`simuser.brain.Agent.run_session`.
    """
    exclude = set(exclude)
    def recommend(user_id, page, seen):
        return recommender.recommend(user_id, page, set(seen) | exclude, n)
    return recommend


def run_agent(agent, recommender, items_per_page, exclude=(), on_turn=None):
    """Run one session, returning the session record. Items the user
    already rated, and items in ``exclude``, are never recommended.
    """
    exclude = set(exclude) | set(getattr(agent, 'rated', ()))
    result  = agent.run_session(
        page_recommender(recommender, items_per_page, exclude), on_turn)
    record = {'agent_id' : agent.agent_id,
              'user_id'  : agent.user_id,
              'status'   : 'completed'}
    record.update(result)
    return record


@dataclasses.dataclass
class SimulationReport:
    config  : dict
    records : list
    metrics : EngagementMetrics = None

    @property
    def failed(self):
        return [r for r in self.records if r['status'] == 'failed']

    @property
    def completed(self):
        return metrics.completed(self.records)

    def metrics_dict(self):
        """The contents of ``metrics.json``. """
        return metrics_document(self.records)


def metrics_document(records):
    """Engagement aggregates plus the per-agent values they are averaged
    from. Aggregates are ``None`` when no agent completed.
    """
    try:
        aggregate = metrics.compute_metrics(records).to_dict()
    except EmptyReportError as e:
        log.warning('%s', e)
        aggregate = None
    per = []
    for r in metrics.completed(records):
        row = {'agent_id' : r['agent_id']}
        row.update(metrics.agent_engagement(r))
        per.append(row)
    return {'metrics'  : aggregate,
            'agents'   : per,
            'failed'   : len(records) - len(per),
            'failures' : [{'agent_id' : r['agent_id'],
                           'error'    : r.get('error')}
                          for r in records
                          if r['status'] == 'failed']}


def run_simulation(agents,
                   config,
                   recommender,
                   workers=None,
                   progress=None,
                   exclude=()):
    """Run a session for every agent on a worker pool.

    A failing agent does not abort the run - it is recorded with
    ``status = "failed"`` and the error message, and left out of the
    engagement metrics. Records are sorted by agent id, so the report does
    not depend on the order in which sessions complete.

    :arg agents:      Sequence of :class:`simuser.brain.Agent` or
                      :class:`PendingAgent` objects
    :arg config:      :class:`SessionConfig`
    :arg recommender: Recommender with a ``recommend`` method
    :arg workers:     Worker cap (default ``config.worker_cap``)
    :arg progress:    Optional :class:`simuser.common.Progress`
    :arg exclude:     Items which are never recommended
    :returns:         :class:`SimulationReport`
    """

    if workers is None:
        workers = config.worker_cap

    def run(agent):
        if isinstance(agent, PendingAgent):
            agent = agent.build()
        return run_agent(agent, recommender, config.items_per_page, exclude)

    records = []

    with futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        jobs = {pool.submit(run, a) : a for a in agents}
        for done, job in enumerate(futures.as_completed(jobs), 1):
            agent = jobs[job]
            try:
                records.append(job.result())
            except Exception as e:
                log.warning('Agent %s failed: %s', agent.agent_id, e)
                log.debug('Agent %s traceback', agent.agent_id,
                          exc_info=True)
                records.append({'agent_id' : agent.agent_id,
                                'user_id'  : agent.user_id,
                                'status'   : 'failed',
                                'error'    : '{}: {}'.format(
                                    type(e).__name__, e)})
            if progress is not None:
                progress.update(done, len(jobs))

    records = sorted(records, key=lambda r: r['agent_id'])
    report  = SimulationReport(config.to_dict(), records)

    try:
        report.metrics = metrics.compute_metrics(records)
    except EmptyReportError as e:
        log.warning('%s', e)

    log.debug('Simulation finished: %i agents, %i failed', len(records),
              len(report.failed))

    return report


def write_run(report, outdir, task_results=None):
    """Save a report into a run directory. Returns the list of files
    written.
    """
    os.makedirs(outdir, exist_ok=True)
    files = {name : op.join(outdir, name) for name in
             ('config.json', 'traces.jsonl', 'interviews.jsonl',
              'metrics.json', 'task_results.json')}

    interviews = [{'agent_id'  : r['agent_id'],
                   'user_id'   : r['user_id'],
                   'interview' : r['interview']}
                  for r in report.completed]

    write_json( files['config.json'],      report.config)
    write_jsonl(files['traces.jsonl'],     report.records)
    write_jsonl(files['interviews.jsonl'], interviews)
    write_json( files['metrics.json'],     report.metrics_dict())

    if task_results is not None:
        write_json(files['task_results.json'], task_results)
    else:
        files.pop('task_results.json')

    return list(files.values())


def simulate(ctx, outdir=None, progress=None):
    """Run a full simulation as configured in ``ctx``, optionally saving
    it to ``outdir``.
    """
    ctx.finalise()
    report = run_simulation(pending_agents(ctx),
                            ctx.config,
                            ctx.recommender,
                            progress=progress)
    if outdir is not None:
        write_run(report, outdir)
    return report


SEED_PATTERN = re.compile(r'^I (?:liked|disliked|felt neutral about) (.*) '
                          r'based on my review score of \d+$')


def scan_leakage(graph, memories, held_out, train, items):
    """Check that no held-out interaction appears in the base knowledge
    graph, or in the seeded episodic memory of the corresponding user.

    Pairs which also occur in the training interactions (repeated ratings)
    are legitimately known, and are not checked.

    :arg graph:    Base :class:`simuser.kg.KnowledgeGraph`
    :arg memories: Dict of ``{user_id : EpisodicMemory}``
    :arg held_out: Validation and test interactions
    :arg train:    Training interactions
    :arg items:    Dict of ``{item_id : Item}``
    :returns:      List of violations, each a dict with keys ``source``,
                   ``user_id`` and ``item_id``.
    """

    known      = {(i.user_id, i.item_id) for i in train}
    pairs      = sorted({(i.user_id, i.item_id) for i in held_out} - known)
    violations = []

    seeded = {}
    for user_id, memory in memories.items():
        titles = set()
        for entry in memory.entries:
            if entry.kind != 'seed_rating':
                continue
            match = SEED_PATTERN.match(entry.text)
            if match is not None:
                titles.add(match.group(1))
        seeded[user_id] = titles

    for user_id, item_id in pairs:
        unode = kg.user_node(user_id)
        inode = kg.item_node(item_id)
        if graph.has_node(unode) and inode in graph.neighbours(unode):
            violations.append({'source'  : 'kg',
                               'user_id' : user_id,
                               'item_id' : item_id})
        if items[item_id].title in seeded.get(user_id, ()):
            violations.append({'source'  : 'memory',
                               'user_id' : user_id,
                               'item_id' : item_id})

    if len(violations) > 0:
        log.warning('Found %i leaked held-out interactions',
                    len(violations))
    return violations


def check_leakage(ctx, users=None):
    """Run :func:`scan_leakage` on the context's base graph, and on freshly
    seeded memories for the given users.
    """
    if users is None:
        users = ctx.select_users()
    memories = {}
    for uid in users:
        memory = episodic.EpisodicMemory(ctx.gateway, 0)
        memory.seed_from_history(ds.user_history(ctx.train, uid), ctx.items)
        memories[uid] = memory
    return scan_leakage(ctx.graph, memories, ctx.held_out, ctx.train,
                        ctx.items)


def _compare(stored, recomputed, path, mismatches, tolerance):
    if isinstance(stored, dict) and isinstance(recomputed, dict):
        for key in sorted(set(stored) | set(recomputed)):
            _compare(stored.get(key), recomputed.get(key),
                     '{}.{}'.format(path, key), mismatches, tolerance)
    elif isinstance(stored, list) and isinstance(recomputed, list) and \
         len(stored) == len(recomputed):
        for i, (s, r) in enumerate(zip(stored, recomputed)):
            _compare(s, r, '{}[{}]'.format(path, i), mismatches, tolerance)
    elif isinstance(stored,     (int, float)) and \
         isinstance(recomputed, (int, float)) and \
         not isinstance(stored, bool):
        if abs(stored - recomputed) > tolerance:
            mismatches.append(path)
    elif stored != recomputed:
        mismatches.append(path)


def compare_documents(stored, recomputed, tolerance=1e-9):
    """Return the paths of all values which differ between two JSON
    documents (numbers within tolerance are considered equal).
    """
    mismatches = []
    _compare(stored, recomputed, '', mismatches, tolerance)
    return [m.lstrip('.') for m in mismatches]


def recompute_report(run_dir):
    """Recompute ``metrics.json`` and any task aggregates from the raw
    records in a run directory.

    :returns: A tuple containing the recomputed metrics document, the
              recomputed task results (or ``None``), and a list of
              mismatches against the stored files.
    """

    # imported here, as tasks imports this module
    import simuser.tasks as tasks

    records    = read_jsonl(op.join(run_dir, 'traces.jsonl'))
    recomputed = metrics_document(records)
    mismatches = []

    mfile = op.join(run_dir, 'metrics.json')
    if op.exists(mfile):
        mismatches.extend('metrics.json:' + m for m in
                          compare_documents(read_json(mfile), recomputed))

    results = None
    tfile   = op.join(run_dir, 'task_results.json')
    if op.exists(tfile):
        stored  = read_json(tfile)
        results = {name : tasks.recompute(result)
                   for name, result in stored.items()}
        mismatches.extend('task_results.json:' + m for m in
                          compare_documents(stored, results))

    for m in mismatches:
        log.warning('Stored value differs from recomputation: %s', m)

    return recomputed, results, mismatches


def report_table(document):
    """Format the per-agent metrics of a metrics document as a text
    table, followed by the averages.
    """
    frame = pd.DataFrame(document['agents'])
    lines = []
    if len(frame) > 0:
        lines.append(frame.to_string(index=False))
    if document['metrics'] is not None:
        summary = pd.Series(document['metrics'])
        lines.append(summary.to_string())
    lines.append('failed {}'.format(document['failed']))
    return '\n\n'.join(lines)


@warn_on_error('Could not write plot data', WARNING)
def write_plot_data(document, path):
    """Save the per-agent metrics as a CSV file for plotting. """
    pd.DataFrame(document['agents']).to_csv(path, index=False)
