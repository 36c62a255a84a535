#!/usr/bin/env python
#
# persona.py - Persona matching and numeric user traits.
#
"""Persona matching.

Each agent is given a :class:`Persona` inferred from the interaction
history of the real user it stands in for:

 1. The user's tastes are summarised by the LLM from a sample of the items
    they liked and disliked (:func:`summarize_tastes`).
 2. The LLM proposes ``m`` candidate personas (:func:`generate_candidates`).
 3. Each candidate is scored by asking the LLM, in the role of the
    candidate, to rate random subsets of the user's own interactions and of
    other users' interactions. The score is the sum of the own-subset
    ratings minus the sum of the other-subset ratings
    (:func:`self_consistency_score`), and the candidate with the highest
    score wins (:func:`match_persona`).

The persona is completed with traits computed directly from the data - a
pickiness level derived from the user's average rating, and three habit
measures (:func:`derive_habits`).
"""


import concurrent.futures as futures
import                       dataclasses
import                       logging
import                       re

import numpy as np

import simuser.dataset as ds
from simuser.common import stable_seed, write_jsonl, read_jsonl
from simuser.errors import (ValidationError,
                            LlmFormatError,
                            InsufficientDataError,
                            UndefinedAggregateError)


log = logging.getLogger(__name__)


DEFAULT_AGES = (18, 25, 35, 45, 50, 56)
"""Default age vocabulary (MovieLens age groups). """


DEFAULT_OCCUPATIONS = ('academic/educator',
                       'artist',
                       'clerical/admin',
                       'college/grad student',
                       'customer service',
                       'doctor/health care',
                       'executive/managerial',
                       'farmer',
                       'homemaker',
                       'K-12 student',
                       'lawyer',
                       'programmer',
                       'retired',
                       'sales/marketing',
                       'scientist',
                       'self-employed',
                       'technician/engineer',
                       'tradesman/craftsman',
                       'unemployed',
                       'writer',
                       'other')
"""Default occupation vocabulary (MovieLens occupations). """


TRAITS = ('openness',
          'conscientiousness',
          'extraversion',
          'agreeableness',
          'neuroticism')
"""Big Five personality facets, in the order they are stored. """


PICKINESS_LEVELS = ('not_picky', 'moderately_picky', 'extremely_picky')


TRAIT_LEVELS = {1 : 'low', 2 : 'moderate', 3 : 'high'}


@dataclasses.dataclass(frozen=True)
class PersonaVocab:
    """Values which generated personas may take. """
    ages        : tuple = DEFAULT_AGES
    occupations : tuple = DEFAULT_OCCUPATIONS

    def __post_init__(self):
        if len(self.ages) == 0 or len(self.occupations) == 0:
            raise ValidationError('Persona vocabularies must not be empty')


@dataclasses.dataclass(frozen=True)
class PersonaSettings:
    """Parameters of the persona matching phase. """
    m              : int          = 5
    j              : int          = 3
    rho            : int          = 10
    summary_sample : int          = 50
    seed           : int          = 0
    vocab          : PersonaVocab = PersonaVocab()


@dataclasses.dataclass(frozen=True)
class HabitTraits:
    engagement : int
    conformity : float
    variety    : int


@dataclasses.dataclass(frozen=True)
class Persona:
    """A synthetic user profile. """
    age           : int
    occupation    : str
    big_five      : tuple
    pickiness     : str         = None
    taste_summary : str         = None
    habits        : HabitTraits = None

    def __post_init__(self):
        if len(self.big_five) != len(TRAITS):
            raise ValidationError('Persona needs {} personality facets'.format(
                len(TRAITS)))
        for value in self.big_five:
            if value not in (1, 2, 3):
                raise ValidationError('Personality facet out of range 1-3: '
                                      '{}'.format(value))
        if self.pickiness is not None and \
           self.pickiness not in PICKINESS_LEVELS:
            raise ValidationError('Unknown pickiness level: {}'.format(
                self.pickiness))

    def line(self):
        """Persona in the ``key=value; ...`` format used in prompts. """
        parts = ['age={}'.format(self.age),
                 'occupation={}'.format(self.occupation)]
        parts.extend('{}={}'.format(t, v)
                     for t, v in zip(TRAITS, self.big_five))
        return '; '.join(parts)

    def describe(self, item_type='movies', use_persona=True):
        """Render the persona as a second-person prompt preamble. If
        use_persona is False, only a generic description is returned.
        """

        if not use_persona:
            return 'You are a user of a {} recommender system.'.format(
                item_type)

        traits = ', '.join('{} {}'.format(TRAIT_LEVELS[v], t)
                           for t, v in zip(TRAITS, self.big_five))
        lines  = ['You are {} years old and work as: {}.'.format(
                      self.age, self.occupation),
                  'Your personality: {}.'.format(traits)]

        if self.pickiness is not None:
            lines.append('You are {} about {}.'.format(
                self.pickiness.replace('_', ' '), item_type))
        if self.habits is not None:
            lines.append(
                'You have rated {} {}, across {} genres, and your ratings '
                'deviate from the average rating by {:.2f} (squared) on '
                'average.'.format(self.habits.engagement, item_type,
                                  self.habits.variety,
                                  self.habits.conformity))
        if self.taste_summary:
            lines.append('Your tastes: {}'.format(self.taste_summary))
        return '\n'.join(lines)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d      = dict(d)
        habits = d.pop('habits', None)
        if habits is not None:
            habits = HabitTraits(**habits)
        d['big_five'] = tuple(d['big_five'])
        return cls(habits=habits, **d)


@dataclasses.dataclass(frozen=True)
class ConsistencyScore:
    persona_index : int
    score         : float
    per_subset    : tuple


@dataclasses.dataclass(frozen=True)
class ProfileResult:
    """Outcome of persona matching for one user. """
    user_id    : str
    persona    : Persona
    candidates : tuple
    scores     : tuple

    def to_dict(self):
        return {
            'user_id'    : self.user_id,
            'persona'    : self.persona.to_dict(),
            'candidates' : [c.to_dict() for c in self.candidates],
            'scores'     : [dataclasses.asdict(s) for s in self.scores],
        }

    @classmethod
    def from_dict(cls, d):
        scores = [ConsistencyScore(s['persona_index'],
                                   s['score'],
                                   tuple(tuple(p) for p in s['per_subset']))
                  for s in d.get('scores', [])]
        return cls(user_id=d['user_id'],
                   persona=Persona.from_dict(d['persona']),
                   candidates=tuple(Persona.from_dict(c)
                                    for c in d.get('candidates', [])),
                   scores=tuple(scores))


def liked_disliked(history, items):
    """Split a history into liked (rating >= 4) and disliked (rating < 3)
    items. Items rated 3 are in neither list.
    """
    liked    = [items[i.item_id] for i in history
                if i.rating >= ds.LIKE_THRESHOLD]
    disliked = [items[i.item_id] for i in history
                if i.rating < 3]
    return liked, disliked


def _item_lines(items):
    if len(items) == 0:
        return '(none)'
    return '\n'.join(' - {}'.format(i.describe()) for i in items)


def summarize_tastes(gateway, history, items, sample_size=50, seed=0):
    """Ask the LLM for a short summary of a user's tastes.

    :arg gateway:     :class:`simuser.gateway.Gateway`
    :arg history:     Interactions of the user
    :arg items:       Dict of ``{item_id : Item}``
    :arg sample_size: Maximum number of interactions to show
    :arg seed:        Seed for the sample
    """

    if len(history) == 0:
        raise InsufficientDataError('Cannot summarise an empty history')

    history = sorted(history, key=ds.Interaction.sort_key)
    nsample = min(sample_size, len(history))
    rng     = np.random.default_rng(
        stable_seed(seed, history[0].user_id, 'summary'))
    idxs    = sorted(rng.choice(len(history), nsample, replace=False))
    sample  = [history[i] for i in idxs]

    liked, disliked = liked_disliked(sample, items)

    resp = gateway.complete('persona_summary',
                            {'liked'    : _item_lines(liked),
                             'disliked' : _item_lines(disliked)})
    return resp.parsed['summary']


def _persona_fields(line):
    """Split a ``key=value; key=value`` persona line into a dict. Raises a
    :exc:`LlmFormatError` if the line is structurally invalid.
    """
    fields = {}
    for part in re.split(r'[;\n]', line):
        if '=' not in part:
            continue
        key, value = part.split('=', 1)
        fields[key.strip().lower()] = value.strip().strip('"\'.,')

    missing = [k for k in ('age', 'occupation') + TRAITS if k not in fields]
    if len(missing) > 0:
        raise LlmFormatError('Persona is missing {}: {}'.format(
            ', '.join(missing), line))
    for key in ('age',) + TRAITS:
        if re.fullmatch(r'-?\d+', fields[key]) is None:
            raise LlmFormatError('Persona {} is not an integer: {}'.format(
                key, fields[key]))
    return fields


def parse_persona(line, vocab=None):
    """Parse and validate one persona line. Structural problems raise a
    :exc:`LlmFormatError`; values outside of the vocabularies or facet
    range raise a :exc:`ValidationError`.
    """

    if vocab is None:
        vocab = PersonaVocab()

    fields = _persona_fields(line)
    age    = int(fields['age'])

    if age not in vocab.ages:
        raise ValidationError('Age {} is not one of {}'.format(
            age, vocab.ages))

    occupation = None
    for occ in vocab.occupations:
        if occ.lower() == fields['occupation'].lower():
            occupation = occ
            break
    if occupation is None:
        raise ValidationError('Unknown occupation: {}'.format(
            fields['occupation']))

    big_five = tuple(int(fields[t]) for t in TRAITS)
    return Persona(age=age, occupation=occupation, big_five=big_five)


def generate_candidates(gateway,
                        summary,
                        history,
                        items,
                        m=5,
                        vocab=None):
    """Ask the LLM for m candidate personas for a user. """

    if vocab is None:
        vocab = PersonaVocab()

    def validate(parsed):
        lines = parsed['persona']
        if len(lines) < m:
            raise LlmFormatError('Expected {} personas, got {}'.format(
                m, len(lines)))
        for line in lines[:m]:
            _persona_fields(line)

    history = sorted(history, key=ds.Interaction.sort_key)
    shown   = ['{} - rated {}'.format(items[i.item_id].describe(), i.rating)
               for i in history[-20:]]

    resp = gateway.complete(
        'persona_candidates',
        {'summary'      : summary,
         'history'      : '\n'.join(shown),
         'm'            : m,
         'ages'         : ', '.join(str(a) for a in vocab.ages),
         'occupations'  : ', '.join(vocab.occupations),
         'traits'       : ', '.join(TRAITS),
         'trait_format' : '; '.join('{}=<1-3>'.format(t) for t in TRAITS)},
        validate=validate)

    return [parse_persona(line, vocab) for line in resp.parsed['persona'][:m]]


def self_consistency_score(gateway,
                           persona,
                           own,
                           others,
                           items,
                           j=3,
                           rho=10,
                           seed=0,
                           persona_index=0):
    """Score how well persona explains a user's interactions.

    In each of j rounds, a subset of rho interactions is sampled from the
    user's own history, and another from the pool of other users'
    interactions. The LLM, playing persona, rates each subset as a whole
    from 1 to 5. All candidates of one user are scored on the same subsets.

    :returns: A :class:`ConsistencyScore`
    """

    if len(own) < rho:
        raise InsufficientDataError('User has {} interactions, {} needed '
                                    'for scoring'.format(len(own), rho))
    if len(others) < rho:
        raise InsufficientDataError('Only {} interactions by other users, '
                                    '{} needed'.format(len(others), rho))

    own     = sorted(own,    key=ds.Interaction.sort_key)
    others  = sorted(others, key=ds.Interaction.sort_key)
    user_id = own[0].user_id
    rng     = np.random.default_rng(stable_seed(seed, user_id, 'subsets'))
    ptext   = persona.describe()
    rounds  = []

    for _ in range(j):
        own_sub   = [own[i]    for i in rng.choice(len(own),    rho, False)]
        other_sub = [others[i] for i in rng.choice(len(others), rho, False)]
        ratings   = []
        for kind, subset in (('own', own_sub), ('other', other_sub)):
            resp = gateway.complete(
                'persona_rate_subset',
                {'persona'     : ptext,
                 'items'       : _item_lines([items[i.item_id]
                                              for i in subset]),
                 'subset_kind' : kind,
                 'candidate'   : persona_index})
            ratings.append(resp.parsed['rating'])
        rounds.append(tuple(ratings))

    score = sum(r[0] for r in rounds) - sum(r[1] for r in rounds)
    return ConsistencyScore(persona_index, score, tuple(rounds))


def select_best(scores):
    """Return the index of the highest score, preferring the lowest index
    when several candidates share it.
    """
    if len(scores) == 0:
        raise ValidationError('No candidates to select from')
    values = [s.score if isinstance(s, ConsistencyScore) else s
              for s in scores]
    return int(np.argmax(values))


def match_persona(gateway,
                  candidates,
                  own,
                  others,
                  items,
                  j=3,
                  rho=10,
                  seed=0):
    """Score every candidate, and return the best one along with all
    scores, as a ``(Persona, [ConsistencyScore])`` tuple.
    """
    if len(candidates) == 0:
        raise ValidationError('At least one candidate persona is required')

    scores = [self_consistency_score(gateway, p, own, others, items,
                                     j, rho, seed, i)
              for i, p in enumerate(candidates)]
    best   = select_best(scores)

    log.debug('Persona scores for %s: %s (selected %i)',
              own[0].user_id, [s.score for s in scores], best)
    return candidates[best], scores


def pickiness_level(rbar):
    """Map an average rating onto a pickiness level. """
    if rbar is None or not np.isfinite(rbar) or rbar < 1 or rbar > 5:
        raise ValidationError('Average rating out of range 1-5: {}'.format(
            rbar))
    if rbar >= 4.5: return 'not_picky'
    if rbar >= 3.5: return 'moderately_picky'
    return 'extremely_picky'


def derive_habits(history, items, aggregated):
    """Compute the habit traits of a user.

    :arg history:    Interactions of the user
    :arg items:      Dict of ``{item_id : Item}``
    :arg aggregated: Dict of ``{item_id : R_i}`` computed over the training
                     interactions of all users

    Repeated ratings of one item count once, with the most recent rating.
    """

    latest = ds.latest_interactions(history)

    if len(latest) == 0:
        return HabitTraits(0, 0.0, 0)

    deviations = []
    genres     = set()

    for ixn in latest:
        if ixn.item_id not in aggregated:
            raise UndefinedAggregateError('No aggregated rating for item '
                                          '{}'.format(ixn.item_id))
        deviations.append((ixn.rating - aggregated[ixn.item_id]) ** 2)

        item = items.get(ixn.item_id)
        if item is None or len(item.genres) == 0:
            raise ValidationError('Item {} has no genres'.format(ixn.item_id))
        genres.update(item.genres)

    return HabitTraits(engagement=len(latest),
                       conformity=float(np.mean(deviations)),
                       variety=len(genres))


def build_profile(gateway, user_id, train, items, settings=None):
    """Run persona matching end to end for one user.

    :arg gateway:  :class:`simuser.gateway.Gateway`
    :arg user_id:  User to build a profile for
    :arg train:    Training interactions of all users
    :arg items:    Dict of ``{item_id : Item}``
    :arg settings: :class:`PersonaSettings`
    :returns:      A :class:`ProfileResult`
    """

    if settings is None:
        settings = PersonaSettings()

    history = ds.user_history(train, user_id)
    others  = [i for i in train if i.user_id != user_id]

    summary    = summarize_tastes(gateway, history, items,
                                  settings.summary_sample, settings.seed)
    candidates = generate_candidates(gateway, summary, history, items,
                                     settings.m, settings.vocab)
    best, scores = match_persona(gateway, candidates, history, others, items,
                                 settings.j, settings.rho, settings.seed)

    persona = dataclasses.replace(
        best,
        pickiness=pickiness_level(ds.user_average_rating(history)),
        taste_summary=summary,
        habits=derive_habits(history, items, ds.aggregated_ratings(train)))

    return ProfileResult(user_id, persona, tuple(candidates), tuple(scores))


def match_personas(gateway,
                   users,
                   train,
                   items,
                   settings=None,
                   workers=1,
                   outfile=None,
                   progress=None):
    """Run :func:`build_profile` for several users on a worker pool.

    Users whose profile cannot be built are logged and left out.

    :returns: Dict of ``{user_id : ProfileResult}``, ordered by user id.
    """

    results = {}
    users   = sorted(users)

    def build(user_id):
        return build_profile(gateway.fork('persona:{}'.format(user_id)),
                             user_id, train, items, settings)

    with futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        jobs = {pool.submit(build, u) : u for u in users}
        for done, job in enumerate(futures.as_completed(jobs), 1):
            user_id = jobs[job]
            try:
                results[user_id] = job.result()
            except Exception as e:
                log.warning('Could not build persona for %s: %s', user_id, e)
                log.debug('Persona failure for %s', user_id, exc_info=True)
            if progress is not None:
                progress.update(done, len(users))

    results = {u : results[u] for u in users if u in results}

    if outfile is not None:
        write_jsonl(outfile, [r.to_dict() for r in results.values()])

    return results


def load_profiles(path):
    """Load profiles written by :func:`match_personas`. """
    return {r['user_id'] : ProfileResult.from_dict(r)
            for r in read_jsonl(path)}


def normalised_big_five(persona):
    """Personality facets mapped from 1-3 onto [0, 1]. """
    return (np.asarray(persona.big_five, dtype=float) - 1) / 2
