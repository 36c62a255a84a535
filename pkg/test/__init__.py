#!/usr/bin/env python
#
"""Utility functions used for testing. """


import contextlib
import os
import os.path as op
import re
import sys

# py3
try:
    from io import StringIO
    from unittest import mock
except ImportError:
    from StringIO import StringIO
    import mock

import simuser.dataset   as ds
import simuser.gateway   as gw
import simuser.persona   as persona
import simuser.simulator as simulator
from simuser.common import write_json


DATADIR     = op.join(op.dirname(op.abspath(__file__)), 'data')
RATINGS     = op.join(DATADIR, 'ratings.tsv')
ITEMS       = op.join(DATADIR, 'items.tsv')
# items.tsv plus items 21-40, which nobody rated
CATALOGUE   = op.join(DATADIR, 'catalogue.tsv')
USERS       = op.join(DATADIR, 'users.tsv')
PERSONALITY = op.join(DATADIR, 'personality.tsv')


PERSONA_LINE = ('age=25; occupation=writer; openness=3; '
                'conscientiousness=2; extraversion=1; agreeableness=2; '
                'neuroticism=3')


@contextlib.contextmanager
def indir(dir):
    """Context manager which temporarily changes into dir."""
    prevdir = os.getcwd()
    os.chdir(dir)
    try:
        yield
    finally:
        os.chdir(prevdir)


class CaptureStdout(object):
    """Context manager which captures stdout and stderr. """

    def __init__(self):
        self.reset()

    def reset(self):
        self.__mock_stdout = StringIO('')
        self.__mock_stderr = StringIO('')
        self.__mock_stdout.mode = 'w'
        self.__mock_stderr.mode = 'w'
        return self

    def __enter__(self):
        self.__real_stdout = sys.stdout
        self.__real_stderr = sys.stderr
        sys.stdout = self.__mock_stdout
        sys.stderr = self.__mock_stderr
        return self

    def __exit__(self, *args, **kwargs):
        sys.stdout = self.__real_stdout
        sys.stderr = self.__real_stderr
        return False

    @property
    def stdout(self):
        self.__mock_stdout.seek(0)
        return self.__mock_stdout.read()

    @property
    def stderr(self):
        self.__mock_stderr.seek(0)
        return self.__mock_stderr.read()


def strip_ansi_escape_sequences(text):
    """Does what function name says it does. """
    return re.sub(r'\x1b\[[0-9;]*m', '', text)


def item(item_id, title=None, genres=('Drama',), **kwargs):
    """Create a dataset Item with sensible defaults. """
    if title is None:
        title = 'Item {}'.format(item_id)
    return ds.Item(str(item_id), title, tuple(genres), **kwargs)


def ixn(user_id, item_id, rating, timestamp):
    return ds.Interaction(str(user_id), str(item_id), rating, timestamp)


def fixture_dataset():
    """The 100 row fixture - 5 users each rating 20 items, in time order
    item by item. The time split puts items 1-16 in train, 17-18 in
    validation and 19-20 in test.
    """
    return ds.load_dataset(RATINGS, ITEMS)


def rule(tag, *responses, **kwargs):
    """Create a script rule dict. """
    d = {'tag' : tag, 'responses' : list(responses)}
    d.update(kwargs)
    return d


def scripted(*rules, embed_dim=64):
    """Create a Gateway around a ScriptedBackend with the given rules. """
    return gw.Gateway(gw.ScriptedBackend(list(rules)),
                      gw.HashEmbedder(embed_dim))


def persona_rules(m=5, line=PERSONA_LINE):
    """Repeating rules which let persona matching run for any user. """
    return [
        rule('persona_summary', 'SUMMARY: Enjoys tense, well made films.',
             repeat=True),
        rule('persona_candidates',
             '\n'.join('PERSONA: {}'.format(line) for _ in range(m)),
             repeat=True),
        rule('persona_rate_subset', 'RATING: 3', repeat=True),
    ]


def session_rules(actions=('ACTION: NEXT',),
                  watch='WATCH: #1\nSKIP: #2\nCONTRADICTION: none',
                  rating='RATING: 4\nFEELING: Enjoyable and well paced.',
                  opinion=4):
    """Repeating rules which let an agent browse any number of pages. """
    return [
        rule('self_ask', 'QUESTION: Which films did I enjoy?', repeat=True),
        rule('watch_decision', watch, repeat=True),
        rule('rate_item', rating, repeat=True),
        rule('satisfaction', 'SATISFACTION: 3', repeat=True),
        rule('fatigue', 'FATIGUE: low', repeat=True),
        rule('emotion', 'EMOTION: curious', repeat=True),
        rule('action', *actions, repeat=True),
        rule('click_detail', 'ENGAGE: no', repeat=True),
        rule('causal_questions',
             'QUESTION: What would happen if I stopped browsing now?',
             repeat=True),
        rule('causal_outcome', 'SCORE: 0.8\nVERDICT: Consistent.',
             repeat=True),
        rule('reflection_topics', 'TOPIC: what I enjoy', repeat=True),
        rule('reflection_insights',
             'INSIGHT: I enjoy tense films [cites: 0]', repeat=True),
        rule('exit_interview',
             'RATING: 7\nOPINION: {}\nREASON: Decent picks.'.format(opinion),
             repeat=True),
        rule('believability', 'ANSWER: yes', repeat=True),
        rule('accept_item', 'ANSWER: yes', repeat=True),
    ]


def write_script(path, rules):
    write_json(path, {'rules' : list(rules)})
    return path


def write_config(path, script=None, **kwargs):
    """Write a run configuration for the fixture dataset. """
    config = {'ratings'     : RATINGS,
              'items'       : CATALOGUE,
              'agents'      : 2,
              'page_cap'    : 3,
              'recommender' : 'pop',
              'worker_cap'  : 2,
              'seed'        : 7}
    if script is not None:
        config['script'] = script
    config.update(kwargs)
    write_json(path, config)
    return path


def make_context(rules, **kwargs):
    """Create a simulator Context on the fixture dataset, with a scripted
    gateway.
    """
    values = {'ratings'     : RATINGS,
              'items'       : CATALOGUE,
              'agents'      : 2,
              'page_cap'    : 3,
              'recommender' : 'pop',
              'worker_cap'  : 2,
              'seed'        : 7}
    values.update(kwargs)
    config = simulator.SessionConfig(**values)
    return simulator.Context(config, scripted(*rules))


def simple_persona():
    return persona.parse_persona(PERSONA_LINE)
