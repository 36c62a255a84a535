#!/usr/bin/env python
#
# test_gateway.py -
#


import threading

import numpy as np
import pytest

# py3
try:
    from unittest import mock
# py2
except ImportError:
    import mock

import simuser.gateway as gw
import simuser.prompts as prompts
from simuser.common import tempdir
from simuser.errors import (LlmFormatError,
                            LlmTransportError,
                            ScriptExhaustedError,
                            ValidationError)

from . import rule, scripted, write_script


def test_probe():
    gateway = scripted(rule('probe', 'REPLY: hello there'))
    resp    = gw.probe(gateway)
    assert resp.parsed     == {'reply' : 'hello there'}
    assert resp.backend_id == 'scripted'
    assert resp.attempt    == 1


def test_retry_once_with_instruction():
    gateway = scripted(rule('rate_item', 'I liked it a lot',
                                         'RATING: 4\nFEELING: good'))
    backend = gateway.backend
    resp    = gateway.complete('rate_item', {'persona'  : 'p',
                                             'memories' : 'm',
                                             'paths'    : 'x',
                                             'item'     : 'i'})
    assert resp.attempt == 2
    assert resp.parsed  == {'rating' : 4, 'feeling' : 'good'}

    calls = backend.calls
    assert len(calls) == 2
    assert not calls[0][2].endswith(prompts.RETRY_INSTRUCTION)
    assert calls[1][2].endswith('\n\n' + prompts.RETRY_INSTRUCTION)
    assert calls[1][2].startswith(calls[0][2])


def test_retry_on_fractional_rating():
    gateway = scripted(rule('rate_item', 'RATING: 4.5\nFEELING: good',
                                         'RATING: 4\nFEELING: good'))
    resp    = gateway.complete('rate_item', {'persona'  : 'p',
                                             'memories' : 'm',
                                             'paths'    : 'x',
                                             'item'     : 'i'})
    assert resp.attempt == 2
    assert resp.parsed  == {'rating' : 4, 'feeling' : 'good'}


def test_fail_after_retry():
    gateway = scripted(rule('rate_item', 'RATING: 9\nFEELING: x',
                                         'RATING: 0\nFEELING: x',
                                         'RATING: 3\nFEELING: x'))
    bindings = {'persona' : 'p', 'memories' : 'm', 'paths' : 'x',
                'item' : 'i'}
    with pytest.raises(LlmFormatError) as e:
        gateway.complete('rate_item', bindings)
    assert e.value.tag      == 'rate_item'
    assert e.value.raw_text == 'RATING: 0\nFEELING: x'
    assert len(gateway.backend.calls) == 2


def test_validator():

    gateway = scripted(rule('genre_classify', 'GENRE: Drama, Space opera',
                                              'GENRE: Drama'))
    bindings = {'genres' : 'Drama, Comedy', 'title' : 't'}

    def keep_known(parsed):
        return {'genre' : [g for g in parsed['genre']
                           if g in ('Drama', 'Comedy')]}

    resp = gateway.complete('genre_classify', bindings, keep_known)
    assert resp.parsed == {'genre' : ['Drama']}
    assert resp.attempt == 1

    def reject_unknown(parsed):
        if any(g not in ('Drama', 'Comedy') for g in parsed['genre']):
            raise ValidationError('unknown genre')

    gateway.backend.reset()
    resp = gateway.complete('genre_classify', bindings, reject_unknown)
    assert resp.parsed  == {'genre' : ['Drama']}
    assert resp.attempt == 2


def test_script_exhausted():
    gateway = scripted(rule('probe', 'REPLY: one'))
    gw.probe(gateway)
    with pytest.raises(ScriptExhaustedError):
        gw.probe(gateway)
    with pytest.raises(ScriptExhaustedError):
        gateway.complete('emotion', {'persona' : 'p', 'satisfaction' : 3,
                                     'fatigue' : 'low'})


def test_script_repeat_and_specificity():
    gateway = scripted(
        rule('probe', 'REPLY: a', 'REPLY: b', repeat=True),
        rule('probe', 'REPLY: special', match={'message' : 'secret'}))

    replies = [gw.probe(gateway).parsed['reply'] for _ in range(3)]
    assert replies == ['a', 'b', 'a']

    # the more specific rule wins until it runs out
    assert gw.probe(gateway, 'the secret').parsed['reply'] == 'special'
    assert gw.probe(gateway, 'the secret').parsed['reply'] == 'b'


def test_script_match_prompt():
    gateway = scripted(rule('probe', 'REPLY: generic', repeat=True),
                       rule('probe', 'REPLY: greeting', repeat=True,
                            match={'prompt' : r'short greeting\. Hi'}))
    assert gw.probe(gateway, 'Hi').parsed['reply']  == 'greeting'
    assert gw.probe(gateway, 'Bye').parsed['reply'] == 'generic'


def test_script_per_consumer_cursors():
    gateway = scripted(rule('probe', 'REPLY: first', 'REPLY: second'))
    a       = gateway.fork('agent0000')
    b       = gateway.fork('agent0001')

    assert gw.probe(a).parsed['reply'] == 'first'
    assert gw.probe(a).parsed['reply'] == 'second'
    assert gw.probe(b).parsed['reply'] == 'first'

    consumers = [c[0] for c in gateway.backend.calls]
    assert consumers == ['agent0000', 'agent0000', 'agent0001']


def test_script_consumer_binding():
    gateway = scripted(rule('probe', 'REPLY: other', repeat=True),
                       rule('probe', 'REPLY: mine', repeat=True,
                            match={'agent_id' : '^agent0001$'}))
    assert gw.probe(gateway.fork('agent0000')).parsed['reply'] == 'other'
    assert gw.probe(gateway.fork('agent0001')).parsed['reply'] == 'mine'


def test_script_validation():
    with pytest.raises(ValidationError):
        gw.ScriptedBackend([{'tag' : 'probe', 'responses' : []}])
    with pytest.raises(ValidationError):
        gw.ScriptedBackend([{'tag'       : 'probe',
                             'responses' : ['REPLY: x'],
                             'match'     : {'message' : '('}}])


def test_script_from_file():
    with tempdir():
        write_script('script.json', [rule('probe', 'REPLY: from file')])
        gateway = gw.create_gateway('scripted', 'script.json', environ={})
        assert gw.probe(gateway).parsed['reply'] == 'from file'


def test_create_gateway_errors():
    with pytest.raises(ValidationError):
        gw.create_gateway('scripted', None, environ={})
    with pytest.raises(ValidationError):
        gw.create_gateway('http', environ={})
    with pytest.raises(ValidationError):
        gw.create_gateway('carrier-pigeon', environ={})


def test_http_settings():
    env = {'LLM_ENDPOINT'    : 'http://localhost:1234/v1/chat',
           'LLM_MODEL'       : 'model',
           'LLM_TEMPERATURE' : '0.5'}
    settings = gw.http_settings(env)
    assert settings['endpoint']    == env['LLM_ENDPOINT']
    assert settings['temperature'] == 0.5
    assert settings['api_key']     is None

    with pytest.raises(ValidationError):
        gw.http_settings({'LLM_TEMPERATURE' : 'hot'})


def test_http_backend_retries_transport_errors():
    env     = {'LLM_ENDPOINT' : 'http://localhost:1/v1/chat',
               'LLM_MODEL'    : 'm'}
    gateway = gw.create_gateway('http', num_retries=3, environ=env)
    ncalls  = [0]

    def post(*args, **kwargs):
        ncalls[0] += 1
        raise LlmTransportError('unreachable')

    with mock.patch('simuser.gateway._post_json', side_effect=post):
        with pytest.raises(LlmTransportError):
            gw.probe(gateway)
    assert ncalls[0] == 3


def test_hash_embedder():
    emb = gw.HashEmbedder(32)
    a   = emb.embed('The Iron Harbour Comedy')
    b   = emb.embed('The Iron Harbour Comedy')
    c   = emb.embed('Quiet Rooms Horror')
    assert a.shape == (32,)
    assert np.isclose(np.linalg.norm(a), 1)
    assert np.allclose(a, b)
    assert gw.cosine(a, b) == pytest.approx(1)
    assert gw.cosine(a, c) < 1
    assert gw.cosine(np.zeros(3), np.ones(3)) == 0

    with pytest.raises(ValidationError):
        gw.HashEmbedder(0)


def test_gateway_embed_cache_shared_with_forks():
    gateway = scripted()
    forked  = gateway.fork('agent0000')
    vec     = gateway.embed('hello')
    assert forked.embed('hello') is vec
    assert not vec.flags.writeable
    assert gateway.similarity('hello', 'hello') == pytest.approx(1)

    with pytest.raises(ValidationError):
        gateway.embed('   ')


def test_gateway_thread_safety():
    gateway = scripted(rule('probe', 'REPLY: a', 'REPLY: b', repeat=True))
    results = {}

    def worker(i):
        fork       = gateway.fork('agent{:04d}'.format(i))
        results[i] = [gw.probe(fork).parsed['reply'] for _ in range(4)]

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads: t.start()
    for t in threads: t.join()

    assert all(r == ['a', 'b', 'a', 'b'] for r in results.values())
    assert len(gateway.backend.calls) == 32


def test_http_backend_payload():
    backend = gw.HttpBackend('http://localhost:1/v1/chat', 'vision',
                             api_key='secret', temperature=0.2)
    reply   = {'choices' : [{'message' : {'content' : 'CAPTION: a ship'}}]}

    with mock.patch('simuser.gateway._post_json',
                    return_value=reply) as post:
        gateway = gw.Gateway(backend)
        resp    = gateway.complete('caption', {
            'title'         : 'The Iron Harbour',
            'thumbnail_ref' : 'https://img.example.org/1.jpg'})

    assert resp.parsed     == {'caption' : 'a ship'}
    assert resp.backend_id == 'http:vision'

    url, payload, api_key, timeout = post.call_args[0]
    content = payload['messages'][0]['content']
    assert url                 == 'http://localhost:1/v1/chat'
    assert api_key             == 'secret'
    assert payload['temperature'] == 0.2
    assert content[1]['image_url']['url'] == 'https://img.example.org/1.jpg'
