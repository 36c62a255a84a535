#!/usr/bin/env python
#
# gateway.py - Provider-agnostic LLM completion and embedding interface.
#
"""The LLM gateway.

All text generation and embedding goes through a :class:`Gateway`, which
pairs a *backend* (something which turns a prompt into text) with an
*embedder* (something which turns text into a vector):

 - :class:`ScriptedBackend` replays canned replies from a JSON script, and
   is used by the test suite and for offline runs.
 - :class:`HttpBackend` talks to a chat-completion style HTTP endpoint.
 - :class:`HashEmbedder` is a deterministic hashed n-gram embedder.
 - :class:`HttpEmbedder` talks to an embeddings HTTP endpoint.

A script file is a JSON list of rules (``//`` comment lines are allowed)::

    [
      // answer every rating prompt with a 4
      {"tag": "rate_item", "responses": ["RATING: 4\\nFEELING: fine"],
       "repeat": true},
      // unless the item is a horror film
      {"tag": "rate_item", "match": {"item": "Horror"},
       "responses": ["RATING: 1\\nFEELING: too scary"], "repeat": true}
    ]

Each ``match`` entry is a regular expression searched for in the binding of
that name (the special name ``prompt`` refers to the rendered prompt).
When several rules can answer a call, the one with the most ``match``
entries wins, and the first registered rule wins ties.
"""


import                   copy
import                   dataclasses
import                   hashlib
import                   json
import                   logging
import                   os
import                   re
import                   threading
import urllib.error   as urlerror
import urllib.request as urlrequest

import numpy as np

import simuser.prompts as prompts
from simuser.common import (read_json,
                            retry_on_error)
from simuser.errors import (ValidationError,
                            LlmFormatError,
                            LlmTransportError,
                            ScriptExhaustedError)


log = logging.getLogger(__name__)


DEFAULT_EMBED_DIM = 64
"""Dimensionality of the :class:`HashEmbedder` vectors. """


@dataclasses.dataclass(frozen=True)
class LlmResponse:
    """The result of a :meth:`Gateway.complete` call. """
    raw_text   : str
    parsed     : dict
    backend_id : str
    attempt    : int
    prompt     : str = None


def cosine(a, b):
    """Cosine similarity between two vectors. Returns 0 if either vector
    has zero norm.
    """
    a     = np.asarray(a, dtype=float)
    b     = np.asarray(b, dtype=float)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / denom, -1, 1))


@dataclasses.dataclass
class ScriptRule:
    """One rule of a :class:`ScriptedBackend` script. """
    tag       : str
    responses : list
    match     : dict = dataclasses.field(default_factory=dict)
    repeat    : bool = False
    index     : int  = 0

    @property
    def specificity(self):
        return len(self.match)

    def matches(self, tag, prompt, bindings):
        if tag != self.tag:
            return False
        for name, regex in self.match.items():
            if name == 'prompt': value = prompt
            else:                value = bindings.get(name, '')
            if re.search(regex, str(value)) is None:
                return False
        return True


class ScriptedBackend(object):
    """Deterministic backend which replays replies from a script.

    Responses of each rule are consumed in order. A rule with
    ``repeat`` set cycles through its responses forever; otherwise it is
    exhausted once all of its responses have been used, and a call which
    no unexhausted rule can answer raises a :exc:`ScriptExhaustedError`.

    Response cursors are kept per *consumer* (see :meth:`Gateway.fork`), so
    agents running in parallel each see the script from the beginning,
    regardless of how their calls are interleaved.
    """

    backend_id = 'scripted'

    def __init__(self, rules):
        """Create a ScriptedBackend.

        :arg rules: Sequence of dicts, each with keys ``tag``,
                    ``responses``, and optionally ``match`` and ``repeat``.
        """
        self.__rules   = []
        self.__cursors = {}
        self.__calls   = []
        self.__lock    = threading.Lock()

        for i, rule in enumerate(rules):
            self.add_rule(index=i, **rule)

    @classmethod
    def from_file(cls, path):
        script = read_json(path)
        if isinstance(script, dict):
            script = script.get('rules', [])
        if not isinstance(script, list):
            raise ValidationError('{}: script must be a list of '
                                  'rules'.format(path))
        return cls(script)

    def add_rule(self, tag, responses, match=None, repeat=False, index=None):
        """Register a new rule after all existing rules. """
        if isinstance(responses, str):
            responses = [responses]
        if len(responses) == 0:
            raise ValidationError('Script rule for {} has no '
                                  'responses'.format(tag))
        if index is None:
            index = len(self.__rules)
        for regex in (match or {}).values():
            try:
                re.compile(regex)
            except re.error as e:
                raise ValidationError('Invalid match regex {} in rule for '
                                      '{}: {}'.format(regex, tag, e))
        with self.__lock:
            self.__rules.append(ScriptRule(tag=tag,
                                           responses=list(responses),
                                           match=dict(match or {}),
                                           repeat=bool(repeat),
                                           index=index))

    @property
    def calls(self):
        """List of ``(consumer, tag, prompt)`` tuples, one per call. """
        with self.__lock:
            return list(self.__calls)

    def reset(self):
        with self.__lock:
            self.__cursors = {}
            self.__calls   = []

    def generate(self, tag, prompt, bindings, consumer=None):
        """Return the next scripted reply for a call. """

        with self.__lock:
            self.__calls.append((consumer, tag, prompt))

            best = None
            for pos, rule in enumerate(self.__rules):
                if not rule.matches(tag, prompt, bindings):
                    continue
                cursor = self.__cursors.get((consumer, pos), 0)
                if (not rule.repeat) and cursor >= len(rule.responses):
                    continue
                if best is None or rule.specificity > best[1].specificity:
                    best = (pos, rule)

            if best is None:
                raise ScriptExhaustedError(
                    'No script rule can answer {} call (bindings: {})'.format(
                        tag, ', '.join(sorted(bindings))))

            pos, rule = best
            cursor    = self.__cursors.get((consumer, pos), 0)
            self.__cursors[consumer, pos] = cursor + 1
            return rule.responses[cursor % len(rule.responses)]


def _post_json(url, payload, api_key=None, timeout=120):
    """POST a JSON payload to url and return the decoded JSON reply. Any
    failure is raised as a :exc:`LlmTransportError`.
    """

    headers = {'Content-Type' : 'application/json'}
    if api_key:
        headers['Authorization'] = 'Bearer {}'.format(api_key)

    data = json.dumps(payload).encode('utf-8')
    req  = urlrequest.Request(url, headers=headers, data=data)
    resp = None

    try:
        resp = urlrequest.urlopen(req, timeout=timeout)
        return json.loads(resp.read().decode('utf-8'))
    except (urlerror.URLError, OSError, ValueError) as e:
        raise LlmTransportError('Request to {} failed: {}'.format(url, e))
    finally:
        if resp is not None:
            resp.close()


class HttpBackend(object):
    """Backend for an HTTP chat-completion endpoint which accepts
    ``{"model", "messages", "temperature"}`` and returns
    ``{"choices": [{"message": {"content": ...}}]}``.

    If the bindings contain a ``thumbnail_ref`` which looks like a URL, it
    is sent along with the prompt as an image.
    """

    def __init__(self,
                 endpoint,
                 model,
                 api_key=None,
                 temperature=None,
                 timeout=120,
                 num_retries=3):
        self.endpoint    = endpoint
        self.model       = model
        self.api_key     = api_key
        self.temperature = temperature
        self.timeout     = timeout
        self.num_retries = num_retries

    @property
    def backend_id(self):
        return 'http:{}'.format(self.model)

    def generate(self, tag, prompt, bindings, consumer=None):

        content = prompt
        thumb   = bindings.get('thumbnail_ref')
        if thumb and re.match(r'(https?|data):', str(thumb)):
            content = [{'type' : 'text',      'text' : prompt},
                       {'type' : 'image_url', 'image_url' : {'url' : thumb}}]

        payload = {'model'    : self.model,
                   'messages' : [{'role' : 'user', 'content' : content}]}
        if self.temperature is not None:
            payload['temperature'] = self.temperature

        reply = retry_on_error(
            _post_json,
            self.num_retries,
            self.endpoint,
            payload,
            self.api_key,
            self.timeout,
            retry_error_message='LLM request for {} failed.'.format(tag),
            retry_condition=lambda e: isinstance(e, LlmTransportError))

        try:
            return reply['choices'][0]['message']['content']
        except (KeyError, IndexError, TypeError):
            raise LlmTransportError('Unexpected reply from {}: {}'.format(
                self.endpoint, str(reply)[:200]))


class HashEmbedder(object):
    """Deterministic embedder which hashes word tokens and character
    1-3-grams into a signed, unit-normalised vector.
    """

    def __init__(self, dim=DEFAULT_EMBED_DIM):
        if dim < 1:
            raise ValidationError('Embedding dimension must be positive')
        self.dim = dim

    @property
    def embedder_id(self):
        return 'hash:{}'.format(self.dim)

    def __features(self, text):
        padded = '\x02{}\x03'.format(text)
        for n in (1, 2, 3):
            for i in range(len(padded) - n + 1):
                yield 'c:' + padded[i:i + n], 0.5
        for word in re.findall(r'\w+', text.lower()):
            yield 'w:' + word, 1.0

    def embed(self, text):
        vec = np.zeros(self.dim, dtype=np.float64)
        for feature, weight in self.__features(text):
            digest = hashlib.sha256(feature.encode('utf-8')).digest()
            idx    = int.from_bytes(digest[:4], 'little') % self.dim
            sign   = 1.0 if digest[4] & 1 else -1.0
            vec[idx] += sign * weight
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValidationError('Cannot embed {!r}'.format(text))
        return vec / norm


class HttpEmbedder(object):
    """Embedder for an HTTP endpoint which accepts ``{"model", "input"}``
    and returns ``{"data": [{"embedding": [...]}]}``.
    """

    def __init__(self, endpoint, model, api_key=None, timeout=60,
                 num_retries=3):
        self.endpoint    = endpoint
        self.model       = model
        self.api_key     = api_key
        self.timeout     = timeout
        self.num_retries = num_retries
        self.dim         = None

    @property
    def embedder_id(self):
        return 'http:{}'.format(self.model)

    def embed(self, text):
        reply = retry_on_error(
            _post_json,
            self.num_retries,
            self.endpoint,
            {'model' : self.model, 'input' : text},
            self.api_key,
            self.timeout,
            retry_error_message='Embedding request failed.',
            retry_condition=lambda e: isinstance(e, LlmTransportError))
        try:
            vec = np.asarray(reply['data'][0]['embedding'], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError):
            raise LlmTransportError('Unexpected reply from {}'.format(
                self.endpoint))
        if self.dim is None:
            self.dim = len(vec)
        return vec


class Gateway(object):
    """Renders prompts, calls the backend, validates replies, and embeds
    text.

    Embeddings are cached, and the cache is shared with every gateway
    created by :meth:`fork`.
    """

    def __init__(self, backend, embedder=None, consumer=None):
        if embedder is None:
            embedder = HashEmbedder()
        self.__backend  = backend
        self.__embedder = embedder
        self.__consumer = consumer
        self.__cache    = {}
        self.__lock     = threading.Lock()

    @property
    def backend(self):
        return self.__backend

    @property
    def embedder(self):
        return self.__embedder

    @property
    def consumer(self):
        return self.__consumer

    @property
    def backend_id(self):
        return self.__backend.backend_id

    def fork(self, consumer):
        """Return a gateway which shares this gateway's backend, embedder
        and embedding cache, but which identifies itself to the backend as
        consumer.
        """
        forked = copy.copy(self)
        forked.__consumer = consumer
        return forked

    def complete(self, tag, bindings, validate=None):
        """Render the template tag with bindings, query the backend, and
        parse the reply.

        If the reply does not match the template schema (or validate
        raises an error), the prompt is sent once more with
        :data:`simuser.prompts.RETRY_INSTRUCTION` appended. If the second
        reply is also invalid, a :exc:`LlmFormatError` is raised.

        :arg tag:      Template tag
        :arg bindings: Dict of ``{placeholder : value}``
        :arg validate: Optional function which is passed the parsed reply,
                       and which may raise a ``LlmFormatError`` or
                       ``ValidationError`` to reject it. If it returns a
                       value other than None, that value replaces the
                       parsed reply.
        """

        template = prompts.get_template(tag)
        bindings = dict(bindings)
        prompt   = template.render(bindings)
        error    = None

        if self.__consumer is not None:
            bindings.setdefault('agent_id', self.__consumer)

        for attempt in (1, 2):

            text = self.__backend.generate(tag, prompt, bindings,
                                           self.__consumer)
            log.debug('[%s] %s attempt %i reply: %s',
                      self.__consumer, tag, attempt, text)

            try:
                parsed = template.schema.parse(text)
                if validate is not None:
                    result = validate(parsed)
                    if result is not None:
                        parsed = result
                return LlmResponse(raw_text=text,
                                   parsed=parsed,
                                   backend_id=self.backend_id,
                                   attempt=attempt,
                                   prompt=prompt)

            except (LlmFormatError, ValidationError) as e:
                error = e
                log.debug('[%s] %s reply rejected: %s',
                          self.__consumer, tag, e)
                prompt = '{}\n\n{}'.format(prompt, prompts.RETRY_INSTRUCTION)

        raise LlmFormatError('Invalid reply to {} after retry: {}'.format(
            tag, error), tag=tag, raw_text=text)

    def embed(self, text):
        """Return the embedding of text as a read-only numpy array. """

        if text is None or str(text).strip() == '':
            raise ValidationError('Cannot embed empty text')

        with self.__lock:
            vec = self.__cache.get(text)
        if vec is not None:
            return vec

        vec = np.array(self.__embedder.embed(text), dtype=np.float64)
        vec.flags.writeable = False
        if not np.all(np.isfinite(vec)):
            raise ValidationError('Non-finite embedding for {!r}'.format(text))

        with self.__lock:
            for other in self.__cache.values():
                if len(other) != len(vec):
                    raise ValidationError('Embedding dimension changed from '
                                          '{} to {}'.format(len(other),
                                                            len(vec)))
                break
            vec = self.__cache.setdefault(text, vec)
        return vec

    def similarity(self, a, b):
        """Cosine similarity between the embeddings of two texts. """
        return cosine(self.embed(a), self.embed(b))


def http_settings(environ=None):
    """Read the live backend settings from the environment. Returns a dict
    with keys ``endpoint``, ``model``, ``api_key``, ``temperature``,
    ``embed_endpoint`` and ``embed_model``.
    """
    if environ is None:
        environ = os.environ

    temperature = environ.get('LLM_TEMPERATURE')
    if temperature not in (None, ''):
        try:
            temperature = float(temperature)
        except ValueError:
            raise ValidationError('Invalid LLM_TEMPERATURE: {}'.format(
                temperature))
    else:
        temperature = None

    return {
        'endpoint'       : environ.get('LLM_ENDPOINT'),
        'model'          : environ.get('LLM_MODEL'),
        'api_key'        : environ.get('LLM_API_KEY'),
        'temperature'    : temperature,
        'embed_endpoint' : environ.get('EMBED_ENDPOINT'),
        'embed_model'    : environ.get('EMBED_MODEL'),
    }


def create_gateway(backend='scripted',
                   script=None,
                   num_retries=3,
                   embed_dim=DEFAULT_EMBED_DIM,
                   environ=None):
    """Create a :class:`Gateway`.

    :arg backend:     ``'scripted'`` or ``'http'``.
    :arg script:      Path to a script file, required for the scripted
                      backend.
    :arg num_retries: Number of attempts for HTTP requests.
    :arg embed_dim:   Dimension of the hashed embedder, used unless an
                      ``EMBED_ENDPOINT`` is configured.
    :arg environ:     Environment to read ``LLM_*`` / ``EMBED_*`` settings
                      from (default ``os.environ``).
    """

    settings = http_settings(environ)

    if backend == 'scripted':
        if script is None:
            raise ValidationError('The scripted backend requires a script')
        llm = ScriptedBackend.from_file(script)
    elif backend == 'http':
        if not (settings['endpoint'] and settings['model']):
            raise ValidationError('LLM_ENDPOINT and LLM_MODEL must be set '
                                  'to use the http backend')
        llm = HttpBackend(settings['endpoint'],
                          settings['model'],
                          settings['api_key'],
                          settings['temperature'],
                          num_retries=num_retries)
    else:
        raise ValidationError('Unknown backend: {}'.format(backend))

    if settings['embed_endpoint'] and settings['embed_model']:
        embedder = HttpEmbedder(settings['embed_endpoint'],
                                settings['embed_model'],
                                settings['api_key'],
                                num_retries=num_retries)
    else:
        embedder = HashEmbedder(embed_dim)

    return Gateway(llm, embedder)


def probe(gateway, message='Are you there?'):
    """Make a single round-trip call, returning the :class:`LlmResponse`. """
    return gateway.complete('probe', {'message' : message})

