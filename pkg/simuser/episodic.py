#!/usr/bin/env python
#
# episodic.py - Per-agent text memory with self-ask retrieval.
#
"""Episodic memory.

Each agent owns an :class:`EpisodicMemory` - an append-only list of short
natural-language records (ratings from the user's history, page
interactions, feelings about watched items, and reflections). Records are
embedded when they are added, and retrieved by cosine similarity.

:meth:`EpisodicMemory.self_ask_retrieve` first asks the LLM for follow-up
questions about the query; the query and every follow-up are run as
separate searches, and the union of the results is re-ranked by the best
similarity each record achieved.
"""


import dataclasses
import logging

import numpy as np

from simuser.common import write_jsonl, read_jsonl
from simuser.errors import (ValidationError,
                            LlmFormatError,
                            LlmTransportError,
                            ScriptExhaustedError)


log = logging.getLogger(__name__)


KINDS = ('seed_rating', 'page_interaction', 'feeling', 'reflection')
"""Kinds of memory record. """


def seed_text(item_name, score):
    """Memory text for a rating from the user's history. """
    if score > 4:
        fmt = 'I liked {} based on my review score of {}'
    elif score <= 2:
        fmt = 'I disliked {} based on my review score of {}'
    else:
        fmt = 'I felt neutral about {} based on my review score of {}'
    return fmt.format(item_name, score)


def page_text(page_number, shown, watched, ratings, item_type='movies'):
    """Memory text for one page of recommendations.

    :arg page_number: Page number
    :arg shown:       Names of all items shown on the page
    :arg watched:     Names of the items which were watched
    :arg ratings:     Ratings given to the watched items
    :arg item_type:   Item type, e.g. ``'movies'``
    """
    disliked = [s for s in shown if s not in watched]

    def join(names):
        return ', '.join(names) if len(names) > 0 else 'none'

    return ('The recommender system recommended the following {t} to me on '
            'page {p}: {shown}, among them, I selected {watched} and rate '
            'them {ratings} respectively. I dislike the rest {t} items: '
            '{disliked}').format(t=item_type,
                                 p=page_number,
                                 shown=join(shown),
                                 watched=join(watched),
                                 ratings=join([str(r) for r in ratings]),
                                 disliked=join(disliked))


def feeling_text(item_name, rating, feeling):
    return 'I watched {} and rated it {}. {}'.format(item_name, rating,
                                                     feeling)


def reflection_text(insight):
    return 'Reflection: {}'.format(insight)


@dataclasses.dataclass(frozen=True)
class MemoryEntry:
    text      : str
    kind      : str
    embedding : np.ndarray = dataclasses.field(repr=False, compare=False)
    sequence  : int        = 0


@dataclasses.dataclass(frozen=True)
class RetrievalResult:
    """Ranked ``(MemoryEntry, score)`` pairs, and the queries used. """
    entries      : tuple
    queries_used : tuple

    def render(self):
        """Format the retrieved entries for a prompt. """
        if len(self.entries) == 0:
            return '(no relevant memories)'
        return '\n'.join('[{}] {}'.format(e.sequence, e.text)
                         for e, _ in self.entries)


class EpisodicMemory(object):
    """Per-agent episodic memory. Not thread safe - each agent owns one. """

    def __init__(self, gateway, followups=2):
        """Create an EpisodicMemory.

        :arg gateway:   :class:`simuser.gateway.Gateway` used to embed
                        records, and to generate follow-up questions
        :arg followups: Number of follow-up questions to ask for
        """
        self.__gateway   = gateway
        self.__followups = followups
        self.__entries   = []
        self.__matrix    = None

    def __len__(self):
        return len(self.__entries)

    @property
    def entries(self):
        return list(self.__entries)

    def record(self, text, kind):
        """Add a record, returning its sequence number. """

        if text is None or text.strip() == '':
            raise ValidationError('Memory records must not be empty')
        if kind not in KINDS:
            raise ValidationError('Unknown memory kind: {}'.format(kind))

        entry = MemoryEntry(text=text,
                            kind=kind,
                            embedding=self.__gateway.embed(text),
                            sequence=len(self.__entries))
        self.__entries.append(entry)
        self.__matrix = None
        return entry.sequence

    def seed_from_history(self, history, items):
        """Populate an empty memory from a rating history.

        :arg history: Interactions, in time order
        :arg items:   Dict of ``{item_id : Item}``
        """
        if len(self.__entries) > 0:
            raise ValidationError('Memory has already been seeded')
        for ixn in history:
            self.record(seed_text(items[ixn.item_id].title, ixn.rating),
                        'seed_rating')
        return len(self.__entries)

    def search(self, query, k):
        """Return the k records most similar to query, as ``(entry, score)``
        pairs sorted by score (descending) then sequence (ascending).
        """

        if len(self.__entries) == 0 or k <= 0:
            return []

        if self.__matrix is None:
            matrix = np.vstack([e.embedding for e in self.__entries])
            norms  = np.linalg.norm(matrix, axis=1)
            norms[norms == 0] = 1
            self.__matrix = matrix / norms[:, None]

        qvec  = np.asarray(self.__gateway.embed(query), dtype=float)
        qnorm = np.linalg.norm(qvec)
        if qnorm > 0:
            qvec = qvec / qnorm

        scores = np.clip(self.__matrix @ qvec, -1, 1)
        order  = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        return [(self.__entries[i], float(scores[i])) for i in order[:k]]

    def follow_up_questions(self, query):
        """Ask the LLM for follow-up questions about query. Returns an empty
        list if the LLM cannot provide them.
        """
        if self.__followups <= 0:
            return []
        try:
            resp = self.__gateway.complete('self_ask',
                                           {'query' : query,
                                            'n'     : self.__followups})
        except (LlmFormatError,
                LlmTransportError,
                ScriptExhaustedError) as e:
            log.debug('Self-ask failed, using single query retrieval: %s', e)
            return []
        questions = [q for q in resp.parsed['question'] if q != query]
        return questions[:self.__followups]

    def self_ask_retrieve(self, query, k1):
        """Retrieve up to k1 records relevant to query, using follow-up
        questions as additional queries.

        :returns: A :class:`RetrievalResult`
        """

        if len(self.__entries) == 0:
            return RetrievalResult((), (query,))

        queries = [query] + self.follow_up_questions(query)
        best    = {}

        for q in queries:
            for entry, score in self.search(q, k1):
                prev = best.get(entry.sequence)
                if prev is None or score > prev[1]:
                    best[entry.sequence] = (entry, score)

        ranked = sorted(best.values(), key=lambda p: (-p[1], p[0].sequence))
        return RetrievalResult(tuple(ranked[:k1]), tuple(queries))

    def export_jsonl(self, path):
        """Save a snapshot of the memory. Embeddings are not saved. """
        write_jsonl(path, [{'text'     : e.text,
                            'kind'     : e.kind,
                            'sequence' : e.sequence}
                           for e in self.__entries])

    @classmethod
    def import_jsonl(cls, path, gateway, followups=2):
        """Load a snapshot saved by :meth:`export_jsonl`, recomputing
        embeddings.
        """
        memory  = cls(gateway, followups)
        records = sorted(read_jsonl(path), key=lambda r: r['sequence'])
        for record in records:
            memory.record(record['text'], record['kind'])
        return memory
