#!/usr/bin/env python
#
# kg.py - Knowledge graph memory with meta-path similarity.
#
"""Knowledge graph memory.

The graph holds typed entities (users, items, genres and people) and
typed relations between them, stored as ``(head, relation, tail)`` triples
in an undirected :class:`networkx.MultiGraph`. Entity identifiers carry a
type prefix - ``u:``, ``i:``, ``g:`` and ``p:``.

The base graph is built from the training interactions and item table, and
is never modified afterwards, so it can be shared by every agent. Each agent
owns an :class:`AgentGraph`, which overlays the triples created during the
agent's session on top of the base graph.

Similarity between two entities x and y is measured by counting the paths
between them (with distinct intermediate entities, up to a length bound)::

    s(x, y) = 2 * |P(x, y)| / (|P(x, x)| + |P(y, y)|)

Item-item and user-item similarities are blended, and then blended again
with the cosine similarity of the item text embeddings (see
:func:`blended_score` and :func:`retrieve_similar`).
"""


import collections
import dataclasses
import logging

import networkx as nx

import simuser.dataset as ds
from simuser.gateway import cosine
from simuser.errors  import ValidationError, SimilarityUndefinedError


log = logging.getLogger(__name__)


RELATIONS = {
    'liked'     : ('user',   'item'),
    'disliked'  : ('user',   'item'),
    'rated'     : ('user',   'item'),
    'has_genre' : ('item',   'genre'),
    'acted_in'  : ('person', 'item'),
}
"""Relation vocabulary of the knowledge graph built from a dataset.
Maps each relation to its (head type, tail type).
"""


PREFIXES = {'u' : 'user', 'i' : 'item', 'g' : 'genre', 'p' : 'person'}


def user_node(user_id):   return 'u:{}'.format(user_id)
def item_node(item_id):   return 'i:{}'.format(item_id)
def genre_node(genre):    return 'g:{}'.format(genre)
def person_node(name):    return 'p:{}'.format(name)


def entity_id(node):
    """Strip the type prefix from a node identifier. """
    return node.split(':', 1)[1]


def rating_relation(rating):
    """Relation created by a rating - liked, disliked or rated. """
    if rating >= ds.LIKE_THRESHOLD:    return 'liked'
    if rating <= ds.DISLIKE_THRESHOLD: return 'disliked'
    return 'rated'


@dataclasses.dataclass(frozen=True, order=True)
class Triple:
    head     : str
    relation : str
    tail     : str


@dataclasses.dataclass(frozen=True)
class MetaPathInstance:
    """A path through the graph. ``forward[i]`` is True if the i-th edge
    is traversed from head to tail.
    """
    nodes     : tuple
    relations : tuple
    forward   : tuple

    @property
    def length(self):
        return len(self.relations)

    def render(self, label=None):
        """Render the path as a text chain, e.g.
        ``You →liked→ Heat →has_genre→ Action``.
        """
        if label is None:
            label = str
        parts = [label(self.nodes[0])]
        for node, rel, fwd in zip(self.nodes[1:], self.relations,
                                  self.forward):
            if fwd: parts.append('→{}→'.format(rel))
            else:   parts.append('←{}←'.format(rel))
            parts.append(label(node))
        return ' '.join(parts)


@dataclasses.dataclass(frozen=True)
class SimilarityBreakdown:
    item_item        : float
    user_item        : float
    blended          : float
    semantic         : float
    final            : float
    supporting_paths : tuple = ()


@dataclasses.dataclass(frozen=True)
class SimilarItem:
    """One result of :func:`retrieve_similar`. """
    item_id   : str
    breakdown : SimilarityBreakdown
    metadata  : dict


class KnowledgeGraph(object):
    """A typed triple store. """

    def __init__(self, relations=None):
        """Create a KnowledgeGraph.

        :arg relations: Dict of ``{relation : (head_type, tail_type)}``.
                        Either type may be None to allow any entity type.
                        Defaults to :data:`RELATIONS`.
        """
        if relations is None:
            relations = RELATIONS
        self.__relations = dict(relations)
        self.__graph     = nx.MultiGraph()
        self.__frozen    = False
        self.cache       = {}

    @property
    def relations(self):
        return dict(self.__relations)

    @property
    def graph(self):
        return self.__graph

    @property
    def frozen(self):
        return self.__frozen

    def freeze(self):
        """Disallow any further changes. """
        self.__frozen = True
        return self

    def __check_mutable(self):
        if self.__frozen:
            raise ValidationError('The knowledge graph is read-only')

    def add_entity(self, node, etype=None, text=None, label=None):
        """Add an entity. The type defaults to the one implied by the node
        prefix.
        """
        self.__check_mutable()
        if etype is None:
            etype = PREFIXES.get(node.split(':', 1)[0])
        if etype is None:
            raise ValidationError('Unknown entity type for {}'.format(node))
        if self.__graph.has_node(node):
            return
        self.__graph.add_node(node, type=etype, text=text, label=label)
        self.cache.clear()

    def check_triple(self, triple):
        """Raise a :exc:`ValidationError` if triple is not valid for this
        graph.
        """
        if triple.relation not in self.__relations:
            raise ValidationError('Unknown relation: {}'.format(
                triple.relation))
        if triple.head == triple.tail:
            raise ValidationError('Self-loops are not allowed: {}'.format(
                triple))
        for node in (triple.head, triple.tail):
            if not self.has_node(node):
                raise ValidationError('Unknown entity: {}'.format(node))
        htype, ttype = self.__relations[triple.relation]
        if (htype is not None and self.node_type(triple.head) != htype) or \
           (ttype is not None and self.node_type(triple.tail) != ttype):
            raise ValidationError('Entity types do not match relation '
                                  '{}: {}'.format(triple.relation, triple))

    def add_triple(self, triple):
        """Add a triple. Adding a triple that is already present does
        nothing. Returns True if the triple was added.
        """
        self.__check_mutable()
        self.check_triple(triple)
        if self.has_triple(triple):
            return False
        self.__graph.add_edge(triple.head, triple.tail,
                              key=dataclasses.astuple(triple),
                              triple=triple)
        self.cache.clear()
        return True

    def has_node(self, node):
        return self.__graph.has_node(node)

    def has_triple(self, triple):
        return self.__graph.has_edge(triple.head, triple.tail,
                                     key=dataclasses.astuple(triple))

    def node_type(self, node):
        return self.__graph.nodes[node]['type']

    def node_text(self, node):
        """Text embedded to compare this entity semantically. """
        text = self.__graph.nodes[node].get('text')
        return text or self.label(node)

    def label(self, node):
        """Human readable name of an entity. """
        label = self.__graph.nodes[node].get('label')
        return label or entity_id(node)

    def nodes(self, etype=None):
        if etype is None:
            return sorted(self.__graph.nodes)
        return sorted(n for n, t in self.__graph.nodes(data='type')
                      if t == etype)

    def neighbours(self, node):
        """Return a dict of ``{neighbour : [Triple, ...]}``. """
        if not self.__graph.has_node(node):
            return {}
        return {nbr : [d['triple'] for d in keys.values()]
                for nbr, keys in self.__graph[node].items()}

    def triples(self):
        return sorted(d for _, _, d in self.__graph.edges(data='triple'))


class AgentGraph(object):
    """An agent's view of the knowledge graph - the shared base graph plus
    a private overlay of triples added during the session.
    """

    def __init__(self, base):
        self.__base    = base
        self.__overlay = nx.MultiGraph()
        self.cache     = {}

    @property
    def base(self):
        return self.__base

    @property
    def relations(self):
        return self.__base.relations

    def overlay_triples(self):
        return sorted(d for _, _, d in self.__overlay.edges(data='triple'))

    def add_triple(self, triple):
        """Add a triple to the overlay. Triples already present in the
        base graph or the overlay are ignored. Returns True if the triple
        was added.
        """
        self.__base.check_triple(triple)
        if self.has_triple(triple):
            return False
        self.__overlay.add_edge(triple.head, triple.tail,
                                key=dataclasses.astuple(triple),
                                triple=triple)
        self.cache.clear()
        return True

    def grow(self, interaction):
        """Add the triple for a new rating to the overlay. """
        triple = Triple(user_node(interaction.user_id),
                        rating_relation(interaction.rating),
                        item_node(interaction.item_id))
        self.add_triple(triple)
        return triple

    def has_node(self, node):
        return self.__base.has_node(node)

    def has_triple(self, triple):
        key = dataclasses.astuple(triple)
        return self.__base.has_triple(triple) or \
            self.__overlay.has_edge(triple.head, triple.tail, key=key)

    def node_type(self, node):  return self.__base.node_type(node)
    def node_text(self, node):  return self.__base.node_text(node)
    def label(self, node):      return self.__base.label(node)

    def nodes(self, etype=None):
        return self.__base.nodes(etype)

    def neighbours(self, node):
        nbrs = self.__base.neighbours(node)
        if self.__overlay.has_node(node):
            for nbr, keys in self.__overlay[node].items():
                nbrs.setdefault(nbr, [])
                nbrs[nbr] = nbrs[nbr] + [d['triple'] for d in keys.values()]
        return nbrs

    def triples(self):
        return sorted(self.__base.triples() + self.overlay_triples())


def build_graph(train, items, include_people=True):
    """Build the base knowledge graph.

    Only the given (training) interactions become user-item edges. Repeated
    ratings of the same item by the same user count once, with the most
    recent rating.

    :arg train:          Training interactions
    :arg items:          Dict of ``{item_id : Item}``
    :arg include_people: Add person-item edges from the item ``people``
    """

    graph = KnowledgeGraph()

    for item in items.values():
        inode = item_node(item.item_id)
        graph.add_entity(inode, 'item', item.semantic_text(), item.title)
        for genre in item.genres:
            graph.add_entity(genre_node(genre), 'genre', genre, genre)
            graph.add_triple(Triple(inode, 'has_genre', genre_node(genre)))
        if include_people:
            for person in item.people:
                graph.add_entity(person_node(person), 'person', person,
                                 person)
                graph.add_triple(Triple(person_node(person), 'acted_in',
                                        inode))

    for ixn in ds.latest_interactions(train):
        if ixn.item_id not in items:
            raise ValidationError('Unknown item in interaction: {}'.format(
                ixn.item_id))
        unode = user_node(ixn.user_id)
        graph.add_entity(unode, 'user', label='user {}'.format(ixn.user_id))
        graph.add_triple(Triple(unode,
                                rating_relation(ixn.rating),
                                item_node(ixn.item_id)))

    log.debug('Built knowledge graph with %i nodes and %i edges',
              graph.graph.number_of_nodes(), graph.graph.number_of_edges())

    return graph.freeze()


def _check_node(graph, node):
    if not graph.has_node(node):
        raise ValidationError('Unknown entity: {}'.format(node))


def path_count(graph, x, y, max_length=3):
    """Count the path instances between x and y of length at most
    max_length. Intermediate entities must be distinct, and different from
    x and y. Parallel edges (different relations between the same pair of
    entities) give different path instances. When x == y, closed walks
    starting and ending at x are counted.
    """

    _check_node(graph, x)
    _check_node(graph, y)
    if max_length < 1:
        raise ValidationError('Path length bound must be at least 1')

    key   = (min(x, y), max(x, y), max_length)
    cache = getattr(graph, 'cache', None)
    if cache is not None and key in cache:
        return cache[key]

    def walk(node, depth, visited):
        nbrs  = graph.neighbours(node)
        total = len(nbrs.get(y, ()))
        if depth + 1 < max_length:
            for nbr, edges in nbrs.items():
                if nbr == x or nbr == y or nbr in visited:
                    continue
                total += len(edges) * walk(nbr, depth + 1, visited | {nbr})
        return total

    count = walk(x, 0, frozenset())
    if cache is not None:
        cache[key] = count
    return count


def enumerate_paths(graph, x, y, max_length=3):
    """Return every path instance counted by :func:`path_count`, as
    :class:`MetaPathInstance` objects, ordered by length then by nodes
    and relations.
    """

    _check_node(graph, x)
    _check_node(graph, y)

    paths = []

    def walk(node, nodes, rels, fwds):
        for nbr, edges in sorted(graph.neighbours(node).items()):
            for triple in sorted(edges):
                step = (nodes + (nbr,),
                        rels  + (triple.relation,),
                        fwds  + (triple.head == node,))
                if nbr == y:
                    paths.append(MetaPathInstance(*step))
                elif nbr != x and nbr not in nodes and \
                     len(rels) + 1 < max_length:
                    walk(nbr, *step)

    walk(x, (x,), (), ())
    return sorted(paths, key=lambda p: (p.length, p.nodes, p.relations))


def pathsim(graph, x, y, max_length=3):
    """Path-count similarity between x and y. """
    xy    = path_count(graph, x, y, max_length)
    xx    = path_count(graph, x, x, max_length)
    yy    = path_count(graph, y, y, max_length)
    denom = xx + yy
    if denom == 0:
        raise SimilarityUndefinedError('No self paths for {} or {}'.format(
            x, y))
    return 2 * xy / denom


def blend(item_item, user_item, semantic, alpha=0.8, embed_weight=0.25):
    """Combine the three similarity components. Returns a
    ``(blended, final)`` tuple.
    """
    blended = alpha * item_item + (1 - alpha) * user_item
    final   = (1 - embed_weight) * blended + embed_weight * semantic
    return blended, final


def blended_score(graph,
                  gateway,
                  u,
                  x,
                  y,
                  alpha=0.8,
                  embed_weight=0.25,
                  max_length=3):
    """Score item y against query item x for user u.

    :arg graph:   :class:`KnowledgeGraph` or :class:`AgentGraph`
    :arg gateway: :class:`simuser.gateway.Gateway`, used to embed item text
    :arg u:       User node
    :arg x:       Query item node
    :arg y:       Candidate item node
    :returns:     A :class:`SimilarityBreakdown` (without supporting paths)
    """

    item_item = pathsim(graph, x, y, max_length)
    user_item = pathsim(graph, u, y, max_length)
    semantic  = cosine(gateway.embed(graph.node_text(x)),
                       gateway.embed(graph.node_text(y)))
    blended, final = blend(item_item, user_item, semantic,
                           alpha, embed_weight)

    return SimilarityBreakdown(item_item=item_item,
                               user_item=user_item,
                               blended=blended,
                               semantic=semantic,
                               final=final)


def within_hops(graph, x, max_length):
    """Return the set of entities reachable from x in at most max_length
    hops (excluding x).
    """
    seen     = {x}
    frontier = [x]
    for _ in range(max_length):
        nxt = []
        for node in frontier:
            for nbr in graph.neighbours(node):
                if nbr not in seen:
                    seen.add(nbr)
                    nxt.append(nbr)
        frontier = nxt
    seen.discard(x)
    return seen


def supporting_paths(graph, u, x, y, max_length=3, max_paths=3):
    """Up to max_paths shortest paths which explain why y is relevant - paths
    from the user u to y, or if there are none, paths from x to y.
    """
    paths = enumerate_paths(graph, u, y, max_length)
    if len(paths) == 0:
        paths = enumerate_paths(graph, x, y, max_length)
    return tuple(paths[:max_paths])


def retrieve_similar(graph,
                     gateway,
                     user_id,
                     item_id,
                     k2=3,
                     alpha=0.8,
                     embed_weight=0.25,
                     max_length=3,
                     max_paths=3,
                     aggregated=None):
    """Retrieve the k2 items most similar to item_id for user_id.

    Every item within max_length hops of the query item is scored with
    :func:`blended_score`; items are ranked by final score (descending),
    then item id.

    :arg aggregated: Dict of ``{item_id : R_i}`` included in the result
                     metadata
    :returns:        List of :class:`SimilarItem` objects
    """

    u = user_node(user_id)
    x = item_node(item_id)
    _check_node(graph, x)
    _check_node(graph, u)

    if aggregated is None:
        aggregated = {}

    candidates = [n for n in within_hops(graph, x, max_length)
                  if graph.node_type(n) == 'item']
    scored     = []

    for y in candidates:
        breakdown = blended_score(graph, gateway, u, x, y,
                                  alpha, embed_weight, max_length)
        scored.append((y, breakdown))

    scored  = sorted(scored, key=lambda s: (-s[1].final, entity_id(s[0])))
    results = []

    for y, breakdown in scored[:k2]:
        paths     = supporting_paths(graph, u, x, y, max_length, max_paths)
        breakdown = dataclasses.replace(breakdown, supporting_paths=paths)
        iid       = entity_id(y)
        results.append(SimilarItem(
            item_id=iid,
            breakdown=breakdown,
            metadata={'title'             : graph.label(y),
                      'aggregated_rating' : aggregated.get(iid)}))

    return results


def render_similar(graph, results, user_id=None):
    """Format retrieval results for a prompt. Paths starting at the agent's
    own user node are rendered from "You".
    """

    if len(results) == 0:
        return '(no related items)'

    me = user_node(user_id) if user_id is not None else None

    def label(node):
        if node == me:
            return 'You'
        return graph.label(node)

    lines = []
    for result in results:
        rating = result.metadata.get('aggregated_rating')
        rating = 'unrated' if rating is None else \
                 'average rating {:.1f}'.format(rating)
        lines.append('{} ({}, similarity {:.2f})'.format(
            result.metadata['title'], rating, result.breakdown.final))
        for path in result.breakdown.supporting_paths:
            lines.append('    {}'.format(path.render(label)))
    return '\n'.join(lines)


def graph_stats(graph):
    """Count entities by type and edges by relation. """
    nodes = collections.Counter(graph.node_type(n) for n in graph.nodes())
    edges = collections.Counter(t.relation for t in graph.triples())
    return {'nodes' : dict(sorted(nodes.items())),
            'edges' : dict(sorted(edges.items()))}


def export_triples(graph, path):
    """Write every triple as a tab-separated ``head relation tail`` line. """
    with open(path, 'wt', encoding='utf-8') as f:
        for t in graph.triples():
            f.write('{}\t{}\t{}\n'.format(t.head, t.relation, t.tail))


def load_triples(path, relations=None):
    """Load a graph written by :func:`export_triples`. Entity types are
    taken from the identifier prefixes.
    """
    graph = KnowledgeGraph(relations)
    with open(path, 'rt', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip('\n')
            if line.strip() == '':
                continue
            parts = line.split('\t')
            if len(parts) != 3:
                raise ValidationError('{}: malformed triple on line '
                                      '{}'.format(path, lineno))
            head, rel, tail = parts
            graph.add_entity(head)
            graph.add_entity(tail)
            graph.add_triple(Triple(head, rel, tail))
    return graph.freeze()
