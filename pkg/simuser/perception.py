#!/usr/bin/env python
#
# perception.py - Fact-checked thumbnail captions.
#
"""Thumbnail captions.

Agents "see" an item's thumbnail through a caption generated ahead of the
simulation:

 1. a draft caption is requested from a multimodal provider,
 2. the draft is decomposed into atomic claims,
 3. the provider scores each claim against the thumbnail with a
    ``(p_yes, p_no)`` pair,
 4. the draft is rewritten, dropping claims with ``p_yes`` below a
    threshold.

Captions are computed in a batch (:func:`caption_items`) and stored in a
JSONL cache file, which the simulator loads. The thumbnail reference is
passed to the provider as is.
"""


import concurrent.futures as futures
import                       dataclasses
import                       logging
import                       threading

import pandas as pd

from simuser.common import write_jsonl, read_jsonl
from simuser.errors import ValidationError, NoThumbnailError


log = logging.getLogger(__name__)


DEFAULT_THRESHOLD = 0.5
"""Claims with p_yes below this value are removed from the caption. """


DEFAULT_MAX_CLAIMS = 6
"""Maximum number of claims requested per caption. """


@dataclasses.dataclass(frozen=True)
class AtomicClaim:
    text  : str
    p_yes : float = None
    p_no  : float = None

    @property
    def scored(self):
        return self.p_yes is not None


@dataclasses.dataclass(frozen=True)
class Caption:
    item_id       : str
    thumbnail_ref : str
    draft         : str
    claims        : tuple
    final         : str
    backend_id    : str = None

    def to_dict(self):
        return {'item_id'       : self.item_id,
                'thumbnail_ref' : self.thumbnail_ref,
                'draft'         : self.draft,
                'claims'        : [dataclasses.asdict(c)
                                   for c in self.claims],
                'final'         : self.final,
                'backend_id'    : self.backend_id}

    @classmethod
    def from_dict(cls, d):
        return cls(item_id=d['item_id'],
                   thumbnail_ref=d.get('thumbnail_ref'),
                   draft=d['draft'],
                   claims=tuple(AtomicClaim(**c) for c in d['claims']),
                   final=d['final'],
                   backend_id=d.get('backend_id'))


def _clamp(value, name):
    if value < 0 or value > 1:
        clamped = min(1.0, max(0.0, value))
        log.warning('Claim %s probability %s clamped to %s',
                    name, value, clamped)
        return clamped
    return float(value)


class Captioner(object):
    """Runs the caption pipeline, caching results by
    ``(item, thumbnail, backend)``.
    """

    def __init__(self,
                 gateway,
                 threshold=DEFAULT_THRESHOLD,
                 max_claims=DEFAULT_MAX_CLAIMS,
                 cache=None):
        """Create a Captioner.

        :arg gateway:    :class:`simuser.gateway.Gateway`
        :arg threshold:  Removal threshold on p_yes
        :arg max_claims: Maximum number of claims per caption
        :arg cache:      Optional sequence of :class:`Caption` objects to
                         pre-populate the cache with
        """
        self.__gateway    = gateway
        self.__threshold  = threshold
        self.__max_claims = max_claims
        self.__cache      = {}
        self.__lock       = threading.Lock()

        for caption in (cache or []):
            key = (caption.item_id, caption.thumbnail_ref, caption.backend_id)
            self.__cache[key] = caption

    @property
    def captions(self):
        with self.__lock:
            return sorted(self.__cache.values(), key=lambda c: c.item_id)

    def draft_caption(self, item, thumbnail_ref=None):
        if thumbnail_ref is None:
            thumbnail_ref = item.thumbnail_ref
        if thumbnail_ref is None:
            raise NoThumbnailError('Item {} has no thumbnail'.format(
                item.item_id))
        resp = self.__gateway.complete('caption',
                                       {'title'         : item.title,
                                        'thumbnail_ref' : thumbnail_ref,
                                        'item_id'       : item.item_id})
        return resp.parsed['caption']

    def decompose_claims(self, draft):
        if draft is None or draft.strip() == '':
            raise ValidationError('Cannot decompose an empty caption')
        resp   = self.__gateway.complete('claims',
                                         {'draft'      : draft,
                                          'max_claims' : self.__max_claims})
        claims = resp.parsed['claim'][:self.__max_claims]
        return [AtomicClaim(c) for c in claims]

    def score_claim(self, claim, thumbnail_ref):
        """Returns a copy of claim with p_yes and p_no set. """

        text = claim.text if isinstance(claim, AtomicClaim) else claim
        resp = self.__gateway.complete('claim_score',
                                       {'claim'         : text,
                                        'thumbnail_ref' : thumbnail_ref})
        p_yes = _clamp(resp.parsed['yes'], 'yes')
        p_no  = resp.parsed['no']

        if p_no is None:
            p_no = 1 - p_yes
            log.debug('Claim "%s" has no p_no, using 1 - p_yes', text)
        else:
            p_no = _clamp(p_no, 'no')

        total = p_yes + p_no
        if total > 1 + 1e-9:
            log.warning('Claim "%s" probabilities sum to %s, normalising',
                        text, total)
            p_yes = p_yes / total
            p_no  = p_no  / total

        return AtomicClaim(text, p_yes, p_no)

    def combine_caption(self, draft, claims):
        """Rewrite the draft given scored claims. Without claims the draft
        is returned unchanged.
        """
        if len(claims) == 0:
            return draft

        lines = []
        for claim in claims:
            line = '- {} (yes: {:.2f}, no: {:.2f})'.format(
                claim.text, claim.p_yes, claim.p_no)
            if claim.p_yes < self.__threshold:
                line += ' REMOVE'
            lines.append(line)

        resp = self.__gateway.complete('combine',
                                       {'draft'  : draft,
                                        'claims' : '\n'.join(lines)})
        return resp.parsed['caption']

    def caption_item(self, item, thumbnail_ref=None):
        """Run the whole pipeline for one item, or return the cached
        caption.
        """

        if thumbnail_ref is None:
            thumbnail_ref = item.thumbnail_ref

        key = (item.item_id, thumbnail_ref, self.__gateway.backend_id)
        with self.__lock:
            if key in self.__cache:
                return self.__cache[key]

        draft   = self.draft_caption(item, thumbnail_ref)
        claims  = self.decompose_claims(draft)
        claims  = [self.score_claim(c, thumbnail_ref) for c in claims]
        final   = self.combine_caption(draft, claims)
        caption = Caption(item_id=item.item_id,
                          thumbnail_ref=thumbnail_ref,
                          draft=draft,
                          claims=tuple(claims),
                          final=final,
                          backend_id=self.__gateway.backend_id)

        with self.__lock:
            caption = self.__cache.setdefault(key, caption)
        return caption


def caption_items(captioner,
                  items,
                  thumbnails=None,
                  workers=1,
                  progress=None):
    """Caption many items on a worker pool.

    :arg captioner:  :class:`Captioner`
    :arg items:      Sequence of :class:`simuser.dataset.Item` objects
    :arg thumbnails: Optional dict of ``{item_id : thumbnail_ref}``
                     overriding the items' own thumbnails
    :returns:        A tuple containing a dict of ``{item_id : Caption}``
                     and a dict of ``{item_id : error message}``
    """

    if thumbnails is None:
        thumbnails = {}

    items    = sorted(items, key=lambda i: i.item_id)
    captions = {}
    failures = {}

    def run(item):
        return captioner.caption_item(item, thumbnails.get(item.item_id))

    with futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        jobs = {pool.submit(run, item) : item for item in items}
        for done, job in enumerate(futures.as_completed(jobs), 1):
            item = jobs[job]
            try:
                captions[item.item_id] = job.result()
            except NoThumbnailError as e:
                log.debug('%s', e)
                failures[item.item_id] = str(e)
            except Exception as e:
                log.warning('Could not caption %s: %s', item.item_id, e)
                failures[item.item_id] = str(e)
            if progress is not None:
                progress.update(done, len(items))

    captions = {k : captions[k] for k in sorted(captions)}
    failures = {k : failures[k] for k in sorted(failures)}
    return captions, failures


def save_captions(path, captions):
    """Write captions to a JSONL cache file, ordered by item id. """
    if isinstance(captions, dict):
        captions = captions.values()
    captions = sorted(captions, key=lambda c: c.item_id)
    write_jsonl(path, [c.to_dict() for c in captions])


def load_captions(path):
    """Load a caption cache file. Returns ``{item_id : Caption}``. """
    return {r['item_id'] : Caption.from_dict(r) for r in read_jsonl(path)}


def load_thumbnails(path, delimiter='\t'):
    """Load an alternative thumbnail table with columns ``item_id`` and
    ``thumbnail``. Returns ``{item_id : thumbnail_ref}``.
    """
    frame = pd.read_csv(path, sep=delimiter, dtype=str,
                        keep_default_na=False, encoding='utf-8')
    for col in ('item_id', 'thumbnail'):
        if col not in frame.columns:
            raise ValidationError('{}: missing column {}'.format(path, col))
    return {r.item_id.strip() : r.thumbnail.strip()
            for r in frame.itertuples(index=False)
            if r.item_id.strip() != '' and r.thumbnail.strip() != ''}
