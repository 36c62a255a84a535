#!/usr/bin/env python
#
# dataset.py - Loading, validating and splitting interaction datasets.
#
"""Interaction datasets in the MovieLens style.

A dataset is stored as two delimiter-separated UTF-8 text files with a
header row (the delimiter defaults to a tab):

 - a ratings file with columns ``user_id, item_id, rating, timestamp``
 - an items file with columns ``item_id, title, genres`` and optionally
   ``description, thumbnail, review_count, people, review_positive,
   review_negative``. Genres and people are separated by ``|``.

Identifiers are opaque strings. Once loaded, an :class:`InteractionDataset`
is never modified, so it can be shared between agent worker threads.
"""


import os.path     as op
import                collections
import                dataclasses
import                logging
import                math
import                os
import                re

import numpy  as np
import pandas as pd

from simuser.errors import (ValidationError,
                            ParseError,
                            InsufficientDataError,
                            UndefinedAggregateError)


log = logging.getLogger(__name__)


DEFAULT_DELIMITER = '\t'
"""Column delimiter used when none is given. """


RATING_COLUMNS = ['user_id', 'item_id', 'rating', 'timestamp']
"""Required ratings file columns, in the order they are written. """


ITEM_COLUMNS = ['item_id', 'title', 'genres']
"""Required items file columns. """


OPTIONAL_ITEM_COLUMNS = ['description',
                         'thumbnail',
                         'review_count',
                         'people',
                         'review_positive',
                         'review_negative']
"""Optional items file columns. """


LIKE_THRESHOLD    = 4
"""Ratings at or above this value are treated as "liked". """


DISLIKE_THRESHOLD = 2
"""Ratings at or below this value are treated as "disliked". """


@dataclasses.dataclass(frozen=True)
class Item:
    """An item in the catalogue. """
    item_id         : str
    title           : str
    genres          : tuple = ()
    description     : str   = None
    thumbnail_ref   : str   = None
    review_count    : int   = None
    people          : tuple = ()
    review_positive : str   = None
    review_negative : str   = None

    def describe(self):
        """Short one-line description used in prompts. """
        genres = ', '.join(self.genres) if self.genres else 'unknown genre'
        return '{} ({})'.format(self.title, genres)

    def semantic_text(self):
        """Text which is embedded to compare items semantically - the title
        followed by the genre list.
        """
        return '{} {}'.format(self.title, ' '.join(self.genres)).strip()


@dataclasses.dataclass(frozen=True, order=True)
class Interaction:
    """A single timestamped rating. """
    user_id   : str
    item_id   : str
    rating    : int
    timestamp : int

    def sort_key(self):
        """Key used for time ordering. Ties on the timestamp are broken by
        user then item identifier.
        """
        return (self.timestamp, self.user_id, self.item_id)


@dataclasses.dataclass(frozen=True)
class DatasetSplit:
    """Time-ordered train / validation / test partition. """
    train      : tuple
    validation : tuple
    test       : tuple

    def write(self, outdir, delimiter=DEFAULT_DELIMITER):
        """Save the three partitions as ``train.tsv``, ``validation.tsv``
        and ``test.tsv`` (the suffix follows the delimiter) in outdir.
        """
        suffix = 'tsv' if delimiter == '\t' else 'csv'
        paths  = []
        os.makedirs(outdir, exist_ok=True)
        for name in ('train', 'validation', 'test'):
            path = op.join(outdir, '{}.{}'.format(name, suffix))
            save_interactions(path, getattr(self, name), delimiter)
            paths.append(path)
        return paths


class InteractionDataset(object):
    """Immutable container for a set of interactions and the item table. """

    def __init__(self, interactions, items):
        """Create an InteractionDataset.

        :arg interactions: Sequence of :class:`Interaction` objects
        :arg items:        Sequence of :class:`Item` objects
        """
        self.__interactions = tuple(interactions)
        self.__items        = collections.OrderedDict(
            (i.item_id, i) for i in items)
        self.__users        = None

    def __len__(self):
        return len(self.__interactions)

    @property
    def interactions(self):
        return self.__interactions

    @property
    def items(self):
        """Dictionary of ``{item_id : Item}``. Do not modify it. """
        return self.__items

    @property
    def users(self):
        """Sorted list of all user identifiers. """
        if self.__users is None:
            self.__users = sorted({i.user_id for i in self.__interactions})
        return list(self.__users)

    @property
    def genres(self):
        """Sorted list of every genre label used in the item table. """
        genres = set()
        for item in self.__items.values():
            genres.update(item.genres)
        return sorted(genres)

    def item(self, item_id):
        try:
            return self.__items[item_id]
        except KeyError:
            raise ValidationError('Unknown item: {}'.format(item_id))

    def history(self, user_id, interactions=None):
        """Return the interactions of user_id, ordered by time. If
        interactions is given, it is searched instead of the full dataset.
        """
        if interactions is None:
            interactions = self.__interactions
        return user_history(interactions, user_id)


def _check_file(path):
    if not op.exists(path):
        raise IOError('File does not exist: {}'.format(path))


def _read_table(path, delimiter, required):
    """Read a delimited text file with pandas, keeping every value as a
    string. Returns the data frame; the line number of the row at frame
    index i is i + 2 (the header is line 1).
    """

    _check_file(path)

    try:
        frame = pd.read_csv(path,
                            sep=delimiter,
                            dtype=str,
                            keep_default_na=False,
                            skip_blank_lines=False,
                            encoding='utf-8',
                            engine='c')
    except pd.errors.EmptyDataError:
        raise ParseError('File is empty', 1, path)
    except pd.errors.ParserError as e:
        match  = re.search(r'line (\d+)', str(e))
        lineno = int(match.group(1)) if match else None
        raise ParseError('Malformed row [{}]'.format(e), lineno, path)

    frame.columns = [c.strip() for c in frame.columns]
    missing       = [c for c in required if c not in frame.columns]
    if len(missing) > 0:
        raise ParseError('Missing column(s) {}'.format(', '.join(missing)),
                         1, path)
    return frame


def _cell(value):
    """Normalise a cell read by _read_table - returns None for missing
    values, and a stripped string otherwise.
    """
    if not isinstance(value, str):
        return None
    value = value.strip()
    if value == '':
        return None
    return value


def _parse_int(value, column, lineno, path):
    value = _cell(value)
    if value is None:
        raise ParseError('Missing {} value'.format(column), lineno, path)
    try:
        return int(value)
    except ValueError:
        raise ParseError('Invalid {} value: {}'.format(column, value),
                         lineno, path)


def load_interactions(path, delimiter=DEFAULT_DELIMITER):
    """Load a ratings file, returning a list of :class:`Interaction`
    objects in file order.

    Raises a :exc:`ParseError` (with the line number) for malformed rows,
    and a :exc:`ValidationError` for ratings outside of 1-5, or for repeated
    (user, item, timestamp) triples.
    """

    frame        = _read_table(path, delimiter, RATING_COLUMNS)
    interactions = []
    seen         = set()

    for idx, row in enumerate(frame[RATING_COLUMNS].itertuples(index=False)):

        lineno = idx + 2
        values = [_cell(v) for v in row]

        # blank line
        if all(v is None for v in values):
            continue

        user_id, item_id = values[0], values[1]
        if user_id is None or item_id is None:
            raise ParseError('Missing user or item identifier', lineno, path)

        rating    = _parse_int(row[2], 'rating',    lineno, path)
        timestamp = _parse_int(row[3], 'timestamp', lineno, path)

        if rating < 1 or rating > 5:
            raise ValidationError('{}: rating {} out of range 1-5 '
                                  '(line {})'.format(path, rating, lineno))

        ixn = Interaction(user_id, item_id, rating, timestamp)
        key = (user_id, item_id, timestamp)
        if key in seen:
            raise ValidationError('{}: repeated rating of {} by {} at '
                                  'time {} (line {})'.format(
                                      path, item_id, user_id,
                                      timestamp, lineno))
        seen.add(key)
        interactions.append(ixn)

    return interactions


def _split_list(value):
    value = _cell(value)
    if value is None or value == '(no genres listed)':
        return ()
    parts = [p.strip() for p in value.split('|')]
    parts = [p for p in parts if p != '']
    # drop duplicates, keep file order
    return tuple(collections.OrderedDict.fromkeys(parts))


def load_items(path, delimiter=DEFAULT_DELIMITER):
    """Load an items file, returning a list of :class:`Item` objects. """

    frame = _read_table(path, delimiter, ITEM_COLUMNS)
    items = []
    seen  = set()

    for idx, row in enumerate(frame.to_dict('records')):

        lineno  = idx + 2
        item_id = _cell(row.get('item_id'))
        title   = _cell(row.get('title'))

        if item_id is None and title is None:
            continue
        if item_id is None:
            raise ParseError('Missing item identifier', lineno, path)
        if item_id in seen:
            raise ValidationError('{}: duplicate item {} (line {})'.format(
                path, item_id, lineno))
        seen.add(item_id)

        review_count = _cell(row.get('review_count'))
        if review_count is not None:
            review_count = _parse_int(review_count, 'review_count',
                                      lineno, path)
            if review_count < 0:
                raise ValidationError('{}: negative review_count '
                                      '(line {})'.format(path, lineno))

        items.append(Item(
            item_id=item_id,
            title=title or item_id,
            genres=_split_list(row.get('genres')),
            description=_cell(row.get('description')),
            thumbnail_ref=_cell(row.get('thumbnail')),
            review_count=review_count,
            people=_split_list(row.get('people')),
            review_positive=_cell(row.get('review_positive')),
            review_negative=_cell(row.get('review_negative'))))

    return items


def load_dataset(ratings_path, items_path, delimiter=DEFAULT_DELIMITER):
    """Load a dataset from a ratings file and an items file.

    Every item referenced by the ratings file must be present in the items
    file, otherwise a :exc:`ValidationError` is raised.
    """

    interactions = load_interactions(ratings_path, delimiter)
    items        = load_items(items_path, delimiter)
    known        = {i.item_id for i in items}
    unknown      = sorted({i.item_id for i in interactions} - known)

    if len(unknown) > 0:
        raise ValidationError('{} item(s) are rated but missing from {}: '
                              '{}'.format(len(unknown), items_path,
                                          ', '.join(unknown[:10])))

    log.debug('Loaded %i interactions over %i items from %s / %s',
              len(interactions), len(items), ratings_path, items_path)

    return InteractionDataset(interactions, items)


def save_interactions(path, interactions, delimiter=DEFAULT_DELIMITER):
    """Write interactions in the ratings file format. """
    frame = to_frame(interactions)
    frame.to_csv(path, sep=delimiter, index=False, encoding='utf-8')


def save_items(path, items, delimiter=DEFAULT_DELIMITER):
    """Write items in the items file format. Optional columns are only
    written if at least one item has a value for them.
    """

    rows = []
    for item in items:
        rows.append({
            'item_id'         : item.item_id,
            'title'           : item.title,
            'genres'          : '|'.join(item.genres),
            'description'     : item.description,
            'thumbnail'       : item.thumbnail_ref,
            'review_count'    : item.review_count,
            'people'          : '|'.join(item.people),
            'review_positive' : item.review_positive,
            'review_negative' : item.review_negative,
        })

    columns = list(ITEM_COLUMNS)
    for col in OPTIONAL_ITEM_COLUMNS:
        if any(r[col] not in (None, '') for r in rows):
            columns.append(col)

    frame = pd.DataFrame(rows, columns=columns)
    if 'review_count' in columns:
        frame['review_count'] = frame['review_count'].astype('Int64')
    frame.to_csv(path, sep=delimiter, index=False, encoding='utf-8')


def to_frame(interactions):
    """Convert a sequence of interactions into a pandas DataFrame. """
    return pd.DataFrame([dataclasses.astuple(i) for i in interactions],
                        columns=RATING_COLUMNS)


def user_history(interactions, user_id):
    """Return the interactions of user_id, ordered by time. """
    history = [i for i in interactions if i.user_id == user_id]
    return sorted(history, key=Interaction.sort_key)


def latest_interactions(interactions):
    """Return one interaction per (user, item) pair - the most recent one.
    Repeated ratings of the same item by the same user are collapsed this
    way wherever y_ui is needed.
    """
    latest = {}
    for ixn in sorted(interactions, key=Interaction.sort_key):
        latest[ixn.user_id, ixn.item_id] = ixn
    return sorted(latest.values(), key=Interaction.sort_key)


def time_split(interactions, fractions=(0.8, 0.1, 0.1)):
    """Split interactions by time into train, validation and test sets.

    Interactions are ordered by (timestamp, user_id, item_id); the first
    floor(f_train * N) go to train, the next floor(f_valid * N) go to
    validation, and the remainder to test.

    :arg interactions: An :class:`InteractionDataset` or a sequence of
                       interactions.
    :arg fractions:    Three fractions which sum to 1.
    """

    if isinstance(interactions, InteractionDataset):
        interactions = interactions.interactions

    fractions = tuple(float(f) for f in fractions)

    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError('Three non-negative fractions are required: '
                              '{}'.format(fractions))
    if abs(sum(fractions) - 1) > 1e-9:
        raise ValidationError('Split fractions must sum to 1: '
                              '{}'.format(fractions))

    n = len(interactions)
    if n < 10:
        raise InsufficientDataError('At least 10 interactions are needed '
                                    'for a split ({} given)'.format(n))

    ordered = sorted(interactions, key=Interaction.sort_key)
    ntrain  = int(math.floor(fractions[0] * n + 1e-9))
    nvalid  = int(math.floor(fractions[1] * n + 1e-9))

    return DatasetSplit(train=tuple(ordered[:ntrain]),
                        validation=tuple(ordered[ntrain:ntrain + nvalid]),
                        test=tuple(ordered[ntrain + nvalid:]))


def aggregated_rating(interactions, item_id):
    """Return R_i, the mean rating of item_id over all users who have rated
    it. Only the most recent rating of each user counts.
    """
    ratings = [i.rating for i in latest_interactions(interactions)
               if i.item_id == item_id]
    if len(ratings) == 0:
        raise UndefinedAggregateError('Item {} has no ratings'.format(item_id))
    return float(np.mean(ratings))


def aggregated_ratings(interactions):
    """Return a dict of ``{item_id : R_i}`` for every rated item. Equivalent
    to calling :func:`aggregated_rating` for each item.
    """
    latest = latest_interactions(interactions)
    if len(latest) == 0:
        return {}
    frame = to_frame(latest)
    means = frame.groupby('item_id')['rating'].mean()
    return {k : float(v) for k, v in means.items()}


def user_average_rating(interactions):
    """Return R-bar, the arithmetic mean of the given ratings (which are
    normally the ratings of a single user).
    """
    ratings = [i.rating for i in interactions]
    if len(ratings) == 0:
        raise UndefinedAggregateError('Cannot average an empty history')
    return float(np.mean(ratings))


def item_popularity(interactions):
    """Return a dict of ``{item_id : number of interactions}``. """
    return dict(collections.Counter(i.item_id for i in interactions))


def dataset_stats(dataset):
    """Return a dictionary of summary statistics for a dataset. """

    ixns    = dataset.interactions
    nusers  = len(dataset.users)
    nitems  = len(dataset.items)
    hist    = collections.Counter(i.rating for i in ixns)
    density = len(ixns) / (nusers * nitems) if nusers and nitems else 0.0

    if len(ixns) > 0:
        times = [i.timestamp for i in ixns]
        first = min(times)
        last  = max(times)
    else:
        first = last = None

    return {
        'users'            : nusers,
        'items'            : nitems,
        'interactions'     : len(ixns),
        'density'          : density,
        'genres'           : dataset.genres,
        'rating_histogram' : {str(r) : hist.get(r, 0) for r in range(1, 6)},
        'first_timestamp'  : first,
        'last_timestamp'   : last,
    }


def load_users(path, delimiter=DEFAULT_DELIMITER):
    """Load a users file with columns ``user_id, age, occupation``, as used
    to evaluate persona matching. Returns ``{user_id : (age, occupation)}``.
    """
    frame = _read_table(path, delimiter, ['user_id', 'age', 'occupation'])
    users = {}
    for idx, row in enumerate(frame.to_dict('records')):
        user_id = _cell(row['user_id'])
        if user_id is None:
            continue
        age            = _parse_int(row['age'], 'age', idx + 2, path)
        users[user_id] = (age, _cell(row['occupation']))
    return users


PERSONALITY_COLUMNS = ['openness',
                       'conscientiousness',
                       'extraversion',
                       'agreeableness',
                       'neuroticism']
"""Big Five trait columns expected in a personality file. """


def load_personality(path, delimiter=DEFAULT_DELIMITER, scale=None):
    """Load a personality file with columns ``user_id`` plus the five
    :data:`PERSONALITY_COLUMNS`. Values are normalised to [0, 1] using the
    (low, high) scale, which defaults to the range of the values in the
    file. Returns ``{user_id : numpy array of 5 values}``.
    """

    frame = _read_table(path, delimiter, ['user_id'] + PERSONALITY_COLUMNS)
    try:
        values = frame[PERSONALITY_COLUMNS].astype(float).to_numpy()
    except ValueError as e:
        raise ParseError('Non-numeric trait value [{}]'.format(e),
                         filename=path)

    if scale is None:
        scale = (values.min(), values.max())

    low, high = scale
    if high <= low:
        raise ValidationError('Invalid personality scale: {}'.format(scale))

    values = (values - low) / (high - low)
    ids    = [_cell(u) for u in frame['user_id']]
    return {u : v for u, v in zip(ids, values) if u is not None}
