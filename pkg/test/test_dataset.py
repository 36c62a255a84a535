#!/usr/bin/env python
#
# test_dataset.py -
#


import os.path as op
import textwrap as tw

import numpy as np
import pytest

import simuser.dataset as ds
from simuser.common import tempdir
from simuser.errors import (ValidationError,
                            ParseError,
                            InsufficientDataError,
                            UndefinedAggregateError)

from . import RATINGS, ITEMS, USERS, PERSONALITY, ixn, fixture_dataset


def _write(path, text):
    with open(path, 'wt') as f:
        f.write(tw.dedent(text).lstrip())
    return path


def test_load_fixture():
    data = fixture_dataset()
    assert len(data)        == 100
    assert data.users       == ['1', '2', '3', '4', '5']
    assert len(data.items)  == 20
    assert data.genres      == ['Action', 'Comedy', 'Drama', 'Horror',
                                'Romance']

    item = data.item('2')
    assert item.title           == 'Laughing Gas'
    assert item.genres          == ('Drama', 'Romance')
    assert item.review_count    == 20
    assert item.people          == ('Cy Moss', 'Di Hart')
    assert item.thumbnail_ref   == 'https://img.example.org/2.jpg'
    assert item.describe()      == 'Laughing Gas (Drama, Romance)'
    assert item.semantic_text() == 'Laughing Gas Drama Romance'

    with pytest.raises(ValidationError):
        data.item('999')

    hist = data.history('3')
    assert [i.item_id for i in hist] == [str(i) for i in range(1, 21)]

    # an empty interaction list is searched, not replaced
    assert data.history('3', []) == []
    train = ds.time_split(data).train
    assert len(data.history('3', train)) == 16


def test_load_interactions_errors():
    with tempdir():
        _write('bad_rating.tsv', """
        user_id\titem_id\trating\ttimestamp
        1\t1\t4\t10
        1\t2\t6\t11
        """)
        with pytest.raises(ValidationError):
            ds.load_interactions('bad_rating.tsv')

        _write('bad_ts.tsv', """
        user_id\titem_id\trating\ttimestamp
        1\t1\t4\t10
        1\t2\t4\tlater
        """)
        with pytest.raises(ParseError) as e:
            ds.load_interactions('bad_ts.tsv')
        assert e.value.lineno == 3

        _write('repeat.tsv', """
        user_id\titem_id\trating\ttimestamp
        1\t1\t4\t10
        1\t1\t3\t10
        """)
        with pytest.raises(ValidationError):
            ds.load_interactions('repeat.tsv')

        _write('nocol.tsv', """
        user_id\titem_id\trating
        1\t1\t4
        """)
        with pytest.raises(ParseError):
            ds.load_interactions('nocol.tsv')

        with pytest.raises(IOError):
            ds.load_interactions('missing.tsv')


def test_load_dataset_unknown_item():
    with tempdir():
        _write('ratings.tsv', """
        user_id\titem_id\trating\ttimestamp
        1\t1\t4\t10
        1\t99\t3\t11
        """)
        _write('items.tsv', """
        item_id\ttitle\tgenres
        1\tOne\tDrama
        """)
        with pytest.raises(ValidationError):
            ds.load_dataset('ratings.tsv', 'items.tsv')


def test_load_items_genres():
    with tempdir():
        _write('items.csv', """
        item_id,title,genres
        1,One,Drama|Drama|Comedy
        2,Two,(no genres listed)
        """)
        items = ds.load_items('items.csv', ',')
        assert items[0].genres == ('Drama', 'Comedy')
        assert items[1].genres == ()
        assert items[1].describe() == 'Two (unknown genre)'


def test_time_split_fixture():
    split = ds.time_split(fixture_dataset())

    assert len(split.train)      == 80
    assert len(split.validation) == 10
    assert len(split.test)       == 10

    assert {i.item_id for i in split.train} == \
           {str(i) for i in range(1, 17)}
    assert {i.item_id for i in split.validation} == {'17', '18'}
    assert {i.item_id for i in split.test}       == {'19', '20'}

    # time order is preserved, and nothing is lost
    last = max(i.timestamp for i in split.train)
    assert all(i.timestamp > last for i in split.validation)
    assert len(set(split.train + split.validation + split.test)) == 100


def test_time_split_ties_and_floor():
    ixns = [ixn(u, 'a', 3, 5) for u in 'edcba'] + \
           [ixn('a', i, 3, 6) for i in 'zyxwv'] + \
           [ixn('b', 'q', 3, 7)]
    split = ds.time_split(ixns, (0.5, 0.3, 0.2))

    # 11 interactions - 5 train, 3 validation, 3 test
    assert len(split.train)      == 5
    assert len(split.validation) == 3
    assert len(split.test)       == 3
    assert [i.user_id for i in split.train] == ['a', 'b', 'c', 'd', 'e']
    assert [i.item_id for i in split.validation] == ['v', 'w', 'x']


def test_time_split_errors():
    ixns = [ixn('u', str(i), 3, i) for i in range(20)]
    with pytest.raises(ValidationError):
        ds.time_split(ixns, (0.5, 0.5, 0.5))
    with pytest.raises(ValidationError):
        ds.time_split(ixns, (0.5, 0.5))
    with pytest.raises(InsufficientDataError):
        ds.time_split(ixns[:9])


def test_split_write():
    split = ds.time_split(fixture_dataset())
    with tempdir():
        paths = split.write('splits')
        assert [op.basename(p) for p in paths] == \
            ['train.tsv', 'validation.tsv', 'test.tsv']
        train = ds.load_interactions(paths[0])
        assert train == list(split.train)


def test_aggregated_rating():
    ixns = [ixn('a', '1', 5, 1),
            ixn('b', '1', 2, 2),
            ixn('a', '1', 3, 3),   # replaces a's earlier rating
            ixn('c', '2', 4, 4)]

    assert ds.aggregated_rating(ixns, '1') == pytest.approx(2.5)
    assert ds.aggregated_ratings(ixns)     == {'1' : 2.5, '2' : 4.0}

    with pytest.raises(UndefinedAggregateError):
        ds.aggregated_rating(ixns, '3')

    assert ds.aggregated_ratings([]) == {}


def test_aggregated_fixture():
    # every fixture item is rated once each 1-5
    agg = ds.aggregated_ratings(fixture_dataset().interactions)
    assert len(agg) == 20
    assert all(v == pytest.approx(3.0) for v in agg.values())


def test_user_average_rating():
    ixns = [ixn('a', '1', 5, 1), ixn('a', '2', 2, 2)]
    assert ds.user_average_rating(ixns) == pytest.approx(3.5)
    with pytest.raises(UndefinedAggregateError):
        ds.user_average_rating([])


def test_latest_interactions():
    ixns = [ixn('a', '1', 5, 3),
            ixn('a', '1', 1, 1),
            ixn('b', '1', 2, 2)]
    latest = ds.latest_interactions(ixns)
    assert latest == [ixn('b', '1', 2, 2), ixn('a', '1', 5, 3)]


def test_item_popularity_and_stats():
    data  = fixture_dataset()
    pop   = ds.item_popularity(data.interactions)
    assert all(v == 5 for v in pop.values())

    stats = ds.dataset_stats(data)
    assert stats['users']           == 5
    assert stats['items']           == 20
    assert stats['interactions']    == 100
    assert stats['density']         == pytest.approx(1.0)
    assert stats['first_timestamp'] == 1000
    assert stats['last_timestamp']  == 1099
    assert sum(stats['rating_histogram'].values()) == 100


def test_save_items_roundtrip_optional_columns():
    items = [ds.Item('1', 'One', ('Drama',)),
             ds.Item('2', 'Two', ('Comedy', 'Horror'), review_count=4)]
    with tempdir():
        ds.save_items('items.tsv', items)
        header = open('items.tsv').readline().strip().split('\t')
        assert header == ['item_id', 'title', 'genres', 'review_count']
        loaded = ds.load_items('items.tsv')
        assert loaded[0].review_count is None
        assert loaded[1].review_count == 4
        assert loaded[1].genres == ('Comedy', 'Horror')


def test_load_users_and_personality():
    users = ds.load_users(USERS)
    assert users['3'] == (18, 'K-12 student')
    assert users['2'] == (35, 'programmer')

    traits = ds.load_personality(PERSONALITY)
    assert np.allclose(traits['1'], [1, 0.5, 0, 0.5, 1])
    assert np.allclose(traits['4'], [1, 1, 1, 0, 0])

    traits = ds.load_personality(PERSONALITY, scale=(0, 5))
    assert np.allclose(traits['2'], [0.2, 1, 0.6, 0.2, 0.6])
