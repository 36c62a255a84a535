#!/usr/bin/env python
#
# test_prompts.py -
#


import pytest

import simuser.prompts as prompts
from simuser.errors import TemplateError, LlmFormatError


def test_every_template_renders():
    for tag in prompts.available_tags():
        tmpl     = prompts.get_template(tag)
        bindings = {name : '<{}>'.format(name) for name in tmpl.placeholders}
        prompt   = tmpl.render(bindings)
        assert 'Answer using exactly the following format:' in prompt
        for name in tmpl.placeholders:
            assert '<{}>'.format(name) in prompt


def test_render_missing_binding():
    tmpl = prompts.get_template('rate_item')
    with pytest.raises(TemplateError):
        tmpl.render({'persona' : 'me'})


def test_unknown_template():
    with pytest.raises(TemplateError):
        prompts.get_template('no_such_template')


def test_parse_rating_reply():
    schema = prompts.get_template('rate_item').schema

    parsed = schema.parse('RATING: 4\nFEELING: Tense and\nwell paced.')
    assert parsed == {'rating' : 4, 'feeling' : 'Tense and\nwell paced.'}

    # same line, lower case, trailing punctuation
    parsed = schema.parse('Sure! rating: 5, feeling: Loved it')
    assert parsed == {'rating' : 5, 'feeling' : 'Loved it'}

    with pytest.raises(LlmFormatError):
        schema.parse('RATING: 6\nFEELING: great')
    with pytest.raises(LlmFormatError):
        schema.parse('RATING: four\nFEELING: great')
    with pytest.raises(LlmFormatError):
        schema.parse('FEELING: great')
    with pytest.raises(LlmFormatError):
        schema.parse(None)


def test_numeric_fields():
    rating = prompts.Field('rating', 'int', 1, 5)
    assert rating.convert('4')       == 4
    assert rating.convert('4.0')     == 4
    assert rating.convert('4 stars') == 4
    assert rating.convert('4.')      == 4
    with pytest.raises(LlmFormatError):
        rating.convert('4.5')
    with pytest.raises(LlmFormatError):
        rating.convert('.5')

    score = prompts.Field('yes', 'float', 0, 1)
    assert score.convert('.9')  == pytest.approx(0.9)
    assert score.convert('0.9') == pytest.approx(0.9)
    assert score.convert('1')   == 1
    with pytest.raises(LlmFormatError):
        score.convert('-.5')
    with pytest.raises(LlmFormatError):
        score.convert('.')


def test_parse_optional_and_lists():
    schema = prompts.get_template('watch_decision').schema

    parsed = schema.parse('WATCH: #1, #3\nSKIP: none\nCONTRADICTION: none')
    assert parsed['watch']         == ['#1', '#3']
    assert parsed['skip']          == []
    assert parsed['contradiction'] == 'none'
    assert parsed['evidence']      is None

    parsed = schema.parse('I am not sure.')
    assert parsed['watch'] is None
    assert parsed['skip']  is None


def test_parse_choice():
    schema = prompts.get_template('action').schema

    parsed = schema.parse('ACTION: next. I want more.\nREASON: bored')
    assert parsed['action'] == 'NEXT'
    assert parsed['target'] is None
    assert parsed['reason'] == 'bored'

    parsed = schema.parse('ACTION: [CLICK]\nTARGET: #2')
    assert parsed['action'] == 'CLICK'
    assert parsed['target'] == '#2'

    with pytest.raises(LlmFormatError):
        schema.parse('ACTION: dance')


def test_parse_repeated():
    schema = prompts.get_template('reflection_insights').schema
    parsed = schema.parse('INSIGHT: one [cites: 0]\n'
                          'INSIGHT: two [cites: 1, 2]\n')
    assert parsed['insight'] == ['one [cites: 0]', 'two [cites: 1, 2]']

    schema = prompts.get_template('self_ask').schema
    assert schema.parse('nothing to ask') == {'question' : []}


def test_field_names_do_not_match_inside_words():
    # "no" must not match the start of "NOTE:"
    schema = prompts.get_template('claim_score').schema
    parsed = schema.parse('YES: 0.9\nNOTE: mostly sure')
    assert parsed == {'yes' : 0.9, 'no' : None}


def test_describe():
    desc = prompts.get_template('fatigue').schema.describe()
    assert 'FATIGUE: <one of low | medium | high>' in desc
    desc = prompts.get_template('exit_interview').schema.describe()
    assert 'RATING: <integer 1-10>' in desc
    assert 'OPINION: <integer 1-5>' in desc


def test_register_replaces():
    orig = prompts.get_template('probe')
    try:
        prompts.register(prompts.PromptTemplate(
            'probe', 'Say {word}', prompts.OutputSchema(
                prompts.Field('reply'))))
        assert prompts.get_template('probe').placeholders == {'word'}
    finally:
        prompts.register(orig)
    assert prompts.get_template('probe') is orig
