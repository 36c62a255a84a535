#!/usr/bin/env python
#
# prompts.py - Prompt template registry and output schema parser.
#
"""Prompt templates used by simuser agents.

Every LLM call made by simuser goes through a :class:`PromptTemplate`,
looked up by its tag. A template has a body with named ``{placeholders}``
and an :class:`OutputSchema` describing the tagged fields the reply must
contain, e.g.::

    RATING: 4
    FEELING: Tense and well paced.

Field names are matched case-insensitively anywhere in the reply, so several
fields may share one line (``RATING: 5, FEELING: ...``). A description of
the expected format is appended to every rendered prompt.
"""


import                dataclasses
import                logging
import                re
import                string

from simuser.errors import TemplateError, LlmFormatError


log = logging.getLogger(__name__)


RETRY_INSTRUCTION = 'You have one more chance to provide the correct answer.'
"""Appended to a prompt when the first reply violates its output schema. """


NUMBER = re.compile(r'-?(?:\d+(?:\.\d*)?|\.\d+)')
"""Leading number of a numeric field value - ``4``, ``4.5``, ``4.`` or
``.9``.
"""


@dataclasses.dataclass(frozen=True)
class Field:
    """A single tagged field in an LLM reply.

    :arg name:     Field name, written upper case in prompts.
    :arg kind:     One of ``int``, ``float``, ``choice``, ``text`` or
                   ``list`` (comma-separated).
    :arg low:      Inclusive lower bound for numeric fields.
    :arg high:     Inclusive upper bound for numeric fields.
    :arg choices:  Allowed values for ``choice`` fields.
    :arg required: Whether the field must be present.
    :arg repeated: If True, every occurrence is collected into a list.
    :arg hint:     Text shown in the format description.
    """
    name     : str
    kind     : str   = 'text'
    low      : float = None
    high     : float = None
    choices  : tuple = ()
    required : bool  = True
    repeated : bool  = False
    hint     : str   = None

    def describe(self):
        if self.hint is not None:
            value = self.hint
        elif self.kind in ('int', 'float') and self.low is not None:
            value = '<{} {:g}-{:g}>'.format(
                'integer' if self.kind == 'int' else 'number',
                self.low, self.high)
        elif self.kind == 'choice':
            value = '<one of {}>'.format(' | '.join(self.choices))
        elif self.kind == 'list':
            value = '<comma-separated list>'
        else:
            value = '<text>'
        line = '{}: {}'.format(self.name.upper(), value)
        if self.repeated:
            line += '  (one per line, repeat as needed)'
        if not self.required:
            line += '  (optional)'
        return line

    def convert(self, value):
        """Convert one raw value of this field, raising a
        :exc:`LlmFormatError` if it is invalid.
        """

        value = value.strip().rstrip(',;').strip()

        if value == '':
            raise LlmFormatError('Empty value for {}'.format(self.name))

        if self.kind in ('int', 'float'):
            match = NUMBER.match(value)
            if match is None:
                raise LlmFormatError('{} is not a number: {}'.format(
                    self.name, value))
            number = float(match.group())
            if self.kind == 'int':
                if not number.is_integer():
                    raise LlmFormatError('{} is not an integer: {}'.format(
                        self.name, value))
                number = int(number)
            if (self.low  is not None and number < self.low) or \
               (self.high is not None and number > self.high):
                raise LlmFormatError('{} out of range {}-{}: {}'.format(
                    self.name, self.low, self.high, number))
            return number

        if self.kind == 'choice':
            first = re.split(r'[\s,;.:]+', value)[0].strip('[]"\'').lower()
            for choice in self.choices:
                if first == choice.lower():
                    return choice
            raise LlmFormatError('{} must be one of {}: {}'.format(
                self.name, self.choices, value))

        if self.kind == 'list':
            items = [v.strip().strip('"\'') for v in value.split(',')]
            items = [v for v in items if v not in ('', 'none', 'None')]
            return items

        return value


class OutputSchema(object):
    """A set of :class:`Field` objects which an LLM reply must contain. """

    def __init__(self, *fields):
        self.__fields = list(fields)
        names         = '|'.join(re.escape(f.name) for f in self.__fields)
        self.__regex  = re.compile(r'(?<![\w-])({})\s*:'.format(names),
                                   re.IGNORECASE)

    @property
    def fields(self):
        return list(self.__fields)

    def describe(self):
        lines = ['Answer using exactly the following format:']
        lines.extend(f.describe() for f in self.__fields)
        return '\n'.join(lines)

    def parse(self, text):
        """Parse a reply. Returns a dict of ``{field_name : value}``, with
        repeated fields as lists, and missing optional fields as None (or
        an empty list). Raises a :exc:`LlmFormatError` if a required field
        is missing or a value is invalid.
        """

        if text is None:
            text = ''

        byname  = {f.name.lower() : f for f in self.__fields}
        raw     = {name : [] for name in byname}
        matches = list(self.__regex.finditer(text))

        for i, match in enumerate(matches):
            field = byname[match.group(1).lower()]
            end   = matches[i + 1].start() if i + 1 < len(matches) \
                    else len(text)
            value = text[match.end():end]

            # text values may span lines, everything else ends at a newline
            if field.kind != 'text' or field.repeated:
                value = value.split('\n')[0]
            raw[field.name.lower()].append(value)

        parsed = {}
        for name, field in byname.items():
            values = raw[name]
            if len(values) == 0:
                if field.required:
                    raise LlmFormatError('Missing field {}'.format(
                        field.name.upper()), raw_text=text)
                parsed[name] = [] if field.repeated else None
                continue
            if field.repeated:
                parsed[name] = [field.convert(v) for v in values]
            else:
                parsed[name] = field.convert(values[0])

        return parsed


@dataclasses.dataclass(frozen=True)
class PromptTemplate:
    """A named prompt with an output schema. """
    tag    : str
    body   : str
    schema : OutputSchema

    @property
    def placeholders(self):
        """Set of placeholder names used in the body. """
        names = set()
        for _, name, _, _ in string.Formatter().parse(self.body):
            if name is not None and name != '':
                names.add(name)
        return names

    def render(self, bindings):
        """Substitute bindings into the body, and append the format
        description. Bindings not used by the body are ignored.
        """
        missing = sorted(self.placeholders - set(bindings))
        if len(missing) > 0:
            raise TemplateError('Template {} is missing binding(s): '
                                '{}'.format(self.tag, ', '.join(missing)))
        values = {k : str(bindings[k]) for k in self.placeholders}
        body   = self.body.format(**values)
        return '{}\n\n{}'.format(body.strip(), self.schema.describe())


_REGISTRY = {}


def register(template):
    """Add a template to the registry, replacing any with the same tag. """
    _REGISTRY[template.tag] = template
    return template


def get_template(tag):
    """Return the template registered under tag. """
    try:
        return _REGISTRY[tag]
    except KeyError:
        raise TemplateError('Unknown prompt template: {}'.format(tag))


def available_tags():
    return tuple(sorted(_REGISTRY))


def _t(tag, body, *fields):
    return register(PromptTemplate(tag, body, OutputSchema(*fields)))


YES_NO = ('yes', 'no')
ACTIONS = ('EXIT', 'NEXT', 'PREVIOUS', 'CLICK')


_t('probe',
   'Reply with a short greeting. {message}',
   Field('reply'))


# Persona matching

_t('persona_summary',
   'Here are movies a user has rated.\n'
   'Movies the user liked:\n{liked}\n'
   'Movies the user disliked:\n{disliked}\n'
   'Produce a short summary of this user\'s tastes and preferences.',
   Field('summary'))


_t('persona_candidates',
   'A user has the following taste summary:\n{summary}\n'
   'Some of the movies they rated:\n{history}\n'
   'Propose {m} different personas that could belong to this user. '
   'Choose the age from: {ages}. '
   'Choose the occupation from: {occupations}. '
   'Rate each of the personality traits {traits} on a scale from 1 '
   '(low) to 3 (high). Write each persona on one line as '
   '"age=<age>; occupation=<occupation>; {trait_format}".',
   Field('persona', repeated=True,
         hint='age=<age>; occupation=<occupation>; <trait>=<1-3>; ...'))


_t('persona_rate_subset',
   'You are the following person:\n{persona}\n'
   'How much would you enjoy the following movies, as a whole, on a '
   'scale from 1 to 5?\n{items}',
   Field('rating', 'int', 1, 5))


# Memory

_t('self_ask',
   'You are trying to remember things relevant to this question:\n'
   '{query}\n'
   'Write {n} short follow-up questions which would help you recall '
   'relevant past experiences.',
   Field('question', required=False, repeated=True))


_t('reflection_topics',
   '{persona}\n'
   'Here are your recent records, numbered:\n{records}\n'
   'What are the most salient high-level topics you should reflect on?',
   Field('topic', required=False, repeated=True))


_t('reflection_insights',
   '{persona}\n'
   'Here are your recent records, numbered:\n{records}\n'
   'Topic: {topic}\n'
   'What high-level insights can you infer from these records? Cite the '
   'records each insight is based on, e.g. "[cites: 0, 2]".',
   Field('insight', repeated=True))


# Brain

_t('watch_decision',
   '{persona}\n'
   'Your relevant memories:\n{memories}\n'
   'Related items you know about:\n{evidence}\n'
   'The recommender system shows you the following items on page '
   '{page}:\n{items}\n'
   '{previous}'
   'Decide which items you want to watch, and which you want to skip. '
   'Refer to items by their label (e.g. #1). Check whether your decision '
   'contradicts your persona or memories, and if it does describe the '
   'contradiction, otherwise answer "none".',
   Field('watch', 'list', required=False),
   Field('skip',  'list', required=False),
   Field('contradiction', required=False),
   Field('evidence',      required=False))


_t('rate_item',
   '{persona}\n'
   'Your relevant memories:\n{memories}\n'
   'How you are connected to this item:\n{paths}\n'
   'You watched:\n{item}\n'
   'Rate the item from 1 to 5 and explain how you feel about it.',
   Field('rating', 'int', 1, 5),
   Field('feeling'))


_t('satisfaction',
   '{persona}\n'
   'Your browsing history so far:\n{history}\n'
   'How satisfied are you with the recommendations so far, on a scale '
   'from 1 to 5?',
   Field('satisfaction', 'int', 1, 5),
   Field('reason', required=False))


_t('fatigue',
   '{persona}\n'
   'You have viewed {pages} page(s) of recommendations. Your fatigue is '
   'probably {fatigue_hint}. How tired are you of browsing?',
   Field('fatigue', 'choice', choices=('low', 'medium', 'high')))


_t('emotion',
   '{persona}\n'
   'Your satisfaction is {satisfaction} out of 5 and your fatigue is '
   '{fatigue}. Describe your current emotion with a single word, such as '
   'EXCITED, CURIOUS, NEUTRAL, BORED or FRUSTRATED.',
   Field('emotion'))


_t('action',
   '{persona}\n'
   'You are on page {page}. Your browsing history:\n{history}\n'
   'Items on this page:\n{items}\n'
   'Satisfaction: {satisfaction}/5. Fatigue: {fatigue}. '
   'Emotion: {emotion}.\n'
   'Choose your next action from: {legal}. To see an extended '
   'description of an item, choose CLICK and give its label as TARGET.',
   Field('action', 'choice', choices=ACTIONS),
   Field('target', required=False),
   Field('reason', required=False))


_t('click_detail',
   '{persona}\n'
   'You clicked on an item to see more details:\n{item}\n'
   'Would you like to watch it?',
   Field('engage', 'choice', choices=YES_NO),
   Field('reason', required=False))


_t('causal_questions',
   '{persona}\n'
   'Your browsing history:\n{history}\n'
   'You are about to choose {action}. Write short "what would happen if" '
   'questions which test whether this is the right action, e.g. "What '
   'would happen if you exited the system now?"',
   Field('question', required=False, repeated=True))


_t('causal_outcome',
   '{persona}\n'
   'Your browsing history:\n{history}\n'
   'You are about to choose {action}.\n'
   'Question: {question}\n'
   'Estimate how consistent the action is with your interests, as a '
   'score from 0 (inconsistent) to 1 (consistent), and give a short '
   'verdict.',
   Field('score', 'float', 0, 10, hint='<number 0-1>'),
   Field('verdict'))


_t('causal_action',
   '{persona}\n'
   'Your browsing history:\n{history}\n'
   'You planned to choose {action}, but considering the following:\n'
   '{probes}\n'
   'Choose your next action from: {legal}.',
   Field('action', 'choice', choices=ACTIONS),
   Field('target', required=False),
   Field('reason', required=False))


_t('exit_interview',
   '{persona}\n'
   'Your browsing history:\n{history}\n'
   'You have finished using the recommender system. How satisfied are '
   'you with it, on a scale from 1 to 10? Also give your opinion of the '
   'recommendations on a scale from 1 to 5, and explain why.',
   Field('rating',  'int', 1, 10),
   Field('opinion', 'int', 1, 5),
   Field('reason'))


# Perception

_t('caption',
   'Describe the thumbnail of "{title}" ({thumbnail_ref}). Capture the '
   'emotional tone, visual details and any other element which might '
   'influence a viewer.',
   Field('caption'))


_t('claims',
   'Decompose the following caption into at most {max_claims} atomic '
   'claims, each describing a specific, factual statement:\n{draft}',
   Field('claim', repeated=True))


_t('claim_score',
   'Look at the thumbnail ({thumbnail_ref}). Is the following statement '
   'true? "{claim}" Give your confidence in yes and in no.',
   Field('yes', 'float'),
   Field('no',  'float', required=False))


_t('combine',
   'Here is a draft caption:\n{draft}\n'
   'Here are atomic claims about the thumbnail, with the confidence that '
   'each is true:\n{claims}\n'
   'Rewrite the caption, removing every statement marked REMOVE.',
   Field('caption'))


# Tasks

_t('believability',
   '{persona}\n'
   'Your relevant memories:\n{memories}\n'
   'Have you interacted with the following item?\n{item}',
   Field('answer', 'choice', choices=YES_NO))


_t('accept_item',
   '{persona}\n'
   'Your relevant memories:\n{memories}\n'
   'You are recommended the following item:\n{item}\n'
   'Would you accept this recommendation?',
   Field('answer', 'choice', choices=YES_NO))


_t('genre_classify',
   'Which of the genres {genres} does "{title}" belong to?',
   Field('genre', 'list'))
