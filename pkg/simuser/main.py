#!/usr/bin/env python
#
# main.py - The simuser command-line interface.
#
"""The ``simuser`` command.

::

    simuser dataset validate   ratings.tsv items.tsv
    simuser dataset split      ratings.tsv --fractions 0.8,0.1,0.1 --out splits/
    simuser gateway probe      --config run.json
    simuser persona match      --config run.json --user 1 --j 3 --rho 10 --out personas/
    simuser kg stats           --config run.json
    simuser kg similar         --config run.json --user 1 --item 10 --k 3 --alpha 0.8
    simuser perceive captions  --config run.json --out captions/
    simuser run                --config run.json --out run/
    simuser task believability --config run.json --out run/
    simuser report run/ --format table
"""


import                    argparse
import                    contextlib
import                    logging
import                    os
import                    sys
import                    traceback
import os.path         as op

import simuser.dataset     as ds
import simuser.gateway     as gw
import simuser.kg          as kg
import simuser.perception  as perception
import simuser.persona     as persona
import simuser.simulator   as simulator
import simuser.tasks       as tasks
from simuser.common import (__version__,
                            printmsg,
                            config_logging,
                            read_json,
                            write_json,
                            dumps,
                            Progress,
                            INFO,
                            IMPORTANT,
                            WARNING,
                            ERROR,
                            EMPHASIS,
                            UNDERLINE)


log = logging.getLogger(__name__)


COMMANDS = {
    'dataset'  : ['validate', 'split'],
    'gateway'  : ['probe'],
    'persona'  : ['match'],
    'kg'       : ['stats', 'similar'],
    'perceive' : ['captions'],
    'run'      : None,
    'task'     : list(tasks.TASKS) + [t.replace('_', '-') for t in tasks.TASKS
                                        if '_' in t],
    'report'   : None,
}


def split_fractions(value):
    """argparse type for the ``--fractions`` option - three comma
    separated numbers.
    """
    try:
        fractions = tuple(float(f) for f in value.split(','))
    except ValueError:
        fractions = ()
    if len(fractions) != 3:
        raise argparse.ArgumentTypeError(
            'Expected three comma separated fractions: {}'.format(value))
    return fractions


def parse_args(argv=None):
    """Parse command-line arguments, returns an argparse.Namespace object.
    """

    parser = argparse.ArgumentParser(prog='simuser')
    parser.add_argument('-v', '--version', action='version',
                        version=__version__)

    common = {
        'config'        : ('-c', {'metavar' : 'FILE'}),
        'out'           : ('-o', {'metavar' : 'DIR'}),
        'logfile'       : (None, {}),
        'debug'         : (None, {'action'  : 'store_true'}),
        'progress_file' : (None, {}),
        'workers'       : ('-w', {'type'    : int}),
        'seed'          : ('-s', {'type'    : int}),
        'ratings'       : (None, {'metavar' : 'FILE'}),
        'items'         : (None, {'metavar' : 'FILE'}),
    }

    helps = {
        'config'        : 'Run configuration file (JSON, // comments '
                          'allowed).',
        'out'           : 'Output directory.',
        'logfile'       : 'Log file (default: simuser.log in the output '
                          'directory, or a file in $TMPDIR).',
        'debug'         : 'Print debug messages to standard error.',
        'progress_file' : argparse.SUPPRESS,
        'workers'       : 'Worker cap (overrides worker_cap).',
        'seed'          : 'Random seed (overrides seed).',
        'ratings'       : 'Ratings file (overrides ratings).',
        'items'         : 'Items file (overrides items).',
    }

    def add_common(sub):
        for name, (short, kwargs) in common.items():
            flags = ['--{}'.format(name)]
            if short is not None:
                flags.insert(0, short)
            sub.add_argument(*flags, help=helps[name], **kwargs)

    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    for command, actions in COMMANDS.items():
        sub = commands.add_parser(command)
        if actions is not None:
            sub.add_argument('action', choices=actions)
        if command == 'report':
            sub.add_argument('run_dir')
            sub.add_argument('--format', default='table',
                             choices=['table', 'json', 'plot-data'])
        if command == 'gateway':
            sub.add_argument('--message', default='Are you there?')
        if command == 'dataset':
            sub.add_argument('files', nargs='*', metavar='FILE',
                             help='Ratings and items files (validate), or '
                                  'ratings file (split).')
            sub.add_argument('--fractions', type=split_fractions,
                             help='Train, validation and test fractions, '
                                  'e.g. 0.8,0.1,0.1 (overrides split).')
        if command == 'persona':
            sub.add_argument('--user', dest='users', action='append',
                             metavar='ID', help='Match this user (can be '
                             'repeated; default: the configured agents).')
            sub.add_argument('--j', type=int,
                             help='Scoring rounds (overrides persona_j).')
            sub.add_argument('--rho', type=int,
                             help='Interactions per scoring subset '
                                  '(overrides persona_rho).')
        if command == 'kg':
            sub.add_argument('--user')
            sub.add_argument('--item')
            sub.add_argument('--k', '--k2', dest='k', type=int,
                             help='Number of items (overrides k2).')
            sub.add_argument('--alpha', type=float,
                             help='Path / co-interaction blend weight '
                                  '(overrides alpha).')
            sub.add_argument('--embed-weight', type=float,
                             help='Semantic blend weight (overrides '
                                  'embed_weight).')
        add_common(sub)

    args = parser.parse_args(argv)

    if args.command == 'task':
        args.action = args.action.replace('-', '_')
    if args.command == 'kg' and args.action == 'similar' and \
       (args.user is None or args.item is None):
        parser.error('kg similar needs --user and --item')

    if args.command == 'dataset' and len(args.files) > 0:
        nfiles = 2 if args.action == 'validate' else 1
        if len(args.files) != nfiles:
            parser.error('dataset {} takes {} file(s), got {}'.format(
                args.action, nfiles, len(args.files)))
        args.ratings = args.files[0]
        if nfiles == 2:
            args.items = args.files[1]

    return args


def load_config(args):
    return simulator.load_config(args.config,
                                 seed=args.seed,
                                 worker_cap=args.workers,
                                 ratings=args.ratings,
                                 items=args.items,
                                 split=getattr(args, 'fractions', None),
                                 persona_j=getattr(args, 'j', None),
                                 persona_rho=getattr(args, 'rho', None),
                                 alpha=getattr(args, 'alpha', None),
                                 embed_weight=getattr(args, 'embed_weight',
                                                      None))


def progress(args, label):
    return Progress(label, progfile=args.progress_file,
                    proglabel=label)


def outdir(args, default=None):
    path = args.out or default
    if path is None:
        raise ValueError('An output directory (--out) is required')
    os.makedirs(path, exist_ok=True)
    return path


@contextlib.contextmanager
def handle_error(ctx):
    """Used by main as a context manager around each command. If an error
    occurs, prints a short message, logs the details, and exits.
    """
    try:
        yield

    except Exception as e:
        printmsg('\nERROR occurred during {}!'.format(ctx.command),
                 ERROR, EMPHASIS)
        printmsg('    {}\n'.format(e), INFO)

        tb = traceback.format_tb(sys.exc_info()[2])
        log.debug(''.join(tb))

        log.debug('LLM environment variables:')
        for k in sorted(os.environ.keys()):
            if not k.startswith(('LLM_', 'EMBED_')):
                continue
            if k.endswith('_KEY'): log.debug('%s=<hidden>', k)
            else:                  log.debug('%s=%s', k, os.environ[k])

        if ctx.logfile is not None:
            printmsg('Log file: {}'.format(ctx.logfile), INFO)
        sys.exit(1)


def cmd_dataset(args, ctx):
    cfg = ctx.config
    if args.action == 'validate':
        stats = ds.dataset_stats(ctx.dataset)
        printmsg('Dataset is valid', IMPORTANT)
        printmsg(dumps(stats), INFO)
        return

    # splitting only needs the ratings
    if cfg.items is None:
        if cfg.ratings is None:
            raise ValueError('A ratings file is required')
        split = ds.time_split(ds.load_interactions(cfg.ratings,
                                                   cfg.delimiter),
                              cfg.split)
    else:
        split = ctx.split

    paths = split.write(outdir(args), cfg.delimiter)
    for name, path in zip(('train', 'validation', 'test'), paths):
        printmsg('{:10s} {:6d} {}'.format(
            name, len(getattr(split, name)), path), INFO)


def cmd_gateway(args, ctx):
    resp = gw.probe(ctx.gateway, args.message)
    printmsg('{} replied:'.format(resp.backend_id), EMPHASIS)
    printmsg(resp.parsed['reply'], INFO)


def cmd_persona(args, ctx):
    out      = outdir(args)
    outfile  = op.join(out, 'personas.jsonl')
    users    = args.users or ctx.select_users()
    with progress(args, 'users') as prog:
        profiles = persona.match_personas(ctx.gateway,
                                          users,
                                          ctx.train,
                                          ctx.items,
                                          ctx.config.persona_settings(),
                                          ctx.config.worker_cap,
                                          outfile,
                                          prog)
    printmsg('Matched {} of {} users: {}'.format(
        len(profiles), len(users), outfile), IMPORTANT)


def cmd_kg(args, ctx):
    if args.action == 'stats':
        printmsg(dumps(kg.graph_stats(ctx.graph)), INFO)
        return
    cfg     = ctx.config
    k2      = cfg.k2 if args.k is None else args.k
    results = kg.retrieve_similar(ctx.graph, ctx.gateway, args.user,
                                  args.item, k2, cfg.alpha,
                                  cfg.embed_weight, cfg.path_length,
                                  cfg.max_paths, ctx.aggregated)
    printmsg(kg.render_similar(ctx.graph, results, args.user), INFO)


def cmd_perceive(args, ctx):
    cfg        = ctx.config
    out        = outdir(args)
    thumbnails = None
    if cfg.thumbnails is not None:
        thumbnails = perception.load_thumbnails(cfg.thumbnails,
                                                cfg.delimiter)
    captioner = perception.Captioner(ctx.gateway, cfg.claim_threshold,
                                     cfg.max_claims)
    with progress(args, 'items') as prog:
        captions, failures = perception.caption_items(captioner,
                                                      ctx.items.values(),
                                                      thumbnails,
                                                      cfg.worker_cap,
                                                      prog)
    outfile = op.join(out, 'captions.jsonl')
    perception.save_captions(outfile, captions)
    printmsg('Captioned {} items: {}'.format(len(captions), outfile),
             IMPORTANT)
    if len(failures) > 0:
        printmsg('{} items could not be captioned'.format(len(failures)),
                 WARNING)


def cmd_run(args, ctx):
    out = outdir(args)
    with progress(args, 'agents') as prog:
        report = simulator.simulate(ctx, out, prog)
    printmsg('Run saved to {}'.format(out), IMPORTANT)
    if len(report.failed) > 0:
        printmsg('{} agents failed'.format(len(report.failed)), WARNING)
    if report.metrics is not None:
        printmsg(dumps(report.metrics.to_dict()), INFO)


def cmd_task(args, ctx):
    out     = outdir(args)
    results = tasks.run_task(ctx, args.action)
    tfile   = op.join(out, 'task_results.json')
    stored  = read_json(tfile) if op.exists(tfile) else {}
    stored.update(results)
    write_json(tfile, stored)
    for label, result in results.items():
        printmsg(label, EMPHASIS)
        printmsg(dumps(result['aggregates']), INFO)


def cmd_report(args):
    document, results, mismatches = simulator.recompute_report(args.run_dir)

    if args.format == 'json':
        printmsg(dumps({'metrics' : document, 'tasks' : results}),
                 log=False, fill=False)
    elif args.format == 'plot-data':
        path = op.join(args.run_dir, 'plot_data.csv')
        simulator.write_plot_data(document, path)
        printmsg('Plot data saved to {}'.format(path), INFO)
    else:
        printmsg(simulator.report_table(document), log=False, fill=False)
        for label, result in (results or {}).items():
            printmsg('\n' + label, EMPHASIS)
            printmsg(dumps(result['aggregates']), log=False, fill=False)

    for m in mismatches:
        printmsg('Stored value differs from recomputation: {}'.format(m),
                 WARNING)
    return len(mismatches) == 0


class CommandContext(object):
    """Bag of settings passed to the error handler. """

    def __init__(self, command):
        self.command = command
        self.logfile = None


def main(argv=None):
    """simuser entry point. """

    args = parse_args(argv)

    if args.logfile is None and args.out is not None and \
       args.command in ('run', 'task'):
        os.makedirs(args.out, exist_ok=True)
        args.logfile = op.join(args.out, 'simuser.log')

    logfile = config_logging(logfile=args.logfile,
                             debug=args.debug)
    log.debug(' '.join(sys.argv))

    printmsg('simuser version:', EMPHASIS, UNDERLINE, end='')
    printmsg(' {}'.format(__version__))

    status          = CommandContext(args.command)
    status.logfile  = logfile

    with handle_error(status):
        if args.command == 'report':
            ok = cmd_report(args)
            return 0 if ok else 1

        ctx = simulator.Context(load_config(args))
        handlers = {'dataset'  : cmd_dataset,
                    'gateway'  : cmd_gateway,
                    'persona'  : cmd_persona,
                    'kg'       : cmd_kg,
                    'perceive' : cmd_perceive,
                    'run'      : cmd_run,
                    'task'     : cmd_task}
        handlers[args.command](args, ctx)

    return 0


if __name__ == '__main__':
    sys.exit(main())
