#!/usr/bin/env python
#
# The simuser package imports the most useful names from its sub-modules,
# so that other scripts can "import simuser" and use them directly.

from simuser.common       import __version__
from simuser.errors       import *
from simuser.dataset      import (Item,
                                  Interaction,
                                  InteractionDataset,
                                  DatasetSplit,
                                  load_dataset,
                                  time_split)
from simuser.gateway      import Gateway, ScriptedBackend, create_gateway
from simuser.persona      import Persona, build_profile, match_personas
from simuser.episodic     import EpisodicMemory
from simuser.kg           import (KnowledgeGraph,
                                  AgentGraph,
                                  build_graph,
                                  pathsim,
                                  retrieve_similar)
from simuser.perception   import Captioner, caption_items
from simuser.brain        import Agent, BrainSettings
from simuser.recommenders import create_recommender, train_mf
from simuser.metrics      import EngagementMetrics, compute_metrics
from simuser.simulator    import (SessionConfig,
                                  Context,
                                  load_config,
                                  build_agent,
                                  run_simulation)
from simuser.tasks        import run_task
