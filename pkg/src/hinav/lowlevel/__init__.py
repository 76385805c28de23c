"""Continuous forward controller: actor/critic nets, DDPG, and closed-loop execution."""
from .ddpg import DDPGConfig, TransitionBuffer, ddpg_train, ddpg_update, soft_update, td_targets
from .executor import NaiveForward, Outcome, execute_forward
from .networks import Actor, Critic, actor_forward, critic_forward
