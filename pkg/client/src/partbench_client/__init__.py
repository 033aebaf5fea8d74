"""Thin client SDK for the partbench environment server and its rollout files."""

from .errors import ClientProtocolError, VersionError
from .rollouts import StepTuple, read_flow_file, read_rollouts
from .session import ClientSession, connect, run_episode

__version__ = "0.1.0"
