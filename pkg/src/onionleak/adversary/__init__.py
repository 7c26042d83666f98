"""Malicious exit-node attacks, the domino linker and the ground-truth evaluator."""

from .dht_match import DhtClient, DhtMatcher
from .domino import Attribution, DominoResult, TrackerListMemory, domino_link
from .evaluate import evaluate, record_is_correct
from .exit_node import MaliciousExit
from .hijack import HijackAttack, HijackConnection
from .inspect import IpFieldTally, inspect
from .records import DeanonRecord, Method, StreamView, dump_records

__all__ = [
    "Attribution",
    "DeanonRecord",
    "DhtClient",
    "DhtMatcher",
    "DominoResult",
    "HijackAttack",
    "HijackConnection",
    "IpFieldTally",
    "MaliciousExit",
    "Method",
    "StreamView",
    "TrackerListMemory",
    "domino_link",
    "dump_records",
    "evaluate",
    "inspect",
    "record_is_correct",
]
