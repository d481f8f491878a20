# ===== apps/simnet/messages.py =====
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict

from apps.domain.types import NodeId


class MessageType(str, Enum):
    # flow construction
    REQUEST_FLOW = "REQUEST_FLOW"
    APPROVE = "APPROVE"
    REJECT = "REJECT"
    REQUEST_CHANGE = "REQUEST_CHANGE"
    CHANGE_ACCEPT = "CHANGE_ACCEPT"
    CHANGE_DECLINE = "CHANGE_DECLINE"
    REQUEST_REDIRECT = "REQUEST_REDIRECT"
    REDIRECT_ACCEPT = "REDIRECT_ACCEPT"
    REDIRECT_DECLINE = "REDIRECT_DECLINE"
    COST_BROADCAST = "COST_BROADCAST"
    STAGE_GOSSIP = "STAGE_GOSSIP"
    COST_UPDATE = "COST_UPDATE"
    CANCEL_FLOW = "CANCEL_FLOW"
    NEW_UPSTREAM = "NEW_UPSTREAM"
    NEW_DOWNSTREAM = "NEW_DOWNSTREAM"

    # training traffic
    ACTIVATION = "ACTIVATION"
    GRADIENT = "GRADIENT"
    COMPLETE = "COMPLETE"

    # recovery
    DENY = "DENY"
    CAPACITY_FREED = "CAPACITY_FREED"
    PING = "PING"
    PONG = "PONG"
    REPAIR_PROBE = "REPAIR_PROBE"
    REPAIR_ACK = "REPAIR_ACK"
    REPAIR_ACTIVATION = "REPAIR_ACTIVATION"
    BACKWARD_STALL = "BACKWARD_STALL"

    # synchronization
    BEGIN_AGGREGATION = "BEGIN_AGGREGATION"
    GRADIENT_SHARE = "GRADIENT_SHARE"
    CAN_TAKE = "CAN_TAKE"
    DATA_DONE = "DATA_DONE"

    # membership
    JOIN = "JOIN"
    ADMIT = "ADMIT"
    PARAMS_REQUEST = "PARAMS_REQUEST"
    PARAMS_REPLY = "PARAMS_REPLY"
    UTILIZATION_QUERY = "UTILIZATION_QUERY"
    UTILIZATION_REPLY = "UTILIZATION_REPLY"


DATA_MESSAGES = frozenset({
    MessageType.ACTIVATION,
    MessageType.GRADIENT,
    MessageType.REPAIR_ACTIVATION,
})


def _scalar(value) -> bool:
    return value is None or isinstance(value, (bool, int, float, str))


@dataclass(frozen=True)
class Message:
    type: MessageType
    src: NodeId
    dst: NodeId
    payload: Dict[str, Any] = field(default_factory=dict)
    size: float = 0.0

    def get(self, key, default=None):
        return self.payload.get(key, default)

    @property
    def is_data(self) -> bool:
        return self.type in DATA_MESSAGES

    def summary(self) -> str:
        fields = " ".join(
            f"{k}={v!r}" for k, v in sorted(self.payload.items()) if _scalar(v)
        )
        return f"{self.type.value} {self.src}->{self.dst} {fields}".rstrip()
