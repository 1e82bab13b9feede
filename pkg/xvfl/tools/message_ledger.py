#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Message Ledger

In-process record of every payload crossing the client/server boundary.
Parties are graph nodes, messages are edges of a networkx MultiDiGraph
carrying round, kind, byte size and provenance tag.
"""

import logging
import threading
from collections import defaultdict
from enum import Enum
from typing import Dict, List, Optional

import networkx as nx
import numpy as np

from ..errors import LeakError

logger = logging.getLogger(__name__)

SERVER = "server"
BYTES_PER_REAL = 8


class PayloadKind(Enum):
    """What a message carries"""
    EMBEDDING = "embedding"  # Eᵢ, client -> server
    RECONSTRUCTED_EMBEDDING = "reconstructed_embedding"  # Ẽᵢ, client -> server
    SELF_RECONSTRUCTED_EMBEDDING = "self_reconstructed_embedding"  # self-sourced Ẽᵢ
    XCOM_SOURCE = "xcom_source"  # mean of source embeddings, server -> client
    EMBEDDING_GRADIENT = "embedding_gradient"  # server -> client
    RECONSTRUCTED_GRADIENT = "reconstructed_gradient"  # server -> client
    SOURCE_GRADIENT = "source_gradient"  # client -> server, routed to source owners
    RAW_FEATURES = "raw_features"  # never leaves its owner
    RECONSTRUCTED_FEATURES = "reconstructed_features"  # never leaves its owner


LOCAL_ONLY = {PayloadKind.RAW_FEATURES, PayloadKind.RECONSTRUCTED_FEATURES}


def client_node(i: int) -> str:
    return f"client{i}"


class MessageLedger:
    """
    Append-only message log

    Appends take a lock; callers append in client-index order so the edge
    order is deterministic.
    """

    def __init__(self, k: int):
        self.k = k
        self.graph = nx.MultiDiGraph()
        self.graph.add_node(SERVER, role="server", holds_labels=True)
        for i in range(k):
            self.graph.add_node(client_node(i), role="client", index=i)
        self._lock = threading.Lock()
        self._sequence = 0
        self._by_round: Dict[int, List[Dict]] = defaultdict(list)

    def send(
        self,
        round_index: int,
        sender: str,
        receiver: str,
        kind: PayloadKind,
        payload: np.ndarray,
        owner: Optional[str] = None
    ) -> int:
        """
        Record one message

        Args:
            round_index: Communication round
            sender / receiver: Party node names
            kind: PayloadKind
            payload: The matrix sent (only its size is kept)
            owner: Party whose data the payload derives from; defaults to sender

        Returns:
            Bytes recorded

        Raises:
            LeakError: A local-only payload addressed to another party
        """
        owner = owner or sender
        if kind in LOCAL_ONLY and receiver != owner:
            raise LeakError(f"{kind.value} of {owner} cannot be sent to {receiver}")
        size = int(payload.size) * BYTES_PER_REAL
        attributes = {
            "round": round_index,
            "kind": kind.value,
            "bytes": size,
            "provenance": f"{owner}:{kind.value}",
        }
        with self._lock:
            self.graph.add_edge(sender, receiver, key=self._sequence, **attributes)
            self._by_round[round_index].append({"sender": sender, "receiver": receiver, **attributes})
            self._sequence += 1
        return size

    def messages(self, round_index: Optional[int] = None) -> List[Dict]:
        if round_index is not None:
            return list(self._by_round.get(round_index, []))
        return [message for index in sorted(self._by_round) for message in self._by_round[index]]

    def record_local(self, round_index: int, i: int, kind: PayloadKind, payload: np.ndarray) -> int:
        """Record a tensor client i computed and used without sending it"""
        node = client_node(i)
        return self.send(round_index, node, node, kind, payload)

    def round_summary(self, round_index: int) -> Dict[str, int]:
        """bytes_up / bytes_down plus per-kind byte totals for one round; local use is not traffic"""
        summary = defaultdict(int)
        for message in self.messages(round_index):
            if message["sender"] == message["receiver"]:
                continue
            direction = "bytes_up" if message["receiver"] == SERVER else "bytes_down"
            summary[direction] += message["bytes"]
            summary[message["kind"]] += message["bytes"]
        summary.setdefault("bytes_up", 0)
        summary.setdefault("bytes_down", 0)
        return dict(summary)

    def rounds(self) -> int:
        return len(self._by_round)

    def audit(self) -> bool:
        """
        Check that no raw or reconstructed feature tensor reached the server

        Raises:
            LeakError: On the first offending edge
        """
        local_values = {kind.value for kind in LOCAL_ONLY}
        for sender, receiver, data in self.graph.edges(data=True):
            tag_owner, tag_kind = data["provenance"].split(":", 1)
            if tag_kind in local_values and receiver != tag_owner:
                raise LeakError(f"Leak: {data['provenance']} reached {receiver} in round {data['round']}")
        return True
