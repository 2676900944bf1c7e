"""Server and client state machines for federated LightGCN training."""

from .client import Client
from .messages import SERVER, Envelope
from .runner import FederatedResult, FederatedRun, run_federated
from .server import Server
from .transport import ProtocolAbort, SocketTransport, Transcript, Transport

__all__ = [
    "SERVER",
    "Client",
    "Envelope",
    "FederatedResult",
    "FederatedRun",
    "ProtocolAbort",
    "Server",
    "SocketTransport",
    "Transcript",
    "Transport",
    "run_federated",
]
