"""SDN controllers that enforce access rules for applications, plus a multi-domain simulator."""

__version__ = "0.1.0"
