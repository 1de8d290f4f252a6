"""kadmap: Kademlia-style overlay simulator, crawler, and analytics toolkit."""

__version__ = "0.1.0"
