"""Detect transparent Web proxies (split TCP, caching, rewriting,
redirection) from an unprivileged client."""

__version__ = "0.1.0"
