"""Reflective-DDoS detection and mitigation toolkit."""
