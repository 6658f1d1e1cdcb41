"""Decentralized learning topology simulator."""
